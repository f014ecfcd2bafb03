"""Variance scaling, reductions, predictor identity and determinism."""

from blockcyclic import experiments as ex


def main():
    study = ex.variance_scaling()
    print("averaged-gradient variance on the shuffled problem (bound 1.5 * v(1) / N)")
    base = study.table[0][1]
    for N, v in study.table:
        print(f"  N={N:<3} variance {v:.5f}   bound {1.5 * base / N:.5f}   N*v/v(1) {N * v / base:.3f}")
    red = ex.reductions()
    print(f"MM-PSGD at M=1 equals FedAvg bitwise: {red.mm_equals_fedavg}")
    print(f"full-batch N=I=1 vs gradient descent: max deviation {red.max_deviation:.2e}")
    print(f"uniform predictors vs replayed block means: max deviation {ex.predictor_identity().max_deviation:.2e}")
    for name, same in ex.determinism().identical.items():
        print(f"rerun of {name} gives an identical trace: {same}")


if __name__ == "__main__":
    main()
