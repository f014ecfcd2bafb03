"""Rate-in-T slopes (MM-PSGD at M=2, MC-PSGD per block at M=4) and speedup in N."""

import argparse

from blockcyclic import algorithms as alg, experiments as ex


def show_rate(title, study):
    print(f"{title}  ({study.seconds:.1f}s)")
    print(f"  {'T':>7}  {'I':>3}  {'median gap':>11}  " + "  ".join(f"block {m + 1:<4}" for m in range(len(study.block_slopes))))
    for T, med in zip(study.Ts, study.medians):
        runs = [r for r in study.runs if r.T == T]
        blocks = [sorted(r.block_gaps[m] for r in runs)[len(runs) // 2] for m in range(len(study.block_slopes))]
        print(f"  {T:>7}  {runs[0].plan.I:>3}  {med:>11.4e}  " + "  ".join(f"{b:<10.3e}" for b in blocks))
    print(f"  slope {study.slope:.3f}   per-block " + ", ".join(f"{s:.3f}" for s in study.block_slopes)
          + f"   window {study.window}   worst deviation ratio {study.lemma3_worst:.3f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=len(ex.SEEDS))
    args = parser.parse_args()
    seeds = tuple(range(args.seeds))

    show_rate("MM-PSGD, M=2, N=4", ex.rate_in_T(seeds=seeds))
    show_rate("MC-PSGD, M=4, N=4", ex.rate_in_T(alg.MC_PSGD, M=4, seeds=seeds))
    study = ex.speedup_in_N(seeds=seeds)
    print("MM-PSGD speedup at T=16000")
    for N, med in zip(study.Ns, study.medians):
        print(f"  N={N:<3} median gap {med:.4e}")
    print(f"  strictly decreasing: {study.passed}")


if __name__ == "__main__":
    main()
