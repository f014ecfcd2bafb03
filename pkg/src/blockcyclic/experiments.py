"""Reference experiments: rate slopes, speedup, bound checks and qualitative studies.

Each function runs one study end to end and returns a small result record
with the measured numbers and a ``passed`` verdict against the thresholds
given as keyword defaults. ``scripts/`` and the acceptance tests both call
these, so the printed tables and the asserted numbers come from one place.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import algorithms as alg
from . import analysis as an
from . import datagen
from . import objectives as obj
from .schedule import CyclePlan

SEEDS = (0, 1, 2, 3, 4)

# Least-squares problem behind the rate studies. The data defaults supply the
# heterogeneity; lam is small so the rate is not dominated by strong convexity.
RATE_LAM = 1e-3
RATE_C = 5
RATE_TS = (4_000, 16_000, 64_000)
SLOPE_WINDOW = (-0.75, -0.30)

# Logistic problem behind the qualitative studies: interpolated block concepts
# (so more blocks means more extreme blocks) and a rate fast enough for the
# global model to settle inside the shortest block visit.
QUAL_DATA = dict(
    N=10, S=10_000, d_f=10, target=datagen.LOGISTIC, block_heterogeneity=3.0, covariate_shift=0.0,
    feature_decay=0.0, block_layout=datagen.INTERPOLATED_LAYOUT,
)
QUAL_LAM = 1e-3
QUAL_RATE = 1.0
QUAL_SHAPE = dict(C=10, E=200, I=10)
QUAL_ROUNDS_PER_CYCLE = 1000


def rate_dataset(seed: int, N: int = 4, M: int = 2) -> Tuple[datagen.FederatedCyclicDataset, obj.ObjectiveSpec]:
    cfg = datagen.DataGenConfig(N=N, M=M, d_f=10, seed=seed)
    return datagen.generate(cfg), obj.ObjectiveSpec(obj.LEAST_SQUARES, 10, RATE_LAM)


def qual_dataset(seed: int, M: int = 5) -> Tuple[datagen.FederatedCyclicDataset, obj.ObjectiveSpec]:
    cfg = datagen.DataGenConfig(M=M, seed=seed, **QUAL_DATA)
    return datagen.generate(cfg), obj.ObjectiveSpec(obj.LOGISTIC, cfg.model_dim, QUAL_LAM)


@dataclass
class TheoryRun:
    """One run at theoretical rates: final gaps plus bound-check ratios."""

    T: int
    N: int
    seed: int
    plan: CyclePlan
    minimax_gap: float
    block_gaps: Tuple[float, ...]
    lemma3_worst: float
    lemma3_worst_separate: Optional[float]
    K_exceeds_CMN: bool


def theory_run(algorithm: str, T: int, seed: int, N: int = 4, M: int = 2, C: int = RATE_C) -> TheoryRun:
    dataset, spec = rate_dataset(seed, N=N, M=M)
    L = obj.smoothness(spec, obj.global_data(dataset))
    plan = alg.horizon_plan(T, C, M, N, algorithm)
    gamma = alg.theoretical_gamma(N, T, L)
    eta = alg.theoretical_eta(N, M, T, L) if algorithm == alg.MC_PSGD else None
    config = alg.OptimizerConfig(algorithm, plan, gamma, eta=eta, master_seed=seed)
    trace = alg.run(config, dataset, spec)
    report = an.gap_report(trace.predictors.predictors, dataset, spec)
    sep = an.check_lemma3(trace, eta, plan.I, chain=alg.SEPARATE).worst_ratio if eta is not None else None
    return TheoryRun(
        T, N, seed, plan, report.minimax_gap, report.per_block_gaps,
        an.check_lemma3(trace, gamma, plan.I).worst_ratio, sep, plan.K > C * M * N,
    )


@dataclass
class RateStudy:
    Ts: Tuple[int, ...]
    runs: List[TheoryRun]
    medians: Tuple[float, ...]
    slope: float
    block_slopes: Tuple[float, ...]
    seconds: float
    window: Tuple[float, float]

    @property
    def lemma3_worst(self) -> float:
        return max(max(r.lemma3_worst, r.lemma3_worst_separate or 0.0) for r in self.runs)

    @property
    def preconditions_hold(self) -> bool:
        return all(r.K_exceeds_CMN for r in self.runs)

    @property
    def passed(self) -> bool:
        lo, hi = self.window
        return lo <= self.slope <= hi


def _slope(Ts, values) -> float:
    if min(values) <= 0:
        return math.nan
    return an.fit_slope(list(zip(Ts, values))).slope


def rate_in_T(algorithm: str = alg.MM_PSGD, M: int = 2, N: int = 4, Ts: Sequence[int] = RATE_TS,
              seeds: Sequence[int] = SEEDS, window=SLOPE_WINDOW) -> RateStudy:
    """Median final minimax gap over seeds at each ``T``, and its log-log slope."""
    start = time.perf_counter()
    runs = [theory_run(algorithm, T, s, N=N, M=M) for T in Ts for s in seeds]
    by_T = [[r for r in runs if r.T == T] for T in Ts]
    medians = tuple(float(np.median([r.minimax_gap for r in group])) for group in by_T)
    block_medians = [[float(np.median([r.block_gaps[m] for r in group])) for group in by_T] for m in range(M)]
    return RateStudy(
        tuple(Ts), runs, medians, _slope(Ts, medians), tuple(_slope(Ts, b) for b in block_medians),
        time.perf_counter() - start, window,
    )


@dataclass
class SpeedupStudy:
    Ns: Tuple[int, ...]
    runs: List[TheoryRun]
    medians: Tuple[float, ...]

    @property
    def passed(self) -> bool:
        return all(a > b for a, b in zip(self.medians, self.medians[1:]))

    @property
    def lemma3_worst(self) -> float:
        return max(r.lemma3_worst for r in self.runs)

    @property
    def preconditions_hold(self) -> bool:
        return all(r.K_exceeds_CMN for r in self.runs)


def speedup_in_N(Ns: Sequence[int] = (1, 4, 16), T: int = 16_000, seeds: Sequence[int] = SEEDS) -> SpeedupStudy:
    runs = [theory_run(alg.MM_PSGD, T, s, N=N) for N in Ns for s in seeds]
    medians = tuple(float(np.median([r.minimax_gap for r in runs if r.N == N])) for N in Ns)
    return SpeedupStudy(tuple(Ns), runs, medians)


@dataclass
class VarianceStudy:
    table: List[Tuple[int, float]]
    slack: float = 1.5

    @property
    def passed(self) -> bool:
        base = self.table[0][1]
        return all(v <= self.slack * base / N for N, v in self.table)


def variance_scaling(N_values: Sequence[int] = (1, 4, 16), resamples: int = 2000, seed: int = 0) -> VarianceStudy:
    """Averaged-gradient variance on the shuffled rate problem at a frozen random model."""
    dataset, spec = rate_dataset(seed, N=max(N_values))
    shuffled = datagen.shuffled_variant(dataset)
    model = np.random.default_rng(seed).standard_normal(spec.d)
    table = an.check_variance_scaling(spec, shuffled, model, N_values, resamples=resamples, seed=seed)
    assert table[0][0] == 1
    return VarianceStudy(table)


@dataclass
class ReductionStudy:
    mm_equals_fedavg: bool
    sequential_gd: bool
    max_deviation: float

    @property
    def passed(self) -> bool:
        return self.mm_equals_fedavg and self.sequential_gd


def reductions(seed: int = 0) -> ReductionStudy:
    """MM-PSGD at ``M = 1`` against FedAvg, and ``N = I = 1`` full batch against gradient descent."""
    dataset, spec = rate_dataset(seed, N=4, M=1)
    L = obj.smoothness(spec, obj.global_data(dataset))
    plan = CyclePlan(3, 1, 50, 4)
    fed = alg.run(alg.OptimizerConfig(alg.FEDAVG, plan, 0.3 / L, master_seed=seed, record_models=True), dataset, spec)
    mm = alg.run(alg.OptimizerConfig(alg.MM_PSGD, plan, 0.3 / L, master_seed=seed, record_models=True), dataset, spec)
    same = bool(np.array_equal(fed.models, mm.models))

    single, _ = rate_dataset(seed, N=1, M=1)
    plan = CyclePlan(2, 1, 25, 1)
    config = alg.OptimizerConfig(alg.FEDAVG, plan, 0.5 / L, full_batch=True, record_models=True)
    trace = alg.run(config, single, spec)
    oracle = an.sequential_gd_trajectory(spec, single, config.gamma, plan)
    dev = float(np.max(np.abs(trace.models - oracle)))
    return ReductionStudy(same, dev <= 1e-10, dev)


@dataclass
class IdentityStudy:
    max_deviation: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= 1e-10


def predictor_identity(seed: int = 0, M: int = 3) -> IdentityStudy:
    """Uniform predictors against a replay of the recorded per-block models (both algorithms)."""
    dataset, spec = rate_dataset(seed, N=4, M=M)
    L = obj.smoothness(spec, obj.global_data(dataset))
    plan = CyclePlan(3, M, 20, 3)
    worst = 0.0
    for algorithm, eta in ((alg.MM_PSGD, None), (alg.MC_PSGD, 0.2 / L)):
        config = alg.OptimizerConfig(algorithm, plan, 0.2 / L, eta=eta, master_seed=seed, record_models=True)
        trace = alg.run(config, dataset, spec)
        blocks = np.array([r.block for r in trace.records])
        for m in range(1, M + 1):
            replay = trace.models[blocks == m].mean(axis=0)
            worst = max(worst, float(np.max(np.abs(trace.predictors.predictors[m - 1] - replay))))
    return IdentityStudy(worst)


# -- qualitative studies ------------------------------------------------------------


@dataclass
class CyclicComparison:
    """One seed of the FedAvg / MM-PSGD / MC-PSGD comparison on cyclic logistic data."""

    seed: int
    M: int
    losses: Dict[str, float]  # block-averaged evaluation loss of the final model(s)
    oscillations: Dict[str, float]  # peak-to-trough of the per-round evaluation loss over the final cycle
    shuffled_fedavg_loss: Optional[float] = None
    lemma3_worst: float = 0.0

    @property
    def ordering_holds(self) -> bool:
        fed = self.losses[alg.FEDAVG]
        return all(self.losses[a] <= fed for a in (alg.MM_PSGD, alg.MC_PSGD) if a in self.losses)

    @property
    def oscillation_ratio(self) -> float:
        mm = self.oscillations[alg.MM_PSGD]
        return self.oscillations[alg.FEDAVG] / mm if mm > 0 else math.inf


def cyclic_comparison(seed: int, M: int = 5, algorithms: Sequence[str] = alg.ALGORITHMS,
                      shuffled: bool = False) -> CyclicComparison:
    """Run each algorithm with EWA predictors at ``M * E = 1000`` rounds per cycle."""
    dataset, spec = qual_dataset(seed, M=M)
    E = QUAL_ROUNDS_PER_CYCLE // M
    plan = CyclePlan(QUAL_SHAPE["C"], M, E, QUAL_SHAPE["I"])
    last_cycle = (plan.C - 1) * M * E
    monitor = an.GapMonitor(dataset, spec, gaps=False, start=last_cycle)
    losses, osc, worst = {}, {}, 0.0
    for algorithm in algorithms:
        eta = QUAL_RATE if algorithm == alg.MC_PSGD else None
        config = alg.OptimizerConfig(algorithm, plan, QUAL_RATE, eta=eta, averaging=alg.EWA, master_seed=seed)
        trace = alg.run(config, dataset, spec, monitor=monitor)
        models = trace.final_model if algorithm == alg.FEDAVG else trace.predictors.predictors
        losses[algorithm] = float(an.eval_losses(spec, models, dataset).mean())
        osc[algorithm] = an.oscillation([r.eval_loss for r in trace.records[last_cycle:]])
        worst = max(worst, an.check_lemma3(trace, QUAL_RATE, plan.I).worst_ratio)
        if eta is not None:
            worst = max(worst, an.check_lemma3(trace, eta, plan.I, chain=alg.SEPARATE).worst_ratio)
    shuffled_loss = None
    if shuffled:
        config = alg.OptimizerConfig(alg.FEDAVG, plan, QUAL_RATE, master_seed=seed, check_bounds=False)
        trace = alg.run(config, datagen.shuffled_variant(dataset), spec)
        shuffled_loss = float(an.eval_losses(spec, trace.final_model, dataset).mean())
    return CyclicComparison(seed, M, losses, osc, shuffled_loss, worst)


@dataclass
class OrderingStudy:
    runs: List[CyclicComparison]
    min_ratio: float = 3.0
    min_seeds: int = 4

    def seed_passes(self, run: CyclicComparison) -> bool:
        return run.ordering_holds and run.oscillation_ratio >= self.min_ratio

    @property
    def passing_seeds(self) -> int:
        return sum(self.seed_passes(r) for r in self.runs)

    @property
    def passed(self) -> bool:
        return self.passing_seeds >= self.min_seeds


def qualitative_ordering(seeds: Sequence[int] = SEEDS, shuffled: bool = False) -> OrderingStudy:
    return OrderingStudy([cyclic_comparison(s, shuffled=shuffled) for s in seeds])


@dataclass
class MSweepSeed:
    seed: int
    Ms: Tuple[int, ...]
    mm_losses: Tuple[float, ...]
    fedavg_oscillations: Tuple[float, ...]
    lemma3_worst: float

    @property
    def mm_spread(self) -> float:
        return max(self.mm_losses) / min(self.mm_losses) - 1.0

    @property
    def fedavg_growing(self) -> bool:
        o = self.fedavg_oscillations
        return all(a < b for a, b in zip(o, o[1:]))


@dataclass
class MSweepStudy:
    runs: List[MSweepSeed]
    max_spread: float = 0.25
    min_seeds: int = 4

    def seed_passes(self, run: MSweepSeed) -> bool:
        return run.mm_spread <= self.max_spread and run.fedavg_growing

    @property
    def passing_seeds(self) -> int:
        return sum(self.seed_passes(r) for r in self.runs)

    @property
    def passed(self) -> bool:
        return self.passing_seeds >= self.min_seeds


def robustness_to_M(Ms: Sequence[int] = (2, 5, 10), seeds: Sequence[int] = SEEDS) -> MSweepStudy:
    runs = []
    for s in seeds:
        comps = [cyclic_comparison(s, M=M, algorithms=(alg.FEDAVG, alg.MM_PSGD)) for M in Ms]
        runs.append(MSweepSeed(
            s, tuple(Ms), tuple(c.losses[alg.MM_PSGD] for c in comps),
            tuple(c.oscillations[alg.FEDAVG] for c in comps), max(c.lemma3_worst for c in comps),
        ))
    return MSweepStudy(runs)


@dataclass
class DeterminismStudy:
    identical: Dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.identical.values())


def determinism(configs=None) -> DeterminismStudy:
    """Execute each config twice through the CLI pipeline and compare trace bytes."""
    from . import cli

    if configs is None:
        configs = default_determinism_configs()
    identical = {}
    for name, config in configs.items():
        first = cli.execute(cli.resolve(config))[cli.TRACE]
        second = cli.execute(cli.resolve(config))[cli.TRACE]
        identical[name] = first == second
    return DeterminismStudy(identical)


def default_determinism_configs():
    from . import cli

    base = {
        "datagen": {"N": 4, "M": 2, "seed": 3},
        "optimizer": {"algorithm": alg.MM_PSGD, "gamma": "theoretical", "plan": {"C": RATE_C, "T": 4000, "I": "max"}},
        "objective": {"kind": obj.LEAST_SQUARES, "lam": RATE_LAM},
        "outputs": {"every": 10},
    }
    mc = {**base, "datagen": {"N": 4, "M": 4, "seed": 3},
          "optimizer": {**base["optimizer"], "algorithm": alg.MC_PSGD, "eta": "theoretical"}}
    part = {**base, "datagen": {"N": 8, "M": 2, "seed": 5},
            "optimizer": {**base["optimizer"], "algorithm": alg.FEDAVG, "participation_rate": 0.5}}
    return {name: cli.config_from_mapping(c) for name, c in (("mm-psgd", base), ("mc-psgd", mc), ("fedavg-partial", part))}
