"""FedAvg, MM-PSGD and MC-PSGD over block-cyclic data.

All three share one round loop. Round ``r`` covers local iterations
``t - I + 1 .. t`` (with ``t = r * I``) on the block active at ``t`` and ends
with aggregation at ``t``; every round starts from the broadcast global
model, so client state never outlives a round. Client weights enter through
the local objective scaling ``F^i = p_i * pool_size * F~^i``, which keeps the
server aggregation a plain mean.

Randomness is counter based. Minibatches come from the Philox stream keyed
by ``master_seed`` with counter ``(0, 0, 0, SGD_STREAM)``, read at fixed
positions: client ``i`` in round ``r`` owns the ``I * B`` uniforms starting
at ``((r - 1) * pool_size + i) * I * B``. Participant sampling reads the
separate ``PARTICIPATION_STREAM`` stream, one draw per round. No draw depends
on which other clients participate or on the order clients are processed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .objectives import ObjectiveSpec, project, stacked_gradients
from ._kernels import KIND_CODES, batch_rows, client_losses, sgd_round_indexed
from .schedule import CyclePlan, RoundInfo, rounds

FEDAVG = "fedavg"
MM_PSGD = "mm-psgd"
MC_PSGD = "mc-psgd"
ALGORITHMS = (FEDAVG, MM_PSGD, MC_PSGD)

UNIFORM = "uniform"
EWA = "ewa"

MIXED = "mixed"
SEPARATE = "separate"

SGD_STREAM = 0
PARTICIPATION_STREAM = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str
    plan: CyclePlan
    gamma: float
    eta: Optional[float] = None
    batch_size: int = 2
    full_batch: bool = False
    averaging: str = UNIFORM
    ewa_base: float = 0.5
    participation_rate: float = 1.0
    pool_size: Optional[int] = None
    master_seed: int = 0
    check_bounds: bool = True
    record_models: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be nonnegative")
        if self.algorithm == MC_PSGD:
            if self.eta is None or not self.eta >= 0:
                raise ConfigError("mc-psgd needs a nonnegative eta")
        elif self.eta is not None:
            raise ConfigError("eta is only used by mc-psgd")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.averaging not in (UNIFORM, EWA):
            raise ConfigError(f"unknown averaging {self.averaging!r}")
        if not 0 < self.ewa_base < 1:
            raise ConfigError("ewa_base must lie in (0, 1)")
        if not 0 < self.participation_rate <= 1:
            raise ConfigError("participation_rate must lie in (0, 1]")
        if self.pool_size is not None and participant_count(self.pool_size, self.participation_rate) < 1:
            raise ConfigError("participation_rate * pool_size must reach one client")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")


# -- theoretical hyperparameters ---------------------------------------------------


def theoretical_gamma(N: int, T: int, L: float) -> float:
    """Mixed-chain rate ``sqrt(N) / (L sqrt(T))``."""
    if not L > 0:
        raise ValueError("L must be positive")
    return math.sqrt(N) / (L * math.sqrt(T))


def theoretical_eta(N: int, M: int, T: int, L: float) -> float:
    """Separate-chain rate ``sqrt(N M) / (L sqrt(T))``."""
    if not L > 0:
        raise ValueError("L must be positive")
    return math.sqrt(N * M) / (L * math.sqrt(T))


def max_local_iterations(T: int, N: int, M: int, algorithm: str) -> int:
    """Largest admissible ``I``: ``T^(1/4) / N^(3/4)``, with ``T / M`` for mc-psgd; at least 1."""
    horizon = T / M if algorithm == MC_PSGD else T
    cap = horizon**0.25 / N**0.75
    # guard floor() against 10000 ** 0.25 == 9.999999999999998 style rounding
    return max(1, int(math.floor(cap + 1e-9)))


def horizon_plan(T: int, C: int, M: int, N: int, algorithm: str) -> CyclePlan:
    """Plan for a run of exactly ``T`` iterations with the largest admissible ``I``.

    ``I`` is the largest value not above :func:`max_local_iterations` for which
    ``C * M * I`` divides ``T``; ``E`` follows.
    """
    cap = max_local_iterations(T, N, M, algorithm)
    for I in range(cap, 0, -1):
        if T % (C * M * I) == 0:
            return CyclePlan(C, M, T // (C * M * I), I)
    raise ConfigError(f"T={T} is not a multiple of C*M={C * M}")


# -- server-side primitives -------------------------------------------------------


def aggregate(locals_: Sequence[np.ndarray]) -> np.ndarray:
    """Entrywise mean, summed in ascending client order."""
    if len(locals_) == 0:
        raise ValueError("nothing to aggregate")
    total = np.array(locals_[0], dtype=float, copy=True)
    for v in locals_[1:]:
        if np.shape(v) != total.shape:
            raise ValueError("local models differ in dimension")
        total += v
    return total / len(locals_)


@dataclass(frozen=True, eq=False)
class PredictorSet:
    """Block predictors; ``predictors[m - 1]`` belongs to block ``m``."""

    predictors: np.ndarray
    round_counts: Tuple[int, ...]

    @classmethod
    def zeros(cls, M: int, d: int) -> "PredictorSet":
        return cls(np.zeros((M, d)), (0,) * M)


def _replace_row(pred: PredictorSet, m: int, value: np.ndarray) -> PredictorSet:
    if not 1 <= m <= len(pred.round_counts):
        raise IndexError(f"block {m} out of range")
    rows = pred.predictors.copy()
    rows[m - 1] = value
    counts = list(pred.round_counts)
    counts[m - 1] += 1
    return PredictorSet(rows, tuple(counts))


def update_predictor_uniform(pred: PredictorSet, m: int, model: np.ndarray) -> PredictorSet:
    r = pred.round_counts[m - 1]
    return _replace_row(pred, m, r / (r + 1) * pred.predictors[m - 1] + 1 / (r + 1) * model)


def update_predictor_ewa(pred: PredictorSet, m: int, model: np.ndarray, base: float = 0.5) -> PredictorSet:
    if not 0 < base < 1:
        raise ValueError("base must lie in (0, 1)")
    if pred.round_counts[m - 1] == 0:
        return _replace_row(pred, m, np.array(model, dtype=float))
    return _replace_row(pred, m, base * pred.predictors[m - 1] + (1 - base) * model)


def select_interim(x_bar, y_bar, losses_x, losses_y) -> Tuple[np.ndarray, str]:
    """Pick the chain whose global model has the smaller mean local loss; ties go to the mixed chain."""
    if len(losses_x) != len(losses_y):
        raise ValueError("loss lists differ in length")
    if np.mean(losses_x) <= np.mean(losses_y):
        return x_bar, MIXED
    return y_bar, SEPARATE


def participant_count(pool_size: int, rate: float) -> int:
    return max(1, int(math.floor(rate * pool_size + 0.5)))


def sample_participants(pool_size: int, participation_rate: float, round_rng: np.random.Generator) -> List[int]:
    if not 0 < participation_rate <= 1:
        raise ValueError("participation_rate must lie in (0, 1]")
    k = participant_count(pool_size, participation_rate)
    if k >= pool_size:
        return list(range(pool_size))
    return sorted(int(i) for i in round_rng.choice(pool_size, size=k, replace=False))


def stream(master_seed: int, kind: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=master_seed, counter=[0, 0, 0, kind]))


# -- client-side local SGD ---------------------------------------------------------


def draw_batch_indices(rng: np.random.Generator, n: int, steps: int, batch_size: int) -> np.ndarray:
    """Uniform indices with replacement, shape ``(steps, batch_size)``."""
    if n < 1:
        raise ValueError("client holds no data")
    return np.minimum((rng.random((steps, batch_size)) * n).astype(np.int64), n - 1)


def local_sgd(
    spec: ObjectiveSpec,
    start: np.ndarray,
    features: np.ndarray,
    targets: np.ndarray,
    rate: float,
    steps: int,
    batch_size: Optional[int],
    rng: Optional[np.random.Generator] = None,
    scale: float = 1.0,
) -> np.ndarray:
    """``steps`` minibatch SGD steps from ``start`` on one client's block data.

    ``batch_size=None`` is the deterministic full-batch test mode. Gradients
    are multiplied by ``scale`` (the client's ``p_i * pool_size``).
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    n = len(targets)
    if n == 0:
        raise ValueError("client holds no data")
    x = np.array(start, dtype=float)[None, :]
    if batch_size is None:
        A, y = features[None], targets[None]
    else:
        idx = draw_batch_indices(rng, n, steps, batch_size)
    for s in range(steps):
        if batch_size is not None:
            A, y = features[idx[s]][None], targets[idx[s]][None]
        x = project(x - rate * scale * stacked_gradients(spec, x, A, y), spec.projection_radius)
    return x[0]


# -- traces -------------------------------------------------------------------------


@dataclass
class RoundRecord:
    t: int
    cycle: int
    block: int
    round_in_block: int
    global_loss: float = math.nan
    eval_loss: float = math.nan
    minimax_gap: float = math.nan
    block_gaps: Tuple[float, ...] = ()
    selected_chain: str = ""
    lemma3_ratio: float = math.nan
    deviation_sq: float = math.nan
    g2_max: float = math.nan
    deviation_sq_sep: float = math.nan
    g2_max_sep: float = math.nan
    loss_mixed: float = math.nan
    loss_separate: float = math.nan


@dataclass
class RunTrace:
    algorithm: str
    plan: CyclePlan
    records: List[RoundRecord] = field(default_factory=list)
    # model fed to the predictor update (or the global model for fedavg), per round
    models: Optional[np.ndarray] = None
    separate_models: Optional[np.ndarray] = None
    final_model: Optional[np.ndarray] = None
    predictors: Optional[PredictorSet] = None


@dataclass(frozen=True, eq=False)
class RoundState:
    """What a monitor sees after the aggregation of one round."""

    info: RoundInfo
    plan: CyclePlan
    algorithm: str
    global_model: np.ndarray
    separate_model: Optional[np.ndarray]
    predictors: Optional[PredictorSet]
    participants: Tuple[int, ...]
    local_start: np.ndarray  # the local models every participant started the round from


Monitor = Callable[[RoundState], Optional[Dict[str, object]]]


@dataclass
class ChainState:
    x_bar: np.ndarray
    y_bar: Optional[np.ndarray] = None
    stored: Optional[np.ndarray] = None  # w_bar_1..w_bar_M, mc-psgd only
    y_start: Optional[np.ndarray] = None  # separate-chain broadcast for the next round
    g2_max: float = 0.0
    g2_max_sep: float = 0.0


class _Block:
    """Per-block arrays, cached once per run."""

    def __init__(self, row, pool_size: int):
        self.cells = row
        self.scales = np.array([c.weight * pool_size for c in row])
        self.features = np.concatenate([c.features for c in row])
        self.targets = np.concatenate([c.targets for c in row])
        counts = np.array([len(c) for c in row])
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self.counts = counts.astype(np.int64)


def _local_losses(spec: ObjectiveSpec, block: _Block, models: np.ndarray, members: np.ndarray) -> np.ndarray:
    """Scaled full-local-data losses, shape ``(len(models), len(members))``."""
    return client_losses(
        KIND_CODES[spec.kind], models, block.features, block.targets, block.offsets, block.counts,
        members, block.scales, spec.lam, spec.num_classes,
    )


def _check_inputs(config: OptimizerConfig, dataset, spec: ObjectiveSpec, algorithm: str) -> int:
    if config.algorithm != algorithm:
        raise ConfigError(f"config is for {config.algorithm}, not {algorithm}")
    if config.plan.M != dataset.M:
        raise ConfigError(f"plan has M={config.plan.M} but the dataset has {dataset.M} blocks")
    pool = dataset.N if config.pool_size is None else config.pool_size
    if pool != dataset.N:
        raise ConfigError(f"pool_size={pool} but the dataset has {dataset.N} clients")
    if spec.feature_dim != dataset.gen_config.d_f:
        raise ConfigError("objective dimension does not match the dataset features")
    return pool


def _round_rows(config: OptimizerConfig, block: "_Block", members: np.ndarray, rng: np.random.Generator, pool: int):
    """Row indices into the block table of every participant's minibatches, ``(n, I, B)``.

    Consumes the round's ``pool * I * B`` uniforms from the run's SGD stream,
    laid out client by client, whoever participates.
    """
    uniforms = rng.random((pool, config.plan.I, config.batch_size))
    return batch_rows(uniforms, members, block.offsets, block.counts)


def _full_batch_round(config: OptimizerConfig, spec: ObjectiveSpec, block: _Block, members, X, Y):
    """Deterministic test mode: every step uses the client's whole local set (numpy path)."""
    g2 = g2_sep = 0.0
    for j, i in enumerate(members):
        cell = block.cells[i]
        scale = block.scales[i]
        A, y = cell.features[None], cell.targets[None]
        for _ in range(config.plan.I):
            G = scale * stacked_gradients(spec, X[j : j + 1], A, y)
            X[j] = project(X[j : j + 1] - config.gamma * G, spec.projection_radius)[0]
            g2 = max(g2, float(G[0] @ G[0]))
            if Y is not None:
                H = scale * stacked_gradients(spec, Y[j : j + 1], A, y)
                Y[j] = project(Y[j : j + 1] - config.eta * H, spec.projection_radius)[0]
                g2_sep = max(g2_sep, float(H[0] @ H[0]))
    return g2, g2_sep


def _run(config: OptimizerConfig, dataset, spec: ObjectiveSpec, monitor: Optional[Monitor], algo: str) -> RunTrace:
    plan = config.plan
    pool = _check_inputs(config, dataset, spec, algo)
    blocks = [_Block(row, pool) for row in dataset.grid]
    two_chains = algo == MC_PSGD
    d = spec.d
    I = plan.I
    kind = KIND_CODES[spec.kind]
    radius = -1.0 if spec.projection_radius is None else float(spec.projection_radius)

    state = ChainState(x_bar=np.zeros(d))
    if two_chains:
        state.y_bar = np.zeros(d)
        state.y_start = np.zeros(d)
        state.stored = np.zeros((plan.M, d))
    predictors = None if algo == FEDAVG else PredictorSet.zeros(plan.M, d)
    trace = RunTrace(algo, plan)
    n_rounds = plan.rounds
    if config.record_models:
        trace.models = np.empty((n_rounds, d))
        if two_chains:
            trace.separate_models = np.empty((n_rounds, d))

    all_clients = np.arange(pool, dtype=np.int64)
    sgd_rng = stream(config.master_seed, SGD_STREAM)
    part_rng = stream(config.master_seed, PARTICIPATION_STREAM)
    for info in rounds(plan):
        block = blocks[info.m - 1]
        if config.participation_rate < 1:
            members = np.array(sample_participants(pool, config.participation_rate, part_rng), dtype=np.int64)
        else:
            members = all_clients
        scales = block.scales[members]

        X = np.empty((len(members), d))
        X[:] = state.x_bar
        local_start = X.copy()
        if two_chains:
            Y = np.empty((len(members), d))
            Y[:] = state.y_start

        if config.full_batch:
            g2, g2_sep = _full_batch_round(config, spec, block, members, X, Y if two_chains else None)
        else:
            idx = _round_rows(config, block, members, sgd_rng, pool)
            args = (block.features, block.targets, idx, scales)
            tail = (spec.lam, radius, spec.num_classes, config.check_bounds)
            g2 = sgd_round_indexed(kind, X, *args, config.gamma, *tail)
            if two_chains:
                g2_sep = sgd_round_indexed(kind, Y, *args, config.eta, *tail)

        state.x_bar = aggregate(X)
        if not np.all(np.isfinite(state.x_bar)):
            raise FloatingPointError(f"global model diverged at t={info.t}")
        record = RoundRecord(info.t, info.c, info.m, info.round_in_block)

        if config.check_bounds:
            state.g2_max = max(state.g2_max, g2)
            record.g2_max = state.g2_max
            record.deviation_sq = float(np.max(np.sum((X - state.x_bar) ** 2, axis=1)))
            bound = 4 * config.gamma**2 * I**2 * state.g2_max
            record.lemma3_ratio = record.deviation_sq / bound if bound > 0 else 0.0

        fed = state.x_bar
        if two_chains:
            state.y_bar = aggregate(Y)
            state.stored[info.m - 1] = state.y_bar
            if config.check_bounds:
                state.g2_max_sep = max(state.g2_max_sep, g2_sep)
                record.g2_max_sep = state.g2_max_sep
                record.deviation_sq_sep = float(np.max(np.sum((Y - state.y_bar) ** 2, axis=1)))
            losses = _local_losses(spec, block, np.vstack([state.x_bar, state.y_bar]), members)
            fed, chain = select_interim(state.x_bar, state.y_bar, losses[0], losses[1])
            record.selected_chain = chain
            record.loss_mixed = float(np.mean(losses[0]))
            record.loss_separate = float(np.mean(losses[1]))
            if info.new_block_next:
                nxt = info.m % plan.M + 1
                state.y_start = state.stored[nxt - 1].copy()
            else:
                state.y_start = state.y_bar

        if predictors is not None:
            if config.averaging == UNIFORM:
                predictors = update_predictor_uniform(predictors, info.m, fed)
            else:
                predictors = update_predictor_ewa(predictors, info.m, fed, config.ewa_base)

        if config.record_models:
            trace.models[info.index - 1] = fed
            if two_chains:
                trace.separate_models[info.index - 1] = state.y_bar

        if monitor is not None:
            metrics = monitor(
                RoundState(
                    info, plan, algo, state.x_bar, state.y_bar, predictors, tuple(int(i) for i in members), local_start
                )
            )
            if metrics:
                for key, value in metrics.items():
                    setattr(record, key, value)
        trace.records.append(record)

    trace.final_model = state.x_bar.copy()
    trace.predictors = predictors
    return trace


def run_fedavg(config: OptimizerConfig, dataset, spec: ObjectiveSpec, monitor: Optional[Monitor] = None):
    """Parallel restarted SGD; returns ``(final global model, trace)``."""
    trace = _run(config, dataset, spec, monitor, FEDAVG)
    return trace.final_model, trace


def run_mm_psgd(config: OptimizerConfig, dataset, spec: ObjectiveSpec, monitor: Optional[Monitor] = None):
    """Single mixed chain plus per-block predictor averaging; returns ``(PredictorSet, trace)``."""
    trace = _run(config, dataset, spec, monitor, MM_PSGD)
    return trace.predictors, trace


def run_mc_psgd(config: OptimizerConfig, dataset, spec: ObjectiveSpec, monitor: Optional[Monitor] = None):
    """Mixed chain (rate gamma) and per-block separate chains (rate eta); returns ``(PredictorSet, trace)``."""
    trace = _run(config, dataset, spec, monitor, MC_PSGD)
    return trace.predictors, trace


RUNNERS = {FEDAVG: run_fedavg, MM_PSGD: run_mm_psgd, MC_PSGD: run_mc_psgd}


def run(config: OptimizerConfig, dataset, spec: ObjectiveSpec, monitor: Optional[Monitor] = None) -> RunTrace:
    """Dispatch on ``config.algorithm`` and return the trace."""
    return _run(config, dataset, spec, monitor, config.algorithm)
