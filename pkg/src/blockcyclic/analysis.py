"""Convergence gaps, slope fits, bound checks and reduction oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import objectives as obj
from .algorithms import (
    FEDAVG,
    MM_PSGD,
    OptimizerConfig,
    RoundState,
    RunTrace,
    run,
)
from .objectives import ObjectiveSpec


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Optima:
    """Empirical comparators: ``x_star`` minimises ``F``, ``block_stars[m]`` minimises ``F_m``."""

    x_star: np.ndarray
    F_star: float
    block_stars: np.ndarray
    block_F_star: np.ndarray
    block_F_at_x_star: np.ndarray


def compute_optima(dataset, spec: ObjectiveSpec) -> Optima:
    x_star = obj.solve_optimum(spec, obj.global_data(dataset))
    stars, f_stars, f_at = [], [], []
    for m in range(dataset.M):
        data = obj.block_data(dataset, m)
        xm = obj.solve_optimum(spec, data)
        stars.append(xm)
        f_stars.append(obj.weighted_objective(spec, xm, data))
        f_at.append(obj.weighted_objective(spec, x_star, data))
    return Optima(x_star, float(np.mean(f_at)), np.array(stars), np.array(f_stars), np.array(f_at))


@dataclass(frozen=True)
class GapReport:
    per_block_gaps: Tuple[float, ...]
    minimax_gap: float
    comparator_norms: Dict[str, object]


def gap_report(predictors, dataset, spec: ObjectiveSpec, optima: Optional[Optima] = None) -> GapReport:
    """Gaps of block predictors (a PredictorSet, an ``(M, d)`` array or one shared model).

    ``per_block_gaps[m] = F_m(pred_m) - F_m(x*_m)`` and ``minimax_gap =
    mean_m F_m(pred_m) - F(x*)``. The minimax gap can be negative when the
    predictors differ across blocks, since ``mean_m F_m(x*_m) <= F(x*)``.
    """
    if optima is None:
        optima = compute_optima(dataset, spec)
    preds = getattr(predictors, "predictors", predictors)
    preds = np.asarray(preds, dtype=float)
    if preds.ndim == 1:
        preds = np.tile(preds, (dataset.M, 1))
    values = np.array([obj.weighted_objective(spec, preds[m], obj.block_data(dataset, m)) for m in range(dataset.M)])
    return GapReport(
        per_block_gaps=tuple(float(v) for v in values - optima.block_F_star),
        minimax_gap=float(values.mean() - optima.F_star),
        comparator_norms={
            "x_star": float(np.linalg.norm(optima.x_star)),
            "block_stars": [float(v) for v in np.linalg.norm(optima.block_stars, axis=1)],
            "F_star": optima.F_star,
        },
    )


class GapMonitor:
    """Per-round metrics for :func:`algorithms.run`.

    Evaluates every ``every`` rounds after round ``start`` and always on the
    final round. The models
    scored for block ``m`` are the predictors when the run has them, else the
    global model.
    """

    def __init__(self, dataset, spec: ObjectiveSpec, optima: Optional[Optima] = None, every: int = 1, gaps: bool = True,
                 start: int = 0):
        self.spec = spec
        self.every = max(1, int(every))
        self.start = int(start)
        self.gaps = gaps
        self.optima = optima if (optima is not None or not gaps) else compute_optima(dataset, spec)
        self.blocks = [obj.block_data(dataset, m) for m in range(dataset.M)]
        self.evals = dataset.eval_sets
        self.M = dataset.M

    def block_models(self, state: RoundState) -> np.ndarray:
        if state.predictors is not None:
            return state.predictors.predictors
        return np.tile(state.global_model, (self.M, 1))

    def __call__(self, state: RoundState):
        index = state.info.index
        if index != state.plan.rounds and (index <= self.start or index % self.every):
            return None
        models = self.block_models(state)
        train = [obj.weighted_objective(self.spec, state.global_model, b) for b in self.blocks]
        evals = [float(np.mean(obj.sample_losses(self.spec, models[m], A, y))) for m, (A, y) in enumerate(self.evals)]
        out = {"global_loss": float(np.mean(train)), "eval_loss": float(np.mean(evals))}
        if self.gaps:
            values = np.array([obj.weighted_objective(self.spec, models[m], b) for m, b in enumerate(self.blocks)])
            out["minimax_gap"] = float(values.mean() - self.optima.F_star)
            out["block_gaps"] = tuple(float(v) for v in values - self.optima.block_F_star)
        return out


def eval_losses(spec: ObjectiveSpec, models: np.ndarray, dataset) -> np.ndarray:
    """Mean evaluation loss of ``models[m]`` on block ``m``'s held-out set."""
    models = np.asarray(models, dtype=float)
    if models.ndim == 1:
        models = np.tile(models, (dataset.M, 1))
    return np.array([np.mean(obj.sample_losses(spec, models[m], A, y)) for m, (A, y) in enumerate(dataset.eval_sets)])


@dataclass(frozen=True)
class SlopeFit:
    points: Tuple[Tuple[float, float], ...]
    slope: float
    intercept: float
    r2: float


def fit_slope(points: Sequence[Tuple[float, float]]) -> SlopeFit:
    """Least-squares line through ``(log T, log gap)``."""
    pts = [(float(t), float(g)) for t, g in points]
    if len(pts) < 3:
        raise AnalysisError("need at least three points")
    if any(g <= 0 for _, g in pts):
        raise AnalysisError("gaps must be positive for a log-log fit")
    if len({t for t, _ in pts}) != len(pts) or any(t <= 0 for t, _ in pts):
        raise AnalysisError("T values must be distinct and positive")
    x = np.log([t for t, _ in pts])
    y = np.log([g for _, g in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # constant gaps fit any flat line perfectly; skip the 0/0
    r2 = 1.0 - float(resid @ resid) / ss_tot if np.ptp(y) > 0 else 1.0
    return SlopeFit(tuple(pts), float(slope), float(intercept), r2)


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    worst_ratio: float


def check_lemma3(trace: RunTrace, gamma: float, I: int, chain: str = "mixed") -> BoundCheck:
    """Local-model deviation against ``4 gamma^2 I^2 G^2`` with ``G^2`` the running max gradient norm."""
    dev_field, g_field = ("deviation_sq", "g2_max") if chain == "mixed" else ("deviation_sq_sep", "g2_max_sep")
    worst = 0.0
    if not trace.records:
        raise AnalysisError("empty trace")
    for rec in trace.records:
        dev, g2 = getattr(rec, dev_field), getattr(rec, g_field)
        if math.isnan(dev) or math.isnan(g2):
            raise AnalysisError("trace lacks deviation diagnostics; run with check_bounds=True")
        bound = 4.0 * gamma**2 * I**2 * g2
        if bound > 0:
            ratio = dev / bound
        else:
            ratio = 0.0 if dev == 0 else math.inf
        worst = max(worst, ratio)
    return BoundCheck(worst <= 1.0, worst)


def check_variance_scaling(
    spec: ObjectiveSpec,
    dataset,
    model: np.ndarray,
    N_values: Sequence[int],
    resamples: int = 2000,
    batch_size: int = 2,
    block: int = 1,
    seed: int = 0,
) -> List[Tuple[int, float]]:
    """Monte-Carlo variance of the ``N``-client averaged minibatch gradient at a frozen model.

    Each resample draws ``N`` distinct clients of ``block`` and one minibatch
    per client; the deviation is measured against the same clients' mean full
    local gradients, with the ``p_i * pool_size`` scaling used in training.
    """
    if resamples < 1000:
        raise AnalysisError("need at least 1000 resamples")
    row = dataset.grid[block - 1]
    pool = len(row)
    if max(N_values) > pool:
        raise AnalysisError(f"N={max(N_values)} exceeds the {pool} clients available")
    scales = np.array([c.weight * pool for c in row])
    full = np.array(
        [s * obj.sample_gradients(spec, model, c.features, c.targets).mean(axis=0) for s, c in zip(scales, row)]
    )
    rng = np.random.default_rng(seed)
    table = []
    for N in N_values:
        total = 0.0
        for _ in range(resamples):
            clients = rng.choice(pool, size=N, replace=False)
            dev = np.zeros(spec.d)
            for i in clients:
                c = row[i]
                idx = (rng.random(batch_size) * len(c)).astype(int)
                g = scales[i] * obj.sample_gradients(spec, model, c.features[idx], c.targets[idx]).mean(axis=0)
                dev += g - full[i]
            total += float(np.sum((dev / N) ** 2))
        table.append((int(N), total / resamples))
    return table


def sequential_gd_trajectory(spec: ObjectiveSpec, dataset, rate: float, plan) -> np.ndarray:
    """Reference: plain gradient descent on ``F_m`` of the active block, one step per iteration.

    Gradients are per-sample loops over :func:`objectives.gradient`, deliberately
    independent of the vectorised training path.
    """
    from .schedule import coordinate_of

    x = np.zeros(spec.d)
    out = np.empty((plan.T, spec.d))
    cells = [row[0] for row in dataset.grid]
    for t in range(1, plan.T + 1):
        cell = cells[coordinate_of(t, plan).m - 1]
        g = np.zeros(spec.d)
        for a, b in zip(cell.features, cell.targets):
            g += obj.gradient(spec, x, obj.Sample(a, b))
        x = x - rate * g / len(cell)
        out[t - 1] = x
    return out


def reduction_oracle_sequential(config: OptimizerConfig, dataset, spec: ObjectiveSpec, tol: float = 1e-10) -> bool:
    """With one client, ``I = 1`` and full batches, training equals sequential gradient descent."""
    if dataset.N != 1 or config.plan.I != 1 or not config.full_batch:
        raise AnalysisError("the sequential reduction needs N=1, I=1 and full_batch=True")
    if config.algorithm not in (FEDAVG, MM_PSGD):
        raise AnalysisError("the sequential reduction covers the single-chain algorithms")
    models = run(replace(config, record_models=True), dataset, spec).models
    reference = sequential_gd_trajectory(spec, dataset, config.gamma, config.plan)
    return bool(np.max(np.abs(models - reference)) <= tol)


def oscillation(series: Sequence[float]) -> float:
    """Peak-to-trough amplitude of a series."""
    values = np.asarray(series, dtype=float)
    values = values[~np.isnan(values)]
    if len(values) == 0:
        raise AnalysisError("empty series")
    return float(values.max() - values.min())
