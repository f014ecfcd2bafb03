"""Strongly convex losses, their gradients, problem constants and exact optima.

Every loss carries the ``lam / 2 * ||x||^2`` regulariser, so each objective is
``lam``-strongly convex. Data enter either one :class:`Sample` at a time or as
array batches ``(features, targets)``; batch reductions are plain numpy sums
in a fixed order so results do not depend on anything but the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

LEAST_SQUARES = "least-squares"
LOGISTIC = "logistic"
SOFTMAX = "softmax"
KINDS = (LEAST_SQUARES, LOGISTIC, SOFTMAX)

_ALIASES = {
    "regularized-least-squares": LEAST_SQUARES,
    "regularized-logistic": LOGISTIC,
    "regularized-softmax": SOFTMAX,
    "least_squares": LEAST_SQUARES,
}

# per-sample Hessian norm of the data term is at most HESSIAN_FACTOR * ||a||^2
HESSIAN_FACTOR = {LEAST_SQUARES: 1.0, LOGISTIC: 0.25, SOFTMAX: 0.5}

OPTIMUM_GRAD_TOL = 1e-10


class ObjectiveError(ValueError):
    """Dimension mismatch, non-finite model or empty data."""


class OracleFailure(RuntimeError):
    """The optimum solver did not reach its stopping tolerance."""


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: float


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    d: int
    lam: float
    projection_radius: Optional[float] = None
    num_classes: int = 2

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ObjectiveError(f"unknown objective kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.lam > 0:
            raise ObjectiveError("lam must be positive for strong convexity")
        if self.d < 1:
            raise ObjectiveError("d must be positive")
        if self.projection_radius is not None and not self.projection_radius > 0:
            raise ObjectiveError("projection_radius must be positive")
        if kind == SOFTMAX:
            if self.num_classes < 2 or self.d % self.num_classes:
                raise ObjectiveError("softmax needs d = feature_dim * num_classes")

    @property
    def feature_dim(self) -> int:
        return self.d // self.num_classes if self.kind == SOFTMAX else self.d


@dataclass(frozen=True)
class ProblemConstants:
    """Assumption constants. ``sigma2`` and ``G2`` are probe-grid estimates, not bounds."""

    mu: float
    L: float
    sigma2: float
    G2: float
    B2: float


@dataclass(frozen=True)
class WeightedData:
    """A sample table with nonnegative weights summing to one."""

    features: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.targets)


def _check_model(spec: ObjectiveSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise ObjectiveError(f"model has shape {x.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(x)):
        raise ObjectiveError("model contains non-finite entries")
    return x


def _check_batch(spec: ObjectiveSpec, A, y):
    A = np.asarray(A, dtype=float)
    y = np.asarray(y)
    if A.ndim != 2 or A.shape[1] != spec.feature_dim:
        raise ObjectiveError(f"features have shape {A.shape}, expected (n, {spec.feature_dim})")
    if y.shape != (A.shape[0],):
        raise ObjectiveError("targets do not match features")
    return A, y


def sample_losses(spec: ObjectiveSpec, x, A, y) -> np.ndarray:
    """Per-sample losses ``f(x, xi)`` including the regulariser."""
    x = _check_model(spec, x)
    A, y = _check_batch(spec, A, y)
    reg = 0.5 * spec.lam * float(x @ x)
    if spec.kind == LEAST_SQUARES:
        data = 0.5 * (A @ x - y) ** 2
    elif spec.kind == LOGISTIC:
        data = np.logaddexp(0.0, -y * (A @ x))
    else:
        logits = A @ x.reshape(spec.feature_dim, spec.num_classes)
        labels = y.astype(int)
        data = logsumexp(logits, axis=1) - logits[np.arange(len(labels)), labels]
    return data + reg


def sample_gradients(spec: ObjectiveSpec, x, A, y) -> np.ndarray:
    """Per-sample gradients, shape ``(n, d)``."""
    x = _check_model(spec, x)
    A, y = _check_batch(spec, A, y)
    if spec.kind == LEAST_SQUARES:
        g = A * (A @ x - y)[:, None]
    elif spec.kind == LOGISTIC:
        g = A * (-y * expit(-y * (A @ x)))[:, None]
    else:
        logits = A @ x.reshape(spec.feature_dim, spec.num_classes)
        P = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        P[np.arange(len(y)), y.astype(int)] -= 1.0
        g = (A[:, :, None] * P[:, None, :]).reshape(len(y), spec.d)
    return g + spec.lam * x


def loss(spec: ObjectiveSpec, x, sample: Sample) -> float:
    return float(sample_losses(spec, x, np.atleast_2d(sample.features), np.atleast_1d(sample.target))[0])


def gradient(spec: ObjectiveSpec, x, sample: Sample) -> np.ndarray:
    return sample_gradients(spec, x, np.atleast_2d(sample.features), np.atleast_1d(sample.target))[0]


def minibatch_gradient(spec: ObjectiveSpec, x, samples: Sequence[Sample]) -> np.ndarray:
    if len(samples) == 0:
        raise ObjectiveError("empty minibatch")
    A = np.stack([np.asarray(s.features, dtype=float) for s in samples])
    y = np.array([s.target for s in samples])
    return sample_gradients(spec, x, A, y).mean(axis=0)


def stacked_gradients(spec: ObjectiveSpec, X: np.ndarray, A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minibatch gradients for many models at once.

    ``X`` is ``(n_models, d)``, ``A`` is ``(n_models, batch, feature_dim)`` and
    ``y`` is ``(n_models, batch)``; row ``j`` of the result is the mean gradient
    of model ``j`` over its own batch.
    """
    batch = A.shape[1]
    if spec.kind == LEAST_SQUARES:
        r = np.einsum("nbf,nf->nb", A, X) - y
        G = np.einsum("nbf,nb->nf", A, r)
    elif spec.kind == LOGISTIC:
        s = -y * expit(-y * np.einsum("nbf,nf->nb", A, X))
        G = np.einsum("nbf,nb->nf", A, s)
    else:
        n = X.shape[0]
        W = X.reshape(n, spec.feature_dim, spec.num_classes)
        logits = np.einsum("nbf,nfk->nbk", A, W)
        P = np.exp(logits - logsumexp(logits, axis=2, keepdims=True))
        labels = y.astype(int)
        np.put_along_axis(P, labels[:, :, None], np.take_along_axis(P, labels[:, :, None], 2) - 1.0, 2)
        G = np.einsum("nbf,nbk->nfk", A, P).reshape(n, spec.d)
    return G / batch + spec.lam * X


# -- weighted empirical objectives -------------------------------------------------


def weighted_objective(spec: ObjectiveSpec, x, data: WeightedData) -> float:
    return float(data.weights @ sample_losses(spec, x, data.features, data.targets))


def weighted_gradient(spec: ObjectiveSpec, x, data: WeightedData) -> np.ndarray:
    x = _check_model(spec, x)
    A, y = data.features, data.targets
    w = data.weights
    if spec.kind == LEAST_SQUARES:
        g = A.T @ (w * (A @ x - y))
    elif spec.kind == LOGISTIC:
        g = A.T @ (w * -y * expit(-y * (A @ x)))
    else:
        W = x.reshape(spec.feature_dim, spec.num_classes)
        logits = A @ W
        P = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        P[np.arange(len(y)), y.astype(int)] -= 1.0
        g = (A.T @ (w[:, None] * P)).reshape(spec.d)
    return g + spec.lam * x


def cells_data(cells: Iterable, scale: float = 1.0) -> WeightedData:
    """Pool client cells into one weighted table.

    Each cell needs ``features``, ``targets`` and ``weight`` (its ``p_i``); a
    sample of cell ``i`` gets weight ``scale * p_i / n_i``, so the table's
    objective is ``scale * sum_i p_i * mean_i(f)``.
    """
    feats, targs, wts = [], [], []
    for cell in cells:
        n = len(cell.targets)
        if n == 0:
            raise ObjectiveError("empty client cell")
        feats.append(cell.features)
        targs.append(cell.targets)
        wts.append(np.full(n, scale * cell.weight / n))
    if not feats:
        raise ObjectiveError("no data")
    return WeightedData(np.concatenate(feats), np.concatenate(targs), np.concatenate(wts))


def block_data(dataset, m: int) -> WeightedData:
    """Weighted table of block ``m`` (0-based)."""
    return cells_data(dataset.grid[m])


def global_data(dataset) -> WeightedData:
    M = len(dataset.grid)
    return cells_data((cell for row in dataset.grid for cell in row), scale=1.0 / M)


def empirical_block_objective(spec: ObjectiveSpec, x, cells) -> float:
    """``F_m(x) = sum_i p_i * mean loss of client i``; equals ``(1/N) sum_i p_i N F~_i``."""
    return weighted_objective(spec, x, cells_data(cells))


def empirical_global_objective(spec: ObjectiveSpec, x, dataset) -> float:
    values = [empirical_block_objective(spec, x, row) for row in dataset.grid]
    if not values:
        raise ObjectiveError("dataset has no blocks")
    return float(np.mean(values))


# -- optimum oracle ---------------------------------------------------------------


def smoothness(spec: ObjectiveSpec, data: WeightedData) -> float:
    norms = np.einsum("nf,nf->n", data.features, data.features)
    return spec.lam + HESSIAN_FACTOR[spec.kind] * float(norms.max(initial=0.0))


def solve_optimum(spec: ObjectiveSpec, data: WeightedData, max_iter: int = 500_000) -> np.ndarray:
    """Exact minimiser of the weighted empirical objective.

    Least squares is solved from the regularised normal equations. Logistic
    and softmax use full-batch accelerated gradient descent with adaptive
    restart, iterated until the gradient norm drops to ``OPTIMUM_GRAD_TOL``.
    """
    if len(data) == 0:
        raise ObjectiveError("no data")
    if spec.kind == LEAST_SQUARES:
        A, w = data.features, data.weights
        H = A.T @ (w[:, None] * A) + spec.lam * np.eye(spec.d)
        x = np.linalg.solve(H, A.T @ (w * data.targets))
        # one Newton refinement against rounding in the solve
        x = x - np.linalg.solve(H, weighted_gradient(spec, x, data))
        gnorm = np.linalg.norm(weighted_gradient(spec, x, data))
        if not gnorm <= OPTIMUM_GRAD_TOL:
            raise OracleFailure(f"normal equations left gradient norm {gnorm:.3e}")
        return x

    step = 1.0 / smoothness(spec, data)
    x = np.zeros(spec.d)
    z = x.copy()
    theta = 1.0
    for _ in range(max_iter):
        g = weighted_gradient(spec, z, data)
        x_new = z - step * g
        g_new = weighted_gradient(spec, x_new, data)
        if np.linalg.norm(g_new) <= OPTIMUM_GRAD_TOL:
            return x_new
        if g @ (x_new - x) > 0:
            theta = 1.0
            z = x_new.copy()
        else:
            theta_next = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
            z = x_new + ((theta - 1) / theta_next) * (x_new - x)
            theta = theta_next
        x = x_new
    raise OracleFailure(f"no convergence to gradient norm {OPTIMUM_GRAD_TOL} in {max_iter} iterations")


def constants(
    spec: ObjectiveSpec,
    data: WeightedData,
    n_probes: int = 32,
    radius: Optional[float] = None,
    seed: int = 0,
) -> ProblemConstants:
    """Assumption constants for ``data``.

    ``mu`` and ``L`` are exact bounds. ``sigma2`` (gradient variance) and
    ``G2`` (mean squared gradient norm) are maxima over a probe grid: the
    origin plus ``n_probes`` seeded points in the ball of radius ``B``, where
    ``B`` is the projection radius, else ``radius``, else ``2 ||x*|| + 1``.
    """
    if len(data) == 0:
        raise ObjectiveError("no data")
    if radius is None:
        radius = spec.projection_radius
    if radius is None:
        radius = 2.0 * float(np.linalg.norm(solve_optimum(spec, data))) + 1.0
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_probes, spec.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.random(n_probes) ** (1.0 / spec.d)
    probes = np.vstack([np.zeros(spec.d), dirs * radii[:, None]])
    sigma2 = G2 = 0.0
    w = data.weights
    for x in probes:
        g = sample_gradients(spec, x, data.features, data.targets)
        mean = w @ g
        sigma2 = max(sigma2, float(w @ np.sum((g - mean) ** 2, axis=1)))
        G2 = max(G2, float(w @ np.sum(g * g, axis=1)))
    return ProblemConstants(mu=spec.lam, L=smoothness(spec, data), sigma2=sigma2, G2=G2, B2=radius**2)


def project(x: np.ndarray, radius: Optional[float]) -> np.ndarray:
    """Project rows of ``x`` onto the Euclidean ball (no-op when ``radius`` is None)."""
    if radius is None:
        return x
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x * np.minimum(1.0, radius / np.maximum(norms, 1e-300))
