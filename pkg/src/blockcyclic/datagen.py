"""Synthetic unbalanced, non-i.i.d., block-cyclic federated datasets.

Block ``m`` has its own ground-truth parameter ``theta_m = theta_0 +
block_heterogeneity * v_m`` and its own feature shift, of size
``covariate_shift * block_heterogeneity``; inside a block every
client gets an extra feature shift scaled by ``client_heterogeneity``.
Targets come from a shared latent ``a . theta_m + noise``: the latent itself
for regression, its sign for logistic labels, and the argmax over class
columns for softmax labels.

With ``block_layout="interpolated"`` the blocks instead sit at evenly spaced
points of one segment: ``theta_m = theta_0 + block_heterogeneity * s_m * v``
with ``s_m = (2m - 1) / M - 1`` and a random unit ``v``, and the block shifts
follow a second unit direction the same way. The outermost blocks move
outwards as ``M`` grows, much like partitioning a fixed label set into more,
purer blocks.

Feature noise has covariance eigenvalues proportional to ``j ** -feature_decay``
(``j = 1..d_f``) with unit trace, so ``feature_decay > 0`` gives the
ill-conditioned, correlated-looking features of real data.

Cell sizes follow the usual unbalanced partition: normal with mean
``S / (M N)`` and standard deviation a fifth of the mean, rounded and
truncated below at one.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

REGRESSION = "regression"
LOGISTIC = "logistic"
SOFTMAX = "softmax"

RANDOM_LAYOUT = "random"
INTERPOLATED_LAYOUT = "interpolated"

SIZE_CV = 0.2


class DataGenError(ValueError):
    pass


@dataclass(frozen=True)
class DataGenConfig:
    N: int = 4
    M: int = 2
    S: int = 4000
    d_f: int = 10
    block_heterogeneity: float = 0.1
    client_heterogeneity: float = 0.5
    noise_std: float = 0.5
    seed: int = 0
    target: str = REGRESSION
    num_classes: int = 2
    eval_per_block: int = 500
    theta_scale: float = 1.0
    feature_decay: float = 2.0
    covariate_shift: float = 1.0
    block_layout: str = RANDOM_LAYOUT

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise DataGenError("N and M must be positive")
        if self.S < self.M * self.N:
            raise DataGenError(f"S={self.S} cannot give every one of the {self.M * self.N} cells a sample")
        if self.d_f < 1:
            raise DataGenError("d_f must be positive")
        if min(self.block_heterogeneity, self.client_heterogeneity, self.noise_std, self.covariate_shift) < 0:
            raise DataGenError("heterogeneity and noise knobs must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise DataGenError("seed must be a 64-bit unsigned integer")
        if self.target not in (REGRESSION, LOGISTIC, SOFTMAX):
            raise DataGenError(f"unknown target kind {self.target!r}")
        if self.target == SOFTMAX and self.num_classes < 2:
            raise DataGenError("softmax needs at least two classes")
        if self.feature_decay < 0:
            raise DataGenError("feature_decay must be nonnegative")
        if self.block_layout not in (RANDOM_LAYOUT, INTERPOLATED_LAYOUT):
            raise DataGenError(f"unknown block_layout {self.block_layout!r}")
        if self.eval_per_block < 1:
            raise DataGenError("eval_per_block must be positive")

    @property
    def model_dim(self) -> int:
        return self.d_f * self.num_classes if self.target == SOFTMAX else self.d_f


@dataclass(frozen=True, eq=False)
class ClientBlockDataset:
    client_id: int
    block_id: int
    features: np.ndarray
    targets: np.ndarray
    weight: float

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True, eq=False)
class FederatedCyclicDataset:
    """``grid[m][i]`` is client ``i``'s data in block ``m`` (both 0-based)."""

    grid: Tuple[Tuple[ClientBlockDataset, ...], ...]
    eval_sets: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    gen_config: DataGenConfig
    thetas: np.ndarray = field(default=None, repr=False)
    shuffled: bool = False

    @property
    def M(self) -> int:
        return len(self.grid)

    @property
    def N(self) -> int:
        return len(self.grid[0])

    @property
    def n_train(self) -> int:
        return sum(len(cell) for row in self.grid for cell in row)


def _cell_sizes(rng: np.random.Generator, config: DataGenConfig) -> np.ndarray:
    mean = config.S / (config.M * config.N)
    draws = rng.normal(mean, SIZE_CV * mean, size=(config.M, config.N))
    return np.maximum(1, np.rint(draws)).astype(int)


def _latent_targets(rng, config: DataGenConfig, A: np.ndarray, theta: np.ndarray) -> np.ndarray:
    if config.target == SOFTMAX:
        scores = A @ theta + config.noise_std * rng.standard_normal((len(A), config.num_classes))
        return np.argmax(scores, axis=1).astype(float)
    latent = A @ theta + config.noise_std * rng.standard_normal(len(A))
    if config.target == LOGISTIC:
        return np.where(latent >= 0, 1.0, -1.0)
    return latent


def generate(config: DataGenConfig) -> FederatedCyclicDataset:
    rng = np.random.default_rng(config.seed)
    f, M, N = config.d_f, config.M, config.N
    cols = config.num_classes if config.target == SOFTMAX else 1
    scale = 1.0 / np.sqrt(f)
    spectrum = np.arange(1, f + 1, dtype=float) ** -config.feature_decay
    noise_scales = np.sqrt(spectrum / spectrum.sum())

    theta0 = config.theta_scale * scale * rng.standard_normal((f, cols))
    bh = config.block_heterogeneity
    if config.block_layout == INTERPOLATED_LAYOUT:
        v = rng.standard_normal((f, cols))
        w = rng.standard_normal(f)
        s = (2.0 * np.arange(1, M + 1) - 1.0) / M - 1.0
        thetas = theta0 + config.theta_scale * bh * s[:, None, None] * (v / np.linalg.norm(v))
        block_shift = config.covariate_shift * bh * s[:, None] * (w / np.linalg.norm(w))
    else:
        directions = scale * rng.standard_normal((M, f, cols))
        thetas = theta0 + config.theta_scale * bh * directions
        block_shift = config.covariate_shift * bh * scale * rng.standard_normal((M, f))
    client_shift = config.client_heterogeneity * scale * rng.standard_normal((M, N, f))
    sizes = _cell_sizes(rng, config)

    def draw(m, shift, n):
        A = shift + noise_scales * rng.standard_normal((n, f))
        theta = thetas[m] if cols > 1 else thetas[m][:, 0]
        return A, _latent_targets(rng, config, A, theta)

    grid = []
    for m in range(M):
        total = sizes[m].sum()
        row = []
        for i in range(N):
            A, y = draw(m, block_shift[m] + client_shift[m, i], sizes[m, i])
            row.append(ClientBlockDataset(i, m, A, y, float(sizes[m, i] / total)))
        grid.append(tuple(row))

    eval_sets = []
    for m in range(M):
        owners = rng.integers(0, N, size=config.eval_per_block)
        A, y = draw(m, block_shift[m] + client_shift[m, owners], config.eval_per_block)
        eval_sets.append((A, y))

    thetas = thetas.reshape(M, -1) if cols > 1 else thetas[:, :, 0]
    return FederatedCyclicDataset(tuple(grid), tuple(eval_sets), config, thetas)


def shuffled_variant(dataset: FederatedCyclicDataset, seed: Optional[int] = None) -> FederatedCyclicDataset:
    """Pool every training sample and deal them back out at random.

    Cell sizes are kept, so each block slot now holds an i.i.d. draw from the
    pooled distribution and the sample total is unchanged. Evaluation sets
    are the original per-block ones.
    """
    if seed is None:
        seed = dataset.gen_config.seed
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    cells = [cell for row in dataset.grid for cell in row]
    A = np.concatenate([c.features for c in cells])
    y = np.concatenate([c.targets for c in cells])
    order = rng.permutation(len(y))
    A, y = A[order], y[order]
    grid, start = [], 0
    for row in dataset.grid:
        total = sum(len(c) for c in row)
        new_row = []
        for c in row:
            stop = start + len(c)
            new_row.append(ClientBlockDataset(c.client_id, c.block_id, A[start:stop], y[start:stop], len(c) / total))
            start = stop
        grid.append(tuple(new_row))
    return replace(dataset, grid=tuple(grid), shuffled=True)


def client_size_report(dataset: FederatedCyclicDataset) -> List[Tuple[int, int, int, float]]:
    """Rows of ``(client, block, count, p_i)``."""
    return [(c.client_id, c.block_id, len(c), c.weight) for row in dataset.grid for c in row]


# -- serialization ------------------------------------------------------------------
#
# A dataset directory holds ``dataset.json`` (config echo, per-cell counts and
# weights, block parameters) and ``samples.csv`` with one row per sample:
# split,block,client,target,f0,...,f{d_f-1}. Floats are written with repr so
# the round trip is exact; eval rows have client -1.


def _fmt(value: float) -> str:
    return repr(float(value))


def save_dataset(dataset: FederatedCyclicDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "blockcyclic-dataset/1",
        "config": asdict(dataset.gen_config),
        "shuffled": dataset.shuffled,
        "cells": [
            {"block": c.block_id, "client": c.client_id, "count": len(c), "weight": c.weight}
            for row in dataset.grid
            for c in row
        ],
        "eval_counts": [len(y) for _, y in dataset.eval_sets],
        "thetas": None if dataset.thetas is None else dataset.thetas.tolist(),
    }
    (directory / "dataset.json").write_text(json.dumps(manifest, indent=2) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    f = dataset.gen_config.d_f
    writer.writerow(["split", "block", "client", "target"] + [f"f{j}" for j in range(f)])
    for row in dataset.grid:
        for c in row:
            for a, t in zip(c.features, c.targets):
                writer.writerow(["train", c.block_id, c.client_id, _fmt(t)] + [_fmt(v) for v in a])
    for m, (A, y) in enumerate(dataset.eval_sets):
        for a, t in zip(A, y):
            writer.writerow(["eval", m, -1, _fmt(t)] + [_fmt(v) for v in a])
    (directory / "samples.csv").write_text(buf.getvalue())
    return directory


def load_dataset(directory) -> FederatedCyclicDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "dataset.json").read_text())
    config = DataGenConfig(**manifest["config"])
    f = config.d_f
    train, evals = {}, {}
    with open(directory / "samples.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            key = (int(rec[1]), int(rec[2]))
            target = float(rec[3])
            feats = [float(v) for v in rec[4 : 4 + f]]
            bucket = train if rec[0] == "train" else evals
            bucket.setdefault(key, []).append((feats, target))

    def arrays(rows):
        return np.array([r[0] for r in rows], dtype=float).reshape(-1, f), np.array([r[1] for r in rows])

    grid = [[None] * config.N for _ in range(config.M)]
    for cell in manifest["cells"]:
        m, i = cell["block"], cell["client"]
        A, y = arrays(train[(m, i)])
        if len(y) != cell["count"]:
            raise DataGenError(f"cell ({m}, {i}) has {len(y)} samples, manifest says {cell['count']}")
        grid[m][i] = ClientBlockDataset(i, m, A, y, cell["weight"])
    eval_sets = tuple(arrays(evals[(m, -1)]) for m in range(config.M))
    thetas = None if manifest["thetas"] is None else np.array(manifest["thetas"])
    return FederatedCyclicDataset(
        tuple(tuple(row) for row in grid), eval_sets, config, thetas, manifest["shuffled"]
    )
