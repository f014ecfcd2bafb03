import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blockcyclic import datagen, objectives as obj
from blockcyclic.datagen import ClientBlockDataset, DataGenConfig, FederatedCyclicDataset

LS1 = obj.ObjectiveSpec(obj.LEAST_SQUARES, 1, 0.1)
finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def cell(A, y, w, client=0, block=0):
    return ClientBlockDataset(client, block, np.asarray(A, float), np.asarray(y, float), w)


def fd_gradient(spec, x, sample):
    h = 1e-6 * (1 + np.linalg.norm(x))
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (obj.loss(spec, x + e, sample) - obj.loss(spec, x - e, sample)) / (2 * h)
    return g


# -- loss and gradient examples ---------------------------------------------------


def test_loss_examples():
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 3, 0.7)
    a, b = np.array([1.0, -2.0, 0.5]), 1.5
    assert obj.loss(spec, np.zeros(3), obj.Sample(a, b)) == pytest.approx(0.5 * b * b)
    logit = obj.ObjectiveSpec(obj.LOGISTIC, 3, 0.7)
    assert obj.loss(logit, np.zeros(3), obj.Sample(a, -1.0)) == pytest.approx(math.log(2))
    assert obj.loss(LS1, np.array([1.0]), obj.Sample(np.array([2.0]), 3.0)) == pytest.approx(0.55)


def test_gradient_examples():
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 3, 0.7)
    a, b = np.array([1.0, -2.0, 0.5]), 1.5
    np.testing.assert_allclose(obj.gradient(spec, np.zeros(3), obj.Sample(a, b)), -b * a)
    # the regulariser contributes exactly lam * x: compare with a zero-feature sample
    x = np.array([0.3, -1.1, 2.0])
    np.testing.assert_array_equal(obj.gradient(spec, x, obj.Sample(np.zeros(3), 0.0)), 0.7 * x)
    logit = obj.ObjectiveSpec(obj.LOGISTIC, 2, 0.1)
    s = obj.Sample(np.array([1.0, 1.0]), 1.0)
    x = np.array([1.0, -1.0])
    g = obj.gradient(logit, x, s)
    assert np.linalg.norm(g - fd_gradient(logit, x, s)) <= 1e-5 * np.linalg.norm(g)


def test_dimension_and_finiteness_errors():
    with pytest.raises(obj.ObjectiveError):
        obj.loss(LS1, np.zeros(2), obj.Sample(np.array([1.0]), 0.0))
    with pytest.raises(obj.ObjectiveError):
        obj.loss(LS1, np.array([np.nan]), obj.Sample(np.array([1.0]), 0.0))
    with pytest.raises(obj.ObjectiveError):
        obj.gradient(LS1, np.zeros(1), obj.Sample(np.array([1.0, 2.0]), 0.0))


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="hinge", d=2, lam=0.1), dict(kind=obj.LOGISTIC, d=2, lam=0.0), dict(kind=obj.SOFTMAX, d=5, lam=0.1, num_classes=2)],
)
def test_spec_validation(kwargs):
    with pytest.raises(obj.ObjectiveError):
        obj.ObjectiveSpec(**kwargs)


@st.composite
def model_and_sample(draw):
    kind = draw(st.sampled_from(obj.KINDS))
    f = draw(st.integers(1, 4))
    spec = obj.ObjectiveSpec(kind, f * 3 if kind == obj.SOFTMAX else f, draw(st.floats(1e-3, 1.0)), num_classes=3)
    x = draw(arrays(float, spec.d, elements=finite))
    a = draw(arrays(float, f, elements=finite))
    if kind == obj.LEAST_SQUARES:
        y = draw(finite)
    elif kind == obj.LOGISTIC:
        y = draw(st.sampled_from([-1.0, 1.0]))
    else:
        y = float(draw(st.integers(0, 2)))
    return spec, x, obj.Sample(a, y)


@given(model_and_sample())
def test_gradient_matches_finite_differences(case):
    spec, x, s = case
    g = obj.gradient(spec, x, s)
    err = np.linalg.norm(g - fd_gradient(spec, x, s))
    assert err <= 1e-5 * max(np.linalg.norm(g), 1e-2)


@given(model_and_sample())
def test_loss_is_nonnegative_and_finite(case):
    spec, x, s = case
    value = obj.loss(spec, x, s)
    assert math.isfinite(value) and value >= 0


# -- minibatches and weighted objectives ------------------------------------------


def test_minibatch_examples():
    spec = obj.ObjectiveSpec(obj.LOGISTIC, 2, 0.2)
    x = np.array([0.4, -0.3])
    s1, s2 = obj.Sample(np.array([1.0, 2.0]), 1.0), obj.Sample(np.array([-0.5, 1.0]), -1.0)
    g1, g2 = obj.gradient(spec, x, s1), obj.gradient(spec, x, s2)
    np.testing.assert_array_equal(obj.minibatch_gradient(spec, x, [s1]), g1)
    np.testing.assert_allclose(obj.minibatch_gradient(spec, x, [s1, s1]), g1, rtol=1e-15)
    for j in range(2):
        assert obj.minibatch_gradient(spec, x, [s1, s2])[j] == pytest.approx((g1[j] + g2[j]) / 2, rel=1e-14)
    with pytest.raises(obj.ObjectiveError):
        obj.minibatch_gradient(spec, x, [])


def test_block_objective_examples():
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 2, 0.1)
    x = np.array([0.5, -1.0])
    single = cell([[1.0, 2.0]], [0.3], 1.0)
    assert obj.empirical_block_objective(spec, x, [single]) == pytest.approx(
        obj.loss(spec, x, obj.Sample(np.array([1.0, 2.0]), 0.3))
    )

    rng = np.random.default_rng(0)
    A1, A2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    y1, y2 = rng.standard_normal(3), rng.standard_normal(3)
    union = np.mean(obj.sample_losses(spec, x, np.vstack([A1, A2]), np.concatenate([y1, y2])))
    value = obj.empirical_block_objective(spec, x, [cell(A1, y1, 0.5, 0), cell(A2, y2, 0.5, 1)])
    assert value == pytest.approx(union, rel=1e-14)

    sizes, weights = (2, 5, 3), (0.5, 0.25, 0.25)
    cells = [cell(rng.standard_normal((n, 2)), rng.standard_normal(n), w, i) for i, (n, w) in enumerate(zip(sizes, weights))]
    brute = 0.0
    for c in cells:
        brute += c.weight * sum(obj.loss(spec, x, obj.Sample(a, b)) for a, b in zip(c.features, c.targets)) / len(c)
    assert obj.empirical_block_objective(spec, x, cells) == pytest.approx(brute, rel=1e-13)


def _dataset(rows):
    cfg = DataGenConfig(N=len(rows[0]), M=len(rows), S=100, d_f=rows[0][0].features.shape[1])
    grid = tuple(tuple(ClientBlockDataset(i, m, c.features, c.targets, c.weight) for i, c in enumerate(r)) for m, r in enumerate(rows))
    return FederatedCyclicDataset(grid, tuple((r[0].features, r[0].targets) for r in rows), cfg)


def test_global_objective_examples():
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 2, 0.1)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2)
    b1 = [cell(rng.standard_normal((4, 2)), rng.standard_normal(4), 1.0)]
    b2 = [cell(rng.standard_normal((6, 2)), rng.standard_normal(6), 1.0)]
    one = obj.empirical_block_objective(spec, x, b1)
    assert obj.empirical_global_objective(spec, x, _dataset([b1])) == pytest.approx(one)
    assert obj.empirical_global_objective(spec, x, _dataset([b1, b1, b1])) == pytest.approx(one)
    two = obj.empirical_block_objective(spec, x, b2)
    assert obj.empirical_global_objective(spec, x, _dataset([b1, b2])) == pytest.approx((one + two) / 2)


# -- optimum oracle and constants -------------------------------------------------


def test_solve_optimum_examples():
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 3, 0.1)
    data = obj.WeightedData(np.eye(3), np.zeros(3), np.full(3, 1 / 3))
    np.testing.assert_allclose(obj.solve_optimum(spec, data), 0.0, atol=1e-12)

    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 1, 1.0)
    data = obj.WeightedData(np.array([[1.0]]), np.array([2.0]), np.array([1.0]))
    x = obj.solve_optimum(spec, data)
    grid = np.linspace(0, 2, 20001)
    assert x[0] == pytest.approx(grid[np.argmin(0.5 * (grid - 2) ** 2 + 0.5 * grid**2)], abs=1e-4)
    assert x[0] == pytest.approx(1.0, abs=1e-12)


def test_solver_failure_is_loud():
    spec = obj.ObjectiveSpec(obj.LOGISTIC, 2, 1e-3)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 2))
    data = obj.WeightedData(A, np.sign(A[:, 0]), np.full(50, 1 / 50))
    with pytest.raises(obj.OracleFailure):
        obj.solve_optimum(spec, data, max_iter=3)


def test_constants_examples():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((20, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    w = np.full(20, 1 / 20)
    c = obj.constants(obj.ObjectiveSpec(obj.LEAST_SQUARES, 3, 0.1), obj.WeightedData(A, rng.standard_normal(20), w))
    assert (c.mu, c.L) == pytest.approx((0.1, 1.1))
    c = obj.constants(obj.ObjectiveSpec(obj.LEAST_SQUARES, 3, 0.3), obj.WeightedData(np.zeros((4, 3)), np.zeros(4), np.full(4, 0.25)))
    assert c.mu == c.L == pytest.approx(0.3)
    c = obj.constants(obj.ObjectiveSpec(obj.LOGISTIC, 3, 0.5), obj.WeightedData(2 * A, np.sign(A[:, 0]), w))
    assert c.L == pytest.approx(1.5)
    assert 0 < c.mu <= c.L and c.sigma2 >= 0 and c.G2 >= 0


# -- properties on generated blocks -----------------------------------------------


def _block(kind, seed):
    target = {obj.LEAST_SQUARES: datagen.REGRESSION, obj.LOGISTIC: datagen.LOGISTIC, obj.SOFTMAX: datagen.SOFTMAX}[kind]
    cfg = DataGenConfig(N=2, M=1, S=60, d_f=3, target=target, num_classes=3, seed=seed)
    ds = datagen.generate(cfg)
    return obj.ObjectiveSpec(kind, cfg.model_dim, 0.05, num_classes=3), obj.block_data(ds, 0)


@given(st.sampled_from(obj.KINDS), st.integers(0, 50), st.integers(0, 2**32 - 1))
def test_strong_convexity_and_smoothness(kind, data_seed, pair_seed):
    spec, data = _block(kind, data_seed)
    rng = np.random.default_rng(pair_seed)
    x, y = rng.standard_normal((2, spec.d)) * 2
    fx, fy = obj.weighted_objective(spec, x, data), obj.weighted_objective(spec, y, data)
    gx, gy = obj.weighted_gradient(spec, x, data), obj.weighted_gradient(spec, y, data)
    assert fy >= fx + gx @ (y - x) + spec.lam / 2 * np.sum((x - y) ** 2) - 1e-10
    assert np.linalg.norm(gx - gy) <= obj.smoothness(spec, data) * np.linalg.norm(x - y) + 1e-10


@given(st.sampled_from(obj.KINDS), st.integers(0, 50))
def test_optimum_is_a_fixed_point(kind, seed):
    spec, data = _block(kind, seed)
    x = obj.solve_optimum(spec, data)
    step = 1.0 / obj.smoothness(spec, data)
    assert np.linalg.norm(step * obj.weighted_gradient(spec, x, data)) <= 1e-8


@given(st.sampled_from(obj.KINDS), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_weighted_gradient_matches_per_sample_sum(kind, seed, xseed):
    spec, data = _block(kind, seed)
    x = np.random.default_rng(xseed).standard_normal(spec.d)
    direct = data.weights @ obj.sample_gradients(spec, x, data.features, data.targets)
    np.testing.assert_allclose(obj.weighted_gradient(spec, x, data), direct, rtol=1e-10, atol=1e-12)


def test_projection():
    x = np.array([[3.0, 4.0], [0.3, 0.4]])
    np.testing.assert_allclose(obj.project(x, 1.0), [[0.6, 0.8], [0.3, 0.4]])
    assert obj.project(x, None) is x
