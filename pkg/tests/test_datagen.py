import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockcyclic import analysis as an, datagen, objectives as obj
from blockcyclic.datagen import DataGenConfig, DataGenError

configs = st.builds(
    DataGenConfig,
    N=st.integers(1, 4),
    M=st.integers(1, 3),
    S=st.integers(12, 200),
    d_f=st.integers(1, 4),
    block_heterogeneity=st.floats(0, 2),
    client_heterogeneity=st.floats(0, 2),
    seed=st.integers(0, 2**64 - 1),
    target=st.sampled_from([datagen.REGRESSION, datagen.LOGISTIC, datagen.SOFTMAX]),
    num_classes=st.integers(2, 4),
    eval_per_block=st.integers(1, 20),
    block_layout=st.sampled_from([datagen.RANDOM_LAYOUT, datagen.INTERPOLATED_LAYOUT]),
)


def arrays_equal(a, b):
    same_cells = all(
        np.array_equal(x.features, y.features) and np.array_equal(x.targets, y.targets) and x.weight == y.weight
        for ra, rb in zip(a.grid, b.grid)
        for x, y in zip(ra, rb)
    )
    same_eval = all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a.eval_sets, b.eval_sets))
    return same_cells and same_eval


@pytest.mark.parametrize(
    "bad",
    [dict(N=0), dict(M=0), dict(N=3, M=2, S=5), dict(noise_std=-1.0), dict(seed=-1), dict(seed=2**64),
     dict(target="ordinal"), dict(block_layout="ring"), dict(feature_decay=-0.5), dict(covariate_shift=-1.0)],
)
def test_config_invariants(bad):
    with pytest.raises(DataGenError):
        DataGenConfig(**bad)


@settings(max_examples=40)
@given(configs)
def test_structure(config):
    ds = datagen.generate(config)
    assert ds.M == config.M and ds.N == config.N
    for m, row in enumerate(ds.grid):
        assert sum(c.weight for c in row) == pytest.approx(1.0, abs=1e-12)
        for i, c in enumerate(row):
            assert (c.block_id, c.client_id) == (m, i)
            assert len(c) >= 1
            assert c.features.shape == (len(c), config.d_f)
            assert c.weight == len(c) / sum(len(x) for x in row)
    assert all(len(y) == config.eval_per_block for _, y in ds.eval_sets)
    if config.target == datagen.LOGISTIC:
        assert set(np.unique(np.concatenate([c.targets for r in ds.grid for c in r]))) <= {-1.0, 1.0}
    # evaluation samples are fresh draws, never copies of training rows
    train = {tuple(a) for r in ds.grid for c in r for a in c.features}
    assert not any(tuple(a) in train for A, _ in ds.eval_sets for a in A)


@settings(max_examples=20)
@given(configs)
def test_generation_is_a_pure_function_of_config(config):
    assert arrays_equal(datagen.generate(config), datagen.generate(config))


def test_seed_42_serializes_identically(tmp_path):
    cfg = DataGenConfig(seed=42, S=400)
    a = datagen.save_dataset(datagen.generate(cfg), tmp_path / "a")
    b = datagen.save_dataset(datagen.generate(cfg), tmp_path / "b")
    for name in ("dataset.json", "samples.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_save_load_round_trip(tmp_path):
    for cfg in (DataGenConfig(S=300, seed=4), DataGenConfig(S=300, target=datagen.SOFTMAX, num_classes=3, d_f=3)):
        ds = datagen.generate(cfg)
        back = datagen.load_dataset(datagen.save_dataset(ds, tmp_path / cfg.target))
        assert back.gen_config == cfg
        assert arrays_equal(ds, back)
        np.testing.assert_array_equal(back.thetas, ds.thetas)


def test_single_cell_dataset():
    ds = datagen.generate(DataGenConfig(N=1, M=1, S=1000, seed=3))
    assert ds.n_train == len(ds.grid[0][0])
    assert abs(ds.n_train - 1000) < 1000  # one normal draw with std 200
    report = datagen.client_size_report(ds)
    assert report == [(0, 0, ds.n_train, 1.0)]


def test_client_size_report_matches_recount(tmp_path):
    ds = datagen.generate(DataGenConfig(N=5, M=3, S=900, seed=8))
    report = datagen.client_size_report(ds)
    assert sum(r[2] for r in report) == ds.n_train
    for m in range(3):
        assert sum(r[3] for r in report if r[1] == m) == pytest.approx(1.0, abs=1e-12)
    datagen.save_dataset(ds, tmp_path)
    counts = {}
    for line in (tmp_path / "samples.csv").read_text().splitlines()[1:]:
        split, block, client = line.split(",")[:3]
        if split == "train":
            counts[(int(client), int(block))] = counts.get((int(client), int(block)), 0) + 1
    assert {(i, m): n for i, m, n, _ in report} == counts


def test_cell_sizes_have_cv_one_fifth():
    cvs = []
    for seed in range(40):
        ds = datagen.generate(DataGenConfig(N=50, M=2, S=50_000, d_f=2, eval_per_block=1, seed=seed))
        for row in ds.grid:
            sizes = np.array([len(c) for c in row])
            cvs.append(sizes.std(ddof=1) / sizes.mean())
    assert np.mean(cvs) == pytest.approx(0.2, abs=0.05)


@pytest.mark.parametrize("layout", [datagen.RANDOM_LAYOUT, datagen.INTERPOLATED_LAYOUT])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_block_optima_separate_monotonically(layout, seed):
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 5, 1e-3)
    seps = []
    for bh in (0.1, 0.5, 1.5):
        cfg = DataGenConfig(N=3, M=3, S=3000, d_f=5, block_heterogeneity=bh, seed=seed, block_layout=layout)
        stars = an.compute_optima(datagen.generate(cfg), spec).block_stars
        seps.append(min(np.linalg.norm(stars[a] - stars[b]) for a in range(3) for b in range(a + 1, 3)))
    assert seps[0] < seps[1] < seps[2]


def test_zero_heterogeneity_collapses_blocks():
    cfg = DataGenConfig(N=3, M=2, S=2000, d_f=4, block_heterogeneity=0.0, client_heterogeneity=0.0, noise_std=0.0, seed=5)
    ds = datagen.generate(cfg)
    np.testing.assert_array_equal(ds.thetas[0], ds.thetas[1])
    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 4, 1e-9)
    stars = an.compute_optima(ds, spec).block_stars
    assert np.max(np.abs(stars[0] - stars[1])) <= 1e-6


def test_shuffled_variant():
    ds = datagen.generate(DataGenConfig(N=4, M=3, S=6000, block_heterogeneity=2.0, seed=9))
    a, b = datagen.shuffled_variant(ds), datagen.shuffled_variant(ds)
    assert arrays_equal(a, b) and a.shuffled
    assert a.n_train == ds.n_train
    assert [len(c) for r in a.grid for c in r] == [len(c) for r in ds.grid for c in r]
    pooled = lambda d: np.sort(np.concatenate([c.targets for r in d.grid for c in r]))  # noqa: E731
    np.testing.assert_array_equal(pooled(a), pooled(ds))

    spec = obj.ObjectiveSpec(obj.LEAST_SQUARES, 10, 1e-3)
    x = np.random.default_rng(0).standard_normal(10)

    def spread(d):
        vals = [obj.weighted_objective(spec, x, obj.block_data(d, m)) for m in range(d.M)]
        return (max(vals) - min(vals)) / np.mean(vals)

    assert spread(a) < 0.1
    assert spread(a) < spread(ds) / 5
