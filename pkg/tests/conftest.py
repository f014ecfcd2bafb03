import pytest
from hypothesis import HealthCheck, settings

# first calls pay for numba compilation, so no per-example deadline
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_ls():
    from blockcyclic import datagen, objectives as obj

    ds = datagen.generate(datagen.DataGenConfig(N=3, M=2, S=300, d_f=4, seed=11))
    return ds, obj.ObjectiveSpec(obj.LEAST_SQUARES, 4, 0.05)
