import numpy as np
import pytest

from syncsde import (
    AnalyticGmmModel,
    GaussianComponent,
    GmmSpec,
    LatentGrid,
    ScheduleConfig,
    build_schedule,
)


@pytest.fixture
def sched50():
    return build_schedule(ScheduleConfig(kind="linear-beta", T=50))


def grid(data, space="canvas"):
    return LatentGrid(np.asarray(data, dtype=np.float64), space)


def rand_grid(rng, shape, scale=1.0, space="canvas"):
    return LatentGrid(scale * rng.standard_normal(shape), space)


def single_gaussian(shape, mean, variance=1.0, cond="c"):
    """One-component mixture with a constant mean grid."""
    mean_grid = LatentGrid(np.full(shape, float(mean)))
    return GmmSpec((GaussianComponent(1.0, mean_grid, variance),), cond)


def gaussian_model(sched, shape, mean, variance=1.0, cond="c"):
    return AnalyticGmmModel(single_gaussian(shape, mean, variance, cond), sched)


class ZeroModel:
    """eps == 0 everywhere; turns ddim_step into its pure drift part."""

    def epsilon(self, y, t):
        return y.with_data(np.zeros_like(y.data))
