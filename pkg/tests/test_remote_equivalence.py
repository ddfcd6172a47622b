"""Standing remote/in-process equivalence checks.

These run whenever the reference score provider is installed alongside the
engine; without it they skip, keeping the primary suite self-contained.
"""

import importlib.util
import sys
import textwrap

import numpy as np
import pytest

from syncsde import LatentGrid, RemoteScoreModel, ScheduleConfig, build_schedule
from syncsde.runner import run_from_file

from conftest import gaussian_model, rand_grid

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("scoreserver") is None,
    reason="reference score provider not installed",
)

PROVIDER_CONFIG = """
[schedule]
kind = "linear-beta"
T = 30
beta_start = 1e-4
beta_end = 0.02

[conditions.plain]
components = [{ weight = 1.0, mean = 0.4, variance = 1.2 }]
"""


def exec_endpoint(config_path):
    return f"exec:{sys.executable} -m scoreserver.cli --gmm-config {config_path} --stdio --quiet"


@pytest.fixture
def provider_config(tmp_path):
    path = tmp_path / "provider.toml"
    path.write_text(textwrap.dedent(PROVIDER_CONFIG))
    return path


def test_remote_eps_matches_in_process(provider_config):
    sched = build_schedule(ScheduleConfig(kind="linear-beta", T=30))
    local = gaussian_model(sched, (1, 3, 3), 0.4, 1.2)
    remote = RemoteScoreModel(exec_endpoint(provider_config), sched, "plain")
    rng = np.random.default_rng(0)
    try:
        worst = 0.0
        for _ in range(200):
            t = int(rng.integers(1, 31))
            y = rand_grid(rng, (1, 3, 3))
            y_wire = LatentGrid(y.data.astype(np.float32).astype(np.float64))
            got = remote.epsilon(y, t)
            expected = local.epsilon(y_wire, t)
            worst = max(worst, float(np.max(np.abs(got.data - expected.data))))
        assert worst <= 1e-6
    finally:
        remote.close()


def test_runner_with_remote_condition(provider_config, tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(
        textwrap.dedent(
            f"""
            seed = 5

            [schedule]
            kind = "linear-beta"
            T = 30

            [models.plain]
            kind = "remote"
            endpoint = "{exec_endpoint(provider_config)}"

            [task]
            kind = "sequence"
            length = 20
            segment = 8
            overlap = 0.25
            cond = "plain"
            """
        )
    )
    (out,) = run_from_file(config, out=str(tmp_path / "out"))
    assert (out / "canvas.synb").exists()
    assert (out / "metrics.csv").read_text().startswith("metric,value")
