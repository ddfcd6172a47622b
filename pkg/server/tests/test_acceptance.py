"""Acceptance criterion 10: protocol equivalence against the primary engine.

Spawns this server as a subprocess (stdio transport) and drives it with the
engine's remote client; the oracle is the engine's in-process analytic
mixture. Run with -s to see the pass/fail line.
"""

import sys
import textwrap
import time
from pathlib import Path

import numpy as np
import pytest

pytest.importorskip("syncsde", reason="primary engine not installed")

from syncsde import (  # noqa: E402
    AnalyticGmmModel,
    GaussianComponent,
    GmmSpec,
    LatentGrid,
    RemoteScoreModel,
    ScheduleConfig,
    build_schedule,
)

DATA = Path(__file__).parent / "data"


def exec_endpoint(config_path: Path) -> str:
    return (
        f"exec:{sys.executable} -m scoreserver.cli "
        f"--gmm-config {config_path} --stdio --quiet"
    )


def test_c10_protocol_equivalence(tmp_path):
    start = time.perf_counter()
    ok = False
    try:
        T = 40
        config = tmp_path / "provider.toml"
        config.write_text(
            textwrap.dedent(
                """
                [schedule]
                kind = "linear-beta"
                T = 40
                beta_start = 1e-4
                beta_end = 0.02

                [conditions.plain]
                components = [{ weight = 1.0, mean = 0.3, variance = 1.5 }]

                [conditions.mix]
                components = [
                  { weight = 0.25, mean = -1.0, variance = 0.5 },
                  { weight = 0.75, mean = 2.0, variance = 2.0 },
                ]
                """
            )
        )
        sched = build_schedule(ScheduleConfig(kind="linear-beta", T=T))

        def local_model(shape, cond):
            if cond == "plain":
                comps = (GaussianComponent(1.0, LatentGrid(np.full(shape, 0.3)), 1.5),)
            else:
                comps = (
                    GaussianComponent(0.25, LatentGrid(np.full(shape, -1.0)), 0.5),
                    GaussianComponent(0.75, LatentGrid(np.full(shape, 2.0)), 2.0),
                )
            return AnalyticGmmModel(GmmSpec(comps, cond), sched)

        shapes = [(1, 4), (1, 2, 3), (2, 4, 4)]
        rng = np.random.default_rng(1234)
        remotes = {
            cond: RemoteScoreModel(exec_endpoint(config), sched, cond)
            for cond in ("plain", "mix")
        }
        try:
            worst = 0.0
            for _ in range(1000):
                cond = ("plain", "mix")[int(rng.integers(0, 2))]
                shape = shapes[int(rng.integers(0, len(shapes)))]
                t = int(rng.integers(1, T + 1))
                y = LatentGrid(rng.standard_normal(shape) * 1.5)
                got = remotes[cond].epsilon(y, t)
                # The wire is f32, so the oracle sees the f32-rounded latent.
                y_wire = LatentGrid(y.data.astype(np.float32).astype(np.float64))
                expected = local_model(shape, cond).epsilon(y_wire, t)
                worst = max(worst, float(np.max(np.abs(got.data - expected.data))))
            assert worst <= 1e-6, f"max abs deviation {worst}"
        finally:
            for model in remotes.values():
                model.close()
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        status = "PASS" if ok and elapsed <= 60.0 else "FAIL"
        print(
            f"[acceptance] criterion 10 (remote/in-process equivalence): {status} "
            f"in {elapsed:.2f}s (budget 60s)"
        )
    assert elapsed <= 60.0
