import math

import numpy as np
import pytest

from syncsde import LambdaSchedule, LatentGrid, run_plan
from syncsde.config import GmmBinding
from syncsde.metrics import compute_metrics
from syncsde.masks import SoftMask
from syncsde.schedule import ScheduleConfig, build_schedule
from syncsde.tasks import (
    AmbiguousConfig,
    EditConfig,
    MaskT2IConfig,
    ViewGraphConfig,
    build_ambiguous,
    build_edit,
    build_mask_t2i,
    build_view_graph,
)
from syncsde.views import BinaryMask, table

from conftest import gaussian_model


def sched(T=25):
    return build_schedule(ScheduleConfig(kind="linear-beta", T=T, beta_end=0.1))


def binding(cond, mean, variance=1.0):
    return GmmBinding(cond, ((1.0, float(mean), float(variance)),))


def run_task(plan, means):
    models = {
        e.cond: gaussian_model(plan.schedule, e.view.patch_shape, means[e.cond], cond=e.cond)
        for e in plan.entries
    }
    states = run_plan(plan, models)
    return {e.trajectory_id: states[e.trajectory_id][0] for e in plan.entries}


def test_identical_patches_have_zero_overlap_mse():
    from syncsde.coupling import FinalSpec, PlanEntry, TrajectoryPlan
    from syncsde.views import crop

    s = sched(5)
    canvas_shape = (1, 2, 6)
    views = [crop(canvas_shape, (0, 0), (2, 4)), crop(canvas_shape, (0, 2), (2, 4))]
    plan = TrajectoryPlan(
        entries=(PlanEntry("patch_1", "c", views[0]), PlanEntry("patch_2", "c", views[1])),
        schedule=s,
        seed=0,
        final=FinalSpec("compose"),
    )
    # Patches agree exactly on the shared columns by construction.
    base = np.arange(12, dtype=float).reshape(1, 2, 6)
    terminals = {
        "patch_1": LatentGrid(base[:, :, 0:4], "patch"),
        "patch_2": LatentGrid(base[:, :, 2:6], "patch"),
    }
    rows = dict(compute_metrics("wide", plan, terminals, {}))
    assert rows["overlap_mse_patch_1_patch_2"] == 0.0
    assert rows["overlap_mse_mean"] == 0.0


def test_mask_t2i_region_rows_present_and_sane():
    s = sched(20)
    mask_arr = np.zeros((2, 4), dtype=np.uint8)
    mask_arr[:, :2] = 1
    mask = BinaryMask(mask_arr)
    plan = build_mask_t2i(
        MaskT2IConfig(s, 3, 1, mask, "bg", "fg", "img", LambdaSchedule(5.0, "linear-decreasing"))
    )
    means = {"bg": 1.0, "fg": -1.0, "img": 0.0}
    terminals = run_task(plan, means)
    bindings = {cond: binding(cond, mean) for cond, mean in means.items()}
    rows = dict(
        compute_metrics("mask_t2i", plan, terminals, bindings, {"background_mask": mask})
    )
    assert set(rows) == {
        f"{region}_region_dist_to_{cond}" for region in ("bg", "fg") for cond in means
    }
    assert all(v >= 0 for v in rows.values())


def test_edit_rows_measure_source_deviation():
    s = sched(30)
    rng = np.random.default_rng(0)
    source = LatentGrid(rng.standard_normal((1, 2, 4)))
    mask_arr = np.zeros((2, 4))
    mask_arr[:, :2] = 1.0
    cfg = EditConfig(
        s, 1, source, 0.5, "src", "tgt", LambdaSchedule(8.0, "linear-decreasing"),
        soft_mask=SoftMask(mask_arr),
    )
    plan = build_edit(cfg)
    terminals = run_task(plan, {"src": 0.0, "tgt": 1.0})
    mask = BinaryMask(mask_arr.astype(np.uint8))
    rows = dict(
        compute_metrics("edit", plan, terminals, {}, {"background_mask": mask, "source": source})
    )
    assert rows["bg_rms_to_source"] < rows["fg_rms_to_source"]


def test_ambiguous_coupling_raises_cross_likelihood():
    # Interpretation 2 scored under condition 1: the coupled run should beat
    # the decoupled run on average over 50 seeds.
    s = sched(25)
    means = {"a": 0.8, "b": -0.8}
    bindings = {cond: binding(cond, mean) for cond, mean in means.items()}
    averages = {}
    for inv_max in (0.0, 5.0):
        vals = []
        for seed in range(50):
            plan = build_ambiguous(
                AmbiguousConfig(
                    s, seed, 1, (2, 2), "rotate180", ("a", "b"),
                    LambdaSchedule(inv_max, "linear-decreasing"),
                )
            )
            terminals = run_task(plan, means)
            rows = dict(compute_metrics("ambiguous", plan, terminals, bindings))
            vals.append(rows["loglik_interpretation_view_2_under_a"])
        averages[inv_max] = float(np.mean(vals))
    assert averages[5.0] > averages[0.0]


def test_view_graph_agreement_rows():
    s = sched(10)
    shape = (1, 1, 6)
    v1 = table(shape, (1, 4), np.array([[0, 0], [1, 1], [2, 2], [3, 3]]))
    v2 = table(shape, (1, 4), np.array([[2, 0], [3, 1], [4, 2], [5, 3]]))
    plan = build_view_graph(
        ViewGraphConfig(s, 2, shape, (v1, v2), ("c",), LambdaSchedule(5.0, "linear-decreasing"))
    )
    terminals = run_task(plan, {"c": 0.0})
    rows = dict(compute_metrics("view_graph", plan, terminals, {}))
    assert "view_agreement_mse_view_1" in rows
    assert "view_agreement_weighted" in rows
    # The last view always agrees with the composition where it is on top.
    assert rows["view_agreement_mse_view_2"] == 0.0
