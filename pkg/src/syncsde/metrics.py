"""Desk-scale metrics computed from terminal trajectory states.

Each task gets metrics that probe what its coupling was supposed to achieve:
shared-region agreement for overlapping layouts, junction smoothness for
sequences, region fidelity for masked generation and editing, data
log-likelihood per interpretation for ambiguous outputs, and
coverage-weighted agreement for view graphs.
"""

from __future__ import annotations

import numpy as np

from .coupling import TrajectoryPlan, finalize
from .errors import ConfigError
from .grid import LatentGrid
from .score import gmm_log_density
from .views import apply, compose_phi, transfer

Rows = list[tuple[str, float]]


def compute_metrics(
    task_kind: str,
    plan: TrajectoryPlan,
    terminals: dict[str, LatentGrid],
    gmm_bindings: dict,
    extras: dict | None = None,
) -> Rows:
    extras = extras or {}
    if task_kind == "wide":
        return _overlap_rows(plan, terminals)
    if task_kind == "sequence":
        return _overlap_rows(plan, terminals) + _junction_rows(plan, terminals)
    if task_kind == "mask_t2i":
        return _region_rows(plan, terminals, extras["background_mask"], gmm_bindings)
    if task_kind == "edit":
        return _edit_rows(plan, terminals, extras["background_mask"], extras["source"])
    if task_kind == "ambiguous":
        return _interpretation_rows(plan, terminals, gmm_bindings)
    if task_kind == "view_graph":
        return _agreement_rows(plan, terminals)
    raise ConfigError("task.kind", f"no metrics defined for task {task_kind!r}")


def _overlap_rows(plan: TrajectoryPlan, terminals: dict[str, LatentGrid]) -> Rows:
    rows: Rows = []
    values = []
    for prev, entry in zip(plan.entries, plan.entries[1:]):
        carried, mask = transfer(prev.view, entry.view, terminals[prev.trajectory_id])
        sel = mask.data.astype(bool)
        if not sel.any():
            continue
        diff = carried.data[:, sel] - terminals[entry.trajectory_id].data[:, sel]
        mse = float(np.mean(diff * diff))
        rows.append((f"overlap_mse_{prev.trajectory_id}_{entry.trajectory_id}", mse))
        values.append(mse)
    if values:
        rows.append(("overlap_mse_mean", float(np.mean(values))))
    return rows


def _junction_rows(plan: TrajectoryPlan, terminals: dict[str, LatentGrid]) -> Rows:
    composed = compose_phi(
        [e.view for e in plan.entries], [terminals[e.trajectory_id] for e in plan.entries]
    )
    rows: Rows = []
    gaps = []
    for entry in plan.entries[1:]:
        start = int(entry.view.patch_src[0])
        if start <= 0:
            continue
        gap = float(np.mean(np.abs(composed.data[:, start] - composed.data[:, start - 1])))
        rows.append((f"junction_gap_{entry.trajectory_id}", gap))
        gaps.append(gap)
    if gaps:
        rows.append(("junction_gap_mean", float(np.mean(gaps))))
    return rows


def _mixture_mean(binding, shape: tuple[int, ...]) -> np.ndarray:
    spec = binding.spec_for(shape)
    return sum(c.weight * c.mean.data for c in spec.components)


def _region_rows(
    plan: TrajectoryPlan, terminals: dict[str, LatentGrid], mask, gmm_bindings: dict
) -> Rows:
    output = finalize(plan, {k: [v] for k, v in terminals.items()})["output"]
    regions = {"bg": mask.data.astype(bool), "fg": ~mask.data.astype(bool)}
    rows: Rows = []
    for region_name, sel in regions.items():
        if not sel.any():
            continue
        region_mean = float(np.mean(output.data[:, sel]))
        for entry in plan.entries:
            binding = gmm_bindings.get(entry.cond)
            if binding is None:
                continue
            cond_mean = _mixture_mean(binding, output.shape)
            dist = abs(region_mean - float(np.mean(cond_mean[:, sel])))
            rows.append((f"{region_name}_region_dist_to_{entry.cond}", dist))
    return rows


def _edit_rows(plan: TrajectoryPlan, terminals: dict[str, LatentGrid], mask, source) -> Rows:
    output = terminals["tgt"]
    rows: Rows = []
    for region_name, sel in (("bg", mask.data.astype(bool)), ("fg", ~mask.data.astype(bool))):
        if not sel.any():
            continue
        diff = output.data[:, sel] - source.data[:, sel]
        rows.append((f"{region_name}_rms_to_source", float(np.sqrt(np.mean(diff * diff)))))
    return rows


def _interpretation_rows(
    plan: TrajectoryPlan, terminals: dict[str, LatentGrid], gmm_bindings: dict
) -> Rows:
    interpretations = finalize(plan, {k: [v] for k, v in terminals.items()})
    rows: Rows = []
    for name, canvas in interpretations.items():
        for entry in plan.entries:
            binding = gmm_bindings.get(entry.cond)
            if binding is None:
                continue
            patch = apply(entry.view, canvas)
            spec = binding.spec_for(patch.shape)
            rows.append((f"loglik_{name}_under_{entry.cond}", gmm_log_density(spec, patch)))
    return rows


def _agreement_rows(plan: TrajectoryPlan, terminals: dict[str, LatentGrid]) -> Rows:
    composed = compose_phi(
        [e.view for e in plan.entries], [terminals[e.trajectory_id] for e in plan.entries]
    )
    rows: Rows = []
    weighted = 0.0
    total_cells = 0
    for entry in plan.entries:
        rendered = apply(entry.view, composed)
        backed = (entry.view.patch_src >= 0).reshape(entry.view.patch_shape[1:])
        if not backed.any():
            continue
        diff = rendered.data[:, backed] - terminals[entry.trajectory_id].data[:, backed]
        mse = float(np.mean(diff * diff))
        count = int(backed.sum())
        rows.append((f"view_agreement_mse_{entry.trajectory_id}", mse))
        weighted += mse * count
        total_cells += count
    if total_cells:
        rows.append(("view_agreement_weighted", weighted / total_cells))
    return rows
