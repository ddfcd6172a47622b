"""Adapters that turn task descriptions into trajectory plans.

Each builder fixes the trajectory order, the per-trajectory coupling target
and precision, and how final outputs are assembled:

- mask_t2i: background trajectory, foreground trajectory constrained to
  agree with it on the background region, and a refinement trajectory
  constrained toward the masked blend of both.
- edit: mask_t2i with the background trajectory replaced by the DDIM
  inversion of a source sample, and the refinement initialized from the
  inversion's terminal noise.
- wide / sequence: overlapping crops (2D) or segments (1D), each coupled to
  the previous one's content on the shared region, composed later-wins.
- ambiguous: identity view plus one bijective transform view, coupled with
  full precision.
- view_graph: arbitrary injective views into one canvas; each view couples
  to the later-wins composition of its predecessors, over covered cells.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coupling import (
    CouplingRule,
    CouplingSpec,
    FinalSpec,
    LambdaSchedule,
    PlanEntry,
    TimestepStates,
    TrajectoryPlan,
)
from .errors import ConfigError
from .grid import LatentGrid
from .masks import PrecisionMask, SoftMask, attention_soft_mask, reshape_mask, threshold_mask
from .schedule import NoiseSchedule
from .views import BinaryMask, ViewMap, apply, compose_phi, identity, segment1d
from .views import crop as crop_view
from .views import flip_vertical, rotate90, rotate180, rotate270, skew

AMBIGUOUS_TRANSFORMS = ("identity", "rotate90", "rotate180", "rotate270", "flip-vertical", "skew")


@dataclass(frozen=True)
class MaskT2IConfig:
    schedule: NoiseSchedule
    seed: int
    channels: int
    background_mask: BinaryMask  # 1 = background, 0 = foreground
    bg_cond: str
    fg_cond: str
    img_cond: str
    lambda_schedule: LambdaSchedule
    sync_cutoff_fraction: float = 0.0


@dataclass(frozen=True)
class EditConfig:
    schedule: NoiseSchedule
    seed: int
    source: LatentGrid
    tau: float
    src_cond: str
    tgt_cond: str
    lambda_schedule: LambdaSchedule
    soft_mask: SoftMask | None = None
    attention: tuple[np.ndarray, np.ndarray, int] | None = None  # (self, cross, token)
    sync_cutoff_fraction: float = 0.0


@dataclass(frozen=True)
class WideConfig:
    schedule: NoiseSchedule
    seed: int
    channels: int
    patch_size: tuple[int, int]  # (H, w)
    canvas_width: int
    overlap_ratio: float
    conds: tuple[str, ...]  # one entry, or one per patch
    lambda_schedule: LambdaSchedule
    sync_cutoff_fraction: float = 0.0


@dataclass(frozen=True)
class AmbiguousConfig:
    schedule: NoiseSchedule
    seed: int
    channels: int
    size: tuple[int, int]  # (H, W)
    transform: str
    conds: tuple[str, str]
    lambda_schedule: LambdaSchedule
    skew_offset: int = 1
    sync_cutoff_fraction: float = 0.0


@dataclass(frozen=True)
class ViewGraphConfig:
    schedule: NoiseSchedule
    seed: int
    canvas_shape: tuple[int, ...]
    views: tuple[ViewMap, ...]
    conds: tuple[str, ...]  # one entry, or one per view
    lambda_schedule: LambdaSchedule
    sync_cutoff_fraction: float = 0.0


@dataclass(frozen=True)
class SequenceConfig:
    schedule: NoiseSchedule
    seed: int
    channels: int
    length: int
    segment_length: int
    overlap_ratio: float
    conds: tuple[str, ...]
    lambda_schedule: LambdaSchedule
    sync_cutoff_fraction: float = 0.0


def _blend_rule(bg_id: str, fg_id: str, mask: BinaryMask) -> CouplingRule:
    """Target = mask*bg + (1-mask)*fg with both precision terms of Eq-10 form."""
    m = mask.data.astype(np.float64)
    precision = reshape_mask(mask)
    terms = ((precision, 1.0), (precision.complement(), 1.0))

    def build(t: int, states: TimestepStates) -> CouplingSpec:
        bg, fg = states[bg_id], states[fg_id]
        target = bg.with_data(m * bg.data + (1.0 - m) * fg.data)
        return CouplingSpec(target=target, precision_terms=terms)

    return CouplingRule(depends_on=(bg_id, fg_id), build=build)


def _match_rule(source_id: str, precision: PrecisionMask) -> CouplingRule:
    """Constrain the masked region toward the source trajectory's state."""
    terms = ((precision, 1.0),)

    def build(t: int, states: TimestepStates) -> CouplingSpec:
        return CouplingSpec(target=states[source_id], precision_terms=terms)

    return CouplingRule(depends_on=(source_id,), build=build)


def build_mask_t2i(cfg: MaskT2IConfig) -> TrajectoryPlan:
    shape = (cfg.channels,) + cfg.background_mask.shape
    view = identity(shape)
    precision = reshape_mask(cfg.background_mask)
    entries = (
        PlanEntry("bg", cfg.bg_cond, view),
        PlanEntry(
            "fg",
            cfg.fg_cond,
            view,
            coupling=_match_rule("bg", precision),
            lambda_schedule=cfg.lambda_schedule,
        ),
        PlanEntry(
            "img",
            cfg.img_cond,
            view,
            coupling=_blend_rule("bg", "fg", cfg.background_mask),
            lambda_schedule=cfg.lambda_schedule,
        ),
    )
    return TrajectoryPlan(
        entries=entries,
        schedule=cfg.schedule,
        seed=cfg.seed,
        final=FinalSpec("trajectory", "img"),
        sync_cutoff_fraction=cfg.sync_cutoff_fraction,
    )


def edit_background_mask(cfg: EditConfig) -> BinaryMask:
    """Resolve the edit mask from a soft mask or attention tensors, then threshold."""
    if cfg.soft_mask is not None:
        soft = cfg.soft_mask
    elif cfg.attention is not None:
        self_attn, cross_attn, token = cfg.attention
        soft = attention_soft_mask(self_attn, cross_attn, token)
    else:
        raise ConfigError("task.soft_mask", "edit needs a soft mask or attention tensors")
    if soft.shape != cfg.source.spatial_shape:
        raise ConfigError(
            "task.soft_mask",
            f"mask shape {soft.shape} does not match source {cfg.source.spatial_shape}",
        )
    return threshold_mask(soft, cfg.tau)


def build_edit(cfg: EditConfig) -> TrajectoryPlan:
    mask = edit_background_mask(cfg)
    shape = cfg.source.shape
    view = identity(shape)
    precision = reshape_mask(mask)
    entries = (
        PlanEntry("src", cfg.src_cond, view, invert_from=cfg.source),
        PlanEntry(
            "fg",
            cfg.tgt_cond,
            view,
            coupling=_match_rule("src", precision),
            lambda_schedule=cfg.lambda_schedule,
        ),
        PlanEntry(
            "tgt",
            cfg.tgt_cond,
            view,
            coupling=_blend_rule("src", "fg", mask),
            lambda_schedule=cfg.lambda_schedule,
            init="src",
        ),
    )
    return TrajectoryPlan(
        entries=entries,
        schedule=cfg.schedule,
        seed=cfg.seed,
        final=FinalSpec("trajectory", "tgt"),
        sync_cutoff_fraction=cfg.sync_cutoff_fraction,
    )


def _overlap_layout(span: int, window: int, ratio: float, key: str) -> tuple[int, int]:
    """Shared-region width and stride for overlapping windows along one axis."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"{key}.overlap", f"overlap ratio must lie in (0, 1), got {ratio}")
    if window > span:
        raise ConfigError(f"{key}.patch", f"window {window} exceeds span {span}")
    shared = round(ratio * window)
    if shared < 1:
        raise ConfigError(
            f"{key}.overlap", f"ratio {ratio} of window {window} shares no cells; coupling undefined"
        )
    stride = window - shared
    if stride < 1:
        raise ConfigError(f"{key}.overlap", f"ratio {ratio} leaves no stride between windows")
    if (span - window) % stride != 0:
        raise ConfigError(
            f"{key}.canvas",
            f"span {span} is not tiled by windows of {window} with stride {stride}",
        )
    return shared, stride


def _neighbor_rule(prev_id: str, prev_view: ViewMap, this_view: ViewMap) -> CouplingRule:
    """Constrain the shared region toward the neighbor's transferred content."""
    from .views import transfer  # local import to keep module top uncluttered

    def build(t: int, states: TimestepStates) -> CouplingSpec:
        target, mask = transfer(prev_view, this_view, states[prev_id])
        return CouplingSpec(target=target, precision_terms=((reshape_mask(mask), 1.0),))

    return CouplingRule(depends_on=(prev_id,), build=build)


def _chain_plan(
    cfg,
    views: list[ViewMap],
    prefix: str,
) -> TrajectoryPlan:
    conds = cfg.conds if len(cfg.conds) > 1 else cfg.conds * len(views)
    if len(conds) != len(views):
        raise ConfigError("task.conds", f"expected 1 or {len(views)} condition ids, got {len(cfg.conds)}")
    entries = [PlanEntry(f"{prefix}_1", conds[0], views[0])]
    for i in range(1, len(views)):
        entries.append(
            PlanEntry(
                f"{prefix}_{i + 1}",
                conds[i],
                views[i],
                coupling=_neighbor_rule(f"{prefix}_{i}", views[i - 1], views[i]),
                lambda_schedule=cfg.lambda_schedule,
            )
        )
    return TrajectoryPlan(
        entries=tuple(entries),
        schedule=cfg.schedule,
        seed=cfg.seed,
        final=FinalSpec("compose"),
        sync_cutoff_fraction=cfg.sync_cutoff_fraction,
    )


def build_wide(cfg: WideConfig) -> TrajectoryPlan:
    h, w = cfg.patch_size
    _, stride = _overlap_layout(cfg.canvas_width, w, cfg.overlap_ratio, "task")
    canvas_shape = (cfg.channels, h, cfg.canvas_width)
    count = (cfg.canvas_width - w) // stride + 1
    views = [crop_view(canvas_shape, (0, i * stride), (h, w)) for i in range(count)]
    return _chain_plan(cfg, views, "patch")


def build_sequence(cfg: SequenceConfig) -> TrajectoryPlan:
    if cfg.segment_length == cfg.length:
        canvas_shape = (cfg.channels, cfg.length)
        conds = cfg.conds[:1]
        entry = PlanEntry("segment_1", conds[0], identity(canvas_shape))
        return TrajectoryPlan(
            entries=(entry,),
            schedule=cfg.schedule,
            seed=cfg.seed,
            final=FinalSpec("compose"),
            sync_cutoff_fraction=cfg.sync_cutoff_fraction,
        )
    _, stride = _overlap_layout(cfg.length, cfg.segment_length, cfg.overlap_ratio, "task")
    canvas_shape = (cfg.channels, cfg.length)
    count = (cfg.length - cfg.segment_length) // stride + 1
    views = [segment1d(canvas_shape, i * stride, cfg.segment_length) for i in range(count)]
    return _chain_plan(cfg, views, "segment")


def _transform_view(name: str, canvas_shape: tuple[int, ...], skew_offset: int) -> ViewMap:
    if name == "identity":
        return identity(canvas_shape)
    if name == "rotate90":
        return rotate90(canvas_shape)
    if name == "rotate180":
        return rotate180(canvas_shape)
    if name == "rotate270":
        return rotate270(canvas_shape)
    if name == "flip-vertical":
        return flip_vertical(canvas_shape)
    if name == "skew":
        return skew(canvas_shape, skew_offset)
    raise ConfigError("task.transform", f"unknown transform {name!r}; choose from {AMBIGUOUS_TRANSFORMS}")


def build_ambiguous(cfg: AmbiguousConfig) -> TrajectoryPlan:
    canvas_shape = (cfg.channels,) + cfg.size
    f1 = identity(canvas_shape)
    f2 = _transform_view(cfg.transform, canvas_shape, cfg.skew_offset)
    if not f2.is_bijective:
        raise ConfigError("task.transform", f"{cfg.transform!r} does not cover the whole canvas")
    full = PrecisionMask(np.ones(int(np.prod(f2.patch_shape[1:])), dtype=np.uint8))

    def build(t: int, states: TimestepStates) -> CouplingSpec:
        from .views import transfer

        target, _ = transfer(f1, f2, states["view_1"])
        return CouplingSpec(target=target, precision_terms=((full, 1.0),))

    entries = (
        PlanEntry("view_1", cfg.conds[0], f1),
        PlanEntry(
            "view_2",
            cfg.conds[1],
            f2,
            coupling=CouplingRule(depends_on=("view_1",), build=build),
            lambda_schedule=cfg.lambda_schedule,
        ),
    )
    return TrajectoryPlan(
        entries=entries,
        schedule=cfg.schedule,
        seed=cfg.seed,
        final=FinalSpec("interpretations"),
        sync_cutoff_fraction=cfg.sync_cutoff_fraction,
    )


def _predecessor_composition_rule(
    prev_ids: tuple[str, ...], prev_views: list[ViewMap], this_view: ViewMap
) -> tuple[CouplingRule, PrecisionMask]:
    """Render the later-wins composition of earlier views into this view."""
    union = np.zeros(int(np.prod(this_view.canvas_shape[1:])), dtype=np.uint8)
    for v in prev_views:
        union |= v.coverage_mask().data.ravel()
    covered = np.where(this_view.patch_src >= 0, union[np.clip(this_view.patch_src, 0, None)], 0)
    precision = PrecisionMask(covered.astype(np.uint8))

    def build(t: int, states: TimestepStates) -> CouplingSpec:
        canvas = compose_phi(prev_views, [states[pid] for pid in prev_ids])
        return CouplingSpec(target=apply(this_view, canvas), precision_terms=((precision, 1.0),))

    return CouplingRule(depends_on=prev_ids, build=build), precision


def build_view_graph(cfg: ViewGraphConfig) -> TrajectoryPlan:
    if not cfg.views:
        raise ConfigError("task.views", "need at least one view")
    conds = cfg.conds if len(cfg.conds) > 1 else cfg.conds * len(cfg.views)
    if len(conds) != len(cfg.views):
        raise ConfigError("task.conds", f"expected 1 or {len(cfg.views)} condition ids")
    for i, v in enumerate(cfg.views):
        if v.canvas_shape != cfg.canvas_shape:
            raise ConfigError("task.views", f"view {i + 1} canvas {v.canvas_shape} != {cfg.canvas_shape}")
    entries = [PlanEntry("view_1", conds[0], cfg.views[0])]
    ids = ["view_1"]
    for i in range(1, len(cfg.views)):
        rule, precision = _predecessor_composition_rule(
            tuple(ids), list(cfg.views[:i]), cfg.views[i]
        )
        if not precision.data.any():
            warnings.warn(
                f"view {i + 1} shares no canvas cells with its predecessors; coupling is inert",
                stacklevel=2,
            )
        entries.append(
            PlanEntry(
                f"view_{i + 1}",
                conds[i],
                cfg.views[i],
                coupling=rule,
                lambda_schedule=cfg.lambda_schedule,
            )
        )
        ids.append(f"view_{i + 1}")
    return TrajectoryPlan(
        entries=tuple(entries),
        schedule=cfg.schedule,
        seed=cfg.seed,
        final=FinalSpec("compose"),
        sync_cutoff_fraction=cfg.sync_cutoff_fraction,
    )
