"""Run-config parsing and validation.

The run config is one TOML file (JSON with the same tree also loads, which
is how effective configs are persisted into run directories). Parsing is
strict: every diagnostic names the offending key, referenced files must
exist, and every condition id used by the task must be bound to a model.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .coupling import LambdaSchedule, TrajectoryPlan
from .errors import ConfigError, EngineError
from .grid import LatentGrid
from .io import read_tensor
from .masks import SoftMask
from .protocol import RemoteScoreModel
from .schedule import NoiseSchedule, ScheduleConfig, build_schedule
from .score import AnalyticGmmModel, GaussianComponent, GmmSpec, ScoreModel
from .tasks import (
    AmbiguousConfig,
    EditConfig,
    MaskT2IConfig,
    SequenceConfig,
    ViewGraphConfig,
    WideConfig,
    build_ambiguous,
    build_edit,
    build_mask_t2i,
    build_sequence,
    build_view_graph,
    build_wide,
)
from .views import BinaryMask, ViewMap, crop, flip_vertical, identity, rotate90, rotate180, rotate270
from .views import segment1d, skew, table

TASK_KINDS = ("mask_t2i", "edit", "wide", "ambiguous", "view_graph", "sequence")
_DEFAULT_INV_MAX = {kind: 5.0 for kind in TASK_KINDS} | {"sequence": 3.0}

_MISSING = object()


def _get(tree: Mapping, key: str, kind: type | tuple, default: Any = _MISSING) -> Any:
    parts = key.split(".")
    node: Any = tree
    for part in parts:
        if not isinstance(node, Mapping) or part not in node:
            if default is _MISSING:
                raise ConfigError(key, "missing required key")
            return default
        node = node[part]
    if kind is float and isinstance(node, int) and not isinstance(node, bool):
        node = float(node)
    if not isinstance(node, kind) or isinstance(node, bool) and kind is not bool:
        raise ConfigError(key, f"expected {getattr(kind, '__name__', kind)}, got {type(node).__name__}")
    return node


def _int_pair(tree: Mapping, key: str) -> tuple[int, int]:
    value = _get(tree, key, list)
    if len(value) != 2 or not all(isinstance(v, int) for v in value):
        raise ConfigError(key, f"expected a pair of integers, got {value!r}")
    return int(value[0]), int(value[1])


def load_tree(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"no such file: {path}")
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"TOML parse error: {exc}") from exc


def set_override(tree: dict, dotted_key: str, value: Any) -> None:
    """Apply one CLI/sweep override into the config tree in place."""
    parts = dotted_key.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted_key, f"cannot override through non-table {part!r}")
    node[parts[-1]] = value


def parse_scalar(text: str) -> Any:
    """Best-effort scalar for --sweep values: int, then float, then string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _load_array(node: Any, base_dir: Path, key: str) -> np.ndarray:
    if isinstance(node, dict):
        path = _get(node, "path", str)
        resolved = (base_dir / path).resolve()
        if not resolved.exists():
            raise ConfigError(f"{key}.path", f"no such file: {resolved}")
        try:
            return read_tensor(resolved)
        except EngineError as exc:
            raise ConfigError(f"{key}.path", str(exc)) from exc
    if isinstance(node, list):
        try:
            return np.asarray(node, dtype=np.float64)
        except ValueError as exc:
            raise ConfigError(key, f"ragged or non-numeric array: {exc}") from exc
    raise ConfigError(key, "expected an inline array or { path = ... }")


@dataclass(frozen=True)
class GmmBinding:
    """Analytic mixture, with scalar means broadcast to whatever shape asks."""

    condition_id: str
    components: tuple[tuple[float, float | np.ndarray, float], ...]  # (weight, mean, variance)

    def spec_for(self, shape: tuple[int, ...]) -> GmmSpec:
        comps = []
        for weight, mean, variance in self.components:
            if isinstance(mean, np.ndarray):
                if mean.shape != shape:
                    raise ConfigError(
                        f"models.{self.condition_id}",
                        f"component mean shape {mean.shape} does not match trajectory shape {shape}",
                    )
                grid = LatentGrid(mean)
            else:
                grid = LatentGrid(np.full(shape, mean))
            comps.append(GaussianComponent(weight, grid, variance))
        return GmmSpec(tuple(comps), self.condition_id)


class DispatchingGmmModel:
    """ScoreModel that materializes one AnalyticGmmModel per latent shape."""

    def __init__(self, binding: GmmBinding, sched: NoiseSchedule):
        self.binding = binding
        self.sched = sched
        self._cache: dict[tuple[int, ...], AnalyticGmmModel] = {}

    def epsilon(self, y, t):
        model = self._cache.get(y.shape)
        if model is None:
            model = AnalyticGmmModel(self.binding.spec_for(y.shape), self.sched)
            self._cache[y.shape] = model
        return model.epsilon(y, t)


class LazyRemoteModel:
    """Connects to the provider on first use, so validation stays offline."""

    def __init__(self, endpoint: str, sched: NoiseSchedule, cond: str, timeout: float):
        self.endpoint = endpoint
        self.sched = sched
        self.cond = cond
        self.timeout = timeout
        self._model: RemoteScoreModel | None = None

    def epsilon(self, y, t):
        if self._model is None:
            self._model = RemoteScoreModel(self.endpoint, self.sched, self.cond, self.timeout)
        return self._model.epsilon(y, t)

    def close(self):
        if self._model is not None:
            self._model.close()
            self._model = None


@dataclass(frozen=True)
class RunConfig:
    """Validated run description, ready to build a plan and model registry."""

    tree: dict
    base_dir: Path
    seed: int
    out: str | None
    workers: int
    schedule: NoiseSchedule
    lambda_schedule: LambdaSchedule
    task_kind: str

    def make_plan(self) -> TrajectoryPlan:
        return _make_plan(self)

    def make_models(self) -> dict[str, ScoreModel]:
        return _make_models(self)

    def gmm_bindings(self) -> dict[str, GmmBinding]:
        return _gmm_bindings(self)


def parse_run_config(tree: dict, base_dir: str | Path) -> RunConfig:
    base_dir = Path(base_dir)
    seed = _get(tree, "seed", int, 0)
    out = _get(tree, "out", str, None)
    workers = _get(tree, "workers", int, 1)
    if workers < 1:
        raise ConfigError("workers", f"must be >= 1, got {workers}")
    rng = _get(tree, "rng", str, "philox")
    if rng != "philox":
        raise ConfigError("rng", f"only the 'philox' counter-based generator is supported, got {rng!r}")

    kind = _get(tree, "schedule.kind", str, "linear-beta")
    alphas_node = _get(tree, "schedule.alphas", list, None)
    schedule_cfg = ScheduleConfig(
        kind=kind,
        T=_get(tree, "schedule.T", int),
        beta_start=_get(tree, "schedule.beta_start", float, 1e-4),
        beta_end=_get(tree, "schedule.beta_end", float, 0.02),
        alphas=tuple(alphas_node) if alphas_node is not None else None,
    )
    try:
        schedule = build_schedule(schedule_cfg)
    except EngineError as exc:
        if isinstance(exc, ConfigError):
            raise
        offending = "schedule.alphas" if kind == "explicit" else "schedule"
        raise ConfigError(offending, str(exc)) from exc

    task_kind = _get(tree, "task.kind", str)
    if task_kind not in TASK_KINDS:
        raise ConfigError("task.kind", f"unknown task {task_kind!r}; choose from {TASK_KINDS}")

    profile = _get(tree, "lambda.profile", str, "linear-decreasing")
    inv_max = _get(tree, "lambda.inv_max", float, _DEFAULT_INV_MAX[task_kind])
    try:
        lambda_schedule = LambdaSchedule(inv_lambda_max=inv_max, profile=profile)
    except EngineError as exc:
        raise ConfigError("lambda", str(exc)) from exc

    rc = RunConfig(
        tree=tree,
        base_dir=base_dir,
        seed=seed,
        out=out,
        workers=workers,
        schedule=schedule,
        lambda_schedule=lambda_schedule,
        task_kind=task_kind,
    )
    # Building the plan exercises every task key and referenced file.
    plan = rc.make_plan()
    bound = set(_models_node(tree))
    for entry in plan.entries:
        if entry.cond not in bound:
            raise ConfigError(f"models.{entry.cond}", "condition id used by the task but not bound")
    _validate_models(rc)
    return rc


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_run_config(load_tree(path), path.parent)


def _models_node(tree: dict) -> dict:
    models = _get(tree, "models", dict, {})
    if not models:
        raise ConfigError("models", "at least one score model binding is required")
    return models


def _validate_models(rc: RunConfig) -> None:
    for cond, node in _models_node(rc.tree).items():
        key = f"models.{cond}"
        kind = _get(node, "kind", str, "analytic-gmm")
        if kind == "analytic-gmm":
            _parse_gmm(cond, node, rc.base_dir)
        elif kind == "remote":
            _get(node, "endpoint", str)
        else:
            raise ConfigError(f"{key}.kind", f"unknown model kind {kind!r}")


def _parse_gmm(cond: str, node: dict, base_dir: Path) -> GmmBinding:
    key = f"models.{cond}"
    comp_nodes = _get(node, "components", list)
    if not comp_nodes:
        raise ConfigError(f"{key}.components", "mixture needs at least one component")
    comps = []
    total = 0.0
    for i, comp in enumerate(comp_nodes):
        ckey = f"{key}.components[{i}]"
        if not isinstance(comp, dict):
            raise ConfigError(ckey, "expected a table")
        weight = _get(comp, "weight", float, 1.0 / len(comp_nodes))
        variance = _get(comp, "variance", float, 1.0)
        mean_node = comp.get("mean", 0.0)
        if isinstance(mean_node, (int, float)) and not isinstance(mean_node, bool):
            mean: float | np.ndarray = float(mean_node)
        else:
            mean = _load_array(mean_node, base_dir, f"{ckey}.mean")
        if weight <= 0.0:
            raise ConfigError(f"{ckey}.weight", f"must be positive, got {weight}")
        if variance <= 0.0:
            raise ConfigError(f"{ckey}.variance", f"must be positive, got {variance}")
        total += weight
        comps.append((weight, mean, variance))
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{key}.components", f"weights sum to {total}, expected 1")
    return GmmBinding(cond, tuple(comps))


def _gmm_bindings(rc: RunConfig) -> dict[str, GmmBinding]:
    out = {}
    for cond, node in _models_node(rc.tree).items():
        if _get(node, "kind", str, "analytic-gmm") == "analytic-gmm":
            out[cond] = _parse_gmm(cond, node, rc.base_dir)
    return out


def _make_models(rc: RunConfig) -> dict[str, ScoreModel]:
    models: dict[str, ScoreModel] = {}
    for cond, node in _models_node(rc.tree).items():
        kind = _get(node, "kind", str, "analytic-gmm")
        if kind == "analytic-gmm":
            models[cond] = DispatchingGmmModel(_parse_gmm(cond, node, rc.base_dir), rc.schedule)
        else:
            models[cond] = LazyRemoteModel(
                endpoint=_get(node, "endpoint", str),
                sched=rc.schedule,
                cond=cond,
                timeout=_get(node, "timeout", float, 30.0),
            )
    return models


def _parse_binary_mask(tree: dict, key: str, base_dir: Path) -> BinaryMask:
    node = _get(tree, key, (dict, list))
    arr = _load_array(node, base_dir, key)
    if arr.ndim != 2:
        raise ConfigError(key, f"mask must be 2D, got rank {arr.ndim}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ConfigError(key, "mask entries must be exactly 0 or 1")
    return BinaryMask(arr.astype(np.uint8))


def _parse_view(node: Any, canvas_shape: tuple[int, ...], base_dir: Path, key: str) -> ViewMap:
    if not isinstance(node, dict):
        raise ConfigError(key, "expected a view table")
    kind = _get(node, "kind", str)
    if kind == "identity":
        return identity(canvas_shape)
    if kind == "crop":
        return crop(canvas_shape, _int_pair(node, "offset"), _int_pair(node, "size"))
    if kind == "rotate90":
        return rotate90(canvas_shape)
    if kind == "rotate180":
        return rotate180(canvas_shape)
    if kind == "rotate270":
        return rotate270(canvas_shape)
    if kind == "flip-vertical":
        return flip_vertical(canvas_shape)
    if kind == "skew":
        return skew(canvas_shape, _get(node, "offset", int, 1))
    if kind == "segment1d":
        return segment1d(canvas_shape, _get(node, "offset", int), _get(node, "length", int))
    if kind == "table":
        patch = _get(node, "patch", list)
        pairs_node = node.get("pairs")
        if isinstance(pairs_node, str):
            pairs = _load_index_pairs((base_dir / pairs_node).resolve(), f"{key}.pairs")
        elif isinstance(pairs_node, list):
            pairs = np.asarray(pairs_node, dtype=np.int64)
        else:
            raise ConfigError(f"{key}.pairs", "expected a CSV path or inline [canvas, patch] pairs")
        return table(canvas_shape, tuple(int(p) for p in patch), pairs)
    raise ConfigError(f"{key}.kind", f"unknown view kind {kind!r}")


def _load_index_pairs(path: Path, key: str) -> np.ndarray:
    if not path.exists():
        raise ConfigError(key, f"no such file: {path}")
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if rows == [] and not row[0].strip().lstrip("-").isdigit():
                continue  # header row
            if len(row) < 2:
                raise ConfigError(key, f"row {row!r} needs canvas_index, patch_index")
            rows.append((int(row[0]), int(row[1])))
    if not rows:
        raise ConfigError(key, "no index pairs found")
    return np.asarray(rows, dtype=np.int64)


def _conds(tree: dict, key_base: str, count: int) -> tuple[str, ...]:
    conds = _get(tree, f"{key_base}.conds", list, None)
    if conds is not None:
        if not all(isinstance(c, str) for c in conds):
            raise ConfigError(f"{key_base}.conds", "condition ids must be strings")
        if len(conds) not in (1, count):
            raise ConfigError(f"{key_base}.conds", f"expected 1 or {count} ids, got {len(conds)}")
        return tuple(conds)
    return (_get(tree, f"{key_base}.cond", str),)


def _make_plan(rc: RunConfig) -> TrajectoryPlan:
    tree, base_dir = rc.tree, rc.base_dir
    kind = rc.task_kind
    cutoff = _get(tree, "task.sync_cutoff_fraction", float, 0.0)
    if not 0.0 <= cutoff < 1.0:
        raise ConfigError("task.sync_cutoff_fraction", f"must lie in [0, 1), got {cutoff}")
    common = dict(
        schedule=rc.schedule,
        seed=rc.seed,
        lambda_schedule=rc.lambda_schedule,
        sync_cutoff_fraction=cutoff,
    )
    if kind == "mask_t2i":
        return build_mask_t2i(
            MaskT2IConfig(
                channels=_get(tree, "task.channels", int, 1),
                background_mask=_parse_binary_mask(tree, "task.mask", base_dir),
                bg_cond=_get(tree, "task.bg", str),
                fg_cond=_get(tree, "task.fg", str),
                img_cond=_get(tree, "task.img", str),
                **common,
            )
        )
    if kind == "edit":
        source_arr = _load_array(_get(tree, "task.source", (dict, list)), base_dir, "task.source")
        if source_arr.ndim not in (2, 3):
            raise ConfigError("task.source", f"source must be rank 2 or 3, got {source_arr.ndim}")
        soft_node = tree["task"].get("soft_mask")
        attn_node = tree["task"].get("attention")
        soft = attention = None
        if soft_node is not None:
            soft_arr = _load_array(soft_node, base_dir, "task.soft_mask")
            if soft_arr.ndim != 2:
                raise ConfigError("task.soft_mask", "soft mask must be 2D")
            soft = SoftMask(soft_arr)
        elif attn_node is not None:
            if not isinstance(attn_node, dict):
                raise ConfigError("task.attention", "expected a table")
            attention = (
                _load_array(attn_node.get("self_attn"), base_dir, "task.attention.self_attn"),
                _load_array(attn_node.get("cross_attn"), base_dir, "task.attention.cross_attn"),
                _get(attn_node, "token", int),
            )
        else:
            raise ConfigError("task.soft_mask", "edit needs task.soft_mask or task.attention")
        return build_edit(
            EditConfig(
                source=LatentGrid(source_arr),
                tau=_get(tree, "task.tau", float),
                src_cond=_get(tree, "task.src", str),
                tgt_cond=_get(tree, "task.tgt", str),
                soft_mask=soft,
                attention=attention,
                **common,
            )
        )
    if kind == "wide":
        patch = _int_pair(tree, "task.patch")
        canvas_width = _get(tree, "task.canvas_width", int)
        return build_wide(
            WideConfig(
                channels=_get(tree, "task.channels", int, 1),
                patch_size=patch,
                canvas_width=canvas_width,
                overlap_ratio=_get(tree, "task.overlap", float),
                conds=_conds(tree, "task", _wide_count(canvas_width, patch[1], tree)),
                **common,
            )
        )
    if kind == "ambiguous":
        conds = _get(tree, "task.conds", list)
        if len(conds) != 2 or not all(isinstance(c, str) for c in conds):
            raise ConfigError("task.conds", "ambiguous needs exactly two condition ids")
        return build_ambiguous(
            AmbiguousConfig(
                channels=_get(tree, "task.channels", int, 1),
                size=_int_pair(tree, "task.size"),
                transform=_get(tree, "task.transform", str),
                skew_offset=_get(tree, "task.skew_offset", int, 1),
                conds=(conds[0], conds[1]),
                **common,
            )
        )
    if kind == "view_graph":
        channels = _get(tree, "task.channels", int, 1)
        length = _get(tree, "task.length", int, None)
        if length is not None:
            canvas_shape: tuple[int, ...] = (channels, length)
        else:
            canvas_shape = (channels,) + _int_pair(tree, "task.size")
        view_nodes = _get(tree, "task.views", list)
        views = tuple(
            _parse_view(node, canvas_shape, base_dir, f"task.views[{i}]")
            for i, node in enumerate(view_nodes)
        )
        return build_view_graph(
            ViewGraphConfig(
                canvas_shape=canvas_shape,
                views=views,
                conds=_conds(tree, "task", len(views)),
                **common,
            )
        )
    if kind == "sequence":
        length = _get(tree, "task.length", int)
        segment = _get(tree, "task.segment", int)
        overlap = _get(tree, "task.overlap", float, 0.25)
        return build_sequence(
            SequenceConfig(
                channels=_get(tree, "task.channels", int, 1),
                length=length,
                segment_length=segment,
                overlap_ratio=overlap,
                conds=_conds(tree, "task", _segment_count(length, segment, overlap)),
                **common,
            )
        )
    raise ConfigError("task.kind", f"unknown task {kind!r}")


def _wide_count(canvas_width: int, patch_width: int, tree: dict) -> int:
    overlap = _get(tree, "task.overlap", float)
    shared = round(overlap * patch_width)
    stride = patch_width - shared
    if stride < 1 or (canvas_width - patch_width) % max(stride, 1) != 0:
        return 1  # layout errors surface with full diagnostics in build_wide
    return (canvas_width - patch_width) // stride + 1


def _segment_count(length: int, segment: int, overlap: float) -> int:
    if segment == length:
        return 1
    shared = round(overlap * segment)
    stride = segment - shared
    if stride < 1 or (length - segment) % max(stride, 1) != 0:
        return 1
    return (length - segment) // stride + 1
