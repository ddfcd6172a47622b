"""Run execution: artifact writing, manifests, and sweeps.

A run writes into a fresh directory: the effective config (canonical JSON,
with file references made absolute), one terminal tensor and preview per
trajectory, the task's final outputs, a metrics CSV, and a line-delimited
JSON manifest carrying the config hash, the seed, and a content digest per
output file. Nothing in the artifacts depends on wall clock or machine
identity, so identical config+seed reproduces every byte.

Failed runs leave nothing behind: artifacts are staged in a sibling
temporary directory and renamed into place only on success.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_tree, parse_run_config, set_override
from .coupling import finalize, run_plan
from .errors import ConfigError
from .grid import LatentGrid
from .io import export_preview, read_tensor, write_tensor
from .masks import SoftMask
from .metrics import compute_metrics
from .tasks import EditConfig, edit_background_mask

_PATH_KEYS = ("pairs",)  # string-valued config keys that name files


def absolutize_paths(node, base_dir: Path):
    """Rewrite relative file references so the tree is location-independent."""
    if isinstance(node, dict):
        out = {}
        for key, value in node.items():
            if key == "path" and isinstance(value, str):
                out[key] = str((base_dir / value).resolve())
            elif key in _PATH_KEYS and isinstance(value, str):
                out[key] = str((base_dir / value).resolve())
            else:
                out[key] = absolutize_paths(value, base_dir)
        return out
    if isinstance(node, list):
        return [absolutize_paths(v, base_dir) for v in node]
    return node


def _task_extras(rc: RunConfig) -> dict:
    """Mask/source context some metrics need beyond the plan itself."""
    if rc.task_kind == "mask_t2i":
        from .config import _parse_binary_mask

        return {"background_mask": _parse_binary_mask(rc.tree, "task.mask", rc.base_dir)}
    if rc.task_kind == "edit":
        from .config import _get, _load_array

        source = LatentGrid(_load_array(rc.tree["task"]["source"], rc.base_dir, "task.source"))
        soft_node = rc.tree["task"].get("soft_mask")
        attn_node = rc.tree["task"].get("attention")
        soft = attention = None
        if soft_node is not None:
            soft = SoftMask(_load_array(soft_node, rc.base_dir, "task.soft_mask"))
        elif attn_node is not None:
            attention = (
                _load_array(attn_node.get("self_attn"), rc.base_dir, "task.attention.self_attn"),
                _load_array(attn_node.get("cross_attn"), rc.base_dir, "task.attention.cross_attn"),
                _get(attn_node, "token", int),
            )
        cfg = EditConfig(
            schedule=rc.schedule,
            seed=rc.seed,
            source=source,
            tau=_get(rc.tree, "task.tau", float),
            src_cond=_get(rc.tree, "task.src", str),
            tgt_cond=_get(rc.tree, "task.tgt", str),
            lambda_schedule=rc.lambda_schedule,
            soft_mask=soft,
            attention=attention,
        )
        return {"background_mask": edit_background_mask(cfg), "source": source}
    return {}


def execute_run(tree: dict, base_dir: Path, out_dir: Path) -> Path:
    """Run one validated config into out_dir. Returns the final directory."""
    tree = absolutize_paths(tree, base_dir)
    rc = parse_run_config(tree, base_dir)
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise ConfigError("out", f"output directory already exists: {out_dir}")
    staging = out_dir.parent / f".{out_dir.name}.staging"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        _produce_artifacts(rc, staging)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    staging.rename(out_dir)
    return out_dir


def _produce_artifacts(rc: RunConfig, out_dir: Path) -> None:
    plan = rc.make_plan()
    models = rc.make_models()
    try:
        states = run_plan(plan, models)
    finally:
        for model in models.values():
            close = getattr(model, "close", None)
            if close:
                close()
    outputs = finalize(plan, states)

    # Execution machinery (where to write, how many workers) does not shape
    # the artifacts; dropping it keeps config.json byte-identical across
    # reruns into different dirs or worker counts.
    persisted = {k: v for k, v in rc.tree.items() if k not in ("out", "workers")}
    config_bytes = (json.dumps(persisted, sort_keys=True, separators=(",", ":")) + "\n").encode()
    (out_dir / "config.json").write_bytes(config_bytes)

    written: list[str] = ["config.json"]
    for entry in plan.entries:
        name = f"traj_{entry.trajectory_id}"
        terminal = states[entry.trajectory_id][0]
        _save_grid(out_dir, name, terminal, written)
    for name, grid in sorted(outputs.items()):
        if name.startswith("traj_"):
            continue
        _save_grid(out_dir, name, grid, written)

    terminals = {e.trajectory_id: states[e.trajectory_id][0] for e in plan.entries}
    rows = compute_metrics(rc.task_kind, plan, terminals, rc.gmm_bindings(), _task_extras(rc))
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(value)])
    written.append("metrics.csv")

    manifest_lines = [
        json.dumps(
            {
                "kind": "run",
                "task": rc.task_kind,
                "seed": rc.seed,
                "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
            },
            sort_keys=True,
        )
    ]
    for name in sorted(written):
        blob = (out_dir / name).read_bytes()
        manifest_lines.append(
            json.dumps(
                {
                    "kind": "file",
                    "path": name,
                    "bytes": len(blob),
                    "sha256": hashlib.sha256(blob).hexdigest(),
                },
                sort_keys=True,
            )
        )
    (out_dir / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")


def _save_grid(out_dir: Path, name: str, grid: LatentGrid, written: list[str]) -> None:
    write_tensor(out_dir / f"{name}.synb", grid.data)
    written.append(f"{name}.synb")
    if grid.channels in (1, 3):
        ext = "pgm" if grid.channels == 1 else "ppm"
        export_preview(grid, out_dir / f"{name}.{ext}")
        written.append(f"{name}.{ext}")


def run_from_file(
    config_path: str | Path,
    seed: int | None = None,
    out: str | None = None,
    sweep: tuple[str, list] | None = None,
) -> list[Path]:
    """CLI entry: load, apply overrides, execute the run or sweep grid."""
    config_path = Path(config_path)
    tree = load_tree(config_path)
    base_dir = config_path.parent
    if seed is not None:
        set_override(tree, "seed", seed)
    if out is not None:
        set_override(tree, "out", out)
    out_value = tree.get("out")
    if not isinstance(out_value, str) or not out_value:
        raise ConfigError("out", "set an output directory in the config or pass --out")
    out_root = Path(out_value)
    if not out_root.is_absolute():
        out_root = base_dir / out_root

    if sweep is None:
        return [execute_run(tree, base_dir, out_root)]

    key, values = sweep
    workers = tree.get("workers", 1)
    cells = []
    for value in values:
        cell_tree = copy.deepcopy(tree)
        set_override(cell_tree, key, value)
        cells.append((cell_tree, base_dir, out_root / f"{key}={value}"))
    # Validate every cell up front so a bad grid fails before any work runs.
    for cell_tree, cell_base, _ in cells:
        parse_run_config(absolutize_paths(cell_tree, cell_base), cell_base)
    if isinstance(workers, int) and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(execute_run, *cell) for cell in cells]
            return [f.result() for f in futures]
    return [execute_run(*cell) for cell in cells]


def recompute_metrics(run_dir: str | Path) -> list[tuple[str, float]]:
    """Rebuild the plan from a run's persisted config and re-derive metrics
    from the saved terminal tensors."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigError("dir", f"{run_dir} has no config.json")
    tree = json.loads(config_path.read_text())
    rc = parse_run_config(tree, run_dir)
    plan = rc.make_plan()
    terminals = {}
    for entry in plan.entries:
        tensor_path = run_dir / f"traj_{entry.trajectory_id}.synb"
        if not tensor_path.exists():
            raise ConfigError("dir", f"missing terminal tensor {tensor_path.name}")
        terminals[entry.trajectory_id] = LatentGrid(read_tensor(tensor_path), "patch")
    return compute_metrics(rc.task_kind, plan, terminals, rc.gmm_bindings(), _task_extras(rc))
