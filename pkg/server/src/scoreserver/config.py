"""Provider configuration: the noise schedule (for the digest) and the
condition registry, from one TOML file.

    [schedule]
    kind = "linear-beta"      # or "cosine", "explicit"
    T = 50
    beta_start = 1e-4         # linear-beta only
    beta_end = 0.02
    # alphas = [1.0, 0.5, 0.25]   # explicit only

    [conditions.<id>]
    components = [{ weight = 1.0, mean = 0.0, variance = 1.0 }]
    # mean: scalar or nested list
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .framing import schedule_digest
from .gmm import Mixture
from .session import Registry


class ConfigError(Exception):
    pass


def schedule_alphas(node: dict) -> np.ndarray:
    kind = node.get("kind", "linear-beta")
    T = node.get("T")
    if kind == "explicit":
        alphas = np.asarray(node.get("alphas", ()), dtype=np.float64)
        if alphas.size < 2:
            raise ConfigError("schedule.alphas must list at least two entries")
        return alphas
    if not isinstance(T, int) or T < 1:
        raise ConfigError("schedule.T must be a positive integer")
    if kind == "linear-beta":
        betas = np.linspace(node.get("beta_start", 1e-4), node.get("beta_end", 0.02), T)
        alphas = np.empty(T + 1)
        alphas[0] = 1.0
        alphas[1:] = np.cumprod(1.0 - betas)
        return alphas
    if kind == "cosine":
        s = 0.008
        grid = (np.arange(T + 1) / T + s) / (1 + s) * (math.pi / 2)
        f = np.cos(grid) ** 2
        bar = f / f[0]
        betas = np.clip(1.0 - bar[1:] / bar[:-1], 0.0, 0.999)
        alphas = np.empty(T + 1)
        alphas[0] = 1.0
        alphas[1:] = np.cumprod(1.0 - betas)
        return alphas
    raise ConfigError(f"unknown schedule kind {kind!r}")


def load_provider_config(path: str | Path) -> tuple[Registry, str]:
    """Returns the condition registry and the schedule digest to enforce."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    with open(path, "rb") as fh:
        tree = tomllib.load(fh)
    if "schedule" not in tree:
        raise ConfigError("missing [schedule] table")
    digest = schedule_digest(schedule_alphas(tree["schedule"]))
    mixtures = {}
    for cond, node in tree.get("conditions", {}).items():
        comps = node.get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError(f"conditions.{cond}: components list required")
        weights, means, variances = [], [], []
        for comp in comps:
            weights.append(comp.get("weight", 1.0 / len(comps)))
            means.append(np.asarray(comp.get("mean", 0.0), dtype=np.float64))
            variances.append(comp.get("variance", 1.0))
        try:
            mixtures[cond] = Mixture(weights, means, variances)
        except ValueError as exc:
            raise ConfigError(f"conditions.{cond}: {exc}") from exc
    if not mixtures:
        raise ConfigError("no conditions configured")
    return Registry(mixtures), digest
