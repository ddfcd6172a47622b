"""Diffusion timestep discretization and the deterministic base sampler.

Conventions: t runs from T (pure noise) down to 0 (clean sample). The
signal level alpha_t decreases strictly in t, with alpha_0 = 1 for derived
schedules, so the marginal of x_t given x_0 is N(sqrt(alpha_t) x_0,
(1 - alpha_t) I). The reverse update is the noiseless DDIM step

    x_{t-1} = sqrt(alpha_{t-1}/alpha_t) x_t - sqrt(1 - alpha_t) gamma_t eps

with gamma_t = sqrt(alpha_{t-1}/alpha_t) - sqrt((1-alpha_{t-1})/(1-alpha_t)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, ScheduleError, SingularityError
from .grid import LatentGrid, check_same_shape

if TYPE_CHECKING:
    from .score import ScoreModel

SCHEDULE_KINDS = ("linear-beta", "cosine", "explicit")

# Per-step beta cap for the cosine schedule; keeps alpha_T strictly positive.
_COSINE_BETA_MAX = 0.999
_COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class ScheduleConfig:
    """Parameters of a noise schedule, mirroring the `schedule` config table."""

    kind: str = "linear-beta"
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    alphas: tuple[float, ...] | None = None  # explicit kind only


@dataclass(frozen=True)
class NoiseSchedule:
    """Validated alpha_t sequence for t = 0..T."""

    T: int
    alphas: np.ndarray
    derivation: str

    def __post_init__(self):
        arr = np.ascontiguousarray(self.alphas, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "alphas", arr)

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alphas[t])


def build_schedule(cfg: ScheduleConfig) -> NoiseSchedule:
    """Construct and validate a NoiseSchedule from its config."""
    if cfg.T < 1:
        raise ConfigError("schedule.T", f"must be >= 1, got {cfg.T}")
    if cfg.kind == "linear-beta":
        alphas = _linear_beta_alphas(cfg.T, cfg.beta_start, cfg.beta_end)
    elif cfg.kind == "cosine":
        alphas = _cosine_alphas(cfg.T)
    elif cfg.kind == "explicit":
        if cfg.alphas is None:
            raise ConfigError("schedule.alphas", "required for kind 'explicit'")
        alphas = np.asarray(cfg.alphas, dtype=np.float64)
        if alphas.shape != (cfg.T + 1,):
            raise ConfigError(
                "schedule.alphas",
                f"expected {cfg.T + 1} entries for T={cfg.T}, got {alphas.size}",
            )
    else:
        raise ConfigError("schedule.kind", f"unknown kind {cfg.kind!r}")

    _validate_alphas(alphas)
    return NoiseSchedule(T=cfg.T, alphas=alphas, derivation=cfg.kind)


def _linear_beta_alphas(T: int, beta_start: float, beta_end: float) -> np.ndarray:
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(
            "schedule.beta_start", f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, T)
    alphas = np.empty(T + 1)
    alphas[0] = 1.0
    alphas[1:] = np.cumprod(1.0 - betas)
    return alphas


def _cosine_alphas(T: int) -> np.ndarray:
    s = _COSINE_OFFSET
    grid = (np.arange(T + 1) / T + s) / (1 + s) * (math.pi / 2)
    f = np.cos(grid) ** 2
    bar = f / f[0]
    # Re-derive through capped per-step betas so alpha_T stays in (0, 1].
    betas = np.clip(1.0 - bar[1:] / bar[:-1], 0.0, _COSINE_BETA_MAX)
    alphas = np.empty(T + 1)
    alphas[0] = 1.0
    alphas[1:] = np.cumprod(1.0 - betas)
    return alphas


def _validate_alphas(alphas: np.ndarray) -> None:
    if not np.all(np.isfinite(alphas)):
        raise ScheduleError("alpha sequence contains non-finite entries")
    if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise ScheduleError("alpha entries must lie in (0, 1]")
    if np.any(np.diff(alphas) >= 0.0):
        raise ScheduleError("alpha sequence must be strictly decreasing in t")


def gamma(sched: NoiseSchedule, t: int) -> float:
    """DDIM drift coefficient gamma_t; defined for 1 <= t <= T."""
    _check_step(sched, t)
    a_prev, a_t = sched.alpha(t - 1), sched.alpha(t)
    if a_t >= 1.0:
        raise SingularityError(f"gamma undefined at t={t}: alpha_t = 1")
    return math.sqrt(a_prev / a_t) - math.sqrt((1.0 - a_prev) / (1.0 - a_t))


def tweedie_estimate(sched: NoiseSchedule, y: LatentGrid, t: int, eps: LatentGrid) -> LatentGrid:
    """Closed-form estimate of the clean sample from y_t and its eps prediction."""
    _check_step(sched, t)
    check_same_shape(y, eps, "latent and eps")
    a_t = sched.alpha(t)
    return y.with_data((y.data - math.sqrt(1.0 - a_t) * eps.data) / math.sqrt(a_t))


def ddim_step(sched: NoiseSchedule, y: LatentGrid, t: int, eps: LatentGrid) -> LatentGrid:
    """One deterministic reverse step y_t -> y_{t-1}."""
    _check_step(sched, t)
    check_same_shape(y, eps, "latent and eps")
    a_prev, a_t = sched.alpha(t - 1), sched.alpha(t)
    g = gamma(sched, t)
    return y.with_data(math.sqrt(a_prev / a_t) * y.data - math.sqrt(1.0 - a_t) * g * eps.data)


def ddim_sample(sched: NoiseSchedule, model: "ScoreModel", y_T: LatentGrid) -> list[LatentGrid]:
    """Full uncoupled reverse rollout. Returns [y_0, ..., y_T] indexed by t."""
    states: list[LatentGrid] = [y_T] * (sched.T + 1)
    y = y_T
    for t in range(sched.T, 0, -1):
        y = ddim_step(sched, y, t, model.epsilon(y, t))
        states[t - 1] = y
    return states


def ddim_invert(sched: NoiseSchedule, x0: LatentGrid, model: "ScoreModel") -> list[LatentGrid]:
    """Map a clean sample back to noise by algebraically reversing ddim_step.

    Each step t-1 -> t applies the exact inverse of the reverse update, with
    eps predicted at the current state (no fixed-point refinement), so
    sampling back down recovers x0 up to the eps-evaluation mismatch, which
    vanishes as T grows. Returns [x_0, ..., x_T].
    """
    states = [x0]
    x = x0
    for t in range(1, sched.T + 1):
        a_prev, a_t = sched.alpha(t - 1), sched.alpha(t)
        g = gamma(sched, t)
        eps = model.epsilon(x, t)
        x = x.with_data(math.sqrt(a_t / a_prev) * (x.data + math.sqrt(1.0 - a_t) * g * eps.data))
        states.append(x)
    return states


def _check_step(sched: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"timestep {t} outside sampling range [1, {sched.T}]")
