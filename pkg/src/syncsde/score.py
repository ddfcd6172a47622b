"""Noise-prediction models.

Two realizations of the eps-prediction interface: a closed-form isotropic
Gaussian-mixture oracle for desk-scale ground truth, and a client for the
remote score-provider protocol (see protocol.py for the wire format).

For data drawn from sum_k w_k N(mu_k, s_k^2 I), the noisy marginal at level
alpha_t is the mixture of N(sqrt(alpha_t) mu_k, (alpha_t s_k^2 + 1-alpha_t) I),
and eps relates to the score by eps = -sqrt(1-alpha_t) * grad log p_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ScoreModelError, ShapeError
from .grid import LatentGrid
from .schedule import NoiseSchedule

_WEIGHT_TOL = 1e-9


@runtime_checkable
class ScoreModel(Protocol):
    """eps-prediction interface, already bound to one condition."""

    def epsilon(self, y: LatentGrid, t: int) -> LatentGrid: ...


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: LatentGrid
    variance: float  # isotropic


@dataclass(frozen=True)
class GmmSpec:
    """Mixture defining one condition's data distribution."""

    components: tuple[GaussianComponent, ...]
    condition_id: str

    def __post_init__(self):
        if not self.components:
            raise ScoreModelError("mixture needs at least one component")
        shape = self.components[0].mean.shape
        for c in self.components:
            if c.weight <= 0.0:
                raise ScoreModelError("component weights must be positive")
            if c.variance <= 0.0:
                raise ScoreModelError("component variances must be positive")
            if c.mean.shape != shape:
                raise ShapeError("mixture component means have mismatched shapes")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ScoreModelError(f"component weights sum to {total}, expected 1")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.components[0].mean.shape


def _marginal_log_terms(spec: GmmSpec, a_t: float, y: np.ndarray) -> np.ndarray:
    """Per-component log(w_k N(y; sqrt(a) mu_k, v_k I)) as a vector."""
    dim = y.size
    out = np.empty(len(spec.components))
    for k, c in enumerate(spec.components):
        v = a_t * c.variance + (1.0 - a_t)
        resid = y - math.sqrt(a_t) * c.mean.data
        out[k] = (
            math.log(c.weight)
            - 0.5 * dim * math.log(2.0 * math.pi * v)
            - float(np.sum(resid * resid)) / (2.0 * v)
        )
    return out


def gmm_epsilon(spec: GmmSpec, sched: NoiseSchedule, y: LatentGrid, t: int) -> LatentGrid:
    """Exact eps prediction for the mixture's noisy marginal at step t."""
    if y.shape != spec.shape:
        raise ShapeError(f"latent shape {y.shape} does not match mixture shape {spec.shape}")
    if not 1 <= t <= sched.T:
        raise ScoreModelError(f"timestep {t} outside model range [1, {sched.T}]")
    a_t = sched.alpha(t)
    log_terms = _marginal_log_terms(spec, a_t, y.data)
    # Responsibilities via log-sum-exp.
    shifted = log_terms - log_terms.max()
    resp = np.exp(shifted)
    resp /= resp.sum()
    score = np.zeros_like(y.data)
    for k, c in enumerate(spec.components):
        v = a_t * c.variance + (1.0 - a_t)
        score += resp[k] * (math.sqrt(a_t) * c.mean.data - y.data) / v
    return y.with_data(-math.sqrt(1.0 - a_t) * score)


def gmm_log_marginal(spec: GmmSpec, sched: NoiseSchedule, y: LatentGrid, t: int) -> float:
    """log p_t(y) of the noisy marginal; the quantity gmm_epsilon differentiates."""
    if y.shape != spec.shape:
        raise ShapeError(f"latent shape {y.shape} does not match mixture shape {spec.shape}")
    a_t = sched.alpha(t)
    log_terms = _marginal_log_terms(spec, a_t, y.data)
    m = log_terms.max()
    return float(m + math.log(np.sum(np.exp(log_terms - m))))


def gmm_log_density(spec: GmmSpec, x: LatentGrid) -> float:
    """log density of the clean data mixture at x (the t=0 distribution)."""
    if x.shape != spec.shape:
        raise ShapeError(f"point shape {x.shape} does not match mixture shape {spec.shape}")
    dim = x.data.size
    log_terms = np.empty(len(spec.components))
    for k, c in enumerate(spec.components):
        resid = x.data - c.mean.data
        log_terms[k] = (
            math.log(c.weight)
            - 0.5 * dim * math.log(2.0 * math.pi * c.variance)
            - float(np.sum(resid * resid)) / (2.0 * c.variance)
        )
    m = log_terms.max()
    return float(m + math.log(np.sum(np.exp(log_terms - m))))


@dataclass(frozen=True)
class AnalyticGmmModel:
    """ScoreModel backed by the closed-form mixture oracle."""

    spec: GmmSpec
    sched: NoiseSchedule

    def epsilon(self, y: LatentGrid, t: int) -> LatentGrid:
        return gmm_epsilon(self.spec, self.sched, y, t)
