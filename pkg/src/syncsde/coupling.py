"""Trajectory synchronization: Gaussian coupling terms and the orchestrator.

A coupled reverse step augments the base DDIM update with the gradient of a
Gaussian conditional density centered on a target assembled from previously
generated trajectories:

    y_{t-1} = ddim_step(y_t) + (1-alpha_t) gamma_t grad log p(target | y_t)

where p places diagonal precision mask/(lambda (1-alpha_t)) on the residual,
so the added term simplifies to gamma_t inv_lambda(t) sum_k w_k M_k (target - y).
Trajectories are generated strictly in plan order; each coupling builder sees
only same-timestep states of trajectories declared before it.

Reproducibility: trajectory number i draws its initial noise from a Philox
counter-based stream seeded by SeedSequence(entropy=plan.seed, spawn_key=(i,)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

from .errors import PlanError, ShapeError
from .grid import LatentGrid, check_same_shape
from .masks import PrecisionMask
from .schedule import NoiseSchedule, ddim_invert, ddim_sample, ddim_step, gamma
from .score import ScoreModel
from .views import ViewMap, compose_phi, invert

LAMBDA_PROFILES = ("constant", "linear-decreasing")


@dataclass(frozen=True)
class LambdaSchedule:
    """Coupling strength over time, parameterized by its 1/lambda ceiling."""

    inv_lambda_max: float
    profile: str = "linear-decreasing"

    def __post_init__(self):
        if self.inv_lambda_max < 0.0:
            raise PlanError(f"inv_lambda_max must be >= 0, got {self.inv_lambda_max}")
        if self.profile not in LAMBDA_PROFILES:
            raise PlanError(f"unknown lambda profile {self.profile!r}")


def inv_lambda(ls: LambdaSchedule, t: int, T: int) -> float:
    """1/lambda at step t; the linear profile decays to 0 as t reaches 0."""
    if not 0 <= t <= T:
        raise PlanError(f"timestep {t} outside [0, {T}]")
    if ls.profile == "constant":
        return ls.inv_lambda_max
    return ls.inv_lambda_max * t / T


@dataclass(frozen=True)
class CouplingSpec:
    """One Gaussian conditional term: target plus diagonal precision masks.

    Multiple precision terms correspond to a product of Gaussians sharing the
    target; their gradients sum.
    """

    target: LatentGrid
    precision_terms: tuple[tuple[PrecisionMask, float], ...]

    def __post_init__(self):
        spatial = int(np.prod(self.target.spatial_shape))
        for mask, weight in self.precision_terms:
            if len(mask) != spatial:
                raise ShapeError(
                    f"precision length {len(mask)} does not match target spatial size {spatial}"
                )
            if weight <= 0.0:
                raise PlanError(f"precision weight must be positive, got {weight}")


def coupling_gradient(
    spec: CouplingSpec, y: LatentGrid, t: int, sched: NoiseSchedule, ls: LambdaSchedule
) -> LatentGrid:
    """Gradient of the coupling log-density with respect to y."""
    check_same_shape(spec.target, y, "coupling target and latent")
    a_t = sched.alpha(t)
    residual = spec.target.data - y.data
    accum = np.zeros_like(y.data)
    for mask, weight in spec.precision_terms:
        accum += (weight / (1.0 - a_t)) * mask.data.reshape(y.spatial_shape) * residual
    # inv_lambda multiplies once at the end so the gradient is exactly linear in it.
    return y.with_data(inv_lambda(ls, t, sched.T) * accum)


def sync_step(
    sched: NoiseSchedule,
    y: LatentGrid,
    t: int,
    eps: LatentGrid,
    spec: CouplingSpec | None,
    ls: LambdaSchedule,
) -> LatentGrid:
    """Coupled reverse step; identical to ddim_step wherever coupling is inert."""
    base = ddim_step(sched, y, t, eps)
    if spec is None:
        return base
    lam = inv_lambda(ls, t, sched.T)
    if lam == 0.0:
        return base
    check_same_shape(spec.target, y, "coupling target and latent")
    residual = spec.target.data - y.data
    increment = np.zeros_like(y.data)
    g = gamma(sched, t)
    for mask, weight in spec.precision_terms:
        increment += (g * lam * weight) * mask.data.reshape(y.spatial_shape) * residual
    # Bitwise no-op where the increment vanishes (zero precision or residual).
    return base.with_data(np.where(increment == 0.0, base.data, base.data + increment))


class TimestepStates(Mapping[str, LatentGrid]):
    """Same-timestep predecessor states exposed to a coupling builder.

    Holds nothing but timestep-t states of declared dependencies, so a
    builder cannot read across timesteps or ahead of the generation order.
    """

    def __init__(self, t: int, states: dict[str, LatentGrid]):
        self.t = t
        self._states = states

    def __getitem__(self, trajectory_id: str) -> LatentGrid:
        try:
            return self._states[trajectory_id]
        except KeyError:
            raise PlanError(
                f"coupling builder read undeclared trajectory {trajectory_id!r} at t={self.t}"
            ) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._states)

    def __len__(self) -> int:
        return len(self._states)


CouplingBuilderFn = Callable[[int, TimestepStates], CouplingSpec | None]


@dataclass(frozen=True)
class CouplingRule:
    """Declared dependencies plus the per-step spec builder."""

    depends_on: tuple[str, ...]
    build: CouplingBuilderFn


@dataclass(frozen=True)
class PlanEntry:
    """One trajectory: condition, view, and how it is initialized and coupled.

    init: None draws seeded Gaussian noise; a LatentGrid pins y_T directly; a
    string pins y_T to the named earlier trajectory's terminal noise state.
    invert_from: when set, the whole trajectory comes from DDIM inversion of
    the given clean sample instead of reverse sampling.
    """

    trajectory_id: str
    cond: str
    view: ViewMap
    coupling: CouplingRule | None = None
    lambda_schedule: LambdaSchedule | None = None
    init: LatentGrid | str | None = None
    invert_from: LatentGrid | None = None


@dataclass(frozen=True)
class FinalSpec:
    """How the runner assembles final outputs from terminal states."""

    kind: str  # "trajectory" | "compose" | "interpretations"
    trajectory_id: str | None = None


@dataclass(frozen=True)
class TrajectoryPlan:
    entries: tuple[PlanEntry, ...]
    schedule: NoiseSchedule
    seed: int
    final: FinalSpec | None = None
    sync_cutoff_fraction: float = 0.0

    def __post_init__(self):
        if not self.entries:
            raise PlanError("plan has no trajectories")
        if not 0.0 <= self.sync_cutoff_fraction < 1.0:
            raise PlanError(
                f"sync_cutoff_fraction must lie in [0, 1), got {self.sync_cutoff_fraction}"
            )
        seen: set[str] = set()
        canvas_shape = self.entries[0].view.canvas_shape
        for entry in self.entries:
            if entry.trajectory_id in seen:
                raise PlanError(f"duplicate trajectory id {entry.trajectory_id!r}")
            if entry.view.canvas_shape != canvas_shape:
                raise PlanError("plan entries must share one canvas shape")
            if entry.coupling is not None:
                if entry.invert_from is not None:
                    raise PlanError("inversion trajectories cannot carry a coupling")
                if entry.lambda_schedule is None:
                    raise PlanError(
                        f"trajectory {entry.trajectory_id!r} has a coupling but no lambda schedule"
                    )
                for dep in entry.coupling.depends_on:
                    if dep not in seen:
                        raise PlanError(
                            f"trajectory {entry.trajectory_id!r} references {dep!r}, "
                            "which is not an earlier trajectory"
                        )
            if isinstance(entry.init, str) and entry.init not in seen:
                raise PlanError(
                    f"trajectory {entry.trajectory_id!r} pins its init to {entry.init!r}, "
                    "which is not an earlier trajectory"
                )
            seen.add(entry.trajectory_id)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory number `index` of a run."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(index,))))


def run_plan(plan: TrajectoryPlan, models: Mapping[str, ScoreModel]) -> dict[str, list[LatentGrid]]:
    """Generate all trajectories in order. Returns id -> [y_0..y_T]."""
    for entry in plan.entries:
        if entry.cond not in models:
            raise PlanError(f"no score model bound for condition {entry.cond!r}")
    sched = plan.schedule
    cutoff = plan.sync_cutoff_fraction * sched.T
    states: dict[str, list[LatentGrid]] = {}
    for index, entry in enumerate(plan.entries):
        model = models[entry.cond]
        if entry.invert_from is not None:
            states[entry.trajectory_id] = ddim_invert(sched, entry.invert_from, model)
            continue
        y = _initial_state(plan, entry, index, states)
        if entry.coupling is None:
            states[entry.trajectory_id] = ddim_sample(sched, model, y)
            continue
        trajectory: list[LatentGrid] = [y] * (sched.T + 1)
        for t in range(sched.T, 0, -1):
            eps = model.epsilon(y, t)
            spec = None
            if t > cutoff:
                view = TimestepStates(
                    t, {dep: states[dep][t] for dep in entry.coupling.depends_on}
                )
                spec = entry.coupling.build(t, view)
            y = sync_step(sched, y, t, eps, spec, entry.lambda_schedule)
            trajectory[t - 1] = y
        states[entry.trajectory_id] = trajectory
    return states


def _initial_state(
    plan: TrajectoryPlan, entry: PlanEntry, index: int, states: dict[str, list[LatentGrid]]
) -> LatentGrid:
    shape = entry.view.patch_shape
    if entry.init is None:
        rng = trajectory_rng(plan.seed, index)
        return LatentGrid(rng.standard_normal(shape), "patch")
    if isinstance(entry.init, str):
        pinned = states[entry.init][plan.schedule.T]
        if pinned.shape != shape:
            raise ShapeError(
                f"pinned init from {entry.init!r} has shape {pinned.shape}, expected {shape}"
            )
        return pinned
    if entry.init.shape != shape:
        raise ShapeError(f"fixed init has shape {entry.init.shape}, expected {shape}")
    return entry.init


def finalize(plan: TrajectoryPlan, states: Mapping[str, list[LatentGrid]]) -> dict[str, LatentGrid]:
    """Assemble the plan's final outputs from terminal (t=0) states."""
    terminals = {entry.trajectory_id: states[entry.trajectory_id][0] for entry in plan.entries}
    final = plan.final
    if final is None:
        return dict(terminals)
    if final.kind == "trajectory":
        return {"output": terminals[final.trajectory_id]}
    if final.kind == "compose":
        views = [entry.view for entry in plan.entries]
        patches = [terminals[entry.trajectory_id] for entry in plan.entries]
        return {"canvas": compose_phi(views, patches)}
    if final.kind == "interpretations":
        out = {}
        for entry in plan.entries:
            canvas, _ = invert(entry.view, terminals[entry.trajectory_id])
            out[f"interpretation_{entry.trajectory_id}"] = canvas
        return out
    raise PlanError(f"unknown final spec kind {final.kind!r}")
