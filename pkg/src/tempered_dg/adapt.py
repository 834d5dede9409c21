"""Adaptive loops: solve, estimate, mark, refine (and coarsen, and adapt the step)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import DEFAULT_QUAD, AssembledSystem, QuadratureSettings, assemble_load, build_system
from .dg_space import DgFunction, DgSpace, l2_error, l2_project
from .errors import AdaptivityAbort, ConfigError, UndefinedIndexError
from .estimate import (
    IndicatorField,
    dwr_goal,
    dwr_indicator,
    effectiveness_index,
    energy_indicator,
    error_norms,
    mark_strategy_c,
    residual_field,
    time_indicators,
    transfer,
)
from .mesh import Mesh, coarsen, refine
from .solver import EvolutionState, solve_dual_quadratic, solve_stationary, step_backward_euler

__all__ = [
    "AdaptConfig",
    "StationaryRecord",
    "EvolutionRecord",
    "SystemCache",
    "adapt_stationary",
    "adapt_evolution_step",
    "adapt_evolution",
    "stationary_solve",
]

log = logging.getLogger(__name__)

TAU_MIN = 1e-8

# ungraded chord quadrature: time-dependent errors are insensitive to it and the
# system is reassembled after every mesh change
EVOLUTION_QUAD = QuadratureSettings(levels=0)


@dataclass(frozen=True)
class AdaptConfig:
    theta1: float = 0.5
    theta2: float = 0.5
    tol_space: float = 1e-3
    tol_time: float = 1e-3
    max_iterations: int = 8
    coarsen_fraction: float = 0.1
    timestep_growth: float = 1.5
    tau0: float = 0.05
    tau_max: float = 0.1
    max_space_iterations: int = 3
    max_dofs: int = 60_000
    output_times: tuple = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if not (0.0 < self.theta1 < 1.0 and 0.0 < self.theta2 < 1.0):
            raise ConfigError("theta1 and theta2 must lie in (0, 1)")
        if not (self.tol_space > 0.0 and self.tol_time > 0.0):
            raise ConfigError("tolerances must be positive")
        if self.max_iterations < 1 or self.max_space_iterations < 0:
            raise ConfigError("iteration counts must be positive")
        if not 0.0 <= self.coarsen_fraction < 1.0:
            raise ConfigError("coarsen_fraction must lie in [0, 1)")
        if self.timestep_growth < 1.0:
            raise ConfigError("timestep_growth must be at least 1")
        if not (self.tau0 > 0.0 and self.tau_max >= self.tau0):
            raise ConfigError("need 0 < tau0 <= tau_max")


# ---------------------------------------------------------------------------
# stationary


@dataclass
class StationaryRecord:
    iteration: int
    mesh: Mesh
    u: DgFunction
    indicators: IndicatorField
    L2_error: float = math.nan
    energy_error: float = math.nan

    @property
    def K(self) -> int:
        return self.mesh.K

    @property
    def dof(self) -> int:
        return self.u.space.ndof

    @property
    def eta(self) -> float:
        return self.indicators.total

    @property
    def I_eff(self) -> float:
        try:
            return effectiveness_index(self.indicators, self.energy_error)
        except UndefinedIndexError:
            return math.nan

    def row(self) -> dict:
        return {
            "iteration": self.iteration,
            "K": self.K,
            "dof": self.dof,
            "L2_error": self.L2_error,
            "energy_error": self.energy_error,
            "eta": self.eta,
            "I_eff": self.I_eff,
        }


def stationary_solve(problem, mesh: Mesh, degree: int = 1, quad: QuadratureSettings = DEFAULT_QUAD):
    """Assemble and solve the steady problem on ``mesh``; returns ``(u, system)``."""
    sp = DgSpace(mesh, degree)
    system = build_system(sp, problem.params, stationary=True, quad=quad, one_sided=problem.one_sided)
    F = problem.load_on(sp)
    return solve_stationary(system, F), system


def _indicators(problem, u: DgFunction, scheme: str, quad: QuadratureSettings) -> IndicatorField:
    sp = u.space
    p = problem.params
    if scheme == "energy":
        return energy_indicator(u, problem.source_on(sp), p, True, problem.one_sided)
    if scheme != "dwr":
        raise ConfigError(f"unknown scheme {scheme!r}")
    sp2 = DgSpace(sp.mesh, sp.degree + 1)
    R2 = residual_field(u, problem.source_on(sp2), p, True, problem.one_sided, ref_pts=sp2.quad[0])
    z2 = solve_dual_quadratic(sp.mesh, p, dwr_goal(sp2, R2), sp.degree + 1, problem.one_sided, quad)
    return dwr_indicator(u, z2, R2)


def adapt_stationary(
    problem,
    mesh: Mesh,
    config: AdaptConfig = AdaptConfig(),
    scheme: str = "energy",
    degree: int = 1,
    quad: QuadratureSettings = DEFAULT_QUAD,
    error_h: float | None = None,
    with_errors: bool = True,
    callback: Callable[[StationaryRecord], None] | None = None,
) -> list[StationaryRecord]:
    """Solve, estimate, mark (strategy C), refine until the tolerance or the iteration cap.

    ``error_h`` bounds the element size of the mesh on which errors are measured.
    """
    if scheme not in ("energy", "dwr"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    out: list[StationaryRecord] = []
    rises = 0
    for it in range(1, config.max_iterations + 1):
        u, _ = stationary_solve(problem, mesh, degree, quad)
        ind = _indicators(problem, u, scheme, quad)
        rec = StationaryRecord(it, mesh, u, ind)
        if with_errors:
            rec.L2_error, rec.energy_error = error_norms(u, problem, error_h)
        out.append(rec)
        log.info("iteration %d: K=%d eta=%.4e L2=%.4e", it, mesh.K, rec.eta, rec.L2_error)
        if callback is not None:
            callback(rec)
        if len(out) > 1 and rec.eta >= out[-2].eta:
            rises += 1
            if rises >= 3:
                log.warning("total indicator has not decreased for 3 consecutive iterations")
        else:
            rises = 0
        done = ind.total <= config.tol_space or u.space.ndof >= config.max_dofs
        if done or it == config.max_iterations:
            break
        marked = mark_strategy_c(ind, config.theta1, config.theta2)
        mesh = refine(mesh, marked)
    return out


# ---------------------------------------------------------------------------
# evolution


class SystemCache:
    """Assembled systems for recently used meshes (the fractional part dominates the cost)."""

    def __init__(self, params, degree: int = 1, quad: QuadratureSettings = EVOLUTION_QUAD, size: int = 4):
        self.params = params
        self.degree = degree
        self.quad = quad
        self.size = size
        self._items: list[tuple[Mesh, AssembledSystem]] = []

    def get(self, mesh: Mesh) -> AssembledSystem:
        for m, s in self._items:
            if m is mesh:
                return s
        s = build_system(DgSpace(mesh, self.degree), self.params, quad=self.quad)
        self._items.append((mesh, s))
        if len(self._items) > self.size:
            self._items.pop(0)
        return s


@dataclass
class EvolutionRecord:
    step: int
    t: float
    tau: float
    K: int
    eta_time1: float
    eta_time2: float
    eta_space: float
    halvings: int = 0
    mesh_changes: int = 0

    def row(self) -> dict:
        return {
            "step": self.step,
            "t": self.t,
            "tau": self.tau,
            "K": self.K,
            "eta_time1": self.eta_time1,
            "eta_time2": self.eta_time2,
            "eta_space": self.eta_space,
        }


def _advance(problem, state: EvolutionState, system: AssembledSystem, tau: float):
    sp = system.space
    u_prev = transfer(state.u, sp)
    fbar_vals = problem.source_average_on(sp, state.t, state.t + tau)
    start = EvolutionState(state.t, tau, u_prev, state.n)
    new = step_backward_euler(start, system, assemble_load(sp, fbar_vals), tau)
    return new, u_prev, fbar_vals


def _space_indicator(problem, new: EvolutionState, u_prev, fbar_vals, tau) -> IndicatorField:
    return energy_indicator(
        new.u, fbar_vals, problem.params, stationary=False, u_prev=u_prev, tau=tau, jump_weight=0.5
    )


def adapt_evolution_step(
    state: EvolutionState,
    problem,
    config: AdaptConfig,
    cache: SystemCache,
    tau0: float,
    t_stop: float | None = None,
) -> tuple[EvolutionState, EvolutionRecord, float]:
    """One adaptive step; returns the new state, diagnostics and the next initial step."""
    mesh = state.space.mesh
    requested = float(tau0)
    tau = requested
    if t_stop is not None:
        tau = min(tau, t_stop - state.t)
    # a step shortened only to land on an output time does not shrink the next one
    cut = tau < requested
    halvings = 0
    # 1. time step
    while True:
        system = cache.get(mesh)
        new, u_prev, fbar = _advance(problem, state, system, tau)
        e1, e2 = time_indicators(new.u, u_prev, problem.source_on, state.t, state.t + tau)
        if e1 + e2 <= config.tol_time:
            break
        tau *= 0.5
        halvings += 1
        if tau < TAU_MIN:
            raise AdaptivityAbort(f"time step fell below {TAU_MIN:g} at t = {state.t:.6g}")
    ind = _space_indicator(problem, new, u_prev, fbar, tau)
    changes = 0

    def resolve(m):
        nonlocal new, u_prev, fbar, ind, changes
        if m.K * state.space.Np > config.max_dofs:
            raise AdaptivityAbort(f"mesh with {m.K} elements exceeds the dof cap {config.max_dofs}")
        new, u_prev, fbar = _advance(problem, state, cache.get(m), tau)
        ind = _space_indicator(problem, new, u_prev, fbar, tau)
        changes += 1
        return m

    # 2. coarsen where the indicator is negligible, then refine until tolerance
    if config.coarsen_fraction > 0.0:
        cand = np.nonzero(ind.eta < config.coarsen_fraction * ind.eta.mean())[0]
        if len(cand):
            m2 = coarsen(mesh, cand)
            if m2.K < mesh.K:
                mesh = resolve(m2)
    for _ in range(config.max_space_iterations):
        if ind.eta_space <= config.tol_space:
            break
        marked = mark_strategy_c(ind, config.theta1, config.theta2)
        mesh = resolve(refine(mesh, marked))
    if changes:
        e1, e2 = time_indicators(new.u, u_prev, problem.source_on, state.t, state.t + tau)
    # 3. enlarge the next initial step when the time error is small
    if cut and halvings == 0:
        nxt = requested
    else:
        nxt = tau * config.timestep_growth if e1 + e2 <= 0.25 * config.tol_time else tau
    nxt = min(nxt, config.tau_max)
    rec = EvolutionRecord(new.n, new.t, tau, mesh.K, e1, e2, ind.eta_space, halvings, changes)
    return new, rec, nxt


def adapt_evolution(
    problem,
    mesh: Mesh,
    config: AdaptConfig = AdaptConfig(),
    degree: int = 1,
    quad: QuadratureSettings = EVOLUTION_QUAD,
    T: float | None = None,
    callback: Callable[[EvolutionRecord, EvolutionState], None] | None = None,
) -> tuple[list[EvolutionRecord], dict]:
    """March to ``T`` with adaptive meshes and steps.

    Returns the per-step records and ``{t_out: (mesh, u)}`` snapshots at the
    configured output times (which the steps hit exactly).
    """
    T = problem.T if T is None else float(T)
    cache = SystemCache(problem.params, degree, quad)
    sp = DgSpace(mesh, degree)
    state = EvolutionState(0.0, config.tau0, l2_project(sp, lambda *c: problem.exact(*c, t=0.0)), 0)
    outs = sorted(t for t in config.output_times if 0.0 < t <= T + 1e-12)
    if not outs or abs(outs[-1] - T) > 1e-12:
        outs.append(T)
    records: list[EvolutionRecord] = []
    snaps: dict = {}
    tau = config.tau0
    k = 0
    while state.t < T - 1e-12:
        target = outs[k]
        state, rec, tau = adapt_evolution_step(state, problem, config, cache, tau, t_stop=target)
        records.append(rec)
        log.info(
            "step %d t=%.4f tau=%.3e K=%d eta_t=%.2e/%.2e eta_s=%.2e",
            rec.step, rec.t, rec.tau, rec.K, rec.eta_time1, rec.eta_time2, rec.eta_space,
        )
        if callback is not None:
            callback(rec, state)
        if abs(state.t - target) <= 1e-12:
            state = EvolutionState(target, state.tau, state.u, state.n)
            snaps[target] = (state.space.mesh, state.u)
            k += 1
    return records, snaps


def final_error(problem, state_u: DgFunction, t: float) -> float:
    return l2_error(state_u, lambda *c: problem.exact(*c, t=t))
