"""Direct solves of the steady system, backward Euler stepping, dual solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .assembly import DEFAULT_QUAD, AssembledSystem, QuadratureSettings, build_system
from .dg_space import DgFunction, DgSpace
from .errors import SolverFailure
from .mesh import Mesh
from .tempered_calc import TemperedParams

__all__ = [
    "EvolutionState",
    "factorize",
    "solve_stationary",
    "step_backward_euler",
    "initial_state",
    "solve_dual_quadratic",
    "dual_system",
]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


def _condition_hint(mat: sps.spmatrix) -> str:
    try:
        d = np.abs(mat.diagonal())
        return f"diag range [{d.min():.3e}, {d.max():.3e}]"
    except Exception:  # pragma: no cover - diagnostics only
        return "no diagnostic"


def factorize(mat: sps.spmatrix):
    """Sparse LU; a singular matrix raises :class:`SolverFailure`."""
    mat = sps.csc_matrix(mat)
    try:
        lu = spla.splu(mat)
    except RuntimeError as exc:
        raise SolverFailure(f"sparse factorisation failed ({exc}); {_condition_hint(mat)}") from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and (diag.min() == 0.0 or diag.min() < 1e-15 * diag.max()):
        raise SolverFailure(
            f"matrix numerically singular: pivot ratio {diag.min() / max(diag.max(), 1e-300):.2e}; "
            + _condition_hint(mat)
        )
    return lu


def _solve(lu, mat: sps.spmatrix, rhs: np.ndarray, trans: bool = False) -> np.ndarray:
    x = lu.solve(rhs, trans="T" if trans else "N")
    op = mat.T if trans else mat
    res = np.linalg.norm(op @ x - rhs)
    scale = np.linalg.norm(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverFailure("solve produced non-finite values")
    if res > RESIDUAL_TOL * max(scale, 1e-300) and res > 1e-14:
        # one step of iterative refinement before giving up
        x = x + lu.solve(rhs - op @ x, trans="T" if trans else "N")
        res = np.linalg.norm(op @ x - rhs)
        if res > RESIDUAL_TOL * max(scale, 1e-300) and res > 1e-14:
            raise SolverFailure(f"residual {res:.3e} exceeds {RESIDUAL_TOL:g} x |F| = {scale:.3e}")
    return x


def solve_stationary(system: AssembledSystem, load: np.ndarray) -> DgFunction:
    """Solve ``(G_frac + J0 + S - kappa M) u = F``; for the steady model ``S = 0``, ``kappa = 0``."""
    mat = system.steady_matrix()
    lu = system.factors.get(None)
    if lu is None:
        lu = factorize(mat)
        system.factors[None] = lu
    u = _solve(lu, mat, np.asarray(load, dtype=float))
    return DgFunction(system.space, u)


@dataclass(frozen=True)
class EvolutionState:
    """Time level ``t``, last step ``tau``, solution and step counter."""

    t: float
    tau: float
    u: DgFunction
    n: int = 0

    @property
    def space(self) -> DgSpace:
        return self.u.space


def initial_state(space: DgSpace, u0, tau: float, t0: float = 0.0) -> EvolutionState:
    """``u_h^0`` is the L2 projection of ``u0``."""
    from .dg_space import l2_project

    return EvolutionState(t0, float(tau), l2_project(space, u0), 0)


def step_backward_euler(
    state: EvolutionState, system: AssembledSystem, fbar: np.ndarray, tau: float | None = None
) -> EvolutionState:
    """One implicit step: ``(M/tau + S + A - kappa M) u^{n+1} = M u^n / tau + F``.

    ``fbar`` is the load vector of either ``f(t^{n+1})`` or the time average of
    ``f`` over the step.  Factorisations are cached on ``system`` per ``tau``.
    """
    tau = float(state.tau if tau is None else tau)
    if state.u.space is not system.space:
        raise SolverFailure("state and system live on different spaces")
    lu = system.factors.get(tau)
    mat = system.step_matrix(tau)
    if lu is None:
        lu = factorize(mat)
        system.factors[tau] = lu
    rhs = system.M @ state.u.coeffs / tau + np.asarray(fbar, dtype=float)
    u = _solve(lu, mat, rhs)
    return EvolutionState(state.t + tau, tau, DgFunction(system.space, u), state.n + 1)


def dual_system(
    mesh: Mesh,
    params: TemperedParams,
    degree: int,
    one_sided: bool = False,
    quad: QuadratureSettings = DEFAULT_QUAD,
) -> AssembledSystem:
    """Steady system in the degree ``degree`` space (its transpose is the dual operator)."""
    return build_system(DgSpace(mesh, degree), params, stationary=True, quad=quad, one_sided=one_sided)


def solve_dual_quadratic(
    mesh: Mesh,
    params: TemperedParams,
    goal,
    degree: int = 2,
    one_sided: bool = False,
    quad: QuadratureSettings = DEFAULT_QUAD,
    system: AssembledSystem | None = None,
) -> DgFunction:
    """Solve ``a(phi, z) = J(phi)`` for all ``phi`` in the degree ``degree`` space.

    ``goal`` is either the vector ``J(l_j)`` or a callable mapping the space to
    it.  The left/right roles swap through the transposed primal matrix.
    """
    if system is None:
        system = dual_system(mesh, params, degree, one_sided, quad)
    space = system.space
    g = goal(space) if callable(goal) else np.asarray(goal, dtype=float)
    if g.shape != (space.ndof,):
        raise SolverFailure(f"goal vector has shape {g.shape}, expected {(space.ndof,)}")
    mat = system.steady_matrix()
    lu = system.factors.get(None)
    if lu is None:
        lu = factorize(mat)
        system.factors[None] = lu
    return DgFunction(space, _solve(lu, mat, g, trans=True))
