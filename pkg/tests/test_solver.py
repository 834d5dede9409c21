"""Steady solves, backward Euler stepping and the quadratic dual solve."""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from tempered_dg.adapt import AdaptConfig, adapt_stationary, stationary_solve
from tempered_dg.assembly import assemble_load, build_system
from tempered_dg.dg_space import DgFunction, DgSpace, energy_norm, l2_error, l2_project
from tempered_dg.errors import SolverFailure
from tempered_dg.estimate import error_norms
from tempered_dg.mesh import build_interval_mesh, build_structured_tri_mesh
from tempered_dg.problems import Problem, poly_2d, layer_1d, arc_2d, smooth_1d, steady_2d
from tempered_dg.solver import (
    EvolutionState,
    factorize,
    initial_state,
    solve_dual_quadratic,
    solve_stationary,
    step_backward_euler,
)
from tempered_dg.tempered_calc import TemperedParams

SQUARE = (0.0, 2.0, 0.0, 2.0)


def test_zero_source_gives_zero():
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 2)
    s = build_system(sp, TemperedParams(0.6, 0.8), stationary=True)
    u = solve_stationary(s, np.zeros(sp.ndof))
    assert np.all(u.coeffs == 0.0)


def test_singular_matrix_reports_diagnostic():
    import scipy.sparse as sps

    with pytest.raises(SolverFailure, match="diag|singular|factor"):
        factorize(sps.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])))


class _PowerProblem(Problem):
    """``u = 2 x^1.8 - x^2.8`` on ``[0, 2]``: zero traces, polynomial ``0D^0.8 u``."""

    def exact(self, *coords, t: float = 0.0):
        x = np.asarray(coords[0], dtype=float)
        return 2 * x**1.8 - x**2.8

    def _d(self, x, o):
        x = np.asarray(x, dtype=float)
        g = math.gamma
        return 2 * g(2.8) / g(2.8 - o) * x ** (1.8 - o) - g(3.8) / g(3.8 - o) * x ** (2.8 - o)

    def source(self, pts, t: float = 0.0):
        return self._d(np.atleast_2d(pts)[:, 0], 0.8)

    def exact_half_derivative(self, axis: str):
        return lambda x: self._d(x, 0.4)


def _right_derivative_p1(p, q, c0, c1, x, mu):
    # xD^mu of c0 + c1 r on [p, q] (zero elsewhere), from the closed-form integral
    def dT(s):
        return c1 * s ** (1 - mu) * mu / (1 - mu) - (c0 + c1 * x) * s ** (-mu)

    v = dT(q - x)
    if x < p:
        v -= dT(p - x)
    return -v / mp.gamma(1 - mu)


def test_galerkin_orthogonality_against_independent_quadrature():
    prob = _PowerProblem("power", 1, (0.0, 2.0), TemperedParams(0.8, 0.8), stationary=True, one_sided=True)
    mesh = build_interval_mesh(0.0, 2.0, 4)
    u_h, system = stationary_solve(prob, mesh, degree=1)
    sp = u_h.space
    mu = 0.4
    du = prob.exact_half_derivative("x")
    xs = sorted(float(v) for v in mesh.vertices[:, 0])
    mp.mp.dps = 20
    a_u = np.empty(sp.ndof)
    for i in range(sp.ndof):
        e, k = divmod(i, sp.Np)
        n0, n1 = sp.node_coords[e, :, 0]
        vals = np.eye(2)[k]
        c1 = (vals[1] - vals[0]) / (n1 - n0)
        c0 = vals[0] - c1 * n0
        lo, hi = min(n0, n1), max(n0, n1)

        def f(x):
            return float(du(np.array([float(x)]))[0]) * _right_derivative_p1(lo, hi, c0, c1, x, mu)

        a_u[i] = float(mp.quad(f, [z for z in xs if z <= hi]))
    # a(u - u_h, l_i) with u continuous and zero on the boundary (no jump terms)
    r = a_u - system.steady_matrix() @ u_h.coeffs
    assert np.max(np.abs(r)) <= 1e-8


def test_adapted_mesh_beats_uniform():
    prob = layer_1d()
    u8, _ = stationary_solve(prob, build_interval_mesh(0.0, 2.0, 8))
    e8 = error_norms(u8, prob)[0]
    recs = adapt_stationary(
        prob, build_interval_mesh(0.0, 2.0, 8), AdaptConfig(max_iterations=40, tol_space=1e-12, max_dofs=130), "energy"
    )
    best = min((r for r in recs if r.K <= 64), key=lambda r: abs(r.K - 60))
    assert best.K >= 40
    assert best.L2_error * 10.0 <= e8


def test_fixed_point_of_steady_problem():
    prob = steady_2d()
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 3, 3), 1)
    s = build_system(sp, prob.params)
    F = assemble_load(sp, prob.source_on(sp))
    u0 = DgFunction(sp, np.linalg.solve(s.steady_matrix().toarray(), F))
    st = EvolutionState(0.0, 0.05, u0)
    st1 = step_backward_euler(st, s, F)
    assert st1.t == pytest.approx(0.05) and st1.n == 1
    assert np.max(np.abs(st1.u.coeffs - u0.coeffs)) <= 1e-8 * np.max(np.abs(u0.coeffs))


def test_time_accumulates_and_initial_projection():
    prob = steady_2d()
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 1)
    s = build_system(sp, prob.params)
    st = initial_state(sp, lambda x, y: prob.exact(x, y), 0.1)
    proj = l2_project(sp, lambda x, y: prob.exact(x, y))
    assert np.allclose(st.u.coeffs, proj.coeffs)
    taus = [0.1, 0.05, 0.025]
    for tau in taus:
        st = step_backward_euler(st, s, np.zeros(sp.ndof), tau)
    assert st.t == pytest.approx(sum(taus)) and st.n == 3
    other = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 1)
    with pytest.raises(SolverFailure):
        step_backward_euler(EvolutionState(0.0, 0.1, other.zero()), s, np.zeros(sp.ndof))


def test_discrete_energy_inequality():
    prob = poly_2d()
    p = prob.params
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 1)
    s = build_system(sp, p)
    tau = 0.1
    st = initial_state(sp, lambda x, y: prob.exact(x, y, t=0.0), tau)
    for _ in range(3):
        t1 = st.t + tau
        fv = prob.source_on(sp, t1)
        new = step_backward_euler(st, s, assemble_load(sp, fv), tau)
        a, b = st.u.l2_norm(), new.u.l2_norm()
        fn2 = float(np.sum(sp.quad_weights * fv**2))
        lhs = (b * b - a * a) / (2 * tau) + p.gamma * energy_norm(new.u, p) ** 2
        rhs = 0.5 * fn2 + (s.kappa + 0.5) * b * b
        assert lhs <= rhs + 1e-10
        st = new


@pytest.mark.parametrize("tau", [1e-1, 1e-2])
def test_unconditional_stability(tau):
    prob = steady_2d(lam=2.0)
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 1)
    s = build_system(sp, prob.params)
    rng = np.random.default_rng(3)
    st = EvolutionState(0.0, tau, DgFunction(sp, rng.normal(size=sp.ndof)))
    n0 = st.u.l2_norm()
    C = 2 * s.kappa + 1
    zero = np.zeros(sp.ndof)
    for _ in range(100):
        st = step_backward_euler(st, s, zero)
        assert st.u.l2_norm() <= math.exp(C * st.t) * n0 * (1 + 1e-12)


def test_evolution_error_decreases_1d():
    prob = smooth_1d()
    T = 0.1
    errs = []
    for K in (4, 8, 16):
        sp = DgSpace(build_interval_mesh(0.0, 2.0, K), 1)
        s = build_system(sp, prob.params)
        h = 2.0 / K
        n = int(math.ceil(T / h**2))
        tau = T / n
        st = initial_state(sp, lambda x: prob.exact(x, t=0.0), tau)
        for _ in range(n):
            st = step_backward_euler(st, s, assemble_load(sp, prob.source_on(sp, st.t + tau)))
        errs.append(l2_error(st.u, lambda x: prob.exact(x, t=T)))
    assert all(np.isfinite(errs))
    assert errs[0] > errs[1] > errs[2]
    assert math.log2(errs[1] / errs[2]) >= 1.4


def test_dual_zero_goal_and_transpose():
    prob = arc_2d()
    mesh = build_structured_tri_mesh(SQUARE, 2, 2)
    z = solve_dual_quadratic(mesh, prob.params, np.zeros(DgSpace(mesh, 2).ndof))
    assert z.space.degree == 2 and np.all(z.coeffs == 0.0)
    sp2 = DgSpace(mesh, 2)
    A = build_system(sp2, prob.params, stationary=True).steady_matrix().toarray()
    # the two-sided operator is its own adjoint
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    g = np.random.default_rng(0).normal(size=sp2.ndof)
    z = solve_dual_quadratic(mesh, prob.params, g)
    assert np.linalg.norm(A.T @ z.coeffs - g) <= 1e-10 * np.linalg.norm(g)
    with pytest.raises(SolverFailure):
        solve_dual_quadratic(mesh, prob.params, np.zeros(3))


def test_dual_of_left_derivative_is_right_derivative():
    prob = layer_1d()
    mesh = build_interval_mesh(0.0, 2.0, 6)
    sp = DgSpace(mesh, 2)
    A = build_system(sp, prob.params, stationary=True, one_sided=True).steady_matrix().toarray()
    # reflection x -> 2 - x maps dofs to dofs and swaps left and right derivatives
    nodes = sp.node_coords[:, :, 0].ravel()
    owner = np.repeat(mesh.centroids[:, 0], sp.Np)
    key = {(round(o, 12), round(x, 12)): k for k, (o, x) in enumerate(zip(owner, nodes))}
    perm = np.array([key[(round(2 - o, 12), round(2 - x, 12))] for o, x in zip(owner, nodes)])
    R = A[np.ix_(perm, perm)]
    assert np.max(np.abs(R - A.T)) <= 1e-10 * np.max(np.abs(A))
    # adjoint pairing a(phi, z) = J(phi) on every basis function
    g = assemble_load(sp, lambda x: 1.0 + 0 * x)
    z = solve_dual_quadratic(mesh, prob.params, g, one_sided=True)
    assert np.max(np.abs(z.coeffs @ A - g)) <= 1e-8 * np.max(np.abs(g))
