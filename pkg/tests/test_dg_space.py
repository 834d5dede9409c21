"""Nodal DG spaces: projection, interpolation, traces, norms and the inverse inequality."""

from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempered_dg.dg_space import (
    DgFunction,
    DgSpace,
    energy_norm,
    interpolate,
    jump_norm_sq,
    l2_error,
    l2_project,
    read_solution,
    sobolev_norm,
    trace_jump_average,
    write_solution,
)
from tempered_dg.errors import InvalidInputError
from tempered_dg.mesh import build_interval_mesh, build_structured_tri_mesh, refine
from tempered_dg.tempered_calc import TemperedParams

SQUARE = (0.0, 2.0, 0.0, 2.0)


def tri_space(n=2, degree=2):
    return DgSpace(refine(build_structured_tri_mesh(SQUARE, n, n), [0]), degree)


def test_degree_range():
    m = build_interval_mesh(0, 1, 2)
    with pytest.raises(InvalidInputError):
        DgSpace(m, 0)
    with pytest.raises(InvalidInputError):
        DgSpace(m, 5)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_dof_count_and_projection_idempotent(dim, N):
    sp = DgSpace(build_interval_mesh(0, 2, 3), N) if dim == 1 else tri_space(2, N)
    assert sp.ndof == sp.mesh.K * (N + 1 if dim == 1 else (N + 1) * (N + 2) // 2)
    rng = np.random.default_rng(N)
    v = DgFunction(sp, rng.normal(size=sp.ndof))
    w = l2_project(sp, v)
    assert np.max(np.abs(w.coeffs - v.coeffs)) <= 1e-12


def test_projection_of_linear_is_itself():
    sp = DgSpace(build_interval_mesh(0, 1, 3), 1)
    np.testing.assert_allclose(l2_project(sp, lambda x: x).coeffs, interpolate(sp, lambda x: x).coeffs, atol=1e-14)


def test_projection_of_square_best_fit():
    sp = DgSpace(build_interval_mesh(0, 1, 1), 1)
    u = l2_project(sp, lambda x: x**2)
    xs = np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose(u(xs), xs - 1 / 6, atol=1e-14)
    assert l2_error(u, lambda x: x**2) == pytest.approx(1 / (6 * math.sqrt(5)), rel=1e-12)


def test_projection_orthogonality():
    sp = tri_space(2, 2)
    f = lambda x, y: np.exp(x) * np.sin(2 * y)
    u = l2_project(sp, f)
    r = u.at_quad() - f(*np.moveaxis(sp.quad_points, -1, 0))
    # residual is orthogonal to every basis function on every element
    mom = np.einsum("kq,q,qj->kj", r * sp.det[:, None], sp.quad[1], sp.phi_q)
    assert np.max(np.abs(mom)) <= 1e-10


def test_interpolation_order():
    f = lambda x: np.sin(np.pi * x / 2)
    xs = np.linspace(0, 2, 2001)[1:-1]
    for N in (1, 2, 3):
        e = []
        for K in (8, 16):
            u = interpolate(DgSpace(build_interval_mesh(0, 2, K), N), f)
            e.append(np.max(np.abs(u(xs) - f(xs))))
        assert math.log2(e[0] / e[1]) == pytest.approx(N + 1, abs=0.3)


def test_interpolate_constant():
    sp = tri_space()
    u = interpolate(sp, lambda x, y: 3.0 + 0 * x)
    np.testing.assert_allclose(u.coeffs, 3.0)


def test_trace_jump_average():
    m = build_interval_mesh(0, 2, 2)
    sp = DgSpace(m, 1)
    u = interpolate(sp, lambda x: 2 * x)
    fi = int(m.interior_faces[0])
    j, a = trace_jump_average(u, fi)
    assert j == pytest.approx(0.0, abs=1e-14) and a == pytest.approx(2.0)
    # u = 1 on T1, 0 on T2
    T1, T2 = m.face_elements[fi]
    c = np.zeros((2, 2))
    c[T1] = 1.0
    j, a = trace_jump_average(DgFunction(sp, c.ravel()), fi)
    assert (j, a) == (pytest.approx(1.0), pytest.approx(0.5))
    # boundary face: both are the inner trace
    c[:] = 0.7
    fb = int(m.boundary_faces[0])
    j, a = trace_jump_average(DgFunction(sp, c.ravel()), fb)
    assert (j, a) == (pytest.approx(0.7), pytest.approx(0.7))


def test_trace_matches_one_sided_evaluation_2d():
    sp = tri_space(2, 3)
    rng = np.random.default_rng(3)
    u = DgFunction(sp, rng.normal(size=sp.ndof))
    m = sp.mesh
    for f in m.interior_faces[:6]:
        a, b = m.vertices[m.face_vertices[f]]
        p = a + 0.3 * (b - a)
        e1, e2 = m.face_elements[f]
        v1 = u.evaluate([e1], sp.to_reference(np.array([e1]), p[None]))[0]
        v2 = u.evaluate([e2], sp.to_reference(np.array([e2]), p[None]))[0]
        j, _ = trace_jump_average(u, int(f), p)
        assert j == pytest.approx(v1 - v2, abs=1e-12)


def test_energy_norm_zero_and_jump_term():
    sp = tri_space(2, 1)
    p = TemperedParams(0.6, 0.6)
    assert energy_norm(sp.zero(), p) == 0.0
    # indicator of one triangle: jump term is its perimeter
    c = np.zeros((sp.mesh.K, sp.Np))
    c[4] = 1.0
    u = DgFunction(sp, c.ravel())
    perim = sp.mesh.face_lengths[sp.mesh.element_faces[4]].sum()
    assert jump_norm_sq(u) == pytest.approx(perim, rel=1e-13)
    assert energy_norm(u, p) ** 2 >= perim


def test_l2_error_examples():
    sp = DgSpace(build_structured_tri_mesh(SQUARE, 2, 2), 2)
    u = interpolate(sp, lambda x, y: x * y)
    assert l2_error(u, lambda x, y: x * y) <= 1e-13
    assert l2_error(sp.zero(), lambda x, y: 1.0 + 0 * x) == pytest.approx(2.0, rel=1e-14)


def test_solution_round_trip():
    sp = tri_space()
    u = DgFunction(sp, np.random.default_rng(0).normal(size=sp.ndof))
    buf = io.StringIO()
    write_solution(u, buf)
    v = read_solution(sp, io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(u.coeffs, v.coeffs)


def _bump_1d(h, c):
    return lambda x: (x / h) ** 2 * (1 - x / h) ** 2 * (1 + c * x / h)


@given(c=st.floats(-0.9, 0.9), alpha=st.sampled_from([0.4, 0.8]))
@settings(max_examples=8, deadline=None)
def test_inverse_inequality_seminorm_scaling(c, alpha):
    hs = [1.0, 0.5, 0.25, 0.125]
    r = []
    for h in hs:
        u = interpolate(DgSpace(build_interval_mesh(0, h, 1), 4), _bump_1d(h, c))
        r.append(sobolev_norm(u, alpha, seminorm=True) / u.l2_norm())
    assert np.polyfit(np.log(hs), np.log(r), 1)[0] == pytest.approx(-alpha, abs=0.05)


def test_inverse_inequality_triangle():
    hs = [1.0, 0.5, 0.25, 0.125]
    for alpha in (0.4, 0.8):
        r = []
        for h in hs:
            sp = DgSpace(build_structured_tri_mesh((0, h, 0, h), 1, 1), 4)
            u = l2_project(sp, lambda x, y: (x * y * (h - x) * (h - y)) ** 2 / h**8)
            r.append(sobolev_norm(u, alpha, seminorm=True) / u.l2_norm())
        assert np.polyfit(np.log(hs), np.log(r), 1)[0] == pytest.approx(-alpha, abs=0.05)
