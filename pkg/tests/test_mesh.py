"""Mesh construction, bisection refinement, coarsening, line intersections, file format."""

from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempered_dg.errors import DegenerateRayError, InvalidInputError, OutOfDomainError
from tempered_dg.mesh import (
    build_interval_mesh,
    build_structured_tri_mesh,
    coarsen,
    is_shape_regular,
    ray_segments,
    read_mesh,
    refine,
    uniform_refine,
    write_mesh,
)

SQUARE = (0.0, 2.0, 0.0, 2.0)


def check_invariants(m):
    assert m.is_conforming()
    assert np.all(m.areas > 0)
    assert is_shape_regular(m)
    n = m.face_normals
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-14)
    # interior normals point from T1 to T2
    fi = m.interior_faces
    c = m.centroids
    d = c[m.face_elements[fi, 1]] - c[m.face_elements[fi, 0]]
    assert np.all(np.sum(d * n[fi], axis=1) > 0)
    # every interior face is shared by exactly two elements
    counts = np.bincount(m.element_faces.ravel(), minlength=m.n_faces)
    np.testing.assert_array_equal(counts[fi], 2)
    np.testing.assert_array_equal(counts[m.boundary_faces], 1)
    assert m.areas.sum() == pytest.approx(np.prod(np.ptp(m.vertices, axis=0)), rel=1e-13)


def test_interval_mesh_eight_cells():
    m = build_interval_mesh(0.0, 2.0, 8)
    assert m.K == 8
    np.testing.assert_allclose(m.diameters, 0.25)
    check_invariants(m)


def test_single_interval_has_no_interior_face():
    m = build_interval_mesh(0.0, 1.0, 1)
    assert m.K == 1 and len(m.interior_faces) == 0


def test_two_intervals_face_orientation():
    m = build_interval_mesh(0.0, 2.0, 2)
    xs = sorted(float(m.vertices[f[0], 0]) for f in m.face_vertices)
    assert xs == [0.0, 1.0, 2.0]
    (fi,) = m.interior_faces
    assert m.vertices[m.face_vertices[fi][0], 0] == 1.0
    assert m.face_normals[fi, 0] == 1.0


@pytest.mark.parametrize("n,K", [(4, 32), (6, 72), (1, 2)])
def test_structured_counts(n, K):
    m = build_structured_tri_mesh(SQUARE, n, n)
    assert m.K == K
    check_invariants(m)


def test_structured_one_cell_has_diagonal_face():
    m = build_structured_tri_mesh(SQUARE, 1, 1)
    assert len(m.interior_faces) == 1
    assert m.face_lengths[m.interior_faces[0]] == pytest.approx(2 * np.sqrt(2))


def test_degenerate_inputs():
    with pytest.raises(InvalidInputError):
        build_interval_mesh(1.0, 0.0, 3)
    with pytest.raises(InvalidInputError):
        build_structured_tri_mesh(SQUARE, 0, 2)


def test_refine_interval():
    m = build_interval_mesh(0.0, 2.0, 2)
    r = refine(m, [0])
    assert r.K == 3
    assert sorted(r.vertices[:, 0]) == [0.0, 0.5, 1.0, 2.0]


def test_refine_one_triangle_with_interior_vertex():
    m = build_structured_tri_mesh(SQUARE, 2, 2)
    P = m.element_coords[3]
    r = refine(m, [3], interior_node=True)
    check_invariants(r)
    assert r.K >= m.K + 3
    # some new vertex strictly inside the marked triangle
    lam = np.linalg.solve(np.vstack([P.T, np.ones(3)]), np.vstack([r.vertices.T, np.ones(r.n_vertices)]))
    assert np.any(np.all(lam > 1e-12, axis=0))
    inside = r.centroids
    lam_c = np.linalg.solve(np.vstack([P.T, np.ones(3)]), np.vstack([inside.T, np.ones(r.K)]))
    assert np.sum(np.all(lam_c > -1e-12, axis=0)) >= 4


def test_refine_all_is_uniform():
    m = build_structured_tri_mesh(SQUARE, 4, 4)
    r = refine(m, range(m.K))
    assert r.K == 4 * m.K
    check_invariants(r)
    np.testing.assert_allclose(np.sort(r.areas), np.sort(np.repeat(m.areas / 4, 4)))


def test_refine_rejects_bad_ids():
    m = build_interval_mesh(0, 1, 2)
    with pytest.raises(InvalidInputError):
        refine(m, [5])


def test_refine_then_coarsen_restores():
    m = build_structured_tri_mesh(SQUARE, 2, 2)
    r = refine(m, [1])
    c = coarsen(r, range(r.K))
    assert c.K == m.K
    np.testing.assert_allclose(np.sort(c.areas), np.sort(m.areas))
    m1 = build_interval_mesh(0, 2, 4)
    r1 = refine(m1, [2])
    assert coarsen(r1, range(r1.K)).K == 4


def test_coarsen_empty_and_root():
    m = build_structured_tri_mesh(SQUARE, 2, 2)
    assert coarsen(m, []).K == m.K
    assert coarsen(m, range(m.K)).K == m.K


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=6), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_random_refinement_stays_conforming(seeds, rounds):
    m = build_structured_tri_mesh(SQUARE, 2, 2)
    for r in range(rounds + 1):
        marked = sorted({s % m.K for s in seeds})
        m = refine(m, marked)
    check_invariants(m)
    c = coarsen(m, [s % m.K for s in seeds])
    check_invariants(c)
    assert c.K <= m.K


def test_ray_segments_single_diagonal():
    m = build_structured_tri_mesh(SQUARE, 1, 1)
    seg = ray_segments(m, "x", 0.5)
    assert len(seg) == 2
    np.testing.assert_allclose(seg.breaks, [0.0, 0.5, 2.0])


def test_ray_segments_tile_line():
    m = uniform_refine(build_structured_tri_mesh(SQUARE, 3, 3), 1)
    for axis in ("x", "y"):
        seg = ray_segments(m, axis, 0.77)
        assert seg.breaks[0] == pytest.approx(0.0, abs=1e-14)
        assert seg.breaks[-1] == pytest.approx(2.0, abs=1e-14)
        assert np.all(np.diff(seg.breaks) > 0)


def test_ray_segments_1d_and_errors():
    m = build_interval_mesh(0, 1, 4)
    seg = ray_segments(m, "x")
    np.testing.assert_array_equal(seg.elements, np.arange(4))
    m2 = build_structured_tri_mesh(SQUARE, 2, 2)
    with pytest.raises(OutOfDomainError):
        ray_segments(m2, "x", -0.5)
    with pytest.raises(DegenerateRayError):
        ray_segments(m2, "x", 1.0)


def test_mesh_round_trip():
    m = refine(build_structured_tri_mesh(SQUARE, 2, 2), [0, 5])
    buf = io.StringIO()
    write_mesh(m, buf)
    m2 = read_mesh(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(m2.elements, m.elements)
    np.testing.assert_array_equal(m2.vertices, m.vertices)
    assert m2.n_faces == m.n_faces


def test_read_mesh_malformed():
    with pytest.raises(InvalidInputError):
        read_mesh(io.StringIO("2 1 3\n0 0\n1 0\n"))
