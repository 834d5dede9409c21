"""Quadrature organised along axis-parallel lines through the mesh.

Fractional derivatives in x only couple elements met by the same horizontal
line, so every integral involving them is written as an outer integral over
the line ordinate and an inner integral over the chord the line cuts from
an element.  The inner rule is Gauss-Jacobi with the end-point singularities
``(s - c0)**(-eL) * (c1 - s)**(-eR)`` of the integrand, and because the chord
length shrinks linearly towards a triangle apex the outer rule carries the
matching weight ``dist**(1 - eL - eR)``.

Points that share an ordinate are grouped onto one line so that the
expensive nonlocal evaluation runs once per distinct line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRayError
from .mesh import Mesh, RaySegmentation, ray_segments
from .tempered_calc import jacobi_rule

__all__ = ["LinePoints", "chord_rule", "point_lines", "segment_line"]

_JITTER = 1e-12


@dataclass
class LinePoints:
    """Quadrature points lying on one line."""

    seg: RaySegmentation
    s: np.ndarray
    """Parameter along the line."""
    target: np.ndarray
    """Index into ``seg.elements`` of the chord holding each point."""
    weight: np.ndarray
    kind: np.ndarray
    """Index of the singular-weight kind (chord rules) or of the caller's point."""

    @property
    def elements(self) -> np.ndarray:
        return self.seg.elements[self.target]


def segment_line(mesh: Mesh, axis: str, ordinate: float) -> RaySegmentation:
    """``ray_segments`` that nudges the line off vertices."""
    o = float(ordinate)
    step = _JITTER * mesh.h
    for attempt in range(8):
        try:
            return ray_segments(mesh, axis, o)
        except DegenerateRayError:
            o = float(ordinate) + step * (attempt + 1) * (-1) ** attempt
    raise DegenerateRayError(f"could not move line {ordinate} off the mesh vertices")


def _axes(axis: str) -> tuple[int, int]:
    return (0, 1) if axis == "x" else (1, 0)


def _panels(levels: int, ratio: float) -> np.ndarray:
    """Break points in ``[0, 1]`` graded geometrically toward both ends."""
    inner = [ratio**k for k in range(1, levels + 1)]
    return np.unique(np.concatenate([[0.0, 1.0], inner, 1.0 - np.array(inner)]))


def _graded_rule(n: int, e0: float, e1: float, levels: int, ratio: float):
    """Rule on ``[0, 1]`` for ``s**(-e0) (1-s)**(-e1) g(s)`` with ``g`` nearly
    singular just outside either end; returns nodes and full weights divided
    by the singular factor so that ``sum w g`` approximates the integral."""
    br = _panels(levels, ratio)
    nodes, wts = [], []
    last = len(br) - 2
    for i in range(len(br) - 1):
        a, b = br[i], br[i + 1]
        h = b - a
        ea = e0 if i == 0 else 0.0
        eb = e1 if i == last else 0.0
        t, w = jacobi_rule(n, -eb, -ea)
        x = a + 0.5 * h * (1.0 + t)
        # Jacobi rule absorbs the singular factors of this panel only; restore
        # the missing ones as plain (smooth) factors
        w = 0.5 * h * w * (0.5 * h) ** (-ea - eb)
        if ea == 0.0 and e0 != 0.0:
            w = w * x ** (-e0)
        if eb == 0.0 and e1 != 0.0:
            w = w * (1.0 - x) ** (-e1)
        nodes.append(x)
        wts.append(w)
    return np.concatenate(nodes), np.concatenate(wts)


def chord_rule(
    mesh: Mesh,
    axis: str,
    kinds: list[tuple[float, float]],
    n_s: int,
    n_o: int,
    levels: int = 0,
    ratio: float = 0.25,
) -> list[LinePoints]:
    """Lines and weights integrating ``sum_T int_T F`` for every kind.

    Kind ``(eL, eR)`` integrates ``(s - c0)**(-eL) (c1 - s)**(-eR) G`` with
    ``G`` smooth on each chord; the weights returned already include the
    singular factor, so the caller supplies only ``G`` at the points.

    Jumps located at a vertex of the element make ``G`` nearly singular close
    to that vertex.  ``levels > 0`` splits both the chord and the outer
    integral into panels graded geometrically toward their end points.
    """
    rules = []
    for eL, eR in kinds:
        r, w = _graded_rule(n_s, eL, eR, levels, ratio)
        rules.append((2.0 * r - 1.0, w * 2.0 ** (1.0 - eL - eR)))
    pvals = np.array([1.0 - eL - eR for eL, eR in kinds])
    if mesh.dim == 1:
        seg = ray_segments(mesh, "x")
        half = 0.5 * (seg.exit - seg.entry)
        mid = 0.5 * (seg.exit + seg.entry)
        s, tgt, w, kd = [], [], [], []
        for ki, (t, wt) in enumerate(rules):
            s.append((mid[:, None] + half[:, None] * t).ravel())
            tgt.append(np.repeat(np.arange(len(half)), len(t)))
            w.append((half[:, None] ** pvals[ki] * wt).ravel())
            kd.append(np.full(len(half) * len(t), ki))
        return [LinePoints(seg, *(np.concatenate(a) for a in (s, tgt, w, kd)))]

    s_ax, o_ax = _axes(axis)
    P = mesh.element_coords
    o = np.sort(P[:, :, o_ax], axis=1)
    lo, md, hi = o[:, 0], o[:, 1], o[:, 2]
    tol = 1e-13 * mesh.h
    ords, elems, wout, kd = [], [], [], []
    for ki, p in enumerate(pvals):
        # outer variable sigma = dist / height in [0, 1]; the chord half-length
        # is proportional to sigma, the factor sigma**p is restored below
        sg, wsg = _graded_rule(n_o, -p, 0.0, levels, ratio)
        wsg = wsg / sg**p
        for apex, far in ((lo, md), (hi, md)):
            height = np.abs(far - apex)
            ok = np.nonzero(height > tol)[0]
            sgn = np.sign(far[ok] - apex[ok])
            H = height[ok][:, None]
            oo = apex[ok][:, None] + sgn[:, None] * H * sg[None, :]
            ords.append(oo.ravel())
            elems.append(np.repeat(ok, len(sg)))
            wout.append((H * wsg[None, :]).ravel())
            kd.append(np.full(oo.size, ki))
    ords = np.concatenate(ords)
    elems = np.concatenate(elems)
    wout = np.concatenate(wout)
    kd = np.concatenate(kd)
    uniq, inv = np.unique(ords, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    pos = np.full(mesh.K, -1, dtype=np.intp)
    out = []
    for u in range(len(uniq)):
        idx = order[bounds[u] : bounds[u + 1]]
        seg = segment_line(mesh, axis, uniq[u])
        pos[seg.elements] = np.arange(len(seg))
        ch = pos[elems[idx]]
        pos[seg.elements] = -1
        if np.any(ch < 0):
            raise DegenerateRayError("quadrature line misses its own element")
        half = 0.5 * (seg.exit[ch] - seg.entry[ch])
        mid = 0.5 * (seg.exit[ch] + seg.entry[ch])
        s, tgt, w, kk = [], [], [], []
        for ki, (t, wt) in enumerate(rules):
            sel = kd[idx] == ki
            if not np.any(sel):
                continue
            hs, ms = half[sel], mid[sel]
            s.append((ms[:, None] + hs[:, None] * t).ravel())
            tgt.append(np.repeat(ch[sel], len(t)))
            w.append((wout[idx][sel][:, None] * hs[:, None] ** pvals[ki] * wt).ravel())
            kk.append(np.full(hs.size * len(t), ki))
        out.append(LinePoints(seg, *(np.concatenate(a) for a in (s, tgt, w, kk))))
    return out


def point_lines(mesh: Mesh, axis: str, elems: np.ndarray, points: np.ndarray) -> list[LinePoints]:
    """Group arbitrary interior points by line; ``kind`` holds the point index."""
    elems = np.asarray(elems, dtype=np.intp)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.dim == 1:
        seg = ray_segments(mesh, "x")
        return [LinePoints(seg, points[:, 0].copy(), elems.copy(), np.ones(len(elems)), np.arange(len(elems)))]
    s_ax, o_ax = _axes(axis)
    uniq, inv = np.unique(points[:, o_ax], return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    pos = np.full(mesh.K, -1, dtype=np.intp)
    out = []
    for u in range(len(uniq)):
        idx = order[bounds[u] : bounds[u + 1]]
        seg = segment_line(mesh, axis, uniq[u])
        pos[seg.elements] = np.arange(len(seg))
        ch = pos[elems[idx]]
        pos[seg.elements] = -1
        if np.any(ch < 0):
            raise DegenerateRayError("point lies on an element boundary")
        s = points[idx, s_ax]
        s = np.clip(s, seg.entry[ch], seg.exit[ch])
        out.append(LinePoints(seg, s, ch, np.ones(len(idx)), idx))
    return out
