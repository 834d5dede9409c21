"""Discontinuous nodal Lagrange spaces on interval and triangle meshes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import InvalidInputError, NonIntegrableKernelError, OutOfDomainError
from .mesh import Mesh
from .raycast import chord_rule, point_lines
from .tempered_calc import (
    TemperedParams,
    _cheb_fit_matrix,
    _legendre,
    _unit_jacobi,
    ray_left_parts,
    ray_right_parts,
)

__all__ = [
    "DgSpace",
    "DgFunction",
    "l2_project",
    "interpolate",
    "trace_jump_average",
    "energy_norm",
    "l2_error",
    "write_solution",
    "read_solution",
    "fractional_derivative_at",
    "sobolev_norm",
]

MAX_DEGREE = 4


# ---------------------------------------------------------------------------
# reference element


def _gll(N: int) -> np.ndarray:
    inner = npleg.Legendre.basis(N).deriv().roots()
    return np.concatenate([[-1.0], np.sort(inner.real), [1.0]])


def _warpfactor(N: int, r: np.ndarray) -> np.ndarray:
    req = np.linspace(-1.0, 1.0, N + 1)
    Veq = npleg.legvander(req, N)
    P = npleg.legvander(r, N)
    L = np.linalg.solve(Veq.T, P.T)
    warp = L.T @ (_gll(N) - req)
    inside = np.abs(r) < 1.0 - 1e-10
    sf = 1.0 - (inside * r) ** 2
    return warp / sf + warp * (inside - 1.0)


_ALPHA_OPT = (0.0, 0.0, 1.4152, 0.1001, 0.2751)


@lru_cache(maxsize=None)
def reference_nodes(dim: int, N: int) -> np.ndarray:
    """Lagrange nodes on ``[0, 1]`` or the unit right triangle."""
    if dim == 1:
        r = np.linspace(-1.0, 1.0, N + 1) if N <= 2 else _gll(N)
        out = 0.5 * (r + 1.0)[:, None]
    else:
        L1, L3 = [], []
        for n in range(N + 1):
            for m in range(N + 1 - n):
                L1.append(n / N)
                L3.append(m / N)
        L1, L3 = np.array(L1), np.array(L3)
        L2 = 1.0 - L1 - L3
        if N >= 3:
            x = -L2 + L3
            y = (-L2 - L3 + 2.0 * L1) / math.sqrt(3.0)
            a = _ALPHA_OPT[N]
            w1 = 4 * L2 * L3 * _warpfactor(N, L3 - L2) * (1 + (a * L1) ** 2)
            w2 = 4 * L1 * L3 * _warpfactor(N, L1 - L3) * (1 + (a * L2) ** 2)
            w3 = 4 * L1 * L2 * _warpfactor(N, L2 - L1) * (1 + (a * L3) ** 2)
            c2, s2 = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
            c4, s4 = math.cos(4 * math.pi / 3), math.sin(4 * math.pi / 3)
            x = x + w1 + c2 * w2 + c4 * w3
            y = y + s2 * w2 + s4 * w3
            L1 = (math.sqrt(3.0) * y + 1.0) / 3.0
            L3 = (3.0 * x - math.sqrt(3.0) * y + 2.0) / 6.0
        out = np.stack([L3, L1], axis=1)
    out.setflags(write=False)
    return out


def _exponents(dim: int, N: int) -> np.ndarray:
    if dim == 1:
        return np.arange(N + 1)[:, None]
    return np.array([(i, j) for i in range(N + 1) for j in range(N + 1 - i)])


def _monomials(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)


def _monomial_grads(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(pts), len(exps), exps.shape[1]))
    for d in range(exps.shape[1]):
        e = exps.copy()
        c = e[:, d].astype(float)
        e[:, d] = np.maximum(e[:, d] - 1, 0)
        out[:, :, d] = c * _monomials(e, pts)
    return out


@lru_cache(maxsize=None)
def _basis_matrix(dim: int, N: int) -> np.ndarray:
    # column k holds the monomial coefficients of Lagrange function k
    V = _monomials(_exponents(dim, N), reference_nodes(dim, N))
    C = np.linalg.inv(V)
    C.setflags(write=False)
    return C


@lru_cache(maxsize=None)
def volume_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference quadrature exact for polynomials of total degree ``degree``."""
    n = degree // 2 + 1
    z, w = _legendre(n)
    g, wg = 0.5 * (z + 1.0), 0.5 * w
    if dim == 1:
        return g[:, None], wg
    # collapsed coordinates: x = 1 - s, y = s * v with weight s
    s, ws = _unit_jacobi(n, 1.0)
    X = np.repeat(1.0 - s, n)
    Y = np.outer(s, g).ravel()
    W = np.outer(ws, wg).ravel()
    return np.stack([X, Y], axis=1), W


def _field(f: Callable, pts: np.ndarray) -> np.ndarray:
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, pts.shape[-1])
    vals = np.asarray(f(*flat.T), dtype=float)
    vals = np.broadcast_to(vals, (len(flat),)).reshape(shape)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("scalar field returned non-finite values")
    return vals


# ---------------------------------------------------------------------------
# space


@dataclass(frozen=True, eq=False)
class DgSpace:
    """Piecewise ``P_N`` functions, one block of ``Np`` nodal values per element."""

    mesh: Mesh
    degree: int

    def __post_init__(self):
        if not (1 <= int(self.degree) <= MAX_DEGREE):
            raise InvalidInputError(f"degree must be in [1, {MAX_DEGREE}], got {self.degree}")

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def Np(self) -> int:
        N = self.degree
        return N + 1 if self.dim == 1 else (N + 1) * (N + 2) // 2

    @property
    def ndof(self) -> int:
        return self.mesh.K * self.Np

    def dofs(self, k) -> np.ndarray:
        return np.asarray(k)[..., None] * self.Np + np.arange(self.Np)

    @cached_property
    def ref_nodes(self) -> np.ndarray:
        return reference_nodes(self.dim, self.degree)

    @cached_property
    def _exps(self) -> np.ndarray:
        return _exponents(self.dim, self.degree)

    def eval_ref(self, pts: np.ndarray) -> np.ndarray:
        """Basis values ``(P, Np)`` at reference points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _monomials(self._exps, pts) @ _basis_matrix(self.dim, self.degree)

    def grad_ref(self, pts: np.ndarray) -> np.ndarray:
        """Reference gradients ``(P, Np, dim)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        G = _monomial_grads(self._exps, pts)
        return np.einsum("pmd,mk->pkd", G, _basis_matrix(self.dim, self.degree))

    # geometry ------------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        P = self.mesh.element_coords
        return np.stack([P[:, i + 1] - P[:, 0] for i in range(self.dim)], axis=2)

    @cached_property
    def det(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.jacobians))

    @cached_property
    def inv_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    def to_physical(self, elems, ref_pts) -> np.ndarray:
        elems = np.asarray(elems)
        origin = self.mesh.element_coords[elems, 0]
        return origin[..., None, :] + np.einsum("...ij,pj->...pi", self.jacobians[elems], ref_pts)

    def to_reference(self, elems, pts) -> np.ndarray:
        """Reference coordinates of physical ``pts`` (one point per entry of ``elems``)."""
        elems = np.asarray(elems)
        origin = self.mesh.element_coords[elems, 0]
        return np.einsum("...ij,...j->...i", self.inv_jacobians[elems], pts - origin)

    @cached_property
    def node_coords(self) -> np.ndarray:
        return self.to_physical(np.arange(self.mesh.K), self.ref_nodes)

    # quadrature ----------------------------------------------------------
    @cached_property
    def quad(self) -> tuple[np.ndarray, np.ndarray]:
        return volume_rule(self.dim, 2 * self.degree + 2)

    @cached_property
    def phi_q(self) -> np.ndarray:
        return self.eval_ref(self.quad[0])

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical volume quadrature points ``(K, nq, dim)``."""
        return self.to_physical(np.arange(self.mesh.K), self.quad[0])

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return self.det[:, None] * self.quad[1][None, :]

    @cached_property
    def ref_mass(self) -> np.ndarray:
        phi = self.phi_q
        return phi.T @ (self.quad[1][:, None] * phi)

    @cached_property
    def face_quad(self):
        """``(points, weights, phi1, phi2)`` for every face.

        ``phi2`` is zero on boundary faces.  Points are ``(F, nf, dim)``.
        """
        m = self.mesh
        F = m.n_faces
        fe = m.face_elements
        if self.dim == 1:
            pts = m.vertices[m.face_vertices[:, 0]][:, None, :]
            w = np.ones((F, 1))
        else:
            z, wz = _legendre(self.degree + 2)
            t = 0.5 * (z + 1.0)
            p = m.vertices[m.face_vertices[:, 0]]
            q = m.vertices[m.face_vertices[:, 1]]
            pts = p[:, None, :] + t[None, :, None] * (q - p)[:, None, :]
            w = m.face_lengths[:, None] * 0.5 * wz[None, :]
        nf = pts.shape[1]
        phi1 = self.eval_ref(self.to_reference(np.repeat(fe[:, :1], nf, axis=1), pts).reshape(-1, self.dim))
        phi1 = phi1.reshape(F, nf, self.Np)
        phi2 = np.zeros_like(phi1)
        inner = fe[:, 1] >= 0
        if np.any(inner):
            e2 = np.repeat(fe[inner, 1:], nf, axis=1)
            r2 = self.to_reference(e2, pts[inner]).reshape(-1, self.dim)
            phi2[inner] = self.eval_ref(r2).reshape(-1, nf, self.Np)
        return pts, w, phi1, phi2

    # line restrictions ---------------------------------------------------
    def chord_coeffs(self, seg, axis: str = "x", coeffs: np.ndarray | None = None) -> np.ndarray:
        """Basis (or a function) restricted to every chord of ``seg``.

        Returns ``(m, nb, N+1)`` monomial coefficients in the chord variable
        ``t`` in ``[-1, 1]``; ``nb = Np`` for the basis, ``1`` when element
        coefficients ``coeffs`` of shape ``(K, Np)`` are given.
        """
        N = self.degree
        t, Vinv = _cheb_fit_matrix(N + 1)
        mid = 0.5 * (seg.entry + seg.exit)
        half = 0.5 * (seg.exit - seg.entry)
        s = mid[:, None] + half[:, None] * t[None, :]
        m = len(seg)
        if self.dim == 1:
            pts = s[..., None]
        else:
            o = np.full_like(s, seg.ordinate)
            pts = np.stack([s, o] if axis == "x" else [o, s], axis=-1)
        ref = self.to_reference(np.repeat(seg.elements[:, None], N + 1, axis=1), pts)
        vals = self.eval_ref(ref.reshape(-1, self.dim)).reshape(m, N + 1, self.Np)
        if coeffs is not None:
            vals = np.einsum("mtk,mk->mt", vals, coeffs[seg.elements])[:, :, None]
        return np.einsum("mtb,kt->mbk", vals, Vinv)

    def locate(self, points: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """Element containing each point (first match; -1 outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=np.intp)
        tol = 1e-12
        for lo in range(0, len(points), chunk):
            p = points[lo : lo + chunk]
            ref = np.einsum(
                "kij,pkj->pki",
                self.inv_jacobians,
                p[:, None, :] - self.mesh.element_coords[None, :, 0, :],
            )
            if self.dim == 1:
                inside = (ref[..., 0] >= -tol) & (ref[..., 0] <= 1 + tol)
            else:
                inside = (ref[..., 0] >= -tol) & (ref[..., 1] >= -tol) & (ref.sum(-1) <= 1 + tol)
            hit = inside.any(axis=1)
            out[lo : lo + chunk] = np.where(hit, inside.argmax(axis=1), -1)
        return out

    def zero(self) -> "DgFunction":
        return DgFunction(self, np.zeros(self.ndof))


@dataclass(frozen=True, eq=False)
class DgFunction:
    """Nodal coefficients of a function in a :class:`DgSpace`."""

    space: DgSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.shape != (self.space.ndof,):
            raise InvalidInputError(f"expected {self.space.ndof} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)

    @property
    def element_coeffs(self) -> np.ndarray:
        return self.coeffs.reshape(self.space.mesh.K, self.space.Np)

    def at_quad(self) -> np.ndarray:
        return self.element_coeffs @ self.space.phi_q.T

    def evaluate(self, elems, ref_pts) -> np.ndarray:
        """Values at reference points, one point per element entry."""
        elems = np.asarray(elems)
        phi = self.space.eval_ref(np.asarray(ref_pts).reshape(-1, self.space.dim))
        return np.einsum("pk,pk->p", phi, self.element_coeffs[elems.ravel()]).reshape(elems.shape)

    def __call__(self, *coords) -> np.ndarray:
        pts = np.stack([np.asarray(c, dtype=float) for c in coords], axis=-1)
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, self.space.dim)
        el = self.space.locate(flat)
        if np.any(el < 0):
            raise OutOfDomainError("evaluation point outside the mesh")
        ref = self.space.to_reference(el, flat)
        return self.evaluate(el, ref).reshape(shape)

    def __add__(self, other: "DgFunction") -> "DgFunction":
        return DgFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "DgFunction") -> "DgFunction":
        return DgFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "DgFunction":
        return DgFunction(self.space, self.coeffs * float(a))

    __rmul__ = __mul__

    def l2_norm(self) -> float:
        v = self.at_quad()
        return float(math.sqrt(np.sum(self.space.quad_weights * v * v)))


# ---------------------------------------------------------------------------
# operations


def l2_project(space: DgSpace, f: Callable) -> DgFunction:
    """Element-wise L2 projection of the scalar field ``f``."""
    vals = _field(f, space.quad_points)
    load = (vals * space.quad[1][None, :]) @ space.phi_q
    c = np.linalg.solve(space.ref_mass, load.T).T
    return DgFunction(space, c.ravel())


def interpolate(space: DgSpace, f: Callable) -> DgFunction:
    """Nodal interpolant of ``f``."""
    return DgFunction(space, _field(f, space.node_coords).ravel())


def trace_jump_average(u: DgFunction, face: int, point=None) -> tuple[float, float]:
    """``([u], {u})`` at a point of ``face``; both are the inner trace on the boundary."""
    sp = u.space
    m = sp.mesh
    if not 0 <= face < m.n_faces:
        raise InvalidInputError(f"unknown face {face}")
    e1, e2 = m.face_elements[face]
    fv = m.vertices[m.face_vertices[face]]
    if sp.dim == 1:
        p = fv[0]
        if point is not None and abs(float(np.ravel(point)[0]) - p[0]) > 1e-12:
            raise InvalidInputError("point is not on the face")
    else:
        if point is None:
            p = fv.mean(axis=0)
        else:
            p = np.asarray(point, dtype=float)
            a, b = fv
            t = np.dot(p - a, b - a) / np.dot(b - a, b - a)
            if not (-1e-12 <= t <= 1 + 1e-12) or np.linalg.norm(a + t * (b - a) - p) > 1e-10 * m.h:
                raise InvalidInputError("point is not on the face")
    v1 = float(u.evaluate(np.array([e1]), sp.to_reference(np.array([e1]), p[None, :]))[0])
    if e2 < 0:
        return v1, v1
    v2 = float(u.evaluate(np.array([e2]), sp.to_reference(np.array([e2]), p[None, :]))[0])
    return v1 - v2, 0.5 * (v1 + v2)


def face_jumps(u: DgFunction) -> np.ndarray:
    """Jumps ``(F, nf)`` at the face quadrature points."""
    _, _, phi1, phi2 = u.space.face_quad
    fe = u.space.mesh.face_elements
    c = u.element_coeffs
    j = np.einsum("fqk,fk->fq", phi1, c[fe[:, 0]])
    inner = fe[:, 1] >= 0
    j[inner] -= np.einsum("fqk,fk->fq", phi2[inner], c[fe[inner, 1]])
    return j


def jump_norm_sq(u: DgFunction) -> float:
    w = u.space.face_quad[1]
    return float(np.sum(w * face_jumps(u) ** 2))


def _orders(sp: DgSpace, params: TemperedParams):
    axes = [("x", 0.5 * params.alpha)]
    if sp.dim == 2:
        axes.append(("y", 0.5 * params.beta))
    return axes


def seminorm_sq(
    u: DgFunction,
    axis: str,
    mu: float,
    lam: float,
    exact: Callable | None = None,
    n_s: int | None = None,
    n_o: int | None = None,
) -> float:
    """``sum_T ||D^{mu,lam}(u - exact)||^2_T`` with left derivatives along ``axis``.

    ``exact(*coords)`` returns the derivative of the exact solution.
    """
    if not 0.0 < mu < 0.5:
        raise NonIntegrableKernelError(
            f"squared derivative of order {mu} of a discontinuous function is not integrable"
        )
    sp = u.space
    N = sp.degree
    n_s = n_s or N + 4
    n_o = n_o or N + 4
    kinds = [(2.0 * mu, 0.0), (mu, 0.0), (0.0, 0.0)]
    total = 0.0
    for line in chord_rule(sp.mesh, axis, kinds, n_s, n_o):
        P = sp.chord_coeffs(line.seg, axis, u.element_coeffs)
        A, S = ray_left_parts(line.seg.breaks, P, mu, lam, line.s, line.target)
        a = A.sum(axis=0)[0]
        s = S.sum(axis=0)[0]
        if exact is not None:
            # the pure singular kind (0) never involves the smooth part
            need = line.kind != 0
            o = np.full(int(need.sum()), line.seg.ordinate)
            ss = line.s[need]
            coords = (ss,) if sp.dim == 1 else ((ss, o) if axis == "x" else (o, ss))
            s = s.copy()
            s[need] -= np.asarray(exact(*coords), dtype=float)
        integrand = np.select([line.kind == 0, line.kind == 1], [a * a, 2.0 * a * s], s * s)
        total += float(np.dot(line.weight, integrand))
    return total


def energy_norm(
    u: DgFunction,
    params: TemperedParams,
    exact_derivative: dict[str, Callable] | None = None,
) -> float:
    """Broken energy norm: left fractional seminorms of half order plus all face jumps.

    With ``exact_derivative`` (axis -> callable returning the half-order left
    derivative of an exact solution that vanishes on the boundary) the norm of
    the error ``exact - u`` is returned instead.
    """
    sp = u.space
    total = jump_norm_sq(u)
    for axis, mu in _orders(sp, params):
        ex = None if exact_derivative is None else exact_derivative[axis]
        total += seminorm_sq(u, axis, mu, params.lam, ex)
    return math.sqrt(max(total, 0.0))


def l2_error(u: DgFunction, exact: Callable, degree: int | None = None) -> float:
    """``||u - exact||_{L2}`` by volume quadrature of degree at least ``2N+2``."""
    sp = u.space
    deg = max(degree or 0, 2 * sp.degree + 4)
    if deg == 2 * sp.degree + 4:
        pts, w, phi = sp.quad_points, sp.quad_weights, sp.phi_q
    else:
        rp, rw = volume_rule(sp.dim, deg)
        pts = sp.to_physical(np.arange(sp.mesh.K), rp)
        w = sp.det[:, None] * rw[None, :]
        phi = sp.eval_ref(rp)
    diff = u.element_coeffs @ phi.T - _field(exact, pts)
    return float(math.sqrt(np.sum(w * diff * diff)))


def fractional_derivative_at(
    u: DgFunction,
    mu: float,
    lam: float,
    axis: str,
    elems,
    points,
    side: str = "left",
) -> np.ndarray:
    """Tempered RL derivative of order ``mu`` of ``u`` along ``axis`` at interior points."""
    sp = u.space
    elems = np.asarray(elems, dtype=np.intp)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(elems))
    kernel = ray_left_parts if side == "left" else ray_right_parts
    for line in point_lines(sp.mesh, axis, elems, points):
        P = sp.chord_coeffs(line.seg, axis, u.element_coeffs)
        A, S = kernel(line.seg.breaks, P, mu, lam, line.s, line.target)
        if side == "left":
            d = line.s - line.seg.entry[line.target]
        else:
            d = line.seg.exit[line.target] - line.s
        out[line.kind] = d ** (-mu) * A.sum(axis=0)[0] + S.sum(axis=0)[0]
    return out


def sobolev_norm(
    u: DgFunction, order: float, lam: float = 0.0, degree: int = 16, seminorm: bool = False
) -> float:
    """``(||u||^2 + sum_axis ||D^{order,lam} u||^2)^{1/2}`` with left derivatives over the mesh.

    ``seminorm=True`` drops the ``L2`` part.
    Point evaluation at a volume rule of ``degree``; accurate when the left
    derivative is square integrable, for instance if ``u`` vanishes to second
    order on the inflow faces.
    """
    sp = u.space
    if not 0.0 < order < 1.0:
        raise InvalidInputError(f"order must lie in (0, 1), got {order}")
    rp, rw = volume_rule(sp.dim, degree)
    K = sp.mesh.K
    pts = sp.to_physical(np.arange(K), rp)
    w = (sp.det[:, None] * rw[None, :]).ravel()
    elems = np.repeat(np.arange(K), len(rp))
    flat = pts.reshape(-1, sp.dim)
    vals = (u.element_coeffs @ sp.eval_ref(rp).T).ravel()
    total = 0.0 if seminorm else float(np.dot(w, vals * vals))
    for axis in ("x", "y")[: sp.dim]:
        d = fractional_derivative_at(u, order, lam, axis, elems, flat)
        total += float(np.dot(w, d * d))
    return math.sqrt(total)


def write_solution(u: DgFunction, dest) -> None:
    """One line per element: element id then its nodal values."""
    own = isinstance(dest, str) or hasattr(dest, "__fspath__")
    fh = open(dest, "w") if own else dest
    try:
        for k, row in enumerate(u.element_coeffs):
            fh.write(f"{k} " + " ".join(repr(float(v)) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def read_solution(space: DgSpace, src) -> DgFunction:
    own = isinstance(src, str) or hasattr(src, "__fspath__")
    fh = open(src) if own else src
    try:
        rows = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    finally:
        if own:
            fh.close()
    c = np.zeros((space.mesh.K, space.Np))
    if len(rows) != space.mesh.K:
        raise InvalidInputError("solution file does not match the mesh")
    for r in rows:
        c[int(r[0])] = [float(v) for v in r[1:]]
    return DgFunction(space, c.ravel())
