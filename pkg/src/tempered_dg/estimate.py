"""A posteriori error indicators, marking and effectiveness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import assemble_load, shift_constant
from .dg_space import (
    DgFunction,
    DgSpace,
    _exponents,
    _monomials,
    energy_norm,
    face_jumps,
    fractional_derivative_at,
    l2_error,
    l2_project,
)
from .errors import InvalidInputError, UndefinedIndexError
from .mesh import Mesh, refine
from .tempered_calc import TemperedParams, riesz_constants

__all__ = [
    "IndicatorField",
    "operator_values",
    "residual_field",
    "element_norms",
    "element_jumps",
    "energy_indicator",
    "dwr_indicator",
    "dwr_goal",
    "mark_strategy_c",
    "effectiveness_index",
    "time_indicators",
    "transfer",
    "error_norms",
]


@dataclass
class IndicatorField:
    """Per-element indicators; ``total`` follows the scheme's summation rule."""

    eta: np.ndarray
    osc: np.ndarray
    scheme: str = "energy"
    eta_time1: float | None = None
    eta_time2: float | None = None

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.osc = np.asarray(self.osc, dtype=float)
        if self.eta.shape != self.osc.shape:
            raise InvalidInputError("eta and osc must have one entry per element")
        if not (np.all(np.isfinite(self.eta)) and np.all(self.eta >= 0.0)):
            raise InvalidInputError("indicators must be finite and nonnegative")
        if not (np.all(np.isfinite(self.osc)) and np.all(self.osc >= 0.0)):
            raise InvalidInputError("oscillation terms must be finite and nonnegative")

    @property
    def total(self) -> float:
        if self.scheme == "dwr":
            return float(np.sum(self.eta))
        return float(math.sqrt(np.sum(self.eta**2)))

    @property
    def eta_space(self) -> float:
        """``sum eta_T^2`` (evolution space indicator)."""
        return float(np.sum(self.eta**2))

    @property
    def osc_total(self) -> float:
        return float(math.sqrt(np.sum(self.osc**2)))

    def __len__(self) -> int:
        return len(self.eta)


# ---------------------------------------------------------------------------
# residual


def _axes(params: TemperedParams, dim: int, stationary: bool):
    ka, kb, _ = riesz_constants(params)
    cx, cy = (1.0, 1.0) if stationary else (params.kappa1 * ka, params.kappa2 * kb)
    axes = [("x", params.alpha, cx)]
    if dim == 2:
        axes.append(("y", params.beta, cy))
    return axes


def operator_values(
    u: DgFunction,
    params: TemperedParams,
    stationary: bool = True,
    one_sided: bool = False,
    ref_pts: np.ndarray | None = None,
) -> np.ndarray:
    """Strong spatial operator applied to ``u`` at reference points of every element.

    Stationary: ``sum D_left + D_right`` of full order with unit weights
    (``one_sided`` keeps only the left one).  Evolution: the tempered Riesz
    terms, the convection ``b . grad u`` and the shift ``-kappa u``.
    Returns ``(K, nq)``.
    """
    sp = u.space
    K = sp.mesh.K
    rp = sp.quad[0] if ref_pts is None else np.atleast_2d(ref_pts)
    pts = sp.to_physical(np.arange(K), rp)
    nq = pts.shape[1]
    flat = pts.reshape(-1, sp.dim)
    elems = np.repeat(np.arange(K), nq)
    out = np.zeros(K * nq)
    for axis, order, c in _axes(params, sp.dim, stationary):
        if not 0.0 < order < 1.0:
            raise InvalidInputError(f"pointwise residuals need orders in (0, 1), got {order}")
        d = fractional_derivative_at(u, order, params.lam, axis, elems, flat, "left")
        if not one_sided:
            d = d + fractional_derivative_at(u, order, params.lam, axis, elems, flat, "right")
        out += c * d
    out = out.reshape(K, nq)
    if not stationary:
        phi = sp.eval_ref(rp)
        vals = u.element_coeffs @ phi.T
        G = sp.grad_ref(rp)
        grad = np.einsum("qkd,Kde,Kk->Kqe", G, sp.inv_jacobians, u.element_coeffs)
        b = np.asarray(params.b, dtype=float)[: sp.dim]
        out += grad @ b - shift_constant(params, sp.dim) * vals
    return out


def residual_field(
    u: DgFunction,
    f_vals: np.ndarray,
    params: TemperedParams,
    stationary: bool = True,
    one_sided: bool = False,
    u_prev: DgFunction | None = None,
    tau: float | None = None,
    ref_pts: np.ndarray | None = None,
) -> np.ndarray:
    """``R = f - L u`` (minus ``(u - u_prev) / tau`` for a time step) at the points."""
    R = np.asarray(f_vals, dtype=float) - operator_values(u, params, stationary, one_sided, ref_pts)
    if u_prev is not None:
        if tau is None or tau <= 0.0:
            raise InvalidInputError("time residual needs a positive step")
        rp = u.space.quad[0] if ref_pts is None else ref_pts
        phi = u.space.eval_ref(rp)
        R = R - ((u.element_coeffs - u_prev.element_coeffs) @ phi.T) / tau
    return R


def element_norms(space: DgSpace, vals: np.ndarray) -> np.ndarray:
    """``||v||_{L2(T)}`` from values at the volume quadrature points."""
    return np.sqrt(np.sum(space.quad_weights * np.asarray(vals) ** 2, axis=1))


def element_jumps(u: DgFunction, interior_weight: float = 1.0) -> np.ndarray:
    """``||[u]||^2_{L2(dT)}`` per element; interior faces count ``interior_weight`` to each side."""
    m = u.space.mesh
    w = u.space.face_quad[1]
    fsq = np.sum(w * face_jumps(u) ** 2, axis=1)
    fe = m.face_elements
    inner = fe[:, 1] >= 0
    out = np.zeros(m.K)
    np.add.at(out, fe[:, 0], np.where(inner, interior_weight, 1.0) * fsq)
    np.add.at(out, fe[inner, 1], interior_weight * fsq[inner])
    return out


def _low_projection(space: DgSpace) -> np.ndarray:
    """Matrix mapping quadrature values to their L2 projection onto degree ``N - 1``."""
    rp, w = space.quad
    if space.degree == 0:
        return np.zeros((len(w), len(w)))
    V = _monomials(_exponents(space.dim, space.degree - 1), rp)
    G = V.T @ (w[:, None] * V)
    return V @ np.linalg.solve(G, V.T * w[None, :])


def _h_power(params: TemperedParams, dim: int) -> float:
    # the smaller order keeps the upper bound when alpha != beta
    return params.alpha if dim == 1 else min(params.alpha, params.beta)


def energy_indicator(
    u: DgFunction,
    f_vals: np.ndarray,
    params: TemperedParams,
    stationary: bool = True,
    one_sided: bool = False,
    u_prev: DgFunction | None = None,
    tau: float | None = None,
    jump_weight: float = 1.0,
    R: np.ndarray | None = None,
) -> IndicatorField:
    """``eta_T^2 = h_T^a ||R||_T^2 + ||[u]||_dT^2`` and ``osc = h_T^{a/2} ||R - Q R||_T``."""
    sp = u.space
    if R is None:
        R = residual_field(u, f_vals, params, stationary, one_sided, u_prev, tau)
    a = _h_power(params, sp.dim)
    hT = sp.mesh.diameters
    rn = element_norms(sp, R)
    eta2 = hT**a * rn**2 + element_jumps(u, jump_weight)
    Q = _low_projection(sp)
    osc = hT ** (0.5 * a) * element_norms(sp, R - R @ Q.T)
    return IndicatorField(np.sqrt(eta2), osc, "energy")


# ---------------------------------------------------------------------------
# dual weighted residual


def dwr_goal(space2: DgSpace, R2: np.ndarray) -> np.ndarray:
    """Load of the goal ``J(phi) = (phi, R) / ||R||`` in the enriched space."""
    nrm = math.sqrt(float(np.sum(space2.quad_weights * R2**2)))
    if nrm == 0.0:
        return np.zeros(space2.ndof)
    return assemble_load(space2, R2 / nrm)


def dwr_indicator(
    u: DgFunction,
    z2: DgFunction,
    R2: np.ndarray,
) -> IndicatorField:
    """``eta_T = ||R||_T ||z - Pi z||_T + ||[u]||_dT ||[z - Pi z]||_dT``.

    ``z2`` is the dual solution in the enriched space, ``R2`` the residual at
    its volume quadrature points and ``Pi`` the nodal interpolant onto the
    primal degree.
    """
    sp, sp2 = u.space, z2.space
    if sp.mesh is not sp2.mesh:
        raise InvalidInputError("primal and dual must share the mesh")
    zi = DgFunction(sp, _elementwise(z2, sp).ravel())
    # z - Pi z in the enriched space: Pi z is exactly representable there
    zi2 = _embed(zi, sp2)
    dz = z2 - zi2
    r = element_norms(sp2, R2)
    w = element_norms(sp2, dz.at_quad())
    ju = np.sqrt(element_jumps(u))
    jz = np.sqrt(element_jumps(dz))
    eta = r * w + ju * jz
    return IndicatorField(eta, np.zeros_like(eta), "dwr")


def _elementwise(z2: DgFunction, sp: DgSpace) -> np.ndarray:
    # values of z2 at the primal nodes, taken from the owning element (no lookup)
    ref = sp.ref_nodes
    return z2.element_coeffs @ z2.space.eval_ref(ref).T


def _embed(v: DgFunction, sp2: DgSpace) -> DgFunction:
    """Exact representation of a degree-N function in a richer space on the same mesh."""
    vals = v.element_coeffs @ v.space.eval_ref(sp2.ref_nodes).T
    return DgFunction(sp2, vals.ravel())


# ---------------------------------------------------------------------------
# marking, effectiveness, time


def mark_strategy_c(ind: IndicatorField, theta1: float = 0.5, theta2: float = 0.5) -> np.ndarray:
    """Greedy bulk marking on ``eta^2`` then enlargement on ``osc^2``.

    Returns sorted element ids; ties are broken by the smaller id.
    """
    if not (0.0 < theta1 < 1.0 and 0.0 < theta2 < 1.0):
        raise InvalidInputError("marking parameters must lie in (0, 1)")
    e2 = ind.eta**2
    o2 = ind.osc**2
    ids = np.arange(len(e2))
    marked = np.zeros(len(e2), dtype=bool)
    target = theta1**2 * e2.sum()
    acc = 0.0
    if e2.sum() > 0.0:
        for k in np.lexsort((ids, -e2)):
            if acc >= target:
                break
            marked[k] = True
            acc += e2[k]
    target = theta2**2 * o2.sum()
    acc = float(o2[marked].sum())
    if o2.sum() > 0.0:
        for k in np.lexsort((ids, -o2)):
            if acc >= target:
                break
            if not marked[k]:
                marked[k] = True
                acc += o2[k]
    return np.nonzero(marked)[0]


def effectiveness_index(ind, true_energy_error: float) -> float:
    """``I_eff = eta / ||e||_E``; ``ind`` is an :class:`IndicatorField` or a total."""
    eta = ind.total if isinstance(ind, IndicatorField) else float(ind)
    if not true_energy_error > 0.0:
        raise UndefinedIndexError("effectiveness index undefined for zero error")
    return eta / float(true_energy_error)


def time_indicators(
    u_n: DgFunction,
    u_prev: DgFunction,
    source_on,
    t0: float,
    t1: float,
    n_time: int = 3,
) -> tuple[float, float]:
    """``eta_time1 = (1/tau) int ||f - fbar||^2 dt`` and ``eta_time2 = ||u_n - u_prev||^2``.

    ``source_on(space, t)`` returns source values at the volume points.
    """
    if n_time < 3:
        raise InvalidInputError("time quadrature needs at least three points")
    sp = u_n.space
    tau = t1 - t0
    z, w = np.polynomial.legendre.leggauss(n_time)
    tt = t0 + 0.5 * tau * (z + 1.0)
    vals = [np.asarray(source_on(sp, t), dtype=float) for t in tt]
    fbar = sum(0.5 * wi * v for wi, v in zip(w, vals))
    e1 = sum(0.5 * wi * float(np.sum(sp.quad_weights * (v - fbar) ** 2)) for wi, v in zip(w, vals))
    diff = u_n - u_prev
    return float(e1), float(diff.l2_norm() ** 2)


# ---------------------------------------------------------------------------
# transfer and measured errors


def transfer(u: DgFunction, space: DgSpace) -> DgFunction:
    """L2 projection onto another space (exact after refinement)."""
    if u.space is space:
        return u
    if u.space.mesh is space.mesh and u.space.degree <= space.degree:
        return _embed(u, space)
    return l2_project(space, u)


def error_norms(u: DgFunction, problem, h_max: float | None = None) -> tuple[float, float]:
    """``(||u - u_h||_L2, ||u - u_h||_E)`` for a stationary problem.

    With ``h_max`` the discrete function is first prolonged (exactly) to a
    refinement whose elements are no larger than ``h_max``, so that steep
    features of the exact solution are resolved by the quadrature.
    """
    mesh: Mesh = u.space.mesh
    if h_max is not None:
        while True:
            big = np.nonzero(mesh.diameters > h_max)[0]
            if len(big) == 0:
                break
            mesh = refine(mesh, big)
    uf = u if mesh is u.space.mesh else transfer(u, DgSpace(mesh, u.space.degree))
    ex = problem.exact
    l2 = l2_error(uf, lambda *c: ex(*c))
    axes = ["x"] if mesh.dim == 1 else ["x", "y"]
    en = energy_norm(uf, problem.params, {a: problem.exact_half_derivative(a) for a in axes})
    return l2, en
