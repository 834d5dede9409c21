"""Tempered Riemann-Liouville and Caputo operators on piecewise polynomials.

Two evaluation paths are provided.

* Point evaluation of ``PiecewisePoly1D`` objects (``tempered_integral``,
  ``tempered_rl_derivative``, ``tempered_caputo_derivative``).  These are the
  reference implementations used by tests and by the manufactured data.
* ``ray_left_parts`` / ``ray_right_parts``: a vectorized kernel that evaluates
  the derivative of every basis function living on a line through the mesh at
  many points at once.  The result is split into a part carrying the
  ``(x - c0)**(-mu)`` singularity of the element containing the point and a
  part that is smooth on that element, so that assembly can integrate both
  with matching Gauss-Jacobi rules.

The weakly singular kernel is always handled by mapping ``[c, x]`` to
``[0, 1]`` and applying a Gauss-Jacobi rule for the weight ``s**(mu - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import (
    InvalidOrderError,
    NonIntegrableKernelError,
    OutOfDomainError,
    SingularPointError,
)

__all__ = [
    "TemperedParams",
    "PiecewisePoly1D",
    "SingularQuadRule",
    "make_singular_rule",
    "riesz_constants",
    "tempered_integral",
    "tempered_rl_derivative",
    "tempered_caputo_derivative",
    "ray_left_parts",
    "ray_right_parts",
    "function_integral",
    "function_derivative",
]


# ---------------------------------------------------------------------------
# parameters


def _check_riesz_order(value: float, name: str) -> None:
    if not (0.0 < value < 2.0) or value == 1.0:
        raise InvalidOrderError(f"{name} must lie in (0, 2) without 1, got {value}")


def _riesz_values(alpha, beta, lam, kappa1, kappa2):
    _check_riesz_order(alpha, "alpha")
    _check_riesz_order(beta, "beta")
    ka = 1.0 / (2.0 * math.cos(alpha * math.pi / 2.0))
    kb = 1.0 / (2.0 * math.cos(beta * math.pi / 2.0))
    kappa = 2.0 * lam**alpha * kappa1 * ka + 2.0 * lam**beta * kappa2 * kb
    return ka, kb, kappa


@dataclass(frozen=True)
class TemperedParams:
    """Coefficients of the tempered convection-diffusion operator."""

    alpha: float
    beta: float
    lam: float = 0.0
    """Tempering rate; ``0`` gives the untempered operators."""
    kappa1: float = 1.0
    kappa2: float = 1.0
    b: tuple[float, float] = (0.0, 0.0)
    """Constant convection velocity."""

    kappa_alpha: float = field(init=False)
    kappa_beta: float = field(init=False)
    kappa: float = field(init=False)
    """Zeroth-order shift produced by rewriting the Riesz operators."""

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise InvalidOrderError(f"tempering rate must be >= 0, got {self.lam}")
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise InvalidOrderError("diffusion coefficients must be positive")
        object.__setattr__(self, "b", (float(self.b[0]), float(self.b[1])))
        ka, kb, kappa = _riesz_values(
            self.alpha, self.beta, self.lam, self.kappa1, self.kappa2
        )
        object.__setattr__(self, "kappa_alpha", ka)
        object.__setattr__(self, "kappa_beta", kb)
        object.__setattr__(self, "kappa", kappa)

    @property
    def gamma(self) -> float:
        """Coercivity constant ``min(kappa1, kappa2, 1)``."""
        return min(self.kappa1, self.kappa2, 1.0)


def riesz_constants(params: TemperedParams) -> tuple[float, float, float]:
    """Return ``(kappa_alpha, kappa_beta, kappa)`` recomputed from *params*.

    For orders in (1, 2) the first-order drift corrections of the left and
    right operators have opposite signs and cancel in the symmetric sum, so
    only the ``-2 lam**alpha`` shift survives.
    """
    return _riesz_values(
        params.alpha, params.beta, params.lam, params.kappa1, params.kappa2
    )


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=256)
def _unit_jacobi(n: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    # nodes/weights on [0, 1] for the weight s**gamma
    x, w = roots_jacobi(n, 0.0, gamma)
    s = 0.5 * (1.0 + x)
    w = w * 2.0 ** (-gamma - 1.0)
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


@lru_cache(maxsize=256)
def jacobi_rule(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi rule on [-1, 1] for the weight ``(1-t)**a (1+t)**b``."""
    if a == 0.0 and b == 0.0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, a, b)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class SingularQuadRule:
    """Rule on [0, 1] integrating ``s**exponent * p(s)`` for ``deg p <= degree``."""

    exponent: float
    degree: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    def integrate(self, p: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, p(self.nodes)))


def make_singular_rule(exponent: float, degree: int) -> SingularQuadRule:
    """Gauss-Jacobi rule exact for ``int_0^1 s**exponent p(s) ds``, ``deg p <= degree``."""
    if exponent <= -1.0:
        raise NonIntegrableKernelError(
            f"kernel exponent {exponent} is not integrable at 0"
        )
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    n = degree // 2 + 1
    s, w = _unit_jacobi(n, float(exponent))
    return SingularQuadRule(float(exponent), int(degree), s, w)


def _n_points(deg: int, z: float) -> int:
    # enough Gauss points to integrate a degree-deg polynomial times exp(-z s)
    # on [0, 1] to roughly machine precision
    return int(min(deg // 2 + 10 + math.ceil(1.2 * z), 120))


# ---------------------------------------------------------------------------
# piecewise polynomials


def _dcoef(P: np.ndarray) -> np.ndarray:
    """Coefficients of d/dt of a polynomial stored along the last axis."""
    D = np.zeros_like(P)
    k = P.shape[-1]
    if k > 1:
        D[..., :-1] = P[..., 1:] * np.arange(1, k)
    return D


def _polyval_t(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    # Horner in the local variable; coeffs last axis is the power
    out = np.zeros(np.broadcast(t, coeffs[..., 0]).shape)
    for k in range(coeffs.shape[-1] - 1, -1, -1):
        out = out * t + coeffs[..., k]
    return out


@lru_cache(maxsize=32)
def _cheb_fit_matrix(n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1].copy()
    V = np.vander(t, n, increasing=True)
    Vinv = np.linalg.inv(V)
    t.setflags(write=False)
    Vinv.setflags(write=False)
    return t, Vinv


@dataclass(frozen=True)
class PiecewisePoly1D:
    """Piecewise polynomial on ``breakpoints``; zero outside ``[a, b]``.

    ``coeffs[j, k]`` multiplies ``t**k`` with ``t = (x - mid_j) / half_j`` the
    local coordinate of segment ``j``.
    """

    breakpoints: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float)
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if bp.ndim != 1 or len(bp) < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if c.shape[0] != len(bp) - 1:
            raise ValueError("one coefficient row per segment required")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_function(cls, breakpoints, f, degree: int) -> "PiecewisePoly1D":
        """Interpolate ``f`` at Chebyshev points of every segment."""
        bp = np.asarray(breakpoints, dtype=float)
        t, Vinv = _cheb_fit_matrix(degree + 1)
        mid = 0.5 * (bp[:-1] + bp[1:])
        half = 0.5 * np.diff(bp)
        x = mid[:, None] + half[:, None] * t[None, :]
        vals = np.asarray(f(x), dtype=float)
        return cls(bp, vals @ Vinv.T)

    @classmethod
    def constant(cls, breakpoints, value: float = 1.0) -> "PiecewisePoly1D":
        bp = np.asarray(breakpoints, dtype=float)
        return cls(bp, np.full((len(bp) - 1, 1), float(value)))

    @property
    def a(self) -> float:
        return float(self.breakpoints[0])

    @property
    def b(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.diff(self.breakpoints)

    def segment_of(self, x) -> np.ndarray:
        j = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(j, 0, len(self.breakpoints) - 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j = self.segment_of(x)
        t = (x - self.mid[j]) / self.half[j]
        val = _polyval_t(self.coeffs[j], t)
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, val, 0.0)

    def side_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Values at the left and right end of every segment."""
        c = self.coeffs
        signs = (-1.0) ** np.arange(c.shape[1])
        return c @ signs, c.sum(axis=1)

    def jumps(self) -> np.ndarray:
        """``u(x_j+) - u(x_j-)`` at every breakpoint, zero extension outside."""
        left, right = self.side_values()
        out = np.zeros(len(self.breakpoints))
        out[:-1] += left
        out[1:] -= right
        return out

    def derivative(self) -> "PiecewisePoly1D":
        d = _dcoef(self.coeffs) / self.half[:, None]
        return PiecewisePoly1D(self.breakpoints, d)

    def tempered_derivative(self, lam: float, sign: float = 1.0) -> "PiecewisePoly1D":
        """Segment-wise ``lam * u + sign * u'``."""
        d = _dcoef(self.coeffs) / self.half[:, None]
        return PiecewisePoly1D(self.breakpoints, lam * self.coeffs + sign * d)

    def mirrored(self) -> "PiecewisePoly1D":
        """``v(s) = u(a + b - s)`` on the mirrored breakpoints."""
        bp = self.a + self.b - self.breakpoints[::-1]
        signs = (-1.0) ** np.arange(self.coeffs.shape[1])
        return PiecewisePoly1D(bp, self.coeffs[::-1] * signs)


# ---------------------------------------------------------------------------
# point evaluation


def _anchored(u: PiecewisePoly1D, j: int, c: float, x: float, nu: float, lam: float) -> float:
    """(1/Gamma(nu)) int_c^x (x-xi)^(nu-1) e^(-lam(x-xi)) p_j(xi) dxi.

    ``p_j`` (segment j's polynomial) is used as is, even outside its segment.
    """
    d = x - c
    if d <= 0.0:
        return 0.0
    s, w = _unit_jacobi(_n_points(u.degree, lam * d), float(nu - 1.0))
    xi = x - d * s
    t = (xi - u.mid[j]) / u.half[j]
    vals = _polyval_t(u.coeffs[j], t)
    return d**nu / math.gamma(nu) * float(np.dot(w * np.exp(-lam * d * s), vals))


def _direct(u: PiecewisePoly1D, j: int, x: float, nu: float, lam: float) -> float:
    # Gauss-Legendre on segment j which lies well to the left of x
    s0, s1 = u.breakpoints[j], u.breakpoints[j + 1]
    n = _n_points(u.degree, lam * (s1 - s0)) + 4
    z, w = _legendre(n)
    xi = u.mid[j] + u.half[j] * z
    r = x - xi
    vals = _polyval_t(u.coeffs[j], z)
    kern = r ** (nu - 1.0) * np.exp(-lam * r)
    return u.half[j] * float(np.dot(w * kern, vals)) / math.gamma(nu)


def _left_integral(u: PiecewisePoly1D, nu: float, lam: float, x: float) -> float:
    bp = u.breakpoints
    total = 0.0
    for j in range(len(bp) - 1):
        s0, s1 = bp[j], bp[j + 1]
        if s0 >= x:
            break
        if x <= s1:
            total += _anchored(u, j, s0, x, nu, lam)
        elif x - s1 >= s1 - s0:
            total += _direct(u, j, x, nu, lam)
        else:
            total += _anchored(u, j, s0, x, nu, lam) - _anchored(u, j, s1, x, nu, lam)
    return total


def _check_side(side: str) -> None:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def _check_inside(u: PiecewisePoly1D, x: float) -> None:
    tol = 1e-13 * (u.b - u.a)
    if x < u.a - tol or x > u.b + tol:
        raise OutOfDomainError(f"x = {x} outside [{u.a}, {u.b}]")


def tempered_integral(
    u: PiecewisePoly1D, mu: float, lam: float, x: float, side: str = "left"
) -> float:
    """Tempered Riemann-Liouville integral of order ``mu`` at ``x``.

    ``side='left'`` integrates over ``[a, x]`` with kernel
    ``(x - xi)**(mu - 1) exp(-lam (x - xi)) / Gamma(mu)``; ``'right'`` is the
    mirror image over ``[x, b]``.
    """
    if not mu > 0:
        raise InvalidOrderError(f"integral order must be positive, got {mu}")
    _check_side(side)
    x = float(x)
    _check_inside(u, x)
    x = min(max(x, u.a), u.b)
    if side == "right":
        return _left_integral(u.mirrored(), mu, lam, u.a + u.b - x)
    return _left_integral(u, mu, lam, x)


def _check_derivative_args(u: PiecewisePoly1D, mu: float, x: float, side: str) -> None:
    if not 0.0 < mu < 1.0:
        raise InvalidOrderError(f"derivative order must lie in (0, 1), got {mu}")
    _check_side(side)
    _check_inside(u, x)
    tol = 1e-14 * (u.b - u.a)
    if np.min(np.abs(u.breakpoints - x)) <= tol:
        raise SingularPointError(f"x = {x} coincides with a breakpoint")


def tempered_caputo_derivative(
    u: PiecewisePoly1D, mu: float, lam: float, x: float, side: str = "left"
) -> float:
    """``I^{1-mu,lam} (lam + D) u`` (left) or ``I^{1-mu,lam} (lam - D) u`` (right).

    Only segment-interior derivatives enter; jumps are ignored.
    """
    x = float(x)
    _check_derivative_args(u, mu, x, side)
    if side == "right":
        u, x = u.mirrored(), u.a + u.b - x
    q = u.tempered_derivative(lam)
    return _left_integral(q, 1.0 - mu, lam, x)


def tempered_rl_derivative(
    u: PiecewisePoly1D, mu: float, lam: float, x: float, side: str = "left"
) -> float:
    """``(lam + D) I^{1-mu,lam} u`` (left) or ``(lam - D) I^{1-mu,lam} u`` (right).

    Evaluated as the Caputo part plus one kernel term
    ``c (x - x_j)**(-mu) exp(-lam (x - x_j)) / Gamma(1 - mu)`` for every jump
    ``c`` at a breakpoint ``x_j`` on the integration side of ``x``, including
    the jump from zero at the boundary.
    """
    x = float(x)
    _check_derivative_args(u, mu, x, side)
    if side == "right":
        u, x = u.mirrored(), u.a + u.b - x
    q = u.tempered_derivative(lam)
    total = _left_integral(q, 1.0 - mu, lam, x)
    jumps = u.jumps()
    bp = u.breakpoints
    sel = bp < x
    r = x - bp[sel]
    total += float(np.sum(jumps[sel] * r ** (-mu) * np.exp(-lam * r))) / math.gamma(1.0 - mu)
    return total


# ---------------------------------------------------------------------------
# vectorized evaluation along a line through the mesh


def ray_left_parts(
    breaks: np.ndarray,
    coeffs: np.ndarray,
    mu: float,
    lam: float,
    xs: np.ndarray,
    targets: np.ndarray,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Left tempered RL derivative of every basis function on a line.

    Parameters
    ----------
    breaks
        ``(m+1,)`` increasing chord end points of the ``m`` elements met by the line.
    coeffs
        ``(m, nb, n+1)`` restriction of each element's ``nb`` basis functions,
        as polynomials in the local chord coordinate.
    xs, targets
        evaluation points and the chord index containing each of them
        (strictly inside the chord).

    Returns
    -------
    A, S
        arrays of shape ``(m, nb, len(xs))`` such that the derivative of basis
        function ``(j, i)`` at ``xs[k]`` equals
        ``(xs[k] - c0)**(-mu) * A[j, i, k] + S[j, i, k]`` where ``c0`` is the
        left end of the target chord.  ``A`` is nonzero only for the target
        element and its left neighbour; ``S`` is smooth on the target chord.
    """
    breaks = np.asarray(breaks, dtype=float)
    P = np.asarray(coeffs, dtype=float)
    xs = np.asarray(xs, dtype=float)
    targets = np.asarray(targets, dtype=np.intp)
    m, nb, K1 = P.shape
    X = len(xs)
    A = np.zeros((m, nb, X))
    S = np.zeros((m, nb, X))
    if X == 0:
        return A, S
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    half = 0.5 * np.diff(breaks)
    Q = lam * P + _dcoef(P) / half[:, None, None]
    signs = (-1.0) ** np.arange(K1)
    p_left = P @ signs  # (m, nb) value at left end of the chord
    p_right = P.sum(axis=2)
    g = math.gamma(1.0 - mu)
    powers = np.arange(K1)
    maxlen = float(np.max(np.diff(breaks)))
    # anchored integrals never span more than three chord lengths
    sig, om = _unit_jacobi((K1 - 1) // 2 + 6 + math.ceil(3.6 * lam * maxlen), float(-mu))
    # far elements are at least one own length away: a short rule suffices
    zG, wG = _legendre((K1 - 1) // 2 + 8 + math.ceil(lam * maxlen))
    # q_j at the Gauss-Legendre points of its own chord: (m, nb, G)
    qG = np.einsum("jbk,gk->jbg", Q, zG[:, None] ** powers)
    xiG = mid[:, None] + half[:, None] * zG[None, :]

    def anchored_sum(jidx, d, x):
        # sum_l om_l exp(-lam d s_l) q_j(x - d s_l) for per-point element jidx
        pts = x[:, None] - d[:, None] * sig[None, :]
        t = (pts - mid[jidx][:, None]) / half[jidx][:, None]
        V = t[..., None] ** powers
        E = np.exp(-lam * d[:, None] * sig[None, :]) * om[None, :]
        W = np.einsum("xlk,xl->xk", V, E)
        return np.einsum("xbk,xk->xb", Q[jidx], W)

    for lo in range(0, X, chunk):
        sl = slice(lo, min(lo + chunk, X))
        x = xs[sl]
        tg = targets[sl]
        ar = np.arange(sl.start, sl.stop)
        c0 = breaks[tg]
        d = x - c0
        ed = np.exp(-lam * d)
        # own element: everything anchored at c0
        J = anchored_sum(tg, d, x)
        A[tg, :, ar] = (d[:, None] * J + p_left[tg] * ed[:, None]) / g
        # left neighbour
        hn = tg >= 1
        if np.any(hn):
            jn = tg[hn] - 1
            xn, dn_, arn = x[hn], d[hn], ar[hn]
            Jn = anchored_sum(jn, dn_, xn)
            A[jn, :, arn] = -(dn_[:, None] * Jn + p_right[jn] * ed[hn][:, None]) / g
            dl = xn - breaks[jn]
            Jl = anchored_sum(jn, dl, xn)
            S[jn, :, arn] = (
                dl[:, None] ** (1.0 - mu) * Jl
                + p_left[jn] * (dl ** (-mu) * np.exp(-lam * dl))[:, None]
            ) / g
        # elements further left
        if np.max(tg) >= 2:
            jj = np.arange(m)
            valid = jj[:, None] <= tg[None, :] - 2  # (m, x)
            r = x[None, :, None] - xiG[:, None, :]  # (m, x, G)
            r = np.where(valid[:, :, None], r, 1.0)
            kern = np.exp(-mu * np.log(r) - lam * r) * (wG * half[:, None])[:, None, :]
            kern = np.where(valid[:, :, None], kern, 0.0)
            part = np.einsum("jbg,jxg->jbx", qG, kern) / g
            rl = np.where(valid, x[None, :] - breaks[:-1, None], 1.0)
            rr = np.where(valid, x[None, :] - breaks[1:, None], 1.0)
            kl = np.where(valid, rl ** (-mu) * np.exp(-lam * rl), 0.0) / g
            kr = np.where(valid, rr ** (-mu) * np.exp(-lam * rr), 0.0) / g
            part += p_left[:, :, None] * kl[:, None, :] - p_right[:, :, None] * kr[:, None, :]
            # near elements: the Gauss-Legendre rule above is not accurate
            near = valid & ((c0[None, :] - breaks[1:, None]) < (breaks[1:, None] - breaks[:-1, None]))
            if np.any(near):
                nj, nx = np.nonzero(near)
                xx = x[nx]
                d0 = xx - breaks[nj]
                d1 = xx - breaks[nj + 1]
                F0 = d0[:, None] ** (1.0 - mu) * anchored_sum(nj, d0, xx)
                F1 = d1[:, None] ** (1.0 - mu) * anchored_sum(nj, d1, xx)
                jumpk = (
                    p_left[nj] * (d0 ** (-mu) * np.exp(-lam * d0))[:, None]
                    - p_right[nj] * (d1 ** (-mu) * np.exp(-lam * d1))[:, None]
                )
                part[nj, :, nx] = (F0 - F1 + jumpk) / g
            S[:, :, sl] += part
    return A, S


def ray_right_parts(
    breaks: np.ndarray,
    coeffs: np.ndarray,
    mu: float,
    lam: float,
    xs: np.ndarray,
    targets: np.ndarray,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Right-sided counterpart of :func:`ray_left_parts`.

    The singular part is ``(c1 - xs[k])**(-mu) * A`` with ``c1`` the right end
    of the target chord.
    """
    breaks = np.asarray(breaks, dtype=float)
    P = np.asarray(coeffs, dtype=float)
    m = P.shape[0]
    signs = (-1.0) ** np.arange(P.shape[2])
    A, S = ray_left_parts(
        -breaks[::-1],
        P[::-1] * signs,
        mu,
        lam,
        -np.asarray(xs, dtype=float),
        m - 1 - np.asarray(targets, dtype=np.intp),
        chunk,
    )
    return A[::-1], S[::-1]


# ---------------------------------------------------------------------------
# smooth functions (manufactured data)


def _panel_rule(rmax: np.ndarray, scale: float, levels: int, n: int):
    """Quadrature in ``r = x - xi`` over ``[0, rmax]`` with panels graded toward 0.

    Returns ``(r, w, first)`` of shape ``(X, P, n)``; ``first`` flags the
    innermost panel, whose nodes come from a Jacobi rule supplied by the caller.
    """
    top = float(np.max(rmax))
    inner = [scale * 2.0 ** (-k) for k in range(levels, 0, -1)]
    edges = [0.0] + [e for e in inner if e < top]
    e = scale
    while e < top:
        edges.append(e)
        e += scale
    edges.append(top)
    edges = np.array(sorted(set(edges)))
    lo = edges[:-1][None, :]
    hi = np.minimum(edges[1:][None, :], rmax[:, None])
    hi = np.maximum(hi, lo)
    return lo, hi


def function_integral(
    g: Callable[[np.ndarray], np.ndarray],
    a: float,
    xs,
    nu: float,
    lam: float,
    scale: float = 0.05,
    n: int = 12,
) -> np.ndarray:
    """Left tempered integral of order ``nu`` of a smooth callable.

    ``g`` receives arrays of shape ``(X, P, n)`` of abscissae ``xi`` and must
    broadcast against them.  Composite Gauss rules with panels no longer
    than ``scale`` resolve steep layers; panels are graded geometrically
    toward ``x`` and the innermost panel uses a Gauss-Jacobi rule.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    rmax = xs - a
    if np.any(rmax < -1e-14):
        raise OutOfDomainError("evaluation point left of the lower terminal")
    rmax = np.maximum(rmax, 0.0)
    lo, hi = _panel_rule(rmax, scale, 6, n)
    length = hi - lo
    zl, wl = _legendre(n)
    sj, wj = _unit_jacobi(n, float(nu - 1.0))
    first = np.zeros(lo.shape[1], dtype=bool)
    first[0] = True
    # innermost panel: r = length * s with weight s^(nu-1)
    r = np.where(
        first[None, :, None],
        length[:, :, None] * sj[None, None, :],
        lo[:, :, None] + 0.5 * length[:, :, None] * (1.0 + zl[None, None, :]),
    )
    w = np.where(
        first[None, :, None],
        length[:, :, None] ** nu * wj[None, None, :],
        0.5 * length[:, :, None] * wl[None, None, :] * np.where(r > 0, r, 1.0) ** (nu - 1.0),
    )
    w = w * np.exp(-lam * r)
    vals = g(xs[:, None, None] - r)
    return np.sum(w * vals, axis=(1, 2)) / math.gamma(nu)


def function_derivative(
    u: Callable[[np.ndarray], np.ndarray],
    du: Callable[[np.ndarray], np.ndarray],
    a: float,
    xs,
    mu: float,
    lam: float,
    scale: float = 0.05,
    n: int = 12,
    d2u: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Left tempered RL derivative of order ``mu`` in (0, 2) of a smooth function.

    The callables follow the broadcasting convention of
    :func:`function_integral`: their argument has a leading axis matching
    ``xs``.  Uses the Caputo form plus the boundary terms at ``a``; for ``mu > 1`` the
    second derivative ``d2u`` is required.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    r = np.maximum(xs - a, 1e-300)
    at_a = np.full((len(xs), 1, 1), float(a))
    ua = np.broadcast_to(u(at_a), at_a.shape).reshape(len(xs))
    if mu < 1.0:
        val = function_integral(lambda s: lam * u(s) + du(s), a, xs, 1.0 - mu, lam, scale, n)
        if np.any(ua != 0.0):
            val = val + ua * r ** (-mu) * np.exp(-lam * r) / math.gamma(1.0 - mu)
        return val
    if mu == 1.0 or mu >= 2.0:
        raise InvalidOrderError(f"order {mu} not supported")
    if d2u is None:
        raise ValueError("second derivative required for orders above 1")
    val = function_integral(
        lambda s: lam * lam * u(s) + 2.0 * lam * du(s) + d2u(s), a, xs, 2.0 - mu, lam, scale, n
    )
    dua = np.broadcast_to(du(at_a), at_a.shape).reshape(len(xs)) + lam * ua
    val = val + np.exp(-lam * r) * (
        ua * r ** (-mu) / math.gamma(1.0 - mu) + dua * r ** (1.0 - mu) / math.gamma(2.0 - mu)
    )
    return val
