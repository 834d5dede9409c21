"""Model problems with known solutions and their manufactured sources.

Sources are obtained by applying the continuous operator to the exact
solution with the smooth-function path of :mod:`tempered_calc`, which is
independent of the assembly code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import gamma as Gamma
from scipy.special import hyp2f1

from .errors import ConfigError
from .tempered_calc import TemperedParams, function_derivative, riesz_constants

__all__ = [
    "Factor",
    "Problem",
    "SeparableProblem",
    "BoundaryLayer1D",
    "ArcLayer2D",
    "make_problem",
    "PROBLEMS",
    "riesz_pair",
]


@dataclass(frozen=True)
class Factor:
    """A function ``g(s, t)`` on an interval with its derivatives."""

    g: Callable
    gs: Callable
    gss: Callable
    gt: Callable
    scale: float = 0.05
    """Panel width used by the singular quadrature (resolve steep layers)."""


def riesz_pair(
    fac: Factor, t: float, s: np.ndarray, lo: float, hi: float, mu: float, lam: float, n: int = 12
) -> tuple[np.ndarray, np.ndarray]:
    """Left and right tempered derivatives of ``fac.g(., t)`` on ``[lo, hi]`` at ``s``."""
    s = np.asarray(s, dtype=float)
    g = lambda x: fac.g(x, t)
    gs = lambda x: fac.gs(x, t)
    gss = lambda x: fac.gss(x, t)
    left = function_derivative(g, gs, lo, s, mu, lam, fac.scale, n, gss)
    # right derivative = left derivative of the reflection v(r) = g(lo + hi - r)
    right = function_derivative(
        lambda r: g(lo + hi - r),
        lambda r: -gs(lo + hi - r),
        lo,
        lo + hi - s,
        mu,
        lam,
        fac.scale,
        n,
        lambda r: gss(lo + hi - r),
    )
    return left, right


@dataclass
class Problem:
    """Base class: exact solution ``u(x[, y], t)`` and data of the model."""

    name: str
    dim: int
    domain: tuple
    params: TemperedParams
    stationary: bool = False
    T: float = 1.0
    one_sided: bool = False
    """Only the left fractional derivative appears (dual has the right one)."""
    time_profile: Callable | None = None
    """``f(x, t) = time_profile(t) * f(x, 0)`` when the source separates in time."""
    _cache: dict = field(default_factory=dict, repr=False)

    def exact(self, *coords, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def source(self, pts: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Manufactured right-hand side at points ``(P, dim)``."""
        raise NotImplementedError

    def exact_half_derivative(self, axis: str) -> Callable:
        """Left derivative of half order (alpha/2 or beta/2) of the exact solution."""
        raise NotImplementedError

    def initial(self, *coords) -> np.ndarray:
        return self.exact(*coords, t=0.0)

    @property
    def area(self) -> float:
        d = self.domain
        return (d[1] - d[0]) * (d[3] - d[2]) if self.dim == 2 else d[1] - d[0]

    def source_on(self, space, t: float = 0.0) -> np.ndarray:
        """Source values ``(K, nq)`` at the volume quadrature points (cached)."""
        if self.time_profile is not None and t != 0.0:
            return self.time_profile(t) * self.source_on(space, 0.0)
        key = (id(space), float(t))
        hit = self._cache.get(key)
        if hit is not None and hit[0] is space:
            return hit[1]
        pts = space.quad_points
        vals = self.source(pts.reshape(-1, self.dim), t).reshape(pts.shape[:-1])
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = (space, vals)
        return vals

    def load_on(self, space, t: float = 0.0) -> np.ndarray:
        """Load vector of the source; in 1D the boundary elements use a graded rule."""
        from .assembly import assemble_load, assemble_load_graded

        if self.dim == 1:
            return assemble_load_graded(space, lambda x: self.source(np.asarray(x)[:, None], t))
        return assemble_load(space, self.source_on(space, t))

    def source_average_on(self, space, t0: float, t1: float, n: int = 3) -> np.ndarray:
        """Time average of the source over ``[t0, t1]`` (Gauss-Legendre in time)."""
        z, w = np.polynomial.legendre.leggauss(n)
        tt = t0 + 0.5 * (t1 - t0) * (z + 1.0)
        return sum(0.5 * wi * self.source_on(space, ti) for wi, ti in zip(w, tt))

    def with_params(self, **kw) -> "Problem":
        return replace(self, params=replace(self.params, **kw), _cache={})


@dataclass
class SeparableProblem(Problem):
    """``u = gx(x, t) * gy(y, t)`` (``gy`` absent in 1D)."""

    gx: Factor | None = None
    gy: Factor | None = None

    def exact(self, *coords, t: float = 0.0):
        x = np.asarray(coords[0], dtype=float)
        v = self.gx.g(x, t)
        if self.dim == 2:
            v = v * self.gy.g(np.asarray(coords[1], dtype=float), t)
        return v

    def _axis_term(self, fac: Factor, s, lo, hi, order, lam, t):
        us, inv = np.unique(s, return_inverse=True)
        left, right = riesz_pair(fac, t, us, lo, hi, order, lam)
        if self.one_sided:
            return left[inv]
        return (left + right)[inv]

    def source(self, pts, t: float = 0.0):
        p = self.params
        pts = np.atleast_2d(pts)
        x = pts[:, 0]
        d = self.domain
        gx = self.gx.g(x, t)
        ka, kb, _ = riesz_constants(p)
        if self.stationary:
            cx, cy = 1.0, 1.0
        else:
            cx, cy = p.kappa1 * ka, p.kappa2 * kb
        Dx = self._axis_term(self.gx, x, d[0], d[1], p.alpha, p.lam, t)
        if self.dim == 1:
            f = cx * Dx
            if not self.stationary:
                f = f + self.gx.gt(x, t) + p.b[0] * self.gx.gs(x, t) - 2.0 * cx * p.lam**p.alpha * gx
            return f
        y = pts[:, 1]
        gy = self.gy.g(y, t)
        Dy = self._axis_term(self.gy, y, d[2], d[3], p.beta, p.lam, t)
        f = cx * Dx * gy + cy * Dy * gx
        if not self.stationary:
            f = (
                f
                + self.gx.gt(x, t) * gy
                + gx * self.gy.gt(y, t)
                + p.b[0] * self.gx.gs(x, t) * gy
                + p.b[1] * gx * self.gy.gs(y, t)
                - 2.0 * (cx * p.lam**p.alpha + cy * p.lam**p.beta) * gx * gy
            )
        return f

    def exact_half_derivative(self, axis: str) -> Callable:
        p = self.params
        d = self.domain
        fac, other, mu, lo, hi = (
            (self.gx, self.gy, 0.5 * p.alpha, d[0], d[1])
            if axis == "x"
            else (self.gy, self.gx, 0.5 * p.beta, d[2], d[3])
        )

        def deriv(*coords):
            s = np.asarray(coords[0 if axis == "x" else 1], dtype=float)
            us, inv = np.unique(s, return_inverse=True)
            left = function_derivative(
                lambda r: fac.g(r, self.T if not self.stationary else 0.0),
                lambda r: fac.gs(r, self.T if not self.stationary else 0.0),
                lo, us, mu, p.lam, fac.scale,
            )[inv]
            if self.dim == 1:
                return left
            o = np.asarray(coords[1 if axis == "x" else 0], dtype=float)
            return left * other.g(o, self.T if not self.stationary else 0.0)

        return deriv


@dataclass
class BoundaryLayer1D(Problem):
    """``D^alpha u = f`` on ``[0, 2]`` with ``u = (x (2 - x))**gam``."""

    gam: float = 0.7

    def exact(self, *coords, t: float = 0.0):
        x = np.asarray(coords[0], dtype=float)
        return np.clip(x * (2.0 - x), 0.0, None) ** self.gam

    def _frac(self, x, order):
        g = self.gam
        x = np.asarray(x, dtype=float)
        c = 2.0**g * Gamma(g + 1.0) / Gamma(g + 1.0 - order)
        return c * x ** (g - order) * hyp2f1(-g, g + 1.0, g + 1.0 - order, 0.5 * x)

    def source(self, pts, t: float = 0.0):
        return self._frac(np.atleast_2d(pts)[:, 0], self.params.alpha)

    def exact_half_derivative(self, axis: str) -> Callable:
        return lambda x: self._frac(x, 0.5 * self.params.alpha)


@dataclass
class ArcLayer2D(Problem):
    """Steady two-sided problem with an interior layer along ``x^2 + y^2 = 4``."""

    eps: float = 0.05
    scale: float = 0.05

    def _u(self, x, y):
        r = np.sqrt(x * x + y * y)
        return x * (x - 2.0) * y * (y - 2.0) * np.arctan((r - 2.0) / self.eps)

    def _ux(self, x, y):
        r = np.sqrt(x * x + y * y)
        z = (r - 2.0) / self.eps
        at = np.arctan(z)
        dat = 1.0 / (1.0 + z * z) / self.eps * x / np.where(r > 0, r, 1.0)
        return y * (y - 2.0) * ((2.0 * x - 2.0) * at + x * (x - 2.0) * dat)

    def exact(self, *coords, t: float = 0.0):
        return self._u(np.asarray(coords[0], dtype=float), np.asarray(coords[1], dtype=float))

    def _uy(self, x, y):
        return self._ux(y, x)

    def _deriv(self, s, o, axis, order, side):
        p = self.params
        lo, hi = (self.domain[0], self.domain[1]) if axis == "x" else (self.domain[2], self.domain[3])
        oo = o[:, None, None]
        if axis == "x":
            u = lambda r: self._u(r, oo)
            du = lambda r: self._ux(r, oo)
        else:
            u = lambda r: self._u(oo, r)
            du = lambda r: self._uy(oo, r)
        if side == "left":
            return function_derivative(u, du, lo, s, order, p.lam, self.scale)
        return function_derivative(
            lambda r: u(lo + hi - r), lambda r: -du(lo + hi - r), lo, lo + hi - s, order, p.lam, self.scale
        )

    def source(self, pts, t: float = 0.0, chunk: int = 512):
        pts = np.atleast_2d(pts)
        out = np.empty(len(pts))
        p = self.params
        for i in range(0, len(pts), chunk):
            x, y = pts[i : i + chunk, 0], pts[i : i + chunk, 1]
            v = self._deriv(x, y, "x", p.alpha, "left") + self._deriv(x, y, "x", p.alpha, "right")
            v += self._deriv(y, x, "y", p.beta, "left") + self._deriv(y, x, "y", p.beta, "right")
            out[i : i + chunk] = v
        return out

    def exact_half_derivative(self, axis: str) -> Callable:
        order = 0.5 * (self.params.alpha if axis == "x" else self.params.beta)

        def deriv(x, y, chunk: int = 512):
            x = np.asarray(x, dtype=float).ravel()
            y = np.asarray(y, dtype=float).ravel()
            out = np.empty(len(x))
            for i in range(0, len(x), chunk):
                sl = slice(i, i + chunk)
                if axis == "x":
                    out[sl] = self._deriv(x[sl], y[sl], "x", order, "left")
                else:
                    out[sl] = self._deriv(y[sl], x[sl], "y", order, "left")
            return out

        return deriv


# ---------------------------------------------------------------------------
# factors


def _poly_bump(c: float = 1.0) -> Callable:
    """``exp(-c t) s^2 (2-s)^2`` split evenly between the two factors."""
    g = lambda s, t: math.exp(-c * t) * s**2 * (2.0 - s) ** 2
    gs = lambda s, t: math.exp(-c * t) * (2.0 * s * (2.0 - s) ** 2 - 2.0 * s**2 * (2.0 - s))
    gss = lambda s, t: math.exp(-c * t) * (2.0 * (2.0 - s) ** 2 - 8.0 * s * (2.0 - s) + 2.0 * s**2)
    gt = lambda s, t: -c * g(s, t)
    return Factor(g, gs, gss, gt, scale=0.1)


def _sine(c: float = 0.5) -> Factor:
    k = 0.5 * math.pi
    g = lambda s, t: math.exp(-c * t) * np.sin(k * s)
    gs = lambda s, t: math.exp(-c * t) * k * np.cos(k * s)
    gss = lambda s, t: -math.exp(-c * t) * k * k * np.sin(k * s)
    gt = lambda s, t: -c * g(s, t)
    return Factor(g, gs, gss, gt, scale=0.1)


def _moving_bump(width: float = 0.005) -> Factor:
    def g(s, t):
        return s * (s - 2.0) * np.exp(-((s - t) ** 2) / width)

    def gs(s, t):
        e = np.exp(-((s - t) ** 2) / width)
        return e * ((2.0 * s - 2.0) - s * (s - 2.0) * 2.0 * (s - t) / width)

    def gss(s, t):
        e = np.exp(-((s - t) ** 2) / width)
        q = s * (s - 2.0)
        dq = 2.0 * s - 2.0
        a = -2.0 * (s - t) / width
        return e * (2.0 + 2.0 * dq * a + q * (a * a - 2.0 / width))

    def gt(s, t):
        return g(s, t) * 2.0 * (s - t) / width

    return Factor(g, gs, gss, gt, scale=0.02)


def _steady_poly() -> Factor:
    f = _poly_bump(0.0)
    return Factor(f.g, f.gs, f.gss, lambda s, t: 0.0 * s, scale=0.1)


def _decay(t: float) -> float:
    return math.exp(-t)


def _constant(t: float) -> float:
    return 1.0


def poly_2d(alpha=0.5, beta=0.5) -> SeparableProblem:
    """Decaying polynomial bump ``exp(-t) x^2 (2-x)^2 y^2 (2-y)^2`` with convection."""
    p = TemperedParams(alpha, beta, lam=2.0, kappa1=0.1, kappa2=0.2, b=(0.5, 0.5))
    return SeparableProblem(
        "poly2d", 2, (0.0, 2.0, 0.0, 2.0), p, time_profile=_decay, gx=_poly_bump(0.5), gy=_poly_bump(0.5)
    )


def sine_2d(alpha=1.5, beta=1.5) -> SeparableProblem:
    """Decaying product of sines, orders in (1, 2)."""
    p = TemperedParams(alpha, beta, lam=0.2, kappa1=0.1, kappa2=0.2, b=(0.5, 0.5))
    return SeparableProblem(
        "sine2d", 2, (0.0, 2.0, 0.0, 2.0), p, time_profile=_decay, gx=_sine(0.5), gy=_sine(0.5)
    )


def layer_1d(alpha=0.8, gam=0.7) -> BoundaryLayer1D:
    """Steady one-sided problem with boundary layers at both ends."""
    p = TemperedParams(alpha, alpha, lam=0.0)
    return BoundaryLayer1D("layer1d", 1, (0.0, 2.0), p, stationary=True, one_sided=True, gam=gam)


def arc_2d(alpha=0.2, beta=0.8) -> ArcLayer2D:
    """Steady problem with an interior layer along a circular arc."""
    p = TemperedParams(alpha, beta, lam=0.0)
    return ArcLayer2D("arc2d", 2, (0.0, 2.0, 0.0, 2.0), p, stationary=True)


def bump_2d(alpha=0.8, beta=0.8) -> SeparableProblem:
    """Narrow bump travelling along the diagonal ``(t, t)``."""
    p = TemperedParams(alpha, beta, lam=0.2, kappa1=0.1, kappa2=0.2, b=(0.0, 0.0))
    return SeparableProblem("bump2d", 2, (0.0, 2.0, 0.0, 2.0), p, gx=_moving_bump(), gy=_moving_bump())


def smooth_1d(alpha=0.8, lam=2.0) -> SeparableProblem:
    """Evolution on ``[0, 2]`` with ``u = exp(-t) x^2 (2-x)^2``."""
    p = TemperedParams(alpha, alpha, lam=lam, kappa1=1.0, kappa2=1.0, b=(0.5, 0.0))
    return SeparableProblem("smooth1d", 1, (0.0, 2.0), p, time_profile=_decay, gx=_poly_bump(1.0))


def steady_2d(alpha=0.6, beta=0.6, lam=1.0, b=(0.5, 0.5)) -> SeparableProblem:
    """Time-independent evolution problem (fixed point of the time stepping)."""
    p = TemperedParams(alpha, beta, lam=lam, kappa1=0.1, kappa2=0.2, b=b)
    return SeparableProblem(
        "steady2d", 2, (0.0, 2.0, 0.0, 2.0), p, time_profile=_constant, gx=_steady_poly(), gy=_steady_poly()
    )


PROBLEMS: dict[str, Callable[..., Problem]] = {
    "poly2d": poly_2d,
    "sine2d": sine_2d,
    "layer1d": layer_1d,
    "arc2d": arc_2d,
    "bump2d": bump_2d,
    "smooth1d": smooth_1d,
    "steady2d": steady_2d,
}


def make_problem(name: str, **kw) -> Problem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**kw)
