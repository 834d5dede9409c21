"""Property checks of the tempered calculus and the fractional bilinear form.

Each check compares two independent routes (point evaluation against
adaptive quadrature, closed forms, finite differences of the integral) and
reports the worst relative discrepancy against its tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from .assembly import QuadratureSettings, fractional_gram
from .dg_space import DgFunction, DgSpace, seminorm_sq
from .mesh import build_interval_mesh
from .tempered_calc import (
    PiecewisePoly1D,
    TemperedParams,
    tempered_caputo_derivative,
    tempered_integral,
    tempered_rl_derivative,
)

__all__ = [
    "CheckResult",
    "check_adjointness",
    "check_semigroup",
    "check_rl_caputo",
    "check_zero_tempering",
    "check_coercivity",
    "run_suite",
]

A, B = 0.0, 1.5

# for lam = 0 the constant is attained in the limit, so the check resolves
# the ratio only up to the quadrature error of both Gram matrices
FINE_QUAD = QuadratureSettings(extra=8, levels=3)
COERCIVITY_TOL = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{tag} {self.name}: {self.value:.3e} <= {self.tol:.1e}{extra}"


def _poly(coef: np.ndarray, bp=(A, B)) -> PiecewisePoly1D:
    """Global polynomial ``sum c_k (x - A)^k`` stored on the breakpoints ``bp``."""
    deg = len(coef) - 1
    return PiecewisePoly1D.from_function(bp, lambda x: np.polyval(coef[::-1], x - A), max(deg, 1))


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _quad_alg(f, lo, hi, wa, wb) -> float:
    # int_lo^hi (x-lo)^wa (hi-x)^wb f(x) dx for smooth f
    eps = 1e-12 * (hi - lo)

    def g(x):
        # the endpoint rule of QAWS may sample the terminals themselves
        return f(min(max(x, lo + eps), hi - eps))

    val, _ = integrate.quad(g, lo, hi, weight="alg", wvar=(wa, wb), epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def check_adjointness(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    """``(aD u, v) = (u, xD v)`` for ``u(a) = 0`` and ``v(b) = 0``."""
    worst = 0.0
    for _ in range(trials):
        mu = float(rng.uniform(0.15, 0.85))
        lam = float(rng.choice([0.0, rng.uniform(0.1, 3.0)]))
        p = rng.normal(size=4)
        q = rng.normal(size=4)
        u = _poly(np.concatenate([[0.0], p]))  # (x-a) p(x)
        # v = (b - x) q(x), in powers of (x - a)
        L = B - A
        vc = np.zeros(5)
        vc[:4] += L * q
        vc[1:] -= q
        v = _poly(vc)

        def qv(x):
            return np.polyval(q[::-1], x - A)

        def pv(x):
            return np.polyval(p[::-1], x - A)

        lhs = _quad_alg(
            lambda x: tempered_rl_derivative(u, mu, lam, x) / (x - A) ** (1 - mu) * qv(x), A, B, 1 - mu, 1
        )
        rhs = _quad_alg(
            lambda x: pv(x) * tempered_rl_derivative(v, mu, lam, x, "right") / (B - x) ** (1 - mu), A, B, 1, 1 - mu
        )
        worst = max(worst, _rel(lhs, rhs))
    return CheckResult("adjointness", worst, 1e-9, f"{trials} random pairs")


def check_semigroup(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    """``I^mu I^nu u = I^{mu+nu} u`` with the outer integral by adaptive quadrature."""
    worst = 0.0
    for _ in range(trials):
        mu, nu = (float(v) for v in rng.uniform(0.2, 0.9, size=2))
        lam = float(rng.uniform(0.0, 2.0))
        u = _poly(rng.normal(size=4), bp=(A, 0.5, 1.0, B))
        for x in (0.7, 1.3):

            def f(s):
                return math.exp(-lam * (x - s)) * tempered_integral(u, nu, lam, s) / (s - A) ** nu

            outer = _quad_alg(f, A, x, nu, mu - 1.0) / math.gamma(mu)
            worst = max(worst, _rel(outer, tempered_integral(u, mu + nu, lam, x)))
    return CheckResult("semigroup", worst, 1e-9, f"{trials} random (mu, nu, lam)")


def _fd_derivative(g, x: float, h: float = 0.02) -> float:
    # 8th order central difference
    c = (4 / 5, -1 / 5, 4 / 105, -1 / 280)
    return sum(ck * (g(x + (k + 1) * h) - g(x - (k + 1) * h)) for k, ck in enumerate(c)) / h


def check_rl_caputo(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    """For continuous ``u`` with ``u(a) = 0`` the RL and Caputo forms agree.

    Both are also compared with ``(lam + D) I^{1-mu} u`` where ``D`` is a
    finite difference of the tempered integral.
    """
    worst = 0.0
    for _ in range(trials):
        mu = float(rng.uniform(0.1, 0.9))
        lam = float(rng.uniform(0.0, 2.0))
        u = _poly(np.concatenate([[0.0], rng.normal(size=4)]), bp=(A, 0.4, 0.9, B))
        for x in (0.25, 0.65, 1.2):
            rl = tempered_rl_derivative(u, mu, lam, x)
            cap = tempered_caputo_derivative(u, mu, lam, x)

            def g(s):
                return tempered_integral(u, 1.0 - mu, lam, s)

            fd = lam * g(x) + _fd_derivative(g, x)
            scale = max(abs(rl), 1.0)
            worst = max(worst, abs(rl - cap) / scale, abs(rl - fd) / scale)
    return CheckResult("rl_equals_caputo", worst, 1e-8, "u(a) = 0, continuous")


def check_zero_tempering(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    """``lam = 0`` reproduces the classical power rule for integrals and derivatives."""
    worst = 0.0
    for _ in range(trials):
        mu = float(rng.uniform(0.1, 0.9))
        c = rng.normal(size=5)
        u = _poly(c)
        k = np.arange(len(c))
        for x in (0.3, 0.8, 1.4):
            r = x - A
            d = float(np.sum(c * _gamma_ratio(k, -mu) * r ** (k - mu)))
            i = float(np.sum(c * _gamma_ratio(k, mu) * r ** (k + mu)))
            worst = max(worst, _rel(tempered_rl_derivative(u, mu, 0.0, x), d))
            worst = max(worst, _rel(tempered_integral(u, mu, 0.0, x), i))
    p = TemperedParams(0.7, 0.4, lam=0.0)
    worst = max(worst, abs(p.kappa))
    return CheckResult("zero_tempering", worst, 1e-12, "power rule, kappa = 0")


def _gamma_ratio(k: np.ndarray, mu: float) -> np.ndarray:
    # Gamma(k+1) / Gamma(k+1+mu)
    return np.array([math.gamma(j + 1) / math.gamma(j + 1 + mu) for j in k])


def left_gram(space: DgSpace, mu: float, lam: float, n: int = 12) -> np.ndarray:
    """``L[i, j] = sum_T (aD l_i, aD l_j)_T`` by polarisation of the broken seminorm."""
    n = space.ndof
    q = np.empty(n)
    E = np.eye(n)
    for i in range(n):
        q[i] = seminorm_sq(DgFunction(space, E[i]), "x", mu, lam, n_s=n, n_o=n)
    L = np.diag(q)
    for i in range(n):
        for j in range(i + 1, n):
            s = seminorm_sq(DgFunction(space, E[i] + E[j]), "x", mu, lam, n_s=n, n_o=n)
            L[i, j] = L[j, i] = 0.5 * (s - q[i] - q[j])
    return L


def check_coercivity(alphas=(0.2, 0.5, 0.8), lams=(0.0, 1.0), K: int = 4, degree: int = 1) -> CheckResult:
    """``(aD u, xD u) >= cos(pi alpha / 2) ||aD u||^2`` (half orders) on a DG space.

    The worst margin over the generalised eigenvalues of ``(sym G, L)`` is
    reported as ``max(0, cos - lambda_min) / cos``.
    """
    sp = DgSpace(build_interval_mesh(A, B, K), degree)
    worst = 0.0
    ratios = []
    for alpha in alphas:
        c = math.cos(math.pi * alpha / 2.0)
        for lam in lams:
            G = fractional_gram(sp, "x", 0.5 * alpha, lam, FINE_QUAD).toarray()
            L = left_gram(sp, 0.5 * alpha, lam)
            ev = linalg.eigh(0.5 * (G + G.T), L, eigvals_only=True)
            ratios.append(ev.min() / c)
            worst = max(worst, max(0.0, c - ev.min()) / c)
    return CheckResult("coercivity", worst, COERCIVITY_TOL, f"min ratio to cos(pi alpha/2) = {min(ratios):.8f}")


def run_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_adjointness(rng),
        check_semigroup(rng),
        check_rl_caputo(rng),
        check_zero_tempering(rng),
        check_coercivity(),
    ]
