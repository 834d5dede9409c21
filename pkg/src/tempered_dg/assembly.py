"""Global matrices and load vectors of the interior-penalty DG scheme."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .dg_space import DgSpace, _field
from .errors import InvalidInputError, TemperedDGError
from .raycast import chord_rule
from .tempered_calc import TemperedParams, ray_left_parts, ray_right_parts, riesz_constants

__all__ = [
    "AssembledSystem",
    "QuadratureSettings",
    "assemble_mass",
    "assemble_convection",
    "assemble_fractional",
    "assemble_penalty",
    "assemble_load",
    "assemble_load_graded",
    "build_system",
    "fractional_gram",
    "dump_matrix",
    "shift_constant",
]

log = logging.getLogger(__name__)

_FLUSH = 20_000_000


@dataclass(frozen=True)
class QuadratureSettings:
    """Accuracy knobs of the nonlocal quadrature (points per panel, grading)."""

    extra: int = 3
    levels: int = 1
    ratio: float = 0.25

    def points(self, N: int) -> int:
        return N + self.extra


DEFAULT_QUAD = QuadratureSettings()


class _Accumulator:
    """Sum of scattered dense blocks, compressed periodically."""

    def __init__(self, n: int):
        self.n = n
        self.mat = sps.csr_matrix((n, n))
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.count = 0

    def add(self, rdofs: np.ndarray, cdofs: np.ndarray, block: np.ndarray) -> None:
        self.rows.append(np.repeat(rdofs, len(cdofs)))
        self.cols.append(np.tile(cdofs, len(rdofs)))
        self.vals.append(block.ravel())
        self.count += block.size
        if self.count > _FLUSH:
            self.flush()

    def flush(self) -> None:
        if self.rows:
            r = np.concatenate(self.rows)
            c = np.concatenate(self.cols)
            v = np.concatenate(self.vals)
            self.mat = self.mat + sps.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        self.rows, self.cols, self.vals, self.count = [], [], [], 0

    def result(self) -> sps.csr_matrix:
        self.flush()
        self.mat.sum_duplicates()
        return self.mat


def _block_diag(space: DgSpace, blocks: np.ndarray) -> sps.csr_matrix:
    K, Np = space.mesh.K, space.Np
    d = space.dofs(np.arange(K))
    r = np.repeat(d, Np, axis=1).ravel()
    c = np.tile(d, (1, Np)).ravel()
    return sps.csr_matrix((blocks.ravel(), (r, c)), shape=(space.ndof, space.ndof))


def assemble_mass(space: DgSpace) -> sps.csr_matrix:
    """Block-diagonal mass matrix ``(l_j, l_i)_T``."""
    return _block_diag(space, space.det[:, None, None] * space.ref_mass[None])


def _face_blocks(space: DgSpace, coef: np.ndarray):
    """Blocks ``sum_q coef * phi_a_i * phi_b_j`` for sides a, b in {1, 2}."""
    _, w, phi1, phi2 = space.face_quad
    cw = coef * w
    b11 = np.einsum("fq,fqi,fqj->fij", cw, phi1, phi1)
    b12 = np.einsum("fq,fqi,fqj->fij", cw, phi1, phi2)
    b21 = np.einsum("fq,fqi,fqj->fij", cw, phi2, phi1)
    b22 = np.einsum("fq,fqi,fqj->fij", cw, phi2, phi2)
    return b11, b12, b21, b22


def _scatter_faces(space: DgSpace, blocks: dict) -> sps.csr_matrix:
    fe = space.mesh.face_elements
    Np = space.Np
    rows, cols, vals = [], [], []
    for (a, b), B in blocks.items():
        ea, eb = fe[:, a], fe[:, b]
        ok = (ea >= 0) & (eb >= 0)
        if not np.any(ok):
            continue
        da = space.dofs(ea[ok])
        db = space.dofs(eb[ok])
        rows.append(np.repeat(da, Np, axis=1).ravel())
        cols.append(np.tile(db, (1, Np)).ravel())
        vals.append(B[ok].ravel())
    n = space.ndof
    if not rows:
        return sps.csr_matrix((n, n))
    return sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def assemble_convection(space: DgSpace, b) -> sps.csr_matrix:
    """Upwind DG convection ``b_h(u, v)``; row = test function, column = trial.

    Boundary faces see an exterior trace of zero.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))[: space.dim]
    n = space.ndof
    if not np.any(b):
        return sps.csr_matrix((n, n))
    # volume: -(b u, grad v)
    gref = space.grad_ref(space.quad[0])  # (q, Np, d)
    # physical gradient of test functions dotted with b: (K, q, Np)
    bg = np.einsum("kji,i,qpj->kqp", space.inv_jacobians, b, gref)
    vol = -np.einsum("kq,kqi,qj->kij", space.quad_weights, bg, space.phi_q)
    V = _block_diag(space, vol)
    bn = space.mesh.face_normals @ b  # (F,)
    up = bn >= 0.0
    nf = space.face_quad[1].shape[1]
    c1 = np.where(up, bn, 0.0)[:, None] * np.ones((1, nf))
    c2 = np.where(up, 0.0, bn)[:, None] * np.ones((1, nf))
    # (b.n) u_up [v] with [v] = v1 - v2
    b11, _, b21, _ = _face_blocks(space, c1)
    _, b12, _, b22 = _face_blocks(space, c2)
    F = _scatter_faces(space, {(0, 0): b11, (1, 0): -b21, (0, 1): b12, (1, 1): -b22})
    return (V + F).tocsr()


def assemble_penalty(space: DgSpace, sigma: float = 1.0) -> sps.csr_matrix:
    """``J0(u, v) = sigma * sum_e int_e [u][v]`` over interior and boundary faces."""
    nf = space.face_quad[1].shape[1]
    b11, b12, b21, b22 = _face_blocks(space, np.full((space.mesh.n_faces, nf), float(sigma)))
    return _scatter_faces(space, {(0, 0): b11, (0, 1): -b12, (1, 0): -b21, (1, 1): b22})


def assemble_load(space: DgSpace, f) -> np.ndarray:
    """Moments ``(f, l_j)_T``; ``f`` is a callable or its values ``(K, nq)`` at the volume points."""
    if callable(f):
        vals = _field(f, space.quad_points)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != space.quad_weights.shape:
            raise InvalidInputError("load values must match the volume quadrature points")
    return ((vals * space.quad_weights) @ space.phi_q).ravel()


def assemble_load_graded(space: DgSpace, f: Callable, levels: int = 16, ratio: float = 0.2) -> np.ndarray:
    """Load vector of a 1D source that may blow up at the ends of the interval.

    Every element gets a high order Gauss rule; on the two boundary elements
    it is applied on cells shrinking geometrically toward the boundary point,
    which resolves integrable endpoint singularities such as ``x^(-0.1)``.
    """
    if space.dim != 1:
        raise InvalidInputError("graded load assembly is one-dimensional")
    z, w = np.polynomial.legendre.leggauss(2 * space.degree + 8)
    ends = space.mesh.bbox[:, 0]
    xs = space.mesh.element_coords[:, :, 0]
    F = np.empty((space.mesh.K, space.Np))
    for k in range(space.mesh.K):
        lo, hi = xs[k].min(), xs[k].max()
        h = hi - lo
        if lo in ends or hi in ends:
            # distances from the boundary point: h, h r, ..., 0; the grading stops
            # where a source written in x alone would lose the distance to rounding
            floor = 1e-11 * max(1.0, float(np.max(np.abs(ends))))
            n_lev = int(min(levels, max(0, np.floor(np.log(floor / h) / np.log(ratio)))))
            d = np.concatenate([h * ratio ** np.arange(n_lev + 1), [0.0]])
        else:
            d = np.array([h, 0.0])
        end, sgn = (lo, 1.0) if lo in ends else (hi, -1.0)
        a, b = d[1:], d[:-1]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        pts = (end + sgn * (mid[:, None] + half[:, None] * z[None, :])).ravel()
        wts = (half[:, None] * w[None, :]).ravel()
        ref = space.to_reference(np.full(len(pts), k), pts[:, None])
        F[k] = (_field(f, pts[:, None]) * wts) @ space.eval_ref(ref.reshape(-1, 1))
    return F.ravel()


# kinds of singular weights on a chord; the flags say whether the trial (left)
# and test (right) factor is the singular coefficient or the smooth remainder
_GRAM_KINDS = ((True, True), (True, False), (False, True), (False, False))


def fractional_gram(
    space: DgSpace,
    axis: str,
    mu: float,
    lam: float,
    quad: QuadratureSettings = DEFAULT_QUAD,
) -> sps.csr_matrix:
    """``G[i, j] = int_Omega (aD^{mu,lam} l_j)(xD^{mu,lam} l_i)`` along ``axis``.

    Rows are test functions.  The left derivative of a trial function only
    reaches rightward, so along every line the coupling is upper triangular
    in the element order.
    """
    if not 0.0 < mu < 1.0:
        raise InvalidInputError(f"half order must lie in (0, 1), got {mu}")
    N = space.degree
    Np = space.Np
    n = quad.points(N)
    kinds = [(mu if l else 0.0, mu if r else 0.0) for l, r in _GRAM_KINDS]
    useA_L = np.array([k[0] for k in _GRAM_KINDS])
    useA_R = np.array([k[1] for k in _GRAM_KINDS])
    acc = _Accumulator(space.ndof)
    lines = chord_rule(space.mesh, axis, kinds, n, n, quad.levels, quad.ratio)
    for line in lines:
        seg = line.seg
        P = space.chord_coeffs(seg, axis)
        lo, hi = int(line.target.min()), int(line.target.max())
        # trial functions left of the last target, test functions right of the first
        PL = P[: hi + 1]
        AL, SL = ray_left_parts(seg.breaks[: hi + 2], PL, mu, lam, line.s, line.target)
        PR = P[lo:]
        AR, SR = ray_right_parts(seg.breaks[lo:], PR, mu, lam, line.s, line.target - lo)
        L = np.where(useA_L[line.kind], AL, SL).reshape(-1, len(line.s))
        R = np.where(useA_R[line.kind], AR, SR).reshape(-1, len(line.s))
        block = (R * line.weight) @ L.T
        rd = space.dofs(seg.elements[lo:]).ravel()
        cd = space.dofs(seg.elements[: hi + 1]).ravel()
        acc.add(rd, cd, block)
    return acc.result()


def assemble_fractional(
    space: DgSpace,
    params: TemperedParams,
    coefficients: tuple[float, float] | None = None,
    quad: QuadratureSettings = DEFAULT_QUAD,
    grams: dict | None = None,
    one_sided: bool = False,
) -> sps.csr_matrix:
    """Symmetrised fractional stiffness ``kx (Gx + Gx^T) + ky (Gy + Gy^T)``.

    The default coefficients are ``kappa1 * kappa_alpha`` and
    ``kappa2 * kappa_beta``; the untempered stationary problems use ``(1, 1)``.
    Precomputed Gram matrices may be passed in ``grams`` (keys ``'x'``, ``'y'``).
    ``one_sided`` keeps only the left derivative: ``(aD^alpha u, v) = G[v, u]``.
    """
    ka, kb, _ = riesz_constants(params)
    cx, cy = coefficients if coefficients is not None else (params.kappa1 * ka, params.kappa2 * kb)
    grams = {} if grams is None else grams
    axes = [("x", 0.5 * params.alpha, cx)]
    if space.dim == 2:
        axes.append(("y", 0.5 * params.beta, cy))
    out = sps.csr_matrix((space.ndof, space.ndof))
    for axis, mu, c in axes:
        G = grams.get(axis)
        if G is None:
            G = fractional_gram(space, axis, mu, params.lam, quad)
            grams[axis] = G
        out = out + c * (G if one_sided else G + G.T)
    return out.tocsr()


def shift_constant(params: TemperedParams, dim: int) -> float:
    """``kappa`` of the zeroth-order shift; a 1D problem has no y operator."""
    ka, _, kappa = riesz_constants(params)
    if dim == 1:
        return 2.0 * params.lam**params.alpha * params.kappa1 * ka
    return kappa


@dataclass
class AssembledSystem:
    """All blocks of the discrete operator.

    ``A = G_frac + J0`` realises ``a_h`` and ``S`` the convection form, so the
    semi-discrete operator acting on ``u`` is ``S u + A u - kappa M u``.
    """

    space: DgSpace
    params: TemperedParams
    M: sps.csr_matrix
    S: sps.csr_matrix
    G_frac: sps.csr_matrix
    J0: sps.csr_matrix
    kappa: float
    grams: dict = field(default_factory=dict, repr=False)
    factors: dict = field(default_factory=dict, repr=False)
    """Sparse LU factorisations keyed by time step (``None`` for the steady matrix)."""

    def __post_init__(self):
        n = self.space.ndof
        for name in ("M", "S", "G_frac", "J0"):
            if getattr(self, name).shape != (n, n):
                raise TemperedDGError(f"block {name} has shape {getattr(self, name).shape}, expected {(n, n)}")

    @property
    def A(self) -> sps.csr_matrix:
        return (self.G_frac + self.J0).tocsr()

    def apply(self, u) -> np.ndarray:
        u = getattr(u, "coeffs", u)
        return self.S @ u + self.G_frac @ u + self.J0 @ u - self.kappa * (self.M @ u)

    def steady_matrix(self) -> sps.csr_matrix:
        return (self.S + self.G_frac + self.J0 - self.kappa * self.M).tocsr()

    def step_matrix(self, tau: float) -> sps.csr_matrix:
        return (self.M / tau + self.steady_matrix()).tocsr()

    def load(self, f) -> np.ndarray:
        return assemble_load(self.space, f)


def build_system(
    space: DgSpace,
    params: TemperedParams,
    stationary: bool = False,
    quad: QuadratureSettings = DEFAULT_QUAD,
    dump_dir: str | None = None,
    one_sided: bool = False,
) -> AssembledSystem:
    """Assemble every block for ``params``.

    ``stationary=True`` gives the untempered steady model: unit coefficients
    on both one-sided pairs, no convection and no ``kappa`` shift.
    ``one_sided`` drops the right derivative (steady model only).
    """
    M = assemble_mass(space)
    grams: dict = {}
    if stationary:
        S = sps.csr_matrix((space.ndof, space.ndof))
        G = assemble_fractional(space, params, (1.0, 1.0), quad, grams, one_sided)
        kappa = 0.0
    else:
        S = assemble_convection(space, params.b)
        G = assemble_fractional(space, params, None, quad, grams)
        kappa = shift_constant(params, space.dim)
    J0 = assemble_penalty(space)
    sys_ = AssembledSystem(space, params, M, S, G, J0, kappa, grams)
    dump_dir = dump_dir or os.environ.get("TEMPERED_DG_DUMP")
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        for name in ("M", "S", "G_frac", "J0"):
            dump_matrix(getattr(sys_, name), os.path.join(dump_dir, f"{name}.txt"))
    log.debug("assembled system with %d dofs", space.ndof)
    return sys_


def dump_matrix(mat, path: str) -> None:
    """Coordinate text dump: ``row col value`` per nonzero."""
    coo = sps.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
