"""Conforming interval and triangle meshes with bisection refinement.

Triangles store their vertices as ``(newest, r1, r2)`` so that the
refinement edge is always ``(r1, r2)``; this is the newest-vertex bisection
convention.  Every mesh built from the same initial mesh shares an
append-only :class:`Forest` recording the bisection tree, which is what
coarsening and solution transfer walk.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import DegenerateRayError, InvalidInputError, OutOfDomainError

__all__ = [
    "Forest",
    "Mesh",
    "RaySegmentation",
    "build_interval_mesh",
    "build_structured_tri_mesh",
    "refine",
    "coarsen",
    "ray_segments",
    "read_mesh",
    "write_mesh",
]

C_REG = 10.0


class Forest:
    """Bisection genealogy shared by a family of meshes.

    Nodes are never removed; a mesh is a set of active leaves-or-ancestors.
    """

    def __init__(self, dim: int, coords: np.ndarray):
        self.dim = dim
        self._coords = [tuple(map(float, c)) for c in np.atleast_2d(coords)]
        self.verts: list[tuple[int, ...]] = []
        self.parent: list[int] = []
        self.children: list[tuple[int, int] | None] = []
        self.level: list[int] = []
        self._mid: dict[tuple[int, int], int] = {}

    @property
    def coords(self) -> np.ndarray:
        return np.array(self._coords)

    def coord(self, v: int) -> tuple[float, ...]:
        return self._coords[v]

    def add_root(self, verts: Iterable[int]) -> int:
        self.verts.append(tuple(int(v) for v in verts))
        self.parent.append(-1)
        self.children.append(None)
        self.level.append(0)
        return len(self.verts) - 1

    def midpoint(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        v = self._mid.get(key)
        if v is None:
            pa, pb = self._coords[a], self._coords[b]
            self._coords.append(tuple(0.5 * (x + y) for x, y in zip(pa, pb)))
            v = len(self._coords) - 1
            self._mid[key] = v
        return v

    def bisect(self, n: int) -> tuple[int, int]:
        """Children of node ``n``, created on first request."""
        ch = self.children[n]
        if ch is not None:
            return ch
        if self.dim == 1:
            a, b = self.verts[n]
            m = self.midpoint(a, b)
            kids = ((a, m), (m, b))
        else:
            v0, v1, v2 = self.verts[n]
            m = self.midpoint(v1, v2)
            kids = ((m, v0, v1), (m, v2, v0))
        ids = []
        for k in kids:
            self.verts.append(k)
            self.parent.append(n)
            self.children.append(None)
            self.level.append(self.level[n] + 1)
            ids.append(len(self.verts) - 1)
        ch = (ids[0], ids[1])
        self.children[n] = ch
        return ch


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming mesh; element ``k`` is forest node ``node_ids[k]``."""

    dim: int
    vertices: np.ndarray
    """``(V, dim)`` coordinates."""
    elements: np.ndarray
    """``(K, dim+1)`` vertex indices; triangles are counter-clockwise."""
    forest: Forest = field(repr=False)
    node_ids: np.ndarray = field(repr=False)
    global_vids: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def bbox(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @cached_property
    def element_coords(self) -> np.ndarray:
        """``(K, dim+1, dim)`` vertex coordinates per element."""
        return self.vertices[self.elements]

    @cached_property
    def areas(self) -> np.ndarray:
        P = self.element_coords
        if self.dim == 1:
            return P[:, 1, 0] - P[:, 0, 0]
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def diameters(self) -> np.ndarray:
        P = self.element_coords
        if self.dim == 1:
            return np.abs(P[:, 1, 0] - P[:, 0, 0])
        L = self._edge_lengths
        return L.max(axis=1)

    @cached_property
    def _edge_lengths(self) -> np.ndarray:
        P = self.element_coords
        # edge k is opposite local vertex k
        return np.stack(
            [
                np.linalg.norm(P[:, 2] - P[:, 1], axis=1),
                np.linalg.norm(P[:, 0] - P[:, 2], axis=1),
                np.linalg.norm(P[:, 1] - P[:, 0], axis=1),
            ],
            axis=1,
        )

    @cached_property
    def inradius_diameters(self) -> np.ndarray:
        """Diameter ``rho_T`` of the inscribed ball."""
        if self.dim == 1:
            return self.diameters.copy()
        return 4.0 * self.areas / self._edge_lengths.sum(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.element_coords.mean(axis=1)

    def shape_ratios(self) -> np.ndarray:
        return self.diameters / self.inradius_diameters

    @cached_property
    def _face_data(self):
        K = self.K
        if self.dim == 1:
            order = np.argsort(self.element_coords[:, 0, 0])
            if np.any(order != np.arange(K)):
                raise InvalidInputError("1D elements must be sorted left to right")
            verts = [(self.elements[0, 0],)]
            elems = [(0, -1)]
            normals = [(-1.0,)]
            for k in range(K - 1):
                verts.append((self.elements[k, 1],))
                elems.append((k, k + 1))
                normals.append((1.0,))
            verts.append((self.elements[K - 1, 1],))
            elems.append((K - 1, -1))
            normals.append((1.0,))
            efaces = np.array([[k, k + 1] for k in range(K)], dtype=np.intp)
            return (
                np.array(verts, dtype=np.intp),
                np.array(elems, dtype=np.intp),
                np.array(normals),
                np.ones(len(verts)),
                efaces,
            )
        E = self.elements
        local = ((1, 2), (2, 0), (0, 1))
        edge_map: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for k in range(K):
            for le, (i, j) in enumerate(local):
                a, b = int(E[k, i]), int(E[k, j])
                key = (a, b) if a < b else (b, a)
                edge_map.setdefault(key, []).append((k, le))
        verts, elems, efaces = [], [], np.full((K, 3), -1, dtype=np.intp)
        for key, owners in edge_map.items():
            if len(owners) > 2:
                raise InvalidInputError(f"edge {key} shared by {len(owners)} elements")
            owners = sorted(owners)
            f = len(verts)
            verts.append(key)
            elems.append((owners[0][0], owners[1][0] if len(owners) == 2 else -1))
            for k, le in owners:
                efaces[k, le] = f
        verts = np.array(verts, dtype=np.intp)
        elems = np.array(elems, dtype=np.intp)
        # order faces: interior first by owner, then boundary; deterministic
        order = np.lexsort((verts[:, 1], verts[:, 0], elems[:, 1] < 0))
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        verts, elems = verts[order], elems[order]
        efaces = inv[efaces]
        p = self.vertices[verts[:, 0]]
        q = self.vertices[verts[:, 1]]
        t = q - p
        length = np.linalg.norm(t, axis=1)
        n = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]
        # orient outward from the first owner
        c1 = self.centroids[elems[:, 0]]
        flip = np.einsum("ij,ij->i", n, 0.5 * (p + q) - c1) < 0
        n[flip] *= -1.0
        return verts, elems, n, length, efaces

    @property
    def face_vertices(self) -> np.ndarray:
        return self._face_data[0]

    @property
    def face_elements(self) -> np.ndarray:
        """``(F, 2)`` owners ``(T1, T2)``; ``T2 = -1`` on the boundary."""
        return self._face_data[1]

    @property
    def face_normals(self) -> np.ndarray:
        """Unit normals pointing from ``T1`` to ``T2`` (outward on the boundary)."""
        return self._face_data[2]

    @property
    def face_lengths(self) -> np.ndarray:
        return self._face_data[3]

    @property
    def element_faces(self) -> np.ndarray:
        return self._face_data[4]

    @property
    def n_faces(self) -> int:
        return len(self.face_elements)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] >= 0)[0]

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] < 0)[0]

    def is_conforming(self) -> bool:
        try:
            fe = self.face_elements
        except InvalidInputError:
            return False
        if self.dim == 1:
            return True
        # boundary faces must lie on the bounding box
        lo, hi = self.bbox
        bf = self.boundary_faces
        P = self.vertices[self.face_vertices[bf]]
        on = np.zeros(len(bf), dtype=bool)
        for ax in range(2):
            for val in (lo[ax], hi[ax]):
                on |= np.all(np.abs(P[:, :, ax] - val) < 1e-12 * (hi - lo).max(), axis=1)
        return bool(np.all(on)) and bool(np.all(fe[:, 0] >= 0))

    def children_of(self, k: int) -> list[int]:
        """Indices in this mesh of the forest children of element ``k``'s node."""
        ch = self.forest.children[int(self.node_ids[k])]
        if ch is None:
            return []
        pos = {int(n): i for i, n in enumerate(self.node_ids)}
        return [pos[c] for c in ch if c in pos]


def _mesh_from_nodes(forest: Forest, nodes: Iterable[int]) -> Mesh:
    nodes = sorted(set(int(n) for n in nodes))
    if forest.dim == 1:
        nodes.sort(key=lambda n: forest.coord(forest.verts[n][0])[0])
    conn = np.array([forest.verts[n] for n in nodes], dtype=np.intp)
    used = np.unique(conn)
    local = np.searchsorted(used, conn)
    coords = np.array([forest.coord(v) for v in used], dtype=float).reshape(len(used), forest.dim)
    return Mesh(forest.dim, coords, local, forest, np.array(nodes, dtype=np.intp), used)


def build_interval_mesh(a: float, b: float, K: int) -> Mesh:
    """``K`` uniform intervals on ``[a, b]``."""
    if not (K >= 1 and a < b):
        raise InvalidInputError(f"need a < b and K >= 1, got a={a}, b={b}, K={K}")
    x = np.linspace(a, b, K + 1)
    forest = Forest(1, x[:, None])
    roots = [forest.add_root((k, k + 1)) for k in range(K)]
    return _mesh_from_nodes(forest, roots)


def build_structured_tri_mesh(rect, nx: int, ny: int) -> Mesh:
    """Grid of ``nx * ny`` cells on ``rect = (a, b, c, d)``, each cut by its diagonal.

    The right-angle vertex is stored first so the hypotenuse is the
    refinement edge, which makes the initial labelling compatible.
    """
    a, b, c, d = map(float, rect)
    if not (nx >= 1 and ny >= 1 and a < b and c < d):
        raise InvalidInputError(f"degenerate rectangle or resolution: {rect}, {nx}x{ny}")
    xs = np.linspace(a, b, nx + 1)
    ys = np.linspace(c, d, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    forest = Forest(2, np.stack([X.ravel(), Y.ravel()], axis=1))

    def vid(i, j):
        return j * (nx + 1) + i

    roots = []
    for j in range(ny):
        for i in range(nx):
            p00, p10, p01, p11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            roots.append(forest.add_root((p10, p11, p00)))
            roots.append(forest.add_root((p01, p00, p11)))
    return _mesh_from_nodes(forest, roots)


class _Refiner:
    def __init__(self, mesh: Mesh):
        self.forest = mesh.forest
        self.active = set(int(n) for n in mesh.node_ids)
        self.edges: dict[tuple[int, int], set[int]] = {}
        for n in self.active:
            self._register(n)

    @staticmethod
    def _key(a, b):
        return (a, b) if a < b else (b, a)

    def _edges_of(self, n):
        v = self.forest.verts[n]
        if self.forest.dim == 1:
            return []
        return [self._key(v[1], v[2]), self._key(v[2], v[0]), self._key(v[0], v[1])]

    def _register(self, n):
        for e in self._edges_of(n):
            self.edges.setdefault(e, set()).add(n)

    def _unregister(self, n):
        for e in self._edges_of(n):
            s = self.edges[e]
            s.discard(n)
            if not s:
                del self.edges[e]

    def _split(self, n):
        self.active.remove(n)
        self._unregister(n)
        for c in self.forest.bisect(n):
            self.active.add(c)
            self._register(c)

    def bisect(self, n, depth=0):
        if n not in self.active:
            return
        if self.forest.dim == 1:
            self._split(n)
            return
        if depth > 200:
            raise RuntimeError("bisection closure did not terminate")
        v = self.forest.verts[n]
        e = self._key(v[1], v[2])
        others = self.edges.get(e, set()) - {n}
        if others:
            (nb,) = others
            vb = self.forest.verts[nb]
            if self._key(vb[1], vb[2]) != e:
                self.bisect(nb, depth + 1)
                (nb,) = self.edges.get(e, set()) - {n}
            self._split(n)
            self._split(nb)
        else:
            self._split(n)


def refine(mesh: Mesh, marked, interior_node: bool = False) -> Mesh:
    """Refine every marked element and restore conformity.

    1D elements are halved.  Triangles are bisected twice (four
    grandchildren) by newest-vertex bisection with conforming closure; with
    ``interior_node=True`` the two grandchildren sharing the segment from
    the first midpoint to the opposite vertex are bisected once more, which
    puts a new vertex strictly inside the marked triangle.
    """
    marked = sorted(set(int(k) for k in marked))
    if marked and (marked[0] < 0 or marked[-1] >= mesh.K):
        raise InvalidInputError("marked element id out of range")
    r = _Refiner(mesh)
    f = mesh.forest
    for k in marked:
        n = int(mesh.node_ids[k])
        r.bisect(n)
        if f.dim == 1:
            continue
        c1, c2 = f.bisect(n)
        for c in (c1, c2):
            r.bisect(c)
        if interior_node:
            g = f.bisect(c1)[0]
            r.bisect(g)
    return _mesh_from_nodes(f, r.active)


def coarsen(mesh: Mesh, marked) -> Mesh:
    """Undo bisections whose complete sibling groups are all marked.

    A triangle bisection vertex is removed only if every element touching it
    was created by that bisection and is marked; merged parents count as
    marked, so several levels may be undone in one call.
    """
    f = mesh.forest
    active = set(int(n) for n in mesh.node_ids)
    flagged = set(int(mesh.node_ids[k]) for k in marked if 0 <= int(k) < mesh.K)
    changed = True
    while changed:
        changed = False
        if f.dim == 1:
            for n in sorted(flagged):
                p = f.parent[n]
                if p < 0 or n not in active:
                    continue
                a, b = f.children[p]
                if a in active and b in active and a in flagged and b in flagged:
                    active -= {a, b}
                    flagged -= {a, b}
                    active.add(p)
                    flagged.add(p)
                    changed = True
            continue
        by_vertex: dict[int, list[int]] = {}
        for n in active:
            for v in f.verts[n]:
                by_vertex.setdefault(v, []).append(n)
        for n in sorted(flagged):
            if n not in active or f.parent[n] < 0:
                continue
            m = f.verts[n][0]
            patch = by_vertex.get(m, [])
            if not patch or any(q not in flagged or f.verts[q][0] != m for q in patch):
                continue
            if any(q not in active for q in patch):
                continue
            parents = sorted(set(f.parent[q] for q in patch))
            if any(p < 0 for p in parents):
                continue
            kids = set()
            for p in parents:
                kids.update(f.children[p])
            if kids != set(patch) or len(patch) not in (2, 4):
                continue
            for q in patch:
                active.discard(q)
                flagged.discard(q)
            for p in parents:
                active.add(p)
                flagged.add(p)
            # refresh the vertex map for the touched vertices
            by_vertex = {}
            for q in active:
                for v in f.verts[q]:
                    by_vertex.setdefault(v, []).append(q)
            changed = True
    return _mesh_from_nodes(f, active)


@dataclass(frozen=True)
class RaySegmentation:
    """Intersection of an axis-parallel line with the mesh, ordered along the line."""

    axis: str
    ordinate: float
    elements: np.ndarray
    entry: np.ndarray
    exit: np.ndarray

    @property
    def breaks(self) -> np.ndarray:
        return np.concatenate([self.entry, self.exit[-1:]])

    def __len__(self) -> int:
        return len(self.elements)


def ray_segments(mesh: Mesh, axis: str, ordinate: float = 0.0) -> RaySegmentation:
    """Elements crossed by the line ``other coordinate == ordinate``.

    ``axis='x'`` is a horizontal line (the parameter along the line is x).
    A line through a mesh vertex raises :class:`DegenerateRayError`.
    """
    if mesh.dim == 1:
        P = mesh.element_coords[:, :, 0]
        return RaySegmentation("x", 0.0, np.arange(mesh.K), P[:, 0].copy(), P[:, 1].copy())
    if axis not in ("x", "y"):
        raise InvalidInputError(f"axis must be 'x' or 'y', got {axis!r}")
    s_ax, o_ax = (0, 1) if axis == "x" else (1, 0)
    lo, hi = mesh.bbox[0, o_ax], mesh.bbox[1, o_ax]
    y = float(ordinate)
    if not lo < y < hi:
        raise OutOfDomainError(f"ordinate {y} outside ({lo}, {hi})")
    tol = 1e-14 * (hi - lo)
    if np.any(np.abs(mesh.vertices[:, o_ax] - y) <= tol):
        raise DegenerateRayError(f"line at {y} passes through a vertex")
    P = mesh.element_coords
    o = P[:, :, o_ax]
    s = P[:, :, s_ax]
    hit = np.nonzero((o.min(axis=1) < y) & (o.max(axis=1) > y))[0]
    o, s = o[hit], s[hit]
    pts = []
    for i, j in ((0, 1), (1, 2), (2, 0)):
        oi, oj = o[:, i], o[:, j]
        cross = (oi - y) * (oj - y) < 0
        t = np.where(cross, (y - oi) / np.where(cross, oj - oi, 1.0), np.nan)
        pts.append(s[:, i] + t * (s[:, j] - s[:, i]))
    pts = np.stack(pts, axis=1)
    entry = np.nanmin(pts, axis=1)
    ex = np.nanmax(pts, axis=1)
    order = np.argsort(entry, kind="stable")
    entry, ex, hit = entry[order], ex[order], hit[order]
    # snap shared end points so the breakpoints are exactly contiguous
    if len(hit) > 1:
        gap = np.abs(entry[1:] - ex[:-1])
        if np.any(gap > 1e-9 * (mesh.bbox[1, s_ax] - mesh.bbox[0, s_ax])):
            raise InvalidInputError("line intersections are not contiguous; mesh not conforming")
        entry[1:] = ex[:-1]
    return RaySegmentation(axis, y, hit, entry, ex)


def write_mesh(mesh: Mesh, dest) -> None:
    """Write the text format: header, coordinates, elements, then faces."""
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w") if own else dest
    try:
        fh.write(f"{mesh.dim} {mesh.K} {mesh.n_vertices}\n")
        for p in mesh.vertices:
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(int(v)) for v in e) + "\n")
        fh.write(f"{mesh.n_faces}\n")
        for fv, fe in zip(mesh.face_vertices, mesh.face_elements):
            fh.write(" ".join(str(int(v)) for v in fv) + f" {int(fe[0])} {int(fe[1])}\n")
    finally:
        if own:
            fh.close()


def read_mesh(src) -> Mesh:
    """Read the text format written by :func:`write_mesh` (faces are recomputed)."""
    if isinstance(src, str) and "\n" in src:
        lines = io.StringIO(src).read().splitlines()
    elif hasattr(src, "read"):
        lines = src.read().splitlines()
    else:
        with open(src) as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    try:
        dim, K, V = (int(t) for t in lines[0].split())
        coords = np.array([[float(t) for t in lines[1 + i].split()] for i in range(V)])
        conn = np.array([[int(t) for t in lines[1 + V + k].split()] for k in range(K)])
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"malformed mesh file: {exc}") from exc
    if dim not in (1, 2) or coords.shape != (V, dim) or conn.shape != (K, dim + 1):
        raise InvalidInputError("mesh header does not match its contents")
    forest = Forest(dim, coords)
    roots = [forest.add_root(tuple(c)) for c in conn]
    if dim == 2:
        P = coords[conn]
        area = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (
            P[:, 2, 0] - P[:, 0, 0]
        ) * (P[:, 1, 1] - P[:, 0, 1])
        if np.any(area <= 0):
            raise InvalidInputError("triangles must be counter-clockwise and non-degenerate")
    return _mesh_from_nodes(forest, roots)


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, range(mesh.K))
    return mesh


def max_shape_ratio(mesh: Mesh) -> float:
    return float(np.max(mesh.shape_ratios()))


def is_shape_regular(mesh: Mesh) -> bool:
    return max_shape_ratio(mesh) <= C_REG + 1e-12

