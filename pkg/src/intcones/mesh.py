"""Triangle mesh container and the discrete quantities built on it.

Everything downstream (Yamabe solves, relocation, holonomy) consumes the
arrays computed here: corner angles, angle defects, the cotangent
Laplacian and normalized vertex areas.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Base class for mesh loading and validation failures."""


class ObjParseError(MeshError):
    pass


class TopologyError(MeshError):
    pass


class DegenerateFaceError(MeshError):
    def __init__(self, face: int, area: float):
        super().__init__(f"degenerate face {face} (area {area:.3e})")
        self.face = face


DEGENERATE_AREA_RATIO = 1e-12


class Mesh:
    """Connected, consistently oriented, manifold triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (N, d)
        Vertex positions. ``d`` is usually 3; any ``d >= 2`` is accepted so
        that intrinsically flat surfaces (e.g. a Clifford torus in R^4) can
        be represented exactly.
    faces : array_like, shape (F, 3)
        Zero-based vertex indices, counter-clockwise seen from outside.

    The constructor validates indices, degenerate faces, edge manifoldness,
    orientation, vertex manifoldness and connectivity, and raises a
    :class:`MeshError` subclass on the first violation. Instances are
    treated as immutable.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] < 2:
            raise MeshError("vertices must be an (N, d) array with d >= 2")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("faces must be an (F, 3) array")
        if len(f) == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        if np.any(f[:, 0] == f[:, 1]) | np.any(f[:, 1] == f[:, 2]) | np.any(f[:, 0] == f[:, 2]):
            raise TopologyError("face with repeated vertex")
        self.vertices = v
        self.faces = f
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)
        self._check_degenerate()
        self._build_edges()
        self._build_rings()
        self._check_connected()

    # -- construction ---------------------------------------------------

    def _check_degenerate(self) -> None:
        areas = self.face_areas
        extent = np.ptp(self.vertices, axis=0)
        bbox2 = float(np.dot(extent, extent))
        bad = np.flatnonzero(areas < DEGENERATE_AREA_RATIO * bbox2)
        if len(bad):
            raise DegenerateFaceError(int(bad[0]), float(areas[bad[0]]))

    def _build_edges(self) -> None:
        f = self.faces
        nf = len(f)
        # directed half-edges (f[:,k], f[:,k+1]) with opposite corner k+2
        tails = f.ravel()
        heads = f[:, [1, 2, 0]].ravel()
        n = self.n_vertices
        directed = tails * n + heads
        if len(np.unique(directed)) != len(directed):
            raise TopologyError("inconsistent orientation or non-manifold edge (duplicate directed edge)")
        lo = np.minimum(tails, heads)
        hi = np.maximum(tails, heads)
        key = lo * n + hi
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise TopologyError("non-manifold edge shared by more than two faces")
        self.edges = np.stack([uniq // n, uniq % n], axis=1)
        self.face_edges = inv.reshape(nf, 3)
        self.edge_face_count = counts
        self.edges.setflags(write=False)
        self._directed = {int(k): i for i, k in enumerate(directed)}

    def _build_rings(self) -> None:
        n = self.n_vertices
        nxt: list[dict[int, int]] = [dict() for _ in range(n)]
        for a, b, c in self.faces.tolist():
            nxt[a][b] = c
            nxt[b][c] = a
            nxt[c][a] = b
        rings: list[list[int]] = []
        boundary = np.zeros(n, dtype=bool)
        for v in range(n):
            succ = nxt[v]
            if not succ:
                raise TopologyError(f"isolated vertex {v}")
            preds = set(succ.values())
            starts = [w for w in succ if w not in preds]
            if len(starts) > 1:
                raise TopologyError(f"non-manifold vertex {v}")
            start = starts[0] if starts else min(succ)
            ring = [start]
            w = start
            while w in succ:
                w = succ[w]
                if w == start:
                    break
                ring.append(w)
            closed = not starts
            covered = len(ring) if closed else len(ring) - 1
            if covered != len(succ):
                raise TopologyError(f"non-manifold vertex {v}")
            boundary[v] = not closed
            rings.append(ring)
        self.rings = rings
        self.is_boundary = boundary
        self.is_boundary.setflags(write=False)

    def _check_connected(self) -> None:
        n_comp, _ = sparse.csgraph.connected_components(self.adjacency, directed=False)
        if n_comp != 1:
            raise TopologyError(f"mesh has {n_comp} connected components")

    # -- basic properties -----------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_closed(self) -> bool:
        return not bool(self.is_boundary.any())

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sparse.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """Unordered neighbor arrays (CSR rows of the adjacency)."""
        a = self.adjacency
        return [a.indices[a.indptr[k]:a.indptr[k + 1]] for k in range(self.n_vertices)]

    def face_of_directed_edge(self, a: int, b: int) -> int | None:
        """Face containing the half-edge a->b (the face on its left), if any."""
        k = self._directed.get(a * self.n_vertices + b)
        return None if k is None else k // 3

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        g11 = np.einsum("ij,ij->i", e1, e1)
        g22 = np.einsum("ij,ij->i", e2, e2)
        g12 = np.einsum("ij,ij->i", e1, e2)
        return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))

    @cached_property
    def corner_angles(self) -> np.ndarray:
        """(F, 3) interior angle at each face corner."""
        p = self.vertices[self.faces]
        out = np.empty((self.n_faces, 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            dot = np.einsum("ij,ij->i", a, b)
            cross = np.sqrt(np.maximum(
                np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b) - dot * dot, 0.0))
            out[:, k] = np.arctan2(cross, dot)
        return out

    @cached_property
    def corner_cotangents(self) -> np.ndarray:
        """(F, 3) cotangent of the angle at each corner."""
        p = self.vertices[self.faces]
        out = np.empty((self.n_faces, 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            dot = np.einsum("ij,ij->i", a, b)
            out[:, k] = dot / (2.0 * self.face_areas)
        return out

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.vertices[a] - self.vertices[b]))

    @cached_property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))


# -- loading -------------------------------------------------------------


def load_obj(path: str | Path) -> Mesh:
    """Read an ASCII OBJ file with ``v`` and triangular ``f`` records.

    Face tokens may carry ``/vt/vn`` suffixes and negative (relative)
    indices. Records other than ``v`` and ``f`` are ignored.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ObjParseError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError as exc:
                    raise ObjParseError(f"line {lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(rest) != 3:
                    raise ObjParseError(f"line {lineno}: non-triangle face ({len(rest)} vertices)")
                idx = []
                for tok in rest:
                    try:
                        k = int(tok.split("/")[0])
                    except ValueError as exc:
                        raise ObjParseError(f"line {lineno}: bad face index {tok!r}") from exc
                    if k < 0:
                        k = len(verts) + k + 1
                    if k < 1 or k > len(verts):
                        raise ObjParseError(f"line {lineno}: face index {tok} out of range")
                    idx.append(k - 1)
                faces.append(idx)
    if not faces:
        raise ObjParseError("no faces in file")
    return Mesh(np.array(verts), np.array(faces))


def save_obj(mesh: Mesh, path: str | Path) -> None:
    if mesh.vertices.shape[1] != 3:
        raise MeshError("OBJ export needs 3D positions")
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


# -- discrete differential quantities ------------------------------------


def angle_defects(mesh: Mesh) -> np.ndarray:
    """Discrete Gaussian curvature: 2*pi (interior) or pi (boundary) minus
    the incident corner angles."""
    total = np.bincount(mesh.faces.ravel(), weights=mesh.corner_angles.ravel(),
                        minlength=mesh.n_vertices)
    base = np.where(mesh.is_boundary, np.pi, 2.0 * np.pi)
    return base - total


def cotan_laplacian(mesh: Mesh) -> sparse.csr_matrix:
    """Positive semidefinite cotangent Laplacian.

    Off-diagonals are ``-(cot a + cot b) / 2`` (a single cotangent on
    boundary edges); obtuse weights are kept unclamped.
    """
    f = mesh.faces
    cot = mesh.corner_cotangents
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, (k + 1) % 3]
        j = f[:, (k + 2) % 3]
        w = 0.5 * cot[:, k]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    L = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    L.sum_duplicates()
    return L


def vertex_areas(mesh: Mesh) -> np.ndarray:
    """Barycentric vertex areas: one third of each incident face."""
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(mesh.face_areas / 3.0, 3),
                       minlength=mesh.n_vertices)


def area_weights(mesh: Mesh) -> np.ndarray:
    """Diagonal of the normalized area matrix (sums to one)."""
    a = vertex_areas(mesh)
    total = a.sum()
    if not total > 0:
        raise MeshError("mesh has zero total area")
    return a / total


@dataclass(frozen=True)
class CurvatureData:
    k_ori: np.ndarray
    A: np.ndarray
    vertex_areas: np.ndarray


def curvature_data(mesh: Mesh) -> CurvatureData:
    areas = vertex_areas(mesh)
    return CurvatureData(angle_defects(mesh), areas / areas.sum(), areas)


def boundary_loops(mesh: Mesh) -> list[list[int]]:
    """Boundary loops as vertex cycles, each following the face orientation."""
    succ: dict[int, int] = {}
    bnd = np.flatnonzero(mesh.edge_face_count == 1)
    for e in bnd:
        a, b = (int(x) for x in mesh.edges[e])
        # boundary half-edge runs opposite to the missing twin
        if mesh.face_of_directed_edge(a, b) is not None:
            succ[a] = b
        else:
            succ[b] = a
    loops = []
    seen: set[int] = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        w = succ[start]
        while w != start:
            loop.append(w)
            seen.add(w)
            w = succ[w]
        loops.append(loop)
    return loops


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.n_vertices - mesh.n_edges + mesh.n_faces


def genus(mesh: Mesh) -> tuple[int, int]:
    """Return ``(g, n_boundary_loops)`` from the Euler characteristic."""
    nb = len(boundary_loops(mesh))
    twice_g = 2 - euler_characteristic(mesh) - nb
    if twice_g < 0 or twice_g % 2:
        raise TopologyError(f"inconsistent Euler characteristic (2g = {twice_g})")
    return twice_g // 2, nb


def bfs_edge_distance(mesh: Mesh, a: int, b: int, cap: int | None = None) -> int | None:
    """Unweighted edge distance from ``a`` to ``b``.

    Returns ``None`` when the distance exceeds ``cap``.
    """
    n = mesh.n_vertices
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"vertex id out of range: {a}, {b}")
    if a == b:
        return 0
    nbrs = mesh.neighbors
    dist = {a: 0}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        d = dist[v] + 1
        if cap is not None and d > cap:
            return None
        for w in nbrs[v]:
            w = int(w)
            if w in dist:
                continue
            if w == b:
                return d
            dist[w] = d
            queue.append(w)
    return None


def bfs_distances(mesh: Mesh, sources, cap: int | None = None) -> np.ndarray:
    """Multi-source edge distances; unreachable (or beyond ``cap``) is -1."""
    dist = np.full(mesh.n_vertices, -1, dtype=np.int64)
    frontier = np.unique(np.asarray(list(sources), dtype=np.int64))
    if len(frontier) == 0:
        return dist
    dist[frontier] = 0
    adj = mesh.adjacency
    level = 0
    while len(frontier) and (cap is None or level < cap):
        level += 1
        reach = adj[frontier].indices
        reach = np.unique(reach[dist[reach] < 0])
        dist[reach] = level
        frontier = reach
    return dist
