"""Log conformal factors from a cone configuration.

On a closed surface the discrete Yamabe equation ``L u = pi/2 z - k_ori``
fixes ``u`` up to a constant. Pinning a non-cone vertex gives the
particular solution ``u = G z + d`` where column ``i`` of ``G`` is the
pinned response to a quarter-turn cone at ``c_i``; the free constant is
then chosen to minimize the area-weighted norm. With Dirichlet boundary
values there is no free constant and the interior block is solved
directly.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .linalg import InteriorSystem, PinnedSystem
from .mesh import Mesh, angle_defects, area_weights, cotan_laplacian

QUARTER = np.pi / 2


class ConeError(ValueError):
    pass


@dataclass
class ConeState:
    """Cone vertices with their integer multipliers (angle = pi/2 * z)."""

    vertices: list[int] = field(default_factory=list)
    z: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pin: int | None = None

    def __post_init__(self):
        self.vertices = [int(v) for v in self.vertices]
        self.z = np.asarray(self.z, dtype=np.int64).reshape(-1)
        if len(self.z) != len(self.vertices):
            raise ConeError("one multiplier per cone is required")
        if len(set(self.vertices)) != len(self.vertices):
            raise ConeError("cone vertices must be distinct")
        if self.pin is not None and self.pin in self.vertices:
            raise ConeError(f"pinned vertex {self.pin} cannot carry a cone")

    def __len__(self) -> int:
        return len(self.vertices)

    def copy(self) -> "ConeState":
        return ConeState(list(self.vertices), self.z.copy(), self.pin)

    def target_curvature(self, n: int) -> np.ndarray:
        k = np.zeros(n)
        if self.vertices:
            k[self.vertices] = QUARTER * self.z
        return k

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.z))

    @property
    def n_zero(self) -> int:
        return len(self.z) - self.n_nonzero


def optimal_scale(r: np.ndarray, A: np.ndarray) -> float:
    """Constant ``a`` minimizing ``||A^(1/2) (r + a)||``; needs ``sum(A) == 1``."""
    return -float(np.dot(A, r))


def distortion(u: np.ndarray, A: np.ndarray) -> float:
    """Hencky area distortion ``sqrt(u^T A u)`` for a diagonal ``A``."""
    return float(np.sqrt(max(np.dot(A, u * u), 0.0)))


class ReducedMap:
    """Affine map from cone multipliers to log conformal factors.

    ``u(z) = G z + d (+ a* 1 on closed surfaces)``. Columns of ``G`` are
    cached per vertex, so moving or adding a cone only solves for the new
    vertices; a small LRU of recently dropped columns makes rejected trial
    moves free to undo.
    """

    def __init__(self, system, k_ori: np.ndarray, A: np.ndarray, cones=(),
                 boundary_values: np.ndarray | None = None, cache_size: int = 64,
                 flux_weights: np.ndarray | None = None):
        self.system = system
        self.A = np.asarray(A, dtype=float)
        self.has_scale = isinstance(system, PinnedSystem)
        self.n = system.n
        self._spare: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self.n_column_solves = 0
        self.k_ori = np.asarray(k_ori, dtype=float)
        self.flux = None
        self.boundary_values = None
        forbidden: set[int] = set()
        rhs = self.k_ori.copy()
        if isinstance(system, InteriorSystem):
            b = np.zeros(self.n) if boundary_values is None else np.asarray(boundary_values, float)
            if b.shape == (len(system.boundary),):
                full_b = np.zeros(self.n)
                full_b[system.boundary] = b
                b = full_b
            rhs = rhs + system.L[:, system.boundary] @ b[system.boundary]
            self.d = -system.solve(rhs)
            self.d[system.boundary] = b[system.boundary]
            self.boundary_values = b
            forbidden = set(system.boundary.tolist())
        elif flux_weights is not None:
            # natural boundary rows; the total curvature change leaves
            # through the boundary in proportion to the weights
            w = np.asarray(flux_weights, dtype=float)
            self.flux = w / w.sum()
            interior = self.flux == 0
            rhs = np.where(interior, rhs, 0.0)
            self.d = -system.solve(rhs - self.flux * rhs.sum())
            forbidden = set(np.flatnonzero(~interior).tolist())
        else:
            self.d = -system.solve(rhs)
        self._forbidden = forbidden
        self.cones: list[int] = []
        self._cols: dict[int, np.ndarray] = {}
        self.G = np.zeros((self.n, 0))
        self.set_cones(list(cones))

    def admissible(self, v: int) -> bool:
        if isinstance(self.system, PinnedSystem) and v == self.system.p:
            return False
        return v not in self._forbidden

    def target_rhs(self, z, vertices=None) -> np.ndarray:
        """Right-hand side ``k_tar - k_ori`` of the rows this map satisfies."""
        vertices = self.cones if vertices is None else vertices
        t = np.zeros(self.n)
        if len(vertices):
            t[list(vertices)] = QUARTER * np.asarray(z, dtype=float)
        if self.flux is None:
            return t - self.k_ori
        r = np.where(self.flux == 0, t - self.k_ori, 0.0)
        return r - self.flux * r.sum()

    def _unit_rhs(self, vertices) -> np.ndarray:
        E = np.zeros((self.n, len(vertices)))
        for k, v in enumerate(vertices):
            if not self.admissible(v):
                raise ConeError(f"vertex {v} cannot carry a cone (pinned or boundary)")
            E[v, k] = QUARTER
        if self.flux is not None:
            E -= QUARTER * self.flux[:, None]
        return E

    def _known(self, v: int) -> np.ndarray | None:
        if v in self._cols:
            return self._cols[v]
        if v in self._spare:
            self._spare.move_to_end(v)
            return self._spare[v]
        return None

    def column(self, v: int) -> np.ndarray:
        col = self._known(v)
        if col is not None:
            return col
        self.n_column_solves += 1
        return self.system.solve(self._unit_rhs([v])[:, 0])

    def prefetch(self, vertices) -> None:
        """Solve the missing columns of ``vertices`` in one batch and keep
        them in the spare cache."""
        missing = sorted({int(v) for v in vertices if self._known(int(v)) is None})
        if not missing:
            return
        cols = self.system.solve(self._unit_rhs(missing))
        self.n_column_solves += len(missing)
        for k, v in enumerate(missing):
            self._spare[v] = np.ascontiguousarray(cols[:, k])

    def set_cones(self, vertices: list[int]) -> None:
        """Make ``G`` match ``vertices`` (order preserved), solving only new columns."""
        vertices = [int(v) for v in vertices]
        self.prefetch(vertices)
        new_cols = {v: self.column(v) for v in vertices}
        for v, col in self._cols.items():
            if v not in new_cols:
                self._spare[v] = col
                self._spare.move_to_end(v)
        for v in vertices:
            self._spare.pop(v, None)
        while len(self._spare) > self._cache_size:
            self._spare.popitem(last=False)
        self._cols = new_cols
        self.cones = vertices
        self.G = np.stack([new_cols[v] for v in vertices], axis=1) if vertices else np.zeros((self.n, 0))

    def raw(self, z) -> np.ndarray:
        """Particular solution ``G z + d`` (before the scale shift)."""
        z = np.asarray(z, dtype=float)
        return self.d + (self.G @ z if len(z) else 0.0)

    def u(self, z) -> np.ndarray:
        r = self.raw(z)
        if self.has_scale:
            r = r + optimal_scale(r, self.A)
        return r

    def distortion(self, z) -> float:
        return distortion(self.u(z), self.A)


def build_reduced_map(system, cones: ConeState, k_ori, A, boundary_values=None) -> ReducedMap:
    if isinstance(system, PinnedSystem) and system.p in cones.vertices:
        raise ConeError("a cone sits on the pinned vertex")
    return ReducedMap(system, k_ori, A, cones.vertices, boundary_values=boundary_values)


def yamabe_residual(system, u: np.ndarray, cones: ConeState, k_ori: np.ndarray) -> float:
    """``max |M (L u - pi/2 T z + k_ori)|`` over the unconstrained rows."""
    rhs = cones.target_curvature(len(u)) - k_ori
    return float(np.abs(system.residual(u, rhs)).max())


def dirichlet_solve(mesh: Mesh, cones: ConeState, b=None, L=None, k_ori=None) -> np.ndarray:
    """Solve ``L_II u_I + L_IB b = k_tar_I - k_ori_I`` with ``u_B = b``.

    ``b`` is either per-vertex (length N, interior entries ignored) or
    per-boundary-vertex in index order; the default is zero.
    """
    if mesh.is_closed:
        raise ConeError("Dirichlet solve needs a mesh with boundary")
    L = cotan_laplacian(mesh) if L is None else L
    k_ori = angle_defects(mesh) if k_ori is None else k_ori
    bad = [v for v in cones.vertices if mesh.is_boundary[v]]
    if bad:
        raise ConeError(f"cones on boundary vertices: {bad}")
    sysI = InteriorSystem(L, mesh.is_boundary)
    rmap = ReducedMap(sysI, k_ori, np.ones(mesh.n_vertices) / mesh.n_vertices, cones.vertices,
                      boundary_values=b)
    return rmap.u(cones.z)


def neumann_solve(mesh: Mesh, cones: ConeState, k_tar_boundary, h=None, p: int | None = None,
                  L=None, k_ori=None, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Solve the full Yamabe system with prescribed normal-derivative data.

    The boundary rows read ``(L u)_B + h = k_tar_B - k_ori_B``; ``h``
    defaults to zero. The system is rank-deficient by one and is solved by
    pinning vertex ``p`` (default: the first interior non-cone vertex).
    Returns ``(u, h)`` where ``h`` is recomputed from the solution as the
    boundary-row slack.
    """
    if mesh.is_closed:
        raise ConeError("Neumann solve needs a mesh with boundary")
    L = cotan_laplacian(mesh) if L is None else L
    k_ori = angle_defects(mesh) if k_ori is None else k_ori
    bnd = np.flatnonzero(mesh.is_boundary)
    k_tar = cones.target_curvature(mesh.n_vertices)
    k_tar[bnd] = np.asarray(k_tar_boundary, dtype=float).reshape(-1) if np.ndim(k_tar_boundary) else k_tar_boundary
    h_full = np.zeros(mesh.n_vertices)
    if h is not None:
        h_full[bnd] = h
    rhs = k_tar - k_ori - h_full
    scale = max(1.0, float(np.abs(rhs).max()))
    if abs(rhs.sum()) > tol * scale * mesh.n_vertices:
        raise ConeError(f"incompatible Neumann data: total curvature mismatch {rhs.sum():.3e}")
    if p is None:
        taken = set(cones.vertices)
        p = next(v for v in range(mesh.n_vertices) if v not in taken)
    sysP = PinnedSystem(L, p)
    u = sysP.solve(rhs)
    slack = (k_tar - k_ori - L @ u)[bnd]
    return u, slack
