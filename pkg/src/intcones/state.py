"""Mutable per-run solver state shared by the optimization steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import InteriorSystem, PinnedSystem
from .mesh import CurvatureData, Mesh, bfs_distances, cotan_laplacian, curvature_data, genus
from .yamabe import ConeState, ReducedMap, distortion

logger = logging.getLogger(__name__)


@dataclass
class TraceEvent:
    event: str
    E: float
    n_c: int
    n_0: int
    iteration: int
    eta: float
    step: int = 0     # number of distortion changes so far


@dataclass
class SolverState:
    mesh: Mesh
    curv: CurvatureData
    L: object
    system: PinnedSystem | InteriorSystem
    rmap: ReducedMap
    cones: ConeState
    bounds: tuple[int, int] = (-1, 1)
    target_sum: int | None = None
    genus: int = 0
    eta: float = 0.10
    iteration: int = 0
    u: np.ndarray = field(default=None, repr=False)
    E: float = float("nan")
    trace: list[TraceEvent] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.mesh.is_closed

    @property
    def pin(self) -> int | None:
        return self.system.p if isinstance(self.system, PinnedSystem) else None

    @property
    def A(self) -> np.ndarray:
        return self.curv.A

    @property
    def k_ori(self) -> np.ndarray:
        return self.curv.k_ori

    @property
    def total_area(self) -> float:
        return float(self.curv.vertex_areas.sum())

    def admissible(self, v: int) -> bool:
        """Whether vertex ``v`` may receive a cone."""
        if v in self._occupied():
            return False
        return self.rmap.admissible(v)

    def _occupied(self) -> set[int]:
        return set(self.cones.vertices)

    def set_cones(self, vertices: list[int], z) -> None:
        self.cones = ConeState(list(vertices), np.asarray(z, dtype=np.int64), self.cones.pin)
        self.rmap.set_cones(self.cones.vertices)
        self.refresh()

    def refresh(self) -> None:
        self.u = self.rmap.u(self.cones.z)
        self.E = distortion(self.u, self.A)

    def evaluate(self, vertices: list[int], z) -> float:
        """Distortion of a candidate configuration; leaves the state unchanged
        (the column cache keeps the trial columns for reuse)."""
        keep = self.rmap.cones
        self.rmap.set_cones(vertices)
        E = self.rmap.distortion(z)
        self.rmap.set_cones(keep)
        return E

    def record(self, event: str) -> None:
        step = 0
        if self.trace:
            step = self.trace[-1].step + (self.trace[-1].E != float(self.E))
        ev = TraceEvent(event, float(self.E), self.cones.n_nonzero, self.cones.n_zero,
                        self.iteration, float(self.eta), step)
        self.trace.append(ev)
        logger.debug("%s E=%.6f n_c=%d n_0=%d", event, ev.E, ev.n_c, ev.n_0)


def choose_pin(mesh: Mesh, candidates, forbidden=()) -> int:
    """Vertex farthest (in edges) from the candidate cone set; lowest id on ties.

    Falls back to vertex 0 (or the first allowed vertex) without candidates.
    """
    forbidden = set(int(v) for v in forbidden)
    cand = [int(c) for c in candidates]
    if not cand:
        return next(v for v in range(mesh.n_vertices) if v not in forbidden)
    dist = bfs_distances(mesh, cand).astype(float)
    dist[list(forbidden | set(cand))] = -np.inf
    return int(np.argmax(dist))


def boundary_flux_weights(mesh: Mesh) -> np.ndarray:
    """Half the incident boundary edge length at each boundary vertex."""
    w = np.zeros(mesh.n_vertices)
    boundary_edges = mesh.edges[mesh.edge_face_count == 1]
    for a, b in boundary_edges:
        ell = mesh.edge_length(int(a), int(b))
        w[a] += 0.5 * ell
        w[b] += 0.5 * ell
    return w


def make_state(mesh: Mesh, cones: ConeState | None = None, pin: int | None = None,
               bounds=(-1, 1), boundary_values=None, eta: float = 0.10,
               boundary: str = "dirichlet") -> SolverState:
    """Assemble curvature, Laplacian and the factorized system for ``mesh``.

    Closed meshes get a pinned system (``pin`` defaults to the vertex
    farthest from the cones) and the multiplier sum ``8(1 - g)``. Meshes
    with boundary get the Dirichlet interior system, or with
    ``boundary="neumann"`` a pinned system with natural boundary rows; in
    both cases the sum is left free.
    """
    if boundary not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    curv = curvature_data(mesh)
    L = cotan_laplacian(mesh)
    g, nb = genus(mesh)
    cones = ConeState() if cones is None else cones
    flux = None
    target = None
    if mesh.is_closed or boundary == "neumann":
        if pin is None:
            pin = choose_pin(mesh, cones.vertices)
        system = PinnedSystem(L, pin)
        cones = ConeState(cones.vertices, cones.z, pin)
        if mesh.is_closed:
            target = 8 * (1 - g)
        else:
            flux = boundary_flux_weights(mesh)
    else:
        system = InteriorSystem(L, mesh.is_boundary)
    rmap = ReducedMap(system, curv.k_ori, curv.A, cones.vertices,
                      boundary_values=boundary_values, flux_weights=flux)
    st = SolverState(mesh=mesh, curv=curv, L=L, system=system, rmap=rmap, cones=cones,
                     bounds=tuple(bounds), target_sum=target, genus=g, eta=eta)
    st.refresh()
    return st
