"""Inserting and removing cones.

New cones go to the extremal vertices of *branches*: maximal connected
same-sign regions where a scalar field exceeds a threshold. Initial cones
use the angle defect as the field, later insertions the current log
conformal factor. Cones always enter with a zero multiplier and leave in
opposite-sign pairs, so the multiplier sum never changes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, bfs_distances
from .state import SolverState

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-9   # |f| at or below this never seeds a cone


@dataclass(frozen=True)
class Branch:
    vertices: tuple[int, ...]
    energy: float
    extremal: int
    sign: int


def find_branches(mesh: Mesh, f, f_thres: float, areas=None, allowed=None) -> list[Branch]:
    """Connected same-sign components of ``{|f| > f_thres}``.

    Sorted by energy ``sum(area * f^2)`` (descending), then by smallest
    member id. ``allowed`` (boolean mask) removes vertices from
    consideration altogether.
    """
    f = np.asarray(f, dtype=float)
    n = len(f)
    areas = np.ones(n) if areas is None else np.asarray(areas, float)
    hot = np.abs(f) > f_thres
    if allowed is not None:
        hot &= np.asarray(allowed, bool)
    sign = np.sign(f).astype(np.int64)
    seen = np.zeros(n, dtype=bool)
    out = []
    nbrs = mesh.neighbors
    for s in np.flatnonzero(hot):
        if seen[s]:
            continue
        comp = []
        stack = [int(s)]
        seen[s] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in nbrs[v]:
                if hot[w] and not seen[w] and sign[w] == sign[s]:
                    seen[w] = True
                    stack.append(int(w))
        comp.sort()
        idx = np.array(comp)
        energy = float(np.sum(areas[idx] * f[idx] ** 2))
        # argmax takes the first (lowest id) maximum
        ext = int(idx[np.argmax(np.abs(f[idx]))])
        out.append(Branch(tuple(comp), energy, ext, int(sign[s])))
    out.sort(key=lambda b: (-b.energy, b.vertices[0]))
    return out


def pick_sites(mesh: Mesh, f, count: int, allowed, areas=None, ratio: float = 0.3) -> list[int]:
    """Up to ``count`` vertices: branch extrema first, then the largest
    ``|f|`` among the remaining allowed vertices. Values at or below the
    noise floor are never picked."""
    f = np.where(np.asarray(allowed, bool), np.asarray(f, dtype=float), 0.0)
    if count <= 0:
        return []
    fmax = float(np.abs(f).max()) if len(f) else 0.0
    if fmax <= NOISE_FLOOR:
        return []
    thres = max(ratio * fmax, NOISE_FLOOR)
    sites = [b.extremal for b in find_branches(mesh, f, thres, areas)[:count]]
    if len(sites) < count:
        taken = set(sites)
        order = np.lexsort((np.arange(len(f)), -np.abs(f)))
        for v in order:
            if len(sites) >= count or abs(f[v]) <= NOISE_FLOOR:
                break
            if int(v) not in taken:
                sites.append(int(v))
                taken.add(int(v))
    return sites


def initial_count(genus: int) -> int:
    return 8 if genus == 0 else abs(8 * (1 - genus))


def initial_cones(mesh: Mesh, k_ori, genus: int, allowed=None, areas=None,
                  ratio: float = 0.3) -> list[int]:
    """Initial cone sites from the angle defect field."""
    allowed = np.ones(mesh.n_vertices, bool) if allowed is None else np.asarray(allowed, bool)
    return pick_sites(mesh, k_ori, initial_count(genus), allowed, areas, ratio)


def adaptive_add_count(E: float, eps_tar: float, n_c: int, n_g: int) -> int:
    """``min(m, 10)`` with ``m = floor(E / eps_tar)`` once there are more
    than ``n_g`` cones, otherwise one."""
    if eps_tar <= 0:
        raise ValueError("eps_tar must be positive")
    m = int(np.floor(E / eps_tar))
    if n_c > n_g and m >= 1:
        return min(m, 10)
    return 1


def add_cones(state: SolverState, count: int, ratio: float = 0.3) -> list[int]:
    """Insert up to ``count`` zero-angle cones where ``|u|`` peaks.

    Returns the new vertices (empty, with a warning, when nothing is
    admissible).
    """
    mesh = state.mesh
    allowed = np.array([state.admissible(v) for v in range(mesh.n_vertices)])
    new = pick_sites(mesh, state.u, count, allowed, state.curv.vertex_areas, ratio)
    if not new:
        msg = f"iteration {state.iteration}: no admissible vertex for a new cone"
        logger.warning(msg)
        state.warnings.append(msg)
        return []
    state.set_cones(state.cones.vertices + new,
                    np.concatenate([state.cones.z, np.zeros(len(new), dtype=np.int64)]))
    return new


@dataclass
class RemovalBudget:
    eta: float = 0.10
    decay: float = 0.9

    def accept(self) -> None:
        self.eta *= self.decay


def removal_radius(n_vertices: int) -> int:
    """Largest edge distance for a removable pair (``d < max(2, 5e-4 N)``)."""
    return int(np.ceil(max(2.0, 5e-4 * n_vertices))) - 1


def candidate_pairs(state: SolverState, radius: int | None = None) -> list[tuple[int, int, int]]:
    """``(distance, a, b)`` for opposite-multiplier cone pairs within range,
    with ``a < b``, ascending by distance then ids."""
    radius = removal_radius(state.mesh.n_vertices) if radius is None else radius
    zmap = dict(zip(state.cones.vertices, state.cones.z.tolist()))
    nz = sorted(v for v, z in zmap.items() if z != 0)
    pairs = []
    for a in nz:
        dist = bfs_distances(state.mesh, [a], cap=radius)
        for b in nz:
            if b > a and zmap[a] == -zmap[b] and 0 <= dist[b] <= radius:
                pairs.append((int(dist[b]), a, b))
    pairs.sort()
    return pairs


def remove_pairs(state: SolverState, budget: RemovalBudget, radius: int | None = None) -> int:
    """Try to delete nearby opposite-angle pairs; returns how many went.

    A pair is accepted when the relative distortion increase stays below
    ``budget.eta``; each acceptance shrinks ``eta`` by the decay factor.
    """
    removed = 0
    for _, a, b in candidate_pairs(state, radius):
        verts = state.cones.vertices
        if a not in verts or b not in verts:
            continue
        keep = [i for i, v in enumerate(verts) if v not in (a, b)]
        new_v = [verts[i] for i in keep]
        new_z = state.cones.z[keep]
        E_old = state.E
        E_new = state.evaluate(new_v, new_z)
        rel = (E_new - E_old) / E_old if E_old > 0 else (0.0 if E_new == 0 else np.inf)
        if rel < budget.eta:
            state.eta = budget.eta
            state.set_cones(new_v, new_z)
            state.record("remove")
            budget.accept()
            state.eta = budget.eta
            removed += 1
    return removed
