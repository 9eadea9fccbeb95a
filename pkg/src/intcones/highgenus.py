"""Holonomy integers for closed surfaces of positive genus.

Cutting along the homology loops splits every loop vertex into a left and
a right copy. Both copies share one unknown of ``u``; the right copy adds
a seam offset ``du`` so scale may jump across the cut. Where the two
loops of a handle cross, the four corners carry ``u_x``, ``u_x + du`` and
two extra unknowns, so the cut adds exactly ``2g`` unknowns.

The system has one row per original vertex (sum of its copies' cut
Laplacian rows) and one row per loop (sum of the left copies' rows),
whose right-hand side fixes the loop holonomy to ``pi/2 * r``::

    L_g u = pi/2 (z; r) - (k_ori; k_g) + K du

With cones fixed, ``u`` is affine in ``(r, du)``; the distortion plus
``lambda_d`` times the squared seam jump is minimized exactly over
``(du, a)`` for every ``r`` and over integer ``r`` by branch and bound.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .linalg import PinnedSystem, SingularSystemError
from .mesh import Mesh, bfs_distances
from .miqp import ReducedQP, branch_and_bound
from .topology import HomologyBasis, HomologyError, homology_loops
from .yamabe import QUARTER

logger = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


@dataclass
class CutMesh:
    """Copies of the mesh vertices after cutting along the loops.

    ``copy_var[c]`` is the unknown of copy ``c`` and ``copy_slot[c]`` its
    seam-offset slot (-1 when the offset is structurally zero).
    ``face_copies`` replaces ``mesh.faces`` on the cut surface.
    """

    mesh: Mesh
    basis: HomologyBasis
    face_copies: np.ndarray
    copy_vertex: np.ndarray
    copy_var: np.ndarray
    copy_slot: np.ndarray
    left_copies: list[list[list[int]]]    # per loop, per loop vertex
    right_copies: list[list[list[int]]]
    n_slots: int

    @property
    def n_vars(self) -> int:
        return self.mesh.n_vertices + 2 * self.basis.genus

    @property
    def n_copies(self) -> int:
        return len(self.copy_vertex)

    def seam_pairs(self) -> list[tuple[int, int]]:
        """``(left copy, right copy)`` pairs across each loop."""
        pairs = []
        for L, R in zip(self.left_copies, self.right_copies):
            for lc, rc in zip(L, R):
                pairs += list(zip(lc, rc))
        return pairs


def _loop_side(mesh: Mesh, basis: HomologyBasis):
    """``side[(loop, vertex)] -> set of left-fan faces``."""
    out = {}
    for i, lp in enumerate(basis.loops):
        for v, fan in zip(lp.vertices, lp.left_faces):
            out[(i, v)] = set(fan)
    return out


def cut_mesh(mesh: Mesh, basis: HomologyBasis | None = None) -> CutMesh:
    if not mesh.is_closed:
        raise HomologyError("cutting needs a closed surface")
    basis = homology_loops(mesh) if basis is None else basis
    g = basis.genus
    if g == 0:
        raise HomologyError("genus-zero surface has no loops to cut")
    n = mesh.n_vertices
    # which loops pass through each vertex
    through: dict[int, list[int]] = {}
    for i, lp in enumerate(basis.loops):
        for v in lp.vertices:
            through.setdefault(v, []).append(i)
    for i, lp in enumerate(basis.loops):
        vs = lp.vertices
        for a, b in zip(vs, vs[1:] + vs[:1]):
            for j, other in enumerate(basis.loops):
                if j > i:
                    ov = other.vertices
                    if any({a, b} == {p, q} for p, q in zip(ov, ov[1:] + ov[:1])):
                        raise HomologyError("loops share an edge; choose a different basis")
    inter = {x.vertex: x for x in basis.intersections}
    for v, ls in through.items():
        if len(ls) > 2 or (len(ls) == 2 and v not in inter):
            raise HomologyError(f"vertex {v} lies on loops {ls} without a registered crossing")
    left = _loop_side(mesh, basis)

    keys: dict[tuple, int] = {}
    copy_vertex, copy_var, copy_slot = [], [], []
    n_slots = 0

    def copy_for(v: int, tag) -> int:
        nonlocal n_slots
        key = (v, tag)
        if key in keys:
            return keys[key]
        c = len(copy_vertex)
        keys[key] = c
        copy_vertex.append(v)
        slot = -1
        if tag is None or tag == "L":
            var = v
        elif tag == "R":
            var, slot = v, n_slots
            n_slots += 1
        else:
            x = inter[v]
            k = basis.intersections.index(x)
            side_a, side_b = tag
            if (side_a, side_b) == ("L", "L"):
                var = v
            elif (side_a, side_b) == ("R", "L"):
                var, slot = v, n_slots
                n_slots += 1
            elif (side_a, side_b) == ("L", "R"):
                var = n + 2 * k
            else:
                var = n + 2 * k + 1
        copy_var.append(var)
        copy_slot.append(slot)
        return c

    # deterministic creation order: plain vertices first
    for v in range(n):
        if v not in through:
            copy_for(v, None)
    face_copies = np.empty_like(mesh.faces)
    for f, tri in enumerate(mesh.faces.tolist()):
        for k, v in enumerate(tri):
            ls = through.get(v)
            if not ls:
                tag = None
            elif len(ls) == 1:
                tag = "L" if f in left[(ls[0], v)] else "R"
            else:
                x = inter[v]
                tag = ("L" if f in left[(x.a, v)] else "R", "L" if f in left[(x.b, v)] else "R")
            face_copies[f, k] = copy_for(v, tag)

    left_copies, right_copies = [], []
    for i, lp in enumerate(basis.loops):
        Ls, Rs = [], []
        for v in lp.vertices:
            if v in inter:
                x = inter[v]
                if i == x.a:
                    Ls.append([keys[(v, ("L", "L"))], keys[(v, ("L", "R"))]])
                    Rs.append([keys[(v, ("R", "L"))], keys[(v, ("R", "R"))]])
                else:
                    Ls.append([keys[(v, ("L", "L"))], keys[(v, ("R", "L"))]])
                    Rs.append([keys[(v, ("L", "R"))], keys[(v, ("R", "R"))]])
            else:
                Ls.append([keys[(v, "L")]])
                Rs.append([keys[(v, "R")]])
        left_copies.append(Ls)
        right_copies.append(Rs)
    return CutMesh(mesh, basis, face_copies, np.array(copy_vertex), np.array(copy_var),
                   np.array(copy_slot), left_copies, right_copies, n_slots)


def cut_laplacian(cut: CutMesh) -> sparse.csr_matrix:
    """Cotangent Laplacian of the cut surface (over copies)."""
    f = cut.face_copies
    cot = cut.mesh.corner_cotangents
    nc = cut.n_copies
    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, (k + 1) % 3]
        j = f[:, (k + 2) % 3]
        w = 0.5 * cot[:, k]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    L = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nc, nc))
    L.sum_duplicates()
    return L


def _row_map(cut: CutMesh) -> sparse.csr_matrix:
    """``R`` (N' x copies): vertex rows sum all copies, loop rows sum the
    left copies."""
    n = cut.mesh.n_vertices
    rows = list(cut.copy_vertex)
    cols = list(range(cut.n_copies))
    for i, Ls in enumerate(cut.left_copies):
        for lc in Ls:
            rows += [n + i] * len(lc)
            cols += lc
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(cut.n_vars, cut.n_copies))


def _var_maps(cut: CutMesh):
    nc = cut.n_copies
    P = sparse.csr_matrix((np.ones(nc), (np.arange(nc), cut.copy_var)), shape=(nc, cut.n_vars))
    has = cut.copy_slot >= 0
    Q = sparse.csr_matrix((np.ones(has.sum()), (np.flatnonzero(has), cut.copy_slot[has])),
                          shape=(nc, cut.n_slots))
    return P, Q


def holonomy_rows(mesh: Mesh, basis: HomologyBasis, cut: CutMesh | None = None):
    """Per loop: (row over the N' unknowns and the seam slots, sum of k_g).

    The row is the sum of the left-copy cut Laplacian rows, i.e. it uses
    only the cotangent weights of the left fans.
    """
    cut = cut_mesh(mesh, basis) if cut is None else cut
    Lc = cut_laplacian(cut)
    P, Q = _var_maps(cut)
    out = []
    for i, Ls in enumerate(cut.left_copies):
        sel = np.zeros(cut.n_copies)
        for lc in Ls:
            sel[lc] = 1.0
        row_u = (Lc.T @ sel) @ P
        row_d = (Lc.T @ sel) @ Q
        out.append((np.asarray(row_u).ravel(), np.asarray(row_d).ravel(), basis.loops[i].total_k_g))
    return out


@dataclass
class HolonomySystem:
    cut: CutMesh
    L_g: sparse.csr_matrix
    K: sparse.csr_matrix
    k_g: np.ndarray               # per-loop sums
    cones: list[int]
    z: np.ndarray
    k_ori: np.ndarray
    areas: np.ndarray             # normalized per unknown
    pin: int
    system: PinnedSystem = field(repr=False)

    @property
    def n_vars(self) -> int:
        return self.L_g.shape[0]

    @property
    def n_loops(self) -> int:
        return len(self.k_g)

    def rhs(self, r) -> np.ndarray:
        n = self.cut.mesh.n_vertices
        b = np.zeros(self.n_vars)
        b[:n] = -self.k_ori
        if len(self.cones):
            b[self.cones] += QUARTER * self.z
        b[n:] = QUARTER * np.asarray(r, dtype=float) - self.k_g
        return b

    def residual(self, u, du, r) -> float:
        """Max violation over all rows (the pinned row included)."""
        return float(np.abs(self.L_g @ u - self.rhs(r) - self.K @ du).max())


def _variable_areas(cut: CutMesh) -> np.ndarray:
    fa = cut.mesh.face_areas / 3.0
    per_copy = np.bincount(cut.face_copies.ravel(), weights=np.repeat(fa, 3), minlength=cut.n_copies)
    a = np.bincount(cut.copy_var, weights=per_copy, minlength=cut.n_vars)
    return a / a.sum()


def assemble_system(cut: CutMesh, cones, z, k_ori, pin: int | None = None,
                    rank_tol: float = 1e-6) -> HolonomySystem:
    """Build ``L_g`` and ``K`` and factor the pinned ``L_g``.

    The rank check solves a compatible system through the pin and demands
    a small relative residual on every row, which holds exactly when the
    constants span the null space.
    """
    Lc = cut_laplacian(cut)
    R = _row_map(cut)
    P, Q = _var_maps(cut)
    L_g = sparse.csr_matrix(R @ Lc @ P)
    K = sparse.csr_matrix(-(R @ Lc @ Q))
    cones = [int(c) for c in cones]
    z = np.asarray(z, dtype=np.int64)
    mesh = cut.mesh
    if pin is None:
        loopv = set(cut.copy_vertex[cut.copy_slot >= 0].tolist())
        for lp in cut.basis.loops:
            loopv |= set(lp.vertices)
        forbidden = loopv | set(cones)
        dist = bfs_distances(mesh, sorted(forbidden)).astype(float)
        dist[sorted(forbidden)] = -np.inf
        pin = int(np.argmax(dist))
    try:
        system = PinnedSystem(L_g, pin, symmetric=False)
    except SingularSystemError as exc:
        raise AssemblyError(f"pinned L_g is singular: {exc}") from exc
    k_g = np.array([lp.total_k_g for lp in cut.basis.loops])
    hs = HolonomySystem(cut, L_g, K, k_g, cones, z, np.asarray(k_ori, float),
                        _variable_areas(cut), pin, system)
    # rank test on a random compatible right-hand side
    rng = np.random.default_rng(0)
    b = rng.standard_normal(hs.n_vars)
    b[: mesh.n_vertices] -= b[: mesh.n_vertices].mean()
    x = system.solve(b)
    rel = np.abs(L_g @ x - b).max() / max(1.0, np.abs(b).max())
    if rel > rank_tol or np.abs(L_g @ np.ones(hs.n_vars)).max() > 1e-9 * max(1.0, abs(L_g).max()):
        raise AssemblyError(f"L_g rank test failed (relative residual {rel:.2e})")
    return hs


@dataclass
class HolonomyResult:
    r: np.ndarray
    du: np.ndarray
    a: float
    u: np.ndarray                # N' unknowns, scale included
    E: float
    E_dif: float
    objective: float
    residual: float
    r_box: tuple[np.ndarray, np.ndarray]
    at_box_edge: bool
    nodes: int
    basis: HomologyBasis | None = None
    cut: CutMesh | None = None


@dataclass
class _Affine:
    """Objective residual ``f0 + J_r r + J_c c`` with ``c = (du, a)``."""

    f0: np.ndarray
    J_r: np.ndarray
    J_c: np.ndarray
    u0: np.ndarray
    U_r: np.ndarray
    U_d: np.ndarray
    n_vars: int
    pairs_var: np.ndarray
    pairs_slot: np.ndarray


def _affine_model(hs: HolonomySystem, lambda_d: float) -> _Affine:
    S = hs.system
    n = hs.cut.mesh.n_vertices
    nv, ns, nl = hs.n_vars, hs.cut.n_slots, hs.n_loops
    u0 = S.solve(hs.rhs(np.zeros(nl)))
    E_r = np.zeros((nv, nl))
    E_r[n + np.arange(nl), np.arange(nl)] = QUARTER
    U_r = S._lu.solve(_mask(E_r, S.p))
    Kd = hs.K.toarray()
    U_d = S._lu.solve(_mask(Kd, S.p)) if ns else np.zeros((nv, 0))
    w = np.sqrt(hs.areas)
    # seam pairs: (left copy, right copy) -> jump U_left - U_right
    cut = hs.cut
    pl, pr = zip(*cut.seam_pairs())
    pl, pr = np.array(pl), np.array(pr)
    D_u = sparse.csr_matrix(
        (np.concatenate([np.ones(len(pl)), -np.ones(len(pr))]),
         (np.concatenate([np.arange(len(pl))] * 2), np.concatenate([cut.copy_var[pl], cut.copy_var[pr]]))),
        shape=(len(pl), nv))
    D_d = np.zeros((len(pl), ns))
    for k, (cl, cr) in enumerate(zip(pl, pr)):
        if cut.copy_slot[cl] >= 0:
            D_d[k, cut.copy_slot[cl]] += 1.0
        if cut.copy_slot[cr] >= 0:
            D_d[k, cut.copy_slot[cr]] -= 1.0
    sl = np.sqrt(lambda_d)
    f0 = np.concatenate([w * u0, sl * (D_u @ u0)])
    J_r = np.vstack([w[:, None] * U_r, sl * (D_u @ U_r)])
    J_du = np.vstack([w[:, None] * U_d, sl * (D_u @ U_d + D_d)])
    J_a = np.concatenate([w, np.zeros(len(pl))])[:, None]
    J_c = np.hstack([J_du, J_a])
    return _Affine(f0, J_r, J_c, u0, U_r, U_d, nv,
                   np.stack([pl, pr], 1), D_d)


def _mask(M, p):
    M = np.array(M, dtype=float, copy=True)
    M[p] = 0.0
    return M


def _projector(J_c: np.ndarray):
    """Orthonormal basis of range(J_c) (SVD with a relative rank cut)."""
    if J_c.shape[1] == 0:
        return np.zeros((J_c.shape[0], 0))
    Uc, s, _ = np.linalg.svd(J_c, full_matrices=False)
    keep = s > s[0] * 1e-12 * max(J_c.shape)
    return Uc[:, keep]


def _inner_solve(model: _Affine, r):
    """Best ``(du, a)`` for fixed ``r`` (minimum-norm least squares)."""
    rhs = -(model.f0 + model.J_r @ np.asarray(r, dtype=float))
    c, *_ = np.linalg.lstsq(model.J_c, rhs, rcond=None)
    return c[:-1], float(c[-1])


def r_box(hs: HolonomySystem, width: int = 2):
    center = np.rint(hs.k_g / QUARTER).astype(np.int64)
    return center - width, center + width


def holonomy_objective(model: _Affine, r, du, a) -> float:
    c = np.concatenate([du, [a]])
    res = model.f0 + model.J_r @ np.asarray(r, float) + model.J_c @ c
    return float(res @ res)


def solve_holonomy(hs: HolonomySystem, lambda_d: float = 1e6, width: int = 2,
                   bounds_r=None, node_budget: int = 2_000_000) -> HolonomyResult:
    """Global optimum over integer ``r`` in the box and real ``(du, a)``.

    The box defaults to the rounded loop curvature sums ``+- width``.
    """
    if not lambda_d > 0:
        raise ValueError("lambda_d must be positive")
    lo, hi = r_box(hs, width) if bounds_r is None else (np.asarray(bounds_r[0], np.int64),
                                                          np.asarray(bounds_r[1], np.int64))
    if np.any(lo > hi):
        raise ValueError("empty holonomy box")
    model = _affine_model(hs, lambda_d)
    Qb = _projector(model.J_c)
    Jr_perp = model.J_r - Qb @ (Qb.T @ model.J_r)
    f_perp = model.f0 - Qb @ (Qb.T @ model.f0)
    # shift to a zero-centered box so the generic solver's scalar bounds apply
    center = lo
    span = hi - lo
    f_c = f_perp + Jr_perp @ center
    H = Jr_perp.T @ Jr_perp
    H = 0.5 * (H + H.T)
    g = Jr_perp.T @ f_c
    c0 = float(f_c @ f_c)
    if np.all(span == span[0]):
        qp = ReducedQP(H, g, c0, 0, int(span[0]), -np.inf, np.inf, list(range(len(g))))
        res = branch_and_bound(qp, node_budget=node_budget)
        r = center + res.z
        nodes = res.nodes
    else:  # uneven box: enumerate (only reachable with user-supplied boxes)
        import itertools

        best = (np.inf, None)
        for rr in itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]):
            x = np.array(rr) - center
            val = float(x @ H @ x + 2 * g @ x + c0)
            if val < best[0]:
                best = (val, np.array(rr))
        r, nodes = best[1], int(np.prod(span + 1))
    du, a = _inner_solve(model, r)
    u = model.u0 + model.U_r @ r + model.U_d @ du + a
    E = float(np.sqrt(max(hs.areas @ (u * u), 0.0)))
    E_dif = seam_jump(hs.cut, u, du)
    obj = holonomy_objective(model, r, du, a)
    edge = bool(np.any(r == lo) | np.any(r == hi)) if bounds_r is None else bool(
        np.any((r == lo) & (lo != hi)) | np.any((r == hi) & (lo != hi)))
    return HolonomyResult(np.asarray(r, dtype=np.int64), du, a, u, E, E_dif, obj,
                          hs.residual(u, du, r), (lo, hi), edge, nodes)


def seam_jump(cut: CutMesh, u: np.ndarray, du: np.ndarray) -> float:
    """``sqrt(sum (U_left - U_right)^2)`` over all seam copy pairs."""
    vals = u[cut.copy_var] + np.where(cut.copy_slot >= 0, du[np.maximum(cut.copy_slot, 0)] if len(du) else 0.0, 0.0)
    pl, pr = zip(*cut.seam_pairs())
    d = vals[list(pl)] - vals[list(pr)]
    return float(np.sqrt(d @ d))


def holonomy_stage(state, config) -> HolonomyResult:
    """Stage 2: fix the cones from stage 1 and optimize the holonomy."""
    basis = homology_loops(state.mesh)
    cut = cut_mesh(state.mesh, basis)
    hs = assemble_system(cut, state.cones.vertices, state.cones.z, state.k_ori)
    res = solve_holonomy(hs, config.lambda_d, config.r_width)
    res.basis, res.cut = basis, cut
    if res.at_box_edge:
        state.warnings.append("holonomy optimum lies on the edge of the integer box")
    return res
