"""Integer cone angles with fixed positions.

The distortion is quadratic in the multipliers once ``u`` is written
through the reduced map, so the angle problem is a bounded-integer least
squares problem over the active cones. On closed surfaces the
Gauss-Bonnet sum is eliminated by expressing one multiplier through the
others (its bound check becomes a slab constraint on the remaining sum)
and the global scale is eliminated in closed form.

The integer program is solved by a best-first branch and bound whose
node bounds come from an active-set solve of the continuous relaxation
(accelerated projected gradient as fallback), certified by the
Frank-Wolfe duality gap so that every bound is a true lower bound.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import bfs_distances
from .state import SolverState
from .yamabe import ConeState, ReducedMap

logger = logging.getLogger(__name__)

NODE_BUDGET = 2_000_000


class InfeasibleError(ValueError):
    """No integer assignment satisfies the bounds and the sum constraint."""


@dataclass(frozen=True)
class ActiveSet:
    active: list[int]   # cone vertex ids whose multipliers are free
    frozen: list[int]


def select_active(cones: ConeState, newly_added, n_g: int, mesh) -> ActiveSet:
    """All new cones plus the existing cones nearest to them (BFS edges),
    up to ``n_g`` in total; ties go to the lower vertex id."""
    verts = list(cones.vertices)
    new = [int(v) for v in newly_added if int(v) in set(verts)]
    if len(verts) <= n_g:
        return ActiveSet(sorted(verts), [])
    if len(new) > n_g - 1:
        raise ValueError(f"n_g={n_g} cannot hold {len(new)} new cones plus one more")
    old = [v for v in verts if v not in set(new)]
    if new:
        dist = bfs_distances(mesh, new)
        order = sorted(old, key=lambda v: (dist[v] if dist[v] >= 0 else np.iinfo(np.int64).max, v))
    else:
        order = sorted(old)
    active = new + order[: n_g - len(new)]
    frozen = [v for v in verts if v not in set(active)]
    return ActiveSet(sorted(active), frozen)


@dataclass
class ReducedQP:
    """``min z^T H z + 2 g^T z + c0`` over integers in ``[lo, hi]^m``
    subject to ``s_lo <= sum(z) <= s_hi``.

    ``variables`` are the free cone vertices; ``eliminated`` (closed
    surfaces only) is recovered as ``S_active - sum(z)``.
    """

    H: np.ndarray
    g: np.ndarray
    c0: float
    lo: int
    hi: int
    s_lo: float
    s_hi: float
    variables: list[int]
    eliminated: int | None = None
    s_active: int | None = None
    frozen: dict[int, int] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.g)

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.H @ z + 2.0 * self.g @ z + self.c0)

    def feasible(self, z) -> bool:
        z = np.asarray(z)
        if np.any(z < self.lo) or np.any(z > self.hi):
            return False
        s = z.sum()
        return self.s_lo - 1e-9 <= s <= self.s_hi + 1e-9

    def full_assignment(self, z) -> dict[int, int]:
        """Multiplier per cone vertex (active, eliminated and frozen)."""
        z = np.rint(np.asarray(z)).astype(np.int64)
        out = dict(self.frozen)
        out.update({v: int(x) for v, x in zip(self.variables, z)})
        if self.eliminated is not None:
            out[self.eliminated] = int(self.s_active - z.sum())
        return out

    def to_lp(self) -> str:
        """Instance dump in an LP-like text format for external cross-checks."""
        names = [f"z{v}" for v in self.variables]
        lines = ["Minimize", " obj: [ "]
        terms = []
        for i in range(self.m):
            for j in range(self.m):
                if self.H[i, j] != 0:
                    terms.append(f"{self.H[i, j]:+.17g} {names[i]} * {names[j]}")
        lines[-1] += " ".join(terms) + " ]"
        lines.append("  " + " ".join(f"{2 * self.g[i]:+.17g} {names[i]}" for i in range(self.m))
                     + f" {self.c0:+.17g}")
        lines.append("Subject To")
        if self.m and np.isfinite(self.s_lo):
            lines.append(" sum_lo: " + " + ".join(names) + f" >= {self.s_lo:.17g}")
        if self.m and np.isfinite(self.s_hi):
            lines.append(" sum_hi: " + " + ".join(names) + f" <= {self.s_hi:.17g}")
        lines.append("Bounds")
        lines += [f" {self.lo} <= {n} <= {self.hi}" for n in names]
        lines.append("General")
        lines.append(" " + " ".join(names))
        lines.append("End")
        return "\n".join(lines) + "\n"


def build_reduced_qp(rmap: ReducedMap, cones: ConeState, active: ActiveSet,
                     target_sum: int | None, bounds) -> ReducedQP:
    """Freeze inactive cones at their current multipliers, eliminate the
    Gauss-Bonnet constraint (closed surfaces) and the global scale."""
    lo, hi = int(bounds[0]), int(bounds[1])
    if lo > hi:
        raise InfeasibleError("empty integer bounds")
    zmap = {v: int(z) for v, z in zip(cones.vertices, cones.z)}
    pos = {v: i for i, v in enumerate(rmap.cones)}
    if set(pos) != set(zmap):
        raise ValueError("reduced map is out of sync with the cone state")
    A = rmap.A
    frozen = {v: zmap[v] for v in active.frozen}
    c = rmap.d.copy()
    for v, zv in frozen.items():
        if zv:
            c += rmap.G[:, pos[v]] * zv
    act = sorted(active.active)
    if target_sum is not None:
        s_active = int(target_sum - sum(frozen.values()))
        if not act:
            if s_active != 0:
                raise InfeasibleError(f"no active cones but the active sum must be {s_active}")
            free, elim = [], None
        else:
            elim = act[-1]
            free = act[:-1]
            if not len(act) * lo <= s_active <= len(act) * hi:
                raise InfeasibleError(
                    f"sum {s_active} unreachable with {len(act)} active cones in [{lo}, {hi}]")
            ge = rmap.G[:, pos[elim]]
            c = c + ge * s_active
        B = (np.stack([rmap.G[:, pos[v]] - ge for v in free], axis=1)
             if free else np.zeros((rmap.n, 0)))
        s_lo, s_hi = (s_active - hi, s_active - lo) if elim is not None else (0.0, 0.0)
    else:
        s_active, elim, free = None, None, act
        B = np.stack([rmap.G[:, pos[v]] for v in free], axis=1) if free else np.zeros((rmap.n, 0))
        s_lo, s_hi = -np.inf, np.inf
    if rmap.has_scale:
        c = c - np.dot(A, c)
        B = B - (A @ B)[None, :]
    AB = B * A[:, None]
    H = B.T @ AB
    H = 0.5 * (H + H.T)
    g = AB.T @ c
    c0 = float(np.dot(c, A * c))
    return ReducedQP(H, g, c0, lo, hi, float(s_lo), float(s_hi), free, elim, s_active, frozen)


# -- continuous relaxation ---------------------------------------------------


def _project(y, l, u, s_lo, s_hi):
    """Euclidean projection onto ``{l <= x <= u, s_lo <= sum(x) <= s_hi}``."""
    x = np.clip(y, l, u)
    s = x.sum()
    if s_lo <= s <= s_hi:
        return x
    target = s_lo if s < s_lo else s_hi
    # sum(clip(y - t)) is piecewise linear and non-increasing in t
    bps = np.unique(np.concatenate([y - l, y - u]))
    vals = np.clip(y[None, :] - bps[:, None], l, u).sum(axis=1)
    k = int(np.searchsorted(-vals, -target, side="left"))
    if k == 0:
        t = bps[0]
    elif k >= len(bps):
        t = bps[-1]
    else:
        t0, t1 = bps[k - 1], bps[k]
        v0, v1 = vals[k - 1], vals[k]
        t = t0 if v0 == v1 else t0 + (v0 - target) * (t1 - t0) / (v0 - v1)
    return np.clip(y - t, l, u)


def _lp_min(cvec, l, u, s_lo, s_hi):
    """Minimize ``cvec . y`` over the box-and-slab set (greedy by cost)."""
    order = np.argsort(cvec, kind="stable")
    room = (u - l)[order]
    neg = cvec[order] < 0
    base = l.sum()
    # raise negative-cost coordinates while the upper sum allows,
    # then non-negative ones only as far as the lower sum requires
    budget = np.where(neg, s_hi - base, max(s_lo - base, 0.0))
    steps = np.zeros_like(room)
    used = 0.0
    nneg = int(neg.sum())
    if nneg:
        cum = np.concatenate([[0.0], np.cumsum(room[:nneg])[:-1]])
        steps[:nneg] = np.clip(budget[0] - cum, 0.0, room[:nneg])
        used = steps[:nneg].sum()
    if nneg < len(room):
        need = max(s_lo - base - used, 0.0)
        cum = np.concatenate([[0.0], np.cumsum(room[nneg:])[:-1]])
        steps[nneg:] = np.clip(need - cum, 0.0, room[nneg:])
    y = l.astype(float).copy()
    y[order] += steps
    return y


def _active_set_qp(H, g, l, u, s_lo, s_hi, x0, max_iter=None):
    """Primal active-set method for ``min x^T H x + 2 g^T x`` over the
    box-and-slab set. Returns ``None`` if it fails to settle (the caller
    falls back to projected gradient)."""
    fixed = l == u
    if fixed.all():
        return l.astype(float).copy()
    x = _project(np.asarray(x0, dtype=float), l, u, s_lo, s_hi)
    x[fixed] = l[fixed]
    G = 2.0 * H
    c = 2.0 * g
    m = len(g)
    # box state per coordinate: 0 free, -1 at lower, +1 at upper
    box = np.zeros(m, dtype=np.int64)
    box[x <= l] = -1
    box[(x >= u) & ~fixed] = 1
    box[fixed] = -1
    s = x.sum()
    sum_state = 0  # -1 lower sum active, +1 upper sum active
    if np.isfinite(s_lo) and abs(s - s_lo) <= 1e-12 * max(1.0, abs(s_lo)) and (box == 0).any():
        sum_state = -1
    elif np.isfinite(s_hi) and abs(s - s_hi) <= 1e-12 * max(1.0, abs(s_hi)) and (box == 0).any():
        sum_state = 1
    max_iter = max_iter or 20 * m + 50
    for _ in range(max_iter):
        r = G @ x + c
        F = np.flatnonzero(box == 0)
        p = np.zeros(m)
        lam_s = 0.0
        if len(F):
            GFF = G[np.ix_(F, F)]
            if sum_state:
                k = len(F)
                K = np.zeros((k + 1, k + 1))
                K[:k, :k] = GFF
                K[:k, k] = 1.0
                K[k, :k] = 1.0
                rhs = np.concatenate([-r[F], [0.0]])
                try:
                    sol = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    return None
                p[F] = sol[:k]
                nu = -sol[k]          # r_F + G p = nu * 1
            else:
                try:
                    p[F] = np.linalg.solve(GFF, -r[F])
                except np.linalg.LinAlgError:
                    return None
                nu = 0.0
        else:
            nu = 0.0
        scale = max(1.0, float(np.abs(x).max()))
        if np.abs(p).max() <= 1e-12 * scale:
            # multipliers: r = sum_W a_i lam_i
            if sum_state:
                lam_s = -sum_state * nu      # sum row is +1 (lower) or -1 (upper)
            lam = np.full(m, np.inf)
            at_lo = (box == -1) & ~fixed
            at_hi = box == 1
            lam[at_lo] = r[at_lo] - nu
            lam[at_hi] = nu - r[at_hi]
            tol = 1e-12 * max(1.0, float(np.abs(r).max()))
            j = int(np.argmin(lam))
            worst = lam[j]
            if sum_state and lam_s < worst:
                if lam_s >= -tol:
                    return x
                sum_state = 0
                continue
            if worst >= -tol:
                return x
            box[j] = 0
            continue
        # step with blocking constraints
        alpha = 1.0
        block = None
        neg = (p < 0) & (box == 0)
        if neg.any():
            a = (l[neg] - x[neg]) / p[neg]
            k = int(np.argmin(a))
            if a[k] < alpha:
                alpha, block = a[k], ("lo", int(np.flatnonzero(neg)[k]))
        pos = (p > 0) & (box == 0)
        if pos.any():
            a = (u[pos] - x[pos]) / p[pos]
            k = int(np.argmin(a))
            if a[k] < alpha:
                alpha, block = a[k], ("hi", int(np.flatnonzero(pos)[k]))
        ps = p.sum()
        if not sum_state and ps != 0:
            if ps < 0 and np.isfinite(s_lo):
                a = (s_lo - x.sum()) / ps
                if a < alpha:
                    alpha, block = max(a, 0.0), ("slo", -1)
            elif ps > 0 and np.isfinite(s_hi):
                a = (s_hi - x.sum()) / ps
                if a < alpha:
                    alpha, block = max(a, 0.0), ("shi", -1)
        x = x + alpha * p
        if block is not None:
            kind, i = block
            if kind == "lo":
                x[i] = l[i]
                box[i] = -1
            elif kind == "hi":
                x[i] = u[i]
                box[i] = 1
            elif (box == 0).sum() > 0:
                sum_state = -1 if kind == "slo" else 1
        x = np.clip(x, l, u)
    return None


def solve_relaxation(H, g, c0, l, u, s_lo, s_hi, x0=None, tol=1e-8, max_iter=5000):
    """Continuous relaxation: active set first, accelerated projected
    gradient if that does not settle.

    Returns ``(x, f(x), lower_bound)``; the lower bound subtracts the
    Frank-Wolfe gap and is valid at any iterate.
    """
    m = len(g)
    if m:
        xa = _active_set_qp(H, g, l, u, s_lo, s_hi, np.zeros(m) if x0 is None else x0)
        if xa is not None:
            xa = _project(xa, l, u, s_lo, s_hi)
            grad = 2.0 * (H @ xa + g)
            f = float(xa @ H @ xa + 2 * g @ xa + c0)
            gap = float(grad @ (xa - _lp_min(grad, l, u, s_lo, s_hi)))
            if gap <= tol * max(1.0, abs(f)):
                return xa, f, f - max(gap, 0.0)
            x0 = xa
    lip = 2.0 * max(float(np.linalg.eigvalsh(H)[-1]) if m else 0.0, 1e-300)
    x = _project(np.zeros(m) if x0 is None else np.asarray(x0, float), l, u, s_lo, s_hi)
    y = x.copy()
    t = 1.0
    best = (np.inf, x, -np.inf)
    for it in range(max_iter):
        grad_y = 2.0 * (H @ y + g)
        x_new = _project(y - grad_y / lip, l, u, s_lo, s_hi)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if it % 5 == 0 or it == max_iter - 1:
            grad = 2.0 * (H @ x + g)
            f = float(x @ H @ x + 2 * g @ x + c0)
            gap = float(grad @ (x - _lp_min(grad, l, u, s_lo, s_hi)))
            lb = f - max(gap, 0.0)
            if lb > best[2] or f < best[0]:
                best = (min(f, best[0]), x if f <= best[0] else best[1], max(lb, best[2]))
            if gap <= tol * max(1.0, abs(f)):
                break
            # restart momentum when it stops helping
            if f > best[0] + 1e-15:
                y = best[1].copy()
                t = 1.0
    return best[1], best[0], best[2]


# -- branch and bound ------------------------------------------------------


@dataclass
class BBResult:
    z: np.ndarray
    objective: float
    nodes: int
    exhausted: bool = False


def _round_feasible(x, l, u, s_lo, s_hi):
    z = np.clip(np.rint(x), l, u)
    s = z.sum()
    frac = x - z
    if s < s_lo:
        for i in np.argsort(-frac, kind="stable"):
            while z[i] < u[i] and s < s_lo:
                z[i] += 1
                s += 1
    elif s > s_hi:
        for i in np.argsort(frac, kind="stable"):
            while z[i] > l[i] and s > s_hi:
                z[i] -= 1
                s -= 1
    if s_lo - 1e-9 <= s <= s_hi + 1e-9:
        return z
    return None


def branch_and_bound(qp: ReducedQP, incumbent=None, node_budget: int = NODE_BUDGET,
                     rtol: float = 1e-10) -> BBResult:
    """Global minimum of the reduced integer program.

    Best-first search on relaxation lower bounds; branches on the most
    fractional variable (lowest index on ties). ``incumbent`` seeds the
    upper bound when it is feasible. When ``node_budget`` runs out the
    best point found so far is returned with ``exhausted=True``.
    """
    m = qp.m
    lo = np.full(m, float(qp.lo))
    hi = np.full(m, float(qp.hi))
    s_lo, s_hi = qp.s_lo, qp.s_hi
    if m == 0:
        if not (s_lo - 1e-9 <= 0.0 <= s_hi + 1e-9) or not (qp.lo <= qp.hi):
            raise InfeasibleError("eliminated multiplier outside its bounds")
        return BBResult(np.zeros(0, dtype=np.int64), qp.c0, 1)
    if lo.sum() > s_hi + 1e-9 or hi.sum() < s_lo - 1e-9:
        raise InfeasibleError("sum constraint unreachable within the integer box")

    best_z = None
    best_f = np.inf
    if incumbent is not None:
        zi = np.asarray(incumbent, dtype=float)
        if zi.shape == (m,) and qp.feasible(zi):
            best_z, best_f = zi.copy(), qp.objective(zi)

    def slack(f):
        return rtol * max(1.0, abs(f))

    def consider(z):
        nonlocal best_z, best_f
        f = qp.objective(z)
        if f < best_f:
            best_z, best_f = z.copy(), f
        return f

    H, g, c0 = qp.H, qp.g, qp.c0
    x, f, lb = solve_relaxation(H, g, c0, lo, hi, s_lo, s_hi)
    heap = [(lb, 0, lo, hi, x)]
    counter = 1
    nodes = 0
    exhausted = False
    while heap:
        lb, _, l, u, x = heapq.heappop(heap)
        if best_z is not None and lb > best_f + slack(best_f):
            break
        nodes += 1
        if nodes > node_budget:
            exhausted = True
            break
        if np.all(l == u):
            consider(l)
            continue
        zr = _round_feasible(x, l, u, s_lo, s_hi)
        if zr is not None:
            fr = consider(zr)
            if np.all(np.abs(x - zr) < 1e-9) or fr <= lb + slack(fr) * 0.1:
                continue
        free = l < u
        fracs = np.where(free, np.abs(x - np.rint(x)), -1.0)
        i = int(np.argmax(fracs))
        if fracs[i] <= 1e-9:
            i = int(np.flatnonzero(free)[0])
        split = np.floor(x[i] + 1e-12)
        split = min(max(split, l[i]), u[i] - 1)
        for cl, cu in ((l[i], split), (split + 1, u[i])):
            l2 = l.copy()
            u2 = u.copy()
            l2[i], u2[i] = cl, cu
            if l2.sum() > s_hi + 1e-9 or u2.sum() < s_lo - 1e-9:
                continue
            x2, f2, lb2 = solve_relaxation(H, g, c0, l2, u2, s_lo, s_hi, x0=x)
            if best_z is not None and lb2 > best_f + slack(best_f):
                continue
            heapq.heappush(heap, (lb2, counter, l2, u2, x2))
            counter += 1
    if best_z is None:
        if exhausted:
            raise InfeasibleError("node budget exhausted before a feasible point was found")
        raise InfeasibleError("no feasible integer point")
    return BBResult(np.rint(best_z).astype(np.int64), best_f, nodes, exhausted)


def enumerate_qp(qp: ReducedQP) -> tuple[np.ndarray, float]:
    """Exhaustive minimum (test oracle for small instances)."""
    import itertools

    best = (None, np.inf)
    for z in itertools.product(range(qp.lo, qp.hi + 1), repeat=qp.m):
        z = np.array(z, dtype=float)
        if not qp.feasible(z):
            continue
        f = qp.objective(z)
        if f < best[1]:
            best = (z, f)
    if best[0] is None:
        raise InfeasibleError("no feasible integer point")
    return best[0].astype(np.int64), best[1]


def _feasible(state: SolverState) -> bool:
    z = state.cones.z
    lo, hi = state.bounds
    if len(z) and (z.min() < lo or z.max() > hi):
        return False
    return state.target_sum is None or int(z.sum()) == state.target_sum


def solve_angles(state: SolverState, newly_added=(), n_g: int = 30,
                 node_budget: int = NODE_BUDGET, dump_lp=None) -> BBResult | None:
    """Re-optimize the multipliers of the active cones.

    The current multipliers are always a feasible incumbent, so the
    distortion never increases. Returns the branch-and-bound result (or
    ``None`` when there are no cones).
    """
    if len(state.cones) == 0:
        state.refresh()
        return None
    active = select_active(state.cones, newly_added, n_g, state.mesh)
    qp = build_reduced_qp(state.rmap, state.cones, active, state.target_sum, state.bounds)
    if dump_lp is not None:
        dump_lp(qp.to_lp())
    zmap = dict(zip(state.cones.vertices, state.cones.z.tolist()))
    current = np.array([zmap[v] for v in qp.variables], dtype=float)
    res = branch_and_bound(qp, incumbent=current, node_budget=node_budget)
    if res.exhausted:
        state.warnings.append(f"iteration {state.iteration}: angle search hit the node budget")
    new = qp.full_assignment(res.z)
    z_new = np.array([new[v] for v in state.cones.vertices], dtype=np.int64)
    E_old = state.E
    E_new = state.rmap.distortion(z_new)
    # an infeasible starting point (e.g. all-zero multipliers on a closed
    # surface) carries no guarantee worth keeping
    if E_new <= E_old or not np.isfinite(E_old) or not _feasible(state):
        state.set_cones(state.cones.vertices, z_new)
    else:
        # round-off can only produce ties here; keep the previous multipliers
        state.refresh()
    return res
