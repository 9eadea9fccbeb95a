"""Cone relocation with fixed angles.

The distortion sensitivity to moving a cone uses the adjoint field ``h``
of the fixed-angle problem, ``Delta h = -2u`` on the whole surface. With
the positive semidefinite cotangent Laplacian (``L ~ -Delta``) this reads
``L h = 2 A u``; it has a fixed coefficient matrix, so the factorization
used for the Yamabe solves is reused here.

A cone at ``c`` may hop to a one-ring neighbor ``w``; the discrete normal
derivative is taken along the edge ``c -> w``::

    dE/dn = (mean_ring(u^2) - (du/dn)(dh/dn)) / (2E)

with ``h`` expressed in area units so both terms scale alike. Every hop is
verified by re-solving; a hop that does not lower ``E`` is rejected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import InteriorSystem, PinnedSystem
from .state import SolverState

logger = logging.getLogger(__name__)

EPS_MIN = 1e-9


class ConvergedSignal(Exception):
    """Raised when E is below the threshold where derivatives are meaningful."""


class AdjointCompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class AdjointField:
    h: np.ndarray
    pin: int | None


@dataclass(frozen=True)
class MoveProposal:
    cone: int
    target: int
    value: float


def solve_adjoint(system, u: np.ndarray, A: np.ndarray, tol: float = 1e-9) -> AdjointField:
    """Solve ``L h = 2 A u`` off the pin (closed) or on the interior (Dirichlet).

    On closed surfaces the right-hand side must be compatible,
    ``sum(A u) == 0``, which holds whenever ``u`` carries the optimal scale.
    """
    rhs = 2.0 * np.asarray(A) * np.asarray(u)
    if isinstance(system, PinnedSystem):
        s = float(rhs.sum())
        if abs(s) > tol * max(1.0, float(np.abs(rhs).sum())):
            raise AdjointCompatibilityError(
                f"sum(A u) = {s / 2:.3e}; re-optimize the global scale before solving the adjoint")
        return AdjointField(system.solve(rhs), system.p)
    return AdjointField(system.solve(rhs), None)


def solve_adjoint_lm(state: SolverState) -> AdjointField:
    """Varying-angle multiplier: ``L h = 2 A u`` with ``h = 0`` at every cone.

    Only for comparison runs; it refactorizes whenever the cones change.
    """
    mask = np.zeros(state.mesh.n_vertices, dtype=bool)
    mask[state.cones.vertices] = True
    if not state.closed:
        mask |= state.mesh.is_boundary
    if not mask.any():
        return solve_adjoint(state.system, state.u, state.A)
    sysD = InteriorSystem(state.L, mask)
    return AdjointField(sysD.solve(2.0 * state.A * state.u), None)


def directional_derivative(u: np.ndarray, h: np.ndarray, E: float, c: int, w: int, mesh,
                           total_area: float, ring_u2: float | None = None) -> float:
    """Normal derivative of E for hopping the cone at ``c`` to neighbor ``w``.

    ``h`` is the normalized-area adjoint; it is rescaled by ``total_area``.
    ``ring_u2`` is the mean of ``u^2`` over the one-ring of ``c`` (computed
    here when omitted).
    """
    if E < EPS_MIN:
        raise ConvergedSignal(f"E = {E:.3e} below {EPS_MIN}")
    if ring_u2 is None:
        ring_u2 = float(np.mean(u[mesh.rings[c]] ** 2))
    ell = mesh.edge_length(c, w)
    du = (u[w] - u[c]) / ell
    dh = total_area * (h[w] - h[c]) / ell
    return (ring_u2 - du * dh) / (2.0 * E)


def propose_moves(state: SolverState, adjoint: AdjointField | None = None) -> list[MoveProposal]:
    """At most one hop per cone: the admissible neighbor with the most
    negative derivative. Colliding targets go to the more negative
    proposal (lower cone id on ties)."""
    if state.E < EPS_MIN:
        return []
    if adjoint is None:
        adjoint = solve_adjoint(state.system, state.u, state.A)
    u, h, E, mesh = state.u, adjoint.h, state.E, state.mesh
    occupied = set(state.cones.vertices)
    area = state.total_area
    best: dict[int, MoveProposal] = {}
    for c in state.cones.vertices:
        ring = mesh.rings[c]
        ring_u2 = float(np.mean(u[ring] ** 2))
        cand = None
        for w in ring:
            if w in occupied or not state.rmap.admissible(w):
                continue
            val = directional_derivative(u, h, E, c, w, mesh, area, ring_u2)
            if val < 0 and (cand is None or val < cand.value):
                cand = MoveProposal(c, int(w), val)
        if cand is None:
            continue
        other = best.get(cand.target)
        if other is None or cand.value < other.value or (cand.value == other.value and c < other.cone):
            best[cand.target] = cand
    return sorted(best.values(), key=lambda p: p.cone)


def _apply(vertices: list[int], moves) -> list[int]:
    where = {v: i for i, v in enumerate(vertices)}
    out = list(vertices)
    for mv in moves:
        out[where[mv.cone]] = mv.target
    return out


def trial_move(state: SolverState, moves) -> float:
    """Distortion after applying ``moves``; the state is left untouched."""
    return state.evaluate(_apply(state.cones.vertices, moves), state.cones.z)


def move_cones(state: SolverState, variant: str = "fixed", max_rounds: int = 100_000,
               on_trial=None) -> int:
    """Relocate cones until a full pass yields no distortion decrease.

    Each round tries all proposals at once; if that fails, proposals are
    tried one at a time in order of decreasing ``|dE/dn|``. Only strict
    decreases are accepted. Returns the number of accepted steps.

    ``variant="lm"`` uses the varying-angle multiplier instead (comparison
    only). ``on_trial(kind, moves, E_before, E_after)`` observes every trial.
    """
    accepted = 0
    for _ in range(max_rounds):
        if state.E < EPS_MIN:
            break
        adj = solve_adjoint_lm(state) if variant == "lm" else None
        props = propose_moves(state, adj)
        if not props:
            break
        E0 = state.E
        state.rmap.prefetch([p.target for p in props])
        if len(props) > 1:
            E1 = trial_move(state, props)
            if on_trial:
                on_trial("simultaneous", props, E0, E1)
            if E1 < E0:
                state.set_cones(_apply(state.cones.vertices, props), state.cones.z)
                accepted += 1
                state.record("move")
                continue
        moved = False
        for mv in sorted(props, key=lambda p: (-abs(p.value), p.cone)):
            if mv.cone not in state.cones.vertices or mv.target in state.cones.vertices:
                continue
            E0 = state.E
            E1 = trial_move(state, [mv])
            if on_trial:
                on_trial("single", [mv], E0, E1)
            if E1 < E0:
                state.set_cones(_apply(state.cones.vertices, [mv]), state.cones.z)
                accepted += 1
                moved = True
                state.record("move")
        if not moved:
            break
    return accepted
