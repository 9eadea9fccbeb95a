import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intcones.linalg import PinnedSystem
from intcones.mesh import area_weights, bfs_distances, cotan_laplacian
from intcones.relocation import (EPS_MIN, AdjointCompatibilityError, AdjointField, ConvergedSignal,
                                 directional_derivative, move_cones, propose_moves, solve_adjoint,
                                 solve_adjoint_lm, trial_move)
from intcones.state import make_state
from intcones.yamabe import ConeState

from conftest import mesh_cache


def cube_corners(cube):
    lo, hi = cube.vertices.min(0), cube.vertices.max(0)
    return np.flatnonzero(np.all(np.isclose(cube.vertices, lo) | np.isclose(cube.vertices, hi), 1)).tolist()


def clustered(mesh, seed, radius=4, n=8):
    rng = np.random.default_rng(seed)
    c0 = int(rng.integers(mesh.n_vertices))
    d = bfs_distances(mesh, [c0])
    return [int(c) for c in rng.choice(np.flatnonzero((d >= 1) & (d <= radius)), n, replace=False)]


class TestAdjoint:
    def test_zero(self, sphere642):
        st_ = make_state(sphere642)
        assert np.array_equal(solve_adjoint(st_.system, np.zeros(642), st_.A).h, np.zeros(642))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 3))
    def test_tetrahedron_dense(self, seed, p):
        from intcones.mesh import Mesh

        v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
        tet = Mesh(v, [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
        A = area_weights(tet)
        L = cotan_laplacian(tet).toarray()
        u = np.random.default_rng(seed).standard_normal(4)
        u -= A @ u
        h = solve_adjoint(PinnedSystem(L, p), u, A).h
        keep = np.arange(4) != p
        ref = np.zeros(4)
        ref[keep] = np.linalg.solve(L[np.ix_(keep, keep)], (2 * A * u)[keep])
        assert np.abs(h - ref).max() <= 1e-10
        assert np.abs((L @ h - 2 * A * u)[keep]).max() <= 1e-10

    def test_incompatible(self, sphere642):
        st_ = make_state(sphere642)
        with pytest.raises(AdjointCompatibilityError):
            solve_adjoint(st_.system, np.ones(642), st_.A)

    def test_lm_zero_at_cones(self, sphere642):
        st_ = make_state(sphere642, ConeState([1, 2, 3, 4, 5, 6, 7, 8], np.ones(8)))
        h = solve_adjoint_lm(st_).h
        assert np.all(h[[1, 2, 3, 4, 5, 6, 7, 8]] == 0)
        L = cotan_laplacian(sphere642)
        free = np.ones(642, bool)
        free[[1, 2, 3, 4, 5, 6, 7, 8]] = False
        assert np.abs((L @ h - 2 * st_.A * st_.u)[free]).max() <= 1e-10


class TestDerivative:
    def test_converged_signal(self, sphere642):
        with pytest.raises(ConvergedSignal):
            directional_derivative(np.zeros(642), np.zeros(642), 0.0, 0, 1, sphere642, 1.0)

    def test_swap_flips_gradient_term(self, sphere642):
        rng = np.random.default_rng(0)
        u, h = rng.standard_normal(642), rng.standard_normal(642)
        c = 0
        w = int(sphere642.rings[0][0])
        a = directional_derivative(u, h, 0.5, c, w, sphere642, 3.0, ring_u2=0.0)
        b = directional_derivative(u, h, 0.5, w, c, sphere642, 3.0, ring_u2=0.0)
        assert a == pytest.approx(b)  # both factors flip sign
        h2 = h.copy()
        h2[[c, w]] = h[[w, c]]
        assert directional_derivative(u, h2, 0.5, c, w, sphere642, 3.0, ring_u2=0.0) == pytest.approx(-a)

    def test_formula(self, sphere642):
        rng = np.random.default_rng(1)
        u, h = rng.standard_normal(642), rng.standard_normal(642)
        c, w = 10, int(sphere642.rings[10][2])
        ell = np.linalg.norm(sphere642.vertices[c] - sphere642.vertices[w])
        ring = np.mean(u[sphere642.rings[c]] ** 2)
        ref = (ring - (u[w] - u[c]) / ell * 2.5 * (h[w] - h[c]) / ell) / (2 * 0.7)
        assert directional_derivative(u, h, 0.7, c, w, sphere642, 2.5) == pytest.approx(ref, rel=1e-12)


class TestProposals:
    def test_cube_fixed_point(self, cube):
        st_ = make_state(cube, ConeState(cube_corners(cube), np.ones(8)))
        assert propose_moves(st_) == []
        snapshot = (list(st_.cones.vertices), st_.E)
        assert move_cones(st_) == 0
        assert (list(st_.cones.vertices), st_.E) == snapshot

    def test_all_nonnegative_gives_nothing(self, sphere642):
        st_ = make_state(sphere642, ConeState([5], [8]), bounds=(-8, 8))
        adj = AdjointField(np.zeros(642), st_.pin)   # gradient term vanishes
        assert propose_moves(st_, adj) == []

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force(self, seed, sphere642):
        st_ = make_state(sphere642, ConeState(clustered(sphere642, seed, 2), np.ones(8)))
        adj = solve_adjoint(st_.system, st_.u, st_.A)
        props = propose_moves(st_, adj)
        occupied = set(st_.cones.vertices)
        wants = {}
        for c in st_.cones.vertices:
            vals = [(directional_derivative(st_.u, adj.h, st_.E, c, int(w), sphere642, st_.total_area), int(w))
                    for w in sphere642.rings[c] if w not in occupied and w != st_.pin]
            neg = [x for x in vals if x[0] < 0]
            if neg:
                v, w = min(neg)
                wants.setdefault(w, []).append((v, c))
        expected = sorted((min(cs)[1], w) for w, cs in wants.items())
        assert sorted((p.cone, p.target) for p in props) == expected
        assert len({p.target for p in props}) == len(props)

    def test_gauge_invariant(self, sphere642):
        st_ = make_state(sphere642, ConeState(clustered(sphere642, 3), np.ones(8)))
        adj = solve_adjoint(st_.system, st_.u, st_.A)
        a = propose_moves(st_, adj)
        b = propose_moves(st_, AdjointField(adj.h - 12.0, adj.pin))
        assert [(p.cone, p.target) for p in a] == [(p.cone, p.target) for p in b]

    def test_opposite_sign_adjoint_is_not_predictive(self):
        m = mesh_cache("icosphere", 4)
        good = bad = 0
        for seed in range(3):
            st_ = make_state(m, ConeState(clustered(m, seed, 5), np.ones(8)))
            adj = solve_adjoint(st_.system, st_.u, st_.A)
            good += sum(trial_move(st_, [p]) < st_.E for p in propose_moves(st_, adj))
            flipped = AdjointField(-adj.h, adj.pin)
            bad += sum(trial_move(st_, [p]) < st_.E for p in propose_moves(st_, flipped))
        assert good > bad


class TestMove:
    @pytest.mark.parametrize("seed", range(3))
    def test_spread_monotone(self, seed, sphere642):
        st_ = make_state(sphere642, ConeState(clustered(sphere642, seed), np.ones(8)))
        E0 = st_.E
        trials = []
        n = move_cones(st_, on_trial=lambda kind, mv, a, b: trials.append((kind, a, b)))
        moves = [t for t in st_.trace if t.event == "move"]
        assert n == len(moves) > 0
        Es = [E0] + [t.E for t in moves]
        assert all(b < a for a, b in zip(Es, Es[1:]))
        assert st_.E < E0
        # spread: mean pairwise BFS distance grows
        def spread(vs):
            return np.mean([bfs_distances(sphere642, [v])[vs].mean() for v in vs])
        assert spread(st_.cones.vertices) > spread(clustered(sphere642, seed))

    def test_rejected_simultaneous_then_sequential(self):
        # search small random configurations for a simultaneous hop that fails
        m = mesh_cache("icosphere", 2)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(3, 12))
            verts = rng.choice(m.n_vertices, n, replace=False).tolist()
            z = rng.integers(-1, 3, n)
            z[0] += 8 - z.sum()
            st_ = make_state(m, ConeState(verts, z), bounds=(-20, 20))
            E0 = st_.E
            log = []
            move_cones(st_, on_trial=lambda k, mv, a, b: log.append((k, a, b)))
            hits = [i for i, (k, a, b) in enumerate(log) if k == "simultaneous" and b >= a]
            if hits:
                i = hits[0]
                assert i + 1 < len(log) and log[i + 1][0] == "single"
                assert log[i + 1][1] == log[i][1]     # rejected trial left E untouched
                assert st_.E <= E0
                return
        pytest.fail("no rejected simultaneous move found")

    def test_rejected_trial_restores_state(self, sphere642):
        st_ = make_state(sphere642, ConeState(clustered(sphere642, 1), np.ones(8)))
        before = (list(st_.cones.vertices), st_.cones.z.copy(), st_.E, st_.u.copy())
        for p in propose_moves(st_):
            trial_move(st_, [p])
        assert before[0] == st_.cones.vertices
        assert np.array_equal(before[3], st_.u) and before[2] == st_.E
        assert np.array_equal(st_.rmap.G, np.stack([st_.rmap.column(v) for v in st_.cones.vertices], 1))

    def test_lm_variant_runs(self, sphere642):
        st_ = make_state(sphere642, ConeState(clustered(sphere642, 2), np.ones(8)))
        E0 = st_.E
        move_cones(st_, "lm")
        assert st_.E <= E0

    def test_below_eps_stops(self, cube):
        st_ = make_state(cube, ConeState(cube_corners(cube), np.ones(8)))
        assert st_.E < EPS_MIN
        assert move_cones(st_) == 0
