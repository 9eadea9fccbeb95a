import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from intcones.linalg import PinnedSystem
from intcones.mesh import angle_defects, area_weights, cotan_laplacian
from intcones.state import make_state
from intcones.yamabe import (ConeError, ConeState, ReducedMap, build_reduced_map, dirichlet_solve,
                             distortion, neumann_solve, optimal_scale, yamabe_residual)

from conftest import mesh_cache

Q = np.pi / 2


def cube_corners(cube):
    lo, hi = cube.vertices.min(0), cube.vertices.max(0)
    return np.flatnonzero(np.all(np.isclose(cube.vertices, lo) | np.isclose(cube.vertices, hi), 1)).tolist()


class TestConeState:
    def test_length_mismatch(self):
        with pytest.raises(ConeError):
            ConeState([1, 2], [1])

    def test_duplicate(self):
        with pytest.raises(ConeError):
            ConeState([1, 1], [1, 1])

    def test_cone_on_pin(self):
        with pytest.raises(ConeError):
            ConeState([3], [1], pin=3)

    def test_counts(self):
        c = ConeState([1, 2, 3], [1, 0, -1])
        assert (c.n_nonzero, c.n_zero) == (2, 1)
        assert np.allclose(c.target_curvature(5), [0, Q, 0, -Q, 0])


class TestScale:
    def test_constant(self, tetra):
        A = area_weights(tetra)
        assert optimal_scale(np.ones(4), A) == pytest.approx(-1.0)
        assert optimal_scale(np.zeros(4), A) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
    def test_scalar_minimizer_oracle(self, r):
        r = np.array(r)
        A = np.array([0.1, 0.2, 0.3, 0.4])
        a = optimal_scale(r, A)
        res = minimize_scalar(lambda t: A @ (r + t) ** 2, bracket=(-20, 20), tol=1e-12)
        assert abs(a - res.x) <= 1e-6
        assert abs(A @ (r + a)) <= 1e-12

    def test_distortion(self, tetra):
        A = area_weights(tetra)
        assert distortion(np.zeros(4), A) == 0.0
        u = np.ones(4)
        assert distortion(u + optimal_scale(u, A), A) == pytest.approx(0.0, abs=1e-15)


class TestReducedMap:
    def test_no_cones(self, sphere642):
        st_ = make_state(sphere642)
        r = st_.rmap.raw(np.zeros(0))
        assert np.array_equal(r, st_.rmap.d)
        u = st_.rmap.u(np.zeros(0))
        assert np.allclose(u, r - area_weights(sphere642) @ r)

    def test_cube_corners_exact(self, cube):
        c = cube_corners(cube)
        st_ = make_state(cube, ConeState(c, np.ones(8)))
        assert np.abs(st_.rmap.raw(np.ones(8))).max() <= 1e-9
        assert st_.E <= 1e-6

    def test_move_one_cone_changes_one_column(self, sphere642):
        st_ = make_state(sphere642, ConeState([1, 2, 3], [1, 1, 1]))
        G0 = st_.rmap.G.copy()
        before = st_.rmap.n_column_solves
        st_.rmap.set_cones([1, 2, 40])
        assert st_.rmap.n_column_solves == before + 1
        assert np.array_equal(st_.rmap.G[:, :2], G0[:, :2])
        assert not np.allclose(st_.rmap.G[:, 2], G0[:, 2])

    def test_spare_cache_reuse(self, sphere642):
        st_ = make_state(sphere642, ConeState([1, 2], [1, 1]))
        st_.rmap.set_cones([1, 50])
        n = st_.rmap.n_column_solves
        st_.rmap.set_cones([1, 2])
        assert st_.rmap.n_column_solves == n

    def test_columns_match_dense(self, sphere642):
        st_ = make_state(sphere642, ConeState([5, 80, 300], [1, -1, 1]))
        L = cotan_laplacian(sphere642).toarray()
        p = st_.pin
        M = L.copy()
        M[p] = 0
        M[p, p] = 1
        for k, v in enumerate([5, 80, 300]):
            e = np.zeros(sphere642.n_vertices)
            e[v] = Q
            e[p] = 0
            assert np.allclose(st_.rmap.G[:, k], np.linalg.solve(M, e), atol=1e-10)

    def test_pin_cone_rejected(self, sphere642):
        sysP = PinnedSystem(cotan_laplacian(sphere642), 4)
        with pytest.raises(ConeError):
            build_reduced_map(sysP, ConeState([4], [1]), angle_defects(sphere642), area_weights(sphere642))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
    def test_gauge_constant_absorbed(self, seed, c):
        m = mesh_cache("icosphere", 2)
        rng = np.random.default_rng(seed)
        verts = rng.choice(m.n_vertices, 5, replace=False).tolist()
        st_ = make_state(m, ConeState(verts, [2, 2, 2, 1, 1]))
        r = st_.rmap.raw(st_.cones.z)
        u1 = r + optimal_scale(r, st_.A)
        u2 = (r + c) + optimal_scale(r + c, st_.A)
        assert abs(distortion(u1, st_.A) - distortion(u2, st_.A)) <= 1e-12

    def test_zero_distortion_certificate(self, cube):
        c = cube_corners(cube)
        st_ = make_state(cube, ConeState(c, np.ones(8)))
        t = np.zeros(cube.n_vertices)
        t[c] = Q
        off = np.arange(cube.n_vertices) != st_.pin
        assert np.abs((t - angle_defects(cube))[off]).max() <= 1e-9
        assert st_.E <= 1e-9
        # and a wrong assignment is not flat
        st_.set_cones(c, [2, 0, 1, 1, 1, 1, 1, 1])
        assert st_.E > 1e-3

    def test_residual_invariant(self):
        m = mesh_cache("organic")
        rng = np.random.default_rng(9)
        verts = rng.choice(m.n_vertices, 12, replace=False).tolist()
        z = np.array([1] * 10 + [-1, 0])
        st_ = make_state(m, ConeState(verts, z))
        res = yamabe_residual(st_.system, st_.u, st_.cones, st_.k_ori)
        assert res <= 1e-8 * max(1, np.abs(st_.k_ori).max())


class TestDirichlet:
    def test_disk_no_cones(self, disk):
        u = dirichlet_solve(disk, ConeState())
        assert np.abs(u).max() <= 1e-12

    def test_disk_one_cone(self, disk):
        c = int(np.flatnonzero(~disk.is_boundary)[0])
        u = dirichlet_solve(disk, ConeState([c], [1]))
        A = area_weights(disk)
        assert distortion(u, A) > 0
        L = cotan_laplacian(disk).toarray()
        I = ~disk.is_boundary
        t = np.zeros(disk.n_vertices)
        t[c] = Q
        ref = np.linalg.solve(L[np.ix_(I, I)], (t - angle_defects(disk))[I])
        assert np.allclose(u[I], ref, atol=1e-12)
        assert np.abs((L @ u - t + angle_defects(disk))[I]).max() <= 1e-9

    def test_constant_boundary(self, disk):
        u = dirichlet_solve(disk, ConeState(), b=np.full(disk.n_vertices, 0.7))
        assert np.allclose(u, 0.7, atol=1e-12)

    def test_cone_on_boundary(self, disk):
        b = int(np.flatnonzero(disk.is_boundary)[0])
        with pytest.raises(ConeError):
            dirichlet_solve(disk, ConeState([b], [1]))

    def test_closed_rejected(self, tetra):
        with pytest.raises(ConeError):
            dirichlet_solve(tetra, ConeState())


class TestNeumann:
    def test_disk_constant(self, disk):
        k = angle_defects(disk)
        u, h = neumann_solve(disk, ConeState(), k[disk.is_boundary])
        assert np.ptp(u) <= 1e-12
        assert np.abs(h).max() <= 1e-12

    def test_pin_changes_only_constant(self):
        cap = mesh_cache("spherical_cap", 2)
        k = angle_defects(cap)
        inner = np.flatnonzero(~cap.is_boundary)
        cones = ConeState([int(inner[3])], [1])
        kb = k[cap.is_boundary].copy()
        kb += (k.sum() - Q - kb.sum()) / len(kb)
        u1, _ = neumann_solve(cap, cones, kb, p=int(inner[0]))
        u2, _ = neumann_solve(cap, cones, kb, p=int(inner[5]))
        d = u1 - u2
        assert np.ptp(d) <= 1e-10

    def test_random_compatible_dense(self):
        cap = mesh_cache("spherical_cap", 2)
        k = angle_defects(cap)
        L = cotan_laplacian(cap).toarray()
        rng = np.random.default_rng(7)
        kb = rng.standard_normal(cap.is_boundary.sum())
        k_tar = np.zeros(cap.n_vertices)
        k_tar[cap.is_boundary] = kb
        shift = (k_tar - k).sum() / cap.is_boundary.sum()
        kb -= shift
        u, h = neumann_solve(cap, ConeState(), kb)
        k_tar[cap.is_boundary] = kb
        res = L @ u - (k_tar - k)
        assert np.abs(res).max() <= 1e-9
        assert np.abs(h).max() <= 1e-9

    def test_incompatible(self, disk):
        with pytest.raises(ConeError):
            neumann_solve(disk, ConeState(), np.ones(disk.is_boundary.sum()))

    def test_neumann_mode_state(self):
        cap = mesh_cache("spherical_cap", 3)
        inner = np.flatnonzero(~cap.is_boundary)
        st_ = make_state(cap, ConeState(inner[:3].tolist(), [1, 1, 0]), boundary="neumann")
        assert st_.pin is not None
        res = cotan_laplacian(cap) @ st_.u - st_.rmap.target_rhs(st_.cones.z)
        res[st_.pin] = 0.0
        assert np.abs(res).max() <= 1e-10
        assert not st_.rmap.admissible(int(np.flatnonzero(cap.is_boundary)[0]))
        assert isinstance(st_.rmap, ReducedMap)
