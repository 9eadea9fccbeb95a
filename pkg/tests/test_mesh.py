import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from intcones import shapes
from intcones.mesh import (DegenerateFaceError, Mesh, ObjParseError, TopologyError, angle_defects,
                           area_weights, bfs_distances, bfs_edge_distance, boundary_loops,
                           cotan_laplacian, euler_characteristic, genus, load_obj, save_obj)

from conftest import mesh_cache


def corner_angle_oracle(mesh):
    """Angle sums per vertex from arccos of normalized edge vectors."""
    out = np.zeros(mesh.n_vertices)
    for f in mesh.faces:
        for k in range(3):
            i, j, l = f[k], f[(k + 1) % 3], f[(k + 2) % 3]
            a = mesh.vertices[j] - mesh.vertices[i]
            b = mesh.vertices[l] - mesh.vertices[i]
            c = np.dot(a, b) / np.linalg.norm(a) / np.linalg.norm(b)
            out[i] += np.arccos(np.clip(c, -1, 1))
    return out


def dense_cotan(mesh):
    n = mesh.n_vertices
    L = np.zeros((n, n))
    for f in mesh.faces:
        for k in range(3):
            o, i, j = f[k], f[(k + 1) % 3], f[(k + 2) % 3]
            a = mesh.vertices[i] - mesh.vertices[o]
            b = mesh.vertices[j] - mesh.vertices[o]
            cross = np.sqrt(max(np.dot(a, a) * np.dot(b, b) - np.dot(a, b) ** 2, 0.0))
            w = 0.5 * np.dot(a, b) / cross
            L[i, j] -= w
            L[j, i] -= w
            L[i, i] += w
            L[j, j] += w
    return L


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestObj:
    def test_tetrahedron(self, tmp_path):
        p = write(tmp_path, "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n"
                            "f 1 2 3\nf 1 3 4\nf 1 4 2\nf 2 4 3\n")
        m = load_obj(p)
        assert (m.n_vertices, m.n_faces) == (4, 4)
        assert m.is_closed
        assert genus(m) == (0, 0)

    def test_single_triangle(self, tmp_path):
        m = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
        assert m.n_vertices == 3
        assert m.is_boundary.sum() == 3

    def test_quad_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(ObjParseError, match="non-triangle face"):
            load_obj(p)

    def test_slash_and_negative_indices(self, tmp_path):
        m = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2//1 -1\n"))
        assert m.faces.tolist() == [[0, 1, 2]]

    def test_index_out_of_range(self, tmp_path):
        with pytest.raises(ObjParseError):
            load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"))

    def test_round_trip(self, tmp_path, sphere642):
        p = tmp_path / "s.obj"
        save_obj(sphere642, p)
        m = load_obj(p)
        assert np.array_equal(m.faces, sphere642.faces)
        assert np.array_equal(m.vertices, sphere642.vertices)


class TestValidation:
    def test_degenerate_face(self):
        with pytest.raises(DegenerateFaceError):
            Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

    def test_inconsistent_orientation(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
        with pytest.raises(TopologyError):
            Mesh(v, [[0, 1, 2], [1, 2, 3]])

    def test_disconnected(self):
        v = np.vstack([np.eye(3), np.eye(3) + 5])
        with pytest.raises(TopologyError):
            Mesh(v, [[0, 1, 2], [3, 4, 5]])

    def test_nonmanifold_edge(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
        with pytest.raises(TopologyError):
            Mesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])


class TestDefects:
    def test_tetrahedron_defects(self, tetra):
        k = angle_defects(tetra)
        assert np.allclose(k, np.pi, atol=1e-12)
        assert abs(k.sum() - 4 * np.pi) < 1e-12

    def test_cube_corners(self, cube):
        k = angle_defects(cube)
        lo, hi = cube.vertices.min(0), cube.vertices.max(0)
        corner = np.all(np.isclose(cube.vertices, lo) | np.isclose(cube.vertices, hi), axis=1)
        assert np.allclose(k[corner], np.pi / 2, atol=1e-12)
        assert np.abs(k[~corner]).max() < 1e-12

    def test_flat_disk(self, disk):
        k = angle_defects(disk)
        assert np.abs(k[~disk.is_boundary]).max() < 1e-12
        oracle = np.pi - corner_angle_oracle(disk)
        assert np.allclose(k[disk.is_boundary], oracle[disk.is_boundary], atol=1e-12)

    @pytest.mark.parametrize("key", [("icosphere", 2), ("spherical_cap", 2), ("embedded_torus", 12, 8)])
    def test_matches_arccos_oracle(self, key):
        m = mesh_cache(*key)
        base = np.where(m.is_boundary, np.pi, 2 * np.pi)
        assert np.allclose(angle_defects(m), base - corner_angle_oracle(m), atol=1e-10)


class TestLaplacian:
    def test_unit_square_row_sums(self):
        m = Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
        L = cotan_laplacian(m).toarray()
        assert np.allclose(L.sum(1), 0, atol=1e-15)

    def test_tetrahedron_rank(self, tetra):
        L = cotan_laplacian(tetra).toarray()
        off = L[~np.eye(4, dtype=bool)]
        assert np.allclose(off, off[0])
        assert np.linalg.matrix_rank(L, tol=1e-10) == 3

    @pytest.mark.parametrize("key", [("icosphere", 2), ("flat_torus", 6), ("spherical_cap", 2)])
    def test_matches_dense_oracle(self, key):
        m = mesh_cache(*key)
        L = cotan_laplacian(m).toarray()
        assert np.allclose(L, dense_cotan(m), atol=1e-12)
        assert np.allclose(L, L.T)

    def test_closed_null_space(self, sphere642):
        L = cotan_laplacian(sphere642).toarray()
        w, V = np.linalg.eigh(L)
        assert abs(w[0]) < 1e-10 and w[1] > 1e-6
        v0 = V[:, 0] / V[0, 0]
        assert np.allclose(v0, 1.0, atol=1e-8)


class TestAreas:
    def test_tetrahedron(self, tetra):
        assert np.allclose(area_weights(tetra), 0.25)

    def test_triangle(self):
        m = Mesh([[0, 0, 0], [2, 0, 0], [0, 3, 0]], [[0, 1, 2]])
        assert np.allclose(area_weights(m), 1 / 3)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.01, 100), st.floats(-5, 5), st.floats(0, 2 * np.pi))
    def test_similarity_invariance(self, s, shift, theta):
        m = mesh_cache("icosphere", 1)
        c, sn = np.cos(theta), np.sin(theta)
        R = np.array([[c, -sn, 0], [sn, c, 0], [0, 0, 1]])
        m2 = Mesh(s * m.vertices @ R.T + shift, m.faces)
        assert np.allclose(area_weights(m2), area_weights(m), atol=1e-12)
        assert np.allclose(cotan_laplacian(m2).toarray(), cotan_laplacian(m).toarray(), atol=1e-9)
        assert np.allclose(angle_defects(m2), angle_defects(m), atol=1e-9)


class TestTopology:
    def test_genus_values(self, tetra, disk, flat_torus8):
        assert genus(tetra) == (0, 0)
        assert genus(flat_torus8) == (1, 0)
        assert genus(disk) == (0, 1)
        assert genus(mesh_cache("voxel_handlebody", 3)) == (3, 0)

    def test_boundary_loop_follows_orientation(self, disk):
        (loop,) = boundary_loops(disk)
        assert len(loop) == disk.is_boundary.sum()
        for a, b in zip(loop, loop[1:] + loop[:1]):
            assert disk.face_of_directed_edge(a, b) is not None

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.2))
    def test_gauss_bonnet_under_perturbation(self, seed, amp):
        m = mesh_cache("icosphere", 2)
        rng = np.random.default_rng(seed)
        v = m.vertices * (1 + amp * rng.uniform(-1, 1, (m.n_vertices, 1)))
        k = angle_defects(Mesh(v, m.faces))
        assert abs(k.sum() - 2 * np.pi * euler_characteristic(m)) < 1e-9 * 4 * np.pi


class TestBfs:
    def test_trivial(self, cube):
        assert bfs_edge_distance(cube, 5, 5) == 0
        a, b = cube.edges[0]
        assert bfs_edge_distance(cube, int(a), int(b)) == 1

    def test_opposite_corners_exceed_cap(self, cube):
        lo = np.flatnonzero(np.all(np.isclose(cube.vertices, cube.vertices.min(0)), 1))[0]
        hi = np.flatnonzero(np.all(np.isclose(cube.vertices, cube.vertices.max(0)), 1))[0]
        assert bfs_edge_distance(cube, int(lo), int(hi), cap=2) is None
        assert bfs_edge_distance(cube, int(lo), int(hi)) is not None

    def test_against_graph_oracle(self, sphere642):
        D = shortest_path(sphere642.adjacency, unweighted=True, indices=[0, 17, 300])
        for row, s in zip(D, [0, 17, 300]):
            assert np.array_equal(bfs_distances(sphere642, [s]), row.astype(int))
            for t in (1, 99, 641):
                assert bfs_edge_distance(sphere642, s, t) == int(row[t])
        multi = bfs_distances(sphere642, [0, 17, 300], cap=3)
        best = D.min(0)
        assert np.array_equal(multi, np.where(best <= 3, best, -1).astype(int))


def test_shapes_are_valid():
    assert mesh_cache("cube").n_vertices == 602
    assert mesh_cache("octasphere", 16).n_vertices == 1026
    assert shapes.icosphere(2).n_vertices == 162
    assert mesh_cache("flat_torus", 8).vertices.shape == (64, 4)
