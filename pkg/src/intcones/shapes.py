"""Procedural test surfaces.

Cube, icosphere, octasphere, flat disk, spherical cap, grid tori (flat in
R^4 or embedded in R^3), a bumpy "organic" sphere and voxel handlebodies
of arbitrary genus.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def _dedupe(verts: np.ndarray, faces: np.ndarray, decimals: int = 9) -> tuple[np.ndarray, np.ndarray]:
    key = np.round(verts, decimals)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return verts[first[order]], remap[inv.ravel()][faces]


def cube(n: int = 10, size: float = 1.0) -> Mesh:
    """Axis-aligned cube surface with an n x n grid per face (6n^2+2 vertices)."""
    t = np.linspace(-0.5, 0.5, n + 1) * size
    verts, faces = [], []
    # (normal axis, sign); the two tangent axes are ordered so the quads face outward
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [(1, 2), (2, 0), (0, 1)][axis]
            if sign < 0:
                u_ax, v_ax = v_ax, u_ax
            base = len(verts)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign * 0.5 * size
                    p[u_ax] = t[i]
                    p[v_ax] = t[j]
                    verts.append(p)
            for i in range(n):
                for j in range(n):
                    a = base + i * (n + 1) + j
                    b = a + (n + 1)
                    faces.append([a, b, b + 1])
                    faces.append([a, b + 1, a + 1])
    v, f = _dedupe(np.array(verts), np.array(faces))
    return Mesh(v, f)


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    verts = list(map(tuple, verts))
    cache: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in cache:
            cache[key] = len(verts)
            verts.append(tuple((np.array(verts[a]) + np.array(verts[b])) / 2.0))
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(out)


def icosphere(level: int = 3, radius: float = 1.0) -> Mesh:
    """Subdivided icosahedron projected to a sphere: 10*4^level + 2 vertices."""
    phi = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    for _ in range(level):
        v, f = _subdivide(v, f)
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v, f)


def octasphere(n: int = 16, radius: float = 1.0) -> Mesh:
    """Octahedron with each face split into an n x n triangle grid, projected
    to the sphere (4n^2 + 2 vertices)."""
    corners = np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    tris = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4],
            [1, 0, 5], [2, 1, 5], [3, 2, 5], [0, 3, 5]]
    verts, faces = [], []
    for a, b, c in tris:
        pa, pb, pc = corners[a], corners[b], corners[c]
        idx = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                idx[i, j] = len(verts)
                verts.append(pa + (pb - pa) * i / n + (pc - pa) * j / n)
        for i in range(n):
            for j in range(n - i):
                faces.append([idx[i, j], idx[i + 1, j], idx[i, j + 1]])
                if j < n - i - 1:
                    faces.append([idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]])
    v, f = _dedupe(np.array(verts), np.array(faces))
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v, f)


def organic(n: int = 35, seed: int = 7, amplitude: float = 0.18) -> Mesh:
    """Octasphere with a smooth random radial displacement (a lumpy blob)."""
    base = octasphere(n)
    p = base.vertices
    rng = np.random.default_rng(seed)
    r = np.ones(len(p))
    for _ in range(6):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        k = rng.uniform(1.5, 4.0)
        r += amplitude * rng.uniform(0.3, 1.0) * np.exp(k * (p @ d - 1.0))
    r += 0.25 * p[:, 2] ** 2  # mild elongation
    return Mesh(p * r[:, None], base.faces)


def flat_disk(rings: int = 8, radius: float = 1.0) -> Mesh:
    """Planar disk triangulated in concentric rings (6*k vertices on ring k)."""
    verts = [np.zeros(3)]
    faces = []
    prev = [0]
    for k in range(1, rings + 1):
        m = 6 * k
        ang = 2 * np.pi * np.arange(m) / m
        cur = list(range(len(verts), len(verts) + m))
        for a in ang:
            verts.append(np.array([np.cos(a), np.sin(a), 0.0]) * radius * k / rings)
        # stitch ring k-1 (len 6(k-1) or 1) to ring k
        if k == 1:
            for i in range(m):
                faces.append([0, cur[i], cur[(i + 1) % m]])
        else:
            pm = len(prev)
            i = j = 0
            while i < m or j < pm:
                # advance along the ring with the smaller next angle
                ai = (i + 1) / m
                aj = (j + 1) / pm
                if j >= pm or (i < m and ai <= aj):
                    faces.append([prev[j % pm], cur[i], cur[(i + 1) % m]])
                    i += 1
                else:
                    faces.append([prev[j % pm], cur[i % m], prev[(j + 1) % pm]])
                    j += 1
        prev = cur
    return Mesh(np.array(verts), np.array(faces))


def spherical_cap(level: int = 3, max_polar: float = np.pi / 2 + 1e-9) -> Mesh:
    """Faces of an icosphere whose vertices all lie within ``max_polar`` of +z."""
    s = icosphere(level)
    polar = np.arccos(np.clip(s.vertices[:, 2], -1, 1))
    keep_v = polar <= max_polar
    keep_f = keep_v[s.faces].all(axis=1)
    faces = s.faces[keep_f]
    used = np.unique(faces)
    remap = -np.ones(s.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(s.vertices[used], remap[faces])


def _grid_torus_faces(n: int, m: int) -> np.ndarray:
    faces = []
    for i in range(n):
        for j in range(m):
            a = i * m + j
            b = ((i + 1) % n) * m + j
            c = ((i + 1) % n) * m + (j + 1) % m
            d = i * m + (j + 1) % m
            faces += [[a, b, c], [a, c, d]]
    return np.array(faces)


def flat_torus(n: int = 8, m: int | None = None) -> Mesh:
    """Clifford torus in R^4 on an n x m grid: intrinsically flat, every
    angle defect is exactly zero."""
    m = n if m is None else m
    th = 2 * np.pi * np.arange(n) / n
    ph = 2 * np.pi * np.arange(m) / m
    T, P = np.meshgrid(th, ph, indexing="ij")
    v = np.stack([np.cos(T), np.sin(T), np.cos(P), np.sin(P)], axis=-1).reshape(-1, 4)
    return Mesh(v, _grid_torus_faces(n, m))


def embedded_torus(n: int = 24, m: int = 12, R: float = 1.0, r: float = 0.4,
                   bump: float = 0.0, seed: int = 0) -> Mesh:
    """Torus of revolution in R^3, optionally with a smooth random bump."""
    th = 2 * np.pi * np.arange(n) / n
    ph = 2 * np.pi * np.arange(m) / m
    T, P = np.meshgrid(th, ph, indexing="ij")
    rr = r * np.ones_like(T)
    if bump:
        rng = np.random.default_rng(seed)
        for _ in range(3):
            t0, p0 = rng.uniform(0, 2 * np.pi, 2)
            rr += bump * r * np.exp(2.0 * (np.cos(T - t0) - 1) + 1.5 * (np.cos(P - p0) - 1))
    x = (R + rr * np.cos(P)) * np.cos(T)
    y = (R + rr * np.cos(P)) * np.sin(T)
    z = rr * np.sin(P)
    v = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    return Mesh(v, _grid_torus_faces(n, m))


def voxel_handlebody(genus: int = 2, size: float = 1.0) -> Mesh:
    """Boundary of a slab of unit voxels pierced by ``genus`` square holes,
    one quad split into two triangles."""
    nx, ny = 2 * genus + 1, 3
    solid = np.ones((nx, ny, 1), dtype=bool)
    for k in range(genus):
        solid[2 * k + 1, 1, 0] = False
    # pad so that neighbor lookups stay in range
    pad = np.zeros((nx + 2, ny + 2, 3), dtype=bool)
    pad[1:-1, 1:-1, 1:2] = solid
    verts, faces = [], []
    dirs = [((1, 0, 0), (0, 1, 0), (0, 0, 1)), ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
            ((0, 1, 0), (0, 0, 1), (1, 0, 0)), ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
            ((0, 0, 1), (1, 0, 0), (0, 1, 0)), ((0, 0, -1), (0, 1, 0), (1, 0, 0))]
    for idx in zip(*np.nonzero(pad)):
        c = np.array(idx, dtype=float)
        for nrm, du, dv in dirs:
            nb = tuple(np.array(idx) + np.array(nrm))
            if pad[nb]:
                continue
            n_, u_, v_ = np.array(nrm), np.array(du), np.array(dv)
            # tangent pair (u, v) with u x v == normal keeps the quad outward
            if not np.array_equal(np.cross(u_, v_), n_):
                u_, v_ = v_, u_
            center = c + 0.5 + 0.5 * n_
            corners = [center + 0.5 * (su * u_ + sv * v_) for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
            base = len(verts)
            verts += corners
            faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
    v, f = _dedupe(np.array(verts) * size, np.array(faces))
    return Mesh(v, f)


def refine_loop_free(mesh: Mesh, times: int = 1) -> Mesh:
    """Midpoint subdivision (no smoothing); keeps the geometry and
    multiplies the face count by 4 per pass."""
    v, f = mesh.vertices, mesh.faces
    for _ in range(times):
        v, f = _subdivide(v, f)
    return Mesh(v, f)


SHAPES = {
    "cube": cube,
    "icosphere": icosphere,
    "octasphere": octasphere,
    "organic": organic,
    "disk": flat_disk,
    "cap": spherical_cap,
    "flat-torus": flat_torus,
    "torus": embedded_torus,
    "handlebody": voxel_handlebody,
}
