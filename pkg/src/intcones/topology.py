"""Homology loops with left sides and left-side geodesic curvature.

The basis is built one handle at a time. A generator loop ``a`` comes
from a tree-cotree decomposition of the part of the surface not yet
touched by earlier loops (boundary components of that part are closed
off with virtual dual faces). Its partner ``b`` is the shortest cycle
that leaves ``a`` at a vertex ``x`` on the left and comes back from the
right without touching ``a`` anywhere else, so each pair crosses exactly
once and different pairs are vertex-disjoint.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TopologyError, genus


class HomologyError(TopologyError):
    pass


@dataclass(frozen=True)
class Loop:
    vertices: tuple[int, ...]          # cyclic order; left side follows the faces
    left_faces: tuple[tuple[int, ...], ...]   # per vertex: faces of the left fan
    k_g: np.ndarray                    # per-vertex pi - left angle sum

    @property
    def total_k_g(self) -> float:
        return float(self.k_g.sum())


@dataclass(frozen=True)
class Intersection:
    vertex: int
    a: int          # loop index crossed first (the one whose sides share u)
    b: int


@dataclass(frozen=True)
class HomologyBasis:
    loops: list[Loop]
    intersections: list[Intersection]

    @property
    def genus(self) -> int:
        return len(self.loops) // 2


# -- fans ---------------------------------------------------------------


def ring_sector(mesh: Mesh, v: int, start: int, stop: int) -> list[int]:
    """Ring neighbors of ``v`` from ``start`` counter-clockwise to ``stop``
    (both included)."""
    ring = mesh.rings[v]
    i = ring.index(start)
    out = [start]
    k = i
    while ring[k] != stop:
        k = (k + 1) % len(ring)
        out.append(ring[k])
        if len(out) > len(ring):
            raise HomologyError(f"{stop} is not on the ring of {v}")
    return out


def left_fan(mesh: Mesh, prev: int, v: int, nxt: int) -> list[int]:
    """Faces on the left when walking ``prev -> v -> nxt``."""
    sector = ring_sector(mesh, v, nxt, prev)
    faces = []
    for w0, w1 in zip(sector, sector[1:]):
        f = mesh.face_of_directed_edge(v, w0)
        if f is None or w1 not in mesh.faces[f]:
            raise HomologyError(f"open fan at vertex {v}")
        faces.append(f)
    return faces


def _corner(mesh: Mesh, f: int, v: int) -> int:
    return int(np.flatnonzero(mesh.faces[f] == v)[0])


def make_loop(mesh: Mesh, cycle) -> Loop:
    cycle = [int(v) for v in cycle]
    n = len(cycle)
    if n < 3 or len(set(cycle)) != n:
        raise HomologyError("a loop must be a simple cycle of at least three vertices")
    ang = mesh.corner_angles
    fans, kg = [], np.zeros(n)
    for j, v in enumerate(cycle):
        prev, nxt = cycle[j - 1], cycle[(j + 1) % n]
        fan = left_fan(mesh, prev, v, nxt)
        fans.append(tuple(fan))
        kg[j] = np.pi - sum(ang[f, _corner(mesh, f, v)] for f in fan)
    return Loop(tuple(cycle), tuple(fans), kg)


# -- tree-cotree on a face subset ---------------------------------------


def _generators(mesh: Mesh, face_ids: np.ndarray) -> list[list[int]]:
    """Tree-cotree generator cycles of the surface formed by ``face_ids``."""
    faces = mesh.faces[face_ids]
    fe = mesh.face_edges[face_ids]
    edges_used = np.unique(fe.ravel())
    verts = np.unique(faces.ravel())
    # primal BFS tree
    adj: dict[int, list[tuple[int, int]]] = {int(v): [] for v in verts}
    for e in edges_used:
        a, b = (int(x) for x in mesh.edges[e])
        adj[a].append((b, int(e)))
        adj[b].append((a, int(e)))
    for v in adj:
        adj[v].sort()
    parent: dict[int, tuple[int, int]] = {}
    depth: dict[int, int] = {}
    in_tree: set[int] = set()
    for root in (int(v) for v in verts):
        if root in depth:
            continue
        depth[root] = 0
        parent[root] = (-1, -1)
        q = deque([root])
        while q:
            v = q.popleft()
            for w, e in adj[v]:
                if w not in depth:
                    depth[w] = depth[v] + 1
                    parent[w] = (v, e)
                    in_tree.add(e)
                    q.append(w)
    # dual graph: faces plus one virtual face per boundary-edge component
    edge_faces: dict[int, list[int]] = {}
    for k, row in enumerate(fe):
        for e in row:
            edge_faces.setdefault(int(e), []).append(k)
    nf = len(face_ids)
    bnd = [e for e, fs in edge_faces.items() if len(fs) == 1]
    comp = {}
    if bnd:
        # union boundary edges that share a vertex
        par = {}

        def find(x):
            while par[x] != x:
                par[x] = par[par[x]]
                x = par[x]
            return x

        for e in bnd:
            par[e] = e
        by_vertex: dict[int, int] = {}
        for e in sorted(bnd):
            for v in mesh.edges[e]:
                v = int(v)
                if v in by_vertex:
                    ra, rb = find(e), find(by_vertex[v])
                    if ra != rb:
                        par[max(ra, rb)] = min(ra, rb)
                else:
                    by_vertex[v] = e
        roots = sorted({find(e) for e in bnd})
        rid = {r: nf + i for i, r in enumerate(roots)}
        comp = {e: rid[find(e)] for e in bnd}
    dual: dict[int, list[tuple[int, int]]] = {}
    for e, fs in edge_faces.items():
        if e in in_tree:
            continue
        a = fs[0]
        b = fs[1] if len(fs) == 2 else comp[e]
        dual.setdefault(a, []).append((b, e))
        dual.setdefault(b, []).append((a, e))
    for k in dual:
        dual[k].sort()
    in_cotree: set[int] = set()
    seen: set[int] = set()
    for root in sorted(dual):
        if root in seen:
            continue
        seen.add(root)
        q = deque([root])
        while q:
            f = q.popleft()
            for h, e in dual[f]:
                if h not in seen:
                    seen.add(h)
                    in_cotree.add(e)
                    q.append(h)
    gens = []
    for e in sorted(edge_faces):
        if e in in_tree or e in in_cotree:
            continue
        a, b = (int(x) for x in mesh.edges[e])
        pa, pb = [a], [b]
        while pa[-1] != pb[-1]:
            if depth[pa[-1]] >= depth[pb[-1]]:
                pa.append(parent[pa[-1]][0])
            else:
                pb.append(parent[pb[-1]][0])
            if pa[-1] == -1 or pb[-1] == -1:
                break
        if pa[-1] != pb[-1]:
            continue
        cycle = pa + pb[-2::-1]
        gens.append(cycle)
    gens.sort(key=lambda c: (len(c), min(c)))
    return gens


def _crossing_path(mesh: Mesh, loop: Loop, blocked: set[int], tries: int = 16):
    """Shortest cycle through one vertex of ``loop`` that leaves on its left
    and returns from its right, avoiding ``blocked`` and the rest of the loop."""
    cyc = list(loop.vertices)
    n = len(cyc)
    on_loop = set(cyc)
    avoid = blocked | on_loop
    picks = sorted({int(round(i * n / min(tries, n))) % n for i in range(min(tries, n))})
    best = None
    pos = mesh.vertices
    for j in picks:
        x = cyc[j]
        prev, nxt = cyc[j - 1], cyc[(j + 1) % n]
        left = [w for w in ring_sector(mesh, x, nxt, prev)[1:-1] if w not in avoid]
        right = [w for w in ring_sector(mesh, x, prev, nxt)[1:-1] if w not in avoid]
        if not left or not right:
            continue
        targets = set(right)
        dist = {w: float(np.linalg.norm(pos[w] - pos[x])) for w in left}
        prevmap = {w: -1 for w in left}
        heap = [(d, w) for w, d in sorted(dist.items())]
        heapq.heapify(heap)
        done = set()
        hit = None
        while heap:
            d, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            if v in targets:
                hit = (d + float(np.linalg.norm(pos[v] - pos[x])), v)
                break
            for w in mesh.neighbors[v]:
                w = int(w)
                if w in avoid or w in done:
                    continue
                nd = d + float(np.linalg.norm(pos[w] - pos[v]))
                if nd < dist.get(w, np.inf):
                    dist[w] = nd
                    prevmap[w] = v
                    heapq.heappush(heap, (nd, w))
        if hit is None:
            continue
        path = [hit[1]]
        while prevmap[path[-1]] != -1:
            path.append(prevmap[path[-1]])
        path.reverse()          # left ... right
        if best is None or hit[0] < best[0] - 1e-12:
            best = (hit[0], [x] + path)
    return None if best is None else best[1]


def homology_loops(mesh: Mesh) -> HomologyBasis:
    """``2g`` loops, pairwise crossing once within a handle and disjoint
    across handles. Raises on genus zero or when the mesh is too coarse to
    host disjoint loops."""
    g, nb = genus(mesh)
    if g == 0:
        raise HomologyError("surface has genus zero: no non-contractible loops")
    if nb:
        raise HomologyError("homology loops are only built for closed surfaces")
    loops: list[Loop] = []
    inters: list[Intersection] = []
    blocked: set[int] = set()
    for k in range(g):
        keep = ~np.isin(mesh.faces, list(blocked)).any(axis=1) if blocked else np.ones(mesh.n_faces, bool)
        gens = _generators(mesh, np.flatnonzero(keep))
        found = False
        for cyc in gens:
            if blocked & set(cyc):
                continue
            a = make_loop(mesh, cyc)
            path = _crossing_path(mesh, a, blocked)
            if path is None:
                continue
            b = make_loop(mesh, path)
            ia = len(loops)
            loops += [a, b]
            inters.append(Intersection(path[0], ia, ia + 1))
            blocked |= set(a.vertices) | set(b.vertices)
            found = True
            break
        if not found:
            raise HomologyError(f"could not place handle loop pair {k + 1} of {g}; refine the mesh")
    return HomologyBasis(loops, inters)
