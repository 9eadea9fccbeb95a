"""Sparse symmetric assembly and factor-once / solve-many systems.

Two reduced systems appear in the cone solver:

* :class:`PinnedSystem` -- the Laplacian with vertex ``p`` pinned (row and
  column replaced by the identity), used on closed surfaces where ``L`` has
  a one-dimensional constant null space;
* :class:`InteriorSystem` -- the interior block ``L_II`` used with Dirichlet
  boundary values.

Both expose ``solve(rhs)`` returning a full-length vector, so the Yamabe
and adjoint code does not care which one it is given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla


class SymmetryError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SparseSym:
    """Symmetric sparse matrix; the full pattern is stored in CSR form."""

    matrix: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def upper(self) -> sparse.csr_matrix:
        return sparse.triu(self.matrix, format="csr")

    def __matmul__(self, x):
        return self.matrix @ x


def assemble(triplets, n: int, rtol: float = 1e-12) -> SparseSym:
    """Build a symmetric matrix from ``(i, j, value)`` triplets.

    Duplicates are summed. An entry given on one side only is mirrored;
    when both ``(i, j)`` and ``(j, i)`` are present their sums must agree.
    """
    trip = list(triplets)
    if trip:
        arr = np.asarray(trip, dtype=float)
        i = arr[:, 0].astype(np.int64)
        j = arr[:, 1].astype(np.int64)
        v = arr[:, 2]
        if i.min() < 0 or j.min() < 0 or i.max() >= n or j.max() >= n:
            raise IndexError("triplet index out of range")
    else:
        i = j = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    M = sparse.coo_matrix((v, (i, j)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    # structural presence of each side, independent of the stored values
    P = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    P.data[:] = 1.0
    both = P.multiply(P.T)
    Mb = M.multiply(both)
    diff = abs(Mb - Mb.T)
    scale = max(1.0, abs(M).max() if M.nnz else 0.0)
    if diff.nnz and diff.max() > rtol * scale:
        raise SymmetryError("(i, j) and (j, i) entries disagree")
    one_sided = M - Mb
    full = sparse.csr_matrix(Mb + one_sided + one_sided.T)
    full.sum_duplicates()
    full.eliminate_zeros()
    return SparseSym(full)


def _factorize(mat: sparse.spmatrix, symmetric: bool = True):
    mat = sparse.csc_matrix(mat)
    try:
        if symmetric:
            # COLAMD beats the minimum-degree orderings on mesh Laplacians
            # (SuperLU forms poorer supernodes with MMD despite less fill)
            lu = spla.splu(mat, permc_spec="COLAMD", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        else:
            lu = spla.splu(mat, permc_spec="COLAMD")
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystemError(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if d.size and d.min() <= 1e-13 * d.max():
        raise SingularSystemError("matrix is numerically singular")
    return lu


class PinnedSystem:
    """Factorization of the Laplacian with vertex ``p`` pinned.

    ``solve(rhs)`` zeroes ``rhs[p]`` and returns ``x`` with ``x[p] == 0``
    and ``(L x)_i == rhs_i`` for every ``i != p`` whenever ``sum(rhs) == 0``.
    The matrix need not be symmetric (the high-genus system is not).
    """

    def __init__(self, L, p: int, symmetric: bool = True):
        L = sparse.csr_matrix(L.matrix if isinstance(L, SparseSym) else L)
        n = L.shape[0]
        if not 0 <= p < n:
            raise IndexError(f"pinned vertex {p} out of range")
        self.n = n
        self.p = int(p)
        self.L = L
        keep = np.ones(n)
        keep[p] = 0.0
        D = sparse.diags(keep)
        self.L_hat = sparse.csc_matrix(D @ L @ D + sparse.csr_matrix(([1.0], ([p], [p])), shape=(n, n)))
        self._lu = _factorize(self.L_hat, symmetric)

    def mask(self, rhs: np.ndarray) -> np.ndarray:
        out = np.array(rhs, dtype=float, copy=True)
        out[self.p] = 0.0
        return out

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has length {rhs.shape[0]}, expected {self.n}")
        return self._lu.solve(self.mask(rhs))

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Off-pin residual ``M (L x - rhs)``."""
        return self.mask(self.L @ x - rhs)


class InteriorSystem:
    """Factorization of ``L_II`` for Dirichlet problems.

    ``solve(rhs)`` uses the interior entries of ``rhs`` and returns a full
    vector that is zero on the boundary.
    """

    def __init__(self, L, is_boundary: np.ndarray):
        L = sparse.csr_matrix(L.matrix if isinstance(L, SparseSym) else L)
        self.n = L.shape[0]
        self.L = L
        self.interior = np.flatnonzero(~np.asarray(is_boundary))
        self.boundary = np.flatnonzero(np.asarray(is_boundary))
        if len(self.boundary) == 0:
            raise ValueError("InteriorSystem needs at least one boundary vertex")
        self.L_II = L[self.interior][:, self.interior]
        self.L_IB = L[self.interior][:, self.boundary]
        self._lu = _factorize(self.L_II) if len(self.interior) else None

    def mask(self, rhs: np.ndarray) -> np.ndarray:
        out = np.array(rhs, dtype=float, copy=True)
        out[self.boundary] = 0.0
        return out

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has length {rhs.shape[0]}, expected {self.n}")
        out = np.zeros(rhs.shape)
        if self._lu is not None:
            out[self.interior] = self._lu.solve(np.ascontiguousarray(rhs[self.interior]))
        return out

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return self.mask(self.L @ x - rhs)


def pin(L, p: int) -> PinnedSystem:
    return PinnedSystem(L, p)


def solve(system, rhs) -> np.ndarray:
    return system.solve(rhs)
