"""Dense symmetric eigensolver, pivoted Gram-Schmidt and projector construction.

The eigensolver is Householder tridiagonalisation followed by implicit-shift
QL iterations (the EISPACK ``tred2``/``tql2`` pair). It runs in a single
thread without LAPACK, so identical input bits always give identical output
bits. The kernels are compiled with numba when it is importable and run as
plain Python otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import TOL
from .model import ContractError, DegenerateInputError, EigenDecomposition, ProjectionMatrix, _frozen

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _tred2(V, d, e):
    n = V.shape[0]
    for j in range(n):
        d[j] = V[n - 1, j]
    for i in range(n - 1, 0, -1):
        scale = 0.0
        h = 0.0
        for k in range(i):
            scale += abs(d[k])
        if scale == 0.0:
            e[i] = d[i - 1]
            for j in range(i):
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
                V[j, i] = 0.0
        else:
            for k in range(i):
                d[k] /= scale
                h += d[k] * d[k]
            f = d[i - 1]
            g = math.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h = h - f * g
            d[i - 1] = f - g
            for j in range(i):
                e[j] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                g = e[j] + V[j, j] * f
                for k in range(j + 1, i):
                    g += V[k, j] * d[k]
                    e[k] += V[k, j] * f
                e[j] = g
            f = 0.0
            for j in range(i):
                e[j] /= h
                f += e[j] * d[j]
            hh = f / (h + h)
            for j in range(i):
                e[j] -= hh * d[j]
            for j in range(i):
                f = d[j]
                g = e[j]
                for k in range(j, i):
                    V[k, j] -= f * e[k] + g * d[k]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h
    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            for k in range(i + 1):
                d[k] = V[k, i + 1] / h
            for j in range(i + 1):
                g = 0.0
                for k in range(i + 1):
                    g += V[k, i + 1] * V[k, j]
                for k in range(i + 1):
                    V[k, j] -= g * d[k]
        for k in range(i + 1):
            V[k, i + 1] = 0.0
    for j in range(n):
        d[j] = V[n - 1, j]
        V[n - 1, j] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0


@njit(cache=True)
def _tql2(V, d, e):
    n = V.shape[0]
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    f = 0.0
    tst1 = 0.0
    eps = 2.0 ** -52
    max_iter = 60 * n + 60
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n:
            if abs(e[m]) <= eps * tst1:
                break
            m += 1
        if m == n:
            m = n - 1
        if m > l:
            it = 0
            while True:
                it += 1
                if it > max_iter:
                    return False
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[m]
                c = 1.0
                c2 = c
                c3 = c
                el1 = e[l + 1]
                s = 0.0
                s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    for k in range(n):
                        h = V[k, i + 1]
                        V[k, i + 1] = s * V[k, i] + c * h
                        V[k, i] = c * V[k, i] - s * h
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if not abs(e[l]) > eps * tst1:
                    break
        d[l] = d[l] + f
        e[l] = 0.0
    return True


def eig_sym(A) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Equal eigenvalues keep the order the QL sweep produced them in. Each
    eigenvector is signed so that its largest-magnitude entry is positive.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ContractError(f"eig_sym needs a non-empty square matrix, got {A.shape}")
    asym = np.max(np.abs(A - A.T))
    if asym > TOL.symmetry:
        raise ContractError(f"matrix is not symmetric (max |A-A^T| = {asym:.3g})")
    n = A.shape[0]
    V = np.ascontiguousarray(0.5 * (A + A.T))
    d = np.zeros(n)
    e = np.zeros(n)
    if n > 1:
        _tred2(V, d, e)
        if not _tql2(V, d, e):
            raise DegenerateInputError("QL iteration failed to converge")
    else:
        d[0] = V[0, 0]
        V[0, 0] = 1.0
    order = np.argsort(-d, kind="stable")
    w = d[order]
    V = V[:, order]
    lead = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[lead, np.arange(n)] < 0, -1.0, 1.0)
    V = V * signs
    return EigenDecomposition(w, V)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Orthonormal columns spanning the row space of some input matrix.

    ``pivots`` records which input rows were selected, in selection order.
    """

    vectors: np.ndarray
    source_rank: int
    pivots: tuple = ()

    def __post_init__(self):
        V = _frozen(self.vectors)
        if V.ndim != 2 or V.shape[1] != self.source_rank:
            raise ContractError("basis shape does not match its rank")
        if self.source_rank:
            err = np.max(np.abs(V.T @ V - np.eye(self.source_rank)))
            if err > TOL.orthonormality:
                raise ContractError(f"basis not orthonormal (max error {err:.3g})")
        object.__setattr__(self, "vectors", V)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


def _orthogonalize(x, basis):
    for _ in range(2):
        if basis:
            B = np.column_stack(basis)
            x = x - B @ (B.T @ x)
    return x


def gram_schmidt_pivoted(rows, tol: float = TOL.gram_schmidt,
                         max_rank: Optional[int] = None) -> OrthonormalBasis:
    """Orthonormal basis of the row space of ``rows`` by pivoted Gram-Schmidt.

    At each step the row with the largest residual relative to its own norm
    is taken next. A row counts towards the rank while that relative residual
    exceeds ``tol``. Selection stops after ``max_rank`` vectors if given.

    Residual norms are tracked by downdating, which is only accurate to about
    1e-8 relative; whenever an explicitly recomputed pivot fails the tolerance,
    all residuals are recomputed exactly before concluding the rank.
    """
    if tol <= 0:
        raise ContractError("tolerance must be positive")
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    r, n = X.shape
    limit = min(r, n) if max_rank is None else min(r, n, max_rank)
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    live = norms > 0
    safe = np.where(live, norms, 1.0)
    proj_sq = np.zeros(r)
    basis: list[np.ndarray] = []
    pivots: list[int] = []
    taken = np.zeros(r, dtype=bool)

    def explicit_rel():
        rel = np.zeros(r)
        if not basis:
            rel[live] = 1.0
        else:
            B = np.column_stack(basis)
            for start in range(0, r, 8192):
                blk = X[start:start + 8192]
                res = blk - (blk @ B) @ B.T
                res = res - (res @ B) @ B.T
                rel[start:start + 8192] = np.sqrt(np.einsum("ij,ij->i", res, res))
            rel = rel / safe
        rel[~live | taken] = 0.0
        return rel

    while len(basis) < limit:
        rel = np.sqrt(np.clip(1.0 - proj_sq / safe**2, 0.0, None))
        rel[~live | taken] = 0.0
        i = int(np.argmax(rel))
        v = _orthogonalize(X[i].copy(), basis)
        if not np.linalg.norm(v) > tol * norms[i]:
            rel = explicit_rel()
            i = int(np.argmax(rel))
            if not rel[i] > tol:
                break
            v = _orthogonalize(X[i].copy(), basis)
        v = v / np.linalg.norm(v)
        basis.append(v)
        pivots.append(i)
        taken[i] = True
        proj_sq += (X @ v) ** 2
    vectors = np.column_stack(basis) if basis else np.zeros((n, 0))
    return OrthonormalBasis(vectors, len(basis), tuple(pivots))


def projector_from_basis(basis: OrthonormalBasis, method: str = "exact") -> ProjectionMatrix:
    V = basis.vectors
    P = V @ V.T
    P = 0.5 * (P + P.T)
    return ProjectionMatrix(P, basis.source_rank, method)


def projection_distance(P: ProjectionMatrix, Q: ProjectionMatrix) -> float:
    """Frobenius norm of ``P - Q``."""
    if P.n != Q.n:
        raise ContractError(f"projector dimensions differ: {P.n} vs {Q.n}")
    return float(np.linalg.norm(P.P - Q.P))
