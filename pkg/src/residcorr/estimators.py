"""Gram-matrix estimates and the projection estimators built on them.

All accumulations over SNPs run over fixed blocks of ``BLOCK_SIZE`` rows and
are combined by a pairwise tree in block order, so results do not depend on
how many worker threads process the blocks.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .config import BLOCK_SIZE, THREADS_ENV, TOL
from .model import (
    ContractError,
    DegenerateInputError,
    EigenDecomposition,
    GenotypeMatrix,
    HeterozygosityDiag,
    ProjectionMatrix,
    _frozen,
)
from .spectral import eig_sym, gram_schmidt_pivoted, projector_from_basis


class EigenvalueConditionWarning(UserWarning):
    """The eigengap at the requested rank is too small for a stable subspace."""


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ContractError(f"thread count must be >= 1, got {threads}")
    return threads


def block_ranges(m: int, block: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    return [(s, min(s + block, m)) for s in range(0, m, block)]


def tree_reduce(parts: Iterable):
    """Sum ``parts`` pairwise in a shape fixed by their count and order."""
    stack: list[tuple[int, object]] = []
    for x in parts:
        level = 0
        while stack and stack[-1][0] == level:
            _, y = stack.pop()
            x = _add(y, x)
            level += 1
        stack.append((level, x))
    if not stack:
        raise DegenerateInputError("nothing to reduce")
    _, total = stack.pop()
    while stack:
        _, y = stack.pop()
        total = _add(y, total)
    return total


def _add(a, b):
    if isinstance(a, tuple):
        return tuple(x + y for x, y in zip(a, b))
    return a + b


def map_blocks(func: Callable[[np.ndarray], object], blocks: Iterable[np.ndarray],
               threads: Optional[int] = None) -> Iterator:
    """Apply ``func`` to each block, yielding results in block order."""
    threads = resolve_threads(threads)
    if threads == 1:
        for b in blocks:
            yield func(b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(func, blocks)


def genotype_blocks(G: GenotypeMatrix, block: int = BLOCK_SIZE) -> Iterator[np.ndarray]:
    for s, e in block_ranges(G.m, block):
        yield G.data[s:e]


@dataclass(frozen=True, eq=False)
class GramStats:
    """Exact integer-valued sufficient statistics of G accumulated in one pass.

    ``cross`` is GᵀG, ``colsum`` is Gᵀ1 and ``het`` counts heterozygous
    genotypes per individual. All three are integers held in float64, which
    is exact for any realistic m, so their values do not depend on blocking.
    """

    cross: np.ndarray
    colsum: np.ndarray
    het: np.ndarray
    m: int

    @property
    def n(self) -> int:
        return self.colsum.shape[0]


def _gram_block(block: np.ndarray):
    X = block.astype(np.float64)
    return X.T @ X, X.sum(axis=0), (block == 1).sum(axis=0).astype(np.float64), block.shape[0]


def gram_stats_from_blocks(blocks: Iterable[np.ndarray], threads: Optional[int] = None) -> GramStats:
    cross, colsum, het, m = tree_reduce(map_blocks(_gram_block, blocks, threads))
    return GramStats(_frozen(cross), _frozen(colsum), _frozen(het), int(m))


def gram_stats(G: GenotypeMatrix, threads: Optional[int] = None) -> GramStats:
    return gram_stats_from_blocks(genotype_blocks(G), threads)


def heterozygosity_diag(G: GenotypeMatrix, stats: Optional[GramStats] = None) -> HeterozygosityDiag:
    """Per-individual average of G(2 - G), i.e. the fraction of heterozygous SNPs."""
    if stats is None:
        stats = gram_stats(G)
    return HeterozygosityDiag(stats.het / stats.m)


@dataclass(frozen=True, eq=False)
class GramEstimate:
    H: np.ndarray
    kind: str
    m_used: int

    def __post_init__(self):
        if self.kind not in ("pca1_adjusted", "centered", "standardized"):
            raise ContractError(f"unknown Gram kind {self.kind!r}")
        H = _frozen(self.H)
        if np.max(np.abs(H - H.T)) > TOL.gram_symmetry:
            raise ContractError("Gram estimate is not symmetric")
        if self.kind != "pca1_adjusted":
            scale = max(np.linalg.norm(H), 1.0)
            if np.max(np.abs(H.sum(axis=1))) > TOL.centered_rowsum * scale:
                raise ContractError("centered Gram estimate does not annihilate e")
        object.__setattr__(self, "H", H)


@dataclass(frozen=True, eq=False)
class ScalingDiag:
    """Per-SNP standard deviations (divisor n) of the SNPs that vary."""

    w: np.ndarray
    kept_snps: np.ndarray

    def __post_init__(self):
        w = _frozen(self.w)
        if np.any(w <= 0):
            raise ContractError("kept SNPs must have positive standard deviation")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "kept_snps", _frozen(self.kept_snps, np.int64))

    @property
    def m_prime(self) -> int:
        return self.w.shape[0]


def _center(S: np.ndarray) -> np.ndarray:
    # (I - E/n) S (I - E/n) without forming E
    S = S - S.mean(axis=0, keepdims=True)
    S = S - S.mean(axis=1, keepdims=True)
    return 0.5 * (S + S.T)


def gram_pca1(G: GenotypeMatrix, stats: Optional[GramStats] = None) -> GramEstimate:
    """H = GᵀG/m - diag(D̂)."""
    if stats is None:
        stats = gram_stats(G)
    H = stats.cross / stats.m - np.diag(stats.het / stats.m)
    return GramEstimate(H, "pca1_adjusted", stats.m)


def gram_centered(G: GenotypeMatrix, stats: Optional[GramStats] = None) -> GramEstimate:
    """H₁ = G₁ᵀG₁/m for SNP-wise mean-centred genotypes G₁ = G(I - E/n)."""
    if stats is None:
        stats = gram_stats(G)
    return GramEstimate(_center(stats.cross / stats.m), "centered", stats.m)


def _standardized_block(block: np.ndarray):
    X = block.astype(np.float64)
    n = X.shape[1]
    s1 = X.sum(axis=1)
    s2 = np.einsum("ij,ij->i", X, X)
    # n² var = n Σg² - (Σg)², exact in integers
    nvar = n * s2 - s1 * s1
    keep = nvar > 0
    Z = (X[keep] - (s1[keep] / n)[:, None]) / (np.sqrt(nvar[keep]) / n)[:, None]
    return Z.T @ Z, int(keep.sum())


def scaling_diag(G: GenotypeMatrix) -> ScalingDiag:
    X = G.data.astype(np.float64)
    sd = X.std(axis=1)
    nvar = G.n * np.einsum("ij,ij->i", X, X) - X.sum(axis=1) ** 2
    kept = np.flatnonzero(nvar > 0)
    return ScalingDiag(sd[kept], kept)


def gram_standardized(G: GenotypeMatrix, threads: Optional[int] = None,
                      blocks: Optional[Iterable[np.ndarray]] = None) -> GramEstimate:
    """H₂ = G₂ᵀG₂/m' for centred, unit-variance genotypes; monomorphic SNPs dropped."""
    if blocks is None:
        blocks = genotype_blocks(G)
    cross, m_prime = tree_reduce(map_blocks(_standardized_block, blocks, threads))
    if m_prime == 0:
        raise DegenerateInputError("all SNPs have zero variance")
    return GramEstimate(_center(cross / m_prime), "standardized", m_prime)


@dataclass(frozen=True, eq=False)
class PCAFit:
    """A projection estimate together with the spectral data it came from."""

    projection: ProjectionMatrix
    eigen: EigenDecomposition
    gram: GramEstimate


def _check_gap(w: np.ndarray, upper: int, label: str):
    # upper is the 1-based index of the last retained eigenvalue
    if upper < 1 or upper >= len(w):
        return
    gap = w[upper - 1] - w[upper]
    if gap <= TOL.eigengap_warning * abs(w[0]):
        warnings.warn(
            f"{label}: eigenvalue condition fails at position {upper} "
            f"(gap {gap:.3g}, leading eigenvalue {w[0]:.3g}); the subspace is not well determined",
            EigenvalueConditionWarning, stacklevel=3)


def _check_k(k_prime: int, n: int, low: int):
    if not low <= k_prime <= n:
        raise ContractError(f"k' must satisfy {low} <= k' <= {n}, got {k_prime}")


def fit_pca1(G: GenotypeMatrix, k_prime: int, stats: Optional[GramStats] = None) -> PCAFit:
    _check_k(k_prime, G.n, 1)
    gram = gram_pca1(G, stats)
    eig = eig_sym(gram.H)
    _check_gap(eig.eigenvalues, k_prime, "pca1")
    U = eig.top(k_prime)
    P = U @ U.T
    return PCAFit(ProjectionMatrix(0.5 * (P + P.T), k_prime, "pca1"), eig, gram)


def _centered_projection(gram: GramEstimate, k_prime: int, method: str) -> PCAFit:
    eig = eig_sym(gram.H)
    n = gram.H.shape[0]
    _check_gap(eig.eigenvalues, k_prime - 1, method)
    rows = np.vstack([eig.top(k_prime - 1).T, np.ones((1, n))])
    basis = gram_schmidt_pivoted(rows)
    if basis.source_rank != k_prime:
        raise DegenerateInputError(
            f"{method}: leading eigenvectors and e span rank {basis.source_rank}, expected {k_prime}")
    return PCAFit(projector_from_basis(basis, method), eig, gram)


def fit_pca2(G: GenotypeMatrix, k_prime: int, stats: Optional[GramStats] = None) -> PCAFit:
    _check_k(k_prime, G.n, 2)
    return _centered_projection(gram_centered(G, stats), k_prime, "pca2")


def fit_pca3(G: GenotypeMatrix, k_prime: int, threads: Optional[int] = None) -> PCAFit:
    _check_k(k_prime, G.n, 2)
    return _centered_projection(gram_standardized(G, threads), k_prime, "pca3")


def project_pca1(G: GenotypeMatrix, k_prime: int) -> ProjectionMatrix:
    """Projector onto the top-k' eigenvectors of GᵀG/m - D̂."""
    return fit_pca1(G, k_prime).projection


def project_pca2(G: GenotypeMatrix, k_prime: int) -> ProjectionMatrix:
    """Projector onto the top k'-1 eigenvectors of the centred Gram matrix plus e."""
    return fit_pca2(G, k_prime).projection


def project_pca3(G: GenotypeMatrix, k_prime: int) -> ProjectionMatrix:
    """As :func:`project_pca2` but on mean- and variance-normalised genotypes."""
    return fit_pca3(G, k_prime).projection


def project_null(n: int) -> ProjectionMatrix:
    """k' = 1 for centred PCA: the prediction is the SNP mean, P = E/n."""
    return ProjectionMatrix(np.full((n, n), 1.0 / n), 1, "pca_null")


def project_from_q(Q_hat, method: str = "from_q") -> ProjectionMatrix:
    """Projector onto the row space of Q̂ (k' x n); Q̂ must have full row rank."""
    Q_hat = np.atleast_2d(np.asarray(Q_hat, dtype=np.float64))
    basis = gram_schmidt_pivoted(Q_hat)
    if basis.source_rank != Q_hat.shape[0]:
        raise DegenerateInputError(
            f"Q has numerical rank {basis.source_rank}, expected {Q_hat.shape[0]}")
    return projector_from_basis(basis, method)


def project_from_pi(Pi_hat, k_prime: int) -> ProjectionMatrix:
    """Projector onto the span of k' linearly independent rows of Π̂ (m x n)."""
    Pi_hat = np.atleast_2d(np.asarray(Pi_hat, dtype=np.float64))
    if k_prime < 1:
        raise ContractError(f"k' must be positive, got {k_prime}")
    basis = gram_schmidt_pivoted(Pi_hat, max_rank=k_prime)
    if basis.source_rank < k_prime:
        raise DegenerateInputError(
            f"Pi has numerical rank {basis.source_rank}, fewer than k' = {k_prime}")
    return projector_from_basis(basis, "from_pi")
