"""Residuals, empirical and model-based residual correlations, and their summaries."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .config import BLOCK_SIZE, TOL
from .estimators import GramStats, map_blocks, tree_reduce
from .model import (
    ContractError,
    CorrelationReport,
    DegenerateInputError,
    GenotypeMatrix,
    HeterozygosityDiag,
    LimitSpec,
    PopulationLabels,
    ProjectionMatrix,
)


class ResidualMatrix:
    """R = G(I - P), held lazily and produced block by block.

    Constructed either from genotypes and a projector (:func:`residuals`) or
    from an explicit array (:meth:`from_array`). Only one block of predicted
    values exists at a time when iterating :meth:`blocks`.
    """

    def __init__(self, G: Optional[GenotypeMatrix], P: Optional[ProjectionMatrix],
                 array: Optional[np.ndarray] = None, k_prime: int = 0, method: str = "exact"):
        self._G = G
        self._P = P
        self._array = array
        self.k_prime = P.k_prime if P is not None else k_prime
        self.method = P.method if P is not None else method

    @classmethod
    def from_array(cls, R, k_prime: int = 0, method: str = "exact") -> "ResidualMatrix":
        R = np.array(R, dtype=np.float64)
        if R.ndim != 2:
            raise ContractError("residual matrix must be 2-d")
        R.flags.writeable = False
        return cls(None, None, R, k_prime, method)

    @property
    def shape(self) -> tuple[int, int]:
        if self._array is not None:
            return self._array.shape
        return self._G.m, self._G.n

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def n(self) -> int:
        return self.shape[1]

    def _complement(self) -> np.ndarray:
        return np.eye(self._P.n) - self._P.P

    def blocks(self, block: int = BLOCK_SIZE) -> Iterator[np.ndarray]:
        if self._array is not None:
            for s in range(0, self.m, block):
                yield self._array[s:s + block]
            return
        M = self._complement()
        for s in range(0, self.m, block):
            yield self._G.data[s:s + block].astype(np.float64) @ M

    def block_function(self):
        """A per-block callable for parallel map over raw genotype blocks."""
        if self._array is not None:
            return None
        M = self._complement()
        return lambda g: g.astype(np.float64) @ M

    @property
    def R(self) -> np.ndarray:
        if self._array is not None:
            return self._array
        return np.vstack(list(self.blocks()))

    def max_row_sum(self) -> float:
        return max(float(np.max(np.abs(b.sum(axis=1)))) for b in self.blocks())


def residuals(G: GenotypeMatrix, P: ProjectionMatrix) -> ResidualMatrix:
    if G.n != P.n:
        raise ContractError(f"genotypes have {G.n} individuals, projector is {P.n}x{P.n}")
    return ResidualMatrix(G, P)


def _normalize(cov: np.ndarray) -> np.ndarray:
    """Covariance to correlation; rows with variance <= floor become NaN."""
    var = np.diag(cov).copy()
    defined = var > TOL.variance_floor
    sd = np.sqrt(np.where(defined, var, 1.0))
    corr = cov / np.outer(sd, sd)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    bad = ~defined
    corr[bad, :] = np.nan
    corr[:, bad] = np.nan
    return corr


def _residual_moments(R: ResidualMatrix, threads: Optional[int]):
    f = R.block_function()
    if f is None:
        def stats(b):
            return b.T @ b, b.sum(axis=0)
        blocks = R.blocks()
    else:
        def stats(g):
            b = f(g)
            return b.T @ b, b.sum(axis=0)
        blocks = (R._G.data[s:s + BLOCK_SIZE] for s in range(0, R.m, BLOCK_SIZE))
    return tree_reduce(map_blocks(stats, blocks, threads))


def empirical_corr(R: ResidualMatrix, threads: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical residual covariance B̂ (divisor m - 1) and its correlation b̂.

    Entries of b̂ involving an individual whose residual variance is below the
    floor are NaN.
    """
    m = R.m
    if m < 2:
        raise ContractError("empirical covariance needs at least two SNPs")
    cross, colsum = _residual_moments(R, threads)
    mean = colsum / m
    B = (cross - m * np.outer(mean, mean)) / (m - 1)
    B = 0.5 * (B + B.T)
    return B, _normalize(B)


def empirical_cov_from_gram(stats: GramStats, P: ProjectionMatrix) -> np.ndarray:
    """B̂ from GᵀG and Gᵀ1 alone; algebraically equal to :func:`empirical_corr`'s B̂."""
    M = np.eye(P.n) - P.P
    m = stats.m
    cross = M @ stats.cross @ M
    mean = M @ stats.colsum / m
    B = (cross - m * np.outer(mean, mean)) / (m - 1)
    return 0.5 * (B + B.T)


def estimated_corr(P: ProjectionMatrix, D: HeterozygosityDiag) -> tuple[np.ndarray, np.ndarray]:
    """Ĉ = (I - P) D̂ (I - P) and its correlation ĉ."""
    if P.n != D.n:
        raise ContractError(f"projector is {P.n}x{P.n} but D has {D.n} entries")
    M = np.eye(P.n) - P.P
    C = (M * D.d) @ M
    C = 0.5 * (C + C.T)
    return C, _normalize(C)


def corrected_corr(b_hat, c_hat, labels: Optional[PopulationLabels] = None) -> CorrelationReport:
    """Assemble b̂, ĉ and b̂ - ĉ into a report; NaN entries become masked zeros."""
    b_hat = np.asarray(b_hat, dtype=np.float64)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    if b_hat.shape != c_hat.shape:
        raise ContractError(f"shape mismatch {b_hat.shape} vs {c_hat.shape}")
    n = b_hat.shape[0]
    if labels is None:
        labels = PopulationLabels(("all",) * n)
    mask = np.isnan(b_hat) | np.isnan(c_hat)
    b = np.where(mask, 0.0, b_hat)
    c = np.where(mask, 0.0, c_hat)
    return CorrelationReport(b, c, b - c, labels, mask)


def display_order(labels: PopulationLabels, Q_hat=None) -> np.ndarray:
    """Individuals grouped by block; within a block sorted by ancestry if Q̂ is given.

    The sort key is the proportion of the block's dominant ancestral
    component (descending), with input order breaking ties.
    """
    order = []
    Q_hat = None if Q_hat is None else np.atleast_2d(np.asarray(Q_hat, dtype=float))
    for _, idx in labels.blocks():
        if Q_hat is not None and len(idx):
            comp = int(np.argmax(Q_hat[:, idx].mean(axis=1)))
            idx = idx[np.argsort(-Q_hat[comp, idx], kind="stable")]
        order.extend(idx.tolist())
    return np.asarray(order, dtype=np.int64)


@dataclass(frozen=True)
class BlockStat:
    block_a: str
    block_b: str
    stat: str
    mean: Optional[float]
    sd: Optional[float]
    count: int
    reference: Optional[float]


class BlockSummary:
    """Means and standard deviations of b̂ and b̂ - ĉ per pair of blocks.

    Within-block statistics use the distinct off-diagonal pairs i < j;
    between-block statistics use every pair. Masked entries are skipped.
    """

    def __init__(self, rows: list[BlockStat], sizes: dict[str, int]):
        self.rows = rows
        self.sizes = sizes
        self._index = {(r.block_a, r.block_b, r.stat): r for r in rows}

    def get(self, a: str, b: str, stat: str) -> BlockStat:
        return self._index[(a, b, stat)]

    def within(self, stat: str = "b_hat") -> dict[str, Optional[float]]:
        return {name: self._index[(name, name, stat)].mean for name in self.sizes}

    def within_sd(self, stat: str = "b_hat") -> dict[str, Optional[float]]:
        return {name: self._index[(name, name, stat)].sd for name in self.sizes}

    def references(self) -> dict[str, Optional[float]]:
        return {name: self._index[(name, name, "b_hat")].reference for name in self.sizes}

    def max_abs_within_diff(self) -> float:
        """The misfit statistic: largest |mean(b̂ - ĉ)| over blocks."""
        vals = [abs(v) for v in self.within("diff").values() if v is not None]
        return max(vals) if vals else 0.0


def _stats(values: np.ndarray) -> tuple[Optional[float], Optional[float], int]:
    k = values.size
    if k == 0:
        return None, None, 0
    sd = float(np.std(values, ddof=1)) if k > 1 else None
    return float(np.mean(values)), sd, k


def block_summary(report: CorrelationReport) -> BlockSummary:
    blocks = report.labels.blocks()
    sizes = {name: len(idx) for name, idx in blocks}
    rows = []
    for a, ia in blocks:
        for b, ib in blocks:
            if a == b:
                iu, ju = np.triu_indices(len(ia), k=1)
                ii, jj = ia[iu], ia[ju]
            else:
                ii, jj = np.meshgrid(ia, ib, indexing="ij")
                ii, jj = ii.ravel(), jj.ravel()
            ok = ~report.undefined_mask[ii, jj]
            for stat, M in (("b_hat", report.b_hat), ("diff", report.diff)):
                if a == b and len(ia) < 2:
                    mean, sd, count = None, None, 0
                else:
                    mean, sd, count = _stats(M[ii[ok], jj[ok]])
                ref = None
                if a == b and stat == "b_hat" and len(ia) > 1:
                    ref = -1.0 / (len(ia) - 1)
                elif a == b and stat == "diff" and len(ia) > 1:
                    ref = 0.0
                rows.append(BlockStat(a, b, stat, mean, sd, count, ref))
    return BlockSummary(rows, sizes)


def sum_ratio(B_hat) -> float:
    """Sum of off-diagonal entries over the trace; tends to -1 when e is in the fitted span."""
    B = np.asarray(B_hat, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] < 2:
        raise ContractError("sum_ratio needs a square matrix with n >= 2")
    tr = np.trace(B)
    if tr == 0:
        raise DegenerateInputError("sum_ratio denominator is zero")
    return float((B.sum() - tr) / tr)


class LimitResult(NamedTuple):
    B_inf: np.ndarray
    C_inf: np.ndarray
    b_inf: np.ndarray
    c_inf: np.ndarray
    diff_inf: np.ndarray


def limit_oracle(spec: LimitSpec, P_limit: ProjectionMatrix) -> LimitResult:
    """Large-m limits of B̂ and Ĉ for a given limiting projector.

    B̂ tends to (I - P)(D + 4QᵀΣQ)(I - P) and Ĉ to (I - P) D (I - P).
    """
    if spec.n != P_limit.n:
        raise ContractError(f"spec has n = {spec.n}, projector is {P_limit.n}x{P_limit.n}")
    M = np.eye(spec.n) - P_limit.P
    cov = spec.Q.T @ spec.Sigma @ spec.Q
    B = M @ (np.diag(spec.D) + 4.0 * cov) @ M
    C = (M * spec.D) @ M
    B = 0.5 * (B + B.T)
    C = 0.5 * (C + C.T)
    b = _normalize(B)
    c = _normalize(C)
    return LimitResult(B, C, b, c, b - c)


@dataclass(frozen=True)
class HomogeneityCheck:
    block: str
    passed: bool
    min_value: float
    bound: float
    slack: float
    margin: float


def homogeneity_bound_check(report: CorrelationReport, block: str,
                            alpha: float = 1e-3) -> HomogeneityCheck:
    """Test whether a block is consistent with a single homogeneous source.

    In the limit every within-block b̂_ij is at least -1/(n₁-1). At finite m
    the smallest of the N distinct entries is allowed to fall below the bound
    by ``z * sd``, where sd is the within-block standard deviation and z is
    the Bonferroni normal quantile for N entries at level ``alpha``, never
    less than 3. ``margin`` is ``min_value - bound``.
    """
    idx = dict(report.labels.blocks()).get(block)
    if idx is None:
        raise ContractError(f"unknown block {block!r}")
    n1 = len(idx)
    if n1 < 2:
        raise ContractError("homogeneity check needs a block of at least two individuals")
    iu, ju = np.triu_indices(n1, k=1)
    ii, jj = idx[iu], idx[ju]
    ok = ~report.undefined_mask[ii, jj]
    vals = report.b_hat[ii[ok], jj[ok]]
    if vals.size == 0:
        raise DegenerateInputError(f"block {block!r} has no defined correlations")
    bound = -1.0 / (n1 - 1)
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    z = max(3.0, NormalDist().inv_cdf(1.0 - alpha / vals.size))
    slack = z * sd
    lo = float(vals.min())
    return HomogeneityCheck(block, bool(lo >= bound - slack), lo, bound, slack, lo - bound)
