"""Domain types shared by the estimators, diagnostics, simulator and io layers.

Every type validates its invariants on construction and stores read-only
arrays, so instances can be shared freely between threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import TOL

log = logging.getLogger(__name__)

MISSING = -1

PROJECTION_METHODS = ("pca1", "pca2", "pca3", "pca_null", "from_q", "from_pi", "exact")


class ResidcorrError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(ResidcorrError, ValueError):
    """An argument violates a documented precondition."""


class IngestionError(ResidcorrError):
    """Input data is malformed or inconsistent."""


class DegenerateInputError(ResidcorrError):
    """The input leaves nothing to compute on (e.g. no variable SNPs)."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """SNP-major allele counts, one byte per entry.

    ``data[s, i]`` is the number of counted alleles of individual ``i`` at
    SNP ``s``.
    """

    data: np.ndarray
    snp_ids: Optional[tuple] = None
    sample_ids: Optional[tuple] = None

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 2:
            raise ContractError(f"genotypes must be 2-d, got shape {raw.shape}")
        m, n = raw.shape
        if m < 1 or n < 1:
            raise ContractError(f"genotype matrix needs m >= 1 and n >= 1, got {m}x{n}")
        if not np.issubdtype(raw.dtype, np.integer):
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ContractError("genotypes must be integer allele counts")
        bad = (raw < 0) | (raw > 2)
        if bad.any():
            s, i = np.argwhere(bad)[0]
            raise ContractError(
                f"genotype {raw[s, i]} at (snp {s + 1}, individual {i + 1}) not in {{0,1,2}}")
        object.__setattr__(self, "data", _frozen(raw, np.uint8))
        if self.snp_ids is not None:
            ids = tuple(str(x) for x in self.snp_ids)
            if len(ids) != m:
                raise ContractError(f"{len(ids)} snp ids for {m} SNPs")
            object.__setattr__(self, "snp_ids", ids)
        if self.sample_ids is not None:
            ids = tuple(str(x) for x in self.sample_ids)
            if len(ids) != n:
                raise ContractError(f"{len(ids)} sample ids for {n} individuals")
            object.__setattr__(self, "sample_ids", ids)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def subset_snps(self, keep) -> "GenotypeMatrix":
        keep = np.asarray(keep)
        snp_ids = None if self.snp_ids is None else tuple(np.asarray(self.snp_ids)[keep])
        return GenotypeMatrix(self.data[keep], snp_ids=snp_ids, sample_ids=self.sample_ids)


def validate_genotypes(raw, policy: str = "drop_snp") -> tuple[GenotypeMatrix, int]:
    """Resolve missing codes and build a complete :class:`GenotypeMatrix`.

    Returns the matrix together with the number of SNPs dropped. Under
    ``policy="reject"`` any missing entry raises :class:`IngestionError`
    naming the first offending (snp, individual), both 1-based.
    """
    if policy not in ("reject", "drop_snp"):
        raise ContractError(f"unknown missing-data policy {policy!r}")
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ContractError(f"genotypes must be 2-d, got shape {raw.shape}")
    raw = raw.astype(np.int16, copy=False)
    missing = raw == MISSING
    invalid = ~missing & ((raw < 0) | (raw > 2))
    if invalid.any():
        s, i = np.argwhere(invalid)[0]
        raise IngestionError(
            f"invalid genotype code {raw[s, i]} at (snp {s + 1}, individual {i + 1})")
    if not missing.any():
        return GenotypeMatrix(raw), 0
    if policy == "reject":
        s, i = np.argwhere(missing)[0]
        raise IngestionError(f"missing genotype at (snp {s + 1}, individual {i + 1})")
    bad_rows = missing.any(axis=1)
    dropped = int(bad_rows.sum())
    log.info("dropped %d SNPs containing missing genotypes", dropped)
    if dropped == raw.shape[0]:
        raise IngestionError("every SNP contains a missing genotype")
    return GenotypeMatrix(raw[~bad_rows]), dropped


@dataclass(frozen=True, eq=False)
class AdmixtureModel:
    """Admixture proportions ``Q`` (k x n) and ancestral frequencies ``F`` (m x k)."""

    Q: np.ndarray
    F: np.ndarray
    sums_to_one: bool = field(init=False)

    def __post_init__(self):
        Q = _frozen(self.Q)
        F = _frozen(self.F)
        if Q.ndim != 2 or F.ndim != 2 or F.shape[1] != Q.shape[0]:
            raise ContractError(f"incompatible shapes Q {Q.shape}, F {F.shape}")
        if np.any(F < 0) or np.any(F > 1):
            raise ContractError("ancestral frequencies F must lie in [0, 1]")
        Pi = F @ Q
        if np.any(Pi < -1e-12) or np.any(Pi > 1 + 1e-12):
            raise ContractError("Pi = FQ has entries outside [0, 1]")
        from .spectral import gram_schmidt_pivoted

        k = Q.shape[0]
        rq = gram_schmidt_pivoted(Q).source_rank
        rf = gram_schmidt_pivoted(F.T, max_rank=k).source_rank
        if rq != k or rf != k:
            raise ContractError(f"rank(Q)={rq}, rank(F)={rf}, expected {k}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "sums_to_one", bool(np.allclose(Q.sum(axis=0), 1.0)))

    @property
    def k(self) -> int:
        return self.Q.shape[0]

    @property
    def Pi(self) -> np.ndarray:
        return np.clip(self.F @ self.Q, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """An n x n orthogonal projector of rank ``k_prime``."""

    P: np.ndarray
    k_prime: int
    method: str

    def __post_init__(self):
        P = _frozen(self.P)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ContractError(f"projector must be square, got {P.shape}")
        if self.method not in PROJECTION_METHODS:
            raise ContractError(f"unknown projection method {self.method!r}")
        asym = np.max(np.abs(P - P.T)) if P.size else 0.0
        if asym > TOL.symmetry:
            raise ContractError(f"projector not symmetric (max |P-P^T| = {asym:.3g})")
        idem = np.max(np.abs(P @ P - P)) if P.size else 0.0
        if idem > TOL.idempotency:
            raise ContractError(f"projector not idempotent (max |P^2-P| = {idem:.3g})")
        if abs(np.trace(P) - self.k_prime) > TOL.trace:
            raise ContractError(f"trace {np.trace(P):.8g} != asserted rank {self.k_prime}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "k_prime", int(self.k_prime))

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def contains_ones(self) -> bool:
        e = np.ones(self.n)
        return bool(np.max(np.abs(self.P @ e - e)) <= TOL.symmetry)


@dataclass(frozen=True, eq=False)
class HeterozygosityDiag:
    d: np.ndarray

    def __post_init__(self):
        d = _frozen(self.d)
        if d.ndim != 1:
            raise ContractError("heterozygosity diagonal must be a vector")
        if np.any(d < 0) or np.any(d > 1):
            raise ContractError("average heterozygosities must lie in [0, 1]")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Eigenpairs sorted by descending eigenvalue; column j pairs with value j."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        w = _frozen(self.eigenvalues)
        V = _frozen(self.eigenvectors)
        n = w.shape[0]
        if V.shape != (n, n):
            raise ContractError(f"eigenvectors shape {V.shape} does not match {n} eigenvalues")
        if np.any(np.diff(w) > 0):
            raise ContractError("eigenvalues must be sorted in descending order")
        err = np.max(np.abs(V.T @ V - np.eye(n)))
        if err > TOL.orthonormality:
            raise ContractError(f"eigenvectors not orthonormal (max error {err:.3g})")
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", V)

    def top(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, :k]


@dataclass(frozen=True, eq=False)
class PopulationLabels:
    """Group assignment per individual plus the order blocks are displayed in."""

    assignment: tuple
    order: Optional[tuple] = None

    def __post_init__(self):
        assignment = tuple(str(a) for a in self.assignment)
        if not assignment:
            raise ContractError("labels must cover at least one individual")
        seen = list(dict.fromkeys(assignment))
        order = seen if self.order is None else [str(o) for o in self.order]
        if sorted(order) != sorted(seen):
            raise ContractError("block order must list every label exactly once")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "order", tuple(order))

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], names: Optional[Sequence[str]] = None):
        names = list(names) if names is not None else [f"pop{i + 1}" for i in range(len(sizes))]
        if len(names) != len(sizes):
            raise ContractError("one name per block required")
        return cls(tuple(name for name, size in zip(names, sizes) for _ in range(size)), tuple(names))

    @property
    def n(self) -> int:
        return len(self.assignment)

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        arr = np.asarray(self.assignment)
        return [(name, np.flatnonzero(arr == name)) for name in self.order]

    def sizes(self) -> dict[str, int]:
        return {name: len(idx) for name, idx in self.blocks()}


@dataclass(frozen=True, eq=False)
class CorrelationReport:
    b_hat: np.ndarray
    c_hat: np.ndarray
    diff: np.ndarray
    labels: PopulationLabels
    undefined_mask: np.ndarray

    def __post_init__(self):
        b = _frozen(self.b_hat)
        c = _frozen(self.c_hat)
        d = _frozen(self.diff)
        mask = _frozen(self.undefined_mask, bool)
        n = b.shape[0]
        for name, a in (("b_hat", b), ("c_hat", c), ("diff", d), ("undefined_mask", mask)):
            if a.shape != (n, n):
                raise ContractError(f"{name} has shape {a.shape}, expected {(n, n)}")
        if self.labels.n != n:
            raise ContractError(f"{self.labels.n} labels for {n} individuals")
        ok = ~mask
        for name, a in (("b_hat", b), ("c_hat", c)):
            a0 = np.where(ok, a, 0.0)
            if np.max(np.abs(a0 - a0.T)) > TOL.symmetry:
                raise ContractError(f"{name} is not symmetric")
            if np.any(np.abs(a0) > 1 + TOL.correlation_range):
                raise ContractError(f"{name} has entries outside [-1, 1]")
            diag = np.diag(a)[~np.diag(mask)]
            if np.any(np.abs(diag - 1) > TOL.correlation_range):
                raise ContractError(f"{name} diagonal differs from 1")
        if np.any(np.abs(np.where(ok, d - (b - c), 0.0)) > 1e-12):
            raise ContractError("diff must equal b_hat - c_hat on defined entries")
        object.__setattr__(self, "b_hat", b)
        object.__setattr__(self, "c_hat", c)
        object.__setattr__(self, "diff", d)
        object.__setattr__(self, "undefined_mask", mask)

    @property
    def n(self) -> int:
        return self.b_hat.shape[0]


@dataclass(frozen=True, eq=False)
class LimitSpec:
    """Population quantities that determine the large-m limits of the correlations."""

    Q: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        Q = _frozen(np.atleast_2d(self.Q))
        mu = _frozen(np.atleast_1d(self.mu))
        S = _frozen(np.atleast_2d(self.Sigma))
        D = _frozen(np.atleast_1d(self.D))
        k, n = Q.shape
        if mu.shape != (k,) or S.shape != (k, k) or D.shape != (n,):
            raise ContractError("LimitSpec dimensions inconsistent with Q")
        if np.max(np.abs(S - S.T)) > TOL.psd:
            raise ContractError("Sigma must be symmetric")
        if np.linalg.eigvalsh(S).min() < -TOL.psd:
            raise ContractError("Sigma must be positive semi-definite")
        if np.any(D < 0):
            raise ContractError("D entries must be non-negative")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "D", D)

    @classmethod
    def from_prior(cls, Q, mu, Sigma) -> "LimitSpec":
        """Fill in ``D`` analytically: ``D_ii = 2 E[Pi_si (1 - Pi_si)]``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        mean = mu @ Q
        var = np.einsum("ki,kl,li->i", Q, Sigma, Q)
        return cls(Q, mu, Sigma, 2.0 * (mean - mean**2 - var))

    @property
    def n(self) -> int:
        return self.Q.shape[1]
