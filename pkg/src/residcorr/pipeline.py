"""End-to-end fit: projection estimate, residual correlations, block summary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import (
    BlockSummary,
    block_summary,
    corrected_corr,
    empirical_corr,
    estimated_corr,
    residuals,
    sum_ratio,
)
from .estimators import (
    GramStats,
    PCAFit,
    fit_pca1,
    fit_pca2,
    fit_pca3,
    gram_stats,
    heterozygosity_diag,
    project_from_pi,
    project_from_q,
    project_null,
)
from .model import (
    ContractError,
    CorrelationReport,
    EigenDecomposition,
    GenotypeMatrix,
    HeterozygosityDiag,
    PopulationLabels,
    ProjectionMatrix,
)

METHODS = ("pca1", "pca2", "pca3", "pca-null", "from_q", "from_pi")


@dataclass(frozen=True, eq=False)
class FitResult:
    method: str
    k_prime: int
    projection: ProjectionMatrix
    heterozygosity: HeterozygosityDiag
    B_hat: np.ndarray
    C_hat: np.ndarray
    report: CorrelationReport
    summary: BlockSummary
    eigen: Optional[EigenDecomposition] = None
    m: int = 0

    @property
    def sum_ratio(self) -> float:
        return sum_ratio(self.B_hat)


def estimate_projection(G: GenotypeMatrix, method: str, k_prime: int, *,
                        Q_hat=None, Pi_hat=None, stats: Optional[GramStats] = None,
                        threads: Optional[int] = None) -> tuple[ProjectionMatrix, Optional[PCAFit]]:
    if method == "pca1":
        fit = fit_pca1(G, k_prime, stats)
    elif method == "pca2":
        fit = fit_pca2(G, k_prime, stats)
    elif method == "pca3":
        fit = fit_pca3(G, k_prime, threads)
    elif method == "pca-null":
        if k_prime != 1:
            raise ContractError("pca-null is the k' = 1 model; pass k' = 1")
        return project_null(G.n), None
    elif method == "from_q":
        if Q_hat is None:
            raise ContractError("from_q needs an admixture proportion matrix")
        Q_hat = np.atleast_2d(Q_hat)
        if Q_hat.shape[1] != G.n:
            raise ContractError(f"Q has {Q_hat.shape[1]} individuals, genotypes have {G.n}")
        if k_prime != Q_hat.shape[0]:
            raise ContractError(f"Q has {Q_hat.shape[0]} rows but k' = {k_prime}")
        return project_from_q(Q_hat), None
    elif method == "from_pi":
        if Pi_hat is None:
            raise ContractError("from_pi needs an allele-frequency matrix")
        if np.shape(Pi_hat)[1] != G.n:
            raise ContractError(f"Pi has {np.shape(Pi_hat)[1]} individuals, genotypes have {G.n}")
        return project_from_pi(Pi_hat, k_prime), None
    else:
        raise ContractError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return fit.projection, fit


def fit_model(G: GenotypeMatrix, method: str, k_prime: int,
              labels: Optional[PopulationLabels] = None, *, Q_hat=None, Pi_hat=None,
              threads: Optional[int] = None) -> FitResult:
    """Choose k', estimate the projector, and compare b̂ against ĉ."""
    if labels is None:
        labels = PopulationLabels(("all",) * G.n)
    if labels.n != G.n:
        raise ContractError(f"{labels.n} labels for {G.n} individuals")
    stats = gram_stats(G, threads)
    P, fit = estimate_projection(G, method, k_prime, Q_hat=Q_hat, Pi_hat=Pi_hat,
                                 stats=stats, threads=threads)
    D = heterozygosity_diag(G, stats)
    B, b = empirical_corr(residuals(G, P), threads)
    C, c = estimated_corr(P, D)
    report = corrected_corr(b, c, labels)
    return FitResult(method, k_prime, P, D, B, C, report, block_summary(report),
                     None if fit is None else fit.eigen, G.m)
