"""Residual correlation diagnostics for PCA and admixture models of genotype data."""

from .config import BLOCK_SIZE, TOL
from .diagnostics import (
    block_summary,
    corrected_corr,
    empirical_corr,
    estimated_corr,
    homogeneity_bound_check,
    limit_oracle,
    residuals,
    sum_ratio,
)
from .estimators import (
    fit_pca1,
    fit_pca2,
    fit_pca3,
    gram_centered,
    gram_pca1,
    gram_standardized,
    heterozygosity_diag,
    project_from_pi,
    project_from_q,
    project_null,
    project_pca1,
    project_pca2,
    project_pca3,
)
from .model import (
    AdmixtureModel,
    ContractError,
    CorrelationReport,
    DegenerateInputError,
    EigenDecomposition,
    GenotypeMatrix,
    HeterozygosityDiag,
    IngestionError,
    LimitSpec,
    PopulationLabels,
    ProjectionMatrix,
)
from .pipeline import FitResult, fit_model
from .simulate import ScenarioSpec, scenario_spec, simulate
from .spectral import eig_sym, gram_schmidt_pivoted, projection_distance

__all__ = [name for name in dir() if not name.startswith("_")]
