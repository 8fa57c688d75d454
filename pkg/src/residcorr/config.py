"""Numerical tolerances and fixed constants shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    symmetry: float = 1e-8
    idempotency: float = 1e-8
    trace: float = 1e-6
    orthonormality: float = 1e-8
    reconstruction: float = 1e-8
    gram_symmetry: float = 1e-10
    centered_rowsum: float = 1e-8
    residual_rowsum: float = 1e-6
    variance_floor: float = 1e-12
    correlation_range: float = 1e-9
    psd: float = 1e-10
    gram_schmidt: float = 1e-10
    eigengap_warning: float = 1e-6
    fst_floor: float = 1e-12


TOL = Tolerances()

# SNPs per streaming block; fixed so that block-ordered reductions are
# independent of the number of worker threads.
BLOCK_SIZE = 8192

THREADS_ENV = "RESIDCORR_THREADS"

FORMAT_VERSION = 1
