"""Readers and writers for PLINK .bed/.bim/.fam, ADMIXTURE .Q/.P, TSV dumps and run manifests.

The .bed reader is streaming. :func:`iter_bed_blocks` decodes one block of
SNPs at a time so Gram statistics can be accumulated without holding the
whole genotype matrix.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .config import BLOCK_SIZE, FORMAT_VERSION
from .model import (
    MISSING,
    ContractError,
    GenotypeMatrix,
    IngestionError,
    PopulationLabels,
    validate_genotypes,
)

log = logging.getLogger(__name__)

BED_MAGIC = bytes([0x6C, 0x1B])
BED_SNP_MAJOR = 0x01

# 2-bit code -> allele count of A1; code 0b01 is missing
_CODE_TO_GENO = np.array([2, MISSING, 1, 0], dtype=np.int8)
_GENO_TO_CODE = np.array([3, 2, 0], dtype=np.uint8)
_BYTE_TABLE = np.array([[_CODE_TO_GENO[(b >> (2 * j)) & 3] for j in range(4)] for b in range(256)],
                       dtype=np.int8)


class AdmixtureInputWarning(UserWarning):
    """Admixture proportions outside the usual constraints (allowed, but flagged)."""


def _bed_paths(prefix) -> tuple[Path, Path, Path]:
    p = Path(prefix)
    if p.suffix in (".bed", ".bim", ".fam"):
        p = p.with_suffix("")
    return p.with_suffix(".bed"), p.with_suffix(".bim"), p.with_suffix(".fam")


def _read_columns(path: Path, ncol: int) -> list[list[str]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < ncol:
                raise IngestionError(f"{path}:{lineno}: expected {ncol} columns, found {len(parts)}")
            rows.append(parts)
    return rows


def read_bim(path) -> list[list[str]]:
    return _read_columns(Path(path), 6)


def _count_records(path: Path) -> int:
    with open(path) as fh:
        return sum(1 for line in fh if line.strip())


def _bim_ids(path: Path) -> list[str]:
    ids = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 6:
                raise IngestionError(f"{path}:{lineno}: expected 6 columns, found {len(parts)}")
            ids.append(parts[1])
    return ids


def read_fam(path) -> list[list[str]]:
    return _read_columns(Path(path), 6)


def read_bed_header(fh) -> None:
    header = fh.read(3)
    if len(header) < 3 or header[:2] != BED_MAGIC:
        raise IngestionError("not a PLINK .bed file (bad magic bytes)")
    if header[2] != BED_SNP_MAJOR:
        raise IngestionError(f"unsupported .bed mode 0x{header[2]:02x}; only SNP-major (0x01) is read")


def iter_bed_blocks(bed_path, m: int, n: int, block: int = BLOCK_SIZE) -> Iterator[np.ndarray]:
    """Yield int8 blocks of decoded genotypes (MISSING for no-call), SNP-major."""
    bed_path = Path(bed_path)
    bytes_per_snp = (n + 3) // 4
    expected = 3 + m * bytes_per_snp
    size = os.path.getsize(bed_path)
    if size != expected:
        raise IngestionError(
            f"{bed_path}: size {size} bytes, expected {expected} for {m} SNPs x {n} individuals")
    with open(bed_path, "rb") as fh:
        read_bed_header(fh)
        for start in range(0, m, block):
            rows = min(block, m - start)
            raw = np.frombuffer(fh.read(rows * bytes_per_snp), dtype=np.uint8)
            decoded = _BYTE_TABLE[raw].reshape(rows, bytes_per_snp * 4)
            yield decoded[:, :n]


def read_bed(prefix, policy: str = "drop_snp") -> GenotypeMatrix:
    """Load a PLINK fileset (``prefix.bed/.bim/.fam``) counting the A1 allele."""
    bed, bim, fam = _bed_paths(prefix)
    snp_ids = _bim_ids(bim)
    samples = read_fam(fam)
    m, n = len(snp_ids), len(samples)
    if m == 0:
        raise IngestionError(f"{bim}: no SNPs")
    if n == 0:
        raise IngestionError(f"{fam}: no individuals")
    kept_blocks, kept_ids, dropped = [], [], 0
    for b, blk in enumerate(iter_bed_blocks(bed, m, n)):
        offset = b * BLOCK_SIZE
        if policy == "reject":
            miss = np.argwhere(blk == MISSING)
            if miss.size:
                s, i = miss[0]
                raise IngestionError(f"missing genotype at (snp {offset + s + 1}, individual {i + 1})")
            keep = np.ones(blk.shape[0], dtype=bool)
        elif policy == "drop_snp":
            keep = ~(blk == MISSING).any(axis=1)
        else:
            raise ContractError(f"unknown missing-data policy {policy!r}")
        dropped += int((~keep).sum())
        kept_blocks.append(blk[keep].astype(np.uint8))
        kept_ids.extend(snp_ids[offset + j] for j in np.flatnonzero(keep))
    if dropped:
        log.info("dropped %d SNPs containing missing genotypes", dropped)
    data = np.concatenate(kept_blocks)
    if data.shape[0] == 0:
        raise IngestionError("every SNP contains a missing genotype")
    return GenotypeMatrix(data, snp_ids=kept_ids, sample_ids=[s[1] for s in samples])


def bed_blocks_complete(prefix) -> tuple[Iterator[np.ndarray], int]:
    """Stream blocks of complete SNPs from a fileset; returns (blocks, n)."""
    bed, bim, fam = _bed_paths(prefix)
    m, n = _count_records(bim), _count_records(fam)

    def gen():
        for blk in iter_bed_blocks(bed, m, n):
            keep = ~(blk == MISSING).any(axis=1)
            yield blk[keep].astype(np.uint8)

    return gen(), n


def write_bed(prefix, G: GenotypeMatrix) -> None:
    """Write ``prefix.bed/.bim/.fam``; placeholder map and pedigree columns are zero."""
    bed, bim, fam = _bed_paths(prefix)
    m, n = G.m, G.n
    bytes_per_snp = (n + 3) // 4
    with open(bed, "wb") as fh:
        fh.write(BED_MAGIC + bytes([BED_SNP_MAJOR]))
        for start in range(0, m, BLOCK_SIZE):
            codes = _GENO_TO_CODE[G.data[start:start + BLOCK_SIZE]]
            pad = np.zeros((codes.shape[0], bytes_per_snp * 4), dtype=np.uint8)
            pad[:, :n] = codes
            q = pad.reshape(codes.shape[0], bytes_per_snp, 4)
            packed = q[..., 0] | (q[..., 1] << 2) | (q[..., 2] << 4) | (q[..., 3] << 6)
            fh.write(packed.astype(np.uint8).tobytes())
    snp_ids = G.snp_ids or tuple(f"snp{s + 1}" for s in range(m))
    sample_ids = G.sample_ids or tuple(f"ind{i + 1}" for i in range(n))
    with open(bim, "w") as fh:
        for s, sid in enumerate(snp_ids):
            fh.write(f"1\t{sid}\t0\t{s + 1}\tA\tB\n")
    with open(fam, "w") as fh:
        for iid in sample_ids:
            fh.write(f"{iid}\t{iid}\t0\t0\t0\t-9\n")


def _read_real_table(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric token in {line.strip()!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise IngestionError(f"{path}:{lineno}: ragged row ({len(vals)} values, expected {width})")
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: empty table")
    return np.array(rows, dtype=np.float64)


def read_q(path) -> np.ndarray:
    """Read an ADMIXTURE .Q file (n rows of k' proportions) as a k' x n matrix.

    Entries outside [0, 1] or rows not summing to one only raise a warning,
    since unconstrained proportions are allowed.
    """
    table = _read_real_table(path)
    if np.any(table < 0) or np.any(table > 1):
        warnings.warn(f"{path}: proportions outside [0, 1]", AdmixtureInputWarning, stacklevel=2)
    sums = table.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        warnings.warn(f"{path}: {int(np.sum(np.abs(sums - 1) > 1e-3))} rows do not sum to one "
                      f"(range {sums.min():.4g} to {sums.max():.4g})", AdmixtureInputWarning, stacklevel=2)
    return table.T.copy()


def read_p(path) -> np.ndarray:
    """Read an ADMIXTURE .P file as an m x k' matrix."""
    return _read_real_table(path)


def write_q(path, Q) -> None:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    with open(path, "w") as fh:
        for col in Q.T:
            fh.write(" ".join(_fmt(x) for x in col) + "\n")


def write_p(path, F) -> None:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    with open(path, "w") as fh:
        for row in F:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


_MISSING_TOKENS = {"NA", "-1", ".", "-9"}


def read_tsv_genotypes(path, policy: str = "drop_snp") -> GenotypeMatrix:
    """One SNP per line, tab-separated allele counts; NA, ., -1 or -9 mark missing."""
    rows = []
    n = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if n is None:
                n = len(parts)
            elif len(parts) != n:
                raise IngestionError(f"{path}:{lineno}: row has {len(parts)} genotypes, expected {n}")
            row = []
            for tok in parts:
                tok = tok.strip()
                if tok in _MISSING_TOKENS:
                    row.append(MISSING)
                elif tok in ("0", "1", "2"):
                    row.append(int(tok))
                else:
                    raise IngestionError(f"{path}:{lineno}: invalid genotype {tok!r}")
            rows.append(row)
    if not rows:
        raise IngestionError(f"{path}: no SNPs")
    G, dropped = validate_genotypes(np.array(rows, dtype=np.int16), policy)
    if dropped:
        log.info("%s: dropped %d SNPs with missing genotypes", path, dropped)
    return G


def write_tsv_genotypes(path, G: GenotypeMatrix) -> None:
    with open(path, "w") as fh:
        for start in range(0, G.m, BLOCK_SIZE):
            blk = G.data[start:start + BLOCK_SIZE]
            fh.write("\n".join("\t".join(map(str, row)) for row in blk.tolist()))
            fh.write("\n")


def read_genotypes(path, policy: str = "drop_snp") -> GenotypeMatrix:
    """Dispatch on extension: PLINK fileset (.bed/.bim/.fam or bare prefix) or TSV."""
    p = Path(path)
    if p.suffix in (".bed", ".bim", ".fam") or (not p.exists() and p.with_suffix(".bed").exists()):
        return read_bed(p, policy)
    if not p.exists():
        raise IngestionError(f"{p}: no such file")
    return read_tsv_genotypes(p, policy)


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "NA"
    return f"{x:.10g}"


def write_matrix_tsv(path, M, row_ids: Optional[Sequence[str]] = None,
                     col_ids: Optional[Sequence[str]] = None) -> None:
    """Headered TSV; the first column holds row ids, NaN is written as NA."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows = list(row_ids) if row_ids is not None else [str(i + 1) for i in range(M.shape[0])]
    cols = list(col_ids) if col_ids is not None else [str(j + 1) for j in range(M.shape[1])]
    with open(path, "w") as fh:
        fh.write("id\t" + "\t".join(cols) + "\n")
        for rid, row in zip(rows, M):
            fh.write(rid + "\t" + "\t".join(_fmt(x) for x in row) + "\n")


def read_matrix_tsv(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty matrix file")
    cols = lines[0].split("\t")[1:]
    rows, vals = [], []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        if len(parts) != len(cols) + 1:
            raise IngestionError(f"{path}:{lineno}: expected {len(cols) + 1} fields, found {len(parts)}")
        rows.append(parts[0])
        try:
            vals.append([np.nan if x == "NA" else float(x) for x in parts[1:]])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: non-numeric value") from None
    return np.array(vals, dtype=float).reshape(len(rows), len(cols)), rows, cols


def write_block_summary(path, summary) -> None:
    """One row per (block_a, block_b, stat); undefined statistics are written as NA."""
    def cell(x):
        return "NA" if x is None else _fmt(x)

    with open(path, "w") as fh:
        fh.write("block_a\tblock_b\tstat\tmean\tsd\tcount\treference\n")
        for r in summary.rows:
            fh.write(f"{r.block_a}\t{r.block_b}\t{r.stat}\t{cell(r.mean)}\t{cell(r.sd)}\t"
                     f"{r.count}\t{cell(r.reference)}\n")


def read_block_summary(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            if not line.strip():
                continue
            rec = dict(zip(header, line.rstrip("\n").split("\t")))
            for key in ("mean", "sd", "reference"):
                rec[key] = None if rec[key] == "NA" else float(rec[key])
            rec["count"] = int(rec["count"])
            rows.append(rec)
    return rows


def write_labels(path, labels: PopulationLabels, sample_ids: Optional[Sequence[str]] = None) -> None:
    ids = list(sample_ids) if sample_ids is not None else [f"ind{i + 1}" for i in range(labels.n)]
    with open(path, "w") as fh:
        fh.write("sample\tpopulation\n")
        for sid, lab in zip(ids, labels.assignment):
            fh.write(f"{sid}\t{lab}\n")


def read_labels(path) -> tuple[PopulationLabels, list[str]]:
    """Read ``sample<TAB>population`` lines (header optional); block order is first appearance."""
    ids, labs = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and parts == ["sample", "population"]:
                continue
            if len(parts) == 1:
                ids.append(f"ind{len(ids) + 1}")
                labs.append(parts[0])
            elif len(parts) == 2:
                ids.append(parts[0])
                labs.append(parts[1])
            else:
                raise IngestionError(f"{path}:{lineno}: expected 'sample population', got {line.strip()!r}")
    if not labs:
        raise IngestionError(f"{path}: no labels")
    return PopulationLabels(tuple(labs)), ids


def write_manifest(path, record: dict) -> None:
    """Write a run manifest: one ``key<TAB>value`` line per key, values JSON-encoded, keys sorted."""
    record = dict(record)
    record.setdefault("format_version", FORMAT_VERSION)
    with open(path, "w") as fh:
        for key in sorted(record):
            if "\t" in key or "\n" in key:
                raise ContractError(f"manifest key {key!r} contains whitespace control characters")
            fh.write(f"{key}\t{json.dumps(record[key], sort_keys=True, allow_nan=False)}\n")


def read_manifest(path) -> dict:
    record = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                raise IngestionError(f"{path}:{lineno}: expected 'key<TAB>value'")
            try:
                record[key] = json.loads(value)
            except json.JSONDecodeError:
                raise IngestionError(f"{path}:{lineno}: malformed value for {key!r}") from None
    return record
