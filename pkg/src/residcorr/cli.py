"""Command-line interface: simulate data, fit a model, draw figures, replay a run.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as rio
from . import plotting
from .config import FORMAT_VERSION, TOL
from .estimators import EigenvalueConditionWarning, resolve_threads
from .model import (
    ContractError,
    DegenerateInputError,
    IngestionError,
    PopulationLabels,
)
from .pipeline import fit_model
from .simulate import FrequencyPrior, scenario_spec, simulate

log = logging.getLogger("residcorr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4

MANIFEST = "manifest.tsv"

_SIM_DEFAULTS = {"seed": 0, "out": ".", "format": "bed"}
_FIT_DEFAULTS = {"method": None, "policy": "drop_snp", "figures": False}

# substrings of ScenarioSpec errors and the flag responsible
_FLAG_HINTS = [
    ("sample size", "--sizes"), ("hybrid total", "--sizes"), ("Fst", "--fst"),
    ("MAF", "--maf"), ("seed", "--seed"), ("m must", "--m"), ("chain", "--chain-length"),
    ("tree", "--tree"), ("branch", "--tree"), ("weights", "--admix-weights"),
    ("backcross", "--backcross-depth"), ("scenario must", "--scenario"), ("prior", "--prior"),
]


class UsageError(Exception):
    """Bad flags or flag combinations."""


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="residcorr",
        description="Check the fit of PCA and admixture models through residual correlations.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $RESIDCORR_THREADS or all cores)")
    parser.add_argument("--config", default=None, help="JSON file of option defaults; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a scenario and write genotypes, truth, labels")
    sim.add_argument("--scenario", type=int, required=True, choices=range(1, 6), metavar="{1..5}")
    sim.add_argument("--m", type=int, help="SNP count before MAF filtering")
    sim.add_argument("--sizes", type=_int_list, help="per-population sample sizes, e.g. 20,20,20")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--maf", type=float, help="minor allele frequency threshold")
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--prior", type=FrequencyPrior.parse,
                     help="frequency prior: uniform(a,b) or beta(a,b)")
    sim.add_argument("--fst", type=float, help="Fst for scenario 3 chain or scenario 5 parents")
    sim.add_argument("--chain-length", type=int, help="scenario 3 number of demes")
    sim.add_argument("--tree", help="scenario 4 Newick tree with branch Fst lengths")
    sim.add_argument("--admix-weights", type=_float_list, help="scenario 4 weights ghost,source")
    sim.add_argument("--backcross-depth", type=int, help="scenario 5 number of backcross classes")
    sim.add_argument("--format", choices=("bed", "tsv"), help="genotype file format")

    fit = sub.add_parser("fit", help="estimate the projection and residual correlations")
    fit.add_argument("--geno", required=True, help=".bed fileset (prefix or .bed) or genotype TSV")
    fit.add_argument("--method", choices=("pca1", "pca2", "pca3", "pca-null"))
    fit.add_argument("--k", type=int, help="number of latent components k'")
    fit.add_argument("--labels", help="TSV of sample and population")
    fit.add_argument("--q", help="ADMIXTURE .Q file; projection from its row space")
    fit.add_argument("--pi", help="m x n individual allele frequency table")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--policy", choices=("drop_snp", "reject"), help="missing genotype handling")
    fit.add_argument("--figures", action="store_true", default=None, help="also render SVG figures")

    plot = sub.add_parser("plot", help="render a figure from a fit directory")
    plot.add_argument("kind", choices=("heatmap", "scatter", "scree"))
    plot.add_argument("--in", dest="indir", required=True, help="fit output directory")
    plot.add_argument("--out", required=True, help="SVG path")
    plot.add_argument("--components", type=_int_list, help="PC pair for scatter, e.g. 2,3")

    replay = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--out", help="write to this location instead of the recorded one")
    return parser


def _apply_config(args: argparse.Namespace, defaults: dict) -> None:
    """Fill unset options from --config, then from built-in defaults."""
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise IngestionError(f"config {args.config} must hold a JSON object")
        section = config.get(args.command, {})
        config = {**{k: v for k, v in config.items() if not isinstance(v, dict)}, **section}
    for key, value in config.items():
        key = key.replace("-", "_")
        if key == "threads" and args.threads is None:
            args.threads = int(value)
        elif hasattr(args, key) and getattr(args, key) is None:
            if key == "sizes":
                value = tuple(int(v) for v in value)
            elif key == "prior":
                value = FrequencyPrior.parse(value)
            setattr(args, key, value)
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _geno_files(path: str) -> list[Path]:
    p = Path(path)
    if p.suffix in (".bed", ".bim", ".fam") or (not p.exists() and p.with_suffix(".bed").exists()):
        return [p.with_suffix(s) for s in (".bed", ".bim", ".fam")]
    return [p]


def _manifest(command: str, argv: list[str], **extra) -> dict:
    from importlib.metadata import PackageNotFoundError, version
    try:
        ver = version("artifact")
    except PackageNotFoundError:
        ver = "unknown"
    return {"command": command, "argv": argv, "format_version": FORMAT_VERSION,
            "package_version": ver, **extra}


def cmd_simulate(args, argv) -> int:
    overrides = dict(m=args.m, sizes=args.sizes, seed=args.seed, maf=args.maf, prior=args.prior,
                     fst=args.fst, chain_length=args.chain_length, tree=args.tree,
                     admix_weights=args.admix_weights, backcross_depth=args.backcross_depth)
    try:
        spec = scenario_spec(args.scenario, **overrides)
    except ContractError as exc:
        flag = next((f for hint, f in _FLAG_HINTS if hint in str(exc)), "--scenario")
        raise UsageError(f"{flag}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(spec, resolve_threads(args.threads))
    G = data.genotypes
    sample_ids = [f"ind{i + 1}" for i in range(G.n)]
    snp_ids = [f"snp{s + 1}" for s in data.kept_snp_indices]
    from .model import GenotypeMatrix
    G = GenotypeMatrix(G.data, snp_ids=snp_ids, sample_ids=sample_ids)
    files = []
    if args.format == "bed":
        rio.write_bed(out / "geno", G)
        files += ["geno.bed", "geno.bim", "geno.fam"]
    else:
        rio.write_tsv_genotypes(out / "geno.tsv", G)
        files.append("geno.tsv")
    rio.write_labels(out / "labels.tsv", data.labels, sample_ids)
    files.append("labels.tsv")
    if data.Q is not None:
        rio.write_q(out / "truth.Q", data.Q)
        rio.write_p(out / "truth.P", data.F)
        files += ["truth.Q", "truth.P"]
    rec = _manifest("simulate", argv, spec=spec.as_dict(), m_kept=int(G.m), n=int(G.n),
                    outputs={f: _file_digest(out / f) for f in files})
    rio.write_manifest(out / MANIFEST, rec)
    log.info("wrote %d SNPs x %d individuals to %s", G.m, G.n, out)
    return EXIT_OK


def _load_labels(path: Optional[str], sample_ids, n: int) -> PopulationLabels:
    if path is None:
        return PopulationLabels(("all",) * n)
    labels, ids = rio.read_labels(path)
    if labels.n != n:
        raise IngestionError(f"{path}: {labels.n} labels for {n} individuals")
    if sample_ids is not None and ids != list(sample_ids):
        lookup = dict(zip(ids, labels.assignment))
        if set(lookup) != set(sample_ids):
            raise IngestionError(f"{path}: sample ids do not match the genotype file")
        return PopulationLabels(tuple(lookup[s] for s in sample_ids), labels.order)
    return labels


def cmd_fit(args, argv) -> int:
    sources = [name for name, v in (("--method", args.method), ("--q", args.q), ("--pi", args.pi))
               if v is not None]
    if len(sources) > 1:
        raise UsageError(f"choose one of --method, --q, --pi (got {' and '.join(sources)})")
    if not sources:
        raise UsageError("one of --method, --q or --pi is required")
    Q_hat = Pi_hat = None
    if args.q is not None:
        method = "from_q"
        Q_hat = rio.read_q(args.q)
        if args.k is None:
            args.k = Q_hat.shape[0]
    elif args.pi is not None:
        method = "from_pi"
        Pi_hat = rio.read_p(args.pi)
    else:
        method = args.method
        if method == "pca-null" and args.k is None:
            args.k = 1
    if args.k is None:
        raise UsageError("--k is required")
    if method in ("pca2", "pca3") and args.k < 2:
        raise UsageError(f"--k: {method} needs k' >= 2; use --method pca-null for k' = 1")
    if method == "pca-null" and args.k != 1:
        raise UsageError("--k: pca-null is the k' = 1 model")
    if args.k < 1:
        raise UsageError("--k must be positive")
    if Q_hat is not None and Q_hat.shape[0] != args.k:
        raise UsageError(f"--k {args.k} does not match the {Q_hat.shape[0]} columns of {args.q}")

    G = rio.read_genotypes(args.geno, args.policy)
    if not args.k <= G.n:
        raise UsageError(f"--k {args.k} exceeds the number of individuals {G.n}")
    sample_ids = list(G.sample_ids) if G.sample_ids else [f"ind{i + 1}" for i in range(G.n)]
    labels = _load_labels(args.labels, G.sample_ids, G.n)
    if Q_hat is not None and Q_hat.shape[1] != G.n:
        raise IngestionError(f"{args.q}: {Q_hat.shape[1]} rows for {G.n} individuals")
    if Pi_hat is not None and Pi_hat.shape != (G.m, G.n):
        raise IngestionError(f"{args.pi}: shape {Pi_hat.shape}, expected {(G.m, G.n)}")

    threads = resolve_threads(args.threads)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EigenvalueConditionWarning)
        res = fit_model(G, method, args.k, labels, Q_hat=Q_hat, Pi_hat=Pi_hat, threads=threads)
    notes = [str(w.message) for w in caught if issubclass(w.category, EigenvalueConditionWarning)]
    for msg in notes:
        log.warning("%s", msg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = res.report
    rio.write_matrix_tsv(out / "b_hat.tsv", rep.b_hat, sample_ids, sample_ids)
    rio.write_matrix_tsv(out / "c_hat.tsv", rep.c_hat, sample_ids, sample_ids)
    rio.write_matrix_tsv(out / "diff.tsv", rep.diff, sample_ids, sample_ids)
    rio.write_block_summary(out / "block_summary.tsv", res.summary)
    rio.write_matrix_tsv(out / "heterozygosity.tsv", res.heterozygosity.d[:, None], sample_ids, ["d_hat"])
    rio.write_labels(out / "labels.tsv", labels, sample_ids)
    files = ["b_hat.tsv", "c_hat.tsv", "diff.tsv", "block_summary.tsv", "heterozygosity.tsv",
             "labels.tsv"]
    if res.eigen is not None:
        ev = res.eigen.eigenvalues
        rio.write_matrix_tsv(out / "eigenvalues.tsv", ev[:, None],
                             [str(i + 1) for i in range(ev.size)], ["eigenvalue"])
        rio.write_matrix_tsv(out / "pcs.tsv", res.eigen.top(args.k), sample_ids,
                             [f"PC{j + 1}" for j in range(args.k)])
        files += ["eigenvalues.tsv", "pcs.tsv"]
    if args.figures:
        plotting.plot_heatmap(rep.b_hat, rep.diff, labels, out / "heatmap.svg")
        files.append("heatmap.svg")
        if res.eigen is not None:
            plotting.plot_scree(res.eigen.eigenvalues, method, out / "scree.svg")
            files.append("scree.svg")
            try:
                comps = plotting.default_components(method, args.k)
            except ContractError:
                comps = None
            if comps is not None:
                plotting.plot_scatter(res.eigen.top(args.k), labels, out / "scatter.svg", comps)
                files.append("scatter.svg")

    inputs = {str(p): _file_digest(p) for p in _geno_files(args.geno)}
    for extra in (args.labels, args.q, args.pi):
        if extra is not None:
            inputs[extra] = _file_digest(Path(extra))
    within = {name: {"b_hat": res.summary.get(name, name, "b_hat").mean,
                     "diff": res.summary.get(name, name, "diff").mean}
              for name in labels.order}
    rec = _manifest("fit", argv, method=method, k_prime=args.k, m=int(G.m), n=int(G.n),
                    sum_ratio=_finite(res.sum_ratio), max_abs_within_diff=res.summary.max_abs_within_diff(),
                    within_block_means=within, warnings=notes, inputs=inputs, tolerances=asdict(TOL),
                    outputs={f: _file_digest(out / f) for f in files})
    rio.write_manifest(out / MANIFEST, rec)
    for name in labels.order:
        b, d = within[name]["b_hat"], within[name]["diff"]
        print(f"{name}\tmean_b_hat={_show(b)}\tmean_diff={_show(d)}")
    return EXIT_OK


def _finite(x: float) -> Optional[float]:
    return None if not np.isfinite(x) else float(x)


def _show(x: Optional[float]) -> str:
    return "NA" if x is None else f"{x:.4f}"


def cmd_plot(args, argv) -> int:
    indir = Path(args.indir)
    need = {"heatmap": ["b_hat.tsv", "diff.tsv", "labels.tsv"],
            "scatter": ["pcs.tsv", "labels.tsv", MANIFEST],
            "scree": ["eigenvalues.tsv", MANIFEST]}[args.kind]
    missing = [f for f in need if not (indir / f).exists()]
    if missing:
        raise IngestionError(f"{indir}: missing {', '.join(missing)}")
    labels, _ = rio.read_labels(indir / "labels.tsv") if (indir / "labels.tsv").exists() else (None, None)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "heatmap":
        b, _, _ = rio.read_matrix_tsv(indir / "b_hat.tsv")
        d, _, _ = rio.read_matrix_tsv(indir / "diff.tsv")
        plotting.plot_heatmap(b, d, labels, args.out)
    else:
        fit_rec = rio.read_manifest(indir / MANIFEST)
        method = fit_rec.get("method", "")
        if args.kind == "scatter":
            pcs, _, _ = rio.read_matrix_tsv(indir / "pcs.tsv")
            comps = args.components
            if comps is None:
                comps = plotting.default_components(method, pcs.shape[1])
            elif len(comps) != 2:
                raise UsageError("--components takes two comma-separated indices")
            plotting.plot_scatter(pcs, labels, args.out, tuple(comps))
        else:
            ev, _, _ = rio.read_matrix_tsv(indir / "eigenvalues.tsv")
            plotting.plot_scree(ev[:, 0], method, args.out)
    rio.write_manifest(Path(str(args.out) + ".manifest.tsv"),
                       _manifest("plot", argv, outputs={Path(args.out).name: _file_digest(Path(args.out))}))
    return EXIT_OK


def _replace_out(argv: list[str], out: str) -> list[str]:
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if tok.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


def cmd_replay(args, argv) -> int:
    rec = rio.read_manifest(args.manifest)
    recorded = rec.get("argv")
    if not isinstance(recorded, list) or not recorded:
        raise IngestionError(f"{args.manifest}: no recorded command line")
    if "replay" in recorded:
        raise IngestionError(f"{args.manifest}: refusing to replay a replay")
    if args.out is not None:
        recorded = _replace_out(recorded, args.out)
    log.info("replaying: residcorr %s", " ".join(recorded))
    return run(recorded)


def _recorded_argv(args, argv: Sequence[str]) -> list[str]:
    """Sub-command and its flags, plus any config file; the thread count never affects outputs."""
    argv = list(argv)
    cmd_at = argv.index(args.command)
    prefix = ["--config", args.config] if args.config else []
    return prefix + argv[cmd_at:]


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": (cmd_simulate, _SIM_DEFAULTS), "fit": (cmd_fit, _FIT_DEFAULTS),
                "plot": (cmd_plot, {}), "replay": (cmd_replay, {})}
    func, defaults = handlers[args.command]
    try:
        _apply_config(args, defaults)
        recorded = _recorded_argv(args, argv)
        return func(args, recorded)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"residcorr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractError as exc:
        print(f"residcorr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, OSError) as exc:
        print(f"residcorr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateInputError as exc:
        print(f"residcorr: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
