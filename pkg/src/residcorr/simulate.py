"""Genotype simulation for the five benchmark scenarios.

Randomness comes from numpy's counter-based Philox generator. The key is the
user seed and the counter's high word is the index of the SNP block being
generated, so each block of ``BLOCK_SIZE`` SNPs has its own independent
stream and the output does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import BLOCK_SIZE, TOL
from .estimators import block_ranges, map_blocks
from .model import (
    AdmixtureModel,
    ContractError,
    DegenerateInputError,
    GenotypeMatrix,
    LimitSpec,
    PopulationLabels,
)

log = logging.getLogger(__name__)

DEFAULT_TREE = "(((pop1:0.1,popGhost:0.2):0.05,pop2:0.3):0.1,pop3:0.5)"


def block_rng(seed: int, block: int) -> np.random.Generator:
    if seed < 0:
        raise ContractError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=block << 192))


@dataclass(frozen=True)
class FrequencyPrior:
    """Distribution of ancestral allele frequencies: ``uniform(a, b)`` or ``beta(a, b)``."""

    kind: str = "uniform"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind == "uniform":
            if not 0.0 <= self.a <= self.b <= 1.0:
                raise ContractError(f"uniform bounds must satisfy 0 <= a <= b <= 1, got ({self.a}, {self.b})")
        elif self.kind == "beta":
            if self.a <= 0 or self.b <= 0:
                raise ContractError("beta shape parameters must be positive")
        else:
            raise ContractError(f"unknown prior kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return rng.beta(self.a, self.b, size)

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return self.a / (self.a + self.b)

    @property
    def var(self) -> float:
        if self.kind == "uniform":
            return (self.b - self.a) ** 2 / 12.0
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1.0))

    def describe(self) -> str:
        return f"{self.kind}({self.a:g},{self.b:g})"

    @classmethod
    def parse(cls, text: str) -> "FrequencyPrior":
        match = re.fullmatch(r"\s*(uniform|beta)\(\s*([^,]+),\s*([^)]+)\)\s*", text)
        if not match:
            raise ContractError(f"cannot parse prior {text!r}; use uniform(a,b) or beta(a,b)")
        return cls(match.group(1), float(match.group(2)), float(match.group(3)))


# ---------------------------------------------------------------- trees

@dataclass
class TreeNode:
    name: Optional[str]
    length: float
    children: list = field(default_factory=list)


def parse_newick(text: str) -> TreeNode:
    """Parse a Newick string with branch lengths, e.g. ``((a:0.1,b:0.2):0.05,c:0.3)``."""
    text = text.strip().rstrip(";")
    pos = 0

    def node() -> TreeNode:
        nonlocal pos
        children = []
        if pos < len(text) and text[pos] == "(":
            pos += 1
            children.append(node())
            while text[pos] == ",":
                pos += 1
                children.append(node())
            if text[pos] != ")":
                raise ContractError(f"malformed tree at position {pos}")
            pos += 1
        m = re.compile(r"([A-Za-z_][\w]*)?(?::([0-9.eE+-]+))?").match(text, pos)
        pos = m.end()
        return TreeNode(m.group(1), float(m.group(2)) if m.group(2) else 0.0, children)

    try:
        root = node()
    except IndexError:
        raise ContractError(f"malformed tree {text!r}") from None
    if pos != len(text):
        raise ContractError(f"trailing characters in tree {text!r}")
    return root


def tree_leaves(root: TreeNode) -> list[str]:
    if not root.children:
        return [root.name]
    return [leaf for c in root.children for leaf in tree_leaves(c)]


def _tree_frequencies(root: TreeNode, anc: np.ndarray, rng) -> dict[str, np.ndarray]:
    out = {}

    def walk(nd: TreeNode, freq: np.ndarray):
        if nd.length > 0:
            freq = balding_nichols(freq, nd.length, rng)
        if not nd.children:
            out[nd.name] = freq
        for c in nd.children:
            walk(c, freq)

    walk(root, anc)
    return out


# ---------------------------------------------------------------- spec

SCENARIO_NAMES = {
    1: "unadmixed",
    2: "admixed",
    3: "spatial chain",
    4: "ghost admixture",
    5: "recent hybrids",
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    m: int
    sizes: tuple
    prior: FrequencyPrior
    seed: int = 0
    maf: float = 0.0
    fst: float = 0.001
    chain_length: int = 100
    tree: str = DEFAULT_TREE
    ghost: str = "popGhost"
    admix_source: str = "pop2"
    admix_weights: tuple = (0.3, 0.7)
    backcross_depth: int = 4

    def __post_init__(self):
        if self.scenario not in SCENARIO_NAMES:
            raise ContractError(f"scenario must be one of 1..5, got {self.scenario}")
        if self.m < 1:
            raise ContractError("m must be positive")
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ContractError("sample sizes must be positive")
        object.__setattr__(self, "sizes", sizes)
        if not 0.0 < self.fst < 1.0:
            raise ContractError(f"Fst must lie in (0, 1), got {self.fst}")
        if not 0.0 <= self.maf < 0.5:
            raise ContractError(f"MAF threshold must lie in [0, 0.5), got {self.maf}")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")
        expected = {1: 3, 2: 3, 3: 1, 4: 4, 5: 3 + self.backcross_depth}
        want = expected[self.scenario]
        if len(sizes) != want:
            raise ContractError(f"scenario {self.scenario} needs {want} sample sizes, got {len(sizes)}")
        if self.scenario == 3 and self.chain_length < 1:
            raise ContractError("chain length must be positive")
        if self.scenario == 4:
            w = tuple(float(x) for x in self.admix_weights)
            if len(w) != 2 or min(w) < 0 or abs(sum(w) - 1) > 1e-12:
                raise ContractError("admixture weights must be two non-negative numbers summing to 1")
            object.__setattr__(self, "admix_weights", w)
            leaves = tree_leaves(parse_newick(self.tree))
            for name in (self.ghost, self.admix_source):
                if name not in leaves:
                    raise ContractError(f"tree has no leaf named {name!r}")
            for nd in _walk_nodes(parse_newick(self.tree)):
                if not 0.0 <= nd.length < 1.0:
                    raise ContractError(f"branch Fst must lie in (0, 1), got {nd.length}")
        if self.scenario == 5 and self.backcross_depth < 0:
            raise ContractError("backcross depth must be non-negative")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario, "m": self.m, "sizes": list(self.sizes),
            "prior": self.prior.describe(), "seed": self.seed, "maf": self.maf,
            "fst": self.fst, "chain_length": self.chain_length, "tree": self.tree,
            "ghost": self.ghost, "admix_source": self.admix_source,
            "admix_weights": list(self.admix_weights), "backcross_depth": self.backcross_depth,
        }


def _walk_nodes(root: TreeNode):
    yield root
    for c in root.children:
        yield from _walk_nodes(c)


_PRESETS = {
    1: dict(m=50_000, sizes=(20, 20, 20), prior=FrequencyPrior("uniform", 0.0, 1.0)),
    2: dict(m=50_000, sizes=(20, 20, 20), prior=FrequencyPrior("uniform", 0.0, 1.0)),
    3: dict(m=100_000, sizes=(500,), prior=FrequencyPrior("uniform", 0.01, 0.99), maf=0.05,
            fst=0.001, chain_length=100),
    4: dict(m=1_000_000, sizes=(50, 50, 50, 50), prior=FrequencyPrior("beta", 0.3, 0.3), maf=0.05),
    5: dict(m=50_000, sizes=(20, 20, 10, 10, 10, 10, 10), prior=FrequencyPrior("uniform", 0.05, 0.95),
            fst=0.3),
}


def scenario_spec(scenario: int, **overrides) -> ScenarioSpec:
    """Preset parameters for a scenario with any field overridden.

    For scenario 5 a three-entry ``sizes`` (two parental samples and the
    hybrid total) is split evenly over the F1 and backcross classes.
    """
    if scenario not in _PRESETS:
        raise ContractError(f"scenario must be one of 1..5, got {scenario}")
    params = dict(_PRESETS[scenario])
    params.update({k: v for k, v in overrides.items() if v is not None})
    if scenario == 5:
        depth = params.get("backcross_depth", 4)
        sizes = tuple(params["sizes"])
        if len(sizes) == 3:
            classes = depth + 1
            if sizes[2] % classes:
                raise ContractError(f"hybrid total {sizes[2]} not divisible into {classes} classes")
            params["sizes"] = sizes[:2] + (sizes[2] // classes,) * classes
    return ScenarioSpec(scenario=scenario, **params)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    genotypes: GenotypeMatrix
    labels: PopulationLabels
    spec: Optional[ScenarioSpec] = None
    Q: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    kept_snp_indices: Optional[np.ndarray] = None

    @property
    def truth(self) -> Optional[AdmixtureModel]:
        """The generating admixture model (pre-filter F), or None when the scenario has none."""
        if self.Q is None or self.F is None:
            return None
        return AdmixtureModel(self.Q, self.F)

    def limit_spec(self) -> LimitSpec:
        """Analytic moments for scenarios whose population frequencies are iid draws from the prior."""
        if self.Q is None or self.spec is None or self.spec.scenario not in (1, 2):
            raise ContractError("analytic limits are available for scenarios 1 and 2 only")
        k = self.Q.shape[0]
        prior = self.spec.prior
        return LimitSpec.from_prior(self.Q, np.full(k, prior.mean), prior.var * np.eye(k))


def balding_nichols(p, fst: float, rng: np.random.Generator):
    """Draw a drifted frequency from Beta(p(1-F)/F, (1-p)(1-F)/F).

    Frequencies of exactly 0 or 1 are absorbing and ``fst`` at or below the
    floor returns ``p`` unchanged. Accepts scalars or arrays.
    """
    if not 0.0 <= fst < 1.0:
        raise ContractError(f"Fst must lie in [0, 1), got {fst}")
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ContractError("frequencies must lie in [0, 1]")
    if fst <= TOL.fst_floor:
        return p_arr.copy() if p_arr.ndim else float(p_arr)
    scale = (1.0 - fst) / fst
    interior = (p_arr > 0) & (p_arr < 1)
    q = np.where(interior, p_arr, 0.5)
    draw = rng.beta(q * scale, (1.0 - q) * scale)
    out = np.where(interior, draw, p_arr)
    return out if p_arr.ndim else float(out)


def maf_filter(G: GenotypeMatrix, threshold: float) -> tuple[GenotypeMatrix, np.ndarray]:
    """Keep SNPs whose sample minor allele frequency is at least ``threshold``."""
    if not 0.0 <= threshold < 0.5:
        raise ContractError(f"MAF threshold must lie in [0, 0.5), got {threshold}")
    p = G.data.sum(axis=1, dtype=np.int64) / (2.0 * G.n)
    kept = np.flatnonzero(np.minimum(p, 1.0 - p) >= threshold)
    if kept.size == 0:
        raise DegenerateInputError(f"MAF filter at {threshold} removed every SNP")
    if kept.size == G.m:
        return G, kept
    return G.subset_snps(kept), kept


def _generate(m: int, seed: int, block_fn, threads: Optional[int]):
    ranges = block_ranges(m, BLOCK_SIZE)

    def run(item):
        b, (s, e) = item
        return block_fn(block_rng(seed, b), e - s)

    parts = list(map_blocks(run, list(enumerate(ranges)), threads))
    F = np.concatenate([p[0] for p in parts]) if parts[0][0] is not None else None
    G = np.concatenate([p[1] for p in parts])
    return F, G


def _finish(G: np.ndarray, labels, spec, Q, F, maf: float) -> SimulatedDataset:
    geno = GenotypeMatrix(G)
    kept = np.arange(geno.m)
    if maf > 0:
        geno, kept = maf_filter(geno, maf)
        log.info("MAF filter %.3g kept %d of %d SNPs", maf, kept.size, G.shape[0])
    return SimulatedDataset(geno, labels, spec, Q, F, kept)


def admixture_q(sizes: Sequence[int], scenario: int) -> np.ndarray:
    """Admixture proportions of scenario 1 (unadmixed blocks) or 2 (two sources, 50/50 middle block)."""
    n = sum(sizes)
    if scenario == 1:
        Q = np.zeros((len(sizes), n))
        start = 0
        for j, s in enumerate(sizes):
            Q[j, start:start + s] = 1.0
            start += s
        return Q
    if scenario == 2:
        n1, n2, _ = sizes
        Q = np.zeros((2, n))
        Q[0, :n1] = 1.0
        Q[:, n1:n1 + n2] = 0.5
        Q[1, n1 + n2:] = 1.0
        return Q
    raise ContractError(f"no fixed Q for scenario {scenario}")


def sim_admixture(Q, prior: FrequencyPrior, m: int, seed: int,
                  labels: Optional[PopulationLabels] = None, maf: float = 0.0,
                  spec: Optional[ScenarioSpec] = None,
                  threads: Optional[int] = None) -> SimulatedDataset:
    """F rows iid from ``prior``, Π = FQ, G ~ Binomial(2, Π) independently."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    k, n = Q.shape
    lo, hi = (prior.a, prior.b) if prior.kind == "uniform" else (0.0, 1.0)
    # extreme values of FQ over F in [lo, hi]^k
    pi_max = (np.clip(Q, 0, None) * hi + np.clip(Q, None, 0) * lo).sum(axis=0)
    pi_min = (np.clip(Q, 0, None) * lo + np.clip(Q, None, 0) * hi).sum(axis=0)
    if pi_min.min() < -1e-12 or pi_max.max() > 1 + 1e-12:
        raise ContractError("Q and the prior allow Pi = FQ outside [0, 1]")

    def block(rng, size):
        F = prior.sample(rng, (size, k))
        Pi = np.clip(F @ Q, 0.0, 1.0)
        return F, rng.binomial(2, Pi).astype(np.uint8)

    F, G = _generate(m, seed, block, threads)
    if labels is None:
        labels = PopulationLabels(("all",) * n)
    return _finish(G, labels, spec, Q, F, maf)


def sim_spatial_chain(spec: ScenarioSpec, threads: Optional[int] = None) -> SimulatedDataset:
    """Populations along a line, each drifted from its inner neighbour by ``spec.fst``.

    The middle population draws from the prior; individuals are assigned to
    contiguous, evenly sized groups of chain positions.
    """
    L = spec.chain_length
    n = spec.n
    if n < L:
        raise ContractError(f"need at least one individual per chain position ({n} < {L})")
    centre = L // 2
    position = (np.arange(n) * L) // n
    onehot = np.zeros((L, n))
    onehot[position, np.arange(n)] = 1.0

    def block(rng, size):
        freq = np.empty((size, L))
        freq[:, centre:centre + 1] = spec.prior.sample(rng, (size, 1))
        for j in range(centre + 1, L):
            freq[:, j] = balding_nichols(freq[:, j - 1], spec.fst, rng)
        for j in range(centre - 1, -1, -1):
            freq[:, j] = balding_nichols(freq[:, j + 1], spec.fst, rng)
        Pi = freq @ onehot
        return None, rng.binomial(2, Pi).astype(np.uint8)

    _, G = _generate(spec.m, spec.seed, block, threads)
    width = len(str(L))
    labels = PopulationLabels(tuple(f"pos{p + 1:0{width}d}" for p in position))
    return _finish(G, labels, spec, None, None, spec.maf)


def sim_tree_ghost(spec: ScenarioSpec, threads: Optional[int] = None) -> SimulatedDataset:
    """Tree-structured drift with an admixed sample drawing on an unsampled ghost.

    Sampled populations are the tree leaves other than the ghost, in leaf
    order, followed by the admixed population. ``Q`` is over the sampled
    leaves plus the ghost as the last row.
    """
    root = parse_newick(spec.tree)
    leaves = [x for x in tree_leaves(root) if x != spec.ghost]
    sources = leaves + [spec.ghost]
    k = len(sources)
    if len(spec.sizes) != len(leaves) + 1:
        raise ContractError(f"tree has {len(leaves)} sampled leaves; sizes must list {len(leaves) + 1}")
    w_ghost, w_source = spec.admix_weights
    sizes = spec.sizes
    n = sum(sizes)
    Q = np.zeros((k, n))
    start = 0
    for j, s in enumerate(sizes[:-1]):
        Q[j, start:start + s] = 1.0
        start += s
    Q[sources.index(spec.admix_source), start:] = w_source
    Q[k - 1, start:] = w_ghost

    def block(rng, size):
        anc = spec.prior.sample(rng, size)
        freqs = _tree_frequencies(root, anc, rng)
        F = np.column_stack([freqs[name] for name in sources])
        Pi = np.clip(F @ Q, 0.0, 1.0)
        return F, rng.binomial(2, Pi).astype(np.uint8)

    F, G = _generate(spec.m, spec.seed, block, threads)
    names = leaves + [f"pop{len(leaves) + 1}"]
    labels = PopulationLabels.from_sizes(sizes, names)
    return _finish(G, labels, spec, Q, F, spec.maf)


def sim_backcross(spec: ScenarioSpec, threads: Optional[int] = None) -> SimulatedDataset:
    """Two parental samples, F1 hybrids and backcrosses into the first parent.

    The pedigree has a single founder from population 2; every other founder
    is a fresh unadmixed individual from population 1. Each sampled hybrid
    descends from its own F1 ancestor, a child of that shared founder, and
    then mates with population-1 individuals once per backcross generation.
    At every locus a parent transmits one of its two alleles with probability
    1/2, independently across loci.
    """
    depth = spec.backcross_depth
    sizes = spec.sizes
    n1, n2 = sizes[0], sizes[1]
    hybrid = sizes[2:]

    def block(rng, size):
        anc = spec.prior.sample(rng, size)
        f1 = balding_nichols(anc, spec.fst, rng)
        f2 = balding_nichols(anc, spec.fst, rng)
        cols = [rng.binomial(2, np.repeat(f1[:, None], n1, axis=1)),
                rng.binomial(2, np.repeat(f2[:, None], n2, axis=1))]
        founder = rng.random((size, 2)) < f2[:, None]
        for gen, count in enumerate(hybrid):
            p1 = np.repeat(f1[:, None], count, axis=1)
            hap_a = rng.random((size, count)) < p1
            hap_b = np.where(rng.random((size, count)) < 0.5, founder[:, :1], founder[:, 1:])
            for _ in range(gen):
                passed = np.where(rng.random((size, count)) < 0.5, hap_a, hap_b)
                hap_a = rng.random((size, count)) < p1
                hap_b = passed
            cols.append(hap_a.astype(np.int64) + hap_b)
        return None, np.concatenate(cols, axis=1).astype(np.uint8)

    _, G = _generate(spec.m, spec.seed, block, threads)
    names = ["pop1", "pop2", "F1"] + [f"BC{i}" for i in range(1, depth + 1)]
    labels = PopulationLabels.from_sizes(sizes, names[:len(sizes)])
    return _finish(G, labels, spec, None, None, spec.maf)


def simulate(spec: ScenarioSpec, threads: Optional[int] = None) -> SimulatedDataset:
    """Dispatch a scenario specification to its generator."""
    if spec.scenario in (1, 2):
        Q = admixture_q(spec.sizes, spec.scenario)
        names = None if spec.scenario == 1 else ["pop1", "admixed", "pop3"]
        labels = PopulationLabels.from_sizes(spec.sizes, names)
        return sim_admixture(Q, spec.prior, spec.m, spec.seed, labels, spec.maf, spec, threads)
    if spec.scenario == 3:
        return sim_spatial_chain(spec, threads)
    if spec.scenario == 4:
        return sim_tree_ghost(spec, threads)
    return sim_backcross(spec, threads)


def with_overrides(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    return replace(spec, **{k: v for k, v in changes.items() if v is not None})
