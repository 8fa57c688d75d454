import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from residcorr import io as rio
from residcorr.estimators import (
    EigenvalueConditionWarning,
    block_ranges,
    fit_pca1,
    gram_centered,
    gram_pca1,
    gram_standardized,
    gram_stats,
    gram_stats_from_blocks,
    heterozygosity_diag,
    project_from_pi,
    project_from_q,
    project_null,
    project_pca1,
    project_pca2,
    project_pca3,
    scaling_diag,
    tree_reduce,
)
from residcorr.model import ContractError, DegenerateInputError, GenotypeMatrix, LimitSpec, ProjectionMatrix
from residcorr.simulate import FrequencyPrior, admixture_q, sim_admixture
from residcorr.spectral import projection_distance


def exact_projector(Q):
    Q = np.atleast_2d(Q)
    return ProjectionMatrix(Q.T @ np.linalg.solve(Q @ Q.T, Q), Q.shape[0], "exact")


# ---------------------------------------------------------------- D hat

def test_het_diag_examples(rng):
    G = GenotypeMatrix(np.column_stack([np.ones(50), np.zeros(50), np.full(50, 2)]).astype(int))
    np.testing.assert_array_equal(heterozygosity_diag(G).d, [1.0, 0.0, 0.0])
    G = GenotypeMatrix(rng.binomial(2, 0.5, size=(100_000, 3)))
    np.testing.assert_allclose(heterozygosity_diag(G).d, 0.5, atol=0.01)


def test_lemma1_unbiased_het():
    """Monte-Carlo mean of D̂ matches 2E[Π(1-Π)] per individual."""
    Q = admixture_q((10, 10, 10), 2)
    prior = FrequencyPrior("uniform", 0.0, 1.0)
    k = Q.shape[0]
    D = LimitSpec.from_prior(Q, np.full(k, prior.mean), prior.var * np.eye(k)).D
    reps = np.array([heterozygosity_diag(sim_admixture(Q, prior, 2000, seed).genotypes).d
                     for seed in range(200)])
    se = reps.std(axis=0, ddof=1) / np.sqrt(len(reps))
    assert np.all(np.abs(reps.mean(axis=0) - D) <= 3 * se)


# ---------------------------------------------------------------- Gram estimates

def test_gram_pca1_single_individual():
    assert gram_pca1(GenotypeMatrix(np.full((20, 1), 2))).H[0, 0] == 4.0
    assert gram_pca1(GenotypeMatrix(np.ones((20, 1), dtype=int))).H[0, 0] == 0.0


def test_gram_pca1_one_population():
    data = sim_admixture(np.ones((1, 6)), FrequencyPrior("uniform", 0, 1), 100_000, 1)
    H = gram_pca1(data.genotypes).H
    np.testing.assert_allclose(H, 4 / 3, atol=0.02)


def test_lemma2_frobenius_bound():
    """Mean squared Frobenius error of Ĥ is at most 16 n² / m."""
    Q = admixture_q((4, 3, 3), 1)
    prior = FrequencyPrior("uniform", 0.0, 1.0)
    k, n = Q.shape
    H = 4 * Q.T @ (prior.var * np.eye(k) + prior.mean**2 * np.ones((k, k))) @ Q
    for m in (1_000, 10_000):
        errs = [np.sum((gram_pca1(sim_admixture(Q, prior, m, seed).genotypes).H - H) ** 2)
                for seed in range(100)]
        assert np.mean(errs) <= 16 * n**2 / m


def test_gram_centered_annihilates_ones(scen1):
    g = gram_centered(scen1.genotypes)
    assert g.kind == "centered"
    assert np.max(np.abs(g.H @ np.ones(g.H.shape[0]))) <= 1e-8 * np.linalg.norm(g.H)


def test_gram_kinds_validated():
    from residcorr.estimators import GramEstimate
    with pytest.raises(ContractError):
        GramEstimate(np.eye(2), "weird", 1)
    with pytest.raises(ContractError):
        GramEstimate(np.array([[1.0, 0.5], [0.0, 1.0]]), "pca1_adjusted", 1)
    with pytest.raises(ContractError):
        GramEstimate(np.eye(2), "centered", 1)


def test_standardized_drops_monomorphic(rng):
    data = rng.binomial(2, 0.4, size=(200, 8))
    data[17] = 2
    G = GenotypeMatrix(data)
    g = gram_standardized(G)
    assert g.m_used == 199
    assert np.all(np.isfinite(g.H))
    sd = scaling_diag(G)
    assert sd.m_prime == 199 and np.all(sd.w > 0) and 17 not in sd.kept_snps


def test_standardized_all_monomorphic():
    with pytest.raises(DegenerateInputError):
        gram_standardized(GenotypeMatrix(np.ones((5, 4), dtype=int)))


def test_streaming_equivalence(tmp_path, rng):
    """Gram statistics from the streamed .bed reader equal the in-memory ones bit for bit."""
    G = GenotypeMatrix(rng.integers(0, 3, size=(20_000, 13)))
    rio.write_bed(tmp_path / "g", G)
    blocks, n = rio.bed_blocks_complete(tmp_path / "g")
    streamed = gram_stats_from_blocks(blocks)
    whole = gram_stats(G)
    assert streamed.cross.tobytes() == whole.cross.tobytes()
    assert streamed.het.tobytes() == whole.het.tobytes()
    H1 = gram_pca1(G, streamed).H
    H2 = gram_pca1(G).H
    assert H1.tobytes() == H2.tobytes()


def test_tree_reduce_independent_of_grouping():
    parts = [np.full(3, float(i)) for i in range(11)]
    np.testing.assert_array_equal(tree_reduce(parts), np.full(3, 55.0))
    with pytest.raises(DegenerateInputError):
        tree_reduce([])
    assert block_ranges(10, 4) == [(0, 4), (4, 8), (8, 10)]


# ---------------------------------------------------------------- PCA projectors

def test_pca1_scenario1_converges(scen1):
    P = project_pca1(scen1.genotypes, 3)
    assert projection_distance(P, exact_projector(scen1.Q)) < 0.15


def test_pca1_full_rank_and_constant(rng):
    G = GenotypeMatrix(rng.integers(0, 3, size=(500, 5)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EigenvalueConditionWarning)
        np.testing.assert_allclose(project_pca1(G, 5).P, np.eye(5), atol=1e-10)
    P = project_pca1(GenotypeMatrix(np.full((30, 4), 2)), 1)
    np.testing.assert_allclose(P.P, np.full((4, 4), 0.25), atol=1e-12)


def test_pca_k_out_of_range(rng):
    G = GenotypeMatrix(rng.integers(0, 3, size=(50, 4)))
    for bad in (0, 5):
        with pytest.raises(ContractError):
            project_pca1(G, bad)
    with pytest.raises(ContractError):
        project_pca2(G, 1)
    with pytest.raises(ContractError):
        project_pca3(G, 1)


def test_eigen_condition_warning():
    G = GenotypeMatrix(np.full((30, 4), 2))
    with pytest.warns(EigenvalueConditionWarning):
        fit_pca1(G, 2)


def test_pca2_scenario2_converges(scen2):
    P = project_pca2(scen2.genotypes, 2)
    assert projection_distance(P, exact_projector(scen2.Q)) < 0.15
    assert P.contains_ones()


def test_pca3_close_to_pca2(scen2):
    d = projection_distance(project_pca3(scen2.genotypes, 2), project_pca2(scen2.genotypes, 2))
    assert d < 0.05


def test_pca2_one_population_contains_ones():
    # span is e plus one noise direction: the mean direction is always retained
    data = sim_admixture(np.ones((1, 12)), FrequencyPrior("uniform", 0, 1), 20_000, 4)
    P = project_pca2(data.genotypes, 2)
    assert P.contains_ones()
    assert projection_distance(P, project_null(12)) == pytest.approx(1.0, abs=1e-8)


def test_pca2_duplicate_individuals_treated_alike(scen1):
    data = np.asarray(scen1.genotypes.data)
    G = GenotypeMatrix(np.column_stack([data, data[:, 0]]))
    P = project_pca2(G, 3).P
    np.testing.assert_allclose(P[:, 0], P[:, -1], atol=1e-8)
    R = G.data.astype(float) @ (np.eye(G.n) - P)
    np.testing.assert_allclose(R[:, 0], R[:, -1], atol=1e-8)


def test_pca3_equals_pca2_for_unit_variance(rng):
    n = 10
    rows = []
    for _ in range(400):
        row = np.array([0] * 5 + [2] * 5)
        rows.append(rng.permutation(row))
    G = GenotypeMatrix(np.array(rows))
    assert np.allclose(scaling_diag(G).w, 1.0)
    d = projection_distance(project_pca3(G, 3), project_pca2(G, 3))
    assert d <= 1e-8


# ---------------------------------------------------------------- Q and Pi projectors

def test_from_q_examples(rng):
    np.testing.assert_allclose(project_from_q([[1, 1, 1]]).P, np.full((3, 3), 1 / 3), atol=1e-15)
    np.testing.assert_allclose(project_from_q([[1, 0, 0, 0], [0, 1, 0, 0]]).P,
                               np.diag([1.0, 1.0, 0.0, 0.0]), atol=1e-15)
    Q = rng.uniform(size=(2, 7))
    R = rng.normal(size=(2, 2))
    assert projection_distance(project_from_q(Q), project_from_q(R @ Q)) <= 1e-10


def test_from_q_rank_deficient():
    with pytest.raises(DegenerateInputError, match="rank 1"):
        project_from_q([[1, 1, 0], [2, 2, 0]])


def test_from_pi_matches_from_q(rng):
    Q = admixture_q((4, 4, 4), 1)
    F = rng.uniform(size=(300, 3))
    P = project_from_pi(F @ Q, 3)
    assert projection_distance(P, project_from_q(Q)) <= 1e-8


def test_from_pi_proportional_rows():
    v = np.array([0.1, 0.4, 0.2])
    P = project_from_pi(np.vstack([v, 2 * v]), 1)
    np.testing.assert_allclose(P.P, np.outer(v, v) / (v @ v), atol=1e-12)
    with pytest.raises(DegenerateInputError):
        project_from_pi(np.vstack([v, 2 * v]), 2)


def test_from_pi_row_subset_independence(rng):
    Q = rng.dirichlet(np.ones(3), size=9).T
    F = rng.uniform(size=(40, 3))
    Pi = F @ Q
    a = project_from_pi(Pi[:20], 3)
    b = project_from_pi(Pi[20:], 3)
    assert projection_distance(a, b) <= 1e-8


# ---------------------------------------------------------------- property suite

genotypes = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).integers(0, 3, size=(int(np.random.default_rng(s).integers(8, 60)),
                                                           int(np.random.default_rng(s + 1).integers(3, 9)))))


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(genotypes, st.data())
def test_estimators_return_valid_projectors(data, draw):
    G = GenotypeMatrix(data)
    n = G.n
    k = draw.draw(st.integers(2, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EigenvalueConditionWarning)
        outs = [project_pca1(G, k)]
        for f in (project_pca2, project_pca3):
            try:
                outs.append(f(G, k))
            except DegenerateInputError:
                pass
    rng = np.random.default_rng(k)
    Q = rng.uniform(size=(k, n))
    outs.append(project_from_q(Q))
    outs.append(project_from_pi(rng.uniform(size=(3 * k, k)) @ Q, k))
    for P in outs:
        M = P.P
        assert np.max(np.abs(M - M.T)) <= 1e-8
        assert np.max(np.abs(M @ M - M)) <= 1e-8
        assert abs(np.trace(M) - k) <= 1e-6
