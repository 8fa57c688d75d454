import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residcorr.diagnostics import (
    ResidualMatrix,
    block_summary,
    corrected_corr,
    display_order,
    empirical_corr,
    empirical_cov_from_gram,
    estimated_corr,
    homogeneity_bound_check,
    limit_oracle,
    residuals,
    sum_ratio,
)
from residcorr.estimators import gram_stats, heterozygosity_diag, project_from_q, project_null
from residcorr.model import (
    ContractError,
    DegenerateInputError,
    GenotypeMatrix,
    HeterozygosityDiag,
    LimitSpec,
    PopulationLabels,
    ProjectionMatrix,
)
from residcorr.pipeline import fit_model
from residcorr.simulate import admixture_q, scenario_spec, simulate


def zero_proj(n):
    return ProjectionMatrix(np.zeros((n, n)), 0, "exact")


def block_means(summary, stat="b_hat"):
    return np.array(list(summary.within(stat).values()))


# ---------------------------------------------------------------- residuals

def test_residual_examples(rng):
    G = GenotypeMatrix(rng.integers(0, 3, size=(30, 4)))
    np.testing.assert_array_equal(residuals(G, zero_proj(4)).R, G.data)
    assert np.all(residuals(G, ProjectionMatrix(np.eye(4), 4, "exact")).R == 0)
    R = residuals(GenotypeMatrix([[0, 1, 2]]), project_null(3)).R
    np.testing.assert_allclose(R, [[-1, 0, 1]], atol=1e-15)


def test_residual_dimension_mismatch():
    with pytest.raises(ContractError):
        residuals(GenotypeMatrix([[0, 1, 2]]), project_null(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_residual_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    G = GenotypeMatrix(rng.integers(0, 3, size=(int(rng.integers(2, 40)), n)))
    Q = rng.dirichlet(np.ones(2), size=n).T  # columns sum to one, so e is in the span
    P = project_from_q(Q)
    assert P.contains_ones()
    assert residuals(G, P).max_row_sum() <= 1e-6


def test_streamed_residual_blocks_match_dense(scen1):
    P = project_from_q(scen1.Q)
    Rm = residuals(scen1.genotypes, P)
    dense = scen1.genotypes.data.astype(float) @ (np.eye(60) - P.P)
    np.testing.assert_allclose(np.vstack(list(Rm.blocks(5000))), dense, atol=1e-10)


# ---------------------------------------------------------------- correlations

def test_empirical_corr_signs(rng):
    x = rng.normal(size=200)
    R = ResidualMatrix.from_array(np.column_stack([x, x, -x, rng.normal(size=200)]))
    B, b = empirical_corr(R)
    assert b[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert b[0, 2] == pytest.approx(-1.0, abs=1e-12)
    np.testing.assert_allclose(B, np.cov(R.R, rowvar=False), atol=1e-12)
    np.testing.assert_array_equal(np.diag(b), 1.0)


def test_empirical_corr_masks_zero_variance(rng):
    R = ResidualMatrix.from_array(np.column_stack([rng.normal(size=50), np.zeros(50)]))
    _, b = empirical_corr(R)
    assert np.isnan(b[0, 1]) and np.isnan(b[1, 1])
    report = corrected_corr(b, b, PopulationLabels(("a", "a")))
    assert report.undefined_mask[0, 1]
    assert not np.isnan(report.diff).any()
    s = block_summary(report)
    assert s.within("b_hat")["a"] is None and s.get("a", "a", "b_hat").count == 0


def test_empirical_matches_gram_route(scen1):
    P = project_from_q(scen1.Q)
    B, _ = empirical_corr(residuals(scen1.genotypes, P))
    B2 = empirical_cov_from_gram(gram_stats(scen1.genotypes), P)
    np.testing.assert_allclose(B, B2, rtol=1e-9, atol=1e-9)


def test_estimated_corr_examples():
    d = np.array([0.2, 0.3, 0.4])
    C, c = estimated_corr(zero_proj(3), HeterozygosityDiag(d))
    np.testing.assert_allclose(C, np.diag(d))
    np.testing.assert_allclose(c, np.eye(3))
    n, dv = 5, 0.3
    C, c = estimated_corr(project_null(n), HeterozygosityDiag(np.full(n, dv)))
    np.testing.assert_allclose(C, dv * (np.eye(n) - 1 / n), atol=1e-15)
    off = c[~np.eye(n, dtype=bool)]
    np.testing.assert_allclose(off, -1 / (n - 1), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_estimated_corr_psd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    k = int(rng.integers(1, n + 1))
    P = project_from_q(rng.normal(size=(k, n)))
    C, _ = estimated_corr(P, HeterozygosityDiag(rng.uniform(size=n)))
    assert np.linalg.eigvalsh(C).min() >= -1e-8


def test_estimated_corr_scenario1(scen1, fit1):
    iu = np.triu_indices(20, 1)
    for _, idx in scen1.labels.blocks():
        vals = fit1.report.c_hat[np.ix_(idx, idx)][iu]
        assert abs(vals.mean() + 1 / 19) < 0.005


def test_corrected_corr_zero_when_equal(fit1):
    report = corrected_corr(fit1.report.b_hat, fit1.report.b_hat, fit1.report.labels)
    assert not report.diff.any()


# ---------------------------------------------------------------- Table 2 rows

def test_scenario1_table2(fit1):
    np.testing.assert_allclose(block_means(fit1.summary), -0.0526, atol=0.005)
    np.testing.assert_allclose(block_means(fit1.summary, "diff"), 0.0, atol=0.005)


def test_scenario1_wrong_k(scen1):
    res = fit_model(scen1.genotypes, "pca1", 2, scen1.labels)
    assert res.summary.max_abs_within_diff() > 0.01


def test_scenario1_unequal(scen1_unequal):
    res = fit_model(scen1_unequal.genotypes, "pca1", 3, scen1_unequal.labels)
    np.testing.assert_allclose(block_means(res.summary), [-0.1111, -0.0526, -0.0345], atol=0.005)


def test_scenario2_unequal(scen2_unequal):
    res = fit_model(scen2_unequal.genotypes, "pca2", 2, scen2_unequal.labels)
    np.testing.assert_allclose(block_means(res.summary), [-0.0701, -0.0228, -0.0304], atol=0.005)


def test_block_summary_constant_block():
    n = 4
    b = np.full((n, n), -0.2)
    np.fill_diagonal(b, 1.0)
    report = corrected_corr(b, b, PopulationLabels(("a",) * n))
    row = block_summary(report).get("a", "a", "b_hat")
    assert row.mean == pytest.approx(-0.2) and row.sd == pytest.approx(0.0, abs=1e-15)
    assert row.count == 6 and row.reference == pytest.approx(-1 / 3)


def test_block_summary_singleton_block():
    b = np.eye(3)
    report = corrected_corr(b, b, PopulationLabels(("a", "b", "b")))
    s = block_summary(report)
    assert s.within()["a"] is None and s.references()["a"] is None
    assert s.get("a", "b", "b_hat").count == 2


def test_display_order():
    lab = PopulationLabels(("x", "y", "x", "y"), order=("y", "x"))
    np.testing.assert_array_equal(display_order(lab), [1, 3, 0, 2])
    Q = np.array([[0.2, 0.0, 0.9, 0.0], [0.8, 1.0, 0.1, 1.0]])
    np.testing.assert_array_equal(display_order(lab, Q), [1, 3, 2, 0])


# ---------------------------------------------------------------- sum ratio

def test_sum_ratio_examples():
    n = 6
    assert sum_ratio(np.eye(n) - np.ones((n, n)) / n) == pytest.approx(-1.0, abs=1e-14)
    assert sum_ratio(np.eye(n)) == 0.0
    with pytest.raises(DegenerateInputError):
        sum_ratio(np.zeros((3, 3)))


def test_sum_ratio_scenario2(scen2):
    res = fit_model(scen2.genotypes, "pca2", 2, scen2.labels)
    assert abs(res.sum_ratio + 1) <= 0.01


# ---------------------------------------------------------------- limit oracle

def test_oracle_block_limit_exact():
    Q = admixture_q((20, 20, 20), 1)
    spec = LimitSpec.from_prior(Q, np.full(3, 0.5), np.eye(3) / 12)
    lim = limit_oracle(spec, project_from_q(Q))
    for blk in range(3):
        idx = np.arange(20 * blk, 20 * blk + 20)
        sub = lim.b_inf[np.ix_(idx, idx)][np.triu_indices(20, 1)]
        np.testing.assert_allclose(sub, -1 / 19, atol=1e-10)
    assert np.max(np.abs(lim.diff_inf)) <= 1e-10


def _oracle_block_means(sizes):
    Q = admixture_q(sizes, 2)
    spec = LimitSpec.from_prior(Q, np.full(2, 0.5), np.eye(2) / 12)
    lim = limit_oracle(spec, project_from_q(Q))
    labels = PopulationLabels.from_sizes(sizes)
    return block_means(block_summary(corrected_corr(lim.b_inf, lim.c_inf, labels))), spec


def test_oracle_scenario2_theory_rows():
    means, spec = _oracle_block_means((20, 20, 20))
    np.testing.assert_allclose(means, [-0.0420, -0.0193, -0.0420], atol=5e-5)
    np.testing.assert_allclose(spec.D, [1 / 3] * 20 + [5 / 12] * 20 + [1 / 3] * 20)
    means, _ = _oracle_block_means((10, 20, 30))
    np.testing.assert_allclose(means, [-0.0701, -0.0229, -0.0304], atol=5e-5)


def test_oracle_zero_projection(rng):
    Q = rng.dirichlet(np.ones(3), size=7).T
    Sigma = np.diag([0.1, 0.05, 0.02])
    spec = LimitSpec.from_prior(Q, [0.4, 0.5, 0.6], Sigma)
    lim = limit_oracle(spec, zero_proj(7))
    np.testing.assert_allclose(lim.B_inf, np.diag(spec.D) + 4 * Q.T @ Sigma @ Q, atol=1e-14)


def test_oracle_dimension_mismatch():
    spec = LimitSpec.from_prior(np.ones((1, 3)), [0.5], [[0.1]])
    with pytest.raises(ContractError):
        limit_oracle(spec, project_null(4))


def test_oracle_consistency_ladder():
    """With the exact projector, empirical diff block means shrink towards the zero limit."""
    inversions = 0
    for seed in (1, 2, 3):
        devs = []
        for m in (1_000, 10_000, 100_000):
            data = simulate(scenario_spec(1, m=m, seed=seed))
            res = fit_model(data.genotypes, "from_q", 3, data.labels, Q_hat=data.Q)
            means = block_means(res.summary, "diff")
            sds = np.array(list(res.summary.within_sd("diff").values()))
            if m >= 10_000:
                assert np.all(np.abs(means) <= 3 * sds)
            devs.append(np.max(np.abs(res.report.diff[np.triu_indices(60, 1)])))
        inversions += sum(devs[i + 1] > devs[i] for i in range(2))
    assert inversions <= 1


def test_wrong_k_signal_scenario2(scen2):
    good = fit_model(scen2.genotypes, "pca2", 2, scen2.labels)
    bad = fit_model(scen2.genotypes, "pca-null", 1, scen2.labels)
    assert np.max(np.abs(bad.report.diff)) > 10 * np.max(np.abs(good.report.diff))


# ---------------------------------------------------------------- homogeneity

def test_homogeneity_scenario1(fit1):
    chk = homogeneity_bound_check(fit1.report, "pop1")
    assert chk.passed
    assert chk.bound == pytest.approx(-1 / 19)
    assert abs(np.mean(fit1.summary.get("pop1", "pop1", "b_hat").mean) - chk.bound) < 0.005


def test_homogeneity_forced_violation():
    n = 50
    rng = np.random.default_rng(0)
    b = np.full((n, n), -0.1) + np.triu(rng.normal(0, 1e-4, (n, n)), 1)
    b = np.triu(b, 1) + np.triu(b, 1).T + np.eye(n)
    report = corrected_corr(b, b, PopulationLabels(("a",) * n))
    assert not homogeneity_bound_check(report, "a").passed
    with pytest.raises(ContractError):
        homogeneity_bound_check(report, "zzz")
