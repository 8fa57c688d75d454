import numpy as np
import pytest

from residcorr.model import (
    MISSING,
    AdmixtureModel,
    ContractError,
    CorrelationReport,
    EigenDecomposition,
    GenotypeMatrix,
    HeterozygosityDiag,
    IngestionError,
    LimitSpec,
    PopulationLabels,
    ProjectionMatrix,
    validate_genotypes,
)


def test_genotype_matrix_basic():
    G = GenotypeMatrix([[0, 1], [2, 2]])
    assert (G.m, G.n) == (2, 2)
    assert G.data.dtype == np.uint8
    assert not G.data.flags.writeable


@pytest.mark.parametrize("bad", [[[0, 3]], [[-1, 0]], [[0.5, 1]], [], [[]], [1, 2]])
def test_genotype_matrix_rejects(bad):
    with pytest.raises(ContractError):
        GenotypeMatrix(bad)


def test_genotype_ids_must_match():
    with pytest.raises(ContractError):
        GenotypeMatrix([[0, 1]], snp_ids=["a", "b"])
    with pytest.raises(ContractError):
        GenotypeMatrix([[0, 1]], sample_ids=["a"])


def test_validate_no_missing_reject():
    G, dropped = validate_genotypes([[0, 1], [2, 2]], "reject")
    assert dropped == 0 and G.m == 2
    np.testing.assert_array_equal(G.data, [[0, 1], [2, 2]])


def test_validate_drop_snp():
    G, dropped = validate_genotypes([[0, MISSING], [2, 2]], "drop_snp")
    assert dropped == 1
    np.testing.assert_array_equal(G.data, [[2, 2]])


def test_validate_reject_names_location():
    with pytest.raises(IngestionError, match=r"snp 1, individual 2"):
        validate_genotypes([[0, MISSING], [2, 2]], "reject")


def test_validate_unknown_policy():
    with pytest.raises(ContractError):
        validate_genotypes([[0]], "impute")


def test_admixture_model_flags_and_rank():
    Q = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    F = np.array([[0.1, 0.9], [0.5, 0.2], [0.3, 0.3], [0.7, 0.6]])
    model = AdmixtureModel(Q, F)
    assert model.k == 2 and model.sums_to_one
    assert not AdmixtureModel(0.8 * Q, F).sums_to_one
    np.testing.assert_allclose(model.Pi, F @ Q)


def test_admixture_model_rejects():
    Q = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    F = np.array([[0.1, 0.9], [0.5, 0.2], [0.3, 0.3]])
    with pytest.raises(ContractError):
        AdmixtureModel(Q, np.array([[1.2, 0.0], [0.5, 0.2]]))
    with pytest.raises(ContractError):
        AdmixtureModel(np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]), F)  # rank(Q) = 1
    with pytest.raises(ContractError):
        AdmixtureModel(Q, np.array([[0.2, 0.2], [0.4, 0.4], [0.3, 0.3]]))  # rank(F) = 1
    with pytest.raises(ContractError):
        AdmixtureModel(np.array([[2.0, 0.0, 1.0], [0.0, 1.0, 0.5]]), np.array([[0.9, 0.9], [0.5, 0.2]]))


def test_projection_matrix_rejects():
    with pytest.raises(ContractError):
        ProjectionMatrix(np.array([[1.0, 0.1], [0.0, 0.0]]), 1, "exact")  # asymmetric
    with pytest.raises(ContractError):
        ProjectionMatrix(0.5 * np.eye(2), 1, "exact")  # not idempotent
    with pytest.raises(ContractError):
        ProjectionMatrix(np.eye(2), 1, "exact")  # trace
    with pytest.raises(ContractError):
        ProjectionMatrix(np.eye(2), 2, "svd")  # method
    P = ProjectionMatrix(np.full((4, 4), 0.25), 1, "exact")
    assert P.contains_ones()


def test_heterozygosity_rejects():
    with pytest.raises(ContractError):
        HeterozygosityDiag([0.2, 1.1])
    with pytest.raises(ContractError):
        HeterozygosityDiag([-0.1])
    assert HeterozygosityDiag([0.0, 1.0]).n == 2


def test_eigendecomposition_rejects():
    with pytest.raises(ContractError):
        EigenDecomposition([1.0, 2.0], np.eye(2))
    with pytest.raises(ContractError):
        EigenDecomposition([2.0, 1.0], np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        EigenDecomposition([2.0, 1.0], np.eye(3))


def test_population_labels():
    lab = PopulationLabels.from_sizes([2, 3], ["a", "b"])
    assert lab.n == 5 and lab.sizes() == {"a": 2, "b": 3}
    blocks = dict(lab.blocks())
    np.testing.assert_array_equal(blocks["b"], [2, 3, 4])
    with pytest.raises(ContractError):
        PopulationLabels(())
    with pytest.raises(ContractError):
        PopulationLabels(("a", "b"), order=("a",))
    with pytest.raises(ContractError):
        PopulationLabels.from_sizes([1, 2], ["x"])


def test_correlation_report_rejects():
    lab = PopulationLabels(("a", "a"))
    b = np.array([[1.0, -0.5], [-0.5, 1.0]])
    c = np.array([[1.0, -0.4], [-0.4, 1.0]])
    mask = np.zeros((2, 2), bool)
    CorrelationReport(b, c, b - c, lab, mask)
    with pytest.raises(ContractError):
        CorrelationReport(b, c, b + c, lab, mask)  # diff inconsistent
    with pytest.raises(ContractError):
        CorrelationReport(np.array([[1.0, -0.5], [-0.4, 1.0]]), c, c * 0, lab, mask)  # asymmetric
    with pytest.raises(ContractError):
        bad = np.array([[1.0, -1.5], [-1.5, 1.0]])
        CorrelationReport(bad, c, bad - c, lab, mask)  # out of range
    with pytest.raises(ContractError):
        bad = np.array([[0.9, -0.5], [-0.5, 1.0]])
        CorrelationReport(bad, c, bad - c, lab, mask)  # diagonal
    with pytest.raises(ContractError):
        CorrelationReport(b, c, b - c, PopulationLabels(("a",)), mask)


def test_limit_spec_rejects_and_from_prior():
    Q = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    spec = LimitSpec.from_prior(Q, [0.5, 0.5], np.eye(2) / 12)
    np.testing.assert_allclose(spec.D, [1 / 3, 1 / 3, 5 / 12])
    with pytest.raises(ContractError):
        LimitSpec(Q, [0.5, 0.5], np.array([[1.0, 0.5], [0.0, 1.0]]), [0.1] * 3)
    with pytest.raises(ContractError):
        LimitSpec(Q, [0.5, 0.5], -np.eye(2), [0.1] * 3)
    with pytest.raises(ContractError):
        LimitSpec(Q, [0.5, 0.5], np.eye(2), [0.1, -0.1, 0.1])
    with pytest.raises(ContractError):
        LimitSpec(Q, [0.5], np.eye(2), [0.1] * 3)


def test_types_are_immutable():
    G = GenotypeMatrix([[0, 1]])
    with pytest.raises(Exception):
        G.data[0, 0] = 2
    with pytest.raises(Exception):
        G.data = None
