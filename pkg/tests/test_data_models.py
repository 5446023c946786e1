import numpy as np
import pytest
from pydantic import ValidationError

from data_models import (
    CertificateReport,
    LevelSupport,
    SamplingScheme,
    SolveResult,
    SparsityPattern,
    WaveletSpec,
    Weights,
    vector_to_pairs,
)
from exceptions import NotConverged


# --- Test Data Fixture ---
@pytest.fixture
def pattern() -> SparsityPattern:
    """Three levels [0,2), [2,5), [5,9) with budgets 1, 2, 3."""
    return SparsityPattern(s=(1, 2, 3), M=(0, 2, 5, 9))


def test_pattern_accessors(pattern):
    assert pattern.num_levels == 3
    assert pattern.n == 9
    assert pattern.width(1) == 3
    assert pattern.bounds(2) == (5, 9)
    assert str(pattern) == "s=[1, 2, 3], M=[0, 2, 5, 9]"


def test_pattern_is_frozen(pattern):
    with pytest.raises(ValidationError):
        pattern.s = (0, 0, 0)


def test_level_support_fits_pattern(pattern):
    support = LevelSupport(indices=(1, 2, 4, 5, 6, 8), pattern=pattern)
    assert len(support.indices) == 6


@pytest.mark.parametrize("indices", [(0, 1), (2, 1), (9,), (3, 3)])
def test_level_support_rejects_bad_indices(pattern, indices):
    with pytest.raises(ValidationError):
        LevelSupport(indices=indices, pattern=pattern)


def test_weights_must_be_at_least_one():
    assert len(Weights(values=[1.0, 2.0, 4.0])) == 3
    with pytest.raises(ValidationError):
        Weights(values=[1.0, 0.5])
    with pytest.raises(ValidationError):
        Weights(values=[np.inf])


def test_wavelet_spec_names():
    assert WaveletSpec(family="haar", levels=2).name == "haar"
    assert WaveletSpec(vanishing_moments=3, levels=2).name == "db3"
    with pytest.raises(ValidationError):
        WaveletSpec(family="haar", vanishing_moments=2, levels=1)


def test_sampling_scheme_validation():
    assert len(SamplingScheme(n=8, indices=(0, 3, 7))) == 3
    with pytest.raises(ValidationError):
        SamplingScheme(n=8, indices=(3, 0))
    with pytest.raises(ValidationError):
        SamplingScheme(n=8, indices=(8,))


def test_solve_result_diagnostics_and_convergence():
    # Arrange
    result = SolveResult(x=np.zeros(2), objective=0.0, feasibility_residual=0.0, iterations=5, converged=False,
                         status="max_iters")

    # Act
    diagnostics = result.diagnostics()

    # Assert
    assert "x" not in diagnostics
    assert diagnostics["iterations"] == 5
    with pytest.raises(NotConverged):
        result.raise_if_not_converged()


def test_certificate_report_json_and_pairs():
    # Arrange
    report = CertificateReport(kind="NSP_L2", method="randomized-search", value=0.5,
                               witness_vector=vector_to_pairs(np.array([1.0, 2j])))

    # Act
    text = report.json_str()

    # Assert
    assert report.witness_vector == [[1.0, 0.0], [0.0, 2.0]]
    assert CertificateReport.model_validate_json(text) == report
