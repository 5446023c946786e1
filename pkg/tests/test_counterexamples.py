import json
import math

import numpy as np
import pytest

from certify import nsp_falsify
from counterexamples import (
    VerifyContext,
    construct_eta_dependence,
    construct_l2_sharpness,
    construct_l_dependence,
    get_counterexamples,
    householder_basis,
    omega_count,
    sharpness_ratio,
    sharpness_sweep,
    verify,
)
from exceptions import ParameterInfeasible, ParameterOrder, UnknownCounterexample
from sparsity import ratio_constant


@pytest.fixture
def context():
    return VerifyContext(nsp_trials=2000, seed=0)


def assert_verified(report):
    assert report.passed, [f"{r.name}: {r.message or r.evidence}" for r in report.failures]


def test_householder_basis_extends_unit_vector():
    # Arrange
    x = np.random.default_rng(0).standard_normal(7)
    x /= np.linalg.norm(x)

    # Act
    B = householder_basis(x)

    # Assert
    np.testing.assert_allclose(B.T @ B, np.eye(7), atol=1e-12)
    np.testing.assert_allclose(B[:, 0], x, atol=1e-12)
    np.testing.assert_allclose(householder_basis(np.eye(3)[0]), np.eye(3))


# --- Covering counterexamples ---

@pytest.mark.parametrize("name", ["covering-eta", "covering-width"])
def test_covering_counterexamples_verify(name, context):
    # Act
    [instance] = get_counterexamples(name)
    report = verify(instance, context)

    # Assert
    assert_verified(report)
    assert len(report.results) == 4


def test_covering_minimizers():
    first, second = get_counterexamples("covering")
    assert first.params["expected_minimizer"] == ["0", "1/2"]
    assert second.params["expected_minimizer"] == ["0", "0", "1/2"]
    assert math.isinf(ratio_constant(first.pattern))
    assert second.pattern.n < second.U.shape[1]


# --- Kernel pair counterexamples ---

def test_eta_dependence_construction():
    # Act
    instance = construct_eta_dependence(a=1, C=10)

    # Assert
    assert instance.U.shape == (110, 110)
    assert ratio_constant(instance.pattern) == 100
    assert np.sum(np.abs(instance.vectors["z1"])) == 110
    assert np.sum(np.abs(instance.vectors["z2"])) == 90
    assert np.linalg.norm(instance.vectors["x1"]) == pytest.approx(1.0)


def test_eta_dependence_verifies(context):
    report = verify(construct_eta_dependence(a=1, C=10), context)
    assert_verified(report)
    minimizer = next(r for r in report.results if r.name == "z1 is not an l1 minimizer")
    assert minimizer.evidence["distance_to_minus_z2"] <= 1e-8
    delta = next(r for r in report.results if r.name.startswith("delta"))
    assert delta.evidence["delta"] == pytest.approx(2 / 11)


def test_l_dependence_verifies(context):
    # Act
    instance = construct_l_dependence(a=1, C=4)
    report = verify(instance, context)

    # Assert
    assert_verified(report)
    assert instance.pattern.num_levels == 17
    delta = next(r for r in report.results if r.name.startswith("delta"))
    assert delta.evidence["delta"] == pytest.approx(2 / 5)


def test_tampered_kernel_pair_fails(context):
    # Arrange
    instance = construct_eta_dependence(a=1, C=10)
    instance.vectors["z1"][0] = -instance.vectors["z1"][0]

    # Act
    report = verify(instance, context)

    # Assert
    assert not report.passed
    assert "U z1 = U(-z2)" in [r.name for r in report.failures]


def test_not_l1_minimizer_requires_minus_z2(context):
    # Arrange: a feasible but wrong candidate for the minimizer.
    instance = construct_eta_dependence(a=1, C=10)
    instance.vectors["z2"] = 2 * instance.vectors["z2"]

    # Act
    report = verify(instance, context)
    check = next(r for r in report.results if r.name == "z1 is not an l1 minimizer")

    # Assert
    assert not check.passed
    assert check.evidence["distance_to_minus_z2"] == pytest.approx(10.0)
    assert check.evidence["oracle_objective"] == pytest.approx(90.0)


@pytest.mark.parametrize("a, C", [(0, 4), (4, 4), (5, 4)])
def test_parameter_order(a, C):
    with pytest.raises(ParameterOrder):
        construct_eta_dependence(a, C)
    with pytest.raises(ParameterOrder):
        construct_l_dependence(a, C)


# --- l2 sharpness ---

def test_omega_count():
    assert omega_count(0.5, 8) == 32
    assert omega_count(0.3, 3) == 20


def test_l2_sharpness_construction():
    # Act
    instance = construct_l2_sharpness(C=8, rho=0.5)

    # Assert
    assert instance.params["omega"] == 32
    assert instance.U.shape == (97, 97)
    assert sharpness_ratio(instance) == pytest.approx(math.sqrt(65) * math.sqrt(33) / 32)


@pytest.mark.parametrize("C", [8, 16, 32])
def test_l2_sharpness_verifies(C, context):
    report = verify(construct_l2_sharpness(C=C, rho=0.5), context)
    assert_verified(report)


def test_l2_sharpness_levels_variant(context):
    instance = construct_l2_sharpness(C=8, rho=0.5, variant="levels")
    assert instance.pattern.num_levels == 65
    assert_verified(verify(instance, context))


@pytest.mark.parametrize("C", [8, 16, 32])
def test_halved_rho_is_violated(C):
    # Arrange
    instance = construct_l2_sharpness(C=C, rho=0.5)

    # Act
    report = nsp_falsify(instance.U, instance.pattern, rho=0.25, tau=math.sqrt(2), trials=1000)

    # Assert
    assert report.passed is False
    assert report.work <= 1000


def test_l2_sharpness_infeasible_parameters():
    with pytest.raises(ParameterInfeasible):
        construct_l2_sharpness(C=2, rho=0.5)
    with pytest.raises(ParameterOrder):
        construct_l2_sharpness(a=0, C=8)


def test_sharpness_sweep():
    # Act
    sweep = sharpness_sweep(Cs=(8, 16), rho=0.5)

    # Assert
    assert sweep["fitted_constant"] > 0
    for row in sweep["rows"]:
        assert row["ratio"] >= row["lower_bound"]


# --- Registry ---

def test_unknown_counterexample():
    with pytest.raises(UnknownCounterexample):
        get_counterexamples("nope")


def test_manifest_is_json_serializable():
    # Act
    manifest = construct_l_dependence(C=4).manifest()

    # Assert
    decoded = json.loads(json.dumps(manifest))
    assert decoded["name"] == "l-dependence"
    assert decoded["pattern"]["M"][-1] == 20
    assert len(decoded["claims"]) == 8
