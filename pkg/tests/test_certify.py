import itertools
import math

import numpy as np
import pytest
from scipy.linalg import block_diag

from certify import (
    block_diagonal_ripl,
    check_recovery_condition,
    error_bounds,
    kernel_exact_recovery_check,
    l1_l2_norm_inequality,
    nsp_falsify,
    orthogonal_inner_product_bound,
    recovery_threshold,
    rip_exact,
    ripl_exact,
    ripl_lower_bound,
    spectral_deviation,
)
from counterexamples import construct_l2_sharpness
from data_models import NspConstants, SolveOptions
from exceptions import EnumerationTooLarge, InfiniteRatio, KernelTooLarge, NotSorted, RhoOutOfRange
from operators import dft
from solver import solve_bpdn
from sparsity import make_pattern, scale_pattern, sigma_sM, sparse_vector_in_levels


def scan_deviation(A, p):
    """Brute-force delta_{s,M}: every maximal support, eigenvalues one at a time."""
    per_level = [itertools.combinations(range(p.M[i], p.M[i + 1]), p.s[i]) for i in range(p.num_levels)]
    best, witness = -1.0, None
    for combo in itertools.product(*[list(c) for c in per_level]):
        S = list(itertools.chain.from_iterable(combo))
        eig = np.linalg.eigvalsh(A[:, S].T @ A[:, S])
        dev = max(eig[-1] - 1, 1 - eig[0])
        if dev > best:
            best, witness = dev, S
    return best, witness


@pytest.fixture
def gaussian_matrix():
    def _create(m, n, seed=0):
        return np.random.default_rng(seed).standard_normal((m, n)) / np.sqrt(m)
    return _create


# --- RIP in levels ---

def test_recovery_threshold_single_level():
    p = make_pattern([1], [0, 4])
    assert recovery_threshold(p) == pytest.approx(4 / math.sqrt(41), abs=1e-12)


def test_recovery_threshold_rejects_infinite_ratio():
    with pytest.raises(InfiniteRatio):
        recovery_threshold(make_pattern([1, 0], [0, 2, 4]))


def test_unitary_operator_has_zero_ripl():
    report = ripl_exact(dft(8), make_pattern([1, 2], [0, 2, 8]))
    assert report.value == pytest.approx(0.0, abs=1e-12)
    assert report.method == "exact-enumeration"
    assert report.work == 2 * 15


@pytest.mark.parametrize("seed", range(20))
def test_ripl_exact_matches_eigenvalue_scan(seed, gaussian_matrix):
    # Arrange
    A = gaussian_matrix(8, 16, seed)
    p = make_pattern([1, 2], [0, 6, 16])

    # Act
    report = ripl_exact(A, p, n_jobs=2)
    expected, witness = scan_deviation(A, p)

    # Assert
    assert report.value == pytest.approx(expected, abs=1e-10)
    assert report.witness_support == witness
    assert spectral_deviation(A, report.witness_support) == pytest.approx(report.value, abs=1e-10)
    assert report.work == 6 * 45


def test_rip_exact_is_single_level_ripl(gaussian_matrix):
    A = gaussian_matrix(6, 10, seed=3)
    report = rip_exact(A, 2)
    assert report.kind == "RIP"
    assert report.value == pytest.approx(ripl_exact(A, make_pattern([2], [0, 10])).value)


def test_ripl_enumeration_cap(gaussian_matrix):
    with pytest.raises(EnumerationTooLarge):
        ripl_exact(gaussian_matrix(8, 16), make_pattern([1, 2], [0, 6, 16]), cap=100)


@pytest.mark.parametrize("seed", range(5))
def test_lower_bound_never_exceeds_exact(seed, gaussian_matrix):
    # Arrange
    A = gaussian_matrix(10, 20, seed)
    p = make_pattern([2, 2], [0, 8, 20])

    # Act
    lower = ripl_lower_bound(A, p, budget=30, seed=seed)
    exact = ripl_exact(A, p)

    # Assert
    assert lower.value <= exact.value + 1e-12
    assert lower.bound[0] == lower.value
    assert spectral_deviation(A, lower.witness_support) == pytest.approx(lower.value)


def test_block_diagonal_ripl_is_max_over_blocks(gaussian_matrix):
    # Arrange
    blocks = [gaussian_matrix(4, 6, seed=1), gaussian_matrix(5, 8, seed=2)]
    p = make_pattern([2, 2], [0, 6, 14])

    # Act
    per_block = block_diagonal_ripl(blocks, p)

    # Assert
    assert per_block == pytest.approx(ripl_exact(block_diag(*blocks), p).value, abs=1e-12)


# --- Recovery condition ---

def test_check_recovery_condition_on_identity():
    # Arrange
    p = make_pattern([1, 1], [0, 2, 4])

    # Act
    result = check_recovery_condition(np.eye(4), p)

    # Assert
    assert result.satisfied and result.conclusive
    assert result.threshold == pytest.approx(recovery_threshold(p))
    assert result.report.passed is True


def test_check_recovery_condition_reasons(gaussian_matrix):
    A = gaussian_matrix(2, 4)
    infinite = check_recovery_condition(A, make_pattern([1, 0], [0, 2, 4]))
    short = check_recovery_condition(A, make_pattern([1], [0, 2]))
    assert (infinite.satisfied, infinite.reason) == (False, "InfiniteRatio")
    assert (short.satisfied, short.reason) == (False, "PatternDoesNotCover")


def test_check_recovery_condition_fails_on_coherent_columns():
    # Arrange: two identical columns make delta_2s = 1.
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

    # Act
    result = check_recovery_condition(A, make_pattern([1], [0, 3]))

    # Assert
    assert not result.satisfied and result.conclusive
    assert result.report.value == pytest.approx(1.0)


# --- Kernel check ---

def test_kernel_check_one_dimensional_kernel():
    # Arrange: the kernel is spanned by (1, 1, 1).
    A = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])

    # Act
    one = kernel_exact_recovery_check(A, make_pattern([1], [0, 3]))
    two = kernel_exact_recovery_check(A, make_pattern([2], [0, 3]))

    # Assert
    assert one.passed is True
    assert one.value == pytest.approx(0.5)
    assert two.passed is False
    assert two.value == pytest.approx(2.0)
    assert two.witness_support == [0, 1]


def test_kernel_check_trivial_kernel():
    report = kernel_exact_recovery_check(np.eye(3), make_pattern([1], [0, 3]))
    assert report.passed is True and report.value == 0.0


def test_kernel_check_large_kernel():
    A = np.array([[1.0, 1.0, 1.0]])
    p = make_pattern([2], [0, 3])
    with pytest.raises(KernelTooLarge):
        kernel_exact_recovery_check(A, p, fallback=False)
    # (1, -1, 0) is in the kernel, so the search finds a violation.
    assert kernel_exact_recovery_check(A, p, trials=2000).passed is False


# --- Nullspace property ---

def test_nsp_holds_for_identity():
    report = nsp_falsify(np.eye(6), make_pattern([1, 1], [0, 3, 6]), rho=0.5, tau=1.0, trials=500)
    assert report.passed is True
    assert report.work == 500


def test_nsp_violated_by_kernel_vector():
    # Arrange
    A = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])

    # Act
    report = nsp_falsify(A, make_pattern([2], [0, 3]), rho=0.5, tau=1.0, trials=100)

    # Assert
    assert report.passed is False
    assert report.work == 1
    assert report.witness_support == [0, 1]


@pytest.mark.parametrize("rho", [0.0, 1.0, 1.5])
def test_nsp_rho_out_of_range(rho):
    with pytest.raises(RhoOutOfRange):
        nsp_falsify(np.eye(2), make_pattern([1], [0, 2]), rho=rho, tau=1.0)


def test_error_bounds_constants():
    # Arrange
    p = make_pattern([1, 1], [0, 2, 4])

    # Act
    bounds = error_bounds(NspConstants(rho=0.5, tau=1.0), p, sigma=1.0, epsilon=0.0)

    # Assert
    assert bounds.A1 == pytest.approx(6.0)
    assert bounds.C1 == pytest.approx(8.0)
    assert bounds.A2 == pytest.approx(3.0)
    assert bounds.B2 == pytest.approx(3 * (1 + math.sqrt(2)))
    assert bounds.C2 == pytest.approx(3.0)
    assert bounds.D2 == pytest.approx(2.5 + 2 * math.sqrt(2))
    assert bounds.bound_l1 == pytest.approx(6.0)
    assert bounds.bound_l2 > 0


def test_error_bounds_zero_for_exact_sparse_noiseless():
    bounds = error_bounds(NspConstants(rho=0.5, tau=1.0), make_pattern([1, 1], [0, 2, 4]), sigma=0.0, epsilon=0.0)
    assert bounds.bound_l1 == 0.0
    assert bounds.bound_l2 == 0.0


@pytest.mark.parametrize("epsilon", [0.0, 0.01, 0.1])
def test_error_bounds_dominate_solver_errors_on_nullspace_instance(epsilon):
    # Arrange: U2 has the l2 robust nullspace property with (rho, tau) = (1/2, sqrt(2)).
    instance = construct_l2_sharpness(C=8, rho=0.5)
    U, p = instance.U, instance.pattern
    nsp = NspConstants(rho=instance.params["rho"], tau=instance.params["tau"])
    rng = np.random.default_rng(11)
    opts = SolveOptions(max_iters=5000)

    for trial in range(20):
        x = sparse_vector_in_levels(p, seed=trial) + 0.05 * rng.standard_normal(U.shape[1])
        noise = rng.standard_normal(U.shape[0])
        y = U @ x + epsilon * noise / np.linalg.norm(noise)

        # Act
        x_hat = solve_bpdn(U, y, epsilon, opts).x
        bounds = error_bounds(nsp, p, sigma=sigma_sM(x, p), epsilon=epsilon)

        # Assert
        assert np.sum(np.abs(x_hat - x)) <= bounds.bound_l1 + 1e-6
        assert np.linalg.norm(x_hat - x) <= bounds.bound_l2 + 1e-6


# --- Inequalities ---

def test_l1_l2_norm_inequality_on_random_sorted_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = np.sort(rng.exponential(size=rng.integers(1, 30)))[::-1]
        lhs, rhs = l1_l2_norm_inequality(v)
        assert lhs <= rhs + 1e-12


@pytest.mark.parametrize("v", [[1.0, 2.0], [1.0, -1.0], []])
def test_l1_l2_norm_inequality_needs_sorted_input(v):
    with pytest.raises(NotSorted):
        l1_l2_norm_inequality(v)


def test_orthogonal_inner_product_bound(gaussian_matrix):
    # Arrange
    U = gaussian_matrix(40, 16, seed=5)
    p = make_pattern([1, 1], [0, 8, 16])
    delta = ripl_exact(U, scale_pattern(p, 2)).value
    rng = np.random.default_rng(7)

    for _ in range(500):
        # Disjoint supports, one entry per level each.
        picks = [rng.choice(np.arange(a, b), size=2, replace=False) for a, b in [(0, 8), (8, 16)]]
        x, y = np.zeros(16), np.zeros(16)
        x[[picks[0][0], picks[1][0]]] = rng.standard_normal(2)
        y[[picks[0][1], picks[1][1]]] = rng.standard_normal(2)

        # Act
        inner, bound = orthogonal_inner_product_bound(U, x, y, delta)

        # Assert
        assert inner <= bound + 1e-9
