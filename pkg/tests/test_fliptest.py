import numpy as np
import pytest

from data_models import SolveOptions, WaveletSpec
from exceptions import DimensionMismatch, InvalidPermutation, MoverInfeasible, NoRecoverableThreshold
from fliptest import (
    MoverSpec,
    Permutation,
    build_moved_vector,
    generalized_flip_test,
    make_permutation,
    permutation_sweep,
    piecewise_signal,
    run_flip_test,
)
from operators import dft, dwt, subsample
from sampling import counts_from_fractions, multilevel_scheme
from sparsity import is_sM_sparse, level_weights, make_pattern, sparse_vector_in_levels, weighted_norms
from wavelets import wavelet_level_boundaries


@pytest.fixture
def multilevel_operator():
    """
    A factory fixture: Fourier . DWT^-1 on n samples, multilevel subsampled with
    the given per-band fractions. Returns the operator and the level boundaries.
    """
    def _create(n, spec, fractions, seed=0):
        M = wavelet_level_boundaries(n, spec.levels)
        bands = [(M[i], M[i + 1]) for i in range(len(M) - 1)]
        scheme = multilevel_scheme(bands, counts_from_fractions(bands, fractions), seed, n=n)
        return subsample(dft(n, "magnitude") @ dwt(spec, n).H, scheme), M
    return _create


# --- Permutations ---

def test_permutation_apply_and_inverse():
    # Arrange
    perm = Permutation(mapping=(2, 0, 1))
    x = np.array([10.0, 20.0, 30.0])

    # Act
    y = perm.apply(x)

    # Assert
    np.testing.assert_array_equal(y, [30.0, 10.0, 20.0])
    np.testing.assert_array_equal(perm.apply_inverse(y), x)
    np.testing.assert_array_equal(perm.inverse().apply(y), x)
    assert not perm.is_identity


@pytest.mark.parametrize("mapping", [(0, 0, 1), (1, 2, 3), (0, 2)])
def test_permutation_rejects_non_bijections(mapping):
    with pytest.raises(InvalidPermutation):
        make_permutation("custom", len(mapping), mapping=mapping)


def test_custom_permutation_needs_mapping():
    with pytest.raises(InvalidPermutation):
        make_permutation("custom", 3)


def test_permutation_length_is_checked():
    with pytest.raises(DimensionMismatch):
        Permutation(mapping=(1, 0)).apply(np.ones(3))


def test_level_permutations_preserve_levels():
    # Arrange
    p = make_pattern([1, 1, 1], [0, 2, 5, 9])

    # Act
    reverse = make_permutation("level-reverse", p)
    random = make_permutation("level-random", p, seed=4)

    # Assert
    assert reverse.mapping == (1, 0, 4, 3, 2, 8, 7, 6, 5)
    for perm in (reverse, random):
        for a, b in [(0, 2), (2, 5), (5, 9)]:
            assert sorted(perm.mapping[a:b]) == list(range(a, b))
    assert random == make_permutation("level-random", p, seed=4)
    assert make_permutation("global-reverse", 4).mapping == (3, 2, 1, 0)


def test_level_permutation_needs_pattern():
    with pytest.raises(InvalidPermutation):
        make_permutation("level-random", 8)


def test_level_random_keeps_sparsity_in_levels():
    p = make_pattern([2, 1, 3], [0, 4, 8, 16])
    x = sparse_vector_in_levels(p, seed=3)
    for seed in range(10):
        assert is_sM_sparse(make_permutation("level-random", p, seed).apply(x), p)


# --- Flip tests ---

def test_identity_flip_gives_equal_errors():
    # Arrange
    n = 32
    rng = np.random.default_rng(0)
    U = rng.standard_normal((20, n))
    x = np.zeros(n)
    x[[1, 7, 20]] = [1.0, -2.0, 0.5]
    identity = make_permutation("custom", n, mapping=range(n))

    # Act
    report = run_flip_test(U, x, identity)

    # Assert
    assert report.err_original_l2 == report.err_flipped_l2
    assert report.err_original_l1 == report.err_flipped_l1
    assert report.to_row(0)["perm_index"] == 0


def test_fourier_haar_global_flip_fails(multilevel_operator):
    # Arrange
    U, M = multilevel_operator(256, WaveletSpec(family="haar", levels=4), [1.0, 1.0, 0.15, 0.15, 0.15], seed=42)
    p = make_pattern([8, 8, 1, 2, 3], M)
    x = sparse_vector_in_levels(p, seed=1)

    # Act
    report = run_flip_test(U, x, make_permutation("global-reverse", 256))

    # Assert
    assert report.err_original_l2 < 1e-4
    assert report.err_flipped_l2 >= 10 * report.err_original_l2
    assert report.err_flipped_l2 > 1e-3


def test_fourier_haar_flips_in_levels_have_narrow_spread(multilevel_operator):
    # Arrange: an (s,M)-sparse head plus a small dense tail, so errors are not at round-off level.
    U, M = multilevel_operator(256, WaveletSpec(family="haar", levels=4), [1.0, 1.0, 0.15, 0.15, 0.15], seed=42)
    p = make_pattern([8, 8, 1, 2, 3], M)
    tail = 1e-2 * np.random.default_rng(9).standard_normal(256)
    x = sparse_vector_in_levels(p, seed=1) + tail
    opts = SolveOptions(max_iters=3000)

    # Act
    sweep = permutation_sweep(U, x, p, count=100, seed=0, opts=opts, n_jobs=2)

    # Assert
    assert len(sweep.reports) == 100
    assert set(sweep.summary) == {"max", "min", "mean", "std"}
    assert sweep.summary["std"] < 0.2 * sweep.summary["mean"]
    assert [r.perm_seed for r in sweep.reports] == list(range(100))


def test_sweep_rejects_zero_count():
    p = make_pattern([1], [0, 4])
    with pytest.raises(ValueError):
        permutation_sweep(np.eye(4), np.ones(4), p, count=0)


# --- Generalized flip test ---

def test_piecewise_signal_pieces():
    f = piecewise_signal(10)
    assert f[0] == pytest.approx(0.0)
    assert f[3] == pytest.approx(np.sin(0.3))
    assert f[5] == pytest.approx(-10 * np.cos(0.5))
    assert f[9] == pytest.approx(9.0)


def test_build_moved_vector_keeps_weighted_budget():
    # Arrange
    p = make_pattern([2, 2, 4], [0, 2, 4, 8])
    omega = level_weights(p, 2.0)
    w1 = np.array([1, 1, 1, 0, 0, 0, 0, 1], dtype=float)

    # Act
    w2, info = build_moved_vector(w1, omega, p)

    # Assert
    budget, _ = weighted_norms(w1, omega)
    assert weighted_norms(w2, omega)[0] <= budget
    assert info["added"] > 0
    assert set(np.unique(w2)) <= {0.0, 1.0}
    level = slice(p.M[info["level"]], p.M[info["level"] + 1])
    assert np.count_nonzero(w2[level]) > np.count_nonzero(w1[level])


def test_build_moved_vector_fills_finest_level_by_default():
    # Arrange: unit weights, so the budget is the number of nonzeros.
    p = make_pattern([2, 2, 4], [0, 2, 4, 8])
    omega = level_weights(p, 1.0)
    w1 = np.array([1, 1, 1, 1, 0, 0, 0, 1], dtype=float)

    # Act
    w2, info = build_moved_vector(w1, omega, p)
    refilled, _ = build_moved_vector(np.array([1, 1, 1, 1, 0, 0, 1, 1], dtype=float), omega, p,
                                     MoverSpec(refill=True))

    # Assert
    np.testing.assert_array_equal(w2, [0, 0, 0, 0, 1, 1, 1, 1])
    assert info["level"] == 2
    assert info["added"] == 3
    np.testing.assert_array_equal(refilled, [1, 1, 0, 0, 1, 1, 1, 1])


def test_build_moved_vector_count_zero_keeps_support():
    p = make_pattern([2, 2], [0, 2, 4])
    w1 = np.array([1.0, 0.0, 1.0, 0.0])
    w2, info = build_moved_vector(w1, level_weights(p), p, MoverSpec(count=0))
    np.testing.assert_array_equal(w2, w1)
    assert info["added"] == 0


def test_build_moved_vector_infeasible():
    # Arrange: every entry is already on, nothing can be added.
    p = make_pattern([2, 2], [0, 2, 4])
    with pytest.raises(MoverInfeasible):
        build_moved_vector(np.ones(4), level_weights(p), p)
    with pytest.raises(MoverInfeasible):
        build_moved_vector(np.array([1.0, 0, 0, 0]), level_weights(p), p, MoverSpec(level=5))


def test_generalized_flip_with_unchanged_support_recovers_both():
    # Arrange
    n = 16
    U = np.eye(n)
    p = make_pattern([8, 8], [0, 8, 16])
    w = np.linspace(1.0, 0.0, n)

    # Act
    report = generalized_flip_test(U, w, level_weights(p), p, MoverSpec(count=0))

    # Assert
    assert report.err_original_l2 < 1e-6
    assert report.err_flipped_l2 < 1e-6
    assert report.mover["threshold"] == 1e-3


def test_generalized_flip_thresholds_are_absolute():
    # Arrange
    p = make_pattern([8, 8], [0, 8, 16])
    w = np.linspace(10.0, 0.0, 16)

    # Act
    report = generalized_flip_test(np.eye(16), w, level_weights(p), p, MoverSpec(count=0), thresholds=(0.5,))

    # Assert: 15 of the 16 entries are at least 0.5; the last one is 0.
    assert report.mover["threshold"] == 0.5
    assert report.mover["nonzeros_before"] == 15


def test_generalized_flip_without_recoverable_threshold():
    # Arrange: a single measurement sees only the first coefficient.
    U = np.eye(16)[:1]
    p = make_pattern([8, 8], [0, 8, 16])
    with pytest.raises(NoRecoverableThreshold):
        generalized_flip_test(U, np.ones(16), level_weights(p), p, thresholds=(0.5,))


def test_fourier_daubechies_generalized_flip(multilevel_operator):
    # Arrange
    n = 256
    spec = WaveletSpec(family="daubechies", vanishing_moments=3, levels=4)
    U, M = multilevel_operator(n, spec, [1.0, 1.0, 0.5, 0.25, 0.1], seed=3)
    p = make_pattern([M[i + 1] - M[i] for i in range(len(M) - 1)], M)
    w = dwt(spec, n).forward(piecewise_signal(n))

    # Act
    report = generalized_flip_test(U, w, level_weights(p, 2.0), p, weighted=True)

    # Assert
    assert report.err_original_l2 < 1e-4
    assert report.err_flipped_l2 > 0.1
    assert report.mover["weighted_l0_moved"] <= report.mover["weighted_budget"] * (1 + 1e-9)
    assert report.mover["added"] > 0
