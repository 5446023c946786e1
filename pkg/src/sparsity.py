# src/sparsity.py
import logging
import math
from fractions import Fraction

import numpy as np

from data_models import LevelSupport, RatioConstant, SparsityPattern, Weights
from exceptions import EpsilonOutOfRange, LengthMismatch, PatternDoesNotCover

logger = logging.getLogger(__name__)


def make_pattern(s, M) -> SparsityPattern:
    """Builds a validated sparsity pattern from budgets s and boundaries M."""
    return SparsityPattern(s=tuple(int(v) for v in s), M=tuple(int(v) for v in M))


def ratio_constant(p: SparsityPattern) -> RatioConstant:
    """max_{i,j} s_i/s_j as an exact fraction, or math.inf if any budget is zero."""
    if min(p.s) == 0:
        return math.inf
    return Fraction(max(p.s), min(p.s))


def num_elements(p: SparsityPattern) -> int:
    return sum(p.s)


def covers(p: SparsityPattern, n: int) -> bool:
    return not math.isinf(ratio_constant(p)) and p.n >= n


def scale_pattern(p: SparsityPattern, a: int) -> SparsityPattern:
    """The (a*s, M) pattern, each budget clamped at its level width."""
    if a < 1:
        raise ValueError(f"Scale factor must be at least 1, got {a}")
    return make_pattern([min(a * b, p.width(i)) for i, b in enumerate(p.s)], p.M)


def level_of(p: SparsityPattern, j: int) -> int:
    return int(np.searchsorted(p.M, j, side="right")) - 1


def level_slices(p: SparsityPattern, n: int | None = None) -> list[slice]:
    """Per-level slices, clipped to a vector of length n."""
    n = p.n if n is None else n
    return [slice(min(p.M[i], n), min(p.M[i + 1], n)) for i in range(p.num_levels)]


def level_weights(p: SparsityPattern, base: float = 2.0) -> Weights:
    """Weights base**i on level i, counting levels from 1."""
    values = np.concatenate([np.full(p.width(i), float(base) ** (i + 1)) for i in range(p.num_levels)])
    return Weights(values=values)


def _require_width(p: SparsityPattern, n: int):
    if p.n < n:
        raise PatternDoesNotCover(f"Pattern ends at M_l={p.n} but the vector has length {n}")


def _require_cover(p: SparsityPattern, n: int):
    _require_width(p, n)
    if min(p.s) == 0:
        raise PatternDoesNotCover(f"Pattern {p} has a zero budget, so its ratio constant is infinite")


def _as_weights(omega) -> Weights:
    return omega if isinstance(omega, Weights) else Weights(values=omega)


def _top_by_magnitude(mags: np.ndarray, k: int) -> np.ndarray:
    # Stable sort on -|x| keeps the lowest index first among equal magnitudes.
    return np.argsort(-mags, kind="stable")[:k]


def is_sM_sparse(x, p: SparsityPattern, threshold: float = 0.0) -> bool:
    """True iff x has at most s_i entries with |x_j| > threshold in level i."""
    x = np.asarray(x)
    _require_width(p, len(x))
    nonzero = np.abs(x) > threshold
    return all(int(np.count_nonzero(nonzero[sl])) <= p.s[i] for i, sl in enumerate(level_slices(p, len(x))))


def best_sM_approx(x, p: SparsityPattern) -> tuple[LevelSupport, float]:
    """
    Keeps the s_i largest-magnitude entries of each level.

    Returns the kept support and sigma_{s,M}(x)_1, the l1 norm of what was dropped.
    """
    x = np.asarray(x)
    _require_cover(p, len(x))
    mags = np.abs(x)
    kept = []
    for i, sl in enumerate(level_slices(p, len(x))):
        kept.extend((sl.start + _top_by_magnitude(mags[sl], p.s[i])).tolist())
    kept.sort()
    mask = np.ones(len(x), dtype=bool)
    mask[kept] = False
    sigma = float(np.sum(mags[mask]))
    return LevelSupport(indices=tuple(kept), pattern=p), sigma


def sigma_sM(x, p: SparsityPattern) -> float:
    return best_sM_approx(x, p)[1]


def sk_epsilon(w, p: SparsityPattern, epsilon: float) -> np.ndarray:
    """
    Per-level counts s_k(eps) of the fewest largest coefficients whose l2 norm
    reaches eps times the l2 norm of w.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in [0, 1], got {epsilon}")
    w = np.asarray(w)
    _require_cover(p, len(w))
    counts = np.zeros(p.num_levels, dtype=int)
    if epsilon == 0.0 or not np.any(w):
        return counts
    order = _top_by_magnitude(np.abs(w), len(w))
    energy = np.cumsum(np.abs(w[order]) ** 2)
    # Relative slack so a threshold met exactly is not lost to rounding in eps**2.
    target = epsilon**2 * energy[-1] * (1 - 1e-12)
    s_eps = int(np.searchsorted(energy, target, side="left")) + 1
    for j in order[:s_eps]:
        counts[level_of(p, int(j))] += 1
    logger.debug(f"s({epsilon})={s_eps}, per level {counts.tolist()}")
    return counts


def weighted_norms(x, omega, threshold: float = 0.0) -> tuple[float, float]:
    """(weighted l0, weighted l1) = (sum of w_j^2 over the support, sum of w_j |x_j|)."""
    x = np.asarray(x)
    weights = _as_weights(omega).values
    if len(x) != len(weights):
        raise LengthMismatch(f"Vector length {len(x)} does not match {len(weights)} weights")
    mags = np.abs(x)
    support = mags > threshold
    return float(np.sum(weights[support] ** 2)), float(np.sum(weights[support] * mags[support]))


def max_weighted_l0_over_pattern(p: SparsityPattern, omega) -> float:
    """Smallest X such that every (s,M)-sparse vector is (omega, X)-weighted sparse."""
    weights = _as_weights(omega).values
    _require_width(p, len(weights))
    total = 0.0
    for i, sl in enumerate(level_slices(p, len(weights))):
        squares = np.sort(weights[sl] ** 2)[::-1]
        total += float(np.sum(squares[: p.s[i]]))
    return total


def transfer_weighted_budget(p: SparsityPattern, omega, r: int) -> SparsityPattern:
    """
    Concentrates the budgets of levels r+1..l into the level among them whose
    largest squared weight is smallest. The first r budgets are kept.
    """
    weights = _as_weights(omega).values
    _require_width(p, len(weights))
    if not 0 <= r < p.num_levels:
        raise ValueError(f"r must lie in [0, {p.num_levels}), got {r}")
    peaks = [float(np.max(weights[sl] ** 2)) if sl.stop > sl.start else math.inf
             for sl in level_slices(p, len(weights))]
    target = min(range(r, p.num_levels), key=lambda i: peaks[i])
    budgets = list(p.s[:r]) + [0] * (p.num_levels - r)
    budgets[target] = min((p.num_levels - r) * p.s[target], p.width(target))
    moved = make_pattern(budgets, p.M)
    logger.info(f"Transferred weighted budget into level {target + 1}: {moved} "
                f"(X={max_weighted_l0_over_pattern(moved, weights)} vs {max_weighted_l0_over_pattern(p, weights)})")
    return moved


def sparse_vector_in_levels(p: SparsityPattern, n: int | None = None, seed: int = 0, complex_valued: bool = False) -> np.ndarray:
    """A random exactly (s,M)-sparse vector using every level budget."""
    n = p.n if n is None else n
    rng = np.random.default_rng(seed)
    x = np.zeros(n, dtype=complex if complex_valued else float)
    for i, sl in enumerate(level_slices(p, n)):
        k = min(p.s[i], sl.stop - sl.start)
        if k == 0:
            continue
        idx = sl.start + np.sort(rng.choice(sl.stop - sl.start, size=k, replace=False))
        values = rng.standard_normal(k)
        if complex_valued:
            values = values + 1j * rng.standard_normal(k)
        # Keep entries away from zero so the support is exactly k.
        x[idx] = values + np.sign(values.real + (values.real == 0)) * 0.5
    return x
