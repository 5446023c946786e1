# src/fliptest.py
import logging
from typing import Literal

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from data_models import SolveOptions, SolveResult, SparsityPattern, Weights
from evaluation import ReconstructionEvaluator, summarize
from exceptions import DimensionMismatch, InvalidPermutation, MoverInfeasible, NoRecoverableThreshold
from operators import SensingOperator, as_operator
from solver import solve_weighted_l1
from sparsity import level_slices, weighted_norms

logger = logging.getLogger(__name__)

PermutationKind = Literal["global-reverse", "level-reverse", "level-random", "custom"]

# Fractions of max|w| tried when no absolute thresholds are given.
DEFAULT_RELATIVE_THRESHOLDS = (1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3)


class Permutation(BaseModel):
    """A coordinate permutation Q with (Qx)[i] = x[mapping[i]]."""
    model_config = ConfigDict(frozen=True)

    mapping: tuple[int, ...]
    kind: PermutationKind = "custom"
    seed: int | None = None

    @model_validator(mode="after")
    def is_bijection(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise InvalidPermutation(f"Mapping of length {len(self.mapping)} is not a bijection on [0, {len(self.mapping)})")
        return self

    def __len__(self) -> int:
        return len(self.mapping)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (len(self),):
            raise DimensionMismatch(f"Permutation of length {len(self)} applied to shape {x.shape}")
        return x

    def apply(self, x) -> np.ndarray:
        return self._check(x)[list(self.mapping)]

    def apply_inverse(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.empty_like(x)
        out[list(self.mapping)] = x
        return out

    def inverse(self) -> "Permutation":
        return Permutation(mapping=tuple(int(j) for j in np.argsort(self.mapping)), kind="custom")

    @property
    def is_identity(self) -> bool:
        return self.mapping == tuple(range(len(self)))


def make_permutation(kind: PermutationKind, p: SparsityPattern | int, seed: int = 0, mapping=None) -> Permutation:
    """
    Builds a permutation of the coordinates of a pattern (or of n coordinates for
    global-reverse and custom). Level kinds only move coordinates within a level.
    """
    n = p if isinstance(p, int) else p.n
    if kind == "custom":
        if mapping is None:
            raise InvalidPermutation("A custom permutation needs an explicit mapping")
        return Permutation(mapping=tuple(int(j) for j in mapping), kind=kind)
    if kind == "global-reverse":
        return Permutation(mapping=tuple(range(n - 1, -1, -1)), kind=kind)
    if isinstance(p, int):
        raise InvalidPermutation(f"Permutation kind '{kind}' needs a sparsity pattern")
    if kind == "level-reverse":
        mapping = [j for sl in level_slices(p) for j in range(sl.stop - 1, sl.start - 1, -1)]
        return Permutation(mapping=tuple(mapping), kind=kind)
    if kind == "level-random":
        rng = np.random.default_rng(seed)
        mapping = np.concatenate([sl.start + rng.permutation(sl.stop - sl.start) for sl in level_slices(p)])
        return Permutation(mapping=tuple(int(j) for j in mapping), kind=kind, seed=seed)
    raise NotImplementedError(f"Permutation kind '{kind}' is not implemented.")


class FlipReport(BaseModel):
    err_original_l1: float = Field(..., ge=0)
    err_original_l2: float = Field(..., ge=0)
    err_flipped_l1: float = Field(..., ge=0)
    err_flipped_l2: float = Field(..., ge=0)
    perm_kind: str | None = None
    perm_seed: int | None = None
    mover: dict | None = None
    solve_original: dict = {}
    solve_flipped: dict = {}

    def to_row(self, index: int | str) -> dict:
        return {
            "perm_index": index,
            "seed": "" if self.perm_seed is None else self.perm_seed,
            "err_orig_l2": self.err_original_l2,
            "err_flip_l2": self.err_flipped_l2,
            "err_orig_l1": self.err_original_l1,
            "err_flip_l1": self.err_flipped_l1,
            "iterations": self.solve_flipped.get("iterations", 0),
        }


class SweepResult(BaseModel):
    reports: list[FlipReport]
    summary: dict[str, float]


def _recover(U: SensingOperator, y, weights: np.ndarray, epsilon: float, opts: SolveOptions | None) -> SolveResult:
    return solve_weighted_l1(U, y, weights, epsilon=epsilon, opts=opts)


def run_flip_test(U, x1, perm: Permutation, opts: SolveOptions | None = None, epsilon: float = 0.0,
                  weights=None, original: SolveResult | None = None) -> FlipReport:
    """
    Recovers x1 from U x1 and Q x1 from U Q x1, then compares Q^-1 of the second
    reconstruction with x1. A precomputed recovery of x1 can be passed as `original`.
    """
    U = as_operator(U)
    x1 = np.asarray(x1)
    if x1.shape != (U.n_in,) or len(perm) != U.n_in:
        raise DimensionMismatch(f"Signal {x1.shape} and permutation of length {len(perm)} do not fit {U}")
    weights = np.ones(U.n_in) if weights is None else np.asarray(weights, dtype=float)
    evaluator = ReconstructionEvaluator()

    if original is None:
        original = _recover(U, U.forward(x1), weights, epsilon, opts)
    flipped = _recover(U, U.forward(perm.apply(x1)), weights, epsilon, opts)
    m_orig = evaluator.evaluate(original.x, x1)
    m_flip = evaluator.evaluate(perm.apply_inverse(flipped.x), x1)
    logger.debug(f"Flip test ({perm.kind}): original {m_orig['err_l2']:.3e}, flipped {m_flip['err_l2']:.3e}")
    return FlipReport(
        err_original_l1=m_orig["err_l1"], err_original_l2=m_orig["err_l2"],
        err_flipped_l1=m_flip["err_l1"], err_flipped_l2=m_flip["err_l2"],
        perm_kind=perm.kind, perm_seed=perm.seed,
        solve_original=original.diagnostics(), solve_flipped=flipped.diagnostics(),
    )


def permutation_sweep(U, x1, p: SparsityPattern, count: int, seed: int = 0, opts: SolveOptions | None = None,
                      epsilon: float = 0.0, n_jobs: int = 1) -> SweepResult:
    """
    Flip tests in levels with `count` random level-preserving permutations seeded
    seed, seed+1, ...; the summary describes the flipped l2 errors.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    U = as_operator(U)
    x1 = np.asarray(x1)
    weights = np.ones(U.n_in)
    original = _recover(U, U.forward(x1), weights, epsilon, opts)
    perms = [make_permutation("level-random", p, seed + i) for i in range(count)]
    logger.info(f"Running {count} level-random flip tests on {U}")
    reports = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(run_flip_test)(U, x1, perm, opts, epsilon, weights, original) for perm in perms
    )
    return SweepResult(reports=reports, summary=summarize([r.err_flipped_l2 for r in reports]))


def piecewise_signal(n: int) -> np.ndarray:
    """f(t) = sin(t) on [0,0.3], -10 cos(t) on (0.3,0.8], 9 on (0.8,1], sampled at t = k/n."""
    t = np.arange(n) / n
    return np.where(t <= 0.3, np.sin(t), np.where(t <= 0.8, -10 * np.cos(t), 9.0))


class MoverSpec(BaseModel):
    """Which level receives the moved weighted budget and how many entries at most."""
    level: int | None = None
    count: int | None = Field(None, ge=0, description="0 keeps the support unchanged.")
    refill: bool = False


def _move_into_level(support: np.ndarray, wsq: np.ndarray, sl: slice, budget: float,
                     count: int | None, refill: bool) -> tuple[np.ndarray, int]:
    in_level = np.zeros(len(support), dtype=bool)
    in_level[sl] = True
    moved = support & in_level
    used = float(wsq[moved].sum())
    limit = budget * (1 + 1e-12)
    added = 0
    for j in range(sl.start, sl.stop):
        if count is not None and added >= count:
            break
        if not moved[j] and used + wsq[j] <= limit:
            moved[j] = True
            used += wsq[j]
            added += 1
    if refill:
        for j in np.flatnonzero(support & ~in_level):
            if used + wsq[j] <= limit:
                moved[j] = True
                used += wsq[j]
    return moved, added


def build_moved_vector(w1, omega: Weights, p: SparsityPattern, mover: MoverSpec | None = None) -> tuple[np.ndarray, dict]:
    """
    A binary w2 with weighted l0 at most that of w1 but more nonzeros in one level.
    Entries outside the chosen level are released and free slots of the level are
    filled lowest index first. Without an explicit level the finest level that can
    take an extra nonzero is chosen. With refill, released entries are put back
    coarse to fine while the budget allows.
    """
    mover = mover or MoverSpec()
    support = np.abs(np.asarray(w1)) > 0
    wsq = omega.values**2
    budget, _ = weighted_norms(support.astype(float), omega)
    if mover.count == 0:
        return support.astype(float), {"level": None, "added": 0, "weighted_budget": budget,
                                       "weighted_l0_moved": budget, "nonzeros_before": int(support.sum()),
                                       "nonzeros_after": int(support.sum())}
    slices = level_slices(p, len(support))
    levels = range(p.num_levels - 1, -1, -1) if mover.level is None else [mover.level]
    best = None
    for i in levels:
        if not 0 <= i < p.num_levels:
            raise MoverInfeasible(f"Level {i} does not exist in {p}")
        moved, added = _move_into_level(support, wsq, slices[i], budget, mover.count, mover.refill)
        if added > 0:
            best = (i, moved, added)
            break
    if best is None:
        raise MoverInfeasible(f"No level can take more nonzeros within the weighted budget {budget:g}")
    level, moved, added = best
    info = {"level": level, "added": added, "weighted_budget": budget,
            "weighted_l0_moved": weighted_norms(moved.astype(float), omega)[0],
            "nonzeros_before": int(support.sum()), "nonzeros_after": int(moved.sum())}
    logger.info(f"Mover put {added} extra nonzeros into level {level + 1}: {info}")
    return moved.astype(float), info


def generalized_flip_test(U, w, omega: Weights, p: SparsityPattern, mover: MoverSpec | None = None,
                          opts: SolveOptions | None = None, thresholds=None,
                          weighted: bool = False) -> FlipReport:
    """
    Weighted-sparsity flip test on coefficients w: keep the densest binarization
    |w_j| >= t over the absolute thresholds t that is recovered exactly (w1),
    build w2 with the same weighted l0 budget but more nonzeros in one level,
    and recover both. Without thresholds, fractions of max|w| are tried.
    """
    U = as_operator(U)
    w = np.asarray(w)
    if w.shape != (U.n_in,) or len(omega) != U.n_in:
        raise DimensionMismatch(f"Coefficients {w.shape} and {len(omega)} weights do not fit {U}")
    weights = omega.values if weighted else np.ones(U.n_in)
    evaluator = ReconstructionEvaluator()
    if thresholds is None:
        peak = float(np.max(np.abs(w)))
        thresholds = [r * peak for r in DEFAULT_RELATIVE_THRESHOLDS]

    accepted = None
    for t in sorted(thresholds):
        w1 = (np.abs(w) >= t).astype(float)
        result = _recover(U, U.forward(w1), weights, 0.0, opts)
        if evaluator.recovered(result.x, w1):
            accepted = (t, w1, result)
            break
        logger.info(f"Threshold {t:g} not recovered (error {evaluator.evaluate(result.x, w1)['err_l2']:.3e})")
    if accepted is None:
        raise NoRecoverableThreshold(f"None of the thresholds {list(thresholds)} gives an exactly recovered w1")
    t, w1, original = accepted

    w2, info = build_moved_vector(w1, omega, p, mover)
    flipped = _recover(U, U.forward(w2), weights, 0.0, opts)
    m_orig = evaluator.evaluate(original.x, w1)
    m_flip = evaluator.evaluate(flipped.x, w2)
    return FlipReport(
        err_original_l1=m_orig["err_l1"], err_original_l2=m_orig["err_l2"],
        err_flipped_l1=m_flip["err_l1"], err_flipped_l2=m_flip["err_l2"],
        perm_kind="weighted-mover", mover={**info, "threshold": t, "weighted": weighted},
        solve_original=original.diagnostics(), solve_flipped=flipped.diagnostics(),
    )
