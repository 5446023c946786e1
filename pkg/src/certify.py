# src/certify.py
import itertools
import logging
import math
from math import comb

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel
from scipy.linalg import null_space

from data_models import CertificateReport, ErrorBounds, NspConstants, SparsityPattern, vector_to_pairs
from exceptions import (
    DimensionMismatch,
    EnumerationTooLarge,
    InfiniteRatio,
    KernelTooLarge,
    NotSorted,
    PatternDoesNotCover,
)
from operators import SensingOperator, materialize
from sparsity import level_slices, make_pattern, num_elements, ratio_constant, scale_pattern

logger = logging.getLogger(__name__)

ENUMERATION_CAP = 10**7
KERNEL_CAP = 1


def as_matrix(A, cap: int | None = None) -> np.ndarray:
    if isinstance(A, SensingOperator):
        return materialize(A) if cap is None else materialize(A, cap=cap)
    A = np.asarray(A)
    if A.ndim != 2:
        raise DimensionMismatch(f"Expected a 2-D matrix, got shape {A.shape}")
    return A


# --- RIP in levels -----------------------------------------------------------

def _level_ranges(p: SparsityPattern, n_cols: int) -> list[tuple[range, int]]:
    """Per level: the columns it owns inside [0, min(M_l, n)) and the maximal count k_i."""
    out = []
    for i, sl in enumerate(level_slices(p, n_cols)):
        cols = range(sl.start, sl.stop)
        out.append((cols, min(p.s[i], len(cols))))
    return out


def count_maximal_supports(p: SparsityPattern, n_cols: int) -> int:
    return math.prod(comb(len(cols), k) for cols, k in _level_ranges(p, n_cols))


def _deviations(A: np.ndarray, supports: np.ndarray) -> np.ndarray:
    """max(lambda_max - 1, 1 - lambda_min) of A_S^* A_S for each row S of supports."""
    if supports.shape[1] == 0:
        return np.zeros(len(supports))
    sub = np.moveaxis(A[:, supports], 1, 0)
    gram = np.conj(np.swapaxes(sub, 1, 2)) @ sub
    gram = (gram + np.conj(np.swapaxes(gram, 1, 2))) / 2
    eig = np.linalg.eigvalsh(gram)
    return np.maximum(eig[:, -1] - 1, 1 - eig[:, 0])


def spectral_deviation(A: np.ndarray, support) -> float:
    return float(_deviations(A, np.asarray([list(support)], dtype=int))[0])


def _scan_chunk(A: np.ndarray, chunk: list[tuple[int, ...]]) -> tuple[float, tuple[int, ...]]:
    devs = _deviations(A, np.asarray(chunk, dtype=int))
    best = int(np.argmax(devs))
    return float(devs[best]), chunk[best]


def _maximal_supports(p: SparsityPattern, n_cols: int):
    per_level = [itertools.combinations(cols, k) for cols, k in _level_ranges(p, n_cols)]
    for combo in itertools.product(*[list(c) for c in per_level]):
        yield tuple(itertools.chain.from_iterable(combo))


def _chunks(iterable, size: int):
    it = iter(iterable)
    while chunk := list(itertools.islice(it, size)):
        yield chunk


def ripl_exact(A, p: SparsityPattern, cap: int = ENUMERATION_CAP, n_jobs: int = 1, kind: str = "RIP_L") -> CertificateReport:
    """
    delta_{s,M} by enumerating every maximal (s,M)-sparse support inside
    [0, min(M_l, n)). The witness is the lowest lexicographic maximizer.
    """
    A = as_matrix(A)
    m, n = A.shape
    total = count_maximal_supports(p, n)
    if total > cap:
        raise EnumerationTooLarge(f"{total} supports to enumerate for pattern {p}, above the cap {cap}")
    k = sum(k for _, k in _level_ranges(p, n))
    chunk_size = max(1, min(4096, 2**21 // max(1, m * max(k, 1))))
    logger.info(f"Enumerating {total} maximal supports of size {k} for {p} in chunks of {chunk_size}")
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_scan_chunk)(A, chunk) for chunk in _chunks(_maximal_supports(p, n), chunk_size)
    )
    best_dev, best_support = -np.inf, ()
    for dev, support in results:
        if dev > best_dev:
            best_dev, best_support = dev, support
    return CertificateReport(kind=kind, method="exact-enumeration", value=max(0.0, float(best_dev)),
                             witness_support=list(best_support), work=total)


def rip_exact(A, s: int, cap: int = ENUMERATION_CAP, n_jobs: int = 1) -> CertificateReport:
    """Classical delta_s: the single-level pattern (s), (0, n)."""
    A = as_matrix(A)
    return ripl_exact(A, make_pattern([s], [0, A.shape[1]]), cap=cap, n_jobs=n_jobs, kind="RIP")


def ripl_lower_bound(A, p: SparsityPattern, budget: int = 100, seed: int = 0, swap_rounds: int = 2) -> CertificateReport:
    """
    Lower bound on delta_{s,M}: random maximal supports drawn per level with
    probability proportional to | ||a_j||^2 - 1 |, then greedy one-for-one swaps.
    """
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    A = as_matrix(A)
    n = A.shape[1]
    ranges = _level_ranges(p, n)
    leverage = np.abs(np.sum(np.abs(A) ** 2, axis=0) - 1) + 1e-12
    rng = np.random.default_rng(seed)

    def draw() -> list[int]:
        support = []
        for cols, k in ranges:
            if k == len(cols):
                support.extend(cols)
            elif k > 0:
                weights = leverage[cols.start:cols.stop]
                picks = rng.choice(len(cols), size=k, replace=False, p=weights / weights.sum())
                support.extend(cols.start + int(j) for j in picks)
        return sorted(support)

    best_support, best_dev, work = [], -np.inf, 0
    for _ in range(budget):
        support = draw()
        dev = spectral_deviation(A, support)
        work += 1
        if dev > best_dev:
            best_dev, best_support = dev, support

    for _ in range(swap_rounds):
        improved = False
        for pos in range(len(best_support)):
            cols = next(c for c, _ in ranges if best_support[pos] in c)
            for candidate in cols:
                if candidate in best_support:
                    continue
                trial = sorted(best_support[:pos] + [candidate] + best_support[pos + 1:])
                dev = spectral_deviation(A, trial)
                work += 1
                if dev > best_dev + 1e-15:
                    best_dev, best_support, improved = dev, trial, True
                    break
        if not improved:
            break

    value = max(0.0, float(best_dev))
    return CertificateReport(kind="RIP_L", method="randomized-search", value=value, bound=(value, math.inf),
                             witness_support=best_support, work=work,
                             notes=f"lower bound from {budget} random supports and greedy swaps (seed {seed})")


def block_diagonal_ripl(blocks: list, p: SparsityPattern) -> float:
    """max_i delta_{s_i}(A_i) for a direct sum whose blocks coincide with the levels."""
    return max(rip_exact(np.atleast_2d(b), p.s[i]).value for i, b in enumerate(blocks))


# --- Recovery guarantee ------------------------------------------------------

def recovery_threshold(p: SparsityPattern) -> float:
    """1 / sqrt(l (sqrt(eta) + 1/4)^2 + 1)."""
    eta = ratio_constant(p)
    if math.isinf(eta):
        raise InfiniteRatio(f"Pattern {p} has an infinite ratio constant")
    return 1.0 / math.sqrt(p.num_levels * (math.sqrt(float(eta)) + 0.25) ** 2 + 1)


class CheckResult(BaseModel):
    satisfied: bool
    conclusive: bool
    reason: str
    threshold: float | None = None
    report: CertificateReport | None = None


def check_recovery_condition(A, p: SparsityPattern, cap: int = ENUMERATION_CAP, budget: int = 200,
                             seed: int = 0, n_jobs: int = 1) -> CheckResult:
    """Compares delta_{2s,M} (exact when enumerable, else a lower bound) with recovery_threshold(p)."""
    A = as_matrix(A)
    n = A.shape[1]
    if math.isinf(ratio_constant(p)):
        return CheckResult(satisfied=False, conclusive=True, reason="InfiniteRatio")
    if p.n < n:
        return CheckResult(satisfied=False, conclusive=True, reason="PatternDoesNotCover")
    threshold = recovery_threshold(p)
    doubled = scale_pattern(p, 2)
    if count_maximal_supports(doubled, n) <= cap:
        report = ripl_exact(A, doubled, cap=cap, n_jobs=n_jobs)
        satisfied = report.value < threshold
        report.passed = satisfied
        reason = "delta_2s below threshold" if satisfied else "delta_2s at or above threshold"
        return CheckResult(satisfied=satisfied, conclusive=True, reason=reason, threshold=threshold, report=report)
    report = ripl_lower_bound(A, doubled, budget=budget, seed=seed)
    if report.value >= threshold:
        report.passed = False
        return CheckResult(satisfied=False, conclusive=True, reason="lower bound at or above threshold",
                             threshold=threshold, report=report)
    logger.warning(f"Exact delta_2s out of reach for {p}; lower bound {report.value:.4g} < threshold {threshold:.4g}")
    return CheckResult(satisfied=False, conclusive=False, reason="lower bound below threshold, exact value not computed",
                         threshold=threshold, report=report)


# --- Nullspace properties ------------------------------------------------------

def _top_level_sets(mags: np.ndarray, p: SparsityPattern) -> tuple[np.ndarray, np.ndarray]:
    """Per-level sums over the s_i largest magnitudes: (sum of squares, sum) for each row of mags."""
    sq = np.zeros(mags.shape[0])
    l1 = np.zeros(mags.shape[0])
    for i, sl in enumerate(level_slices(p, mags.shape[1])):
        k = min(p.s[i], sl.stop - sl.start)
        if k == 0:
            continue
        top = -np.sort(-mags[:, sl], axis=1)[:, :k]
        sq += np.sum(top**2, axis=1)
        l1 += np.sum(top, axis=1)
    return sq, l1


def _top_level_support(v: np.ndarray, p: SparsityPattern) -> list[int]:
    mags = np.abs(v)
    # Magnitudes equal to 12 digits count as ties, which go to the lowest index.
    if mags.max(initial=0.0) > 0:
        mags = np.round(mags / mags.max(), 12)
    support = []
    for i, sl in enumerate(level_slices(p, len(v))):
        k = min(p.s[i], sl.stop - sl.start)
        order = np.argsort(-mags[sl], kind="stable")[:k]
        support.extend(int(sl.start + j) for j in order)
    return sorted(support)


def kernel_exact_recovery_check(A, p: SparsityPattern, kernel_cap: int = KERNEL_CAP, fallback: bool = True,
                                trials: int = 10_000, seed: int = 0) -> CertificateReport:
    """
    Exact verdict for a one-dimensional kernel span{h}: every (s,M)-sparse vector is the
    unique l1 minimizer iff ||h_S||_1 < ||h_S^c||_1 for the per-level largest S.
    """
    A = as_matrix(A)
    n = A.shape[1]
    if p.n < n:
        raise PatternDoesNotCover(f"Pattern ends at {p.n} but the matrix has {n} columns")
    kernel = null_space(A)
    dim = kernel.shape[1]
    if dim == 0:
        return CertificateReport(kind="kernel-exact-recovery", method="analytic", value=0.0, work=1, passed=True,
                                 notes="trivial kernel")
    if dim <= min(kernel_cap, 1):
        h = kernel[:, 0]
        support = _top_level_support(h, p)
        mask = np.zeros(n, dtype=bool)
        mask[support] = True
        inside, outside = float(np.sum(np.abs(h[mask]))), float(np.sum(np.abs(h[~mask])))
        ratio = inside / outside if outside > 0 else math.inf
        passed = ratio < 1
        return CertificateReport(kind="kernel-exact-recovery", method="analytic", value=ratio, work=1, passed=passed,
                                 witness_support=None if passed else support, witness_vector=vector_to_pairs(h),
                                 notes=f"||h_S||_1={inside:.12g}, ||h_S^c||_1={outside:.12g}")

    message = f"Kernel dimension {dim} exceeds the exact-check cap {kernel_cap}"
    if not fallback:
        raise KernelTooLarge(message)
    logger.warning(f"{message}; falling back to randomized falsification")
    rng = np.random.default_rng(seed)
    complex_valued = np.iscomplexobj(kernel)
    worst, witness, work = 0.0, None, 0
    for start in range(0, trials, 512):
        size = min(512, trials - start)
        coef = rng.standard_normal((dim, size))
        if complex_valued:
            coef = coef + 1j * rng.standard_normal((dim, size))
        V = (kernel @ coef).T
        mags = np.abs(V)
        _, top = _top_level_sets(mags, p)
        rest = mags.sum(axis=1) - top
        ratios = top / np.maximum(rest, 1e-300)
        work += size
        hits = np.flatnonzero(ratios >= 1)
        worst = max(worst, float(ratios.max()))
        if hits.size:
            witness = V[hits[0]]
            work = start + int(hits[0]) + 1
            break
    if witness is not None:
        return CertificateReport(kind="kernel-exact-recovery", method="randomized-search", value=worst, work=work,
                                 passed=False, witness_support=_top_level_support(witness, p),
                                 witness_vector=vector_to_pairs(witness), notes=message)
    return CertificateReport(kind="kernel-exact-recovery", method="randomized-search", value=worst, work=work,
                             passed=None, notes=f"{message}; no violating kernel vector in {work} trials (not a proof)")


def _candidate_vectors(rng, start: int, size: int, kernel: np.ndarray, near: np.ndarray, n: int,
                       complex_valued: bool, p: SparsityPattern) -> np.ndarray:
    """Trial vectors cycling through kernel, perturbed kernel, near-kernel, sparse and Gaussian directions."""
    def gauss(shape):
        g = rng.standard_normal(shape)
        return g + 1j * rng.standard_normal(shape) if complex_valued else g

    dtype = complex if complex_valued else float
    V = np.empty((size, n), dtype=dtype)
    modes = (np.arange(start, start + size)) % 5
    basis = kernel if kernel.shape[1] else near
    for row, mode in enumerate(modes):
        if mode == 0:
            v = basis @ gauss(basis.shape[1])
        elif mode == 1:
            v = basis @ gauss(basis.shape[1])
            v = v + 10.0 ** (-rng.uniform(1, 4)) * np.linalg.norm(v) * gauss(n) / math.sqrt(n)
        elif mode == 2:
            v = near @ gauss(near.shape[1])
        elif mode == 3:
            v = np.zeros(n, dtype=dtype)
            k = max(1, min(n, 2 * num_elements(p)))
            idx = rng.choice(n, size=k, replace=False)
            v[idx] = gauss(k)
            v = v + 1e-2 * (basis @ gauss(basis.shape[1]))
        else:
            v = gauss(n)
        V[row] = v
    if start == 0 and kernel.shape[1]:
        V[0] = kernel[:, 0]
    return V


def nsp_falsify(A, p: SparsityPattern, rho: float, tau: float, trials: int = 10_000, seed: int = 0,
                norm: str = "l2", batch_size: int = 256) -> CertificateReport:
    """
    Randomized search for a violation of the robust nullspace property of order (s,M):
      l2: ||v_S||_2 <= rho/sqrt(s~) ||v_S^c||_1 + tau ||Av||_2
      l1: ||v_S||_1 <= rho ||v_S^c||_1 + tau ||Av||_2
    with S the per-level largest entries of v. Finding nothing is not a proof.
    """
    NspConstants(rho=rho, tau=tau)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    A = as_matrix(A)
    n = A.shape[1]
    s_tilde = num_elements(p)
    complex_valued = np.iscomplexobj(A)
    _, svals, vh = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(svals > max(A.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0)))
    kernel = np.conj(vh[rank:]).T
    near = np.conj(vh[max(0, min(rank, n) - 5):]).T
    rng = np.random.default_rng(seed)

    worst, work, witness = 0.0, 0, None
    for start in range(0, trials, batch_size):
        size = min(batch_size, trials - start)
        V = _candidate_vectors(rng, start, size, kernel, near, n, complex_valued, p)
        mags = np.abs(V)
        sq, top = _top_level_sets(mags, p)
        rest = mags.sum(axis=1) - top
        measured = np.linalg.norm(V @ A.T, axis=1)
        if norm == "l2":
            lhs = np.sqrt(sq)
            rhs = rho / math.sqrt(max(s_tilde, 1)) * rest + tau * measured
        elif norm == "l1":
            lhs = top
            rhs = rho * rest + tau * measured
        else:
            raise NotImplementedError(f"Nullspace property norm '{norm}' is not implemented.")
        scale = np.linalg.norm(V, axis=1)
        violated = lhs > rhs * (1 + 1e-10) + 1e-13 * scale
        worst = max(worst, float(np.max(lhs / np.maximum(rhs, 1e-300))))
        if np.any(violated):
            first = int(np.flatnonzero(violated)[0])
            witness = V[first]
            work = start + first + 1
            break
        work += size

    kind = "NSP_L2" if norm == "l2" else "NSP_L1"
    if witness is not None:
        logger.info(f"{kind} violated at trial {work} (rho={rho}, tau={tau})")
        return CertificateReport(kind=kind, method="randomized-search", value=worst, work=work, passed=False,
                                 witness_support=_top_level_support(witness, p), witness_vector=vector_to_pairs(witness),
                                 notes=f"violation found at trial {work}")
    return CertificateReport(kind=kind, method="randomized-search", value=worst, work=work, passed=True,
                             notes=f"no violation found in {work} trials (not a proof); worst lhs/rhs {worst:.6g}")


# --- Error bounds and inequalities ---------------------------------------------

def error_bounds(nsp: NspConstants, p: SparsityPattern, sigma: float, epsilon: float) -> ErrorBounds:
    """Constants and l1/l2 error bounds implied by the l2 robust nullspace property of order (s,M)."""
    eta = ratio_constant(p)
    if math.isinf(eta):
        raise InfiniteRatio(f"Pattern {p} has an infinite ratio constant")
    rho, tau = nsp.rho, nsp.tau
    s_tilde = num_elements(p)
    A1 = (2 + 2 * rho) / (1 - rho)
    C1 = 4 * tau / (1 - rho)
    A2 = (2 * rho + 2 * rho**2) / (1 - rho)
    B2 = (2 * math.sqrt(rho) + 1) * (1 + rho) / (1 - rho)
    C2 = (rho * tau + tau) / (1 - rho)
    D2 = (4 * math.sqrt(rho) * tau + 3 * tau - rho * tau) / (2 - 2 * rho)
    root = (p.num_levels * float(eta)) ** 0.25
    return ErrorBounds(
        A1=A1, C1=C1, A2=A2, B2=B2, C2=C2, D2=D2,
        bound_l1=A1 * sigma + C1 * epsilon * math.sqrt(s_tilde),
        bound_l2=sigma / math.sqrt(s_tilde) * (A2 + B2 * root) + 2 * epsilon * (C2 + D2 * root),
    )


def l1_l2_norm_inequality(v) -> tuple[float, float]:
    """Both sides of ||v||_2 <= ||v||_1/sqrt(s) + (sqrt(s)/4)(v_1 - v_s) for sorted non-negative v."""
    v = np.asarray(v, dtype=float)
    if v.size == 0 or np.any(v < 0) or np.any(np.diff(v) > 0):
        raise NotSorted("Expected a non-empty, non-increasing, non-negative vector")
    s = len(v)
    return float(np.linalg.norm(v)), float(v.sum() / math.sqrt(s) + math.sqrt(s) / 4 * (v[0] - v[-1]))


def orthogonal_inner_product_bound(U, x, y, delta: float) -> tuple[float, float]:
    """
    For orthogonal (s,M)-sparse x, y with ||Ux||^2 - ||x||^2 = t ||x||^2:
    returns (|<Ux, Uy>|, sqrt(delta^2 - t^2) ||x|| ||y||).
    """
    U = as_matrix(U)
    x, y = np.asarray(x), np.asarray(y)
    Ux, Uy = U @ x, U @ y
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    t = (np.linalg.norm(Ux) ** 2 - nx**2) / nx**2 if nx > 0 else 0.0
    return float(abs(np.vdot(Ux, Uy))), float(math.sqrt(max(delta**2 - t**2, 0.0)) * nx * ny)
