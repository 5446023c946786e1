# src/solver.py
import logging

import numpy as np

from data_models import SolveOptions, SolveResult, Weights
from exceptions import DimensionMismatch, LengthMismatch
from operators import SensingOperator, as_operator, materialize

logger = logging.getLogger(__name__)


def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    """Complex soft thresholding: shrinks magnitudes by t, keeps phases."""
    mags = np.abs(x)
    scale = np.maximum(mags - t, 0.0) / np.where(mags > 0, mags, 1.0)
    return x * scale


def estimate_norm(U: SensingOperator, iters: int, seed: int) -> float:
    """Operator norm by power iteration on U*U from a fixed start vector."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(U.n_in).astype(complex)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(iters):
        w = U._adjoint(U._forward(v))
        value = np.linalg.norm(w)
        if value == 0:
            return 0.0
        v = w / value
    return float(np.sqrt(value))


class _Problem:
    """min sum w_j |x_j| subject to ||Ux - y||_2 <= eps."""
    def __init__(self, U: SensingOperator, y: np.ndarray, weights: np.ndarray, eps: float, opts: SolveOptions):
        self.y = y
        self.weights = weights
        self.eps = eps
        self.opts = opts
        self.dense = None
        if U._dense is not None or U.n_in * U.n_out <= opts.dense_cap:
            self.dense = materialize(U, cap=opts.dense_cap)
            self.apply = lambda x: self.dense @ x
            self.apply_adj = lambda p: self.dense.conj().T @ p
        else:
            self.apply = U._forward
            self.apply_adj = U._adjoint
        self.U = U

    def objective(self, x) -> float:
        return float(np.sum(self.weights * np.abs(x)))

    def infeasibility(self, x) -> float:
        return max(0.0, float(np.linalg.norm(self.apply(x) - self.y)) - self.eps)

    def project_ball(self, v):
        r = v - self.y
        norm = np.linalg.norm(r)
        if norm <= self.eps:
            return v
        return self.y + r * (self.eps / norm)


def _polish(problem: _Problem, x: np.ndarray) -> np.ndarray | None:
    """
    Least squares on the support of x, accepted only with a dual certificate:
    v = U*p equals w_j sign(x_j) on the support and |v_j| <= w_j elsewhere.
    """
    support = np.flatnonzero(x)
    if support.size == 0 or support.size > len(problem.y):
        return None
    A = problem.dense
    A_S = A[:, support]
    coef, _, rank, _ = np.linalg.lstsq(A_S, problem.y, rcond=None)
    if rank < support.size or np.any(coef == 0):
        return None
    candidate = np.zeros(len(x), dtype=np.result_type(coef, x))
    candidate[support] = coef
    tol_feas = problem.opts.tol_feas * (1 + np.linalg.norm(problem.y))
    if np.linalg.norm(A_S @ coef - problem.y) > tol_feas:
        return None
    phase = coef / np.abs(coef)
    target = problem.weights[support] * phase
    gram = A_S.conj().T @ A_S
    try:
        p = A_S @ np.linalg.solve(gram, target)
    except np.linalg.LinAlgError:
        return None
    v = A.conj().T @ p
    off = np.ones(len(x), dtype=bool)
    off[support] = False
    if np.any(np.abs(v[off]) > problem.weights[off] * (1 + 1e-9)):
        return None
    return candidate


def _solve(U, y, weights, eps: float, opts: SolveOptions) -> SolveResult:
    U = as_operator(U)
    y = np.asarray(y)
    if y.shape != (U.n_out,):
        raise DimensionMismatch(f"Measurements have shape {y.shape}, expected ({U.n_out},)")
    if len(weights) != U.n_in:
        raise LengthMismatch(f"{len(weights)} weights for an operator with {U.n_in} inputs")
    if eps < 0:
        raise ValueError(f"epsilon must be non-negative, got {eps}")

    dtype = np.result_type(y, complex) if np.iscomplexobj(y) or not _is_real(U) else float
    x = np.zeros(U.n_in, dtype=dtype)
    y_norm = float(np.linalg.norm(y))
    if y_norm <= eps:
        return SolveResult(x=x, objective=0.0, feasibility_residual=0.0, iterations=0, converged=True,
                           epsilon=eps, status="zero is feasible")

    problem = _Problem(U, y.astype(dtype), weights, eps, opts)
    norm = estimate_norm(U, opts.power_iters, opts.seed) * 1.01
    tau = opts.step_safety * opts.step_ratio / norm
    sigma = opts.step_safety / (opts.step_ratio * norm)
    p = np.zeros(U.n_out, dtype=dtype)
    Ux = problem.apply(x)
    primal_res = dual_res = np.inf
    polished = False
    status = "max_iters reached"
    it = 0
    for it in range(1, opts.max_iters + 1):
        x_new = soft_threshold(x - tau * problem.apply_adj(p), tau * weights)
        Ux_new = problem.apply(x_new)
        q = p + sigma * (2 * Ux_new - Ux)
        p_new = q - sigma * problem.project_ball(q / sigma)

        if it % opts.check_every == 0 or it == opts.max_iters:
            dx, dp = x - x_new, p - p_new
            primal_res = float(np.linalg.norm(dx / tau - problem.apply_adj(dp)))
            dual_res = float(np.linalg.norm(dp / sigma - (Ux - Ux_new)))
            feas = max(0.0, float(np.linalg.norm(Ux_new - problem.y)) - eps)
            scale_primal = max(1.0, float(np.linalg.norm(weights)))
            if (primal_res <= opts.tol_primal * scale_primal and dual_res <= opts.tol_dual * (1 + y_norm)
                    and feas <= opts.tol_feas * (1 + y_norm)):
                x, p = x_new, p_new
                status = "converged"
                break
            if opts.polish and eps == 0 and problem.dense is not None:
                candidate = _polish(problem, x_new)
                if candidate is not None:
                    x, p = candidate, p_new
                    polished = True
                    status = "converged (certified support)"
                    break
            logger.debug(f"iter {it}: primal={primal_res:.3e} dual={dual_res:.3e} feas={feas:.3e}")
        x, p, Ux = x_new, p_new, Ux_new

    feas = problem.infeasibility(x)
    converged = status.startswith("converged")
    if not converged:
        logger.warning(f"Solver on {U} stopped after {it} iterations: primal={primal_res:.3e} dual={dual_res:.3e} feas={feas:.3e}")
    return SolveResult(x=x, objective=problem.objective(x), feasibility_residual=feas,
                       primal_residual=primal_res if np.isfinite(primal_res) else 0.0,
                       dual_residual=dual_res if np.isfinite(dual_res) else 0.0,
                       iterations=it, converged=converged, polished=polished, epsilon=eps, status=status)


def _is_real(U: SensingOperator) -> bool:
    return U._dense is not None and not np.iscomplexobj(U._dense)


def _options(opts: SolveOptions | None) -> SolveOptions:
    return opts if opts is not None else SolveOptions()


def solve_bp(U, y, opts: SolveOptions | None = None) -> SolveResult:
    """Basis pursuit: min ||x||_1 subject to Ux = y."""
    U = as_operator(U)
    return _solve(U, y, np.ones(U.n_in), 0.0, _options(opts))


def solve_bpdn(U, y, epsilon: float, opts: SolveOptions | None = None) -> SolveResult:
    """min ||x||_1 subject to ||Ux - y||_2 <= epsilon."""
    U = as_operator(U)
    return _solve(U, y, np.ones(U.n_in), float(epsilon), _options(opts))


def solve_weighted_l1(U, y, omega, epsilon: float = 0.0, opts: SolveOptions | None = None) -> SolveResult:
    """min sum w_j |x_j| subject to ||Ux - y||_2 <= epsilon."""
    U = as_operator(U)
    weights = omega.values if isinstance(omega, Weights) else Weights(values=omega).values
    return _solve(U, y, weights, float(epsilon), _options(opts))
