# src/counterexamples.py
import logging
import math
from fractions import Fraction
from typing import Callable, Literal

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from certify import (
    ENUMERATION_CAP,
    check_recovery_condition,
    count_maximal_supports,
    kernel_exact_recovery_check,
    nsp_falsify,
    ripl_exact,
    ripl_lower_bound,
)
from data_models import NspConstants, SparsityPattern
from exceptions import ParameterInfeasible, ParameterOrder, UnknownCounterexample
from lp_oracle import ORACLE_MAX_N, oracle_bp
from solver import solve_bp
from sparsity import level_slices, make_pattern, num_elements, ratio_constant, scale_pattern, sigma_sM

logger = logging.getLogger(__name__)

# Enumeration work (supports x support size^3) above which the analytic delta is used.
EXACT_WORK_CAP = 2 * 10**9


class Claim(BaseModel):
    name: str
    check: str
    params: dict = {}


class ClaimResult(BaseModel):
    name: str
    passed: bool
    evidence: dict = {}
    message: str = ""


class VerificationReport(BaseModel):
    instance: str
    passed: bool
    results: list[ClaimResult]

    @property
    def failures(self) -> list[ClaimResult]:
        return [r for r in self.results if not r.passed]


class CounterexampleInstance(BaseModel):
    """A matrix, its sparsity pattern, the distinguished vectors and the claims made about them."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    U: np.ndarray
    pattern: SparsityPattern
    vectors: dict[str, np.ndarray] = {}
    basis: np.ndarray | None = Field(None, description="Orthonormal basis whose first column spans the kernel.")
    params: dict = {}
    claims: list[Claim] = []

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.U.shape),
            "pattern": {"s": list(self.pattern.s), "M": list(self.pattern.M)},
            "params": self.params,
            "vectors": {k: np.real_if_close(v).tolist() for k, v in self.vectors.items()},
            "claims": [c.model_dump() for c in self.claims],
        }


# --- Constructions -----------------------------------------------------------

def householder_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) whose first column is the unit vector x."""
    n = len(x)
    u = -np.asarray(x, dtype=float).copy()
    u[0] += 1.0
    norm = np.linalg.norm(u)
    if norm < 1e-14:
        return np.eye(n)
    u /= norm
    return np.eye(n) - 2.0 * np.outer(u, u)


def covering_counterexamples() -> list[CounterexampleInstance]:
    """Two matrices with delta_{s,M} = 0 whose l1 minimizer misses x1 because (s,M) does not cover them."""
    first = CounterexampleInstance(
        name="covering-eta",
        U=np.array([[1.0, 2.0], [0.0, 0.0]]),
        pattern=make_pattern([1, 0], [0, 1, 2]),
        vectors={"x1": np.array([1.0, 0.0])},
        params={"expected_minimizer": ["0", "1/2"]},
    )
    second = CounterexampleInstance(
        name="covering-width",
        U=np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]]),
        pattern=make_pattern([1], [0, 1]),
        vectors={"x1": np.array([1.0, 0.0, 0.0])},
        params={"expected_minimizer": ["0", "0", "1/2"]},
    )
    for instance, reason in ((first, "InfiniteRatio"), (second, "PatternDoesNotCover")):
        instance.claims = [
            Claim(name="delta is zero", check="delta-zero"),
            Claim(name="l1 minimizer is not x1", check="oracle-minimizer",
                  params={"expected": instance.params["expected_minimizer"], "objective": "1/2"}),
            Claim(name="iterative solver agrees with the oracle", check="solver-agrees", params={"tol": 1e-6}),
            Claim(name="recovery guarantee does not apply", check="recovery-inapplicable", params={"reason": reason}),
        ]
    return [first, second]


def _projection(x1: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """The Householder basis of x1 and scale * (I - x1 x1^T) built from its other columns."""
    basis = householder_basis(x1)
    complement = basis[:, 1:]
    return basis, scale * (complement @ complement.T)


def _kernel_pair_instance(name: str, a: int, C: int, pattern: SparsityPattern, extra_claims: list[Claim]) -> CounterexampleInstance:
    n = C + C * C
    lam = 1.0 / math.sqrt(C**3 + C**2)
    x1 = lam * np.concatenate([np.full(C, float(C)), np.ones(C * C)])
    basis, U = _projection(x1)
    z1 = np.concatenate([[C], np.zeros(C - 1), np.ones(C * C)])
    z2 = np.concatenate([[0], np.full(C - 1, float(C)), np.zeros(C * C)])
    claims = [
        Claim(name="orthonormal extension of x1", check="orthonormal-basis"),
        Claim(name="kernel is span{x1}", check="kernel-residual"),
        *extra_claims,
        Claim(name="delta_{as,M} <= (a+1)/(C+1)", check="delta-bound", params={"a": a, "bound": (a + 1) / (C + 1)}),
        Claim(name="l1 norms of z1 and z2", check="l1-norms", params={"z1": C * C + C, "z2": C * C - C}),
        Claim(name="U z1 = U(-z2)", check="kernel-pair"),
        Claim(name="z1 is not an l1 minimizer", check="not-l1-minimizer"),
        Claim(name="kernel check fails on the support of z1", check="kernel-exact-failure"),
    ]
    return CounterexampleInstance(name=name, U=U, pattern=pattern, basis=basis,
                                  vectors={"x1": x1, "z1": z1, "z2": z2},
                                  params={"a": a, "C": C, "n": n, "lambda": lam}, claims=claims)


def construct_eta_dependence(a: int = 1, C: int = 10) -> CounterexampleInstance:
    """Small delta_{as,M} yet a failing (s,M)-sparse z1, with s=(1,C^2) so that eta = C^2."""
    if not C > a >= 1:
        raise ParameterOrder(f"Need C > a >= 1, got a={a}, C={C}")
    pattern = make_pattern([1, C * C], [0, C, C + C * C])
    return _kernel_pair_instance("eta-dependence", a, C, pattern,
                                 [Claim(name="eta = C^2", check="pattern-shape", params={"eta": C * C, "levels": 2})])


def construct_l_dependence(a: int = 1, C: int = 4) -> CounterexampleInstance:
    """The same matrix with C^2+1 unit-budget levels, so eta = 1 and l = C^2+1."""
    if not C > a >= 1:
        raise ParameterOrder(f"Need C > a >= 1, got a={a}, C={C}")
    pattern = make_pattern([1] * (C * C + 1), [0] + list(range(C, C + C * C + 1)))
    return _kernel_pair_instance("l-dependence", a, C, pattern,
                                 [Claim(name="eta = 1 with C^2+1 levels", check="pattern-shape",
                                        params={"eta": 1, "levels": C * C + 1})])


def omega_count(rho: float, C: int) -> int:
    """ceil(2C / rho), computed on the decimal value of rho."""
    return math.ceil(Fraction(2 * C) / Fraction(str(rho)))


def construct_l2_sharpness(a: int = 1, C: int = 8, rho: float = 0.5,
                           variant: Literal["eta", "levels"] = "eta", tau: float = math.sqrt(2)) -> CounterexampleInstance:
    """
    U2 = (sqrt(2)/tau)(I - x1 x1^T) with x1 spread evenly over the last omega+1
    coordinates. U2 has the l2 robust nullspace property with (rho, tau) while
    ||z - z1||_2 sqrt(s~) / sigma(z1)_1 grows like eta^(1/4) (or l^(1/4)).
    """
    NspConstants(rho=rho, tau=tau)
    if a < 1:
        raise ParameterOrder(f"Need a >= 1, got a={a}")
    omega = omega_count(rho, C)
    if C * C <= omega:
        raise ParameterInfeasible(f"Need C^2 > ceil(2C/rho): C={C}, rho={rho} gives C^2={C * C}, omega={omega}")
    n = C * C + omega + 1
    lam = 1.0 / math.sqrt(omega + 1)
    x1 = lam * np.concatenate([np.zeros(C * C), np.ones(omega + 1)])
    if variant == "eta":
        pattern = make_pattern([C * C, 1], [0, C * C, n])
        shape = {"eta": C * C, "levels": 2}
    elif variant == "levels":
        pattern = make_pattern([1] * (C * C + 1), list(range(C * C + 1)) + [n])
        shape = {"eta": 1, "levels": C * C + 1}
    else:
        raise NotImplementedError(f"Sharpness variant '{variant}' is not implemented.")
    basis, U = _projection(x1, scale=math.sqrt(2) / tau)
    growth = shape["eta"] if variant == "eta" else shape["levels"]
    claims = [
        Claim(name="orthonormal extension of x1", check="orthonormal-basis"),
        Claim(name="kernel is span{x1}", check="kernel-residual"),
        Claim(name="pattern shape", check="pattern-shape", params=shape),
        Claim(name="||z - z1||_2 = 1", check="l2-distance", params={"value": 1.0}),
        Claim(name="sigma_{s,M}(z1)_1 = lambda * omega", check="sigma", params={"value": lam * omega}),
        Claim(name="z = 0 is feasible with smaller l1 norm", check="zero-minimizer"),
        Claim(name="sharpness ratio above sqrt(rho sqrt(g)/3)", check="sharpness-ratio",
              params={"rho": rho, "growth": growth}),
        Claim(name="no l2 robust nullspace violation at (rho, tau)", check="nsp-no-violation",
              params={"rho": rho, "tau": tau}),
    ]
    if math.isclose(tau, math.sqrt(2)):
        claims.insert(3, Claim(name="delta_{as,M} <= rho a/(2C)", check="delta-bound",
                               params={"a": a, "bound": rho * a / (2 * C)}))
    return CounterexampleInstance(name="l2-sharp", U=U, pattern=pattern, basis=basis,
                                  vectors={"x1": x1, "z1": x1.copy(), "z": np.zeros(n)},
                                  params={"a": a, "C": C, "rho": rho, "tau": tau, "omega": omega,
                                          "lambda": lam, "n": n, "variant": variant}, claims=claims)


def sharpness_ratio(instance: CounterexampleInstance) -> float:
    """||z - z1||_2 sqrt(s~) / sigma_{s,M}(z1)_1."""
    z, z1 = instance.vectors["z"], instance.vectors["z1"]
    return float(np.linalg.norm(z - z1) * math.sqrt(num_elements(instance.pattern)) / sigma_sM(z1, instance.pattern))


def sharpness_sweep(Cs=(8, 16, 32), rho: float = 0.5, variant: Literal["eta", "levels"] = "eta") -> dict:
    """Measured sharpness ratios against eta^(1/4) over a range of C, with the fitted constant min ratio/eta^(1/4)."""
    rows = []
    for C in Cs:
        instance = construct_l2_sharpness(C=C, rho=rho, variant=variant)
        growth = C * C if variant == "eta" else instance.pattern.num_levels
        ratio = sharpness_ratio(instance)
        rows.append({"C": C, "growth": growth, "ratio": ratio, "quarter_power": growth**0.25,
                     "lower_bound": math.sqrt(rho * math.sqrt(growth) / 3)})
    fitted = min(r["ratio"] / r["quarter_power"] for r in rows)
    logger.info(f"Sharpness sweep over C={list(Cs)}: fitted constant {fitted:.4g}")
    return {"rho": rho, "variant": variant, "rows": rows, "fitted_constant": fitted}


# --- Claim checks ------------------------------------------------------------

class VerifyContext(BaseModel):
    nsp_trials: int = Field(100_000, ge=1)
    seed: int = 0
    cap: int = ENUMERATION_CAP
    oracle_max_n: int = Field(ORACLE_MAX_N, ge=1)
    lower_bound_budget: int = Field(50, ge=1)
    n_jobs: int = 1


def _result(claim: Claim, passed: bool, message: str = "", **evidence) -> ClaimResult:
    return ClaimResult(name=claim.name, passed=bool(passed), evidence=evidence, message=message)


def _check_orthonormal_basis(inst, claim, ctx):
    B = inst.basis
    gram_error = float(np.max(np.abs(B.T @ B - np.eye(B.shape[1]))))
    first_column_error = float(np.max(np.abs(B[:, 0] - inst.vectors["x1"])))
    return _result(claim, gram_error < 1e-10 and first_column_error < 1e-12,
                   gram_error=gram_error, first_column_error=first_column_error)


def _check_kernel_residual(inst, claim, ctx):
    residual = float(np.linalg.norm(inst.U @ inst.vectors["x1"]))
    rank = int(np.linalg.matrix_rank(inst.U))
    n = inst.U.shape[1]
    return _result(claim, residual < 1e-10 and rank == n - 1, residual=residual, rank=rank, n=n)


def _check_pattern_shape(inst, claim, ctx):
    eta = ratio_constant(inst.pattern)
    levels = inst.pattern.num_levels
    return _result(claim, eta == claim.params["eta"] and levels == claim.params["levels"],
                   eta=str(eta), levels=levels)


def _projection_delta(x: np.ndarray, p: SparsityPattern) -> float:
    """delta_{s,M} of I - x x^T (unit x): the largest ||x_S||_2^2 over (s,M)-sparse S."""
    total = 0.0
    for i, sl in enumerate(level_slices(p, len(x))):
        total += float(np.sum(np.sort(np.abs(x[sl]) ** 2)[::-1][: p.s[i]]))
    return total


def _check_delta_bound(inst, claim, ctx):
    p = scale_pattern(inst.pattern, claim.params["a"])
    n = inst.U.shape[1]
    count = count_maximal_supports(p, n)
    if count <= ctx.cap and count * min(sum(p.s), n) ** 3 <= EXACT_WORK_CAP:
        report = ripl_exact(inst.U, p, cap=ctx.cap, n_jobs=ctx.n_jobs)
        value, method = report.value, report.method
    else:
        value, method = _projection_delta(inst.vectors["x1"], p), "analytic"
    lower = ripl_lower_bound(inst.U, p, budget=ctx.lower_bound_budget, seed=ctx.seed, swap_rounds=0).value
    bound = claim.params["bound"]
    return _result(claim, value <= bound + 1e-9 and lower <= value + 1e-9,
                   delta=value, method=method, lower_bound=lower, bound=bound, supports=count)


def _check_delta_zero(inst, claim, ctx):
    report = ripl_exact(inst.U, inst.pattern, cap=ctx.cap)
    return _result(claim, report.value <= 1e-12, delta=report.value, witness=report.witness_support)


def _check_l1_norms(inst, claim, ctx):
    evidence, passed = {}, True
    for key, expected in claim.params.items():
        z = inst.vectors[key]
        integral = np.array_equal(z, np.rint(z))
        norm = int(np.sum(np.abs(np.rint(z)).astype(np.int64)))
        evidence[key] = norm
        passed &= integral and norm == expected
    return _result(claim, passed, **evidence)


def _check_kernel_pair(inst, claim, ctx):
    z1, z2 = inst.vectors["z1"], inst.vectors["z2"]
    residual = float(np.linalg.norm(inst.U @ (z1 + z2)))
    norm_z1 = int(np.sum(np.abs(np.rint(z1)).astype(np.int64)))
    norm_z2 = int(np.sum(np.abs(np.rint(z2)).astype(np.int64)))
    return _result(claim, residual < 1e-10 and norm_z2 < norm_z1, residual=residual,
                   norm_z1=norm_z1, norm_minus_z2=norm_z2)


def _check_not_l1_minimizer(inst, claim, ctx):
    z1 = inst.vectors["z1"]
    solution = oracle_bp(inst.U, inst.U @ z1, max_n=ctx.oracle_max_n)
    norm_z1 = float(np.sum(np.abs(z1)))
    # The kernel is span{x1}, so -z2 is the unique minimizer.
    gap = float(np.max(np.abs(solution.x + inst.vectors["z2"])))
    return _result(claim, solution.objective < norm_z1 - 1e-9 and gap <= 1e-8, oracle_objective=solution.objective,
                   norm_z1=norm_z1, distance_to_minus_z2=gap, method=solution.method)


def _check_kernel_exact_failure(inst, claim, ctx):
    report = kernel_exact_recovery_check(inst.U, inst.pattern)
    expected = [int(j) for j in np.flatnonzero(inst.vectors["z1"])]
    return _result(claim, report.passed is False and report.witness_support == expected,
                   ratio=report.value, witness=report.witness_support, expected=expected)


def _check_oracle_minimizer(inst, claim, ctx):
    x1 = inst.vectors["x1"]
    solution = oracle_bp(inst.U, inst.U @ x1, max_n=ctx.oracle_max_n)
    expected = [Fraction(v) for v in claim.params["expected"]]
    objective = Fraction(claim.params["objective"])
    passed = (solution.x_exact == expected and solution.objective_exact == objective
              and solution.objective_exact < Fraction(float(np.sum(np.abs(x1)))))
    return _result(claim, passed, minimizer=[str(v) for v in solution.x_exact or []],
                   objective=str(solution.objective_exact), method=solution.method)


def _check_solver_agrees(inst, claim, ctx):
    y = inst.U @ inst.vectors["x1"]
    oracle = oracle_bp(inst.U, y, max_n=ctx.oracle_max_n)
    result = solve_bp(inst.U, y)
    gap = float(np.max(np.abs(result.x - oracle.x)))
    return _result(claim, gap <= claim.params["tol"], max_abs_difference=gap, iterations=result.iterations,
                   converged=result.converged)


def _check_recovery_inapplicable(inst, claim, ctx):
    check = check_recovery_condition(inst.U, inst.pattern, cap=ctx.cap)
    return _result(claim, not check.satisfied and check.reason == claim.params["reason"], reason=check.reason)


def _check_l2_distance(inst, claim, ctx):
    distance = float(np.linalg.norm(inst.vectors["z"] - inst.vectors["z1"]))
    return _result(claim, abs(distance - claim.params["value"]) < 1e-12, distance=distance)


def _check_sigma(inst, claim, ctx):
    sigma = sigma_sM(inst.vectors["z1"], inst.pattern)
    return _result(claim, abs(sigma - claim.params["value"]) < 1e-9 * max(1.0, sigma), sigma=sigma)


def _check_zero_minimizer(inst, claim, ctx):
    z, z1 = inst.vectors["z"], inst.vectors["z1"]
    residual = float(np.linalg.norm(inst.U @ (z - z1)))
    return _result(claim, residual < 1e-10 and np.sum(np.abs(z)) <= np.sum(np.abs(z1)), residual=residual)


def _check_sharpness_ratio(inst, claim, ctx):
    ratio = sharpness_ratio(inst)
    lower = math.sqrt(claim.params["rho"] * math.sqrt(claim.params["growth"]) / 3)
    return _result(claim, ratio >= 0.99 * lower, ratio=ratio, lower_bound=lower)


def _check_nsp_no_violation(inst, claim, ctx):
    report = nsp_falsify(inst.U, inst.pattern, claim.params["rho"], claim.params["tau"],
                         trials=ctx.nsp_trials, seed=ctx.seed)
    return _result(claim, report.passed is True, worst_ratio=report.value, trials=report.work, notes=report.notes)


CLAIM_CHECKS: dict[str, Callable[[CounterexampleInstance, Claim, VerifyContext], ClaimResult]] = {
    "orthonormal-basis": _check_orthonormal_basis,
    "kernel-residual": _check_kernel_residual,
    "pattern-shape": _check_pattern_shape,
    "delta-bound": _check_delta_bound,
    "delta-zero": _check_delta_zero,
    "l1-norms": _check_l1_norms,
    "kernel-pair": _check_kernel_pair,
    "not-l1-minimizer": _check_not_l1_minimizer,
    "kernel-exact-failure": _check_kernel_exact_failure,
    "oracle-minimizer": _check_oracle_minimizer,
    "solver-agrees": _check_solver_agrees,
    "recovery-inapplicable": _check_recovery_inapplicable,
    "l2-distance": _check_l2_distance,
    "sigma": _check_sigma,
    "zero-minimizer": _check_zero_minimizer,
    "sharpness-ratio": _check_sharpness_ratio,
    "nsp-no-violation": _check_nsp_no_violation,
}


def _run_claim(instance: CounterexampleInstance, claim: Claim, ctx: VerifyContext) -> ClaimResult:
    check = CLAIM_CHECKS.get(claim.check)
    if check is None:
        raise NotImplementedError(f"Claim check '{claim.check}' is not implemented.")
    try:
        result = check(instance, claim, ctx)
    except Exception as e:
        logger.warning(f"Claim '{claim.name}' on {instance.name} raised {type(e).__name__}: {e}")
        return ClaimResult(name=claim.name, passed=False, message=f"{type(e).__name__}: {e}")
    logger.info(f"{instance.name}: {'PASS' if result.passed else 'FAIL'} {claim.name}")
    return result


def verify(instance: CounterexampleInstance, ctx: VerifyContext | None = None) -> VerificationReport:
    """Evaluates every claim of the instance; failures are reported, never raised."""
    ctx = ctx or VerifyContext()
    results = Parallel(n_jobs=ctx.n_jobs, prefer="threads")(
        delayed(_run_claim)(instance, claim, ctx) for claim in instance.claims
    )
    return VerificationReport(instance=instance.name, passed=all(r.passed for r in results), results=results)


COUNTEREXAMPLES = ("covering", "covering-eta", "covering-width", "eta-dependence", "l-dependence", "l2-sharp")


def get_counterexamples(name: str, a: int = 1, C: int | None = None, rho: float = 0.5,
                        variant: str = "eta") -> list[CounterexampleInstance]:
    """Builds the named construction(s)."""
    if name == "covering":
        return covering_counterexamples()
    if name == "covering-eta":
        return covering_counterexamples()[:1]
    if name == "covering-width":
        return covering_counterexamples()[1:]
    if name == "eta-dependence":
        return [construct_eta_dependence(a, 10 if C is None else C)]
    if name == "l-dependence":
        return [construct_l_dependence(a, 4 if C is None else C)]
    if name == "l2-sharp":
        return [construct_l2_sharpness(a, 8 if C is None else C, rho, variant)]
    raise UnknownCounterexample(f"Unknown counterexample '{name}'; known: {', '.join(COUNTEREXAMPLES)}")
