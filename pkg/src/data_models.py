from fractions import Fraction
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from exceptions import (
    BoundaryNotIncreasing,
    BudgetExceedsLevelWidth,
    M0NotZero,
    NotConverged,
    PatternError,
    RhoOutOfRange,
)


class SparsityPattern(BaseModel):
    """
    A sparsity pattern (s, M): level i covers the coordinates [M[i-1], M[i])
    and may hold at most s[i-1] nonzero entries.
    """
    model_config = ConfigDict(frozen=True)

    s: tuple[int, ...] = Field(..., description="Per-level budgets.")
    M: tuple[int, ...] = Field(..., description="Level boundaries, M[0] = 0.")

    # Custom errors are not ValueErrors, so pydantic lets them propagate as-is.
    @model_validator(mode="after")
    def check_pattern(self):
        if not self.s or len(self.M) != len(self.s) + 1:
            raise PatternError(f"Expected len(M) = len(s) + 1 with s non-empty, got s={self.s}, M={self.M}")
        if self.M[0] != 0:
            raise M0NotZero(f"M must start at 0, got M[0]={self.M[0]}")
        for i in range(1, len(self.M)):
            if self.M[i] <= self.M[i - 1]:
                raise BoundaryNotIncreasing(f"Boundaries must increase strictly: M[{i - 1}]={self.M[i - 1]}, M[{i}]={self.M[i]}")
        for i, budget in enumerate(self.s):
            if budget < 0 or budget > self.width(i):
                raise BudgetExceedsLevelWidth(f"Budget s[{i}]={budget} outside [0, {self.width(i)}]")
        return self

    @property
    def num_levels(self) -> int:
        return len(self.s)

    @property
    def n(self) -> int:
        """Last boundary M_l."""
        return self.M[-1]

    def width(self, i: int) -> int:
        return self.M[i + 1] - self.M[i]

    def bounds(self, i: int) -> tuple[int, int]:
        return self.M[i], self.M[i + 1]

    def __str__(self) -> str:
        return f"s={list(self.s)}, M={list(self.M)}"


RatioConstant = Fraction | float
"""A positive rational, or math.inf when some budget is zero."""


class Weights(BaseModel):
    """Per-coordinate weights, all at least one."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def weights_at_least_one(cls, values):
        arr = np.asarray(values, dtype=float).ravel()
        if np.any(~np.isfinite(arr)) or np.any(arr < 1):
            raise ValueError("Weights must be finite and at least 1")
        return arr

    def __len__(self) -> int:
        return len(self.values)


class LevelSupport(BaseModel):
    """A sorted index set that is (s, M)-sparse for its pattern."""
    model_config = ConfigDict(frozen=True)

    indices: tuple[int, ...]
    pattern: SparsityPattern

    @model_validator(mode="after")
    def support_fits_pattern(self):
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("Support indices must be sorted and unique")
        counts = np.zeros(self.pattern.num_levels, dtype=int)
        for j in self.indices:
            if not 0 <= j < self.pattern.n:
                raise ValueError(f"Index {j} outside the pattern range [0, {self.pattern.n})")
            counts[int(np.searchsorted(self.pattern.M, j, side="right")) - 1] += 1
        if np.any(counts > np.array(self.pattern.s)):
            raise ValueError(f"Support with per-level counts {counts.tolist()} exceeds budgets {list(self.pattern.s)}")
        return self


class WaveletSpec(BaseModel):
    """Orthonormal periodized wavelet: Haar, or Daubechies with N vanishing moments."""
    family: Literal["haar", "daubechies"] = "daubechies"
    vanishing_moments: int = Field(1, ge=1, le=10)
    levels: int = Field(..., ge=0, description="Decomposition depth.")
    boundary: Literal["periodic"] = "periodic"

    @model_validator(mode="after")
    def haar_has_one_moment(self):
        if self.family == "haar" and self.vanishing_moments != 1:
            raise ValueError("Haar wavelets have exactly one vanishing moment")
        return self

    @property
    def name(self) -> str:
        return "haar" if self.family == "haar" else f"db{self.vanishing_moments}"


class SamplingScheme(BaseModel):
    """A sorted set of sampled row indices, optionally drawn band by band."""
    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1)
    indices: tuple[int, ...]
    bands: tuple[tuple[int, int], ...] | None = None
    counts: tuple[int, ...] | None = None
    seed: int | None = None

    @model_validator(mode="after")
    def indices_are_valid(self):
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("Sampling indices must be sorted and unique")
        if self.indices and (self.indices[0] < 0 or self.indices[-1] >= self.n):
            raise ValueError(f"Sampling indices must lie in [0, {self.n})")
        return self

    def __len__(self) -> int:
        return len(self.indices)


class SolveOptions(BaseModel):
    max_iters: int = Field(50_000, ge=1)
    tol_primal: float = Field(1e-8, gt=0)
    tol_dual: float = Field(1e-8, gt=0)
    tol_feas: float = Field(1e-8, gt=0)
    step_ratio: float = Field(1.0, gt=0, description="tau/sigma balance of the primal-dual steps.")
    step_safety: float = Field(0.99, gt=0, lt=1, description="tau*sigma*||U||^2 = step_safety^2.")
    power_iters: int = Field(20, ge=1)
    check_every: int = Field(20, ge=1)
    polish: bool = True
    dense_cap: int = Field(2**22, ge=1)
    seed: int = Field(0, ge=0)


class SolveResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    objective: float
    feasibility_residual: float
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    iterations: int
    converged: bool
    polished: bool = False
    epsilon: float = 0.0
    status: str = ""

    def raise_if_not_converged(self) -> "SolveResult":
        if not self.converged:
            raise NotConverged(f"Solver stopped after {self.iterations} iterations ({self.status})")
        return self

    def diagnostics(self) -> dict:
        return self.model_dump(exclude={"x"})


CertificateKind = Literal["RIP", "RIP_L", "NSP_L2", "NSP_L1", "kernel-exact-recovery"]
CertificateMethod = Literal["exact-enumeration", "randomized-search", "analytic"]


class CertificateReport(BaseModel):
    kind: CertificateKind
    method: CertificateMethod
    value: float | None = None
    bound: tuple[float, float] | None = Field(None, description="(lower, upper) when only bounds are known.")
    witness_support: list[int] | None = None
    witness_vector: list[list[float]] | None = Field(None, description="[re, im] pairs.")
    work: int = Field(0, ge=0, description="Subproblems examined.")
    passed: bool | None = None
    notes: str | None = None

    def json_str(self) -> str:
        return self.model_dump_json(indent=2)


class NspConstants(BaseModel):
    rho: float
    tau: float = 1.0
    tau_prime: float | None = None

    @model_validator(mode="after")
    def constants_in_range(self):
        if not 0 < self.rho < 1:
            raise RhoOutOfRange(f"rho must lie in (0, 1), got {self.rho}")
        if self.tau <= 0 or (self.tau_prime is not None and self.tau_prime <= 0):
            raise RhoOutOfRange(f"tau constants must be positive, got tau={self.tau}, tau'={self.tau_prime}")
        return self


class ErrorBounds(BaseModel):
    A1: float
    C1: float
    A2: float
    B2: float
    C2: float
    D2: float
    bound_l1: float
    bound_l2: float


def vector_to_pairs(x: np.ndarray) -> list[list[float]]:
    x = np.asarray(x)
    return [[float(v.real), float(v.imag)] for v in x.astype(complex)]
