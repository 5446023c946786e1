# src/lp_oracle.py
import logging
from fractions import Fraction

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import null_space

from exceptions import DimensionMismatch, InfeasibleSystem, NotRealValued, TooLarge

logger = logging.getLogger(__name__)

ORACLE_MAX_N = 16


class OracleSolution(BaseModel):
    """An exact l1 minimizer with the method that produced it."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    objective: float
    unique: bool | None
    method: str
    kernel_dim: int
    x_exact: list[Fraction] | None = None
    objective_exact: Fraction | None = None


def _rref_rows(rows: list[list[Fraction]]) -> list[list[Fraction]]:
    """Reduced row echelon form of [A | b]; zero rows dropped, inconsistent rows rejected."""
    rows = [r[:] for r in rows]
    n_cols = len(rows[0]) - 1 if rows else 0
    pivot_row = 0
    for col in range(n_cols):
        found = next((i for i in range(pivot_row, len(rows)) if rows[i][col] != 0), None)
        if found is None:
            continue
        rows[pivot_row], rows[found] = rows[found], rows[pivot_row]
        piv = rows[pivot_row][col]
        rows[pivot_row] = [v / piv for v in rows[pivot_row]]
        for i in range(len(rows)):
            if i != pivot_row and rows[i][col] != 0:
                factor = rows[i][col]
                rows[i] = [a - factor * b for a, b in zip(rows[i], rows[pivot_row])]
        pivot_row += 1
    for r in rows[pivot_row:]:
        if r[-1] != 0:
            raise InfeasibleSystem("Measurements are not in the range of the matrix")
    return rows[:pivot_row]


class _Tableau:
    """Dense simplex tableau in canonical form, pivoting with Bland's rule."""
    def __init__(self, rows: list[list[Fraction]], rhs: list[Fraction], basis: list[int]):
        self.rows = rows
        self.rhs = rhs
        self.basis = basis

    def pivot(self, r: int, col: int):
        piv = self.rows[r][col]
        self.rows[r] = [v / piv for v in self.rows[r]]
        self.rhs[r] /= piv
        for i in range(len(self.rows)):
            factor = self.rows[i][col]
            if i != r and factor != 0:
                self.rows[i] = [a - factor * b for a, b in zip(self.rows[i], self.rows[r])]
                self.rhs[i] -= factor * self.rhs[r]
        self.basis[r] = col

    def reduced_costs(self, cost: list[Fraction]) -> list[Fraction]:
        reduced = cost[:]
        for i, b in enumerate(self.basis):
            cb = cost[b]
            if cb != 0:
                reduced = [rc - cb * a for rc, a in zip(reduced, self.rows[i])]
        return reduced

    def ratio_row(self, col: int) -> int | None:
        best = None
        for i, row in enumerate(self.rows):
            if row[col] > 0:
                ratio = self.rhs[i] / row[col]
                if best is None or ratio < best[0] or (ratio == best[0] and self.basis[i] < self.basis[best[1]]):
                    best = (ratio, i)
        return None if best is None else best[1]

    def minimize(self, cost: list[Fraction], allowed: int) -> list[Fraction]:
        while True:
            reduced = self.reduced_costs(cost)
            entering = next((j for j in range(allowed) if reduced[j] < 0 and j not in self.basis), None)
            if entering is None:
                return reduced
            r = self.ratio_row(entering)
            if r is None:
                raise InfeasibleSystem("Unbounded linear program")
            self.pivot(r, entering)


def _simplex_l1(A: np.ndarray, y: np.ndarray) -> OracleSolution:
    m, n = A.shape
    rows = [[Fraction(float(v)) for v in A[i]] + [-Fraction(float(v)) for v in A[i]] + [Fraction(float(y[i]))]
            for i in range(m)]
    rows = _rref_rows(rows)
    k = len(rows)
    n_std = 2 * n
    constraint = [r[:n_std] for r in rows]
    rhs = [r[n_std] for r in rows]
    for i in range(k):
        if rhs[i] < 0:
            constraint[i] = [-v for v in constraint[i]]
            rhs[i] = -rhs[i]

    # Phase 1 with one artificial per row.
    tab_rows = [constraint[i] + [Fraction(int(i == j)) for j in range(k)] for i in range(k)]
    tab = _Tableau(tab_rows, rhs, [n_std + i for i in range(k)])
    phase1_cost = [Fraction(0)] * n_std + [Fraction(1)] * k
    tab.minimize(phase1_cost, n_std + k)
    if sum(tab.rhs[i] for i, b in enumerate(tab.basis) if b >= n_std) != 0:
        raise InfeasibleSystem("Phase 1 ended with a positive artificial objective")
    for i, b in enumerate(tab.basis):
        if b >= n_std:
            col = next(j for j in range(n_std) if tab.rows[i][j] != 0)
            tab.pivot(i, col)

    cost = [Fraction(1)] * n_std + [Fraction(0)] * k
    reduced = tab.minimize(cost, n_std)

    z = [Fraction(0)] * n_std
    for i, b in enumerate(tab.basis):
        z[b] = tab.rhs[i]
    x_exact = [z[j] - z[n + j] for j in range(n)]
    objective = sum(abs(v) for v in x_exact)
    return OracleSolution(
        x=np.array([float(v) for v in x_exact]),
        objective=float(objective),
        unique=_simplex_uniqueness(tab, reduced, n_std),
        method="simplex-rational",
        kernel_dim=n - k,
        x_exact=x_exact,
        objective_exact=objective,
    )


def _simplex_uniqueness(tab: _Tableau, reduced: list[Fraction], n_std: int) -> bool | None:
    """True if the optimum is unique, False if an alternative is found, None if degeneracy hides it."""
    ties = [j for j in range(n_std) if j not in tab.basis and reduced[j] == 0]
    if not ties:
        return True
    undecided = False
    for j in ties:
        r = tab.ratio_row(j)
        if r is None or tab.rhs[r] > 0:
            return False
        undecided = True
    return None if undecided else True


def _kernel_line(A: np.ndarray, y: np.ndarray, h: np.ndarray) -> OracleSolution:
    """Exhaustive comparison of the breakpoints of t -> ||x0 + t h||_1."""
    x0 = np.linalg.lstsq(A, y, rcond=None)[0]
    scale = max(1.0, float(np.max(np.abs(x0))))
    nz = np.abs(h) > 1e-12 * np.max(np.abs(h))
    breakpoints = np.unique(-x0[nz] / h[nz])
    values = np.array([np.sum(np.abs(x0 + t * h)) for t in breakpoints])
    best = int(np.argmin(values))
    x = x0 + breakpoints[best] * h
    x[np.abs(x) < 1e-12 * scale] = 0.0
    minimal = np.abs(values - values[best]) <= 1e-12 * (1 + values[best])
    return OracleSolution(x=x, objective=float(np.sum(np.abs(x))), unique=bool(np.count_nonzero(minimal) == 1),
                          method="kernel-line", kernel_dim=1)


def oracle_bp(U, y, max_n: int = ORACLE_MAX_N) -> OracleSolution:
    """
    Exact min ||x||_1 subject to Ux = y for small real problems.

    Injective U gives the unique preimage; up to max_n unknowns a rational two-phase
    simplex on the split x = u - v is used; beyond that only a one-dimensional
    kernel is handled, by scanning the kernel line.
    """
    A = np.asarray(U)
    y = np.asarray(y)
    if np.iscomplexobj(A) or np.iscomplexobj(y):
        if np.any(np.imag(A) != 0) or np.any(np.imag(y) != 0):
            raise NotRealValued("The exact oracle only handles real-valued data")
        A, y = A.real, y.real
    A = A.astype(float)
    y = y.astype(float)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise DimensionMismatch(f"Matrix shape {A.shape} does not match measurements shape {y.shape}")

    kernel = null_space(A)
    kernel_dim = kernel.shape[1]
    if kernel_dim == 0:
        x = np.linalg.lstsq(A, y, rcond=None)[0]
        if np.linalg.norm(A @ x - y) > 1e-9 * (1 + np.linalg.norm(y)):
            raise InfeasibleSystem("Measurements are not in the range of the matrix")
        solution = OracleSolution(x=x, objective=float(np.sum(np.abs(x))), unique=True, method="injective", kernel_dim=0)
    elif A.shape[1] <= max_n:
        solution = _simplex_l1(A, y)
    elif kernel_dim == 1:
        solution = _kernel_line(A, y, kernel[:, 0])
    else:
        raise TooLarge(f"Oracle handles up to {max_n} unknowns or a one-dimensional kernel, got n={A.shape[1]}, kernel dimension {kernel_dim}")
    logger.debug(f"oracle_bp: method={solution.method} objective={solution.objective} unique={solution.unique}")
    return solution
