# src/operators.py
import logging
from typing import Callable, Literal

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import block_diag

from data_models import SamplingScheme, WaveletSpec
from exceptions import DimensionMismatch, IndexOutOfRange, NotPowerOfTwo, TooLarge
from wavelets import check_length, dwt_forward, dwt_inverse, tensor_level_order, wavelet_level_boundaries

logger = logging.getLogger(__name__)

MATERIALIZE_CAP = 2**22

Action = Callable[[np.ndarray], np.ndarray]


class SensingOperator:
    """
    A linear map C^n_in -> C^n_out given by its forward and adjoint actions.
    Immutable after construction.
    """
    def __init__(self, n_in: int, n_out: int, forward: Action, adjoint: Action, descriptor: str,
                 unitary: bool = False, dense: np.ndarray | None = None):
        self.n_in = n_in
        self.n_out = n_out
        self._forward = forward
        self._adjoint = adjoint
        self.descriptor = descriptor
        self.unitary = unitary
        self._dense = dense

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_out, self.n_in

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.n_in,):
            raise DimensionMismatch(f"{self.descriptor} expects a vector of length {self.n_in}, got shape {x.shape}")
        return self._forward(x)

    def adjoint_apply(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (self.n_out,):
            raise DimensionMismatch(f"{self.descriptor}* expects a vector of length {self.n_out}, got shape {y.shape}")
        return self._adjoint(y)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    @property
    def H(self) -> "SensingOperator":
        """The adjoint operator."""
        dense = None if self._dense is None else self._dense.conj().T
        return SensingOperator(self.n_out, self.n_in, self._adjoint, self._forward, f"({self.descriptor})*",
                               unitary=self.unitary, dense=dense)

    def adjoint(self) -> "SensingOperator":
        return self.H

    def __matmul__(self, other: "SensingOperator") -> "SensingOperator":
        return compose(self, other)

    def scaled(self, c: float) -> "SensingOperator":
        dense = None if self._dense is None else c * self._dense
        return SensingOperator(self.n_in, self.n_out, lambda x: c * self._forward(x),
                               lambda y: np.conj(c) * self._adjoint(y), f"{c:g}*{self.descriptor}", dense=dense)

    def __repr__(self) -> str:
        return f"SensingOperator({self.descriptor}, {self.n_out}x{self.n_in})"


def compose(A: SensingOperator, B: SensingOperator) -> SensingOperator:
    """A after B."""
    if A.n_in != B.n_out:
        raise DimensionMismatch(f"Cannot compose {A} with {B}")
    dense = A._dense @ B._dense if A._dense is not None and B._dense is not None else None
    return SensingOperator(B.n_in, A.n_out,
                           lambda x: A._forward(B._forward(x)),
                           lambda y: B._adjoint(A._adjoint(y)),
                           f"{A.descriptor}.{B.descriptor}", unitary=A.unitary and B.unitary, dense=dense)


def identity(n: int) -> SensingOperator:
    return SensingOperator(n, n, lambda x: x.copy(), lambda y: y.copy(), f"I{n}", unitary=True)


def matrix_operator(A, name: str = "A") -> SensingOperator:
    """Wraps a dense matrix."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise DimensionMismatch(f"Expected a 2-D matrix, got shape {A.shape}")
    return SensingOperator(A.shape[1], A.shape[0], lambda x: A @ x, lambda y: A.conj().T @ y, name, dense=A)


def as_operator(A) -> SensingOperator:
    return A if isinstance(A, SensingOperator) else matrix_operator(A)


def dft(n: int, ordering: Literal["natural", "magnitude"] = "natural") -> SensingOperator:
    """
    Unitary DFT. The "magnitude" ordering lists frequencies 0, 1, -1, 2, -2, ...
    so that low frequencies come first.
    """
    if n < 1:
        raise ValueError(f"DFT size must be positive, got {n}")
    if ordering == "natural":
        rows = np.arange(n)
    elif ordering == "magnitude":
        freqs = np.fft.fftfreq(n, d=1.0 / n).astype(int)
        rows = np.lexsort((-freqs, np.abs(freqs)))
    else:
        raise NotImplementedError(f"DFT ordering '{ordering}' is not implemented.")

    def forward(x):
        return np.fft.fft(x, norm="ortho")[rows]

    def adjoint(y):
        z = np.zeros(n, dtype=complex)
        z[rows] = y
        return np.fft.ifft(z, norm="ortho")

    return SensingOperator(n, n, forward, adjoint, f"DFT{n}" + ("" if ordering == "natural" else f"[{ordering}]"), unitary=True)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(k: np.ndarray, bits: int) -> np.ndarray:
    out = np.zeros_like(k)
    for b in range(bits):
        out |= ((k >> b) & 1) << (bits - 1 - b)
    return out


def walsh_rows(n: int, ordering: str) -> np.ndarray:
    """Natural (Sylvester) row index of each output row for the requested ordering."""
    bits = n.bit_length() - 1
    k = np.arange(n)
    if ordering == "natural":
        return k
    if ordering == "paley":
        return _bit_reverse(k, bits)
    if ordering == "sequency":
        return _bit_reverse(k ^ (k >> 1), bits)
    raise NotImplementedError(f"Walsh-Hadamard ordering '{ordering}' is not implemented.")


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform in natural (Sylvester) order."""
    x = np.array(x, dtype=np.result_type(x, float))
    n = len(x)
    h = 1
    while h < n:
        blocks = x.reshape(-1, 2, h)
        x = np.stack((blocks[:, 0, :] + blocks[:, 1, :], blocks[:, 0, :] - blocks[:, 1, :]), axis=1).reshape(n)
        h *= 2
    return x


def wht(n: int, ordering: Literal["natural", "paley", "sequency"] = "paley") -> SensingOperator:
    """Unitary Walsh-Hadamard transform. Paley order makes HAD.DWT^-1_Haar block diagonal."""
    if not _is_power_of_two(n):
        raise NotPowerOfTwo(f"Walsh-Hadamard size must be a power of two, got {n}")
    rows = walsh_rows(n, ordering)
    scale = 1 / np.sqrt(n)

    def forward(x):
        return scale * fwht(x)[rows]

    def adjoint(y):
        z = np.zeros(n, dtype=np.result_type(y, float))
        z[rows] = y
        return scale * fwht(z)

    return SensingOperator(n, n, forward, adjoint, f"WHT{n}[{ordering}]", unitary=True)


def dwt(spec: WaveletSpec, n: int) -> SensingOperator:
    """Orthonormal periodized analysis operator, layout [scaling | details coarse -> fine]."""
    check_length(spec, n)
    return SensingOperator(n, n, lambda x: dwt_forward(x, spec), lambda w: dwt_inverse(w, spec),
                           f"DWT[{spec.name},{spec.levels}]", unitary=True)


def idwt(spec: WaveletSpec, n: int) -> SensingOperator:
    return dwt(spec, n).H


def subsample(A: SensingOperator, omega: SamplingScheme | list[int]) -> SensingOperator:
    """P_Omega . A, keeping rows omega (0-based)."""
    rows = np.asarray(omega.indices if isinstance(omega, SamplingScheme) else omega, dtype=int)
    if rows.size and (rows.min() < 0 or rows.max() >= A.n_out):
        raise IndexOutOfRange(f"Sampling indices must lie in [0, {A.n_out})")

    def adjoint(y):
        z = np.zeros(A.n_out, dtype=np.result_type(y, complex))
        z[rows] = y
        return A._adjoint(z)

    dense = None if A._dense is None else A._dense[rows]
    return SensingOperator(A.n_in, len(rows), lambda x: A._forward(x)[rows], adjoint,
                           f"P[{len(rows)}].{A.descriptor}", dense=dense)


def block_diagonal(blocks: list) -> SensingOperator:
    """Direct sum of square dense blocks."""
    blocks = [np.atleast_2d(np.asarray(b)) for b in blocks]
    for b in blocks:
        if b.shape[0] != b.shape[1]:
            raise DimensionMismatch(f"Blocks must be square, got shape {b.shape}")
    return matrix_operator(block_diag(*blocks), name=f"BlockDiag[{','.join(str(b.shape[0]) for b in blocks)}]")


def tensor_product(A: SensingOperator, B: SensingOperator) -> SensingOperator:
    """A (x) B acting on row-major (A.n_in, B.n_in) arrays, i.e. X -> A X B^T."""
    def forward(x):
        X = x.reshape(A.n_in, B.n_in)
        rows = np.stack([B._forward(r) for r in X])
        return np.stack([A._forward(c) for c in rows.T], axis=1).ravel()

    def adjoint(y):
        Y = y.reshape(A.n_out, B.n_out)
        rows = np.stack([B._adjoint(r) for r in Y])
        return np.stack([A._adjoint(c) for c in rows.T], axis=1).ravel()

    return SensingOperator(A.n_in * B.n_in, A.n_out * B.n_out, forward, adjoint,
                           f"({A.descriptor})x({B.descriptor})", unitary=A.unitary and B.unitary)


def reorder_outputs(A: SensingOperator, order: np.ndarray, name: str) -> SensingOperator:
    """Output k of the result is output order[k] of A."""
    order = np.asarray(order)

    def adjoint(y):
        z = np.zeros(A.n_out, dtype=np.result_type(y, float))
        z[order] = y
        return A._adjoint(z)

    return SensingOperator(A.n_in, A.n_out, lambda x: A._forward(x)[order], adjoint, name, unitary=A.unitary)


def dwt2(spec: WaveletSpec, side: int) -> tuple[SensingOperator, tuple[int, ...]]:
    """Separable 2-D DWT with coefficients grouped level by level; returns the 2-D boundaries."""
    one_d = dwt(spec, side)
    order, boundaries = tensor_level_order(wavelet_level_boundaries(side, spec.levels))
    return reorder_outputs(tensor_product(one_d, one_d), order, f"DWT2[{spec.name},{spec.levels}]"), boundaries


def dft2(side: int, ordering: Literal["natural", "magnitude"] = "magnitude",
         bands: tuple[int, ...] | None = None) -> SensingOperator:
    """Separable 2-D DFT; with bands given, frequencies are grouped ring by ring."""
    one_d = dft(side, ordering)
    op = tensor_product(one_d, one_d)
    if bands is None:
        return op
    order, _ = tensor_level_order(bands)
    return reorder_outputs(op, order, f"DFT2[{side},rings]")


def materialize(A: SensingOperator, cap: int = MATERIALIZE_CAP, n_jobs: int = 1) -> np.ndarray:
    """Dense matrix of A, built column by column from the standard basis."""
    if A._dense is not None:
        return np.array(A._dense)
    if A.n_in * A.n_out > cap:
        raise TooLarge(f"Materializing {A} needs {A.n_in * A.n_out} entries, above the cap {cap}")

    def column(j):
        e = np.zeros(A.n_in, dtype=complex)
        e[j] = 1.0
        return A._forward(e)

    columns = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(column)(j) for j in range(A.n_in))
    logger.debug(f"Materialized {A}")
    return np.column_stack(columns).astype(complex)


def check_adjoint(A: SensingOperator, trials: int = 100, seed: int = 0) -> float:
    """Largest relative mismatch |<Ax, y> - <x, A*y>| over random complex test pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(A.n_in) + 1j * rng.standard_normal(A.n_in)
        y = rng.standard_normal(A.n_out) + 1j * rng.standard_normal(A.n_out)
        lhs = np.vdot(y, A.forward(x))
        rhs = np.vdot(A.adjoint_apply(y), x)
        scale = max(1.0, np.linalg.norm(x) * np.linalg.norm(y))
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


def off_block_mask(M: tuple[int, ...], n_rows: int | None = None) -> np.ndarray:
    n = M[-1]
    levels = np.searchsorted(M, np.arange(n), side="right") - 1
    rows = levels if n_rows is None else levels[:n_rows]
    return rows[:, None] != levels[None, :]


def off_block_energy(A: np.ndarray, M: tuple[int, ...]) -> float:
    """Fraction of squared Frobenius norm outside the level-by-level diagonal blocks."""
    mask = off_block_mask(M)
    energy = np.abs(A) ** 2
    return float(energy[mask].sum() / energy.sum())


def max_off_block(A: np.ndarray, M: tuple[int, ...]) -> float:
    return float(np.max(np.abs(A)[off_block_mask(M)], initial=0.0))
