"""Linear maps used by the experiments: dense, partial DFT, 2-D Haar, compositions."""

from __future__ import annotations

import abc
import math
from typing import Optional

import numpy as np


class IndexOutOfRange(IndexError):
    """Column index outside [0, ncols)."""


class SideNotPowerOfTwo(ValueError):
    """Haar transforms require a power-of-two image side."""


class LinearMap(abc.ABC):
    """Matrix or matrix-free operator with apply/adjoint/column access.

    apply maps R^ncols -> R^nrows (possibly complex output); adjoint_apply is
    its conjugate transpose.  Column extraction backs Hessian blocks for
    matrix-free least squares.
    """

    @property
    @abc.abstractmethod
    def nrows(self) -> int: ...

    @property
    @abc.abstractmethod
    def ncols(self) -> int: ...

    @abc.abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def adjoint_apply(self, y: np.ndarray) -> np.ndarray: ...

    def column(self, i: int) -> np.ndarray:
        """i-th column, realized as apply(e_i)."""
        i = int(i)
        if not 0 <= i < self.ncols:
            raise IndexOutOfRange(f"column {i} outside [0, {self.ncols})")
        e = np.zeros(self.ncols)
        e[i] = 1.0
        return self.apply(e)

    def apply_matrix(self, x_mat: np.ndarray) -> np.ndarray:
        """Apply to each column of an (ncols, k) array; overridden where batchable."""
        cols = [self.apply(x_mat[:, j]) for j in range(x_mat.shape[1])]
        if not cols:
            return np.zeros((self.nrows, 0))
        return np.stack(cols, axis=1)

    def columns(self, idx: np.ndarray) -> np.ndarray:
        """Stack columns idx into an (nrows, len(idx)) array."""
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros((self.nrows, 0))
        if idx.min() < 0 or idx.max() >= self.ncols:
            raise IndexOutOfRange("column index outside range")
        out = None
        # Chunked one-hot sweep keeps the dense basis block small.
        for start in range(0, idx.size, 256):
            chunk = idx[start : start + 256]
            basis = np.zeros((self.ncols, chunk.size))
            basis[chunk, np.arange(chunk.size)] = 1.0
            block = self.apply_matrix(basis)
            if out is None:
                out = np.zeros((self.nrows, idx.size), dtype=block.dtype)
            out[:, start : start + chunk.size] = block
        return out


class DenseMap(LinearMap):
    """Explicit matrix."""

    def __init__(self, matrix: np.ndarray):
        a = np.asarray(matrix)
        if a.ndim != 2:
            raise ValueError("matrix must be 2-d")
        self.matrix = a

    @property
    def nrows(self) -> int:
        return self.matrix.shape[0]

    @property
    def ncols(self) -> int:
        return self.matrix.shape[1]

    def apply(self, x):
        return self.matrix @ x

    def adjoint_apply(self, y):
        return self.matrix.conj().T @ y

    def column(self, i):
        i = int(i)
        if not 0 <= i < self.ncols:
            raise IndexOutOfRange(f"column {i} outside [0, {self.ncols})")
        return self.matrix[:, i].copy()

    def apply_matrix(self, x_mat):
        return self.matrix @ x_mat

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.ncols):
            raise IndexOutOfRange("column index outside range")
        return self.matrix[:, idx]


class PartialDFTMap(LinearMap):
    """Row subset of the unitary DFT of length n (normalization 1/sqrt(n))."""

    def __init__(self, n: int, rows: np.ndarray):
        rows = np.asarray(rows, dtype=int)
        if rows.ndim != 1 or rows.size == 0:
            raise ValueError("rows must be a nonempty 1-d index array")
        if rows.min() < 0 or rows.max() >= n:
            raise IndexOutOfRange("DFT row index outside [0, n)")
        rows = np.sort(rows)
        if np.any(np.diff(rows) == 0):
            raise ValueError("DFT rows must be distinct")
        self.n = int(n)
        self.rows = rows

    @property
    def nrows(self) -> int:
        return self.rows.size

    @property
    def ncols(self) -> int:
        return self.n

    def apply(self, x):
        return np.fft.fft(x)[self.rows] / math.sqrt(self.n)

    def adjoint_apply(self, y):
        full = np.zeros(self.n, dtype=complex)
        full[self.rows] = y
        return np.fft.ifft(full) * math.sqrt(self.n)

    def apply_matrix(self, x_mat):
        return np.fft.fft(x_mat, axis=0)[self.rows] / math.sqrt(self.n)

    def column(self, i):
        i = int(i)
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"column {i} outside [0, {self.n})")
        return np.exp(-2j * np.pi * self.rows * i / self.n) / math.sqrt(self.n)

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros((self.nrows, 0), dtype=complex)
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexOutOfRange("column index outside range")
        phase = np.exp(-2j * np.pi * np.outer(self.rows, idx) / self.n)
        return phase / math.sqrt(self.n)


def _require_power_of_two(side: int) -> None:
    if side < 1 or side & (side - 1):
        raise SideNotPowerOfTwo(f"side must be a power of two, got {side}")


def haar_forward(image: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
    """Multi-level orthonormal 2-D Haar transform.

    Each level replaces the current low-low block by pairwise sums/differences
    scaled by 1/sqrt(2), rows then columns, recursing on the low-low quadrant;
    by default down to 1x1, or for `levels` stages.  Output is in the standard
    quadrant (Mallat) layout, same shape as the input.
    """
    img = np.asarray(image)
    side = img.shape[-1]
    if img.ndim < 2 or img.shape[-2] != side:
        raise SideNotPowerOfTwo("image must be square")
    _require_power_of_two(side)
    out = img.astype(img.dtype if np.iscomplexobj(img) else float).copy()
    s = side
    stop = 1 if levels is None else max(1, side >> levels)
    sqrt2 = math.sqrt(2.0)
    while s > stop:
        block = out[..., :s, :s]
        lo = (block[..., ::2] + block[..., 1::2]) / sqrt2
        hi = (block[..., ::2] - block[..., 1::2]) / sqrt2
        block = np.concatenate([lo, hi], axis=-1)
        lo = (block[..., ::2, :] + block[..., 1::2, :]) / sqrt2
        hi = (block[..., ::2, :] - block[..., 1::2, :]) / sqrt2
        out[..., :s, :s] = np.concatenate([lo, hi], axis=-2)
        s //= 2
    return out


def haar_inverse(coeffs: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
    """Inverse (= transpose) of haar_forward at the same decomposition depth."""
    c = np.asarray(coeffs)
    side = c.shape[-1]
    if c.ndim < 2 or c.shape[-2] != side:
        raise SideNotPowerOfTwo("coefficient array must be square")
    _require_power_of_two(side)
    out = c.astype(c.dtype if np.iscomplexobj(c) else float).copy()
    sqrt2 = math.sqrt(2.0)
    stop = 1 if levels is None else max(1, side >> levels)
    s = 2 * stop
    while s <= side:
        block = out[..., :s, :s]
        half = s // 2
        lo, hi = block[..., :half, :], block[..., half:, :]
        tmp = np.empty_like(block)
        tmp[..., ::2, :] = (lo + hi) / sqrt2
        tmp[..., 1::2, :] = (lo - hi) / sqrt2
        lo, hi = tmp[..., :, :half], tmp[..., :, half:]
        block = np.empty_like(tmp)
        block[..., ::2] = (lo + hi) / sqrt2
        block[..., 1::2] = (lo - hi) / sqrt2
        out[..., :s, :s] = block
        s *= 2
    return out


class HaarMap(LinearMap):
    """Orthonormal 2-D Haar transform on flattened side x side images.

    direction "forward" applies the analysis transform W; "inverse" applies
    W^{-1} = W^T.  `levels` limits the decomposition depth (None = down to
    1x1).  Vectors use row-major flattening of the image/coefficients.
    """

    def __init__(self, side: int, direction: str = "forward", levels: Optional[int] = None):
        _require_power_of_two(side)
        if direction not in ("forward", "inverse"):
            raise ValueError("direction must be 'forward' or 'inverse'")
        self.side = int(side)
        self.direction = direction
        self.levels = levels

    @property
    def nrows(self) -> int:
        return self.side * self.side

    @property
    def ncols(self) -> int:
        return self.side * self.side

    def _transform(self, x, forward: bool):
        img = np.asarray(x).reshape(*np.shape(x)[:-1], self.side, self.side)
        res = (
            haar_forward(img, self.levels)
            if forward
            else haar_inverse(img, self.levels)
        )
        return res.reshape(np.shape(x))

    def apply(self, x):
        return self._transform(x, self.direction == "forward")

    def adjoint_apply(self, y):
        return self._transform(y, self.direction != "forward")

    def apply_matrix(self, x_mat):
        return self._transform(x_mat.T, self.direction == "forward").T


class ComposedMap(LinearMap):
    """outer o inner, with the adjoint composed in reverse."""

    def __init__(self, outer: LinearMap, inner: LinearMap):
        if outer.ncols != inner.nrows:
            raise ValueError(
                f"inner rows {inner.nrows} must match outer cols {outer.ncols}"
            )
        self.outer = outer
        self.inner = inner

    @property
    def nrows(self) -> int:
        return self.outer.nrows

    @property
    def ncols(self) -> int:
        return self.inner.ncols

    def apply(self, x):
        return self.outer.apply(self.inner.apply(x))

    def adjoint_apply(self, y):
        return self.inner.adjoint_apply(self.outer.adjoint_apply(y))

    def apply_matrix(self, x_mat):
        return self.outer.apply_matrix(self.inner.apply_matrix(x_mat))

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros((self.nrows, 0))
        return self.outer.apply_matrix(self.inner.columns(idx))


def power_iteration(map: LinearMap, iters: int = 100, seed: int = 0) -> float:
    """Rayleigh-quotient estimate of the largest eigenvalue of Re(A^H A).

    Monotone nondecreasing in iters in exact arithmetic; supplies the Lipschitz
    estimate for least-squares objectives.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(map.ncols)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = map.adjoint_apply(map.apply(v))
        w = np.asarray(w.real, dtype=float)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    av = map.apply(v)
    return float(np.vdot(av, av).real)
