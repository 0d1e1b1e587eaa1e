"""Band-diagonal operators with batched dense products.

Diagonals follow the ``scipy.sparse.diags`` convention: offset ``k >= 0`` holds
``A[i, i + k]``, offset ``k < 0`` holds ``A[i - k, i]``. Products against
dense operands touch only the stored bands, so a tridiagonal operator times a
``d x d`` matrix costs ``O(d^2)``; leading axes of the operand are treated as a
batch.
"""

from typing import Dict, Mapping, Optional, Union

import numpy as np
import scipy.sparse as sp

from nsdimer.errors import DimensionMismatchError


class BandedOperator:
    __slots__ = ("dim", "bands", "_csr")
    # numpy scalars defer to __rmul__ instead of broadcasting
    __array_ufunc__ = None

    def __init__(self, dim: int, bands: Mapping[int, np.ndarray]):
        self.dim = int(dim)
        self.bands: Dict[int, np.ndarray] = {}
        for k in sorted(bands):
            diag = np.asarray(bands[k], dtype=np.complex128)
            if diag.shape != (self.dim - abs(k),):
                raise DimensionMismatchError(
                    f"diagonal {k} has shape {diag.shape}, expected ({self.dim - abs(k)},)"
                )
            self.bands[int(k)] = diag
        self._csr: Optional[sp.csr_array] = None

    @classmethod
    def from_sparse(cls, matrix) -> "BandedOperator":
        matrix = sp.csr_array(matrix)
        rows, cols = matrix.shape
        if rows != cols:
            raise DimensionMismatchError(f"banded operators are square, got {matrix.shape}")
        coo = matrix.tocoo()
        offsets = np.unique(coo.col - coo.row)
        return cls(rows, {int(k): matrix.diagonal(int(k)) for k in offsets})

    @classmethod
    def diagonal(cls, values: np.ndarray) -> "BandedOperator":
        values = np.asarray(values)
        return cls(values.shape[0], {0: values})

    @property
    def bandwidth(self) -> int:
        return max((abs(k) for k in self.bands), default=0)

    @property
    def H(self) -> "BandedOperator":
        return BandedOperator(self.dim, {-k: np.conj(d) for k, d in self.bands.items()})

    def tocsr(self) -> sp.csr_array:
        if self._csr is None:
            if self.bands:
                self._csr = sp.diags_array(
                    list(self.bands.values()),
                    offsets=list(self.bands.keys()),
                    shape=(self.dim, self.dim),
                    dtype=np.complex128,
                ).tocsr()
            else:
                self._csr = sp.csr_array((self.dim, self.dim), dtype=np.complex128)
        return self._csr

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()

    def abs_row_sums(self) -> np.ndarray:
        """``sum_j |A[i, j]|`` per row; its maximum bounds the spectral radius."""
        sums = np.zeros(self.dim)
        for k, diag in self.bands.items():
            if k >= 0:
                sums[: self.dim - k] += np.abs(diag)
            else:
                sums[-k:] += np.abs(diag)
        return sums

    def norm_bound(self) -> float:
        return float(self.abs_row_sums().max(initial=0.0))

    # --- algebra ---

    def _check(self, other: "BandedOperator"):
        if other.dim != self.dim:
            raise DimensionMismatchError(f"dimension {other.dim} != {self.dim}")

    def __add__(self, other: "BandedOperator") -> "BandedOperator":
        self._check(other)
        bands = {k: d.copy() for k, d in self.bands.items()}
        for k, d in other.bands.items():
            bands[k] = bands[k] + d if k in bands else d.copy()
        return BandedOperator(self.dim, bands)

    def __neg__(self) -> "BandedOperator":
        return BandedOperator(self.dim, {k: -d for k, d in self.bands.items()})

    def __sub__(self, other: "BandedOperator") -> "BandedOperator":
        return self + (-other)

    def __mul__(self, scalar: Union[complex, float]) -> "BandedOperator":
        return BandedOperator(self.dim, {k: scalar * d for k, d in self.bands.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, BandedOperator):
            self._check(other)
            return BandedOperator.from_sparse(self.tocsr() @ other.tocsr())
        return self.left(np.asarray(other))

    # --- products against dense operands ---

    def left(self, x: np.ndarray) -> np.ndarray:
        """Return ``A @ x`` for a vector ``(d,)`` or a stack ``(..., d, m)``."""
        if x.shape[-1 if x.ndim == 1 else -2] != self.dim:
            raise DimensionMismatchError(f"operand shape {x.shape} incompatible with dim {self.dim}")
        if x.ndim == 1:
            return self.tocsr() @ x
        d = self.dim
        out = np.zeros(x.shape, dtype=np.complex128)
        for k, diag in self.bands.items():
            if k >= 0:
                out[..., : d - k, :] += diag[:, None] * x[..., k:, :]
            else:
                out[..., -k:, :] += diag[:, None] * x[..., : d + k, :]
        return out

    def right(self, x: np.ndarray) -> np.ndarray:
        """Return ``x @ A`` for a stack ``(..., m, d)``."""
        if x.ndim < 2 or x.shape[-1] != self.dim:
            raise DimensionMismatchError(f"operand shape {x.shape} incompatible with dim {self.dim}")
        d = self.dim
        out = np.zeros(x.shape, dtype=np.complex128)
        for k, diag in self.bands.items():
            if k >= 0:
                out[..., :, k:] += x[..., :, : d - k] * diag
            else:
                out[..., :, : d + k] += x[..., :, -k:] * diag
        return out

    def __repr__(self) -> str:
        return f"BandedOperator(dim={self.dim}, offsets={list(self.bands)})"
