"""N-boson two-site (dimer) operators in the fixed-N Fock sector.

Basis ``|n>``: n bosons on site 1, ``N - n`` on site 2, ``n = 0..N``.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln

from nsdimer.errors import DimensionMismatchError, UsageError
from nsdimer.physics.banded import BandedOperator

logger = logging.getLogger(__name__)


class ModelParams(BaseModel):
    """Dimer parameters in dimensionless units (hbar = 1)."""

    model_config = ConfigDict(frozen=True)

    J: float = 1.0
    U: float = 0.1125
    gamma: float = Field(default=0.1, ge=0)
    A: float = 3.4
    T: float = Field(default=2 * math.pi, gt=0)
    N: int = Field(ge=1, strict=True)

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.T

    @property
    def rate(self) -> float:
        """Dissipator prefactor gamma / N."""
        return self.gamma / self.N

    def epsilon(self, t: float) -> float:
        return self.A * math.sin(self.omega * t)

    def replace(self, **changes: Any) -> "ModelParams":
        return ModelParams(**{**self.model_dump(), **changes})


@dataclass(frozen=True)
class DimerOperators:
    N: int
    hop: BandedOperator
    imbalance: BandedOperator
    interaction: BandedOperator
    jump: BandedOperator
    site1: np.ndarray

    @property
    def dim(self) -> int:
        return self.N + 1

    @cached_property
    def jump_dag_jump(self) -> BandedOperator:
        return self.jump.H @ self.jump


def build_operators(N: int) -> DimerOperators:
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
        raise UsageError(f"particle number must be an integer, got {N!r}")
    if N < 1:
        raise UsageError(f"particle number must be >= 1, got {N}")
    N = int(N)
    n = np.arange(N + 1, dtype=np.float64)

    # <n+1| b1^dag b2 |n> = sqrt((n + 1)(N - n)); b2^dag b1 is its transpose
    raising = np.sqrt((n[:-1] + 1) * (N - n[:-1]))
    dim = N + 1

    return DimerOperators(
        N=N,
        hop=BandedOperator(dim, {-1: raising, 1: raising}),
        imbalance=BandedOperator.diagonal(N - 2 * n),
        interaction=BandedOperator.diagonal(n * (n - 1) + (N - n) * (N - n - 1)),
        # V = (b1^dag + b2^dag)(b1 - b2) = n1 - n2 - b1^dag b2 + b2^dag b1
        jump=BandedOperator(dim, {-1: -raising, 0: 2 * n - N, 1: raising}),
        site1=n,
    )


def check_dimensions(params: ModelParams, ops: DimerOperators, *arrays: np.ndarray):
    if params.N != ops.N:
        raise DimensionMismatchError(f"params.N={params.N} but operators built for N={ops.N}")
    for arr in arrays:
        if arr.shape[-1] != ops.dim or (arr.ndim > 1 and arr.shape[-2] != ops.dim):
            raise DimensionMismatchError(f"array of shape {arr.shape} in a sector of dimension {ops.dim}")


def static_hamiltonian(params: ModelParams, ops: DimerOperators) -> BandedOperator:
    """Time-independent part ``-J hop + (2U/N) interaction``."""
    return -params.J * ops.hop + (2 * params.U / params.N) * ops.interaction


def hamiltonian_at(params: ModelParams, ops: DimerOperators, t: float) -> BandedOperator:
    check_dimensions(params, ops)
    return static_hamiltonian(params, ops) + params.epsilon(t) * ops.imbalance


def hamiltonian_bound(params: ModelParams, ops: DimerOperators) -> float:
    """Upper bound on ``||H(t)||`` over a period: row sums of ``|H_0| + |A| |imbalance|``."""
    check_dimensions(params, ops)
    rows = static_hamiltonian(params, ops).abs_row_sums()
    rows += abs(params.A) * np.abs(ops.imbalance.bands[0])
    return float(rows.max())


def dissipator_apply(params: ModelParams, ops: DimerOperators, rho) -> np.ndarray:
    """(gamma/N) (V rho V^dag - 1/2 {V^dag V, rho}) for a matrix or a stack of matrices."""
    rho = np.asarray(getattr(rho, "data", rho))
    check_dimensions(params, ops, rho)
    if params.gamma == 0:
        return np.zeros(rho.shape, dtype=np.complex128)
    v = ops.jump
    k = ops.jump_dag_jump
    sandwich = v.H.right(v.left(rho))
    return params.rate * (sandwich - 0.5 * (k.left(rho) + k.right(rho)))


def symmetric_state(N: int) -> np.ndarray:
    """Normalized (b1^dag + b2^dag)^N |vac>, the dark state of V."""
    n = np.arange(N + 1)
    log_amp = 0.5 * (gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1) - N * math.log(2))
    return np.exp(log_amp).astype(np.complex128)


def fock_state(N: int, n: int) -> np.ndarray:
    psi = np.zeros(N + 1, dtype=np.complex128)
    psi[n] = 1.0
    return psi
