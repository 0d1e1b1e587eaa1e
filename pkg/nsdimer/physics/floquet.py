"""One-period propagator of the master equation (Floquet map) and its spectrum.

The map is assembled column by column: each basis matrix ``E_jk = |j><k|`` is
propagated over one period with the same RK4 integrator used for density
matrices, and its vectorization becomes one column. Column stacking
(``order="F"``) is the canonical convention.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed
from pydantic import BaseModel

from nsdimer.errors import MemoryCapError, NumericalError, UsageError
from nsdimer.physics.lindblad import DensityMatrix, IntegratorConfig, LindbladGenerator, rk4_propagate
from nsdimer.physics.model import DimerOperators, ModelParams, build_operators, check_dimensions

logger = logging.getLogger(__name__)

Order = Literal["F", "C"]

DEFAULT_MAX_N = 64
PAIR_TOLERANCE = 1e-8


def check_cap(N: int, max_N: int = DEFAULT_MAX_N):
    if N > max_N:
        dim = (N + 1) ** 2
        raise MemoryCapError(
            f"Floquet map for N={N} is {dim}x{dim} ({dim * dim * 16 / 2**30:.1f} GiB); "
            f"cap is N={max_N}, raise it explicitly to proceed"
        )


def vec(rho: np.ndarray, order: Order = "F") -> np.ndarray:
    return np.asarray(rho).reshape(-1, order=order)


def unvec(v: np.ndarray, dim: int, order: Order = "F") -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order=order)


def _basis_block(dim: int, columns: np.ndarray, order: Order) -> np.ndarray:
    stack = np.zeros((len(columns), dim, dim), dtype=np.complex128)
    if order == "F":
        rows, cols = columns % dim, columns // dim
    else:
        rows, cols = columns // dim, columns % dim
    stack[np.arange(len(columns)), rows, cols] = 1.0
    return stack


def _propagate_block(
    params: ModelParams,
    ops: DimerOperators,
    config: IntegratorConfig,
    columns: np.ndarray,
    order: Order,
) -> np.ndarray:
    generator = LindbladGenerator(params, ops)
    stack = _basis_block(ops.dim, columns, order)
    # basis matrices are not Hermitian, so no re-symmetrization
    out = rk4_propagate(generator, stack, 0.0, params.T, config, hermitian=False)
    if order == "F":
        return np.swapaxes(out, -1, -2).reshape(len(columns), -1).T
    return out.reshape(len(columns), -1).T


def build_floquet_map(
    params: ModelParams,
    ops: DimerOperators,
    config: IntegratorConfig,
    max_N: int = DEFAULT_MAX_N,
    order: Order = "F",
    n_jobs: int = 1,
    block_size: Optional[int] = None,
) -> np.ndarray:
    """Dense ``(N+1)^2`` square matrix with ``vec(rho(T)) = P vec(rho(0))``."""
    check_dimensions(params, ops)
    check_cap(params.N, max_N)
    if order not in ("F", "C"):
        raise UsageError(f"vectorization order must be 'F' or 'C', got {order!r}")
    size = ops.dim * ops.dim
    block_size = block_size or ops.dim
    blocks = [np.arange(s, min(s + block_size, size)) for s in range(0, size, block_size)]
    logger.info("Floquet map: N=%d, U=%g, %d columns in %d blocks", params.N, params.U, size, len(blocks))

    parts = Parallel(n_jobs=n_jobs)(
        delayed(_propagate_block)(params, ops, config, cols, order) for cols in blocks
    )
    floquet = np.hstack(parts)
    if not np.all(np.isfinite(floquet)):
        raise NumericalError(f"non-finite entries in the Floquet map (N={params.N}, U={params.U})")
    return floquet


@dataclass
class FloquetSpectrum:
    eigenvalues: np.ndarray
    gap: float
    slow_pair_phase: float
    pair_error: float
    eigenvectors: Optional[np.ndarray] = None

    @property
    def leading(self) -> complex:
        return complex(self.eigenvalues[0])

    @property
    def slow_pair(self):
        return complex(self.eigenvalues[1]), complex(self.eigenvalues[2])

    @property
    def relaxation_time(self) -> float:
        """Periods needed to relax from a generic state, ~ 1/gap."""
        return math.inf if self.gap <= 0 else 1.0 / self.gap

    @property
    def max_modulus_excess(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)) - 1.0)


def _conjugate_pair_error(mu: np.ndarray) -> float:
    """Largest distance from an eigenvalue's conjugate to its nearest partner."""
    conj = np.conj(mu)
    worst = 0.0
    for z in conj:
        worst = max(worst, float(np.min(np.abs(mu - z))))
    return worst


def floquet_spectrum(floquet: np.ndarray, with_vectors: bool = False) -> FloquetSpectrum:
    """Full dense eigendecomposition, eigenvalues by descending modulus."""
    try:
        if with_vectors:
            mu, vecs = scipy.linalg.eig(floquet)
        else:
            mu, vecs = scipy.linalg.eigvals(floquet), None
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc

    order = np.lexsort((-mu.imag, -np.abs(mu)))
    mu = mu[order]
    # keep the positive-imaginary member of the slow pair first
    if len(mu) > 2 and mu[1].imag < 0 < mu[2].imag and abs(mu[2] - np.conj(mu[1])) < 1e-6:
        order[[1, 2]] = order[[2, 1]]
        mu[[1, 2]] = mu[[2, 1]]
    if vecs is not None:
        vecs = vecs[:, order]

    pair_error = _conjugate_pair_error(mu)
    if pair_error > PAIR_TOLERANCE:
        logger.warning("Floquet eigenvalues break conjugate pairing by %.3e", pair_error)
    if abs(mu[0] - 1.0) > PAIR_TOLERANCE:
        logger.warning("leading Floquet multiplier %s differs from 1 by %.3e", mu[0], abs(mu[0] - 1.0))

    mu2 = mu[1] if len(mu) > 1 else mu[0]
    return FloquetSpectrum(
        eigenvalues=mu,
        gap=float(1.0 - abs(mu2)),
        slow_pair_phase=float(np.angle(mu2) % (2 * math.pi)),
        pair_error=pair_error,
        eigenvectors=vecs,
    )


def asymptotic_state(spectrum: FloquetSpectrum, dim: int, order: Order = "F") -> DensityMatrix:
    """Eigenmatrix of the unit multiplier, scaled to unit trace."""
    if spectrum.eigenvectors is None:
        raise UsageError("spectrum was computed without eigenvectors")
    rho = unvec(spectrum.eigenvectors[:, 0], dim, order)
    tr = np.trace(rho)
    if abs(tr) < 1e-14:
        raise NumericalError("leading Floquet eigenmatrix is traceless")
    rho = rho / tr
    return DensityMatrix(0.5 * (rho + rho.conj().T))


class GapRow(BaseModel):
    N: int
    U: float
    gap: float
    phase: float
    t_relax_estimate: float


def gap_vs_N(
    params: ModelParams,
    N_list: Sequence[int],
    config: IntegratorConfig,
    max_N: int = DEFAULT_MAX_N,
    n_jobs: int = 1,
) -> List[GapRow]:
    """Spectral gap and slow-pair phase per N at fixed U, in the order given."""
    if len(N_list) == 0:
        raise UsageError("N list is empty")
    for N in N_list:
        check_cap(N, max_N)

    rows = []
    for N in N_list:
        p = params.replace(N=int(N))
        spectrum = floquet_spectrum(build_floquet_map(p, build_operators(N), config, max_N, n_jobs=n_jobs))
        rows.append(GapRow(
            N=int(N),
            U=p.U,
            gap=spectrum.gap,
            phase=spectrum.slow_pair_phase,
            t_relax_estimate=spectrum.relaxation_time,
        ))
        logger.info("N=%d: gap=%.6g, phase=%.6g", N, spectrum.gap, spectrum.slow_pair_phase)
    return rows
