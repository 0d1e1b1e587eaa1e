"""Husimi distribution over SU(2) coherent states and the bagel diameter."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, field_validator
from scipy.signal import find_peaks
from scipy.special import gammaln, xlogy

from nsdimer.errors import DimensionMismatchError, UsageError
from nsdimer.physics.lindblad import StateMonitor

logger = logging.getLogger(__name__)

PROMINENCE_FRACTION = 0.05
NEGATIVE_TOLERANCE = 1e-12


def coherent_amplitudes(N: int, theta: np.ndarray) -> np.ndarray:
    """Real moduli ``sqrt(C(N, j)) cos(theta/2)^j sin(theta/2)^(N-j)``, shape (len(theta), N+1).

    Evaluated in log space; ``C(500, 250)`` alone overflows a double.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    j = np.arange(N + 1)
    log_binom = 0.5 * (gammaln(N + 1) - gammaln(j + 1) - gammaln(N - j + 1))
    c = np.abs(np.cos(0.5 * theta))[:, None]
    s = np.abs(np.sin(0.5 * theta))[:, None]
    with np.errstate(divide="ignore"):
        log_amp = log_binom + xlogy(j, c) + xlogy(N - j, s)
    return np.exp(log_amp)


def coherent_state(N: int, theta: float, phi: float) -> np.ndarray:
    j = np.arange(N + 1)
    return coherent_amplitudes(N, theta)[0] * np.exp(1j * (N - j) * phi)


class HusimiGridSpec(BaseModel):
    n_theta: int = Field(default=256, ge=2)
    n_phi: int = Field(default=256, ge=4)

    @field_validator("n_phi")
    @classmethod
    def pin_quarter_turn(cls, v: int) -> int:
        if v % 4:
            raise ValueError(f"n_phi must be a multiple of 4 so that phi = pi/2 is a grid line, got {v}")
        return v

    def theta_grid(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * math.pi / self.n_theta

    def phi_grid(self) -> np.ndarray:
        return 2 * math.pi * np.arange(self.n_phi) / self.n_phi


@dataclass
class HusimiGrid:
    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    raw_max: float = 0.0
    spec: Optional[HusimiGridSpec] = None

    def phi_index(self, phi: float) -> int:
        k = int(np.argmin(np.abs((self.phi - phi + math.pi) % (2 * math.pi) - math.pi)))
        if abs(self.phi[k] - phi) > 1e-9:
            raise UsageError(f"phi={phi} is not a grid line of this Husimi grid")
        return k

    def slice_at(self, phi: float = math.pi / 2) -> np.ndarray:
        return self.values[:, self.phi_index(phi)]


def _husimi_columns(rho: np.ndarray, amp: np.ndarray, phis: np.ndarray) -> np.ndarray:
    N = rho.shape[0] - 1
    j = np.arange(N + 1)
    rho_t = rho.T
    out = np.empty((amp.shape[0], len(phis)))
    for k, phi in enumerate(phis):
        c = amp * np.exp(1j * (N - j) * phi)
        out[:, k] = np.einsum("ij,ij->i", c.conj(), c @ rho_t).real
    return out


def husimi(
    rho,
    grid_spec: Optional[HusimiGridSpec] = None,
    N: Optional[int] = None,
    n_jobs: int = 1,
    monitor: Optional[StateMonitor] = None,
) -> HusimiGrid:
    """``Re <theta, phi| rho |theta, phi>`` on the grid, clipped at 0 and scaled to max 1.

    Clipping of negative values is logged, or noted on ``monitor`` when one is given.
    """
    rho = np.asarray(getattr(rho, "data", rho), dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatchError(f"density matrix must be square, got {rho.shape}")
    if N is not None and rho.shape[0] != N + 1:
        raise DimensionMismatchError(f"density matrix of dimension {rho.shape[0]} for N={N}")
    spec = grid_spec or HusimiGridSpec()
    theta, phi = spec.theta_grid(), spec.phi_grid()
    amp = coherent_amplitudes(rho.shape[0] - 1, theta)

    chunks = np.array_split(phi, max(1, n_jobs))
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_husimi_columns)(rho, amp, chunk) for chunk in chunks if len(chunk)
    )
    values = np.hstack(parts)

    top = float(values.max())
    low = float(values.min())
    if low < -NEGATIVE_TOLERANCE * max(top, 1.0):
        message = f"Husimi values down to {low:.3e} clipped at 0; state may have lost positivity"
        if monitor is not None:
            monitor.note(message)
        else:
            logger.warning("%s", message)
    values = np.clip(values, 0.0, None)
    if top > 0:
        values /= top
    return HusimiGrid(theta=theta, phi=phi, values=values, raw_max=top, spec=spec)


class BagelMeasure(BaseModel):
    D: float
    is_unimodal: bool
    peaks: List[float] = []
    prominence_fraction: float = PROMINENCE_FRACTION


def slice_diameter(
    theta: np.ndarray, values: np.ndarray, prominence_fraction: float = PROMINENCE_FRACTION
) -> BagelMeasure:
    """Separation in theta of the two most prominent interior maxima of a slice."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise UsageError("empty Husimi slice")
    top = float(values.max())
    if top <= 0:
        return BagelMeasure(D=0.0, is_unimodal=True, prominence_fraction=prominence_fraction)
    idx, props = find_peaks(values, prominence=prominence_fraction * top)
    if len(idx) < 2:
        return BagelMeasure(
            D=0.0,
            is_unimodal=True,
            peaks=[float(theta[i]) for i in idx],
            prominence_fraction=prominence_fraction,
        )
    best = np.argsort(props["prominences"], kind="stable")[::-1][:2]
    a, b = sorted(float(theta[idx[i]]) for i in best)
    return BagelMeasure(D=b - a, is_unimodal=False, peaks=[a, b], prominence_fraction=prominence_fraction)


def bagel_diameter(
    grid: HusimiGrid, phi: float = math.pi / 2, prominence_fraction: float = PROMINENCE_FRACTION
) -> BagelMeasure:
    if grid.values.size == 0:
        raise UsageError("empty Husimi grid")
    return slice_diameter(grid.theta, grid.slice_at(phi), prominence_fraction)
