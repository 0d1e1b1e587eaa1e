"""Classical mean-field reference for the modulated dimer.

Two equation forms are carried:

``printed``
    The spin and Bloch-sphere equations with the coefficients used throughout
    the literature this package reproduces, taken verbatim.
``conservative``
    The same equations derived from the dimer Hamiltonian and the V-dissipator:
    the spin flow conserves S^2 and maps exactly onto the Bloch flow (the
    tunnelling term of the azimuth equation carries ``cos(phi)``).

The printed spin and Bloch equations are not mutually consistent;
``check_consistency`` measures the mismatch instead of hiding it.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel

from nsdimer.errors import ConvergenceError, NumericalError, PoleSingularityError, UsageError
from nsdimer.physics.lindblad import IntegratorConfig
from nsdimer.physics.model import ModelParams

logger = logging.getLogger(__name__)

Form = Literal["printed", "conservative"]

POLE_GUARD = 1e-6
FD_STEP = 1e-6
HISTOGRAM_BINS = 400
DEFAULT_THETA = 2.0
DEFAULT_PHI = 0.0


@dataclass(frozen=True)
class MeanFieldState:
    theta: float
    phi: float
    time: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi])

    @property
    def site1_fraction(self) -> float:
        """n/N = (1 + cos theta)/2."""
        return 0.5 * (1.0 + math.cos(self.theta))


@dataclass(frozen=True)
class SpinState:
    sx: float
    sy: float
    sz: float

    @classmethod
    def from_bloch(cls, x: MeanFieldState) -> "SpinState":
        s = math.sin(x.theta)
        return cls(0.5 * math.cos(x.phi) * s, 0.5 * math.sin(x.phi) * s, 0.5 * math.cos(x.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz])

    @property
    def norm_sq(self) -> float:
        return self.sx**2 + self.sy**2 + self.sz**2


# --- right-hand sides ---

def _spin_deriv(params: ModelParams, s: np.ndarray, t: float, form: Form) -> np.ndarray:
    sx, sy, sz = s
    eps = params.epsilon(t)
    J, U, g = params.J, params.U, params.gamma
    if form == "printed":
        return np.array([
            2 * eps * sy - 8 * U * sz * sy + 8 * g * (sy**2 + sz**2),
            -2 * eps * sx + 8 * U * sx * sz - 2 * J * sz + 8 * g * sx * sy,
            -2 * J * sy - 8 * g * sx * sz,
        ])
    return np.array([
        2 * eps * sy - 8 * U * sz * sy + 8 * g * (sy**2 + sz**2),
        -2 * eps * sx + 8 * U * sx * sz - 2 * J * sz - 8 * g * sx * sy,
        2 * J * sy - 8 * g * sx * sz,
    ])


def spin_rhs(params: ModelParams, s: SpinState, t: float, form: Form = "printed") -> SpinState:
    return SpinState(*_spin_deriv(params, s.as_array(), t, form))


def _bloch_deriv(params: ModelParams, x: np.ndarray, t: float, form: Form) -> np.ndarray:
    theta, phi = x
    sin_t = math.sin(theta)
    if abs(sin_t) < POLE_GUARD:
        raise PoleSingularityError(f"theta={theta:.3e} within {POLE_GUARD:g} of a pole at t={t:.6g}")
    cos_t = math.cos(theta)
    sin_p, cos_p = math.sin(phi), math.cos(phi)
    J, U, g = params.J, params.U, params.gamma
    tunnel = -2 * J * cos_t / sin_t
    if form == "conservative":
        tunnel *= cos_p
    return np.array([
        -2 * J * sin_p + 4 * g * cos_p * cos_t,
        tunnel - 2 * params.epsilon(t) + 4 * U * cos_t - 4 * g * sin_p / sin_t,
    ])


def bloch_rhs(
    params: ModelParams, x: MeanFieldState, t: float, form: Form = "printed"
) -> Tuple[float, float]:
    dtheta, dphi = _bloch_deriv(params, x.as_array(), t, form)
    return float(dtheta), float(dphi)


# --- integration ---

def _rk4(
    deriv: Callable[[np.ndarray, float], np.ndarray],
    y: np.ndarray,
    t0: float,
    n_steps: int,
    h: float,
) -> np.ndarray:
    for k in range(n_steps):
        t = t0 + k * h
        k1 = deriv(y, t)
        k2 = deriv(y + 0.5 * h * k1, t + 0.5 * h)
        k3 = deriv(y + 0.5 * h * k2, t + 0.5 * h)
        k4 = deriv(y + h * k3, t + h)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise NumericalError(f"non-finite mean-field state after t={t0 + n_steps * h:.6g}")
    return y


def integrate_bloch(
    params: ModelParams,
    x0: MeanFieldState,
    config: IntegratorConfig,
    n_periods: float,
    form: Form = "printed",
) -> MeanFieldState:
    """Advance (theta, phi) over ``n_periods`` periods (may be fractional)."""
    h = config.step(params.T)
    n_steps = round(n_periods * config.steps_per_period(params.T))
    y = _rk4(lambda y, t: _bloch_deriv(params, y, t, form), x0.as_array(), x0.time, n_steps, h)
    return MeanFieldState(float(y[0]), float(y[1]), x0.time + n_steps * h)


def integrate_spin(
    params: ModelParams,
    s0: SpinState,
    t0: float,
    config: IntegratorConfig,
    n_periods: float,
    form: Form = "printed",
) -> SpinState:
    h = config.step(params.T)
    n_steps = round(n_periods * config.steps_per_period(params.T))
    y = _rk4(lambda y, t: _spin_deriv(params, y, t, form), s0.as_array(), t0, n_steps, h)
    return SpinState(*map(float, y))


def period_map(
    params: ModelParams, x: np.ndarray, config: IntegratorConfig, form: Form = "printed"
) -> np.ndarray:
    """Stroboscopic map F over one period starting at phase zero."""
    h = config.step(params.T)
    return _rk4(lambda y, t: _bloch_deriv(params, y, t, form), np.asarray(x, float), 0.0,
                config.steps_per_period(params.T), h)


def _wrap(x: np.ndarray) -> np.ndarray:
    """Fold the azimuth difference into [-pi, pi)."""
    out = np.array(x, dtype=float)
    out[1] = (out[1] + math.pi) % (2 * math.pi) - math.pi
    return out


def stroboscopic_map(
    params: ModelParams,
    x0: MeanFieldState,
    config: IntegratorConfig,
    n_iterates: int,
    form: Form = "printed",
) -> List[MeanFieldState]:
    """Iterates of F after ``config.transient_periods`` transient periods; phi in [0, 2 pi)."""
    if n_iterates < 1:
        raise UsageError(f"n_iterates must be >= 1, got {n_iterates}")
    y = x0.as_array()
    for _ in range(config.transient_periods):
        y = period_map(params, y, config, form)
    t = config.transient_periods * params.T + x0.time
    iterates = []
    for m in range(1, n_iterates + 1):
        y = period_map(params, y, config, form)
        y[1] %= 2 * math.pi
        iterates.append(MeanFieldState(float(y[0]), float(y[1]), t + m * params.T))
    return iterates


def _jacobian(params: ModelParams, x: np.ndarray, config: IntegratorConfig, form: Form) -> np.ndarray:
    jac = np.empty((2, 2))
    for j in range(2):
        dx = np.zeros(2)
        dx[j] = FD_STEP
        forward = period_map(params, x + dx, config, form)
        backward = period_map(params, x - dx, config, form)
        jac[:, j] = _wrap(forward - backward) / (2 * FD_STEP)
    return jac


def find_fixed_point(
    params: ModelParams,
    config: IntegratorConfig,
    guess: MeanFieldState,
    form: Form = "printed",
    tol: float = 1e-10,
    max_iter: int = 50,
) -> MeanFieldState:
    """Newton iteration on F(x) - x with a central-difference Jacobian."""
    x = guess.as_array()
    eye = np.eye(2)
    for it in range(max_iter):
        residual = _wrap(period_map(params, x, config, form) - x)
        norm = float(np.linalg.norm(residual))
        logger.debug("newton %d: |F(x) - x| = %.3e", it, norm)
        if norm < tol:
            return MeanFieldState(float(x[0]), float(x[1] % (2 * math.pi)))
        try:
            x = x - np.linalg.solve(_jacobian(params, x, config, form) - eye, residual)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Newton system at iteration {it}") from exc
    raise ConvergenceError(f"no fixed point within {max_iter} Newton iterations (U={params.U})")


def ns_multipliers(
    params: ModelParams,
    config: IntegratorConfig,
    x_star: MeanFieldState,
    form: Form = "printed",
) -> Tuple[complex, complex]:
    """Eigenvalues of DF at the fixed point, largest modulus first."""
    try:
        jac = _jacobian(params, x_star.as_array(), config, form)
    except PoleSingularityError as exc:
        raise NumericalError(f"Jacobian estimation failed near a pole: {exc}") from exc
    mu = np.linalg.eigvals(jac)
    mu = sorted(mu, key=lambda z: (-abs(z), -z.imag))
    return complex(mu[0]), complex(mu[1])


@dataclass
class MultiplierRow:
    U: float
    theta: float
    phi: float
    mu1: complex
    mu2: complex

    @property
    def max_modulus(self) -> float:
        return max(abs(self.mu1), abs(self.mu2))


@dataclass
class NeimarkSackerScan:
    rows: List[MultiplierRow]
    critical_U: Optional[float] = None
    crossing_phase: Optional[float] = None


def locate_neimark_sacker(
    params: ModelParams,
    config: IntegratorConfig,
    u_grid: Sequence[float],
    guess: Optional[MeanFieldState] = None,
    form: Form = "printed",
) -> NeimarkSackerScan:
    """Continue the fixed point along ``u_grid`` and find where max|mu| crosses 1."""
    guess = guess or MeanFieldState(DEFAULT_THETA, DEFAULT_PHI)
    rows: List[MultiplierRow] = []
    for u in u_grid:
        p = params.replace(U=float(u))
        x_star = find_fixed_point(p, config, guess, form)
        mu1, mu2 = ns_multipliers(p, config, x_star, form)
        rows.append(MultiplierRow(U=float(u), theta=x_star.theta, phi=x_star.phi, mu1=mu1, mu2=mu2))
        guess = x_star

    scan = NeimarkSackerScan(rows=rows)
    for prev, cur in zip(rows, rows[1:]):
        a, b = prev.max_modulus - 1.0, cur.max_modulus - 1.0
        if a < 0 <= b:
            frac = -a / (b - a)
            scan.critical_U = prev.U + frac * (cur.U - prev.U)
            scan.crossing_phase = abs(math.atan2(cur.mu1.imag, cur.mu1.real))
            break
    return scan


def classify_period(
    iterates: Sequence[MeanFieldState], tol: float = 1e-4, max_period: int = 32
) -> Optional[int]:
    """Smallest p with x_{m+p} = x_m (within tol) over the whole record, else None."""
    pts = np.array([[x.theta, x.phi] for x in iterates])
    for p in range(1, min(max_period, len(pts) - 1) + 1):
        diff = pts[p:] - pts[:-p]
        diff[:, 1] = (diff[:, 1] + math.pi) % (2 * math.pi) - math.pi
        if np.max(np.abs(diff)) < tol:
            return p
    return None


# --- consistency between the spin and Bloch representations ---

class ConsistencyReport(BaseModel):
    form: str
    sup_error: float
    s2_drift: float
    tolerance: float

    @property
    def consistent(self) -> bool:
        return self.sup_error < self.tolerance


def check_consistency(
    params: ModelParams,
    x0: MeanFieldState,
    config: IntegratorConfig,
    n_periods: int = 10,
    form: Form = "printed",
    tolerance: float = 1e-5,
    samples_per_period: int = 4,
) -> ConsistencyReport:
    """Integrate both representations from matched states and compare in S-space."""
    s = SpinState.from_bloch(x0)
    x = x0
    s2_start = s.norm_sq
    worst = 0.0
    t = x0.time
    step = 1.0 / samples_per_period
    for _ in range(n_periods * samples_per_period):
        x = integrate_bloch(params, x, config, step, form)
        s = integrate_spin(params, s, t, config, step, form)
        t = x.time
        worst = max(worst, float(np.max(np.abs(SpinState.from_bloch(x).as_array() - s.as_array()))))
    report = ConsistencyReport(form=form, sup_error=worst, s2_drift=abs(s.norm_sq - s2_start), tolerance=tolerance)
    if not report.consistent:
        logger.warning(
            "spin and Bloch equations (%s form) disagree: sup error %.3e over %d periods",
            form, worst, n_periods,
        )
    return report


# --- bifurcation diagram ---

class BifurcationTable(BaseModel):
    """Per-U histograms of n/N, each column max-normalized to 1."""

    u_values: List[float]
    bin_centers: List[float]
    columns: List[List[float]]
    failures: List[float] = []

    def rows(self):
        for u, col in zip(self.u_values, self.columns):
            for center, value in zip(self.bin_centers, col):
                yield u, center, value


def normalized_histogram(fractions: np.ndarray, bins: int = HISTOGRAM_BINS) -> np.ndarray:
    counts, _ = np.histogram(fractions, bins=bins, range=(0.0, 1.0))
    counts = counts.astype(float)
    top = counts.max() if counts.size else 0.0
    return counts / top if top > 0 else counts


def _diagram_column(
    params: ModelParams,
    x0: MeanFieldState,
    config: IntegratorConfig,
    n_iterates: int,
    bins: int,
    form: Form,
) -> Tuple[Optional[np.ndarray], List[MeanFieldState], Optional[str]]:
    # runs in a worker; a pole abort comes back as a message for the parent to log
    try:
        iterates = stroboscopic_map(params, x0, config, n_iterates, form)
    except PoleSingularityError as exc:
        return None, [], f"U={params.U:g}: trajectory reached a pole, column left empty ({exc})"
    fractions = np.array([x.site1_fraction for x in iterates])
    return normalized_histogram(fractions, bins), iterates, None


def classical_bifurcation_diagram(
    params: ModelParams,
    u_grid: Sequence[float],
    config: IntegratorConfig,
    n_iterates: int = 500,
    x0: Optional[MeanFieldState] = None,
    bins: int = HISTOGRAM_BINS,
    form: Form = "printed",
    n_jobs: int = 1,
) -> Tuple[BifurcationTable, List[List[MeanFieldState]]]:
    """Histogram of n(mT)/N = (1 + cos theta(mT))/2 per U; pole aborts leave a zero column."""
    if len(u_grid) == 0:
        raise UsageError("U grid is empty")
    x0 = x0 or MeanFieldState(DEFAULT_THETA, DEFAULT_PHI)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_diagram_column)(params.replace(U=float(u)), x0, config, n_iterates, bins, form)
        for u in u_grid
    )
    edges = np.linspace(0.0, 1.0, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    columns, failures, sections = [], [], []
    for u, (col, iterates, failure) in zip(u_grid, results):
        if col is None:
            logger.warning("%s", failure)
            failures.append(float(u))
            col = np.zeros(bins)
        columns.append(col.tolist())
        sections.append(iterates)
    table = BifurcationTable(
        u_values=[float(u) for u in u_grid],
        bin_centers=centers.tolist(),
        columns=columns,
        failures=failures,
    )
    return table, sections
