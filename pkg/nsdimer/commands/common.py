import logging
from pathlib import Path
from typing import List, Optional

from nsdimer.errors import UsageError
from nsdimer.physics.lindblad import IntegratorConfig
from nsdimer.storage.models import GridSpec, RunConfig
from nsdimer.storage.writer import OutputWriter

logger = logging.getLogger(__name__)

# full-scale thresholds behind --large
LARGE_LINDBLAD_N = 250
LARGE_RELAX_PERIODS = 2000
# reference trajectory windows; shorter ones are flagged as reduced transients
REFERENCE_RELAX_PERIODS = LARGE_RELAX_PERIODS
REFERENCE_MEASURE_PERIODS = 1000

# rough cost of one banded RK4 step per density-matrix element, seconds
_SECONDS_PER_ELEMENT_STEP = 4e-8


def grid_points(grid: GridSpec, name: str = "U grid") -> List[float]:
    points = grid.points()
    if not points:
        raise UsageError(f"{name} is empty")
    return points


def lindblad_runtime_estimate(N: int, periods: int, config: IntegratorConfig, T: float, bound: float = 0.0) -> float:
    steps = periods * config.steps_per_period(T, bound)
    return steps * (N + 1) ** 2 * _SECONDS_PER_ELEMENT_STEP


def mcwf_runtime_estimate(
    N: int, n_traj: int, periods: int, config: IntegratorConfig, T: float, bound: float = 0.0
) -> float:
    steps = periods * config.steps_per_period(T, bound)
    return n_traj * steps * (N + 1) * 20 * _SECONDS_PER_ELEMENT_STEP


def require_large(config: RunConfig, what: str, estimate_seconds: float):
    """Log the estimate, then refuse unless the run was acknowledged with --large."""
    logger.info("%s: estimated runtime %.0f s (%.1f h)", what, estimate_seconds, estimate_seconds / 3600)
    if not config.large:
        raise UsageError(f"{what} is a full-scale run; pass --large to proceed")


def open_writer(config: RunConfig, base_dir: Path) -> OutputWriter:
    writer = OutputWriter(base_dir, config)
    logger.info("Writing %s outputs to %s", config.command, writer.run_dir)
    return writer


def integrator_metadata(config: IntegratorConfig, T: float, bound: float = 0.0) -> dict:
    """Step actually taken; ``bound`` is the spectral bound that caps it, 0 for the classical map."""
    return {
        "dt": config.step(T, bound),
        "steps_per_period": config.steps_per_period(T, bound),
        "transient_periods": config.transient_periods,
        "stability_factor": config.stability_factor,
        "spectral_bound": bound,
    }


def transient_metadata(writer: OutputWriter, relax_periods: int, measure_periods: Optional[int] = None) -> dict:
    """Trajectory windows against the reference lengths, warning when they are shorter."""
    reduced = relax_periods < REFERENCE_RELAX_PERIODS or (
        measure_periods is not None and measure_periods < REFERENCE_MEASURE_PERIODS
    )
    if reduced:
        window = f"relax {relax_periods} T" + ("" if measure_periods is None else f", measure {measure_periods} T")
        writer.warn(
            f"reduced transients: {window} (reference relax {REFERENCE_RELAX_PERIODS} T, "
            f"measure {REFERENCE_MEASURE_PERIODS} T); statistics may not be asymptotic"
        )
    return {
        "reduced": reduced,
        "relax_periods": relax_periods,
        "measure_periods": measure_periods,
        "reference_relax_periods": REFERENCE_RELAX_PERIODS,
        "reference_measure_periods": REFERENCE_MEASURE_PERIODS,
    }
