import logging
from pathlib import Path
from typing import List, Tuple

from joblib import Parallel, delayed

from nsdimer.analysis.husimi import HusimiGridSpec, bagel_diameter, husimi
from nsdimer.commands.common import (
    LARGE_LINDBLAD_N,
    grid_points,
    integrator_metadata,
    lindblad_runtime_estimate,
    open_writer,
    require_large,
)
from nsdimer.errors import UsageError
from nsdimer.physics.lindblad import IntegratorConfig, StateMonitor, generator_bound, relax
from nsdimer.physics.model import ModelParams, build_operators
from nsdimer.storage.models import BagelDiameterJob, RunConfig, RunManifest

logger = logging.getLogger(__name__)

COMMAND = "bagel-diameter"


def measure_point(
    params: ModelParams, config: IntegratorConfig, grid: HusimiGridSpec, prominence_fraction: float
) -> Tuple[float, bool, List[str]]:
    """Bagel diameter at one (N, U); runs in a worker, so drift warnings come back as messages."""
    monitor = StateMonitor(label=f"N={params.N}, U={params.U:g}")
    rho = relax(params, build_operators(params.N), config, monitor=monitor)
    measure = bagel_diameter(husimi(rho, grid, N=params.N, monitor=monitor), prominence_fraction=prominence_fraction)
    return measure.D, measure.is_unimodal, monitor.messages


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: BagelDiameterJob = config.job
    u_values = grid_points(job.u_grid)
    if not job.N_list:
        raise UsageError("N list is empty")
    base = job.model.params()
    if base.gamma == 0:
        raise UsageError("gamma=0 has no unique asymptotic state; Husimi snapshots need dissipation")
    u_top = max(u_values, key=abs)
    bounds = {N: generator_bound(job.model.params(N=N, U=u_top), build_operators(N)) for N in job.N_list}
    biggest = max(job.N_list)
    if biggest > LARGE_LINDBLAD_N:
        estimate = len(u_values) * sum(
            lindblad_runtime_estimate(N, job.integrator.transient_periods, job.integrator, base.T, bounds[N])
            for N in job.N_list
        )
        require_large(config, f"bagel sweep up to N={biggest}", estimate / config.workers)

    points = [(N, u) for N in job.N_list for u in u_values]
    with open_writer(config, base_dir) as writer:
        results = Parallel(n_jobs=config.workers)(
            delayed(measure_point)(job.model.params(N=N, U=u), job.integrator, job.grid, job.prominence_fraction)
            for N, u in points
        )
        for _, _, messages in results:
            for message in messages:
                writer.warn(message)
        writer.write_csv("diameter.csv", {
            "U": [u for _, u in points],
            "N": [N for N, _ in points],
            "D": [r[0] for r in results],
            "is_unimodal": [r[1] for r in results],
        })

        onset = {}
        for (N, u), (D, _, _) in zip(points, results):
            if D > 0 and str(N) not in onset:
                onset[str(N)] = u
        writer.add_metadata(
            onset_U=onset,
            prominence_fraction=job.prominence_fraction,
            section_phi="pi/2",
            distance="angular separation in theta",
            # step taken at the largest N
            integrator=integrator_metadata(job.integrator, base.T, bounds[biggest]),
        )
        return writer.finalize()
