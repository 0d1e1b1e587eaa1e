import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from nsdimer.analysis.husimi import bagel_diameter, husimi
from nsdimer.commands.common import (
    LARGE_LINDBLAD_N,
    LARGE_RELAX_PERIODS,
    integrator_metadata,
    lindblad_runtime_estimate,
    mcwf_runtime_estimate,
    open_writer,
    require_large,
    transient_metadata,
)
from nsdimer.errors import PoleSingularityError, UsageError
from nsdimer.physics.lindblad import DensityMatrix, StateMonitor, evolve, generator_bound, relax
from nsdimer.physics.mcwf import run_ensemble, trajectory_bound
from nsdimer.physics.meanfield import MeanFieldState, stroboscopic_map
from nsdimer.physics.model import DimerOperators, ModelParams, build_operators
from nsdimer.storage.models import HusimiJob, RunConfig, RunManifest, StateSource

logger = logging.getLogger(__name__)

COMMAND = "husimi"


def asymptotic_density(
    params: ModelParams, job: HusimiJob, seed: int, workers: int, monitor: Optional[StateMonitor] = None
) -> DensityMatrix:
    """Stroboscopic state after the transient window.

    With the ``mcwf`` source the trajectory ensemble does the long relaxation and
    the Lindblad propagator only covers the final window.
    """
    ops = build_operators(params.N)
    if job.source == StateSource.lindblad:
        return relax(params, ops, job.integrator, monitor=monitor)
    ensemble = run_ensemble(
        params, ops, job.mcwf.n_traj, job.mcwf.relax_periods * params.T, 0.0, seed,
        config=job.integrator, n_jobs=workers,
    )
    rho = ensemble.rho
    return evolve(params, ops, rho, job.integrator, rho.time + job.integrator.transient_periods * params.T, monitor)


def _check_scale(config: RunConfig, job: HusimiJob, params: ModelParams, ops: DimerOperators):
    window = job.integrator.transient_periods
    if job.source == StateSource.mcwf and job.mcwf.relax_periods >= LARGE_RELAX_PERIODS:
        estimate = mcwf_runtime_estimate(
            job.N, job.mcwf.n_traj, job.mcwf.relax_periods, job.integrator, params.T, trajectory_bound(params, ops)
        )
        require_large(config, f"trajectory relaxation of {job.mcwf.relax_periods} periods", estimate / config.workers)
    if job.N > LARGE_LINDBLAD_N:
        require_large(
            config,
            f"Lindblad propagation at N={job.N}",
            lindblad_runtime_estimate(job.N, window, job.integrator, params.T, generator_bound(params, ops)),
        )


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: HusimiJob = config.job
    params = job.model.params(N=job.N)
    if params.gamma == 0:
        raise UsageError("gamma=0 has no unique asymptotic state; Husimi snapshots need dissipation")
    ops = build_operators(job.N)
    _check_scale(config, job, params, ops)

    with open_writer(config, base_dir) as writer:
        monitor = StateMonitor(label=f"N={job.N}, U={params.U:g}")
        transients = None
        if job.source == StateSource.mcwf:
            transients = transient_metadata(writer, job.mcwf.relax_periods)
        rho = asymptotic_density(params, job, config.seed, config.workers, monitor)
        grid = husimi(rho, job.grid, N=job.N, n_jobs=config.workers, monitor=monitor)
        monitor.emit()
        bagel = bagel_diameter(grid)

        theta, phi = np.meshgrid(grid.theta, grid.phi, indexing="ij")
        writer.write_csv("husimi.csv", {
            "theta": theta.ravel(),
            "phi": phi.ravel(),
            "value": grid.values.ravel(),
        })
        writer.write_json("husimi.json", {
            "grid": job.grid.model_dump(),
            "normalization": "max",
            "raw_max": grid.raw_max,
            "params": params.model_dump(),
            "snapshot_time": rho.time,
            "source": job.source.value,
            "bagel": bagel.model_dump(),
            "bagel_section_phi": math.pi / 2,
            "bagel_distance": "angular separation in theta",
        })
        if job.save_matrix:
            writer.write_matrix("rho.bin", rho)

        if job.overlay.enabled:
            x0 = MeanFieldState(job.overlay.theta, job.overlay.phi)
            try:
                iterates = stroboscopic_map(params, x0, job.integrator, job.overlay.n_iterates)
            except PoleSingularityError as exc:
                writer.warn(f"Poincare overlay skipped: {exc}")
            else:
                writer.write_csv("poincare.csv", {
                    "U": [params.U] * len(iterates),
                    "m": list(range(1, len(iterates) + 1)),
                    "theta": [x.theta for x in iterates],
                    "phi": [x.phi for x in iterates],
                })

        writer.add_metadata(
            N=job.N,
            U=params.U,
            D=bagel.D,
            is_unimodal=bagel.is_unimodal,
            integrator=integrator_metadata(job.integrator, params.T, generator_bound(params, ops)),
        )
        if transients is not None:
            writer.add_metadata(
                trajectory_integrator=integrator_metadata(job.integrator, params.T, trajectory_bound(params, ops)),
                reduced_transients=transients,
            )
        return writer.finalize()
