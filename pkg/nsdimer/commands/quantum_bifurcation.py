import logging
from pathlib import Path

from nsdimer.analysis.bifurcation import quantum_bifurcation_diagram
from nsdimer.commands.common import (
    LARGE_LINDBLAD_N,
    grid_points,
    integrator_metadata,
    lindblad_runtime_estimate,
    open_writer,
    require_large,
)
from nsdimer.physics.lindblad import generator_bound
from nsdimer.physics.model import build_operators
from nsdimer.storage.models import QuantumBifurcationJob, RunConfig, RunManifest

logger = logging.getLogger(__name__)

COMMAND = "quantum-bifurcation"


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: QuantumBifurcationJob = config.job
    u_values = grid_points(job.u_grid)
    params = job.model.params(N=job.N)
    periods = job.integrator.transient_periods + job.n_periods
    bound = generator_bound(params.replace(U=max(u_values, key=abs)), build_operators(job.N))
    if job.N > LARGE_LINDBLAD_N:
        estimate = len(u_values) * lindblad_runtime_estimate(job.N, periods, job.integrator, params.T, bound)
        require_large(config, f"Lindblad sweep at N={job.N}", estimate / config.workers)

    with open_writer(config, base_dir) as writer:
        table = quantum_bifurcation_diagram(
            params, u_values, job.integrator, job.n_periods, n_jobs=config.workers
        )
        rows = list(table.rows())
        writer.write_csv("bifurcation.csv", {
            "U": [r[0] for r in rows],
            "bin_center": [r[1] for r in rows],
            "normalized_count": [r[2] for r in rows],
        })
        writer.add_metadata(
            N=job.N,
            n_periods=job.n_periods,
            initial_state="fock |N>",
            integrator=integrator_metadata(job.integrator, params.T, bound),
        )
        return writer.finalize()
