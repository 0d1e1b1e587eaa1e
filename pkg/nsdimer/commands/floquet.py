import logging
from pathlib import Path

import numpy as np

from nsdimer.commands.common import integrator_metadata, open_writer, require_large
from nsdimer.physics.floquet import DEFAULT_MAX_N, build_floquet_map, check_cap, floquet_spectrum, gap_vs_N
from nsdimer.physics.lindblad import generator_bound
from nsdimer.physics.model import build_operators
from nsdimer.storage.models import FloquetJob, RunConfig, RunManifest

logger = logging.getLogger(__name__)

COMMAND = "floquet"


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: FloquetJob = config.job
    for N in [job.N, *job.N_list]:
        check_cap(N, job.max_N)
    biggest = max([job.N, *job.N_list])
    if job.max_N > DEFAULT_MAX_N and biggest > DEFAULT_MAX_N:
        # dense eigenproblem ~ d^6 with d = N + 1
        require_large(config, f"Floquet map at N={biggest}", 2e-9 * (biggest + 1) ** 6)

    params = job.model.params(N=job.N)
    ops = build_operators(job.N)
    with open_writer(config, base_dir) as writer:
        floquet = build_floquet_map(
            params, ops, job.integrator, job.max_N, job.order, n_jobs=config.workers
        )
        spectrum = floquet_spectrum(floquet)
        mu = spectrum.eigenvalues
        writer.write_csv("spectrum.csv", {
            "k": list(range(1, len(mu) + 1)),
            "re_mu": mu.real,
            "im_mu": mu.imag,
            "modulus": np.abs(mu),
        })
        mu2, mu3 = spectrum.slow_pair
        writer.write_json("spectrum.json", {
            "N": job.N,
            "U": params.U,
            "leading": [spectrum.leading.real, spectrum.leading.imag],
            "slow_pair": [[mu2.real, mu2.imag], [mu3.real, mu3.imag]],
            "slow_pair_indices": [2, 3],
            "gap": spectrum.gap,
            "slow_pair_phase": spectrum.slow_pair_phase,
            "t_relax_estimate": spectrum.relaxation_time,
            "pair_error": spectrum.pair_error,
            "vectorization": "column-stacking" if job.order == "F" else "row-stacking",
        })

        if job.N_list:
            rows = gap_vs_N(params, job.N_list, job.integrator, job.max_N, n_jobs=config.workers)
            writer.write_csv("gap_vs_N.csv", {
                "N": [r.N for r in rows],
                "U": [r.U for r in rows],
                "gap": [r.gap for r in rows],
                "phase": [r.phase for r in rows],
                "t_relax_estimate": [r.t_relax_estimate for r in rows],
            })
            gaps = [r.gap for r in rows]
            if any(b >= a for a, b in zip(gaps, gaps[1:])):
                writer.warn(f"spectral gap is not strictly decreasing over N={job.N_list}: {gaps}")

        writer.add_metadata(
            N=job.N,
            U=params.U,
            max_N=job.max_N,
            integrator=integrator_metadata(job.integrator, params.T, generator_bound(params, ops)),
        )
        return writer.finalize()
