import logging
import math
from pathlib import Path

import numpy as np

from nsdimer.analysis.bifurcation import central_depletion, observable_histogram
from nsdimer.analysis.rotation import (
    count_lobes,
    ensemble_rotation_numbers,
    observable_points,
)
from nsdimer.commands.common import (
    LARGE_RELAX_PERIODS,
    grid_points,
    integrator_metadata,
    mcwf_runtime_estimate,
    open_writer,
    require_large,
    transient_metadata,
)
from nsdimer.errors import DegenerateCloudError, UsageError
from nsdimer.physics.mcwf import run_ensemble, trajectory_bound
from nsdimer.physics.model import build_operators
from nsdimer.storage.models import RunConfig, RunManifest, TrajectoriesJob

logger = logging.getLogger(__name__)

COMMAND = "trajectories"


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: TrajectoriesJob = config.job
    u_values = grid_points(job.u_grid)
    base = job.model.params(N=job.N)
    ops = build_operators(job.N)
    bound = trajectory_bound(base.replace(U=max(u_values, key=abs)), ops)
    if job.relax_periods >= LARGE_RELAX_PERIODS:
        periods = job.relax_periods + job.measure_periods
        estimate = len(u_values) * mcwf_runtime_estimate(job.N, job.n_traj, periods, job.integrator, base.T, bound)
        require_large(config, f"trajectory relaxation of {job.relax_periods} periods", estimate / config.workers)

    summary = {k: [] for k in ("U", "mean_omega", "mode_omega", "lobes", "central_depletion", "jumps_per_period")}
    omega_hist = {"U": [], "bin_center": [], "normalized_count": []}

    with open_writer(config, base_dir) as writer:
        transients = transient_metadata(writer, job.relax_periods, job.measure_periods)
        for k, u in enumerate(u_values):
            params = base.replace(U=u)
            # every U reuses the same trajectory streams (seed, traj_id)
            ensemble = run_ensemble(
                params, ops, job.n_traj, job.relax_periods * params.T, job.measure_periods * params.T,
                config.seed, config=job.integrator, n_jobs=config.workers,
            )
            tag = f"u{k:03d}"

            obs = {"traj_id": [], "m": [], "n": [], "e": []}
            for traj_id, records in enumerate(ensemble.records):
                for r in records:
                    obs["traj_id"].append(traj_id)
                    obs["m"].append(r.m)
                    obs["n"].append(r.n)
                    obs["e"].append(r.e)
            writer.write_csv(f"observables_{tag}.csv", obs)

            points = np.vstack([observable_points(recs, job.N) for recs in ensemble.records])
            hist = observable_histogram(points, job.histogram_bins)
            xc, yc = np.meshgrid(hist.x_centers, hist.y_centers, indexing="ij")
            writer.write_csv(f"histogram_{tag}.csv", {
                "n_over_N": xc.ravel(),
                "e_over_N": yc.ravel(),
                "value": hist.counts.ravel(),
            })
            writer.write_json(f"histogram_{tag}.json", {
                "U": u,
                "x_edges": hist.x_edges.tolist(),
                "y_edges": hist.y_edges.tolist(),
                "normalization": "max",
            })

            mean_omega = mode_omega = math.nan
            lobes = 0
            try:
                rot = ensemble_rotation_numbers(ensemble.records, job.N, job.omega_bins)
            except (DegenerateCloudError, UsageError) as exc:
                writer.warn(f"U={u}: rotation numbers undefined ({exc})")
            else:
                writer.write_csv(f"rotation_{tag}.csv", {
                    "traj_id": [r.traj_id for r in rot.records],
                    "m": [r.m for r in rot.records],
                    "theta_angle": [r.theta_angle for r in rot.records],
                    "omega": [r.omega for r in rot.records],
                })
                mean_omega, mode_omega = rot.mean_omega, rot.mode_omega
                lobes = count_lobes(points, rot.frame)
                counts, edges = np.histogram([r.omega for r in rot.records], bins=job.omega_bins, range=(0.0, 1.0))
                top = counts.max()
                omega_hist["U"].extend([u] * job.omega_bins)
                omega_hist["bin_center"].extend((0.5 * (edges[:-1] + edges[1:])).tolist())
                omega_hist["normalized_count"].extend((counts / top if top else counts).tolist())

            summary["U"].append(u)
            summary["mean_omega"].append(mean_omega)
            summary["mode_omega"].append(mode_omega)
            summary["lobes"].append(lobes)
            summary["central_depletion"].append(central_depletion(hist, points))
            summary["jumps_per_period"].append(ensemble.mean_jumps_per_period)
            logger.info("U=%g: mean omega %.4f, mode %.4f, %d lobes", u, mean_omega, mode_omega, lobes)

        writer.write_csv("rotation_summary.csv", summary)
        if omega_hist["U"]:
            writer.write_csv("omega_histogram.csv", omega_hist)
        writer.add_metadata(
            N=job.N,
            n_traj=job.n_traj,
            relax_periods=job.relax_periods,
            measure_periods=job.measure_periods,
            seed_streams="Philox(SeedSequence([seed, traj_id]))",
            initial_state="fock |N>",
            reduced_transients=transients,
            integrator=integrator_metadata(job.integrator, base.T, bound),
        )
        return writer.finalize()
