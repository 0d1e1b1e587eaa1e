import logging
from pathlib import Path

from nsdimer.commands.common import grid_points, integrator_metadata, open_writer
from nsdimer.errors import NumericalError, PoleSingularityError
from nsdimer.physics.lindblad import IntegratorConfig
from nsdimer.physics.meanfield import (
    MeanFieldState,
    check_consistency,
    classical_bifurcation_diagram,
    classify_period,
    locate_neimark_sacker,
)
from nsdimer.physics.model import ModelParams
from nsdimer.storage.models import MeanFieldForm, MeanFieldSweepJob, RunConfig, RunManifest
from nsdimer.storage.writer import OutputWriter

logger = logging.getLogger(__name__)

COMMAND = "meanfield-sweep"


def _write_multipliers(writer: OutputWriter, job: MeanFieldSweepJob, u_values, start: MeanFieldState) -> dict:
    try:
        scan = locate_neimark_sacker(job.model.params(), job.integrator, u_values, start, job.form.value)
    except NumericalError as exc:
        writer.warn(f"Neimark-Sacker scan stopped: {exc}")
        return {}
    writer.write_csv("multipliers.csv", {
        "U": [r.U for r in scan.rows],
        "theta": [r.theta for r in scan.rows],
        "phi": [r.phi for r in scan.rows],
        "re_mu1": [r.mu1.real for r in scan.rows],
        "im_mu1": [r.mu1.imag for r in scan.rows],
        "re_mu2": [r.mu2.real for r in scan.rows],
        "im_mu2": [r.mu2.imag for r in scan.rows],
    })
    return {"critical_U": scan.critical_U, "crossing_phase": scan.crossing_phase}


def _consistency(params: ModelParams, x0: MeanFieldState, config: IntegratorConfig, writer: OutputWriter) -> dict:
    """Spin against Bloch integration for both right-hand-side forms, keyed by form."""
    reports = {}
    for form in MeanFieldForm:
        try:
            report = check_consistency(params, x0, config, form=form.value)
        except PoleSingularityError as exc:
            writer.warn(f"consistency check ({form.value} form) skipped: {exc}")
            continue
        reports[form.value] = {**report.model_dump(), "consistent": report.consistent}
    return reports


def run(config: RunConfig, base_dir: Path) -> RunManifest:
    job: MeanFieldSweepJob = config.job
    u_values = grid_points(job.u_grid)
    params = job.model.params()
    x0 = MeanFieldState(job.theta0, job.phi0)

    with open_writer(config, base_dir) as writer:
        table, sections = classical_bifurcation_diagram(
            params, u_values, job.integrator, job.n_iterates, x0, job.bins, job.form.value,
            n_jobs=config.workers,
        )

        rows = list(table.rows())
        writer.write_csv("bifurcation.csv", {
            "U": [r[0] for r in rows],
            "bin_center": [r[1] for r in rows],
            "normalized_count": [r[2] for r in rows],
        })

        if job.write_sections:
            cols = {"U": [], "m": [], "theta": [], "phi": []}
            for u, iterates in zip(u_values, sections):
                for m, x in enumerate(iterates, start=1):
                    cols["U"].append(u)
                    cols["m"].append(m)
                    cols["theta"].append(x.theta)
                    cols["phi"].append(x.phi)
            writer.write_csv("poincare.csv", cols)

        periods = [classify_period(iterates) if iterates else None for iterates in sections]
        writer.add_metadata(
            form=job.form.value,
            initial_state={"theta": x0.theta, "phi": x0.phi},
            n_iterates=job.n_iterates,
            bins=job.bins,
            failed_U=table.failures,
            # None: no period up to 32 (torus or chaos) or a pole abort
            periods={"U": list(table.u_values), "period": periods},
            consistency={"U": u_values[0], **_consistency(params.replace(U=u_values[0]), x0, job.integrator, writer)},
            integrator=integrator_metadata(job.integrator, params.T),
        )

        if job.ns_scan:
            # Newton starts from the settled end of the first section
            start = sections[0][-1] if sections[0] else x0
            writer.add_metadata(**_write_multipliers(writer, job, u_values, MeanFieldState(start.theta, start.phi)))

        return writer.finalize()
