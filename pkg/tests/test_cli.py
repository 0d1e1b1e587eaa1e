import json
import math

import pyarrow.csv as pacsv
import pytest

import nsdimer.main as cli
from nsdimer.config import settings
from nsdimer.errors import OutputIntegrityError
from nsdimer.main import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main

COARSE = [
    "--set", f"integrator.dt={2 * math.pi / 200}",
    "--set", "integrator.transient_periods=0",
]

TINY_SWEEP = [
    "meanfield-sweep",
    *COARSE,
    "--set", "u_grid.values=[0.1,0.2]",
    "--set", "n_iterates=5",
    "--set", "bins=10",
    "--set", "theta0=1.2",
    "--set", "phi0=0.4",
]


def run_dir(out, command):
    (path,) = out.glob(f"{command}-*")
    return path


def manifest(out, command):
    return json.loads((run_dir(out, command) / "manifest.json").read_text())


def test_meanfield_sweep_writes_outputs(tmp_path):
    assert main([*TINY_SWEEP, "--out", str(tmp_path)]) == EXIT_OK
    table = pacsv.read_csv(run_dir(tmp_path, "meanfield-sweep") / "bifurcation.csv").to_pydict()
    assert len(table["U"]) == 20
    assert set(table["U"]) == {0.1, 0.2}
    assert {e["path"] for e in manifest(tmp_path, "meanfield-sweep")["outputs"]} == {"bifurcation.csv", "poincare.csv"}


def test_rerun_into_same_directory(tmp_path):
    assert main([*TINY_SWEEP, "--out", str(tmp_path)]) == EXIT_OK
    assert main([*TINY_SWEEP, "--out", str(tmp_path)]) == EXIT_OK
    assert len(list(tmp_path.glob("meanfield-sweep-*"))) == 1


def test_flags_override_config_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"seed": 1, "job": {"command": "meanfield-sweep", "n_iterates": 7}}))
    out = tmp_path / "out"
    assert main([*TINY_SWEEP, "--config", str(config), "--seed", "9", "--out", str(out)]) == EXIT_OK
    recorded = manifest(out, "meanfield-sweep")["config"]
    assert recorded["seed"] == 9
    # --set is applied after the file
    assert recorded["job"]["n_iterates"] == 5


def test_output_dir_from_settings(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "output_dir", tmp_path / "env-out")
    assert main(TINY_SWEEP) == EXIT_OK
    assert run_dir(tmp_path / "env-out", "meanfield-sweep").is_dir()


@pytest.mark.parametrize(
    "argv",
    [
        ["meanfield-sweep", "--set", "u_grid.values=[]"],
        ["husimi", "--set", "model.gamma=0", "--set", "N=4"],
        ["floquet", "--set", "N=200"],
        ["floquet", "--set", "N=0"],
        ["floquet", "--set", "N_list=[4,100]"],
        ["quantum-bifurcation", "--set", "N=300"],
        ["meanfield-sweep", "--set", "novalue"],
    ],
)
def test_usage_errors_write_nothing(tmp_path, argv):
    out = tmp_path / "out"
    assert main([*argv, "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_config_for_another_command(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"job": {"command": "husimi"}}))
    assert main(["floquet", "--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_unreadable_config(tmp_path):
    assert main(["floquet", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as excinfo:
        main(["plot"])
    assert excinfo.value.code == 2


def test_numerical_blow_up_exit_code(tmp_path):
    argv = [
        "quantum-bifurcation",
        "--set", "N=10",
        "--set", "u_grid.values=[50]",
        "--set", f"integrator.dt={2 * math.pi}",
        "--set", "integrator.stability_factor=null",
        "--set", "n_periods=5",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_NUMERICAL


def test_trajectories_are_byte_reproducible(tmp_path):
    argv = [
        "trajectories",
        "--set", f"integrator.dt={2 * math.pi / 100}",
        "--set", "N=2",
        "--set", "u_grid.values=[0.1]",
        "--set", "n_traj=3",
        "--set", "relax_periods=1",
        "--set", "measure_periods=6",
        "--set", "histogram_bins=8",
        "--seed", "5",
    ]
    first, second = tmp_path / "a", tmp_path / "b"
    assert main([*argv, "--out", str(first)]) == EXIT_OK
    assert main([*argv, "--out", str(second)]) == EXIT_OK

    one = manifest(first, "trajectories")
    two = manifest(second, "trajectories")
    assert one["config_hash"] == two["config_hash"]
    assert [e["sha256"] for e in one["outputs"]] == [e["sha256"] for e in two["outputs"]]
    assert "observables_u000.csv" in {e["path"] for e in one["outputs"]}

    observables = pacsv.read_csv(run_dir(first, "trajectories") / "observables_u000.csv").to_pydict()
    assert len(observables["m"]) == 18

    # 1 + 6 periods is far below the reference windows
    assert one["metadata"]["reduced_transients"]["reduced"] is True
    assert any(w.startswith("reduced transients") for w in one["warnings"])


def test_trajectory_blow_up_exit_code(tmp_path):
    argv = [
        "trajectories",
        "--set", "N=10",
        "--set", "u_grid.values=[50]",
        "--set", f"integrator.dt={2 * math.pi}",
        "--set", "integrator.stability_factor=null",
        "--set", "n_traj=2",
        "--set", "relax_periods=0",
        "--set", "measure_periods=100",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_NUMERICAL


def test_output_integrity_exit_code(tmp_path, monkeypatch):
    def broken(config, base_dir):
        raise OutputIntegrityError("files without manifest entries")

    monkeypatch.setitem(cli.COMMANDS, "floquet", broken)
    assert main(["floquet", "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_rerun_replaces_leftovers_of_an_interrupted_run(tmp_path):
    assert main([*TINY_SWEEP, "--out", str(tmp_path)]) == EXIT_OK
    previous = run_dir(tmp_path, "meanfield-sweep")
    (previous / "manifest.json").unlink()
    (previous / "stale.csv").write_text("U\n0.3\n")
    assert main([*TINY_SWEEP, "--out", str(tmp_path)]) == EXIT_OK
    assert not (previous / "stale.csv").exists()
    assert {e["path"] for e in manifest(tmp_path, "meanfield-sweep")["outputs"]} == {"bifurcation.csv", "poincare.csv"}


def test_meanfield_sweep_reports_consistency_and_periods(tmp_path):
    # weak drive keeps theta away from the poles for both forms
    assert main([*TINY_SWEEP, "--set", "model.A=0.5", "--out", str(tmp_path)]) == EXIT_OK
    metadata = manifest(tmp_path, "meanfield-sweep")["metadata"]
    consistency = metadata["consistency"]
    assert consistency["U"] == 0.1
    assert {"printed", "conservative"} <= set(consistency)
    for form in ("printed", "conservative"):
        assert consistency[form]["form"] == form
        assert consistency[form]["sup_error"] >= 0
    assert metadata["periods"]["U"] == [0.1, 0.2]
    assert len(metadata["periods"]["period"]) == 2


SMALL_HUSIMI = [
    "husimi",
    *COARSE,
    "--set", "N=4",
    "--set", "grid.n_theta=16",
    "--set", "grid.n_phi=16",
    "--set", "overlay.n_iterates=3",
]


def test_husimi_from_master_equation(tmp_path):
    assert main([*SMALL_HUSIMI, "--set", "integrator.transient_periods=2", "--out", str(tmp_path)]) == EXIT_OK
    record = manifest(tmp_path, "husimi")
    assert {e["path"] for e in record["outputs"]} == {"husimi.csv", "husimi.json", "poincare.csv"}
    table = pacsv.read_csv(run_dir(tmp_path, "husimi") / "husimi.csv").to_pydict()
    assert len(table["value"]) == 256
    assert max(table["value"]) == pytest.approx(1.0)
    integrator = record["metadata"]["integrator"]
    assert integrator["spectral_bound"] > 0
    assert integrator["steps_per_period"] >= 200
    assert "reduced_transients" not in record["metadata"]


def test_husimi_from_trajectories(tmp_path):
    argv = [
        *SMALL_HUSIMI,
        "--set", "source=mcwf",
        "--set", "mcwf.n_traj=3",
        "--set", "mcwf.relax_periods=2",
        "--set", "save_matrix=true",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    record = manifest(tmp_path, "husimi")
    assert "rho.bin" in {e["path"] for e in record["outputs"]}
    assert record["metadata"]["reduced_transients"]["relax_periods"] == 2
    assert any(w.startswith("reduced transients") for w in record["warnings"])


def test_floquet_writes_spectrum(tmp_path):
    argv = ["floquet", *COARSE, "--set", "N=3", "--set", "N_list=[2,3]", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    outputs = {e["path"] for e in manifest(tmp_path, "floquet")["outputs"]}
    assert outputs == {"spectrum.csv", "spectrum.json", "gap_vs_N.csv"}
    spectrum = pacsv.read_csv(run_dir(tmp_path, "floquet") / "spectrum.csv").to_pydict()
    assert len(spectrum["k"]) == 16
    assert max(spectrum["modulus"]) == pytest.approx(1.0, abs=1e-6)


def test_bagel_diameter_writes_table(tmp_path):
    argv = [
        "bagel-diameter",
        *COARSE,
        "--set", "integrator.transient_periods=2",
        "--set", "N_list=[3,4]",
        "--set", "u_grid.values=[0.1]",
        "--set", "grid.n_theta=16",
        "--set", "grid.n_phi=16",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    table = pacsv.read_csv(run_dir(tmp_path, "bagel-diameter") / "diameter.csv").to_pydict()
    assert table["N"] == [3, 4]
    assert all(d >= 0 for d in table["D"])


def test_quantum_bifurcation_writes_table(tmp_path):
    argv = [
        "quantum-bifurcation",
        *COARSE,
        "--set", "N=3",
        "--set", "u_grid.values=[0.0,0.2]",
        "--set", "n_periods=2",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    table = pacsv.read_csv(run_dir(tmp_path, "quantum-bifurcation") / "bifurcation.csv").to_pydict()
    assert len(table["U"]) == 8
    assert table["bin_center"][:4] == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0])


def test_worker_drift_warnings_reach_the_manifest(tmp_path, monkeypatch):
    # a tolerance above 0 flags every snapshot
    monkeypatch.setattr("nsdimer.physics.lindblad.POSITIVITY_TOLERANCE", -1.0)
    argv = [
        "bagel-diameter",
        *COARSE,
        "--set", "integrator.transient_periods=1",
        "--set", "N_list=[3]",
        "--set", "u_grid.values=[0.1]",
        "--set", "grid.n_theta=8",
        "--set", "grid.n_phi=8",
        "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    warnings = manifest(tmp_path, "bagel-diameter")["warnings"]
    assert any(w.startswith("positivity drift") and "N=3, U=0.1" in w for w in warnings)
