"""Render the CSV outputs of an nsdimer run directory to PNG files.

Usage:
    python -m scripts.plot_outputs output/husimi-<hash> [--dpi 150]

Each known output (bifurcation diagrams, Husimi grids, observable histograms,
Floquet spectra, D(U) curves) found in the directory gets one figure next to it.
"""

import argparse
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pyarrow.csv as pacsv  # noqa: E402

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def figure_size(width_pt: float = 500.0, ratio: float = GOLDEN):
    width = width_pt / 72.27
    return [width, width * ratio]


plt.rcParams.update({
    "font.family": "serif",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": figure_size(),
})


def read(path: Path) -> dict:
    return {k: np.asarray(v) for k, v in pacsv.read_csv(path).to_pydict().items()}


def _grid(x: np.ndarray, y: np.ndarray, v: np.ndarray):
    xs, ys = np.unique(x), np.unique(y)
    return xs, ys, v.reshape(len(xs), len(ys))


# --- Renderers ---

def plot_bifurcation(path: Path, out: Path, dpi: int):
    cols = read(path)
    us, centers, values = _grid(cols["U"], cols["bin_center"], cols["normalized_count"])
    fig, ax = plt.subplots()
    ax.pcolormesh(us, centers, values.T, cmap="magma_r", shading="nearest")
    ax.set_xlabel("U")
    ax.set_ylabel("n/N")
    fig.savefig(out, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def plot_husimi(path: Path, out: Path, dpi: int):
    cols = read(path)
    theta, phi, values = _grid(cols["theta"], cols["phi"], cols["value"])
    fig, ax = plt.subplots()
    ax.pcolormesh(phi, theta, values, cmap="viridis", shading="nearest")
    poincare = path.with_name("poincare.csv")
    if poincare.exists():
        pts = read(poincare)
        ax.plot(pts["phi"], pts["theta"], "w.", ms=1.5)
    ax.set_xlabel("phi")
    ax.set_ylabel("theta")
    ax.invert_yaxis()
    fig.savefig(out, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def plot_histogram(path: Path, out: Path, dpi: int):
    cols = read(path)
    x, y, values = _grid(cols["n_over_N"], cols["e_over_N"], cols["value"])
    fig, ax = plt.subplots()
    ax.pcolormesh(x, y, values.T, cmap="Greys", shading="nearest")
    ax.set_xlabel("n/N")
    ax.set_ylabel("e/N")
    fig.savefig(out, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def plot_spectrum(path: Path, out: Path, dpi: int):
    cols = read(path)
    fig, ax = plt.subplots(figsize=figure_size(300.0, 1.0))
    t = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(t), np.sin(t), "k-", lw=0.5)
    ax.plot(cols["re_mu"], cols["im_mu"], "b.", ms=2)
    ax.plot(cols["re_mu"][1:3], cols["im_mu"][1:3], "ro", ms=4)
    ax.set_aspect("equal")
    ax.set_xlabel("Re mu")
    ax.set_ylabel("Im mu")
    fig.savefig(out, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def plot_diameter(path: Path, out: Path, dpi: int):
    cols = read(path)
    fig, ax = plt.subplots()
    for N in np.unique(cols["N"]):
        sel = cols["N"] == N
        ax.plot(cols["U"][sel], cols["D"][sel], "o-", ms=3, label=f"N={N}")
    ax.set_xlabel("U")
    ax.set_ylabel("D")
    ax.legend()
    fig.savefig(out, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


RENDERERS = {
    "bifurcation.csv": plot_bifurcation,
    "husimi.csv": plot_husimi,
    "spectrum.csv": plot_spectrum,
    "diameter.csv": plot_diameter,
}


def main():
    parser = argparse.ArgumentParser(description="Plot nsdimer run outputs")
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args()

    manifest = json.loads((args.run_dir / "manifest.json").read_text())
    for entry in manifest["outputs"]:
        path = args.run_dir / entry["path"]
        renderer = RENDERERS.get(path.name)
        if renderer is None and path.name.startswith("histogram_") and path.suffix == ".csv":
            renderer = plot_histogram
        if renderer is None:
            continue
        out = path.with_suffix(".png")
        renderer(path, out, args.dpi)
        logger.info("Rendered %s", out)


if __name__ == "__main__":
    main()
