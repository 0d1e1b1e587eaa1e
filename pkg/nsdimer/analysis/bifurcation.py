"""Quantum bifurcation diagrams and stroboscopic observable histograms."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from nsdimer.errors import UsageError
from nsdimer.physics.lindblad import DensityMatrix, IntegratorConfig, StateMonitor, iter_stroboscopic
from nsdimer.physics.meanfield import BifurcationTable
from nsdimer.physics.model import ModelParams, build_operators

logger = logging.getLogger(__name__)


def _quantum_column(params: ModelParams, config: IntegratorConfig, n_periods: int) -> Tuple[np.ndarray, List[str]]:
    # runs in a worker; drift warnings travel back with the column
    ops = build_operators(params.N)
    monitor = StateMonitor(label=f"N={params.N}, U={params.U:g}")
    acc = np.zeros(ops.dim)
    for rho in iter_stroboscopic(params, ops, DensityMatrix.fock(params.N), config, n_periods, monitor):
        acc += rho.diagonal()
    top = acc.max()
    logger.debug("U=%g: accumulated %d periods, peak weight %.4g", params.U, n_periods, top)
    return (acc / top if top > 0 else acc), monitor.messages


def quantum_bifurcation_diagram(
    params: ModelParams,
    u_grid: Sequence[float],
    config: IntegratorConfig,
    n_periods: int = 100,
    n_jobs: int = 1,
) -> BifurcationTable:
    """Per-U sum of rho_nn(mT) over ``n_periods`` recorded periods; bins are n/N."""
    if len(u_grid) == 0:
        raise UsageError("U grid is empty")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_quantum_column)(params.replace(U=float(u)), config, n_periods) for u in u_grid
    )
    for _, messages in results:
        for message in messages:
            logger.warning("%s", message)
    columns = [col for col, _ in results]
    centers = np.arange(params.N + 1) / params.N
    return BifurcationTable(
        u_values=[float(u) for u in u_grid],
        bin_centers=centers.tolist(),
        columns=[col.tolist() for col in columns],
    )


@dataclass
class ObservableHistogram:
    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def y_centers(self) -> np.ndarray:
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])


def observable_histogram(
    points: np.ndarray,
    bins: int = 100,
    value_range: Optional[Sequence[Sequence[float]]] = None,
) -> ObservableHistogram:
    """2D histogram of (n/N, e/N) points, max-normalized to 1."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
        raise UsageError(f"expected a non-empty (k, 2) point array, got shape {points.shape}")
    counts, xe, ye = np.histogram2d(points[:, 0], points[:, 1], bins=bins, range=value_range)
    top = counts.max()
    return ObservableHistogram(counts / top if top > 0 else counts, xe, ye)


def central_depletion(hist: ObservableHistogram, points: np.ndarray) -> float:
    """Normalized count at the bin holding the cloud's centre of mass.

    Close to 0 for a ring (bagel), close to 1 for a single blob.
    """
    cx, cy = np.asarray(points, dtype=float).mean(axis=0)
    i = int(np.clip(np.searchsorted(hist.x_edges, cx) - 1, 0, len(hist.x_edges) - 2))
    j = int(np.clip(np.searchsorted(hist.y_edges, cy) - 1, 0, len(hist.y_edges) - 2))
    return float(hist.counts[i, j])
