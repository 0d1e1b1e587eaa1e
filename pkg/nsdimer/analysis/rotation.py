"""Rotation numbers of stroboscopic observable clouds.

The (n/N, e/N) points are rescaled so that each coordinate's observed range
maps onto [-1, 1], re-centred on their centre of mass, and the polar angle of
consecutive points gives the instantaneous rotation number
``omega_m = ((theta_m - theta_{m-1}) / 2 pi) mod 1``.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.signal import find_peaks

from nsdimer.errors import DegenerateCloudError, UsageError
from nsdimer.physics.mcwf import ObservableRecord

logger = logging.getLogger(__name__)

OMEGA_BINS = 100
ANGLE_BINS = 72


class RotationRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    traj_id: int = 0
    m: int
    theta_angle: float
    omega: float


@dataclass(frozen=True)
class CloudFrame:
    """Affine map of the raw cloud onto [-1, 1]^2 plus the centre of mass there."""

    lo: np.ndarray
    hi: np.ndarray
    center: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "CloudFrame":
        points = np.asarray(points, dtype=float)
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = hi - lo
        scale = np.maximum(np.abs(hi), np.abs(lo))
        if np.any(span <= 1e-12 * np.maximum(scale, 1.0)):
            raise DegenerateCloudError(
                f"observable cloud has zero range (spans {span.tolist()}); fixed-point regime"
            )
        scaled = 2.0 * (points - lo) / span - 1.0
        return cls(lo=lo, hi=hi, center=scaled.mean(axis=0))

    def apply(self, points: np.ndarray) -> np.ndarray:
        scaled = 2.0 * (np.asarray(points, dtype=float) - self.lo) / (self.hi - self.lo) - 1.0
        return scaled - self.center

    def angles(self, points: np.ndarray) -> np.ndarray:
        centred = self.apply(points)
        return np.arctan2(centred[:, 1], centred[:, 0])


def circular_mean(omegas: Sequence[float]) -> float:
    z = np.mean(np.exp(2j * math.pi * np.asarray(omegas, dtype=float)))
    if abs(z) < 1e-12:
        logger.warning("rotation numbers are spread uniformly; circular mean is ill-defined")
    return float((np.angle(z) / (2 * math.pi)) % 1.0)


def histogram_mode(omegas: Sequence[float], bins: int = OMEGA_BINS) -> float:
    counts, edges = np.histogram(np.asarray(omegas, dtype=float), bins=bins, range=(0.0, 1.0))
    k = int(np.argmax(counts))
    return float(0.5 * (edges[k] + edges[k + 1]))


@dataclass
class RotationSummary:
    records: List[RotationRecord]
    mean_omega: float
    mode_omega: float
    frame: CloudFrame


def observable_points(records: Sequence[ObservableRecord], N: float = 1.0) -> np.ndarray:
    return np.array([[r.n / N, r.e / N] for r in records], dtype=float)


def _records_for(
    records: Sequence[ObservableRecord], frame: CloudFrame, N: float, traj_id: int
) -> List[RotationRecord]:
    theta = frame.angles(observable_points(records, N))
    omega = (np.diff(theta) / (2 * math.pi)) % 1.0
    return [
        RotationRecord(traj_id=traj_id, m=records[i + 1].m, theta_angle=float(theta[i + 1]), omega=float(w))
        for i, w in enumerate(omega)
    ]


def _summary(rows: List[RotationRecord], frame: CloudFrame, bins: int) -> RotationSummary:
    omegas = [r.omega for r in rows]
    return RotationSummary(
        records=rows,
        mean_omega=circular_mean(omegas),
        mode_omega=histogram_mode(omegas, bins),
        frame=frame,
    )


def rotation_numbers(
    records: Sequence[ObservableRecord],
    N: float = 1.0,
    frame: Optional[CloudFrame] = None,
    bins: int = OMEGA_BINS,
) -> RotationSummary:
    if len(records) < 2:
        raise UsageError(f"rotation numbers need at least 2 records, got {len(records)}")
    frame = frame or CloudFrame.fit(observable_points(records, N))
    return _summary(_records_for(records, frame, N, 0), frame, bins)


def ensemble_rotation_numbers(
    trajectories: Sequence[Sequence[ObservableRecord]],
    N: float = 1.0,
    bins: int = OMEGA_BINS,
) -> RotationSummary:
    """Per-trajectory records measured in one frame fitted to the pooled cloud."""
    usable = [(i, recs) for i, recs in enumerate(trajectories) if len(recs) >= 2]
    if not usable:
        raise UsageError("no trajectory has at least 2 records")
    pooled = np.vstack([observable_points(recs, N) for _, recs in usable])
    frame = CloudFrame.fit(pooled)
    rows: List[RotationRecord] = []
    for traj_id, recs in usable:
        rows.extend(_records_for(recs, frame, N, traj_id))
    return _summary(rows, frame, bins)


def count_lobes(
    points: np.ndarray,
    frame: CloudFrame,
    bins: int = ANGLE_BINS,
    prominence_fraction: float = 0.2,
) -> int:
    """Number of angular clusters of the centred cloud (peaks of a circular histogram)."""
    counts, _ = np.histogram(frame.angles(points), bins=bins, range=(-math.pi, math.pi))
    if counts.max() == 0:
        return 0
    # tile so peaks at the seam are seen once with both neighbours
    tiled = np.concatenate([counts, counts, counts]).astype(float)
    peaks, _ = find_peaks(tiled, prominence=prominence_fraction * counts.max())
    return int(np.count_nonzero((peaks >= bins) & (peaks < 2 * bins)))
