"""Target segmentation and localization metrics for reconstructed volumes."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, NoTargetsFound
from .voxel import VoxelGrid

DEFAULT_THRESHOLD = 0.70
TRUE_LONGEST_SIDE = 0.255
_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class TargetMetrics:
    truth: tuple
    centroid: tuple | None
    le: float
    scaled_le: float
    max_sigma: float


@dataclass(frozen=True)
class MetricsReport:
    targets: tuple
    threshold_frac: float
    n_components: int

    def to_dict(self) -> dict:
        return {
            "threshold_frac": self.threshold_frac,
            "n_components": self.n_components,
            "targets": [{k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in asdict(t).items()}
                        for t in self.targets],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> dict:
        row = {"threshold_frac": self.threshold_frac, "n_components": self.n_components}
        for i, t in enumerate(self.targets, 1):
            row[f"scaled_le_{i}"] = t.scaled_le
            row[f"max_sigma_{i}"] = t.max_sigma
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(buf, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def segment(recon: VoxelGrid, threshold_frac: float = DEFAULT_THRESHOLD):
    """6-connected components of ``recon >= threshold_frac * max``.

    Returns the label array, the component count and the centroids (K x 3,
    mean position of the voxels of each component).
    """
    v = recon.values
    labels, n = ndimage.label(v >= threshold_frac * v.max(), structure=_SIX_CONNECTED)
    if n == 0:
        raise NoTargetsFound("no voxel reaches the segmentation threshold")
    idx = np.arange(1, n + 1)
    axes = recon.axes()
    cent = np.column_stack([
        np.asarray(ndimage.mean(np.broadcast_to(ax.reshape([-1 if k == a else 1 for k in range(3)]), v.shape),
                                labels, idx))
        for a, ax in enumerate(axes)
    ])
    return labels, n, cent


def evaluate_recon(recon: VoxelGrid, truth_centers, threshold_frac: float = DEFAULT_THRESHOLD,
                   scale_length: float = TRUE_LONGEST_SIDE) -> MetricsReport:
    """Localization error and peak value per truth target.

    Components are paired with truth centres greedily by centroid distance;
    a truth centre left without a component gets infinite error.
    """
    if not (0.5 <= threshold_frac <= 0.9):
        raise ConfigError("threshold fraction must lie in [0.5, 0.9]")
    if not np.all(np.isfinite(recon.values)):
        raise NoTargetsFound("reconstruction contains non-finite values")
    truth = np.atleast_2d(np.asarray(truth_centers, float))
    labels, n, cent = segment(recon, threshold_frac)
    peaks = np.atleast_1d(ndimage.maximum(recon.values, labels, np.arange(1, n + 1)))
    d = np.linalg.norm(truth[:, None, :] - cent[None, :, :], axis=-1)
    match: dict[int, int] = {}
    used: set[int] = set()
    for flat in np.argsort(d, axis=None, kind="stable"):
        i, j = np.unravel_index(flat, d.shape)
        if i not in match and j not in used:
            match[int(i)] = int(j)
            used.add(int(j))
    targets = []
    for i, c in enumerate(truth):
        if i in match:
            j = match[i]
            le = float(d[i, j])
            targets.append(TargetMetrics(tuple(map(float, c)), tuple(map(float, cent[j])), le,
                                         le / scale_length, float(peaks[j])))
        else:
            targets.append(TargetMetrics(tuple(map(float, c)), None, math.inf, math.inf, math.nan))
    return MetricsReport(tuple(targets), float(threshold_frac), int(n))
