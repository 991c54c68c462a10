"""Scene context: land/water raster, trajectory heatmap, and their fusion.

The scene image covers the full ROI on a WxW grid (water = 1.0, land = 0.0).
The observed track is rendered as a sum of Gaussian kernels in pixel space and
blended with the scene raster to give the trajectory-on-map grid consumed by
the map encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ais_data import NormalizationParams

RING_FORMAT = "coastline-rings"
RING_VERSION = 1


class GeometryError(ValueError):
    """Invalid coastline geometry."""


@dataclass
class SceneImage:
    grid: np.ndarray  # (W, W) float64, cells in {0.0, 1.0}; [row=lat, col=lon]
    roi: NormalizationParams

    @property
    def size(self) -> int:
        return self.grid.shape[0]


@dataclass
class TrajectoryHeatmap:
    grid: np.ndarray  # (W, W) float64 >= 0
    sigma: float


def load_rings(path: str | Path) -> list[np.ndarray]:
    """Read the versioned coastline ring file: a JSON list of closed lat/lon rings."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or doc.get("format") != RING_FORMAT:
        raise GeometryError(f"{path}: not a {RING_FORMAT} file")
    if doc.get("version") != RING_VERSION:
        raise GeometryError(f"{path}: unsupported version {doc.get('version')}")
    return [np.asarray(r, dtype=np.float64) for r in doc["rings"]]


def save_rings(rings: Sequence[np.ndarray], path: str | Path) -> None:
    doc = {
        "format": RING_FORMAT,
        "version": RING_VERSION,
        "rings": [np.asarray(r, dtype=np.float64).tolist() for r in rings],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def _points_in_ring(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd ray casting: which of the (n, 2) points fall inside the ring."""
    inside = np.zeros(len(points), dtype=bool)
    px, py = points[:, 0], points[:, 1]
    for i in range(len(ring) - 1):
        x1, y1 = ring[i]
        x2, y2 = ring[i + 1]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_at)
    return inside


def rasterize_coastline(
    rings: Sequence[np.ndarray], roi: NormalizationParams, grid_size: int
) -> SceneImage:
    """Rasterize closed land rings into the binary water raster.

    Cell centers inside any ring become land (0.0); everything else is water
    (1.0). Rings are (n, 2) arrays of (lat, lon) with first point == last.
    """
    for i, ring in enumerate(rings):
        ring = np.asarray(ring, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 4:
            raise GeometryError(f"ring {i} is not a closed polygon (shape {ring.shape})")
        if not np.array_equal(ring[0], ring[-1]):
            raise GeometryError(f"ring {i} is not closed (first point != last point)")

    w = grid_size
    centers = (np.arange(w) + 0.5) / w
    gx, gy = np.meshgrid(centers, centers)  # gx: lon axis (cols), gy: lat axis (rows)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)

    land = np.zeros(len(points), dtype=bool)
    for ring in rings:
        y, x = roi.normalize(np.asarray(ring)[:, 0], np.asarray(ring)[:, 1])
        unit_ring = np.stack([x, y], axis=1)
        land |= _points_in_ring(points, unit_ring)
    grid = np.where(land.reshape(w, w), 0.0, 1.0)
    return SceneImage(grid=grid, roi=roi)


def all_water_scene(roi: NormalizationParams, grid_size: int) -> SceneImage:
    return SceneImage(grid=np.ones((grid_size, grid_size)), roi=roi)


def render_heatmap(observed: np.ndarray, grid_size: int, sigma: float) -> TrajectoryHeatmap:
    """Render the observed track as element-wise summed Gaussian kernels.

    `observed` is (L, 2) unit coordinates (lat, lon); kernel centers are the
    points mapped to pixel space, sigma is in pixels. Points outside the unit
    square land off-grid and contribute tail mass only.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[1] != 2 or len(observed) < 1:
        raise ValueError(f"observed must be (L, 2) with L >= 1, got {observed.shape}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    w = grid_size
    ys = observed[:, 0] * w - 0.5  # pixel row of each point
    xs = observed[:, 1] * w - 0.5
    rows = np.arange(w, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    grid = np.zeros((w, w))
    for py, px in zip(ys, xs):
        dy2 = (rows - py) ** 2
        dx2 = (cols - px) ** 2
        grid += np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma * sigma))
    return TrajectoryHeatmap(grid=grid, sigma=sigma)


def fuse(heatmap: TrajectoryHeatmap, scene: SceneImage, alpha: float) -> np.ndarray:
    """Blend heatmap and scene raster: alpha * H + (1 - alpha) * I."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if heatmap.grid.shape != scene.grid.shape:
        raise ValueError(
            f"heatmap shape {heatmap.grid.shape} != scene shape {scene.grid.shape}"
        )
    return alpha * heatmap.grid + (1.0 - alpha) * scene.grid


def fused_window_grids(
    observed_batch: np.ndarray,
    scene: SceneImage,
    sigma: float,
    alpha: float,
    alpha_per_window: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Trajectory-on-map grid for each window in a batch of observed tracks."""
    n = observed_batch.shape[0]
    w = scene.size
    out = np.empty((n, w, w))
    for i in range(n):
        a = float(rng.uniform(0.0, 1.0)) if (alpha_per_window and rng is not None) else alpha
        out[i] = fuse(render_heatmap(observed_batch[i], w, sigma), scene, a)
    return out
