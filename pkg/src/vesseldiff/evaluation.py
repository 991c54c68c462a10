"""Geodesic displacement metrics, best-of-N selection, per-horizon reports.

Metrics are computed on degree coordinates after denormalization; the
great-circle kernel uses the mean Earth radius. A Euclidean kernel on unit
coordinates is provided for normalized-space diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0


def haversine_km(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Great-circle distance in km between (lat, lon) degree points.

    Broadcasts over leading dimensions; the last axis is (lat, lon).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lat1, lon1 = np.radians(p[..., 0]), np.radians(p[..., 1])
    lat2, lon2 = np.radians(q[..., 0]), np.radians(q[..., 1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return EARTH_RADIUS_KM * 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def euclidean_units(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Plain Euclidean distance, for metrics in normalized coordinate space."""
    d = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt((d**2).sum(axis=-1))


PointMetric = Callable[[np.ndarray, np.ndarray], np.ndarray]


def ade(
    pred: np.ndarray,
    truth: np.ndarray,
    horizon_steps: int,
    point_metric: PointMetric = haversine_km,
) -> float:
    """Mean displacement over timestamps 1..horizon_steps."""
    if horizon_steps < 1:
        raise ValueError(f"horizon_steps must be >= 1, got {horizon_steps}")
    if horizon_steps > pred.shape[-2]:
        raise ValueError(f"horizon_steps {horizon_steps} exceeds horizon {pred.shape[-2]}")
    d = point_metric(pred[..., :horizon_steps, :], truth[..., :horizon_steps, :])
    return float(d.mean())


def fde(
    pred: np.ndarray,
    truth: np.ndarray,
    horizon_steps: int,
    point_metric: PointMetric = haversine_km,
) -> float:
    """Displacement at the final timestamp of the horizon prefix."""
    if horizon_steps < 1:
        raise ValueError(f"horizon_steps must be >= 1, got {horizon_steps}")
    d = point_metric(pred[..., horizon_steps - 1, :], truth[..., horizon_steps - 1, :])
    return float(np.mean(d))


def best_of_n(
    samples: np.ndarray,
    truth: np.ndarray,
    horizon_steps: int,
    metric: str = "ade",
    point_metric: PointMetric = haversine_km,
) -> float:
    """Minimum ADE or FDE over the n sampled futures of one window."""
    if metric not in ("ade", "fde"):
        raise ValueError(f"metric must be 'ade' or 'fde', got {metric!r}")
    fn = ade if metric == "ade" else fde
    return min(fn(s, truth, horizon_steps, point_metric) for s in samples)


@dataclass
class HorizonRow:
    hours: float
    steps: int
    ade_km: float
    fde_km: float


@dataclass
class MetricReport:
    rows: list[HorizonRow]
    n: int
    sample_count: int
    config_hash: str = ""
    checkpoint_id: str = ""

    def to_dict(self) -> dict:
        return {
            "n_best_of": self.n,
            "sample_count": self.sample_count,
            "config_hash": self.config_hash,
            "checkpoint_id": self.checkpoint_id,
            "horizons": [
                {"hours": r.hours, "steps": r.steps, "ade_km": r.ade_km, "fde_km": r.fde_km}
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [
            f"# config_hash={self.config_hash} checkpoint_id={self.checkpoint_id} "
            f"n={self.n} windows={self.sample_count}",
            "horizon_hours\tsteps\tade_km\tfde_km",
        ]
        for r in self.rows:
            lines.append(f"{r.hours:g}\t{r.steps}\t{r.ade_km:.9f}\t{r.fde_km:.9f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "metrics") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        table_path = out_dir / f"{stem}.tsv"
        json_path.write_text(self.to_json())
        table_path.write_text(self.to_table())
        return json_path, table_path


def horizon_steps_for(hours: float, delta_minutes: float) -> int:
    steps = hours * 60.0 / delta_minutes
    rounded = int(round(steps))
    if abs(steps - rounded) > 1e-9 or rounded < 1:
        raise ValueError(
            f"horizon {hours} h is not a positive multiple of the {delta_minutes} min rate"
        )
    return rounded


def report(
    sample_fn: Callable[[np.ndarray], np.ndarray],
    windows,
    horizons_hours: Sequence[float],
    n: int = 20,
    config_hash: str = "",
    checkpoint_id: str = "",
    point_metric: PointMetric = haversine_km,
    denormalize: bool = True,
) -> MetricReport:
    """Evaluate best-of-N displacement per horizon over a window set.

    `sample_fn(indices) -> (len(indices), n, H, 2)` returns normalized sampled
    futures for the requested windows. Predictions and truth are denormalized
    to degrees before applying the point metric unless `denormalize` is False.
    """
    if len(windows) == 0:
        raise ValueError("cannot evaluate an empty window set")
    if not horizons_hours:
        raise ValueError("horizon list is empty")
    steps = [horizon_steps_for(h, windows.delta_minutes) for h in horizons_hours]
    too_long = [s for s in steps if s > windows.horizon_len]
    if too_long:
        raise ValueError(
            f"horizons {too_long} steps exceed window horizon {windows.horizon_len}"
        )

    indices = np.arange(len(windows))
    samples = np.asarray(sample_fn(indices), dtype=np.float64)
    if samples.shape != (len(windows), n, windows.horizon_len, 2):
        raise ValueError(
            f"sample_fn returned shape {samples.shape}, expected "
            f"{(len(windows), n, windows.horizon_len, 2)}"
        )
    truth = windows.future
    if denormalize:
        lat, lon = windows.params.denormalize(samples[..., 0], samples[..., 1])
        samples = np.stack([lat, lon], axis=-1)
        lat_t, lon_t = windows.params.denormalize(truth[..., 0], truth[..., 1])
        truth = np.stack([lat_t, lon_t], axis=-1)
        # metrics run on degree coordinates only; a unit-box truth here would
        # mean normalization parameters were never applied upstream
        if np.abs(truth[..., 0]).max() > 90.0 or np.abs(truth[..., 1]).max() > 180.0:
            raise ValueError("denormalized ground truth is outside valid degree ranges")

    rows = []
    for hours, step in zip(horizons_hours, steps):
        ade_vals = [
            best_of_n(samples[i], truth[i], step, "ade", point_metric)
            for i in range(len(windows))
        ]
        fde_vals = [
            best_of_n(samples[i], truth[i], step, "fde", point_metric)
            for i in range(len(windows))
        ]
        rows.append(
            HorizonRow(
                hours=float(hours),
                steps=step,
                ade_km=float(np.mean(ade_vals)),
                fde_km=float(np.mean(fde_vals)),
            )
        )
    return MetricReport(
        rows=rows,
        n=n,
        sample_count=len(windows),
        config_hash=config_hash,
        checkpoint_id=checkpoint_id,
    )
