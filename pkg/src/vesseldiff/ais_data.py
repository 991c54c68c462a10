"""AIS ingest pipeline: parse, clean, segment, resample, normalize, window.

Raw delimited AIS exports are reduced to fixed-rate journeys and then to
sliding trajectory windows (observed history + future horizon + neighbor
histories) stored in a deterministic archive file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import DMA_COLUMN_MAP
from .containers import load_container, save_container

SPLIT_NAMES = ("train", "val", "test")

# Timestamp layouts tried in order when no explicit format is configured.
_TIMESTAMP_FORMATS = ("%d/%m/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S")

REQUIRED_FIELDS = ("mmsi", "timestamp", "lat", "lon", "sog")


class ParseError(ValueError):
    """Structurally unusable input file (bad header, wrong delimiter...)."""


@dataclass(frozen=True)
class AisRecord:
    mmsi: int
    timestamp: float  # seconds since epoch, UTC
    lat: float
    lon: float
    sog: float  # knots


@dataclass
class RawJourney:
    journey_id: str
    mmsi: int
    records: list[AisRecord]


@dataclass
class Journey:
    """Gap-free fixed-rate segment of one vessel's track.

    After `resample`, `times` lie on the global grid of integer multiples of
    the sampling step; after `normalize`, lat/lon are unit coordinates.
    """

    journey_id: str
    mmsi: int
    times: np.ndarray  # (n,) int64 seconds
    lat: np.ndarray  # (n,) float64
    lon: np.ndarray  # (n,) float64
    rate_minutes: float

    def __len__(self) -> int:
        return len(self.times)

    @property
    def step_seconds(self) -> int:
        return int(round(self.rate_minutes * 60))

    def index_at(self, t: int) -> int | None:
        """Grid index of timestamp t, or None if t is outside this journey."""
        step = self.step_seconds
        if t < self.times[0] or t > self.times[-1] or (t - self.times[0]) % step != 0:
            return None
        return int((t - self.times[0]) // step)


@dataclass(frozen=True)
class NormalizationParams:
    """Min-max bounds of the region of interest, in degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValueError(f"degenerate normalization bounds {self}")

    @classmethod
    def from_roi(cls, roi: Sequence[float]) -> "NormalizationParams":
        lat_min, lon_min, lat_max, lon_max = roi
        return cls(lat_min=lat_min, lat_max=lat_max, lon_min=lon_min, lon_max=lon_max)

    def normalize(self, lat, lon):
        y = (np.asarray(lat, dtype=np.float64) - self.lat_min) / (self.lat_max - self.lat_min)
        x = (np.asarray(lon, dtype=np.float64) - self.lon_min) / (self.lon_max - self.lon_min)
        return y, x

    def denormalize(self, y, x):
        lat = np.asarray(y, dtype=np.float64) * (self.lat_max - self.lat_min) + self.lat_min
        lon = np.asarray(x, dtype=np.float64) * (self.lon_max - self.lon_min) + self.lon_min
        return lat, lon

    def contains(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat)
        lon = np.asarray(lon)
        return (
            (lat >= self.lat_min)
            & (lat <= self.lat_max)
            & (lon >= self.lon_min)
            & (lon <= self.lon_max)
        )

    def to_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
        }


def _parse_timestamp(text: str, fmt: str | None) -> float:
    text = text.strip()
    if fmt is not None:
        dt = datetime.strptime(text, fmt)
        return dt.replace(tzinfo=timezone.utc).timestamp()
    try:
        return float(text)
    except ValueError:
        pass
    for candidate in _TIMESTAMP_FORMATS:
        try:
            dt = datetime.strptime(text, candidate)
            return dt.replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def parse_ais(
    source: Iterable[str] | str | Path,
    column_map: dict[str, str] | None = None,
    timestamp_format: str | None = None,
    delimiter: str = ",",
) -> tuple[list[AisRecord], dict[str, int]]:
    """Parse a delimited AIS export into validated records.

    Returns records sorted by (timestamp, mmsi) plus a counter dict with one
    entry per rejection reason. A malformed header is fatal; malformed rows
    are counted and skipped.
    """
    column_map = column_map or DMA_COLUMN_MAP
    missing = [f for f in REQUIRED_FIELDS if f not in column_map]
    if missing:
        raise ParseError(f"column map lacks required fields {missing}")

    if isinstance(source, (str, Path)):
        lines = Path(source).read_text().splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]

    counters = {
        "rows_total": 0,
        "short_row": 0,
        "missing_value": 0,
        "bad_timestamp": 0,
        "bad_number": 0,
        "mmsi_too_short": 0,
        "lat_out_of_range": 0,
        "lon_out_of_range": 0,
        "negative_sog": 0,
    }
    if not lines:
        return [], counters

    header = [h.strip() for h in lines[0].split(delimiter)]
    try:
        col_idx = {f: header.index(column_map[f]) for f in REQUIRED_FIELDS}
    except ValueError as exc:
        raise ParseError(f"header {header!r} lacks a mapped column: {exc}") from None

    records = []
    width = max(col_idx.values()) + 1
    for line in lines[1:]:
        if not line.strip():
            continue
        counters["rows_total"] += 1
        cells = line.split(delimiter)
        if len(cells) < width:
            counters["short_row"] += 1
            continue
        raw = {f: cells[col_idx[f]].strip() for f in REQUIRED_FIELDS}
        if any(v == "" for v in raw.values()):
            counters["missing_value"] += 1
            continue
        try:
            ts = _parse_timestamp(raw["timestamp"], timestamp_format)
        except ValueError:
            counters["bad_timestamp"] += 1
            continue
        try:
            mmsi = int(raw["mmsi"])
            lat = float(raw["lat"])
            lon = float(raw["lon"])
            sog = float(raw["sog"])
        except ValueError:
            counters["bad_number"] += 1
            continue
        if mmsi < 10 ** 8:
            counters["mmsi_too_short"] += 1
            continue
        if not -90.0 <= lat <= 90.0:
            counters["lat_out_of_range"] += 1
            continue
        if not -180.0 <= lon <= 180.0:
            counters["lon_out_of_range"] += 1
            continue
        if sog < 0:
            counters["negative_sog"] += 1
            continue
        records.append(AisRecord(mmsi=mmsi, timestamp=ts, lat=lat, lon=lon, sog=sog))

    records.sort(key=lambda r: (r.timestamp, r.mmsi))
    return records, counters


def filter_speed(
    records: Sequence[AisRecord], sog_min: float = 0.2, sog_max: float = 30.0
) -> tuple[list[AisRecord], dict[str, int]]:
    """Drop implausibly fast (sog >= sog_max) and anchored (sog <= sog_min) records."""
    kept = []
    counters = {"sog_too_fast": 0, "sog_anchored": 0}
    for rec in records:
        if rec.sog >= sog_max:
            counters["sog_too_fast"] += 1
        elif rec.sog <= sog_min:
            counters["sog_anchored"] += 1
        else:
            kept.append(rec)
    return kept, counters


def segment_journeys(records: Sequence[AisRecord], gap_hours: float = 2.0) -> list[RawJourney]:
    """Split each vessel's record stream at time gaps exceeding gap_hours."""
    gap_seconds = gap_hours * 3600.0
    by_mmsi: dict[int, list[AisRecord]] = {}
    for rec in records:
        by_mmsi.setdefault(rec.mmsi, []).append(rec)

    journeys = []
    for mmsi in sorted(by_mmsi):
        group = sorted(by_mmsi[mmsi], key=lambda r: r.timestamp)
        seq = 0
        current = [group[0]]
        for rec in group[1:]:
            if rec.timestamp - current[-1].timestamp > gap_seconds:
                journeys.append(RawJourney(f"{mmsi}:{seq}", mmsi, current))
                seq += 1
                current = [rec]
            else:
                current.append(rec)
        journeys.append(RawJourney(f"{mmsi}:{seq}", mmsi, current))
    return journeys


def resample(
    raw: RawJourney, delta_minutes: float = 10.0, min_samples: int = 36
) -> Journey | None:
    """Resample a raw journey onto the global delta-spaced grid.

    The grid is anchored at integer multiples of the step so that all
    journeys share it; lat/lon are linearly interpolated between bracketing
    records. Journeys with fewer than two records or fewer than min_samples
    grid points are discarded (returns None).
    """
    if len(raw.records) < 2:
        return None
    step = int(round(delta_minutes * 60))
    times = []
    lats = []
    lons = []
    for rec in raw.records:
        if times and rec.timestamp == times[-1]:
            continue  # duplicate timestamp, keep first
        times.append(rec.timestamp)
        lats.append(rec.lat)
        lons.append(rec.lon)
    if len(times) < 2:
        return None
    t = np.asarray(times, dtype=np.float64)
    start = int(math.ceil(t[0] / step)) * step
    end = int(math.floor(t[-1] / step)) * step
    if end < start:
        return None
    grid = np.arange(start, end + step, step, dtype=np.int64)
    if len(grid) < min_samples:
        return None
    lat = np.interp(grid.astype(np.float64), t, np.asarray(lats, dtype=np.float64))
    lon = np.interp(grid.astype(np.float64), t, np.asarray(lons, dtype=np.float64))
    return Journey(
        journey_id=raw.journey_id,
        mmsi=raw.mmsi,
        times=grid,
        lat=lat,
        lon=lon,
        rate_minutes=delta_minutes,
    )


def normalize(
    journey: Journey, params: NormalizationParams, min_samples: int = 36
) -> tuple[list[Journey], int]:
    """Min-max normalize a journey into unit coordinates.

    Points outside the ROI are dropped; the remaining in-ROI runs are emitted
    as separate journeys (suffix ``:rK``) so the uniform-grid invariant
    survives, and runs shorter than min_samples are discarded. Returns the
    surviving journeys and the number of dropped points.
    """
    inside = params.contains(journey.lat, journey.lon)
    dropped = int((~inside).sum())
    segments = []
    if inside.all():
        runs = [(0, len(journey))]
    else:
        runs = []
        idx = np.flatnonzero(inside)
        if idx.size:
            breaks = np.flatnonzero(np.diff(idx) > 1)
            starts = np.concatenate(([0], breaks + 1))
            ends = np.concatenate((breaks, [idx.size - 1]))
            runs = [(int(idx[s]), int(idx[e]) + 1) for s, e in zip(starts, ends)]
    for seg_no, (lo, hi) in enumerate(runs):
        if hi - lo < min_samples:
            dropped += hi - lo
            continue
        y, x = params.normalize(journey.lat[lo:hi], journey.lon[lo:hi])
        suffix = "" if (lo, hi) == (0, len(journey)) else f":r{seg_no}"
        segments.append(
            Journey(
                journey_id=journey.journey_id + suffix,
                mmsi=journey.mmsi,
                times=journey.times[lo:hi].copy(),
                lat=y,
                lon=x,
                rate_minutes=journey.rate_minutes,
            )
        )
    return segments, dropped


def assign_splits(
    journey_ids: Sequence[str],
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, int]:
    """Deterministic journey-level split assignment (largest-remainder counts)."""
    ids = sorted(journey_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n = len(ids)
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(leftover):
        counts[order[i % len(order)]] += 1
    assignment = {}
    pos = 0
    for split_idx, count in enumerate(counts):
        for jid in ids[pos : pos + count]:
            assignment[jid] = split_idx
        pos += count
    return assignment


@dataclass
class WindowSet:
    """Trajectory windows plus everything needed to train and evaluate on them."""

    observed: np.ndarray  # (n, L, 2) normalized (lat, lon)
    future: np.ndarray  # (n, H, 2)
    neighbors_flat: np.ndarray  # (total_neighbors, L, 2)
    neighbor_counts: np.ndarray  # (n,) int64
    anchor_times: np.ndarray  # (n,) int64
    journey_ids: list[str]
    split: np.ndarray  # (n,) int8 index into SPLIT_NAMES
    params: NormalizationParams
    history_len: int
    horizon_len: int
    delta_minutes: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.observed.shape[0]

    def neighbor_histories(self, i: int) -> np.ndarray:
        offsets = np.concatenate(([0], np.cumsum(self.neighbor_counts)))
        return self.neighbors_flat[offsets[i] : offsets[i + 1]]

    def neighbor_sums(self) -> np.ndarray:
        """Element-wise sum of neighbor histories per window, zeros when none."""
        sums = np.zeros_like(self.observed)
        offsets = np.concatenate(([0], np.cumsum(self.neighbor_counts)))
        for i in range(len(self)):
            if self.neighbor_counts[i]:
                sums[i] = self.neighbors_flat[offsets[i] : offsets[i + 1]].sum(axis=0)
        return sums

    def subset(self, indices: np.ndarray) -> "WindowSet":
        indices = np.asarray(indices)
        offsets = np.concatenate(([0], np.cumsum(self.neighbor_counts)))
        keep_neighbors = (
            np.concatenate(
                [np.arange(offsets[i], offsets[i + 1]) for i in indices]
            ).astype(np.int64)
            if len(indices)
            else np.zeros(0, dtype=np.int64)
        )
        return WindowSet(
            observed=self.observed[indices],
            future=self.future[indices],
            neighbors_flat=self.neighbors_flat[keep_neighbors],
            neighbor_counts=self.neighbor_counts[indices],
            anchor_times=self.anchor_times[indices],
            journey_ids=[self.journey_ids[i] for i in indices],
            split=self.split[indices],
            params=self.params,
            history_len=self.history_len,
            horizon_len=self.horizon_len,
            delta_minutes=self.delta_minutes,
            meta=dict(self.meta),
        )

    def for_split(self, name: str) -> "WindowSet":
        idx = np.flatnonzero(self.split == SPLIT_NAMES.index(name))
        return self.subset(idx)

    def save(self, path: str | Path) -> None:
        ids = np.array(self.journey_ids, dtype=np.str_)
        arrays = {
            "observed": self.observed.astype(np.float64),
            "future": self.future.astype(np.float64),
            "neighbors_flat": self.neighbors_flat.astype(np.float64),
            "neighbor_counts": self.neighbor_counts.astype(np.int64),
            "anchor_times": self.anchor_times.astype(np.int64),
            "split": self.split.astype(np.int8),
            "journey_ids": ids,
        }
        meta = {
            "normalization": self.params.to_dict(),
            "history_len": self.history_len,
            "horizon_len": self.horizon_len,
            "delta_minutes": self.delta_minutes,
            "splits": list(SPLIT_NAMES),
            **self.meta,
        }
        save_container(path, "window-archive", arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "WindowSet":
        arrays, meta = load_container(path, "window-archive")
        norm = meta.pop("normalization")
        return cls(
            observed=arrays["observed"],
            future=arrays["future"],
            neighbors_flat=arrays["neighbors_flat"],
            neighbor_counts=arrays["neighbor_counts"],
            anchor_times=arrays["anchor_times"],
            journey_ids=[str(s) for s in arrays["journey_ids"]],
            split=arrays["split"],
            params=NormalizationParams(**norm),
            history_len=int(meta.pop("history_len")),
            horizon_len=int(meta.pop("horizon_len")),
            delta_minutes=float(meta.pop("delta_minutes")),
            meta={k: v for k, v in meta.items() if k != "splits"},
        )


def make_windows(
    journeys: Sequence[Journey],
    history_len: int = 8,
    horizon_len: int = 24,
    stride: int = 1,
    neighbor_threshold: float = 0.05,
    params: NormalizationParams | None = None,
    splits: dict[str, int] | None = None,
    delta_minutes: float = 10.0,
) -> WindowSet:
    """Cut normalized journeys into sliding L+H windows with neighbor context.

    Neighbor membership is decided once per window, at the anchor time (last
    observed step), by unit-coordinate Euclidean distance <= threshold.
    """
    from .interaction_graph import find_neighbors

    if history_len < 1 or horizon_len < 1 or stride < 1:
        raise ValueError("history_len, horizon_len and stride must be >= 1")
    journeys = sorted(journeys, key=lambda j: j.journey_id)
    observed, future, anchors, ids, split_col = [], [], [], [], []
    neighbor_rows = []
    neighbor_counts = []
    window_len = history_len + horizon_len
    for journey in journeys:
        others = [j for j in journeys if j.journey_id != journey.journey_id]
        coords = np.stack([journey.lat, journey.lon], axis=1)
        for start in range(0, len(journey) - window_len + 1, stride):
            anchor_idx = start + history_len - 1
            anchor_time = int(journey.times[anchor_idx])
            neighbor_set = find_neighbors(
                journey, others, anchor_time, neighbor_threshold, history_len
            )
            observed.append(coords[start : start + history_len])
            future.append(coords[start + history_len : start + window_len])
            anchors.append(anchor_time)
            ids.append(journey.journey_id)
            split_col.append(splits.get(journey.journey_id, 0) if splits else 0)
            neighbor_counts.append(len(neighbor_set.neighbor_histories))
            neighbor_rows.extend(neighbor_set.neighbor_histories)

    n = len(observed)
    return WindowSet(
        observed=np.asarray(observed, dtype=np.float64).reshape(n, history_len, 2),
        future=np.asarray(future, dtype=np.float64).reshape(n, horizon_len, 2),
        neighbors_flat=(
            np.asarray(neighbor_rows, dtype=np.float64).reshape(-1, history_len, 2)
            if neighbor_rows
            else np.zeros((0, history_len, 2))
        ),
        neighbor_counts=np.asarray(neighbor_counts, dtype=np.int64),
        anchor_times=np.asarray(anchors, dtype=np.int64),
        journey_ids=ids,
        split=np.asarray(split_col, dtype=np.int8),
        params=params or NormalizationParams(0.0, 1.0, 0.0, 1.0),
        history_len=history_len,
        horizon_len=horizon_len,
        delta_minutes=delta_minutes,
    )


def preprocess(
    sources: Sequence[str | Path],
    data_cfg,
) -> tuple[WindowSet, dict]:
    """Full ingest pipeline: parse -> speed filter -> segment -> resample ->
    normalize -> split -> window. Returns the window set and a stage report."""
    params = NormalizationParams.from_roi(data_cfg.roi)
    all_records: list[AisRecord] = []
    parse_counters: dict[str, int] = {}
    for src in sources:
        records, counters = parse_ais(
            src, data_cfg.column_map, data_cfg.timestamp_format
        )
        all_records.extend(records)
        for key, val in counters.items():
            parse_counters[key] = parse_counters.get(key, 0) + val
    all_records.sort(key=lambda r: (r.timestamp, r.mmsi))

    kept, speed_counters = filter_speed(all_records, data_cfg.sog_min, data_cfg.sog_max)
    raw_journeys = segment_journeys(kept, data_cfg.gap_hours)

    resampled = []
    too_short = 0
    for raw in raw_journeys:
        journey = resample(raw, data_cfg.delta_minutes, data_cfg.min_journey_samples)
        if journey is None:
            too_short += 1
        else:
            resampled.append(journey)

    normalized = []
    out_of_roi = 0
    for journey in resampled:
        segments, dropped = normalize(journey, params, data_cfg.min_journey_samples)
        out_of_roi += dropped
        normalized.extend(segments)

    splits = assign_splits(
        [j.journey_id for j in normalized], data_cfg.split_fractions, data_cfg.split_seed
    )
    windows = make_windows(
        normalized,
        history_len=data_cfg.history_len,
        horizon_len=data_cfg.horizon_len,
        stride=data_cfg.stride,
        neighbor_threshold=data_cfg.neighbor_threshold,
        params=params,
        splits=splits,
        delta_minutes=data_cfg.delta_minutes,
    )
    report = {
        "parse": parse_counters,
        "speed_filter": speed_counters,
        "records_kept": len(kept),
        "journeys_segmented": len(raw_journeys),
        "journeys_dropped_short": too_short,
        "points_dropped_outside_roi": out_of_roi,
        "journeys_final": len(normalized),
        "windows": len(windows),
        "split_counts": {
            name: int((windows.split == i).sum()) for i, name in enumerate(SPLIT_NAMES)
        },
    }
    return windows, report
