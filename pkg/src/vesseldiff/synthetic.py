"""Synthetic trajectory generator for CPU-scale training and CI.

Produces unit-coordinate tracks of three motion families (straight lines,
constant-rate turns, two-segment dog-legs) with mild observation noise, plus
optional co-moving neighbor histories, packaged as a regular window set so
the rest of the pipeline needs no real AIS download.
"""

from __future__ import annotations

import numpy as np

from .ais_data import NormalizationParams, WindowSet, assign_splits

_MARGIN = 0.06
_MAX_TRIES = 200


def _simulate(kind: str, length: int, rng: np.random.Generator) -> np.ndarray:
    """One noiseless track of `length` points inside the unit square."""
    for _ in range(_MAX_TRIES):
        start = rng.uniform(0.25, 0.75, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(0.004, 0.012)
        if kind == "line":
            turn = np.zeros(length)
        elif kind == "turn":
            rate = np.radians(rng.uniform(1.0, 5.0)) * rng.choice([-1.0, 1.0])
            turn = np.full(length, rate)
        elif kind == "dogleg":
            turn = np.zeros(length)
            pivot = rng.integers(length // 3, 2 * length // 3)
            turn[pivot] = np.radians(rng.uniform(25.0, 70.0)) * rng.choice([-1.0, 1.0])
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        points = np.empty((length, 2))
        pos = start.copy()
        h = heading
        for t in range(length):
            points[t] = pos
            h += turn[t]
            pos = pos + speed * np.array([np.sin(h), np.cos(h)])
        if points.min() > _MARGIN and points.max() < 1.0 - _MARGIN:
            return points
    raise RuntimeError(f"could not place a '{kind}' track inside the unit square")


def make_synthetic_windows(
    n_trajectories: int = 64,
    history_len: int = 8,
    horizon_len: int = 24,
    kinds: tuple[str, ...] = ("line", "turn", "dogleg"),
    noise: float = 0.0004,
    neighbor_rate: float = 0.5,
    seed: int = 0,
    roi: tuple[float, float, float, float] = (55.5, 10.3, 58.0, 13.0),
    delta_minutes: float = 10.0,
    split_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0),
) -> WindowSet:
    """Generate one window per synthetic trajectory.

    Neighbor histories, when present, are parallel tracks offset to lie within
    a plausible interaction distance at the anchor time; their count varies so
    the neighbor channel carries real signal.
    """
    rng = np.random.default_rng(seed)
    length = history_len + horizon_len
    observed, future, anchors, ids = [], [], [], []
    neighbor_rows, neighbor_counts = [], []
    step = int(round(delta_minutes * 60))

    for i in range(n_trajectories):
        kind = kinds[i % len(kinds)]
        track = _simulate(kind, length, rng)
        track = track + rng.normal(0.0, noise, size=track.shape)
        observed.append(track[:history_len])
        future.append(track[history_len:])
        anchors.append((i + 1) * step * length)
        ids.append(f"synthetic:{i}")
        count = 0
        if rng.uniform() < neighbor_rate:
            count = int(rng.integers(1, 4))
            for _ in range(count):
                offset = rng.uniform(-0.03, 0.03, size=2)
                drift = rng.uniform(-0.002, 0.002, size=2)
                ramp = np.arange(history_len)[:, None] - (history_len - 1)
                neighbor_rows.append(track[:history_len] + offset + ramp * drift)
        neighbor_counts.append(count)

    splits = assign_splits(ids, split_fractions, seed)
    n = n_trajectories
    return WindowSet(
        observed=np.asarray(observed).reshape(n, history_len, 2),
        future=np.asarray(future).reshape(n, horizon_len, 2),
        neighbors_flat=(
            np.asarray(neighbor_rows).reshape(-1, history_len, 2)
            if neighbor_rows
            else np.zeros((0, history_len, 2))
        ),
        neighbor_counts=np.asarray(neighbor_counts, dtype=np.int64),
        anchor_times=np.asarray(anchors, dtype=np.int64),
        journey_ids=ids,
        split=np.asarray([splits[j] for j in ids], dtype=np.int8),
        params=NormalizationParams.from_roi(roi),
        history_len=history_len,
        horizon_len=horizon_len,
        delta_minutes=delta_minutes,
        meta={"source": "synthetic", "seed": seed, "kinds": list(kinds)},
    )
