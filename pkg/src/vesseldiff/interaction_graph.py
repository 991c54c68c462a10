"""Vessel-vessel interaction context.

Neighbors are the vessels within a Euclidean distance threshold of the target
at the window anchor time; their fixed-length histories are combined by
element-wise addition so the encoder input shape stays constant regardless of
how many neighbors are present.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ais_data import Journey


@dataclass
class NeighborSet:
    target_id: str
    neighbor_histories: list[np.ndarray]  # each (L, 2), zero-padded at the front
    threshold: float


def find_neighbors(
    target: Journey,
    others: Sequence[Journey],
    anchor_time: int,
    threshold: float,
    history_len: int,
) -> NeighborSet:
    """Select vessels within `threshold` of the target at `anchor_time`.

    All journeys must share the resampling grid. Each neighbor contributes its
    last `history_len` states up to the anchor; states before the neighbor's
    first sample are zero-padded.
    """
    target_idx = target.index_at(anchor_time)
    if target_idx is None:
        raise ValueError(
            f"anchor time {anchor_time} is not on journey {target.journey_id}'s grid"
        )
    tpos = np.array([target.lat[target_idx], target.lon[target_idx]])

    histories = []
    for other in others:
        if other.journey_id == target.journey_id:
            continue
        idx = other.index_at(anchor_time)
        if idx is None:
            continue
        opos = np.array([other.lat[idx], other.lon[idx]])
        if float(np.linalg.norm(opos - tpos)) > threshold:
            continue
        history = np.zeros((history_len, 2), dtype=np.float64)
        lo = max(0, idx - history_len + 1)
        chunk = np.stack([other.lat[lo : idx + 1], other.lon[lo : idx + 1]], axis=1)
        history[history_len - len(chunk) :] = chunk
        histories.append(history)
    return NeighborSet(target.journey_id, histories, threshold)


def aggregate(neighbor_histories: Sequence[np.ndarray], history_len: int) -> np.ndarray:
    """Element-wise sum over neighbor histories; zeros when there are none."""
    total = np.zeros((history_len, 2), dtype=np.float64)
    for history in neighbor_histories:
        history = np.asarray(history)
        if history.shape != (history_len, 2):
            raise ValueError(
                f"neighbor history shape {history.shape} != ({history_len}, 2)"
            )
        total += history
    return total
