"""Condition encoder: history, neighbor, and map embeddings stacked 3 x d.

Two recurrent encoders handle the target history and the (neighbor-sum, ego)
concatenation; a three-layer strided CNN embeds the fused trajectory-on-map
grid. Ablation masks zero whole rows of the stacked condition, leaving the
other rows untouched.
"""

from __future__ import annotations

from typing import Iterable

import torch
from torch import nn

CONDITION_ROWS = ("his", "neigh", "map")
MASK_ALL = frozenset(CONDITION_ROWS)


def build_condition(
    z_history: torch.Tensor,
    z_neighbors: torch.Tensor,
    z_map: torch.Tensor,
    mask: Iterable[str] = (),
) -> torch.Tensor:
    """Stack the three embeddings into (..., 3, d), zeroing masked rows."""
    widths = {z_history.shape[-1], z_neighbors.shape[-1], z_map.shape[-1]}
    if len(widths) != 1:
        raise ValueError(f"embedding width mismatch: {sorted(widths)}")
    mask = frozenset(mask)
    unknown = mask - MASK_ALL
    if unknown:
        raise ValueError(f"unknown condition rows in mask: {sorted(unknown)}")
    stacked = torch.stack([z_history, z_neighbors, z_map], dim=-2)
    if mask:
        keep = torch.ones(3, dtype=stacked.dtype, device=stacked.device)
        for i, name in enumerate(CONDITION_ROWS):
            if name in mask:
                keep[i] = 0.0
        stacked = stacked * keep.unsqueeze(-1)
    return stacked


class ConditionEncoder(nn.Module):
    """Maps (observed, neighbor sum, fused map grid) to the 3 x d condition."""

    def __init__(
        self,
        embed_dim: int = 64,
        lstm_hidden: int = 128,
        cnn_channels: tuple[int, int, int] = (32, 64, 128),
        grid_size: int = 64,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.grid_size = grid_size
        self.history_rnn = nn.LSTM(2, lstm_hidden, batch_first=True)
        self.history_proj = nn.Linear(lstm_hidden, embed_dim)
        self.neighbor_rnn = nn.LSTM(4, lstm_hidden, batch_first=True)
        self.neighbor_proj = nn.Linear(lstm_hidden, embed_dim)
        c1, c2, c3 = cnn_channels
        self.map_cnn = nn.Sequential(
            nn.Conv2d(1, c1, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c2, c3, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.map_proj = nn.Linear(c3, embed_dim)

    def encode_history(self, observed: torch.Tensor) -> torch.Tensor:
        """(B, L, 2) observed track -> (B, d) final-state embedding."""
        if not torch.isfinite(observed).all():
            raise ValueError("non-finite values in observed history")
        _, (h_n, _) = self.history_rnn(observed)
        return self.history_proj(h_n[-1])

    def encode_neighbors(self, neighbor_sum: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
        """(B, L, 2) neighbor sum + (B, L, 2) ego history -> (B, d)."""
        if neighbor_sum.shape != observed.shape:
            raise ValueError(
                f"neighbor sum shape {tuple(neighbor_sum.shape)} != observed {tuple(observed.shape)}"
            )
        joint = torch.cat([neighbor_sum, observed], dim=-1)
        _, (h_n, _) = self.neighbor_rnn(joint)
        return self.neighbor_proj(h_n[-1])

    def encode_map(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, W, W) trajectory-on-map grid -> (B, d)."""
        if fused.shape[-1] != self.grid_size or fused.shape[-2] != self.grid_size:
            raise ValueError(
                f"grid shape {tuple(fused.shape[-2:])} != configured ({self.grid_size}, {self.grid_size})"
            )
        if not torch.isfinite(fused).all():
            raise ValueError("non-finite values in fused map grid")
        features = self.map_cnn(fused.unsqueeze(1))
        pooled = features.mean(dim=(2, 3))
        return self.map_proj(pooled)

    def forward(
        self,
        observed: torch.Tensor,
        neighbor_sum: torch.Tensor,
        fused: torch.Tensor,
        mask: Iterable[str] = (),
    ) -> torch.Tensor:
        return build_condition(
            self.encode_history(observed),
            self.encode_neighbors(neighbor_sum, observed),
            self.encode_map(fused),
            mask,
        )
