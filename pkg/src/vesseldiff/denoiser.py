"""Conditional noise-prediction network.

The noisy horizon is projected to model width, gated and shifted feature-wise
by the time-augmented condition, tagged with a fixed sinusoidal positional
table, passed through a pre-norm self-attention stack, then mapped back to
trajectory space through a second gate/shift block and a linear projection.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .diffusion_core import NoiseSchedule


def embed_time(k, schedule: NoiseSchedule) -> torch.Tensor:
    """Per-step embedding [beta_k, sin(beta_k), cos(beta_k)].

    Returns (3,) for an int k or (B, 3) for a (B,) tensor of steps.
    """
    if isinstance(k, torch.Tensor):
        if bool((k < 1).any()) or bool((k > schedule.total_steps).any()):
            raise ValueError(f"time step out of range [1, {schedule.total_steps}]")
        beta = schedule.beta_at(k)
        return torch.stack([beta, torch.sin(beta), torch.cos(beta)], dim=-1)
    if not 1 <= k <= schedule.total_steps:
        raise ValueError(f"time step {k} out of range [1, {schedule.total_steps}]")
    beta = schedule.beta_at(k)
    return torch.stack([beta, torch.sin(beta), torch.cos(beta)])


def sinusoidal_table(length: int, dim: int) -> torch.Tensor:
    """Fixed sinusoidal positional encoding table of shape (length, dim)."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: table[:, 1::2].shape[1]])
    return table


class FeatureGate(nn.Module):
    """Feature-wise affine conditioning: e -> sigmoid(FC1(c)) * FC3(e) + FC2(c)."""

    def __init__(self, cond_width: int, model_dim: int):
        super().__init__()
        self.gate_fc = nn.Linear(cond_width, model_dim)
        self.shift_fc = nn.Linear(cond_width, model_dim)
        self.value_fc = nn.Linear(model_dim, model_dim)

    def forward(self, e: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        gate = torch.sigmoid(self.gate_fc(cond))
        shift = self.shift_fc(cond)
        if not torch.isfinite(gate).all():
            raise ValueError("non-finite conditioning gate")
        # gate/shift are (B, D), broadcast over the H timestamps of e (B, H, D)
        return gate.unsqueeze(1) * self.value_fc(e) + shift.unsqueeze(1)


class AttentionBlock(nn.Module):
    """Pre-norm self-attention + feed-forward, residuals on both."""

    def __init__(self, model_dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(model_dim)
        self.attn = nn.MultiheadAttention(model_dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(model_dim)
        self.ff = nn.Sequential(
            nn.Linear(model_dim, ff_dim),
            nn.GELU(),
            nn.Linear(ff_dim, model_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out
        return x + self.ff(self.norm2(x))


class TransformerDenoiser(nn.Module):
    def __init__(
        self,
        schedule: NoiseSchedule,
        horizon_len: int = 24,
        cond_dim: int = 64,
        model_dim: int = 512,
        heads: int = 4,
        layers: int = 3,
        ff_dim: int = 1024,
    ):
        super().__init__()
        if model_dim % heads != 0:
            raise ValueError(f"heads {heads} must divide model_dim {model_dim}")
        self.schedule = schedule
        self.horizon_len = horizon_len
        self.cond_dim = cond_dim
        cond_width = 4 * cond_dim  # 3 condition rows + projected time row, flattened
        self.time_proj = nn.Linear(3, cond_dim)
        self.input_proj = nn.Linear(2, model_dim)
        self.film_in = FeatureGate(cond_width, model_dim)
        self.blocks = nn.ModuleList(
            AttentionBlock(model_dim, heads, ff_dim) for _ in range(layers)
        )
        self.film_out = FeatureGate(cond_width, model_dim)
        self.output_proj = nn.Linear(model_dim, 2)
        self.register_buffer("pos_table", sinusoidal_table(horizon_len, model_dim))

    def condition_with_time(self, condition: torch.Tensor, k) -> torch.Tensor:
        """Append the projected time row to the 3 x d condition and flatten.

        condition is (B, 3, d); k is an int or (B,) tensor. Returns (B, 4d).
        """
        if condition.ndim != 3 or condition.shape[1] != 3 or condition.shape[2] != self.cond_dim:
            raise ValueError(
                f"condition shape {tuple(condition.shape)} != (B, 3, {self.cond_dim})"
            )
        k_emb = embed_time(k, self.schedule).to(condition.dtype)
        if k_emb.ndim == 1:
            k_emb = k_emb.expand(condition.shape[0], 3)
        time_row = self.time_proj(k_emb).unsqueeze(1)
        full = torch.cat([condition, time_row], dim=1)
        return full.reshape(condition.shape[0], -1)

    def predict_noise(self, x_k: torch.Tensor, k, condition: torch.Tensor) -> torch.Tensor:
        """Predict the injected noise for (B, H, 2) diffused trajectories."""
        if x_k.shape[-2] != self.horizon_len:
            raise ValueError(f"horizon {x_k.shape[-2]} != configured {self.horizon_len}")
        self._assert_finite(x_k, "input")
        cond_k = self.condition_with_time(condition, k)
        e = self.input_proj(x_k)
        e = self.film_in(e, cond_k)
        self._assert_finite(e, "input gate")
        e = e + self.pos_table.to(e.dtype)
        for i, block in enumerate(self.blocks):
            e = block(e)
            self._assert_finite(e, f"attention block {i}")
        e = self.film_out(e, cond_k)
        out = self.output_proj(e)
        self._assert_finite(out, "output projection")
        return out

    def forward(self, x_k, k, condition):
        return self.predict_noise(x_k, k, condition)

    @staticmethod
    def _assert_finite(t: torch.Tensor, where: str) -> None:
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite activation at {where}")
