"""Diffusion machinery: noise schedule, forward process, loss target, and the
accelerated deterministic reverse sampler.

Step indices k run over {1..K}; index 0 denotes the clean trajectory and the
cumulative signal coefficient at k=0 is defined as exactly 1 so the final
reverse step lands on the clean estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


class SamplingError(RuntimeError):
    """Non-finite state encountered during reverse diffusion."""


@dataclass
class NoiseSchedule:
    beta: torch.Tensor  # (K,) float64, beta[k-1] is the step-k variance
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def total_steps(self) -> int:
        return len(self.beta)

    def beta_at(self, k):
        return self.beta[k - 1]

    def alpha_bar_at(self, k):
        """Cumulative signal coefficient, with the k=0 case pinned to 1."""
        if isinstance(k, torch.Tensor):
            safe = torch.clamp(k, min=1)
            return torch.where(
                k == 0,
                torch.ones((), dtype=self.alpha_bar.dtype),
                self.alpha_bar[safe - 1],
            )
        if k == 0:
            return torch.tensor(1.0, dtype=self.alpha_bar.dtype)
        return self.alpha_bar[k - 1]


def _check_step(k, total: int, allow_zero: bool = False) -> None:
    lo = 0 if allow_zero else 1
    if isinstance(k, torch.Tensor):
        if bool((k < lo).any()) or bool((k > total).any()):
            raise ValueError(f"diffusion step out of range [{lo}, {total}]")
    elif not lo <= k <= total:
        raise ValueError(f"diffusion step {k} out of range [{lo}, {total}]")


def _coeffs(schedule: NoiseSchedule, k, x: torch.Tensor):
    """sqrt(alpha_bar_k) and sqrt(1 - alpha_bar_k), shaped to broadcast over x."""
    ab = schedule.alpha_bar_at(k)
    if isinstance(k, torch.Tensor) and k.ndim > 0:
        ab = ab.reshape(-1, *([1] * (x.ndim - 1)))
    signal = torch.sqrt(ab).to(x.dtype)
    noise = torch.sqrt(1.0 - ab).to(x.dtype)
    return signal, noise


def build_schedule(
    total_steps: int = 100,
    kind: str = "linear",
    beta_start: float = 1e-4,
    beta_end: float = 0.05,
) -> NoiseSchedule:
    """Build the beta/alpha/alpha_bar tables for a K-step schedule."""
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind '{kind}'")
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    if total_steps == 1:
        beta = torch.tensor([beta_start], dtype=torch.float64)
    else:
        beta = torch.linspace(beta_start, beta_end, total_steps, dtype=torch.float64)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_diffuse(x0: torch.Tensor, k, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form noising of a clean trajectory to step k.

    k may be an int applied to the whole batch or a (B,) tensor of per-sample
    steps; x0 is never mutated.
    """
    _check_step(k, schedule.total_steps)
    signal, noise = _coeffs(schedule, k, x0)
    return signal * x0 + noise * eps


def estimate_x0(x_k: torch.Tensor, k, eps_hat: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Invert the forward map using a noise estimate: (x_k - sqrt(1-ab) e) / sqrt(ab)."""
    _check_step(k, schedule.total_steps)
    signal, noise = _coeffs(schedule, k, x_k)
    return (x_k - noise * eps_hat) / signal


def ddim_step(
    x_k: torch.Tensor, k: int, stride: int, eps_hat: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """One deterministic reverse jump from step k to step k - stride."""
    _check_step(k, schedule.total_steps)
    if k - stride < 0:
        raise ValueError(f"cannot step from k={k} by stride {stride}")
    x0_hat = estimate_x0(x_k, k, eps_hat, schedule)
    if k - stride == 0:
        # alpha_bar_0 = 1: the final step lands exactly on the clean estimate
        return x0_hat
    signal, noise = _coeffs(schedule, k - stride, x_k)
    return signal * x0_hat + noise * eps_hat


def training_target(
    x0: torch.Tensor,
    k,
    eps: torch.Tensor,
    condition: torch.Tensor,
    denoiser,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Noise-prediction MSE at step k, differentiable w.r.t. model parameters."""
    x_k = forward_diffuse(x0, k, eps, schedule)
    eps_hat = denoiser.predict_noise(x_k, k, condition)
    loss = torch.mean((eps - eps_hat) ** 2)
    if not torch.isfinite(loss):
        raise SamplingError(f"non-finite training loss at step(s) k={k}")
    return loss


@dataclass
class SamplerConfig:
    stride: int = 5
    n_samples: int = 20
    keep_trace: bool = False

    def validate(self, total_steps: int) -> None:
        if self.stride < 1 or total_steps % self.stride != 0:
            raise ValueError(
                f"sampler stride {self.stride} must divide total steps {total_steps}"
            )
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class SampleResult:
    trajectories: torch.Tensor  # (B, n, H, 2) or (n, H, 2) for a single condition
    trace: list[tuple[int, torch.Tensor]] = field(default_factory=list)


@torch.no_grad()
def sample(
    denoiser,
    condition: torch.Tensor,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    horizon_len: int,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> SampleResult:
    """Draw multi-modal futures by iterated deterministic reverse jumps.

    Each sample starts from independent standard normal noise and is refined
    in exactly total_steps / stride denoiser evaluations. `condition` is (3, d)
    for a single window or (B, 3, d) for a batch; the returned trajectories
    follow the same batching. The optional trace records every visited state,
    from the initial noise at k=K down to k=0.
    """
    total = schedule.total_steps
    sampler.validate(total)
    single = condition.ndim == 2
    cond = condition.unsqueeze(0) if single else condition
    batch = cond.shape[0]
    n = sampler.n_samples

    cond_rep = cond.repeat_interleave(n, dim=0).to(dtype)
    x = torch.randn(batch * n, horizon_len, 2, generator=generator, dtype=dtype)

    def snapshot(step: int, state: torch.Tensor):
        shaped = state.reshape(batch, n, horizon_len, 2)
        trace.append((step, (shaped[0] if single else shaped).clone()))

    trace: list[tuple[int, torch.Tensor]] = []
    if sampler.keep_trace:
        snapshot(total, x)
    for k in range(total, 0, -sampler.stride):
        eps_hat = denoiser.predict_noise(x, k, cond_rep)
        x = ddim_step(x, k, sampler.stride, eps_hat, schedule)
        if not torch.isfinite(x).all():
            raise SamplingError(f"non-finite sample state after reverse step k={k}")
        if sampler.keep_trace:
            snapshot(k - sampler.stride, x)

    out = x.reshape(batch, n, horizon_len, 2)
    return SampleResult(trajectories=out[0] if single else out, trace=trace)
