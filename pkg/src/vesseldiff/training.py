"""Training loop: sample a batch, a step k, and noise; build the condition;
minimize the conditional noise-prediction MSE.

Both the condition encoder and the denoiser are trained. Runs are bitwise
reproducible in serial mode: all randomness flows through explicit generators
whose states are checkpointed alongside parameters and optimizer state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .ais_data import WindowSet
from .condition_encoder import ConditionEncoder
from .config import RunConfig, from_dict as config_from_dict
from .denoiser import TransformerDenoiser
from .diffusion_core import (
    NoiseSchedule,
    SamplerConfig,
    SamplingError,
    build_schedule,
    sample,
    training_target,
)
from .evaluation import MetricReport, best_of_n, euclidean_units, report
from .scene_context import all_water_scene, fused_window_grids, load_rings, rasterize_coastline

CHECKPOINT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingError(RuntimeError):
    """Aborted training run (non-finite loss, empty dataset...)."""


@dataclass
class ModelBundle:
    """Everything needed to run the model: encoder, denoiser, schedule, config."""

    encoder: ConditionEncoder
    denoiser: TransformerDenoiser
    schedule: NoiseSchedule
    config: RunConfig

    @property
    def dtype(self) -> torch.dtype:
        return _DTYPES[self.config.model.dtype]

    def eval(self) -> "ModelBundle":
        self.encoder.eval()
        self.denoiser.eval()
        return self


@dataclass
class TrainResult:
    bundle: ModelBundle
    losses: list[tuple[int, float, float]]  # (step, loss, lr)
    state: dict = field(default_factory=dict)  # checkpoint-ready state
    checkpoint_path: Path | None = None
    stopped_early: bool = False


def build_models(cfg: RunConfig, seed: int | None = None) -> ModelBundle:
    """Construct encoder + denoiser with seeded initialization."""
    torch.manual_seed(cfg.training.seed if seed is None else seed)
    schedule = build_schedule(
        cfg.diffusion.total_steps,
        cfg.diffusion.schedule,
        cfg.diffusion.beta_start,
        cfg.diffusion.beta_end,
    )
    encoder = ConditionEncoder(
        embed_dim=cfg.model.embed_dim,
        lstm_hidden=cfg.model.lstm_hidden,
        cnn_channels=cfg.model.cnn_channels,
        grid_size=cfg.scene.grid_size,
    )
    denoiser = TransformerDenoiser(
        schedule,
        horizon_len=cfg.data.horizon_len,
        cond_dim=cfg.model.embed_dim,
        model_dim=cfg.model.model_dim,
        heads=cfg.model.attention_heads,
        layers=cfg.model.transformer_layers,
        ff_dim=cfg.model.ff_dim,
    )
    dtype = _DTYPES[cfg.model.dtype]
    encoder.to(dtype)
    denoiser.to(dtype)
    return ModelBundle(encoder=encoder, denoiser=denoiser, schedule=schedule, config=cfg)


def build_scene(cfg: RunConfig, windows: WindowSet):
    if cfg.scene.coastline_file:
        rings = load_rings(cfg.scene.coastline_file)
        return rasterize_coastline(rings, windows.params, cfg.scene.grid_size)
    return all_water_scene(windows.params, cfg.scene.grid_size)


def prepare_tensors(windows: WindowSet, cfg: RunConfig, scene=None) -> dict[str, torch.Tensor]:
    """Window set -> model-ready tensors (observed, neighbor sum, fused map, future)."""
    if scene is None:
        scene = build_scene(cfg, windows)
    rng = np.random.default_rng(cfg.seed) if cfg.scene.alpha_per_window else None
    fused = fused_window_grids(
        windows.observed,
        scene,
        cfg.scene.sigma,
        cfg.scene.alpha,
        cfg.scene.alpha_per_window,
        rng,
    )
    dtype = _DTYPES[cfg.model.dtype]
    return {
        "observed": torch.as_tensor(windows.observed, dtype=dtype),
        "neighbor_sum": torch.as_tensor(windows.neighbor_sums(), dtype=dtype),
        "fused": torch.as_tensor(fused, dtype=dtype),
        "future": torch.as_tensor(windows.future, dtype=dtype),
    }


def conditions_for(bundle: ModelBundle, tensors: dict[str, torch.Tensor], indices=None) -> torch.Tensor:
    mask = frozenset(bundle.config.training.ablation_mask)
    if indices is None:
        obs, nsum, fused = tensors["observed"], tensors["neighbor_sum"], tensors["fused"]
    else:
        obs = tensors["observed"][indices]
        nsum = tensors["neighbor_sum"][indices]
        fused = tensors["fused"][indices]
    return bundle.encoder(obs, nsum, fused, mask)


def sample_windows(
    bundle: ModelBundle,
    windows: WindowSet,
    n_samples: int,
    generator: torch.Generator,
    tensors: dict[str, torch.Tensor] | None = None,
    keep_trace: bool = False,
    stride: int | None = None,
):
    """Draw n futures for every window; returns (B, n, H, 2) plus any trace."""
    bundle.eval()
    if tensors is None:
        tensors = prepare_tensors(windows, bundle.config)
    with torch.no_grad():
        cond = conditions_for(bundle, tensors)
    sampler = SamplerConfig(
        stride=bundle.config.sampler.stride if stride is None else stride,
        n_samples=n_samples,
        keep_trace=keep_trace,
    )
    result = sample(
        bundle.denoiser,
        cond,
        bundle.schedule,
        sampler,
        horizon_len=windows.horizon_len,
        generator=generator,
        dtype=bundle.dtype,
    )
    return result


def train(
    windows: WindowSet,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    val_windows: WindowSet | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the noise-prediction training loop to max_steps (or early stop).

    Emits periodic checkpoints and a loss curve file when out_dir is given.
    A non-finite loss aborts with diagnostics after dumping the last good
    checkpoint.
    """
    if len(windows) == 0:
        raise TrainingError("training window set is empty")
    torch.set_num_threads(max(1, cfg.training.threads))
    tcfg = cfg.training

    if resume_from is not None:
        state = torch.load(resume_from, weights_only=False)
        ckpt_compat = config_from_dict(state["config"]).compat_hash()
        if ckpt_compat != cfg.compat_hash():
            raise TrainingError(
                f"checkpoint compat hash {ckpt_compat} does not match "
                f"run config compat hash {cfg.compat_hash()}"
            )
        bundle = _bundle_from_checkpoint(state)
        bundle.config = cfg  # durations/seeds may legitimately differ on resume
        optimizer = torch.optim.Adam(
            list(bundle.encoder.parameters()) + list(bundle.denoiser.parameters()),
            lr=tcfg.learning_rate,
        )
        optimizer.load_state_dict(state["optimizer_state"])
        data_gen = torch.Generator().manual_seed(0)
        data_gen.set_state(state["torch_rng"])
        val_gen = torch.Generator().manual_seed(0)
        val_gen.set_state(state["val_rng"])
        np_rng = np.random.default_rng(0)
        np_rng.bit_generator.state = state["numpy_rng"]
        start_step = int(state["step"])
        permutation = np.asarray(state["permutation"])
        losses = [tuple(row) for row in state.get("loss_history", [])]
    else:
        bundle = build_models(cfg)
        optimizer = torch.optim.Adam(
            list(bundle.encoder.parameters()) + list(bundle.denoiser.parameters()),
            lr=tcfg.learning_rate,
        )
        data_gen = torch.Generator().manual_seed(tcfg.seed)
        val_gen = torch.Generator().manual_seed(tcfg.seed + 1)
        np_rng = np.random.default_rng(tcfg.seed)
        start_step = 0
        permutation = None
        losses = []

    bundle.encoder.train()
    bundle.denoiser.train()
    tensors = prepare_tensors(windows, cfg)
    val_tensors = prepare_tensors(val_windows, cfg) if val_windows is not None else None
    n = len(windows)
    batch_size = min(tcfg.batch_size, n)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    total_steps = cfg.diffusion.total_steps
    horizon = windows.horizon_len
    dtype = bundle.dtype

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    loss_log = out_dir / "loss_curve.tsv" if out_dir is not None else None
    if loss_log is not None and (start_step == 0 or not loss_log.exists()):
        loss_log.write_text(f"# config_hash={cfg.hash()}\nstep\tloss\tlr\n")

    last_good = None
    best_val = float("inf")
    bad_evals = 0
    stopped_early = False

    step = start_step
    while step < tcfg.max_steps:
        epoch = step // steps_per_epoch
        if step % steps_per_epoch == 0 or permutation is None:
            permutation = np_rng.permutation(n)
        # exact closed-form decay so lr after e epochs is lr0 * decay**e
        lr = tcfg.learning_rate * tcfg.lr_decay**epoch
        for group in optimizer.param_groups:
            group["lr"] = lr

        pos = (step % steps_per_epoch) * batch_size
        batch_idx = permutation[pos : pos + batch_size]
        x0 = tensors["future"][batch_idx]
        b = x0.shape[0]
        k = torch.randint(1, total_steps + 1, (b,), generator=data_gen)
        eps = torch.randn(b, horizon, 2, generator=data_gen, dtype=dtype)

        try:
            condition = conditions_for(bundle, tensors, batch_idx)
            loss = training_target(x0, k, eps, condition, bundle.denoiser, bundle.schedule)
        except (SamplingError, ValueError) as exc:
            if out_dir is not None and last_good is not None:
                torch.save(last_good, out_dir / "abort_checkpoint.pt")
            param_norm = sum(
                float(p.detach().norm()) for p in bundle.denoiser.parameters()
            )
            raise TrainingError(
                f"aborted at step {step}: {exc} (k batch {k.tolist()[:8]}, "
                f"denoiser parameter norm {param_norm:.3e})"
            ) from exc

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        step += 1
        loss_val = float(loss.detach())

        if step % tcfg.log_every == 0 or step == tcfg.max_steps:
            losses.append((step, loss_val, lr))
            if loss_log is not None:
                with loss_log.open("a") as fh:
                    fh.write(f"{step}\t{loss_val:.9f}\t{lr:.9e}\n")

        if out_dir is not None and step % tcfg.checkpoint_every == 0:
            last_good = _checkpoint_state(
                bundle, optimizer, data_gen, val_gen, np_rng, step, permutation, losses
            )
            torch.save(last_good, out_dir / "checkpoint.pt")

        if (
            tcfg.eval_every
            and val_windows is not None
            and step % tcfg.eval_every == 0
        ):
            score = _val_score(bundle, val_windows, val_tensors, val_gen)
            bundle.encoder.train()
            bundle.denoiser.train()
            if score < best_val - 1e-12:
                best_val = score
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= tcfg.patience:
                    stopped_early = True
                    break

    final_state = _checkpoint_state(
        bundle, optimizer, data_gen, val_gen, np_rng, step, permutation, losses
    )
    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = out_dir / "checkpoint.pt"
        torch.save(final_state, checkpoint_path)
    bundle.eval()
    return TrainResult(
        bundle=bundle,
        losses=losses,
        state=final_state,
        checkpoint_path=checkpoint_path,
        stopped_early=stopped_early,
    )


def _val_score(bundle, val_windows, val_tensors, generator) -> float:
    """Best-of-20 normalized ADE at the full horizon, for model selection."""
    result = sample_windows(bundle, val_windows, 20, generator, tensors=val_tensors)
    samples = result.trajectories.numpy()
    vals = [
        best_of_n(
            samples[i], val_windows.future[i], val_windows.horizon_len, "ade", euclidean_units
        )
        for i in range(len(val_windows))
    ]
    return float(np.mean(vals))


def _checkpoint_state(bundle, optimizer, data_gen, val_gen, np_rng, step, permutation, losses):
    return {
        "format": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": bundle.config.to_dict(),
        "config_hash": bundle.config.hash(),
        "step": step,
        "encoder_state": copy.deepcopy(bundle.encoder.state_dict()),
        "denoiser_state": copy.deepcopy(bundle.denoiser.state_dict()),
        "optimizer_state": copy.deepcopy(optimizer.state_dict()),
        "torch_rng": data_gen.get_state(),
        "val_rng": val_gen.get_state(),
        "numpy_rng": np_rng.bit_generator.state,
        "permutation": np.asarray(permutation),
        "loss_history": [list(row) for row in losses],
    }


def _bundle_from_checkpoint(state: dict) -> ModelBundle:
    if state.get("format") != "checkpoint":
        raise TrainingError("not a checkpoint file")
    if state.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {state.get('version')}")
    cfg = config_from_dict(state["config"])
    bundle = build_models(cfg)
    bundle.encoder.load_state_dict(state["encoder_state"])
    bundle.denoiser.load_state_dict(state["denoiser_state"])
    return bundle


def save_checkpoint(result: TrainResult, path: str | Path) -> None:
    """Write the finished run's checkpoint state to disk."""
    torch.save(result.state, path)


def load_checkpoint(path: str | Path) -> tuple[ModelBundle, dict]:
    """Load a checkpoint into a fresh model bundle; returns (bundle, raw state)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    state = torch.load(path, weights_only=False)
    bundle = _bundle_from_checkpoint(state)
    bundle.eval()
    return bundle, state


def checkpoint_id(state: dict) -> str:
    return f"{state['config_hash']}@{state['step']}"


def validate(
    bundle: ModelBundle,
    val_windows: WindowSet,
    n_samples: int = 20,
    horizons_hours: list[float] | None = None,
    seed: int = 0,
) -> MetricReport:
    """Full sampler + displacement metrics over a validation split."""
    if horizons_hours is None:
        horizons_hours = [val_windows.horizon_len * val_windows.delta_minutes / 60.0]
    generator = torch.Generator().manual_seed(seed)
    tensors = prepare_tensors(val_windows, bundle.config)

    def sample_fn(indices):
        result = sample_windows(
            bundle, val_windows.subset(indices), n_samples, generator,
            tensors={key: val[indices] for key, val in tensors.items()},
        )
        return result.trajectories.numpy()

    return report(
        sample_fn,
        val_windows,
        horizons_hours,
        n=n_samples,
        config_hash=bundle.config.hash(),
    )
