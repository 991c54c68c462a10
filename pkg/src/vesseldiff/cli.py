"""Command-line interface driving the full pipeline.

Subcommands: preprocess, synth, train, sample, evaluate, plot. One JSON config
file drives every stage; its hash is embedded in each artifact and mismatched
checkpoint/config pairs are refused. Exit codes: 0 success, 1 internal error,
2 usage or input error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import evaluation, plots, training
from .ais_data import SPLIT_NAMES, WindowSet, preprocess
from .config import ConfigError, RunConfig, load_config
from .containers import ContainerError, load_container, save_container
from .scene_context import GeometryError
from .synthetic import make_synthetic_windows

_INPUT_ERRORS = (ConfigError, ContainerError, GeometryError, FileNotFoundError)


class InputError(click.ClickException):
    exit_code = 2


def _load_cfg(config_path: str, seed: int | None) -> RunConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
        cfg.training.seed = seed
    return cfg


def _shared_options(fn):
    fn = click.option("--config", "config_path", required=True, type=str, help="run config JSON")(fn)
    fn = click.option("--seed", type=int, default=None, help="override the config seed")(fn)
    fn = click.option("--out", "out_dir", required=True, type=str, help="output directory")(fn)
    return fn


def _parse_horizons(spec_text: str) -> list[float]:
    text = spec_text.strip()
    if not text:
        raise click.UsageError("horizon list is empty")
    if ".." in text:
        parts = text.split("..")
        if len(parts) not in (2, 3):
            raise click.UsageError(f"bad horizon range {text!r} (use start..end[..step])")
        start, end = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 0.5
        count = int(round((end - start) / step)) + 1
        return [round(start + i * step, 6) for i in range(count)]
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_windows(text: str, pool_size: int) -> np.ndarray:
    if text == "all":
        return np.arange(pool_size)
    if ":" in text:
        lo, hi = text.split(":")
        idx = np.arange(int(lo or 0), min(int(hi or pool_size), pool_size))
    else:
        idx = np.array([int(tok) for tok in text.split(",") if tok.strip()], dtype=np.int64)
    if len(idx) == 0 or idx.min() < 0 or idx.max() >= pool_size:
        raise InputError(f"window selection {text!r} is out of range for {pool_size} windows")
    return idx


def _select_split(windows: WindowSet, split: str | None) -> WindowSet:
    if split is None:
        return windows
    if split not in SPLIT_NAMES:
        raise click.UsageError(f"unknown split {split!r}; choose from {SPLIT_NAMES}")
    selected = windows.for_split(split)
    if len(selected) == 0:
        raise InputError(f"no windows in split {split!r}")
    return selected


@click.group()
def cli():
    """Diffusion-based vessel trajectory forecasting."""


@cli.command("preprocess")
@_shared_options
def cmd_preprocess(config_path, seed, out_dir):
    """Ingest raw AIS files into a window archive."""
    cfg = _load_cfg(config_path, seed)
    if not cfg.data.ais_files:
        raise InputError("config lists no AIS input files (data.ais_files)")
    missing = [f for f in cfg.data.ais_files if not Path(f).exists()]
    if missing:
        raise InputError(f"missing AIS input files: {missing}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    windows, stage_report = preprocess(cfg.data.ais_files, cfg.data)
    if len(windows) == 0:
        raise InputError("preprocessing produced no journeys/windows")
    stage_report = {"config_hash": cfg.hash(), **stage_report}
    windows.meta["config_hash"] = cfg.hash()
    archive_path = out / "windows.zip"
    windows.save(archive_path)
    report_path = out / "preprocess_report.json"
    report_path.write_text(json.dumps(stage_report, indent=2, sort_keys=True) + "\n")
    click.echo(f"archive: {archive_path}")
    click.echo(f"report: {report_path}")
    click.echo(json.dumps(stage_report, indent=2, sort_keys=True))


@cli.command("synth")
@_shared_options
def cmd_synth(config_path, seed, out_dir):
    """Generate a synthetic window archive (no AIS data needed)."""
    cfg = _load_cfg(config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    windows = make_synthetic_windows(
        n_trajectories=cfg.synthetic.n_trajectories,
        history_len=cfg.data.history_len,
        horizon_len=cfg.data.horizon_len,
        kinds=tuple(cfg.synthetic.kinds),
        noise=cfg.synthetic.noise,
        neighbor_rate=cfg.synthetic.neighbor_rate,
        seed=cfg.synthetic.seed if seed is None else seed,
        roi=cfg.data.roi,
        delta_minutes=cfg.data.delta_minutes,
        split_fractions=cfg.data.split_fractions,
    )
    windows.meta["config_hash"] = cfg.hash()
    archive_path = out / "windows.zip"
    windows.save(archive_path)
    click.echo(f"archive: {archive_path} ({len(windows)} windows)")


@cli.command("train")
@_shared_options
@click.option("--archive", "archive_path", required=True, type=str, help="window archive")
@click.option("--resume", "resume_path", default=None, type=str, help="checkpoint to resume from")
def cmd_train(config_path, seed, out_dir, archive_path, resume_path):
    """Train the conditional denoiser on a window archive."""
    cfg = _load_cfg(config_path, seed)
    windows = WindowSet.load(archive_path)
    if windows.meta.get("config_hash") not in (None, cfg.hash()):
        click.echo(
            f"warning: archive config hash {windows.meta.get('config_hash')} "
            f"differs from run config hash {cfg.hash()}",
            err=True,
        )
    train_split = windows.for_split("train")
    if len(train_split) == 0:
        train_split = windows
    val_split = windows.for_split("val")
    out = Path(out_dir)
    result = training.train(
        train_split,
        cfg,
        out_dir=out,
        val_windows=val_split if (len(val_split) and cfg.training.eval_every) else None,
        resume_from=resume_path,
    )
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"loss_curve: {out / 'loss_curve.tsv'}")
    if result.losses:
        step, loss, lr = result.losses[-1]
        click.echo(f"final: step={step} loss={loss:.6f} lr={lr:.3e}")


def _load_matching_checkpoint(checkpoint_path: str, cfg: RunConfig):
    bundle, state = training.load_checkpoint(checkpoint_path)
    if bundle.config.compat_hash() != cfg.compat_hash():
        raise InputError(
            f"checkpoint compat hash {bundle.config.compat_hash()} does not match "
            f"config compat hash {cfg.compat_hash()}"
        )
    return bundle, state


@cli.command("sample")
@_shared_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--archive", "archive_path", required=True, type=str)
@click.option("--windows", "window_spec", default="all", help="indices into the pool: 'all', 'a:b', or 'i,j,k'")
@click.option("--split", default=None, help="restrict the pool to one split")
@click.option("--n", "n_samples", default=None, type=int, help="samples per window")
@click.option("--trace/--no-trace", "emit_trace", default=False, help="write the per-step trace file")
def cmd_sample(config_path, seed, out_dir, checkpoint_path, archive_path, window_spec, split, n_samples, emit_trace):
    """Sample multi-modal futures for selected windows."""
    cfg = _load_cfg(config_path, seed)
    bundle, state = _load_matching_checkpoint(checkpoint_path, cfg)
    all_windows = WindowSet.load(archive_path)
    pool = _select_split(all_windows, split)
    idx = _parse_windows(window_spec, len(pool))
    selected = pool.subset(idx)
    n = n_samples if n_samples is not None else cfg.sampler.n_samples

    generator = torch.Generator().manual_seed(cfg.seed)
    torch.set_num_threads(max(1, cfg.training.threads))
    result = training.sample_windows(bundle, selected, n, generator, keep_trace=emit_trace)
    samples = result.trajectories.numpy()  # (B, n, H, 2) normalized

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lat, lon = selected.params.denormalize(samples[..., 0], samples[..., 1])
    tsv = out / "predictions.tsv"
    with tsv.open("w") as fh:
        fh.write(f"# config_hash={cfg.hash()} checkpoint_id={training.checkpoint_id(state)}\n")
        fh.write("window\tsample\tstep\tlat\tlon\n")
        for w in range(samples.shape[0]):
            for s in range(samples.shape[1]):
                for t in range(samples.shape[2]):
                    fh.write(f"{idx[w]}\t{s}\t{t + 1}\t{lat[w, s, t]:.9f}\t{lon[w, s, t]:.9f}\n")
    click.echo(f"predictions: {tsv}")

    if emit_trace:
        arrays = {f"step_{k:04d}": states.numpy() for k, states in result.trace}
        arrays["window_indices"] = idx.astype(np.int64)
        meta = {
            "config_hash": cfg.hash(),
            "compat_hash": cfg.compat_hash(),
            "checkpoint_id": training.checkpoint_id(state),
            "steps": sorted((k for k, _ in result.trace), reverse=True),
            "n_samples": n,
            "seed": cfg.seed,
            "split": split or "all",
            "horizon_len": selected.horizon_len,
        }
        trace_path = out / "trace.zip"
        save_container(trace_path, "sampler-trace", arrays, meta)
        click.echo(f"trace: {trace_path} ({len(result.trace)} snapshots)")


def _report_for_bundle(bundle, state, windows, horizons, n, cfg):
    generator = torch.Generator().manual_seed(cfg.seed)
    torch.set_num_threads(max(1, cfg.training.threads))
    tensors = training.prepare_tensors(windows, bundle.config)

    def sample_fn(indices):
        result = training.sample_windows(
            bundle, windows, n, generator, tensors=tensors
        )
        return result.trajectories.numpy()[indices]

    return evaluation.report(
        sample_fn,
        windows,
        horizons,
        n=n,
        config_hash=cfg.hash(),
        checkpoint_id=training.checkpoint_id(state),
    )


@cli.command("evaluate")
@_shared_options
@click.option("--checkpoint", "checkpoint_paths", multiple=True, type=str)
@click.option("--trace", "trace_path", default=None, type=str, help="evaluate a sampler trace instead")
@click.option("--archive", "archive_path", required=True, type=str)
@click.option("--split", default="test")
@click.option("--n", "n_samples", default=None, type=int)
@click.option("--horizons", default=None, help="hours: 'a,b,c' or 'start..end[..step]'")
def cmd_evaluate(config_path, seed, out_dir, checkpoint_paths, trace_path, archive_path, split, n_samples, horizons):
    """Displacement metrics per horizon; several checkpoints give a comparison table."""
    cfg = _load_cfg(config_path, seed)
    if not checkpoint_paths and trace_path is None:
        raise click.UsageError("provide --checkpoint (repeatable) or --trace")
    all_windows = WindowSet.load(archive_path)
    pool = _select_split(all_windows, split)
    n = n_samples if n_samples is not None else cfg.sampler.n_samples
    if horizons is not None:
        horizon_list = _parse_horizons(horizons)
    else:
        horizon_list = [pool.horizon_len * pool.delta_minutes / 60.0]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    reports = {}
    if trace_path is not None:
        arrays, meta = load_container(trace_path, "sampler-trace")
        if meta.get("compat_hash", meta["config_hash"]) not in (cfg.compat_hash(), cfg.hash()):
            raise InputError(
                f"trace compat hash {meta.get('compat_hash')} does not match "
                f"config compat hash {cfg.compat_hash()}"
            )
        final = arrays["step_0000"]
        # trace indices refer to the pool the sampler saw, recorded in its meta
        trace_pool = _select_split(
            all_windows, None if meta.get("split") in (None, "all") else meta["split"]
        )
        selected = trace_pool.subset(arrays["window_indices"])
        report = evaluation.report(
            lambda indices: final[indices],
            selected,
            horizon_list,
            n=int(meta["n_samples"]),
            config_hash=cfg.hash(),
            checkpoint_id=str(meta["checkpoint_id"]),
        )
        reports["trace"] = report
    for path in checkpoint_paths:
        bundle, state = _load_matching_checkpoint(path, cfg)
        label = Path(path).stem if len(checkpoint_paths) > 1 else "metrics"
        while label in reports:
            label += "_b"
        reports[label] = _report_for_bundle(bundle, state, pool, horizon_list, n, cfg)

    for label, report in reports.items():
        json_path, table_path = report.write(out, stem=label)
        plots.plot_metric_report(report, out / f"{label}.png")
        click.echo(f"{label}: {json_path} {table_path}")

    if len(reports) > 1:
        lines = ["horizon_hours\t" + "\t".join(f"{lbl}_ade\t{lbl}_fde" for lbl in reports)]
        first = next(iter(reports.values()))
        for i, row in enumerate(first.rows):
            cells = [f"{row.hours:g}"]
            for rep in reports.values():
                cells.append(f"{rep.rows[i].ade_km:.9f}")
                cells.append(f"{rep.rows[i].fde_km:.9f}")
            lines.append("\t".join(cells))
        cmp_path = out / "comparison.tsv"
        cmp_path.write_text("\n".join(lines) + "\n")
        click.echo(f"comparison: {cmp_path}")


@cli.command("plot")
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--trace", "trace_path", default=None, type=str)
@click.option("--archive", "archive_path", default=None, type=str)
@click.option("--report", "report_path", default=None, type=str)
@click.option("--loss", "loss_path", default=None, type=str)
@click.option("--scene", "scene_config", default=None, type=str, help="config whose scene/heatmap to dump")
@click.option("--horizons", default=None, help="horizon hours for trace error curves")
def cmd_plot(out_dir, trace_path, archive_path, report_path, loss_path, scene_config, horizons):
    """Render figures from traces, reports, loss curves, or scene grids."""
    if not any([trace_path, report_path, loss_path, scene_config]):
        raise click.UsageError("nothing to plot: give --trace, --report, --loss or --scene")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if trace_path is not None:
        if archive_path is None:
            raise click.UsageError("--trace needs --archive for ground truth overlays")
        arrays, meta = load_container(trace_path, "sampler-trace")
        windows = WindowSet.load(archive_path).subset(arrays["window_indices"])
        trace = {
            int(name.split("_")[1]): arrays[name]
            for name in arrays
            if name.startswith("step_")
        }
        paths = plots.plot_trace_panels(
            trace, windows.observed, windows.future, windows.params, out
        )
        click.echo(f"panels: {len(paths)} files in {out}")

        if horizons is not None:
            horizon_list = _parse_horizons(horizons)
        else:
            horizon_list = [windows.horizon_len * windows.delta_minutes / 60.0]
        steps = evaluation.horizon_steps_for(horizon_list[-1], windows.delta_minutes)
        truth_lat, truth_lon = windows.params.denormalize(
            windows.future[..., 0], windows.future[..., 1]
        )
        truth = np.stack([truth_lat, truth_lon], axis=-1)
        step_errors = {}
        for k, states in trace.items():
            lat, lon = windows.params.denormalize(states[..., 0], states[..., 1])
            pred = np.stack([lat, lon], axis=-1)
            ade_vals = [
                evaluation.best_of_n(pred[i], truth[i], steps, "ade")
                for i in range(pred.shape[0])
            ]
            fde_vals = [
                evaluation.best_of_n(pred[i], truth[i], steps, "fde")
                for i in range(pred.shape[0])
            ]
            step_errors[k] = (float(np.mean(ade_vals)), float(np.mean(fde_vals)))
        curve = plots.plot_error_vs_step(step_errors, out / "error_vs_step.png")
        click.echo(f"curve: {curve}")

    if report_path is not None:
        doc = json.loads(Path(report_path).read_text())
        rows = [
            evaluation.HorizonRow(h["hours"], h["steps"], h["ade_km"], h["fde_km"])
            for h in doc["horizons"]
        ]
        report = evaluation.MetricReport(
            rows, doc["n_best_of"], doc["sample_count"], doc["config_hash"], doc["checkpoint_id"]
        )
        click.echo(f"report figure: {plots.plot_metric_report(report, out / 'metrics.png')}")

    if loss_path is not None:
        rows = [
            line.split("\t")
            for line in Path(loss_path).read_text().splitlines()
            if line and not line.startswith(("#", "step"))
        ]
        if not rows:
            raise InputError(f"loss curve {loss_path} contains no data rows")
        table = np.asarray(rows, dtype=np.float64)
        click.echo(
            f"loss figure: {plots.plot_loss_curve(table[:, 0], table[:, 1], out / 'loss_curve.png')}"
        )

    if scene_config is not None:
        cfg = load_config(scene_config)
        from .ais_data import NormalizationParams
        from .scene_context import all_water_scene, fuse, load_rings, rasterize_coastline, render_heatmap

        params = NormalizationParams.from_roi(cfg.data.roi)
        if cfg.scene.coastline_file:
            scene = rasterize_coastline(load_rings(cfg.scene.coastline_file), params, cfg.scene.grid_size)
        else:
            scene = all_water_scene(params, cfg.scene.grid_size)
        click.echo(f"scene: {plots.save_grayscale(scene.grid, out / 'scene.png')}")
        if archive_path is not None:
            # dump the first window's heatmap and trajectory-on-map grid too
            windows = WindowSet.load(archive_path)
            heatmap = render_heatmap(windows.observed[0], cfg.scene.grid_size, cfg.scene.sigma)
            click.echo(f"heatmap: {plots.save_grayscale(heatmap.grid, out / 'heatmap.png')}")
            fused = fuse(heatmap, scene, cfg.scene.alpha)
            click.echo(f"fused: {plots.save_grayscale(fused, out / 'fused.png')}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except _INPUT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # internal failure contract: exit code 1
        click.echo(f"internal error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
