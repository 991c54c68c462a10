"""Figure rendering for traces, reports, loss curves and scene grids.

All figures are written straight to files with the Agg backend; no display
server is needed and identical inputs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "vesseldiff"}}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def plot_trace_panels(
    trace: dict[int, np.ndarray],
    observed: np.ndarray,
    truth: np.ndarray,
    params,
    out_dir: str | Path,
) -> list[Path]:
    """One scatter panel per retained reverse-diffusion step.

    trace maps step k -> (num_windows, n, H, 2) normalized states; observed
    and truth are the matching (num_windows, L/H, 2) arrays.
    """
    out_dir = Path(out_dir)
    paths = []
    for k in sorted(trace, reverse=True):
        states = trace[k]
        fig, ax = plt.subplots(figsize=(5, 5))
        lat, lon = params.denormalize(states[..., 0].ravel(), states[..., 1].ravel())
        ax.scatter(lon, lat, s=2, alpha=0.25, color="tab:cyan", label="samples")
        for w in range(observed.shape[0]):
            olat, olon = params.denormalize(observed[w, :, 0], observed[w, :, 1])
            tlat, tlon = params.denormalize(truth[w, :, 0], truth[w, :, 1])
            ax.plot(olon, olat, color="tab:red", lw=1.0)
            ax.plot(tlon, tlat, color="tab:blue", lw=1.0)
        ax.set_title(f"reverse step k = {k}")
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
        paths.append(_save(fig, out_dir / f"trace_k{k:04d}.png"))
    return paths


def plot_error_vs_step(
    step_errors: dict[int, tuple[float, float]], out_path: str | Path
) -> Path:
    """ADE/FDE as a function of the reverse-diffusion step."""
    ks = sorted(step_errors, reverse=True)
    ades = [step_errors[k][0] for k in ks]
    fdes = [step_errors[k][1] for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, ades, marker="o", color="tab:blue", label="ADE")
    ax.plot(ks, fdes, marker="s", color="tab:green", label="FDE")
    ax.invert_xaxis()
    ax.set_xlabel("reverse diffusion step k")
    ax.set_ylabel("error (km)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, Path(out_path))


def plot_metric_report(report, out_path: str | Path) -> Path:
    """ADE/FDE versus prediction horizon from a metric report."""
    hours = [r.hours for r in report.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(hours, [r.ade_km for r in report.rows], marker="o", label="ADE")
    ax.plot(hours, [r.fde_km for r in report.rows], marker="s", label="FDE")
    ax.set_xlabel("horizon (hours)")
    ax.set_ylabel("error (km)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, Path(out_path))


def plot_loss_curve(steps, losses, out_path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    return _save(fig, Path(out_path))


def save_grayscale(grid: np.ndarray, out_path: str | Path) -> Path:
    """Dump a scene or heatmap grid as a grayscale image (row 0 = south)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    peak = float(grid.max())
    scaled = grid / peak if peak > 0 else grid
    plt.imsave(out_path, scaled, cmap="gray", vmin=0.0, vmax=1.0, origin="lower")
    return out_path
