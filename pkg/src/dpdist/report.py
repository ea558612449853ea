"""CSV emission and figure rendering for benchmark and training runs.

Every CSV here is written with ``repr`` of Python floats, so identical inputs
produce byte-identical files; each writer has a matching plot function that
renders a PNG next to the CSV.  Figures use the file-only backend and never
open a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "fmt",
    "figure_path",
    "write_loss_csv",
    "plot_loss",
    "write_detection_csv",
    "plot_detection",
    "write_identification_csv",
    "plot_identification",
    "write_registration_csv",
    "write_registration_summary_csv",
    "plot_registration_summary",
    "write_slice_csv",
    "plot_slice",
]


def fmt(x) -> str:
    """Shortest exact decimal form of a float (round-trips bit for bit)."""
    return repr(float(x))


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def write_loss_csv(path, history):
    lines = ["step,loss,learning_rate"]
    lines.extend(f"{step},{fmt(loss)},{fmt(rate)}" for step, loss, rate in history)
    Path(path).write_text("\n".join(lines) + "\n")


def plot_loss(path, history, smooth_window: int = 101):
    steps = np.array([h[0] for h in history])
    losses = np.array([h[1] for h in history])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=0.5, alpha=0.4, label="per step")
    if len(losses) > smooth_window:
        kernel = np.ones(smooth_window) / smooth_window
        smoothed = np.convolve(losses, kernel, mode="valid")
        ax.plot(steps[smooth_window // 2 : smooth_window // 2 + len(smoothed)], smoothed, lw=1.5, label="smoothed")
    ax.set_xlabel("step")
    ax.set_ylabel("mean absolute error")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_detection_csv(path, curves):
    lines = ["method,magnitude,accuracy,trials"]
    for curve in curves:
        for mag, acc in zip(curve.magnitudes, curve.accuracy):
            lines.append(f"{curve.method},{fmt(mag)},{fmt(acc)},{curve.trials}")
    Path(path).write_text("\n".join(lines) + "\n")


def plot_detection(path, curves, xlabel="transform magnitude"):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for curve in curves:
        ax.plot(curve.magnitudes, curve.accuracy, marker="o", label=curve.method)
    ax.axhline(0.5, color="gray", ls="--", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("detection accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_identification_csv(path, rows):
    """Rows: (method label, m, rate, object count)."""
    lines = ["method,m,rate,objects"]
    lines.extend(f"{label},{m},{fmt(rate)},{objects}" for label, m, rate, objects in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def plot_identification(path, rows):
    labels = [f"{label} (top-{m})" for label, m, _, _ in rows]
    rates = [rate for _, _, rate, _ in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(rows)), rates)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("identification rate")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_registration_csv(path, results):
    lines = ["trial,rotation_error_deg,translation_error,iterations,final_loss,diverged"]
    for t, r in enumerate(results):
        lines.append(
            f"{t},{fmt(r.rotation_error_deg)},{fmt(r.translation_error)},"
            f"{r.iterations},{fmt(r.final_loss)},{int(r.diverged)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_registration_summary_csv(path, entries):
    """Entries: (method label, rotation threshold deg, translation threshold, ratio, trials)."""
    lines = ["method,rot_threshold_deg,trans_threshold,success_ratio,trials"]
    lines.extend(
        f"{label},{fmt(rot)},{fmt(trans)},{fmt(ratio)},{trials}" for label, rot, trans, ratio, trials in entries
    )
    Path(path).write_text("\n".join(lines) + "\n")


def plot_registration_summary(path, entries):
    thresholds = sorted({(rot, trans) for _, rot, trans, _, _ in entries})
    labels = sorted({label for label, _, _, _, _ in entries})
    width = 0.8 / max(1, len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = np.arange(len(thresholds))
    for i, label in enumerate(labels):
        ratios = []
        for rot, trans in thresholds:
            match = [ratio for lb, ro, tr, ratio, _ in entries if lb == label and (ro, tr) == (rot, trans)]
            ratios.append(match[0] if match else 0.0)
        ax.bar(xs + i * width, ratios, width=width, label=label)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels([f"{rot:g}° / {trans:g}" for rot, trans in thresholds])
    ax.set_xlabel("error thresholds (rotation / translation)")
    ax.set_ylabel("success ratio")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_slice_csv(path, field):
    lines = ["x0,y0,dx,dy,z", f"{fmt(field.x0)},{fmt(field.y0)},{fmt(field.dx)},{fmt(field.dy)},{fmt(field.z)}"]
    lines.extend(",".join(fmt(v) for v in row) for row in field.values)
    Path(path).write_text("\n".join(lines) + "\n")


def plot_slice(path, field):
    res_y, res_x = field.values.shape
    extent = (
        field.x0,
        field.x0 + field.dx * (res_x - 1),
        field.y0,
        field.y0 + field.dy * (res_y - 1),
    )
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(field.values, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="distance")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"field slice at z = {field.z:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
