"""Report rendering: JSON + CSV tables and matplotlib figures.

Every evaluation run writes three artifacts side by side: the JSON report
(aggregate statistics), a CSV with one row per evaluated sample, and a
PNG figure (rotation-error histogram, or the average aligned image in
reference mode).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import imaging
from .datasets import MAGIC
from .evaluation import EvaluationReport

__all__ = [
    "write_report",
    "write_samples_csv",
    "write_error_histogram",
    "write_loss_curve",
    "write_image_record",
]


def write_samples_csv(report: EvaluationReport, path) -> Path:
    path = Path(path)
    if not report.samples:
        path.write_text("")
        return path
    fields = list(report.samples[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(report.samples)
    return path


def write_error_histogram(report: EvaluationReport, path, title: str | None = None) -> Path:
    path = Path(path)
    hist = report.error_histogram
    edges = np.asarray(hist["bin_edges"])
    counts = np.asarray(hist["counts"])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           color="steelblue", edgecolor="white")
    ax.set_xlabel("rotation error (degrees)")
    ax.set_ylabel("pairs")
    ax.set_title(title or f"{report.dataset_id}: mean {report.mean_rotation_error:.2f} deg")
    ax.set_xlim(0, edges[-1])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_average_figure(average: np.ndarray, reference: np.ndarray, path,
                         mean_correntropy: float | None = None) -> Path:
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(6, 3.2))
    for ax, img, label in zip(axes, (reference, average), ("reference", "average aligned")):
        ax.imshow(img, cmap="gray")
        ax.set_title(label)
        ax.axis("off")
    if mean_correntropy is not None:
        fig.suptitle(f"mean correntropy {mean_correntropy:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_loss_curve(history: list[dict], path, window: int = 50) -> Path:
    path = Path(path)
    losses = np.asarray([h["loss"] for h in history])
    iters = np.asarray([h["iteration"] for h in history])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(iters, losses, lw=0.5, alpha=0.4, label="per step")
    if len(losses) >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(losses, kernel, mode="valid")
        ax.plot(iters[window - 1:], smooth, lw=1.5, label=f"{window}-step mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_image_record(path, first: np.ndarray, second: np.ndarray) -> Path:
    """Lossless pair record (same binary layout as dataset shards)."""
    path = Path(path)
    first = np.ascontiguousarray(first, dtype="<f4")
    second = np.ascontiguousarray(second, dtype="<f4")
    if first.shape != second.shape:
        raise ValueError(f"shape mismatch: {first.shape} vs {second.shape}")
    h, w = first.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAGIC, h, w))
        fh.write(first.tobytes())
        fh.write(second.tobytes())
    return path


def write_report(
    report: EvaluationReport,
    out_dir,
    stem: str = "report",
    average: np.ndarray | None = None,
    reference: np.ndarray | None = None,
) -> dict:
    """Render all artifacts for one evaluation; returns {name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    json_path = out / f"{stem}.json"
    json_path.write_text(report.to_json() + "\n")
    paths["json"] = json_path
    paths["csv"] = write_samples_csv(report, out / f"{stem}.csv")

    if report.error_histogram is not None:
        paths["histogram"] = write_error_histogram(report, out / f"{stem}_hist.png")
    if average is not None and reference is not None:
        paths["average_png"] = out / f"{stem}_average.png"
        imaging.write_png(paths["average_png"], average)
        paths["average_figure"] = write_average_figure(
            average, reference, out / f"{stem}_average_fig.png",
            mean_correntropy=report.mean_correntropy,
        )
        paths["average_record"] = write_image_record(
            out / f"{stem}_average.bin", average, reference
        )
    return paths
