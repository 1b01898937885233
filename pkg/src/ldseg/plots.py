"""Figure emission: loss curves, qualitative panels, and the ablation bars."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError

# class-id palette for prediction PNG overlays (uint8 RGB)
PALETTE = np.array(
    [
        [60, 62, 70],      # background
        [200, 70, 65],     # circle
        [75, 180, 90],     # rectangle
        [70, 105, 210],    # triangle
        [210, 195, 75],    # stripe
    ],
    dtype=np.uint8,
)


def colorize_labels(label: np.ndarray, num_classes: int) -> np.ndarray:
    """Map class ids to RGB; ids beyond the palette render as white."""
    palette = PALETTE
    if num_classes > len(palette):
        extra = np.linspace(0, 255, (num_classes - len(palette)) * 3)
        palette = np.vstack([palette, extra.reshape(-1, 3).astype(np.uint8)])
    out = np.full(label.shape + (3,), 255, dtype=np.uint8)
    valid = (label >= 0) & (label < num_classes)
    out[valid] = palette[label[valid]]
    return out


def read_loss_csv(path: str | Path) -> dict[str, list[tuple[int, float]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"loss CSV not found: {path}")
    series: dict[str, list[tuple[int, float]]] = defaultdict(list)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["step", "component", "value"]:
            raise DataError(f"{path} is not a loss CSV (bad header {header})")
        for row in reader:
            series[row[1]].append((int(row[0]), float(row[2])))
    if not series:
        raise DataError(f"loss CSV {path} has no data rows")
    return dict(series)


def plot_loss_curves(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """One PNG per loss component; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for component, points in read_loss_csv(csv_path).items():
        steps, values = zip(*points)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(steps, values, linewidth=1)
        ax.set_xlabel("step")
        ax.set_ylabel(component)
        ax.set_title(f"{component} loss")
        ax.grid(alpha=0.3)
        path = out_dir / f"loss_{component}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def plot_panels(
    rows: list[tuple[np.ndarray, np.ndarray | None, np.ndarray]],
    out_path: str | Path,
    num_classes: int,
) -> Path:
    """Side-by-side image / ground truth / prediction grid, 3 columns x n rows."""
    if not rows:
        raise DataError("no panel rows to plot")
    n = len(rows)
    fig, axes = plt.subplots(n, 3, figsize=(7.5, 2.6 * n), squeeze=False)
    for r, (image, gt, pred) in enumerate(rows):
        axes[r][0].imshow(np.transpose(image, (1, 2, 0)))
        axes[r][0].set_title("image" if r == 0 else "")
        if gt is not None:
            axes[r][1].imshow(colorize_labels(gt, num_classes))
        axes[r][1].set_title("ground truth" if r == 0 else "")
        axes[r][2].imshow(colorize_labels(pred, num_classes))
        axes[r][2].set_title("prediction" if r == 0 else "")
        for c in range(3):
            axes[r][c].set_axis_off()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_ablation_bars(cells: dict[str, float], out_path: str | Path) -> Path:
    """Mean target-val mIoU per ablation cell, in table row order."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    names = list(cells)
    values = [cells[n] for n in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(names)), values, color=["#888", "#888", "#4a6", "#4a6"])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("target-val mIoU")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
