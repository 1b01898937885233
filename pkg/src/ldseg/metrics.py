"""Confusion-matrix accumulation and per-class IoU / mIoU.

Rows index ground truth, columns index prediction; ignore-id pixels are
never counted. Classes whose union is empty are undefined and excluded from
the mean. Per-class IoU is a fraction in [0, 1]; mIoU is conventionally
reported as a percentage.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, MetricError

IGNORE_ID = 255


class ConfusionMatrix:
    """K x K pixel counts, accumulated over any number of prediction/label pairs."""

    def __init__(self, num_classes: int, ignore_id: int = IGNORE_ID):
        if num_classes < 1:
            raise ContractError("need at least one class")
        self.num_classes = num_classes
        self.ignore_id = ignore_id
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        """Add one prediction/ground-truth pair (integer arrays, same shape)."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ContractError(
                f"pred shape {pred.shape} != gt shape {gt.shape}"
            )
        valid = gt != self.ignore_id
        g = gt[valid]
        p = pred[valid]
        k = self.num_classes
        if ((g < 0) | (g >= k)).any():
            raise DataError(f"ground-truth ids outside [0, {k})")
        if ((p < 0) | (p >= k)).any():
            raise DataError(f"predicted ids outside [0, {k})")
        self.counts += np.bincount(k * g + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ContractError("class counts differ")
        self.counts += other.counts
        return self

    def iou(self) -> tuple[np.ndarray, float]:
        """(per-class IoU with NaN where undefined, mIoU as a percentage)."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        union = tp + fp + fn
        per_class = np.full(self.num_classes, np.nan)
        defined = union > 0
        per_class[defined] = tp[defined] / union[defined]
        if not defined.any():
            raise MetricError("IoU undefined for every class (no pixels accumulated)")
        miou = float(np.nanmean(per_class) * 100.0)
        return per_class, miou


def write_metrics(out_dir: str | Path, cm: ConfusionMatrix, class_names: list[str]) -> dict:
    """Emit metrics.json and metrics.csv (one row per class); returns the dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class, miou = cm.iou()
    pixel_counts = cm.counts.sum(axis=1)
    payload = {
        "miou": round(miou, 1),
        "per_class_iou": {
            name: (None if np.isnan(v) else round(float(v), 6))
            for name, v in zip(class_names, per_class)
        },
        "pixel_counts": {name: int(c) for name, c in zip(class_names, pixel_counts)},
        "total_pixels": int(cm.counts.sum()),
    }
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "iou", "gt_pixels"])
        for name, v, c in zip(class_names, per_class, pixel_counts):
            w.writerow([name, "" if np.isnan(v) else f"{v:.6f}", int(c)])
        w.writerow(["miou_percent", f"{miou:.1f}", int(cm.counts.sum())])
    return payload
