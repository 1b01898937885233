"""Shared independent oracles and test utilities.

Everything here deliberately recomputes results with plain loops and
scalar math so the tests never depend on the code paths they check.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from ldseg.diffusion import NoiseSchedule


def schedule_from_alpha_bars(alpha_bars: list[float]) -> NoiseSchedule:
    """Build a schedule with prescribed cumulative products (for scalar cases)."""
    alpha = []
    prev = 1.0
    for ab in alpha_bars:
        alpha.append(ab / prev)
        prev = ab
    alpha_t = torch.tensor(alpha, dtype=torch.float64)
    return NoiseSchedule(
        T=len(alpha_bars),
        beta=1.0 - alpha_t,
        alpha=alpha_t,
        alpha_bar=torch.tensor(alpha_bars, dtype=torch.float64),
    )


def mse_loop(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return total / len(a)


def softmax_loop(logits) -> list[float]:
    exps = [math.exp(v) for v in logits]
    s = sum(exps)
    return [e / s for e in exps]


def cross_entropy_loop(logits, labels, ignore_id=255) -> float:
    """Mean -log softmax over non-ignored pixels; logits (K,H,W), labels (H,W)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    total, count = 0.0, 0
    for i in range(labels.shape[0]):
        for j in range(labels.shape[1]):
            y = int(labels[i, j])
            if y == ignore_id:
                continue
            p = softmax_loop(logits[:, i, j])[y]
            total += -math.log(max(p, 1e-12))
            count += 1
    return total / count


def argmax_loop(logits) -> np.ndarray:
    """Per-pixel first-maximum scan; logits (K,H,W)."""
    logits = np.asarray(logits, dtype=np.float64)
    k, h, w = logits.shape
    out = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            best, best_c = -math.inf, 0
            for c in range(k):
                if logits[c, i, j] > best:
                    best, best_c = logits[c, i, j], c
            out[i, j] = best_c
    return out


def kl_to_uniform_loop(p) -> float:
    return sum(v * math.log(3.0 * max(v, 1e-12)) for v in p)


def nll_loop(p, tag) -> float:
    onehot = [0.0, 0.0, 0.0]
    onehot[tag] = 1.0
    return -sum(o * math.log(max(v, 1e-12)) for o, v in zip(onehot, p))


def confusion_loop(pred, gt, k, ignore_id=255) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    cm = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gt.ravel(), pred.ravel()):
        if g == ignore_id:
            continue
        cm[int(g), int(p)] += 1
    return cm


def iou_loop(cm) -> tuple[list[float], float]:
    """Per-class IoU (nan when undefined) and mIoU percentage by direct counting."""
    k = cm.shape[0]
    per = []
    for c in range(k):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        denom = tp + fp + fn
        per.append(float("nan") if denom == 0 else tp / denom)
    defined = [v for v in per if not math.isnan(v)]
    return per, 100.0 * sum(defined) / len(defined)


def check_ddim_spacing(ts: list[int], T: int, n_steps: int) -> None:
    """Independent validator for the reverse-step index sequence."""
    assert len(ts) == n_steps
    assert ts[0] == T - 1
    assert all(0 <= t < T for t in ts)
    assert all(a > b for a, b in zip(ts, ts[1:])), "not strictly descending"
    gaps = [a - b for a, b in zip(ts, ts[1:])]
    if gaps:
        assert max(gaps) - min(gaps) <= 1, f"uneven gaps: {sorted(set(gaps))}"


def flat_coordinates(module: torch.nn.Module) -> list[tuple[torch.nn.Parameter, int]]:
    """All (parameter, flat index) coordinates of a module."""
    coords = []
    for p in module.parameters():
        for j in range(p.numel()):
            coords.append((p, j))
    return coords


def grad_check(
    loss_fn,
    module: torch.nn.Module,
    n_coords: int,
    seed: int,
    h: float = 1e-3,
    atol: float = 1e-6,
) -> float:
    """Worst relative mismatch between autograd and central differences on
    ``n_coords`` randomly chosen parameter coordinates.

    ``module`` must be in float64 and ``loss_fn`` deterministic. ``atol`` is
    the finite-difference truncation floor (order h^2) subtracted before the
    relative comparison, so coordinates whose true gradient is smaller than
    the FD noise cannot dominate; beyond that floor the comparison is purely
    relative.
    """
    for p in module.parameters():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    coords = flat_coordinates(module)
    picks = rng.choice(len(coords), size=min(n_coords, len(coords)), replace=False)
    worst = 0.0
    for idx in picks:
        p, j = coords[int(idx)]
        analytic = float(p.grad.reshape(-1)[j])
        with torch.no_grad():
            orig = float(p.reshape(-1)[j])
            p.reshape(-1)[j] = orig + h
            plus = float(loss_fn())
            p.reshape(-1)[j] = orig - h
            minus = float(loss_fn())
            p.reshape(-1)[j] = orig
        fd = (plus - minus) / (2 * h)
        rel = max(abs(analytic - fd) - atol, 0.0) / max(abs(analytic), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst
