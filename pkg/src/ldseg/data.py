"""Procedural source/target toy benchmark plus the on-disk dataset format.

Scenes are a handful of colored shapes over a flat background; the label map
records the topmost shape's class per pixel. The source style renders flat
per-class colors; the target style re-renders the same kind of geometry with
a hue rotation, brightness change, smooth texture, and blur, leaving labels
untouched. Layout on disk:

    root/{source,target}/{train,val}/{images,labels}/%06d.png

with target/train labels quarantined under ``labels_eval_only`` so the
training loader can never hand them out. Images are 8-bit RGB PNG; labels
8-bit single-channel class ids with 255 reserved for ignore.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError
from .uda import derive_seed

# caps render parallelism during dataset generation; output bytes do not
# depend on the worker count
WORKERS_ENV = "LDSEG_NUM_WORKERS"


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as e:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from e

GENERATOR_VERSION = 1
IGNORE_ID = 255
CLASS_NAMES = ("background", "circle", "rectangle", "triangle", "stripe")
NUM_CLASSES = len(CLASS_NAMES)

# two color families on purpose: {circle, triangle} and {rectangle, stripe}
# are near-identical within each family, so local color separates families
# but telling classes apart inside a family requires shape context
CLASS_COLORS = np.array(
    [
        [0.24, 0.25, 0.28],    # background
        [0.72, 0.33, 0.30],    # circle (warm)
        [0.32, 0.53, 0.48],    # rectangle (teal)
        [0.70, 0.34, 0.33],    # triangle (warm)
        [0.30, 0.52, 0.50],    # stripe (teal)
    ],
    dtype=np.float64,
)

DOMAINS = ("source", "target")
SPLITS = ("train", "val")


@dataclass(frozen=True)
class SceneSpec:
    """Everything that determines a scene's geometry."""

    seed: int
    n_shapes: int
    image_size: int = 64

    def __post_init__(self) -> None:
        if not 0 <= self.n_shapes <= 6:
            raise ConfigError(f"n_shapes must be in [0, 6], got {self.n_shapes}")


@dataclass(frozen=True)
class DomainStyle:
    """Pixel-value styling; never touches geometry or labels."""

    name: str
    hue_shift: float = 0.0
    brightness: float = 0.0
    texture_amp: float = 0.0
    blur_radius: float = 0.0


SOURCE_STYLE = DomainStyle("source")
TARGET_STYLE = DomainStyle(
    "target", hue_shift=0.5, brightness=-0.10, texture_amp=0.15, blur_radius=1.0
)

STYLES = {"source": SOURCE_STYLE, "target": TARGET_STYLE}


@dataclass(frozen=True)
class Shape:
    kind: int                      # class id, 1..4
    params: tuple[float, ...]      # geometry, meaning depends on kind


def scene_shapes(spec: SceneSpec) -> list[Shape]:
    """Draw the scene's shape list; pure in the spec.

    Shapes are deliberately large relative to the image: class identity must
    then be read from whole-shape geometry rather than small local patches.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.image_size
    shapes: list[Shape] = []
    for _ in range(spec.n_shapes):
        kind = int(rng.integers(1, NUM_CLASSES))
        if kind == 1:      # circle: cx, cy, r
            params = (
                float(rng.uniform(0.2 * s, 0.8 * s)),
                float(rng.uniform(0.2 * s, 0.8 * s)),
                float(rng.uniform(0.14 * s, 0.30 * s)),
            )
        elif kind == 2:    # rectangle: x0, y0, x1, y1
            x0 = rng.uniform(0.02 * s, 0.55 * s)
            y0 = rng.uniform(0.02 * s, 0.55 * s)
            params = (
                float(x0),
                float(y0),
                float(x0 + rng.uniform(0.22 * s, 0.55 * s)),
                float(y0 + rng.uniform(0.22 * s, 0.55 * s)),
            )
        elif kind == 3:    # triangle: 3 vertices around a center
            cx = rng.uniform(0.25 * s, 0.75 * s)
            cy = rng.uniform(0.25 * s, 0.75 * s)
            pts = []
            for i in range(3):
                ang = rng.uniform(0, 2 * math.pi / 3) + i * 2 * math.pi / 3
                rad = rng.uniform(0.14 * s, 0.34 * s)
                pts += [cx + rad * math.cos(ang), cy + rad * math.sin(ang)]
            params = tuple(float(v) for v in pts)
        else:              # stripe: angle, center point, half-width
            params = (
                float(rng.uniform(0, math.pi)),
                float(rng.uniform(0.2 * s, 0.8 * s)),
                float(rng.uniform(0.25 * s, 0.75 * s)),
                float(rng.uniform(0.07 * s, 0.14 * s)),
            )
        shapes.append(Shape(kind=kind, params=params))
    return shapes


def shape_mask(shape: Shape, size: int) -> np.ndarray:
    """Boolean coverage mask of one shape on a size x size pixel grid."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape.kind == 1:
        cx, cy, r = shape.params
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if shape.kind == 2:
        x0, y0, x1, y1 = shape.params
        return (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
    if shape.kind == 3:
        ax, ay, bx, by, cx, cy = shape.params

        def side(px, py, qx, qy):
            return (qx - px) * (yy - py) - (qy - py) * (xx - px)

        d1 = side(ax, ay, bx, by)
        d2 = side(bx, by, cx, cy)
        d3 = side(cx, cy, ax, ay)
        return ((d1 <= 0) & (d2 <= 0) & (d3 <= 0)) | ((d1 >= 0) & (d2 >= 0) & (d3 >= 0))
    if shape.kind == 4:
        ang, px, py, hw = shape.params
        return np.abs(math.cos(ang) * (xx - px) + math.sin(ang) * (yy - py)) <= hw
    raise ConfigError(f"unknown shape kind {shape.kind}")


def rasterize(shapes: list[Shape], size: int) -> np.ndarray:
    """Label map where each pixel takes the topmost (last-drawn) shape's class."""
    label = np.zeros((size, size), dtype=np.int64)
    for shape in shapes:
        label[shape_mask(shape, size)] = shape.kind
    return label


def _hue_rotation_matrix(theta: float) -> np.ndarray:
    """Rotation of RGB space around the gray axis by ``theta`` radians."""
    c, s = math.cos(theta), math.sin(theta)
    m = np.full((3, 3), (1.0 - c) / 3.0, dtype=np.float64)
    m += c * np.eye(3)
    sq = math.sqrt(1.0 / 3.0)
    k = np.array([[0, -sq, sq], [sq, 0, -sq], [-sq, sq, 0]], dtype=np.float64)
    return m + s * k


def _smooth_texture(seed: int, size: int, cells: int = 8) -> np.ndarray:
    """Zero-mean smooth noise field: coarse Gaussian grid, bilinear upsampling."""
    rng = np.random.default_rng(seed)
    grid = rng.standard_normal((cells + 1, cells + 1))
    pos = np.linspace(0.0, cells, size)
    i0 = np.minimum(pos.astype(np.int64), cells - 1)
    frac = pos - i0
    rows = (
        grid[i0, :] * (1.0 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None]
    )
    field = (
        rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    )
    return field - field.mean()


def render_scene(spec: SceneSpec, style: DomainStyle) -> tuple[np.ndarray, np.ndarray]:
    """Render (image, label): image float64 (3,H,W) in [0,1], label int64 (H,W).

    The label depends on the spec only; the style restyles pixel values.
    """
    size = spec.image_size
    label = rasterize(scene_shapes(spec), size)
    img = CLASS_COLORS[label].transpose(2, 0, 1).copy()

    if style.hue_shift:
        img = np.einsum("ij,jhw->ihw", _hue_rotation_matrix(style.hue_shift), img)
    if style.brightness:
        img = img + style.brightness
    if style.texture_amp:
        # chromatic texture: an independent smooth field per channel, so the
        # corruption perturbs color locally rather than just luminance
        texture = np.stack(
            [
                _smooth_texture(derive_seed(spec.seed, "texture", c), size)
                for c in range(3)
            ]
        )
        img = img + style.texture_amp * texture
    if style.blur_radius:
        img = gaussian_filter(img, sigma=(0.0, style.blur_radius, style.blur_radius), mode="nearest")
    return np.clip(img, 0.0, 1.0), label


def _save_image_png(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def _save_label_png(path: Path, label: np.ndarray) -> None:
    Image.fromarray(label.astype(np.uint8), mode="L").save(path)


def _item_spec(seed: int, domain: str, split: str, index: int, image_size: int) -> SceneSpec:
    item_seed = derive_seed(seed, domain, split, index)
    n_shapes = 1 + int(np.random.default_rng(derive_seed(item_seed, "count")).integers(0, 6))
    return SceneSpec(seed=item_seed, n_shapes=n_shapes, image_size=image_size)


def generate_dataset(
    root: str | Path, n_train: int, n_val: int, seed: int, image_size: int = 64
) -> dict:
    """Write the full two-domain benchmark under ``root``; returns the manifest.

    Target/train labels land in ``labels_eval_only`` so the unsupervised
    protocol cannot be violated by accident. Output bytes are a pure function
    of (seed, counts, image_size).
    """
    if n_train < 0 or n_val < 0:
        raise ConfigError("n_train and n_val must be nonnegative")
    root = Path(root)
    counts = {"train": n_train, "val": n_val}
    workers = _worker_count()
    for domain in DOMAINS:
        style = STYLES[domain]
        for split in SPLITS:
            quarantine = domain == "target" and split == "train"
            img_dir = root / domain / split / "images"
            lbl_dir = root / domain / split / ("labels_eval_only" if quarantine else "labels")
            img_dir.mkdir(parents=True, exist_ok=True)
            lbl_dir.mkdir(parents=True, exist_ok=True)
            specs = [
                _item_spec(seed, domain, split, i, image_size)
                for i in range(counts[split])
            ]
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    rendered = pool.map(lambda s: render_scene(s, style), specs)
                    for i, (img, label) in enumerate(rendered):
                        _save_image_png(img_dir / f"{i:06d}.png", img)
                        _save_label_png(lbl_dir / f"{i:06d}.png", label)
            else:
                for i, spec in enumerate(specs):
                    img, label = render_scene(spec, style)
                    _save_image_png(img_dir / f"{i:06d}.png", img)
                    _save_label_png(lbl_dir / f"{i:06d}.png", label)
    manifest = {
        "seed": seed,
        "image_size": image_size,
        "class_names": list(CLASS_NAMES),
        "counts": {d: dict(counts) for d in DOMAINS},
        "generator_version": GENERATOR_VERSION,
    }
    with open(root / "dataset.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


@dataclass
class DatasetItem:
    name: str
    image: torch.Tensor              # float32 (3,H,W) in [0,1]
    label: torch.Tensor | None       # int64 (H,W) or None (unlabeled split)


def _load_image(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def _load_label(path: Path, num_classes: int) -> torch.Tensor:
    with Image.open(path) as im:
        if im.mode != "L":
            raise DataError(f"label {path} is not single-channel")
        arr = np.asarray(im, dtype=np.int64)
    bad = ~(((arr >= 0) & (arr < num_classes)) | (arr == IGNORE_ID))
    if bad.any():
        raise DataError(
            f"label {path} contains values outside [0, {num_classes}) and {IGNORE_ID}"
        )
    return torch.from_numpy(arr)


def load_dataset(
    root: str | Path, split: str, domain: str, num_classes: int = NUM_CLASSES
) -> list[DatasetItem]:
    """Load one (domain, split); sorted by filename.

    The target/train split always yields ``label=None``: its ground truth is
    quarantined for evaluation and this loader never opens it.
    """
    root = Path(root)
    if domain not in DOMAINS or split not in SPLITS:
        raise DataError(f"unknown domain/split {domain}/{split}")
    base = root / domain / split
    img_dir = base / "images"
    if not img_dir.is_dir():
        raise DataError(f"missing image directory {img_dir}")
    unlabeled = domain == "target" and split == "train"
    items = []
    for img_path in sorted(img_dir.glob("*.png")):
        label = None
        if not unlabeled:
            lbl_path = base / "labels" / img_path.name
            if not lbl_path.is_file():
                raise DataError(f"missing label file {lbl_path}")
            label = _load_label(lbl_path, num_classes)
        items.append(DatasetItem(name=img_path.stem, image=_load_image(img_path), label=label))
    return items


def load_eval_labels(
    root: str | Path, split: str, domain: str, num_classes: int = NUM_CLASSES
) -> dict[str, torch.Tensor]:
    """Ground-truth labels for scoring, including the quarantined target/train set.

    Evaluation-only: training code must never call this.
    """
    root = Path(root)
    base = root / domain / split
    lbl_dir = base / ("labels_eval_only" if domain == "target" and split == "train" else "labels")
    if not lbl_dir.is_dir():
        raise DataError(f"missing label directory {lbl_dir}")
    return {
        p.stem: _load_label(p, num_classes) for p in sorted(lbl_dir.glob("*.png"))
    }
