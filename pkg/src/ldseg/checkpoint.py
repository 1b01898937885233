"""Checkpoint persistence: a JSON manifest plus one raw float32 blob per
named parameter array.

Blobs are little-endian, row-major, exactly shape-product x 4 bytes; the
manifest records the array index, format version, training stage/step, and
the resolved-config hash. Online and EMA weights live in separate name
namespaces ("online/...", "ema/...") so inference can load the EMA side
alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import StateError

FORMAT_VERSION = 1
_ARRAY_SUBDIR = "arrays"


def _blob_name(index: int) -> str:
    return f"{index:05d}.bin"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write ``arrays`` (cast to float32) and ``meta`` under directory ``path``."""
    path = Path(path)
    (path / _ARRAY_SUBDIR).mkdir(parents=True, exist_ok=True)
    index = {}
    for i, (name, arr) in enumerate(sorted(arrays.items())):
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
        fname = _blob_name(i)
        with open(path / _ARRAY_SUBDIR / fname, "wb") as f:
            f.write(arr.astype("<f4").tobytes(order="C"))
        index[name] = {
            "shape": list(arr.shape),
            "dtype": "f32",
            "file": f"{_ARRAY_SUBDIR}/{fname}",
            "byte_order": "little",
            "order": "row-major",
        }
    manifest = {"format_version": FORMAT_VERSION, "arrays": index, **meta}
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into (arrays, meta)."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise StateError(f"no checkpoint at {path} (missing manifest.json)")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise StateError(
            f"unsupported checkpoint format {manifest.get('format_version')} at {path}"
        )
    arrays = {}
    for name, entry in manifest["arrays"].items():
        shape = tuple(entry["shape"])
        blob_path = path / entry["file"]
        if not blob_path.is_file():
            raise StateError(f"checkpoint blob missing: {blob_path}")
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        data = blob_path.read_bytes()
        if len(data) != expected:
            raise StateError(
                f"checkpoint blob {blob_path} has {len(data)} bytes, expected {expected}"
            )
        arrays[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    meta = {k: v for k, v in manifest.items() if k != "arrays"}
    return arrays, meta


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Flatten a module's parameters into the checkpoint array namespace."""
    return {
        f"{prefix}/{name}": p.detach().cpu().numpy()
        for name, p in module.named_parameters()
    }


def load_module_arrays(
    module: torch.nn.Module, prefix: str, arrays: dict[str, np.ndarray]
) -> None:
    """Copy checkpoint arrays back into a freshly built module."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            key = f"{prefix}/{name}"
            if key not in arrays:
                raise StateError(f"checkpoint missing array {key}")
            arr = arrays[key]
            if tuple(arr.shape) != tuple(p.shape):
                raise StateError(
                    f"array {key} has shape {arr.shape}, model expects {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(arr.copy()))


def optimizer_arrays(
    opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str
) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    """Adam moment tensors plus per-parameter step counts for resume."""
    arrays: dict[str, np.ndarray] = {}
    steps: dict[str, int] = {}
    state = opt.state
    for name, p in module.named_parameters():
        st = state.get(p)
        if not st:
            continue
        arrays[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
        arrays[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
        steps[f"{prefix}/{name}"] = int(st["step"])
    return arrays, steps


def load_optimizer_arrays(
    opt: torch.optim.Optimizer,
    module: torch.nn.Module,
    prefix: str,
    arrays: dict[str, np.ndarray],
    steps: dict[str, int],
) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}/{name}"
        if f"{key}/exp_avg" not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(steps[key])),
            "exp_avg": torch.from_numpy(arrays[f"{key}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{key}/exp_avg_sq"].copy()),
        }
