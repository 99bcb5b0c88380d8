"""Image and feature-map decoding/encoding."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..tensor.io import load_archive, save_archive


def read_image(path) -> np.ndarray:
    """Decode an 8-bit PNG/PPM/PGM into a float64 [3,H,W] array in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, arr: np.ndarray) -> None:
    """Write a [3,H,W] or [H,W] array in [0,1]; format follows the suffix."""
    arr = np.asarray(arr)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(to_uint8(arr)).save(path)


def write_pgm(path, arr: np.ndarray) -> None:
    """Write a [H,W] array in [0,1] as a binary (P5) PGM."""
    data = to_uint8(arr)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_feature_map(path) -> np.ndarray:
    arrays, _ = load_archive(path)
    if "feature_map" in arrays:
        return arrays["feature_map"]
    return next(iter(arrays.values()))


def write_feature_map(path, fmap: np.ndarray) -> None:
    save_archive(path, {"feature_map": np.asarray(fmap, dtype=np.float64)})
