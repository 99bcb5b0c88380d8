"""Dataset-bias measurement: expression-specific mean images and mean AU vectors,
and their pairwise cosine distances across datasets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
import numpy as np
from scipy.ndimage import zoom

from .dataio import COMMON_AUS, write_image
from .errors import NoImage, NoSamples, ZeroVector

SIMILAR_BELOW = 0.3
DIFFERENT_ABOVE = 0.5
CANVAS = (112, 112)


@dataclass
class MeanAuVector:
    dataset: str
    expression: str
    vector: np.ndarray
    support: int
    aus: tuple = COMMON_AUS


@dataclass
class BiasReport:
    datasets: list
    expressions: list
    distances: dict  # expression -> [n, n] matrix
    pooled: np.ndarray  # mean over expressions present in every dataset
    vectors: dict  # (dataset, expression) -> MeanAuVector
    mean_images: dict = field(default_factory=dict)  # (dataset, expression) -> [3,H,W]

    def flags(self, expression: str) -> dict:
        mat = self.distances[expression]
        out = {}
        for i, j in combinations(range(len(self.datasets)), 2):
            out[f"{self.datasets[i]}|{self.datasets[j]}"] = {
                "distance": float(mat[i, j]), "flag": threshold_flag(mat[i, j])}
        return out

    def to_dict(self) -> dict:
        return {
            "datasets": list(self.datasets),
            "common_aus": list(COMMON_AUS),
            "thresholds": {"similar_below": SIMILAR_BELOW, "different_above": DIFFERENT_ABOVE},
            "expressions": {e: self.flags(e) for e in self.expressions},
            "matrices": {e: self.distances[e].tolist() for e in self.expressions},
            "pooled": self.pooled.tolist(),
            "mean_au_vectors": {f"{d}|{e}": {"vector": v.vector.tolist(), "support": v.support}
                                for (d, e), v in sorted(self.vectors.items())},
        }


def threshold_flag(distance: float) -> str:
    if distance < SIMILAR_BELOW:
        return "similar"
    if distance > DIFFERENT_ABOVE:
        return "different"
    return "neither"


def _expression_index(manifest, expression) -> int:
    if isinstance(expression, (int, np.integer)):
        return int(expression)
    try:
        return manifest.expression_classes.index(expression)
    except ValueError:
        raise NoSamples(f"{manifest.name}: no expression {expression!r}") from None


def _samples(manifest, expression) -> list:
    k = _expression_index(manifest, expression)
    recs = [r for r in manifest.records if r.expr_label == k]
    if not recs:
        raise NoSamples(f"{manifest.name}: no samples of expression {expression!r}")
    return recs


def mean_au_vector(manifest, expression, common_aus=COMMON_AUS) -> MeanAuVector:
    """Mean of the binary AU vectors of one expression, in ``common_aus`` order."""
    recs = _samples(manifest, expression)
    cols = manifest.vocab.positions(common_aus)
    stacked = np.stack([r.au_vector[cols] for r in recs])
    name = expression if isinstance(expression, str) else manifest.expression_classes[expression]
    return MeanAuVector(manifest.name, name, stacked.mean(axis=0), len(recs), tuple(common_aus))


def cosine_distance(a, b) -> float:
    a = np.asarray(getattr(a, "vector", a), dtype=np.float64)
    b = np.asarray(getattr(b, "vector", b), dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance of a zero vector")
    if np.array_equal(a, b):
        return 0.0
    # the elementwise products of the unit vectors do not depend on argument order
    sim = float(np.dot(a / na, b / nb))
    return max(0.0, 1.0 - sim)


def center_crop(image: np.ndarray, ratio: float) -> np.ndarray:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"crop_ratio must lie in (0, 1], got {ratio}")
    if ratio == 1.0:
        return image
    _, h, w = image.shape
    ch, cw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[:, top:top + ch, left:left + cw]


def resize(image: np.ndarray, canvas=CANVAS) -> np.ndarray:
    _, h, w = image.shape
    if (h, w) == tuple(canvas):
        return image
    out = zoom(image, (1.0, canvas[0] / h, canvas[1] / w), order=1, grid_mode=True, mode="grid-constant")
    return out


def prepare_image(image: np.ndarray, canvas=CANVAS, crop_ratio: float = 1.0) -> np.ndarray:
    return resize(center_crop(image, crop_ratio), canvas)


def mean_image(manifest, expression, canvas=CANVAS, crop_ratio: float = 1.0) -> np.ndarray:
    """Pixelwise mean of one expression's images after central crop and resize."""
    recs = _samples(manifest, expression)
    acc = np.zeros((3,) + tuple(canvas))
    for r in recs:
        if r.image is None:
            raise NoImage(f"{manifest.name}: {r.source or 'record'} carries no image")
        acc += prepare_image(r.image, canvas, crop_ratio)
    return np.clip(acc / len(recs), 0.0, 1.0)


def _symmetric(values: dict, n: int) -> np.ndarray:
    mat = np.zeros((n, n))
    for (i, j), d in values.items():
        mat[i, j] = mat[j, i] = d
    return mat


def bias_report(manifests, expressions=None, common_aus=COMMON_AUS, with_images: bool = True,
                canvas=CANVAS, crop_ratio: float = 1.0) -> BiasReport:
    """Per-expression dataset x dataset cosine-distance matrices (upper triangle
    computed, then mirrored) plus a pooled matrix averaged over expressions."""
    if len(manifests) < 2:
        raise ValueError("bias report needs at least two manifests")
    names = [m.name for m in manifests]
    if len(set(names)) != len(names):
        names = [f"{m.name}#{i}" for i, m in enumerate(manifests)]
    if expressions is None:
        shared = set(manifests[0].expression_classes)
        for m in manifests[1:]:
            shared &= set(m.expression_classes)
        expressions = [e for e in manifests[0].expression_classes if e in shared]
    vectors, images, matrices = {}, {}, {}
    for m, name in zip(manifests, names):
        for e in expressions:
            v = mean_au_vector(m, e, common_aus)
            v.dataset = name
            vectors[(name, e)] = v
            if with_images and all(r.image is not None for r in m.records):
                images[(name, e)] = mean_image(m, e, canvas, crop_ratio)
    n = len(names)
    for e in expressions:
        upper = {(i, j): cosine_distance(vectors[(names[i], e)], vectors[(names[j], e)])
                 for i, j in combinations(range(n), 2)}
        matrices[e] = _symmetric(upper, n)
    pooled = np.mean([matrices[e] for e in expressions], axis=0) if expressions else np.zeros((n, n))
    return BiasReport(names, list(expressions), matrices, pooled, vectors, images)


def image_grid(report: BiasReport, pad: int = 2) -> np.ndarray:
    """Mean images tiled with datasets as rows and expressions as columns."""
    if not report.mean_images:
        raise NoImage("report holds no mean images")
    sample = next(iter(report.mean_images.values()))
    _, h, w = sample.shape
    rows, cols = len(report.datasets), len(report.expressions)
    grid = np.ones((3, rows * (h + pad) + pad, cols * (w + pad) + pad))
    for i, d in enumerate(report.datasets):
        for j, e in enumerate(report.expressions):
            img = report.mean_images.get((d, e))
            if img is not None:
                y, x = pad + i * (h + pad), pad + j * (w + pad)
                grid[:, y:y + h, x:x + w] = img
    return grid


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def write_report(report: BiasReport, out_dir) -> dict:
    """Write ``bias_report.json``, per-expression CSV heatmaps and mean-image PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"json": out / "bias_report.json", "csv": [], "png": []}
    written["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for e, mat in list(report.distances.items()) + [("pooled", report.pooled)]:
        path = out / f"distance_{_safe(e)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + report.datasets)
            for name, row in zip(report.datasets, mat):
                w.writerow([name] + [repr(float(v)) for v in row])
        written["csv"].append(path)
    if report.mean_images:
        img_dir = out / "mean_images"
        img_dir.mkdir(exist_ok=True)
        for (d, e), img in sorted(report.mean_images.items()):
            path = img_dir / f"{_safe(d)}__{_safe(e)}.png"
            write_image(path, img)
            written["png"].append(path)
        grid_path = out / "mean_image_grid.png"
        write_image(grid_path, image_grid(report))
        written["png"].append(grid_path)
    return written
