"""Synthetic face-like data for tests, demos and the joint-training check.

A face is a skin-toned oval with dark eyes and mouth on a noisy background.
Each active AU paints a small signed Gaussian blob at its anatomical spot
(both sides for bilateral AUs), so AU evidence is localised where the region
scheme expects it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import AuVocabulary, DatasetManifest, SampleRecord, write_image, write_manifest

# normalised (row, col) centres; bilateral AUs list both sides
AU_SITES = {
    "AU01": [(0.22, 0.38), (0.22, 0.62)],
    "AU02": [(0.20, 0.20), (0.20, 0.80)],
    "AU04": [(0.26, 0.50)],
    "AU05": [(0.32, 0.30), (0.32, 0.70)],
    "AU06": [(0.55, 0.20), (0.55, 0.80)],
    "AU07": [(0.40, 0.30), (0.40, 0.70)],
    "AU09": [(0.50, 0.50)],
    "AU10": [(0.63, 0.50)],
    "AU12": [(0.74, 0.28), (0.74, 0.72)],
    "AU14": [(0.72, 0.22), (0.72, 0.78)],
    "AU15": [(0.84, 0.30), (0.84, 0.70)],
    "AU16": [(0.86, 0.50)],
    "AU17": [(0.93, 0.50)],
    "AU18": [(0.76, 0.42), (0.76, 0.58)],
    "AU20": [(0.79, 0.16), (0.79, 0.84)],
    "AU22": [(0.70, 0.50)],
    "AU23": [(0.76, 0.50)],
    "AU24": [(0.80, 0.50)],
    "AU25": [(0.78, 0.50)],
    "AU26": [(0.88, 0.40), (0.88, 0.60)],
    "AU27": [(0.90, 0.50)],
}

# colour signature per AU: (channel weights, sign)
_PALETTE = [
    (np.array([1.0, 0.2, 0.2]), 1.0), (np.array([0.2, 1.0, 0.2]), 1.0), (np.array([0.2, 0.2, 1.0]), 1.0),
    (np.array([1.0, 0.2, 0.2]), -1.0), (np.array([0.2, 1.0, 0.2]), -1.0), (np.array([0.2, 0.2, 1.0]), -1.0),
]

# synthetic expressions defined by AU sets
EXPRESSIONS = {
    "happiness": ("AU06", "AU12", "AU25"),
    "sadness": ("AU01", "AU04", "AU15"),
    "surprise": ("AU01", "AU02", "AU05", "AU26"),
    "anger": ("AU04", "AU07", "AU23"),
    "disgust": ("AU09", "AU10", "AU17"),
    "fear": ("AU01", "AU02", "AU04", "AU20"),
    "neutral": (),
}


def _blob(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    y0, x0 = cy * size - 0.5, cx * size - 0.5
    return np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2.0 * (sigma * size) ** 2))


def render_face(active, size: int = 32, rng: Optional[np.random.Generator] = None,
                amplitude: float = 0.35, noise: float = 0.05, jitter: float = 0.0,
                distractors: int = 0) -> np.ndarray:
    """A ``[3, size, size]`` face in [0,1] showing the AUs in ``active``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    oval = (((yy - 0.52) / 0.50) ** 2 + ((xx - 0.5) / 0.42) ** 2) < 1.0
    skin = np.array([0.78, 0.62, 0.52]) * rng.uniform(0.85, 1.1)
    img = np.full((3, size, size), 0.25) + (skin[:, None, None] - 0.25) * oval
    for cy, cx in ((0.34, 0.32), (0.34, 0.68)):
        img -= 0.25 * _blob(size, cy, cx, 0.035)
    img -= 0.2 * _blob(size, 0.78, 0.5, 0.05)
    codes = sorted(AU_SITES)
    for code in active:
        weights, sign = _PALETTE[codes.index(code) % len(_PALETTE)]
        dy, dx = rng.uniform(-jitter, jitter, 2) if jitter else (0.0, 0.0)
        for cy, cx in AU_SITES[code]:
            img += sign * amplitude * weights[:, None, None] * _blob(size, cy + dy, cx + dx, 0.045)
    for _ in range(distractors):
        weights, sign = _PALETTE[rng.integers(len(_PALETTE))]
        cy, cx = rng.uniform(0.05, 0.95, 2)
        img += sign * amplitude * weights[:, None, None] * _blob(size, cy, cx, 0.045)
    if noise:
        img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def sample_expression_aus(expression: str, rng: np.random.Generator, keep: float = 0.85,
                          extra: float = 0.05, vocab=None) -> list:
    """AUs shown by one sample: each prototype AU kept with ``keep``, others added with ``extra``."""
    codes = [c for c in (vocab or AU_SITES) if c in AU_SITES]
    proto = set(EXPRESSIONS[expression])
    active = [c for c in codes if (rng.random() < keep if c in proto else rng.random() < extra)]
    return active


def make_target(n: int, classes=("happiness", "sadness"), size: int = 32, seed: int = 0,
                vocab: Optional[AuVocabulary] = None, name: str = "synth_target", with_aus: bool = False,
                **render) -> DatasetManifest:
    """Expression-labelled manifest with classes cycled so every class is represented."""
    vocab = vocab or AuVocabulary.default()
    rng = np.random.default_rng(seed)
    keep = render.pop("keep", 0.85)
    extra = render.pop("extra", 0.05)
    records = []
    for i in range(n):
        label = i % len(classes)
        aus = sample_expression_aus(classes[label], rng, keep, extra, vocab)
        records.append(_record(aus, vocab, name, size, rng, label, with_aus, **render))
    perm = rng.permutation(n)
    return DatasetManifest(name, "target", [records[i] for i in perm], tuple(classes),
                           tuple(vocab) if with_aus else (), vocab)


def make_auxiliary(n: int, size: int = 32, seed: int = 1, vocab: Optional[AuVocabulary] = None,
                   name: str = "synth_aux", p_active: float = 0.25, aus=None, **render) -> DatasetManifest:
    """AU-labelled manifest: each AU (of ``aus``, default all) independently active."""
    vocab = vocab or AuVocabulary.default()
    rng = np.random.default_rng(seed)
    pool = [c for c in (aus or vocab) if c in AU_SITES]
    records = []
    for _ in range(n):
        active = [c for c in pool if rng.random() < p_active]
        records.append(_record(active, vocab, name, size, rng, None, True, **render))
    return DatasetManifest(name, "auxiliary", records, (), tuple(vocab), vocab)


def _record(active, vocab, tag, size, rng, label, with_aus, **render) -> SampleRecord:
    vec = np.zeros(len(vocab))
    mask = np.ones(len(vocab)) if with_aus else np.zeros(len(vocab))
    if with_aus:
        vec[vocab.positions(active)] = 1.0
    image = render_face(active, size, rng, **render)
    return SampleRecord(vec, mask, tag, label, image, None, "")


def write_dataset(directory, manifest: DatasetManifest) -> Path:
    """Write PNGs and ``manifest.jsonl`` for an in-memory manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "img").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(manifest.records):
        rel = f"img/{i:05d}.png"
        write_image(directory / rel, rec.image)
        entry = {"path": rel, "dataset": rec.dataset_tag}
        if rec.expr_label is not None:
            entry["expr"] = manifest.expression_classes[rec.expr_label]
        if rec.has_au:
            entry["aus"] = {code: int(rec.au_vector[j]) for j, code in enumerate(manifest.vocab)
                            if rec.au_mask[j] > 0}
        entries.append(entry)
    header = {"name": manifest.name, "role": manifest.role,
              "classes": list(manifest.expression_classes), "annotated_aus": list(manifest.annotated_aus)}
    path = directory / "manifest.jsonl"
    write_manifest(path, entries, header)
    return path
