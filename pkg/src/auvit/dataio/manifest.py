"""JSON-lines dataset manifests.

A manifest is one JSON object per line. An optional first line of the form
``{"manifest": {"name": ..., "role": "target"|"auxiliary", "classes": [...],
"annotated_aus": [...]}}`` carries dataset-level metadata; every other line is
a record::

    {"path": "img/0001.png", "expr": "happiness", "aus": {"AU06": 1, "AU12": 0.93}, "dataset": "rafdb"}

``feature_path`` may replace ``path`` to point at a precomputed feature map in
the tensor archive format. Paths are relative to the manifest file. AU values
are binarised at 0.5 so detector confidences can be ingested directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InvariantViolation, ParseError
from .imageio import read_feature_map, read_image
from .vocab import AuVocabulary, normalize_code

AU_THRESHOLD = 0.5
ROLES = ("target", "auxiliary")


@dataclass(eq=False)
class SampleRecord:
    au_vector: np.ndarray
    au_mask: np.ndarray
    dataset_tag: str
    expr_label: Optional[int] = None
    image: Optional[np.ndarray] = None
    feature_map: Optional[np.ndarray] = None
    source: str = ""

    @property
    def has_au(self) -> bool:
        return bool(self.au_mask.any())

    @property
    def pixels(self) -> np.ndarray:
        """The model input: the image, or the feature map when no image is present."""
        return self.image if self.image is not None else self.feature_map

    def validate(self, where: str = "record") -> None:
        if (self.image is None) == (self.feature_map is None):
            raise InvariantViolation(f"{where}: exactly one of image / feature_map must be set")
        if self.expr_label is None and not self.has_au:
            raise InvariantViolation(f"{where}: neither an expression label nor AU annotations")
        if np.any(self.au_vector[self.au_mask == 0] != 0):
            raise InvariantViolation(f"{where}: AU value set where the mask is 0")
        if self.image is not None:
            if self.image.ndim != 3 or self.image.shape[0] != 3:
                raise InvariantViolation(f"{where}: image must be [3,H,W], got {self.image.shape}")
            if self.image.min() < 0.0 or self.image.max() > 1.0:
                raise InvariantViolation(f"{where}: image values outside [0,1]")


@dataclass(eq=False)
class DatasetManifest:
    name: str
    role: str
    records: list
    expression_classes: tuple = ()
    annotated_aus: tuple = ()
    vocab: AuVocabulary = field(default_factory=AuVocabulary.default)

    @property
    def num_classes(self) -> int:
        return len(self.expression_classes)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([-1 if r.expr_label is None else r.expr_label for r in self.records])

    def subset(self, indices, name: Optional[str] = None) -> "DatasetManifest":
        return replace(self, name=name or self.name, records=[self.records[i] for i in indices])

    def validate(self) -> None:
        if self.role not in ROLES:
            raise InvariantViolation(f"{self.name}: role must be one of {ROLES}, got {self.role!r}")
        for i, rec in enumerate(self.records):
            where = f"{self.name} record {i}" + (f" ({rec.source})" if rec.source else "")
            rec.validate(where)
            if self.role == "target" and rec.expr_label is None:
                raise InvariantViolation(f"{where}: target datasets need expression labels")
            if self.role == "auxiliary" and not rec.has_au:
                raise InvariantViolation(f"{where}: auxiliary datasets need AU annotations")
            if rec.expr_label is not None and not 0 <= rec.expr_label < self.num_classes:
                raise InvariantViolation(f"{where}: label {rec.expr_label} outside [0, {self.num_classes})")


def _read_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("each line must be a JSON object", line=lineno)
            yield lineno, obj


def load_manifest(path, vocab: Optional[AuVocabulary] = None, role: Optional[str] = None,
                  load_pixels: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; images and feature maps are decoded eagerly."""
    path = Path(path)
    vocab = vocab or AuVocabulary.default()
    root = path.parent
    header: dict = {}
    rows = []
    for lineno, obj in _read_lines(path):
        if "manifest" in obj:
            if rows or header:
                raise ParseError("the manifest header must be the first line", line=lineno)
            header = obj["manifest"]
            continue
        if ("path" in obj) == ("feature_path" in obj):
            raise ParseError("record needs exactly one of 'path' or 'feature_path'", line=lineno)
        unknown = set(obj) - {"path", "feature_path", "expr", "aus", "dataset"}
        if unknown:
            raise ParseError(f"unknown record fields {sorted(unknown)}", line=lineno)
        rows.append((lineno, obj))

    classes = header.get("classes")
    if classes is None:
        seen = [o.get("expr") for _, o in rows if o.get("expr") is not None]
        if any(isinstance(e, str) for e in seen):
            classes = sorted({str(e) for e in seen})
        else:
            classes = [str(i) for i in range(max(seen) + 1)] if seen else []
    classes = tuple(str(c) for c in classes)
    class_index = {c: i for i, c in enumerate(classes)}

    if "annotated_aus" in header:
        declared = [normalize_code(c) for c in header["annotated_aus"]]
    else:
        declared = sorted({normalize_code(c) for _, o in rows for c in (o.get("aus") or {})})
    annotated = tuple(c for c in declared if c in vocab)
    mask = np.zeros(len(vocab))
    mask[vocab.positions(annotated)] = 1.0
    declared_set = set(declared)

    name = header.get("name", path.stem)
    role = role or header.get("role") or ("target" if classes else "auxiliary")
    records = []
    for lineno, obj in rows:
        expr = obj.get("expr")
        if expr is not None:
            if isinstance(expr, str) and not expr.lstrip("-").isdigit():
                if expr not in class_index:
                    raise InvariantViolation(f"{name} line {lineno}: unknown expression {expr!r}")
                expr = class_index[expr]
            else:
                expr = int(expr)
        au_vec = np.zeros(len(vocab))
        for code, value in (obj.get("aus") or {}).items():
            try:
                code = normalize_code(code)
                value = float(value)
            except (ParseError, TypeError, ValueError):
                raise ParseError(f"bad AU entry {code!r}: {value!r}", line=lineno) from None
            present = value >= AU_THRESHOLD
            if code not in declared_set:
                if present:
                    raise InvariantViolation(
                        f"{name} line {lineno}: {code} is set but not annotated by this dataset")
                continue
            if code in vocab and present:
                au_vec[vocab.position(code)] = 1.0
        source = obj.get("path") or obj.get("feature_path")
        image = fmap = None
        if load_pixels:
            file = root / source
            if not file.exists():
                raise ParseError(f"missing file {file}", line=lineno)
            if "path" in obj:
                image = read_image(file)
            else:
                fmap = read_feature_map(file)
        else:
            image = np.zeros((3, 1, 1))
        records.append(SampleRecord(
            au_vector=au_vec, au_mask=mask.copy(), dataset_tag=obj.get("dataset", name),
            expr_label=expr, image=image, feature_map=fmap, source=str(source)))

    manifest = DatasetManifest(name=name, role=role, records=records, expression_classes=classes,
                               annotated_aus=annotated, vocab=vocab)
    manifest.validate()
    return manifest


def write_manifest(path, entries, header: Optional[dict] = None) -> None:
    """Write record dicts (and an optional header) as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"manifest": header}, sort_keys=True) + "\n")
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
