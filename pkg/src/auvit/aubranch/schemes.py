"""Facial region schemes for the AU branch.

Rects are normalised ``(top, left, height, width)`` over the token grid. A grid
cell belongs to a region iff its centre lies in the half-open rect
``[top, top+height) x [left, left+width)``.

The geometry is a reconstruction (all rects are overridable through JSON):

==============  ============================  ==================================
region          rect                          AUs
==============  ============================  ==================================
left_eye        (0.00, 0.00, 0.50, 0.55)      AU01 AU02 AU05 AU07
right_eye       (0.00, 0.45, 0.50, 0.55)      mirror of left_eye
brow_center     (0.00, 0.30, 0.40, 0.40)      AU04
nose            (0.25, 0.30, 0.45, 0.40)      AU09
left_cheek      (0.35, 0.00, 0.35, 0.40)      AU06
right_cheek     (0.35, 0.60, 0.35, 0.40)      mirror of left_cheek
mouth           (0.55, 0.00, 0.45, 1.00)      14 lower-face AUs
==============  ============================  ==================================

Other schemes: 1 = whole frame; 2 = overlapping upper/lower halves;
3 = upper/middle/lower bands; 5 = eyes (absorbing the cheeks' AU06),
brow centre, nose, mouth; 9 = the 7-patch layout plus mirrored left/right
mouth halves that take over the lip-corner AUs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..dataio.vocab import DEFAULT_AUS, normalize_code
from ..errors import EmptyRegion, InvariantViolation, UnassignedAu, UnsupportedScheme

SUPPORTED = (1, 2, 3, 5, 7, 9)

EYE_AUS = ("AU01", "AU02", "AU05", "AU07")
MOUTH_AUS = ("AU10", "AU12", "AU14", "AU15", "AU16", "AU17", "AU18",
             "AU20", "AU22", "AU23", "AU24", "AU25", "AU26", "AU27")
LIP_CORNER_AUS = ("AU12", "AU14", "AU15", "AU20")
UPPER_AUS = ("AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09")

_TOL = 1e-9


@dataclass(frozen=True)
class Region:
    name: str
    rect: tuple
    assigned_aus: tuple
    mirror_of: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "rect", tuple(float(v) for v in self.rect))
        object.__setattr__(self, "assigned_aus", tuple(normalize_code(a) for a in self.assigned_aus))
        top, left, h, w = self.rect
        if h <= 0 or w <= 0 or top < -_TOL or left < -_TOL or top + h > 1 + _TOL or left + w > 1 + _TOL:
            raise InvariantViolation(f"region {self.name}: rect {self.rect} outside the unit square")

    def contains(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        top, left, h, w = self.rect
        return (y >= top) & (y < top + h) & (x >= left) & (x < left + w)

    def cells(self, rows: int, cols: int) -> tuple:
        """``(row_slice, col_slice)`` of the grid cells whose centres fall inside."""
        top, left, h, w = self.rect
        r = _span(top, h, rows)
        c = _span(left, w, cols)
        if r is None or c is None:
            raise EmptyRegion(f"region {self.name} holds no cell of a {rows}x{cols} grid")
        return r, c


def _span(start: float, extent: float, n: int) -> Optional[slice]:
    centers = (np.arange(n) + 0.5) / n
    idx = np.flatnonzero((centers >= start) & (centers < start + extent))
    if idx.size == 0:
        return None
    return slice(int(idx[0]), int(idx[-1]) + 1)


@dataclass(frozen=True)
class RegionScheme:
    name: str
    regions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def mirror_pairs(self) -> list:
        return [(r.mirror_of, r.name) for r in self.regions if r.mirror_of]

    def aus(self) -> list:
        seen = []
        for r in self.regions:
            seen.extend(a for a in r.assigned_aus if a not in seen)
        return seen

    # -- invariants ---------------------------------------------------------
    def validate(self, vocab=None) -> None:
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise InvariantViolation(f"{self.name}: duplicate region names")
        for primary, mirror in self.mirror_pairs:
            if primary not in names:
                raise InvariantViolation(f"{self.name}: {mirror} mirrors unknown region {primary}")
            a, b = self.region(primary), self.region(mirror)
            ta, la, ha, wa = a.rect
            tb, lb, hb, wb = b.rect
            if abs(la - (1.0 - lb - wb)) > _TOL or abs(ta - tb) > _TOL or abs(ha - hb) > _TOL or abs(wa - wb) > _TOL:
                raise InvariantViolation(f"{self.name}: {primary}/{mirror} rects are not mirror images")
            if a.assigned_aus != b.assigned_aus:
                raise InvariantViolation(f"{self.name}: {primary}/{mirror} AU lists differ")
        if not self.covers_unit_square():
            raise InvariantViolation(f"{self.name}: regions do not cover the frame")
        if vocab is not None:
            missing = [a for a in vocab if a not in self.aus()]
            if missing:
                raise UnassignedAu(f"{self.name}: AUs without a region: {missing}")

    def covers_unit_square(self, resolution: int = 400) -> bool:
        y, x = np.meshgrid((np.arange(resolution) + 0.5) / resolution,
                           (np.arange(resolution) + 0.5) / resolution, indexing="ij")
        covered = np.zeros_like(y, dtype=bool)
        for r in self.regions:
            covered |= r.contains(y, x)
        return bool(covered.all())

    def membership(self, rows: int, cols: int) -> np.ndarray:
        """Boolean ``[regions, rows, cols]`` cell-membership under the centre rule."""
        y, x = np.meshgrid((np.arange(rows) + 0.5) / rows, (np.arange(cols) + 0.5) / cols, indexing="ij")
        return np.stack([r.contains(y, x) for r in self.regions])

    def ascii_map(self, rows: int, cols: int) -> str:
        """One character per cell: region letter, ``+`` when a cell is shared, ``.`` if uncovered."""
        member = self.membership(rows, cols)
        letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
        lines = []
        for i in range(rows):
            row = []
            for j in range(cols):
                hits = np.flatnonzero(member[:, i, j])
                row.append("." if hits.size == 0 else "+" if hits.size > 1 else letters[hits[0]])
            lines.append("".join(row))
        legend = [f"{letters[k]} = {r.name}" for k, r in enumerate(self.regions)]
        return "\n".join(lines + [""] + legend + ["+ = shared by several regions"])

    # -- serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "regions": [{"name": r.name, "rect": list(r.rect), "aus": list(r.assigned_aus),
                         "mirror_of": r.mirror_of} for r in self.regions],
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionScheme":
        regions = [Region(r["name"], tuple(r["rect"]), tuple(r["aus"]), r.get("mirror_of"))
                   for r in d["regions"]]
        scheme = cls(d["name"], tuple(regions))
        scheme.validate()
        return scheme

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RegionScheme":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _pair(name: str, rect: tuple, aus: tuple) -> list:
    top, left, h, w = rect
    return [Region(f"left_{name}", rect, aus),
            Region(f"right_{name}", (top, 1.0 - left - w, h, w), aus, mirror_of=f"left_{name}")]


def build_scheme(n_patches: int) -> RegionScheme:
    if n_patches == 1:
        regions = [Region("face", (0.0, 0.0, 1.0, 1.0), DEFAULT_AUS)]
    elif n_patches == 2:
        regions = [Region("upper", (0.0, 0.0, 0.55, 1.0), UPPER_AUS),
                   Region("lower", (0.45, 0.0, 0.55, 1.0), MOUTH_AUS)]
    elif n_patches == 3:
        regions = [Region("upper", (0.0, 0.0, 0.40, 1.0), ("AU01", "AU02", "AU04", "AU05", "AU07")),
                   Region("middle", (0.30, 0.0, 0.40, 1.0), ("AU06", "AU09")),
                   Region("lower", (0.55, 0.0, 0.45, 1.0), MOUTH_AUS)]
    elif n_patches == 5:
        regions = (_pair("eye", (0.0, 0.0, 0.60, 0.55), EYE_AUS + ("AU06",))
                   + [Region("brow_center", (0.0, 0.30, 0.40, 0.40), ("AU04",)),
                      Region("nose", (0.25, 0.30, 0.45, 0.40), ("AU09",)),
                      Region("mouth", (0.55, 0.0, 0.45, 1.0), MOUTH_AUS)])
    elif n_patches in (7, 9):
        mouth = MOUTH_AUS if n_patches == 7 else tuple(a for a in MOUTH_AUS if a not in LIP_CORNER_AUS)
        regions = (_pair("eye", (0.0, 0.0, 0.50, 0.55), EYE_AUS)
                   + [Region("brow_center", (0.0, 0.30, 0.40, 0.40), ("AU04",)),
                      Region("nose", (0.25, 0.30, 0.45, 0.40), ("AU09",))]
                   + _pair("cheek", (0.35, 0.0, 0.35, 0.40), ("AU06",))
                   + [Region("mouth", (0.55, 0.0, 0.45, 1.0), mouth)])
        if n_patches == 9:
            regions += _pair("mouth", (0.55, 0.0, 0.45, 0.55), LIP_CORNER_AUS)
    else:
        raise UnsupportedScheme(f"{n_patches}-patch scheme not supported; choose from {SUPPORTED}")
    scheme = RegionScheme(f"{n_patches}-patch", tuple(regions))
    scheme.validate()
    return scheme
