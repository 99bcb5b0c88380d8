"""AU code vocabulary."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import ParseError

# AUs owned by the seven facial regions of the AU branch; equals the first 21
# codes of the RAF-AU annotation list.
DEFAULT_AUS = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12", "AU14",
    "AU15", "AU16", "AU17", "AU18", "AU20", "AU22", "AU23", "AU24", "AU25", "AU26", "AU27",
)

# AUs available in every dataset considered for bias measurement, fixed order.
COMMON_AUS = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU09", "AU10",
    "AU12", "AU15", "AU17", "AU20", "AU25", "AU26",
)

_CODE = re.compile(r"^AU?(\d{1,2})$", re.IGNORECASE)


def normalize_code(code) -> str:
    """Map ``"AU1"``, ``"au01"``, ``"1"`` or ``1`` to the canonical ``"AU01"``."""
    text = str(code).strip()
    if text.isdigit():
        num = int(text)
    else:
        m = _CODE.match(text)
        if m is None:
            raise ParseError(f"not an AU code: {code!r}")
        num = int(m.group(1))
    if not 1 <= num <= 99:
        raise ParseError(f"AU number out of range: {code!r}")
    return f"AU{num:02d}"


@dataclass(frozen=True)
class AuVocabulary:
    entries: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        codes = tuple(normalize_code(c) for c in self.entries)
        if len(set(codes)) != len(codes):
            raise ParseError(f"duplicate AU codes in vocabulary: {codes}")
        object.__setattr__(self, "entries", codes)
        object.__setattr__(self, "index", {c: i for i, c in enumerate(codes)})

    @classmethod
    def default(cls) -> "AuVocabulary":
        return cls(DEFAULT_AUS)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code) -> bool:
        return normalize_code(code) in self.index

    def __iter__(self):
        return iter(self.entries)

    def position(self, code) -> int:
        return self.index[normalize_code(code)]

    def positions(self, codes) -> list:
        return [self.position(c) for c in codes]
