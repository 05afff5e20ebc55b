"""Textual codec for spatial and temporal grounding targets.

Boxes are rendered as ``[x1,y1,x2,y2]`` with exactly three decimal places,
segments as ``{t1,t2}`` with exactly two. All values are relative
coordinates in [0,1]. Rounding is half-away-from-zero. These strings are a
repo-wide wire contract: dataset files, model outputs and eval fixtures all
use them byte-exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import List, Tuple, Union


class InvalidBox(ValueError):
    pass


class InvalidSegment(ValueError):
    pass


def _valid_range_pair(lo: float, hi: float) -> bool:
    return 0.0 <= lo <= hi <= 1.0


@dataclass(frozen=True)
class BoundingBox:
    """Relative-coordinate box; (x1,y1) upper-left, (x2,y2) lower-right."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (_valid_range_pair(self.x1, self.x2) and _valid_range_pair(self.y1, self.y2)):
            raise InvalidBox(f"box violates 0<=x1<=x2<=1, 0<=y1<=y2<=1: {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class TimeSegment:
    """Relative start/end of a time span, as fractions of total duration."""

    t1: float
    t2: float

    def __post_init__(self):
        if not _valid_range_pair(self.t1, self.t2):
            raise InvalidSegment(f"segment violates 0<=t1<=t2<=1: {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float]:
        return (self.t1, self.t2)

    def length(self) -> float:
        return self.t2 - self.t1


@dataclass(frozen=True)
class ParsedSpan:
    """One parsed target plus the [char_start, char_end) offsets of its source text."""

    target: Union[BoundingBox, TimeSegment]
    char_start: int
    char_end: int


@dataclass(frozen=True)
class ParseRejection:
    """A pattern match whose values violated the target invariants."""

    text: str
    char_start: int
    char_end: int
    reason: str  # "out_of_range" | "inverted"


@dataclass(frozen=True)
class ParseResult:
    spans: Tuple[ParsedSpan, ...]
    rejections: Tuple[ParseRejection, ...]

    def first(self) -> Union[BoundingBox, TimeSegment, None]:
        return self.spans[0].target if self.spans else None


def _round_str(value: float, places: int) -> str:
    # Half-away-from-zero on the exact value carried by the float; string
    # formatting would round half-even instead (0.125 -> "0.12").
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(value).quantize(quantum, rounding=ROUND_HALF_UP))


def serialize_box(box: BoundingBox) -> str:
    """Render a box as ``[a,b,c,d]``, three decimals each, no whitespace."""
    vals = ",".join(_round_str(v, 3) for v in box.as_tuple())
    return f"[{vals}]"


def serialize_segment(seg: TimeSegment) -> str:
    """Render a segment as ``{a,b}``, two decimals each, no whitespace."""
    vals = ",".join(_round_str(v, 2) for v in seg.as_tuple())
    return "{" + vals + "}"


# Lenient patterns tolerate whitespace after commas and 1-3 decimal digits;
# the integer part is constrained to 0/1 so the parser never accepts a shape
# of string the serializer could not have produced.
_NUM = r"[01]\.\d{1,3}"
_BOX_RE = re.compile(rf"\[({_NUM}),\s*({_NUM}),\s*({_NUM}),\s*({_NUM})\]")
_SEG_RE = re.compile(rf"\{{({_NUM}),\s*({_NUM})\}}")
_NUM_STRICT3 = r"[01]\.\d{3}"
_NUM_STRICT2 = r"[01]\.\d{2}"
_BOX_RE_STRICT = re.compile(rf"\[({_NUM_STRICT3}),({_NUM_STRICT3}),({_NUM_STRICT3}),({_NUM_STRICT3})\]")
_SEG_RE_STRICT = re.compile(rf"\{{({_NUM_STRICT2}),({_NUM_STRICT2})\}}")


def _rejection_reason(values, pairs) -> str:
    if any(not (0.0 <= v <= 1.0) for v in values):
        return "out_of_range"
    if any(lo > hi for lo, hi in pairs):
        return "inverted"
    return ""


def parse_boxes(text: str, strict: bool = False) -> ParseResult:
    """Find every serialized box in ``text``, left to right.

    Matches whose values violate the box invariants are excluded from
    ``spans`` and recorded in ``rejections`` instead of raising.
    """
    pattern = _BOX_RE_STRICT if strict else _BOX_RE
    spans: List[ParsedSpan] = []
    rejections: List[ParseRejection] = []
    for m in pattern.finditer(text):
        x1, y1, x2, y2 = (float(g) for g in m.groups())
        reason = _rejection_reason((x1, y1, x2, y2), ((x1, x2), (y1, y2)))
        if reason:
            rejections.append(ParseRejection(m.group(0), m.start(), m.end(), reason))
        else:
            spans.append(ParsedSpan(BoundingBox(x1, y1, x2, y2), m.start(), m.end()))
    return ParseResult(tuple(spans), tuple(rejections))


def parse_segments(text: str, strict: bool = False) -> ParseResult:
    """Find every serialized segment in ``text``; mirrors ``parse_boxes``."""
    pattern = _SEG_RE_STRICT if strict else _SEG_RE
    spans: List[ParsedSpan] = []
    rejections: List[ParseRejection] = []
    for m in pattern.finditer(text):
        t1, t2 = (float(g) for g in m.groups())
        reason = _rejection_reason((t1, t2), ((t1, t2),))
        if reason:
            rejections.append(ParseRejection(m.group(0), m.start(), m.end(), reason))
        else:
            spans.append(ParsedSpan(TimeSegment(t1, t2), m.start(), m.end()))
    return ParseResult(tuple(spans), tuple(rejections))


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; union 0 -> 1.0 iff a == b exactly."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union == 0.0:
        return 1.0 if a.as_tuple() == b.as_tuple() else 0.0
    return inter / union


def segment_iou(a: TimeSegment, b: TimeSegment) -> float:
    """Overlap length over union length; same zero-union convention as boxes."""
    inter = max(0.0, min(a.t2, b.t2) - max(a.t1, b.t1))
    union = a.length() + b.length() - inter
    if union == 0.0:
        return 1.0 if a.as_tuple() == b.as_tuple() else 0.0
    return inter / union
