"""Axis-aligned box arithmetic: area, intersection, IoU.

Boxes use corner form (x1, y1, x2, y2) in pixels, half-open on both axes.
Zero-area boxes are rejected at construction, so the ops never divide by
zero.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DegenerateBox


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBox(
                f"box ({self.x1}, {self.y1}, {self.x2}, {self.y2}) is not well-formed"
            )

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        """Convert center-width form to corner form."""
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def area(b: Box) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the boxes are disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    if ix <= 0.0:
        return 0.0
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (area(a) + area(b) - inter)
