"""Per-ground-truth overlap groups.

For each ground-truth box, in annotation order, the unassigned prediction
with the highest positive IoU to it becomes the anchor; unassigned
predictions whose IoU to the anchor strictly exceeds ``group_iou`` join
the group. A prediction joins at most one group; everything left over is
the non-overlapping set handled by the integrated evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backend
from .ingest import GroundTruthRecord
from .scoring import ScoredPrediction

DEFAULT_GROUP_IOU = 0.85


@dataclass(frozen=True)
class OverlapGroup:
    """An anchor prediction plus its high-IoU companions for one GT box."""

    gt_index: int
    anchor: ScoredPrediction
    members: tuple[ScoredPrediction, ...]


@dataclass(frozen=True)
class GroupingResult:
    """Partition of an image's predictions into groups and leftovers."""

    groups: tuple[OverlapGroup, ...]
    non_overlapping: tuple[ScoredPrediction, ...]


def boxes_array(items) -> np.ndarray:
    out = np.empty((len(items), 4), dtype=np.float64)
    for i, it in enumerate(items):
        b = it.box if not hasattr(it, "prediction") else it.prediction.box
        out[i, 0] = b.x1
        out[i, 1] = b.y1
        out[i, 2] = b.x2
        out[i, 3] = b.y2
    return out


def build_groups(
    gts: Sequence[GroundTruthRecord],
    preds: Sequence[ScoredPrediction],
    group_iou: float = DEFAULT_GROUP_IOU,
) -> GroupingResult:
    """Partition one image's scored, threshold-filtered predictions.

    Anchor ties break by higher score, then lower input index. Ground-truth
    boxes with no positively overlapping prediction produce no group; they
    surface later as false negatives.
    """
    if not preds:
        return GroupingResult(groups=(), non_overlapping=())
    gt_boxes = boxes_array(gts)
    pred_boxes = boxes_array(preds)
    scores = np.asarray([p.score for p in preds], dtype=np.float64)
    group_id, anchors = backend.group_image(gt_boxes, pred_boxes, scores, group_iou)

    groups = []
    for gi in range(len(gts)):
        if anchors[gi] < 0:
            continue
        member_idx = np.nonzero(group_id == gi)[0]
        groups.append(
            OverlapGroup(
                gt_index=gi,
                anchor=preds[int(anchors[gi])],
                members=tuple(preds[int(i)] for i in member_idx),
            )
        )
    non_overlapping = tuple(preds[int(i)] for i in np.nonzero(group_id < 0)[0])
    return GroupingResult(groups=tuple(groups), non_overlapping=non_overlapping)
