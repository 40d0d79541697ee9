"""Dynamic box aggregation: retention window, disjointness penalty, matching.

Per overlap group, members scoring within ``score_thr`` of the group
maximum are retained and the rest dropped silently. If any two retained
members' predicted label sets conflict in condition or state, the whole
retained set is recorded as false positives; otherwise retained members
are matched against the ground truth (own group box first) under the IoU
threshold and the label-subset test. A ground-truth box is claimed by at
most one true positive per evaluation pass; the claim ledger is shared
with the non-overlapping integration pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import backend
from .grouping import OverlapGroup, boxes_array
from .ingest import GroundTruthRecord
from .scoring import ScoredPrediction
from .taxonomy import LabelSet, disjoint_in_condition_or_state, is_subset

DEFAULT_IOU_THR = 0.5


@dataclass(frozen=True)
class DbaParams:
    """Classification thresholds; ``score_thr`` is the retention window width."""

    iou_thr: float = DEFAULT_IOU_THR
    score_thr: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.iou_thr <= 1.0:
            raise ValueError(f"iou_thr must be in (0, 1], got {self.iou_thr}")
        if self.score_thr < 0.0:
            raise ValueError(f"score_thr must be >= 0, got {self.score_thr}")


class FpReason(enum.Enum):
    DISJOINT = "disjoint"
    LOW_IOU = "low_iou"
    LABEL_MISMATCH = "label_mismatch"


_REASON_BY_OUTCOME = {
    backend.OUTCOME_FP_DISJOINT: FpReason.DISJOINT,
    backend.OUTCOME_FP_LOW_IOU: FpReason.LOW_IOU,
    backend.OUTCOME_FP_LABEL_MISMATCH: FpReason.LABEL_MISMATCH,
}


@dataclass(frozen=True)
class TpEntry:
    image_id: str
    pred_index: int
    gt_index: int
    score: float
    image_seq: int = 0


@dataclass(frozen=True)
class FpEntry:
    image_id: str
    pred_index: int
    reason: FpReason
    score: float
    image_seq: int = 0


@dataclass
class EvalLedger:
    """Classified TP/FP/FN entries plus the shared ground-truth claim state.

    ``matched_gt`` holds the indices of claimed ground-truth boxes for the
    current image pass; ``fn`` is filled by the integration step.
    """

    tp: list[TpEntry] = field(default_factory=list)
    fp: list[FpEntry] = field(default_factory=list)
    fn: list[tuple[str, int]] = field(default_factory=list)
    matched_gt: set[int] = field(default_factory=set)

    @property
    def tp_count(self) -> int:
        return len(self.tp)

    @property
    def fp_count(self) -> int:
        return len(self.fp)

    @property
    def fn_count(self) -> int:
        return len(self.fn)


class _LabelSetVocab:
    """Maps distinct label sets to small ids and precomputes relations."""

    def __init__(self, pred_sets: Sequence[LabelSet], gt_sets: Sequence[LabelSet]):
        self.pred_ids: dict[LabelSet, int] = {}
        for ls in pred_sets:
            self.pred_ids.setdefault(ls, len(self.pred_ids))
        self.gt_ids: dict[LabelSet, int] = {}
        for ls in gt_sets:
            self.gt_ids.setdefault(ls, len(self.gt_ids))
        preds = list(self.pred_ids)
        gts = list(self.gt_ids)
        self.subset = np.zeros((max(len(preds), 1), max(len(gts), 1)), dtype=np.uint8)
        for i, a in enumerate(preds):
            for j, b in enumerate(gts):
                self.subset[i, j] = is_subset(a, b)
        self.disjoint = np.zeros((max(len(preds), 1),) * 2, dtype=np.uint8)
        for i, a in enumerate(preds):
            for j, b in enumerate(preds):
                self.disjoint[i, j] = disjoint_in_condition_or_state(a, b)


def _label_set_of(pred: ScoredPrediction) -> LabelSet:
    if pred.label_set is None:
        raise ValueError(
            f"prediction for prompt {pred.prediction.prompt_id!r} carries no "
            "label set; resolve the prompt catalog first (attach_label_sets)"
        )
    return pred.label_set


def _fill_ledger(
    ledger: EvalLedger,
    preds: Sequence[ScoredPrediction],
    outcome: np.ndarray,
    matched: np.ndarray,
    image_id: str,
    image_seq: int,
) -> None:
    """Append classified predictions in ascending input-index order."""
    order = sorted(range(len(preds)), key=lambda i: preds[i].index)
    for i in order:
        code = int(outcome[i])
        if code == backend.OUTCOME_NONE:
            continue  # dropped below the retention window
        p = preds[i]
        if code == backend.OUTCOME_TP:
            ledger.tp.append(
                TpEntry(image_id, p.index, int(matched[i]), p.score, image_seq)
            )
        else:
            ledger.fp.append(
                FpEntry(image_id, p.index, _REASON_BY_OUTCOME[code], p.score, image_seq)
            )


def dba(
    groups: Sequence[OverlapGroup],
    gt: Sequence[GroundTruthRecord],
    params: DbaParams,
    ledger: EvalLedger | None = None,
    image_seq: int = 0,
) -> EvalLedger:
    """Classify grouped predictions of one image (TP/FP only; FN comes later).

    Returns the ledger with true/false positives appended and the
    ground-truth claim state updated; members dropped by the retention
    window appear in neither list.
    """
    ledger = ledger if ledger is not None else EvalLedger()
    if not groups:
        return ledger
    members: list[ScoredPrediction] = []
    group_id: list[int] = []
    for g in groups:
        for p in g.members:
            members.append(p)
            group_id.append(g.gt_index)
    vocab = _LabelSetVocab(
        [_label_set_of(p) for p in members], [r.labels for r in gt]
    )
    pred_ls = np.asarray([vocab.pred_ids[_label_set_of(p)] for p in members], np.int32)
    gt_ls = np.asarray([vocab.gt_ids[r.labels] for r in gt], np.int32)
    gt_matched = np.zeros(len(gt), dtype=np.uint8)
    for gi in ledger.matched_gt:
        gt_matched[gi] = 1
    outcome, matched = backend.dba_classify(
        boxes_array(members),
        np.asarray([p.score for p in members], np.float64),
        pred_ls,
        np.asarray(group_id, np.int64),
        boxes_array(gt),
        gt_ls,
        vocab.subset,
        vocab.disjoint,
        params.iou_thr,
        params.score_thr,
        gt_matched,
    )
    image_id = gt[0].image_id if gt else members[0].prediction.image_id
    _fill_ledger(ledger, members, outcome, matched, image_id, image_seq)
    ledger.matched_gt.update(int(i) for i in np.nonzero(gt_matched)[0])
    return ledger
