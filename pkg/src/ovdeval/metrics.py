"""Integrated evaluation: FN accounting, PR curves, AP, F1, and baselines.

``integrate`` folds the non-overlapping predictions into the ledger
produced by dynamic box aggregation and turns every unclaimed ground-truth
box into a false negative. ``average_precision`` builds the
all-point max-interpolated PR curve from the ledger; the class-ignored NMS
and plain per-box baselines reuse the same greedy matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import backend
from .dba import EvalLedger, FpReason, _fill_ledger, _LabelSetVocab, _label_set_of
from .grouping import boxes_array
from .ingest import GroundTruthRecord
from .scoring import ScoredPrediction

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class PrCurve:
    """PR sweep points (recall ascending) and the area under the
    max-interpolated curve; ``ap`` is None when the slice has no ground
    truth to recall."""

    points: tuple[tuple[float, float], ...]
    ap: float | None


def _match_selected(
    preds: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    ledger: EvalLedger,
    iou_thr: float,
    image_seq: int,
    select: np.ndarray | None = None,
) -> None:
    """Greedy-match a selection of predictions, updating the ledger in place."""
    if not preds:
        return
    vocab = _LabelSetVocab([_label_set_of(p) for p in preds], [r.labels for r in gt])
    pred_ls = np.asarray([vocab.pred_ids[_label_set_of(p)] for p in preds], np.int32)
    gt_ls = np.asarray([vocab.gt_ids[r.labels] for r in gt], np.int32)
    gt_matched = np.zeros(len(gt), dtype=np.uint8)
    for gi in ledger.matched_gt:
        gt_matched[gi] = 1
    if select is None:
        select = np.ones(len(preds), dtype=np.uint8)
    outcome, matched = backend.match_greedy(
        boxes_array(preds),
        np.asarray([p.score for p in preds], np.float64),
        pred_ls,
        select,
        boxes_array(gt),
        gt_ls,
        vocab.subset,
        iou_thr,
        gt_matched,
    )
    image_id = gt[0].image_id if gt else preds[0].prediction.image_id
    _fill_ledger(ledger, preds, outcome, matched, image_id, image_seq)
    ledger.matched_gt.update(int(i) for i in np.nonzero(gt_matched)[0])


def integrate(
    non_overlapping: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    ledger: EvalLedger,
    iou_thr: float = 0.5,
    image_seq: int = 0,
) -> EvalLedger:
    """Fold the non-overlapping set into the ledger and account for FN.

    Each prediction claims an unclaimed ground-truth box when IoU and the
    label-subset test pass; every ground-truth box left unclaimed becomes a
    false negative.
    """
    _match_selected(non_overlapping, gt, ledger, iou_thr, image_seq)
    for gi, record in enumerate(gt):
        if gi not in ledger.matched_gt:
            ledger.fn.append((record.image_id, gi))
    return ledger


def classify_plain(
    preds: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    iou_thr: float = 0.5,
    image_seq: int = 0,
    ledger: EvalLedger | None = None,
) -> EvalLedger:
    """Per-box greedy matching of every prediction (no grouping, no NMS)."""
    ledger = ledger if ledger is not None else EvalLedger()
    _match_selected(preds, gt, ledger, iou_thr, image_seq)
    for gi, record in enumerate(gt):
        if gi not in ledger.matched_gt:
            ledger.fn.append((record.image_id, gi))
    return ledger


def classify_nms(
    preds: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    nms_iou: float = DEFAULT_NMS_IOU,
    iou_thr: float = 0.5,
    image_seq: int = 0,
    ledger: EvalLedger | None = None,
) -> EvalLedger:
    """Class-agnostic NMS, then greedy matching of the survivors.

    Suppressed predictions appear in neither list; per overlap cluster only
    the most confident box survives, keeping its own label set.
    """
    ledger = ledger if ledger is not None else EvalLedger()
    if preds:
        keep = backend.nms_keep(
            boxes_array(preds),
            np.asarray([p.score for p in preds], np.float64),
            nms_iou,
        )
        _match_selected(preds, gt, ledger, iou_thr, image_seq, select=keep)
    for gi, record in enumerate(gt):
        if gi not in ledger.matched_gt:
            ledger.fn.append((record.image_id, gi))
    return ledger


def average_precision(ledger: EvalLedger) -> PrCurve:
    """PR sweep over the ledger, descending score (ties by input order).

    Precision and recall are computed after each entry; the AP is the area
    under the max-interpolated curve (all-point interpolation). Returns an
    absent AP when the ledger holds no ground truth.
    """
    n_pos = ledger.tp_count + ledger.fn_count
    if n_pos == 0:
        return PrCurve(points=(), ap=None)
    entries = [(e.score, e.image_seq, e.pred_index, 1) for e in ledger.tp]
    entries += [(e.score, e.image_seq, e.pred_index, 0) for e in ledger.fp]
    entries.sort(key=lambda t: (-t[0], t[1], t[2]))
    points: list[tuple[float, float]] = []
    tp = fp = 0
    for _, _, _, is_tp in entries:
        tp += is_tp
        fp += 1 - is_tp
        points.append((tp / n_pos, tp / (tp + fp)))
    precisions = [p for _, p in points]
    for i in range(len(precisions) - 2, -1, -1):
        if precisions[i + 1] > precisions[i]:
            precisions[i] = precisions[i + 1]
    ap = 0.0
    prev_recall = 0.0
    for (recall, _), precision in zip(points, precisions):
        if recall > prev_recall:
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return PrCurve(points=tuple(points), ap=ap)


def precision_recall(ledger: EvalLedger) -> tuple[float, float]:
    tp, fp, fn = ledger.tp_count, ledger.fp_count, ledger.fn_count
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def f1(ledger: EvalLedger) -> float:
    """2*TP / (2*TP + FP + FN); zero when the denominator vanishes."""
    tp, fp, fn = ledger.tp_count, ledger.fp_count, ledger.fn_count
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def nms_ap_baseline(
    preds: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    nms_iou: float = DEFAULT_NMS_IOU,
    iou_thr: float = 0.5,
) -> PrCurve:
    """AP after class-agnostic NMS (predictions pooled across prompts)."""
    return average_precision(classify_nms(preds, gt, nms_iou, iou_thr))


def plain_ap_baseline(
    preds: Sequence[ScoredPrediction],
    gt: Sequence[GroundTruthRecord],
    iou_thr: float = 0.5,
) -> PrCurve:
    """AP from plain per-box matching (no suppression or aggregation)."""
    return average_precision(classify_plain(preds, gt, iou_thr))


@dataclass(frozen=True)
class ReportRow:
    """Metrics for one (method, slice) cell of the report."""

    method: str
    slice_name: str
    ap: float | None
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    map_groups: float | None = None
    fp_reasons: dict[str, int] = field(default_factory=dict)


@dataclass
class MetricsReport:
    rows: list[ReportRow]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": [
                {
                    "method": r.method,
                    "slice": r.slice_name,
                    "ap": r.ap,
                    "f1": r.f1,
                    "precision": r.precision,
                    "recall": r.recall,
                    "tp": r.tp,
                    "fp": r.fp,
                    "fn": r.fn,
                    "n_gt": r.n_gt,
                    "map_groups": r.map_groups,
                    "fp_reasons": dict(sorted(r.fp_reasons.items())),
                }
                for r in self.rows
            ],
        }

    def to_text(self) -> str:
        headers = ["method", "slice", "ap", "f1", "precision", "recall", "tp", "fp", "fn", "n_gt"]
        table = [headers]
        for r in self.rows:
            table.append(
                [
                    r.method,
                    r.slice_name,
                    "-" if r.ap is None else f"{r.ap:.6f}",
                    f"{r.f1:.6f}",
                    f"{r.precision:.6f}",
                    f"{r.recall:.6f}",
                    str(r.tp),
                    str(r.fp),
                    str(r.fn),
                    str(r.n_gt),
                ]
            )
        widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
        lines = []
        for ri, row in enumerate(table):
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
            if ri == 0:
                lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
        return "\n".join(lines) + "\n"


def fp_reason_counts(ledger: EvalLedger) -> dict[str, int]:
    out = {reason.value: 0 for reason in FpReason}
    for e in ledger.fp:
        out[e.reason.value] += 1
    return {k: v for k, v in out.items() if v}


def slice_rows(dataset, params, slices=("global",), methods=("dba",)) -> list[ReportRow]:
    """Per-slice metric rows; see ``pipeline.evaluate_slices``."""
    from . import pipeline

    return pipeline.evaluate_slices(dataset, params, slices=slices, methods=methods)


def sweep_score_thr(dataset, grid: Sequence[float], params=None):
    """Retention-window sweep; see ``pipeline.sweep_score_thr``."""
    from . import pipeline

    return pipeline.sweep_score_thr(dataset, grid, params)
