"""Pure-Python (numpy) implementations of the per-image hot kernels.

This backend is the behavioral reference; ``_kernels.pyx`` mirrors it line
for line in C. Both must produce identical classification decisions, which
is enforced by the backend-parity test suite.

All kernels operate on plain numpy arrays. Label semantics enter through
two precomputed relation matrices:

* ``subset[p, g]``  - 1 iff prediction label-set ``p`` is a subset of
  ground-truth label-set ``g``;
* ``disjoint[p, q]`` - 1 iff prediction label-sets ``p`` and ``q``
  conflict in condition or state.

Outcome codes (int8): 0 none/dropped, 1 TP, 2 FP disjoint group,
3 FP low IoU, 4 FP label mismatch.
"""

from __future__ import annotations

import numpy as np

IS_COMPILED = False

OUTCOME_NONE = 0
OUTCOME_TP = 1
OUTCOME_FP_DISJOINT = 2
OUTCOME_FP_LOW_IOU = 3
OUTCOME_FP_LABEL_MISMATCH = 4


def segment_nlse(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Normalized log-sum-exp per segment, max-shift stabilized.

    ``offsets`` has one more entry than there are segments; segment ``i``
    spans ``values[offsets[i]:offsets[i+1]]`` and must be non-empty.
    """
    values = np.asarray(values, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if len(offsets) < 2:
        return np.empty(0, dtype=np.float64)
    counts = np.diff(offsets)
    if np.any(counts <= 0):
        raise ValueError("empty segment")
    maxima = np.maximum.reduceat(values, offsets[:-1])
    shifted = np.exp(values - np.repeat(maxima, counts))
    sums = np.add.reduceat(shifted, offsets[:-1])
    return maxima + np.log(sums / counts)


def segment_max(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Maximum per segment (see ``segment_nlse`` for the layout)."""
    values = np.asarray(values, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if len(offsets) < 2:
        return np.empty(0, dtype=np.float64)
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("empty segment")
    return np.maximum.reduceat(values, offsets[:-1])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b)) for corner-form boxes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((ix > 0.0) & (iy > 0.0), ix * iy, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def group_image(
    gt_boxes: np.ndarray,
    pred_boxes: np.ndarray,
    scores: np.ndarray,
    group_iou: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Assign predictions of one image to per-ground-truth overlap groups.

    Ground-truth boxes are visited in annotation order. The unassigned
    prediction with the highest positive IoU to the current box becomes the
    anchor (ties: higher score, then lower input index); remaining
    unassigned predictions whose IoU to the anchor strictly exceeds
    ``group_iou`` join the group. Returns ``(group_id, anchors)`` where
    ``group_id[p]`` is the ground-truth index or -1, and ``anchors[g]`` is
    the anchor's prediction index or -1.
    """
    m = len(gt_boxes)
    n = len(pred_boxes)
    group_id = np.full(n, -1, dtype=np.int64)
    anchors = np.full(m, -1, dtype=np.int64)
    if m == 0 or n == 0:
        return group_id, anchors
    iou_gp = pairwise_iou(gt_boxes, pred_boxes)
    unassigned = np.ones(n, dtype=bool)
    for gi in range(m):
        row = iou_gp[gi]
        best = -1
        best_iou = 0.0
        for pi in range(n):
            if not unassigned[pi]:
                continue
            v = row[pi]
            if v <= 0.0:
                continue
            if v > best_iou or (v == best_iou and best >= 0 and scores[pi] > scores[best]):
                best = pi
                best_iou = v
        if best < 0:
            continue
        anchors[gi] = best
        unassigned[best] = False
        group_id[best] = gi
        anchor_iou = pairwise_iou(pred_boxes[best : best + 1], pred_boxes)[0]
        for pi in range(n):
            if unassigned[pi] and anchor_iou[pi] > group_iou:
                unassigned[pi] = False
                group_id[pi] = gi
    return group_id, anchors


def _claim(
    pi: int,
    own_gi: int,
    iou_row: np.ndarray,
    pred_ls: np.ndarray,
    gt_ls: np.ndarray,
    subset: np.ndarray,
    iou_thr: float,
    gt_matched: np.ndarray,
    outcome: np.ndarray,
    matched_gt: np.ndarray,
) -> None:
    """Match one prediction against the ground truth, claiming at most one box.

    The prediction's own group box (``own_gi`` >= 0) is checked first; any
    other unclaimed qualifying box is taken by descending IoU (ties: lower
    ground-truth index). Failure reasons distinguish localization (no box at
    ``iou_thr``) from label mismatch.
    """
    if (
        own_gi >= 0
        and not gt_matched[own_gi]
        and iou_row[own_gi] >= iou_thr
        and subset[pred_ls[pi], gt_ls[own_gi]]
    ):
        outcome[pi] = OUTCOME_TP
        matched_gt[pi] = own_gi
        gt_matched[own_gi] = True
        return
    best_g = -1
    best_v = -1.0
    any_iou = False
    for g2 in range(len(gt_ls)):
        v = iou_row[g2]
        if v >= iou_thr:
            any_iou = True
            if not gt_matched[g2] and subset[pred_ls[pi], gt_ls[g2]] and v > best_v:
                best_g = g2
                best_v = v
    if best_g >= 0:
        outcome[pi] = OUTCOME_TP
        matched_gt[pi] = best_g
        gt_matched[best_g] = True
    elif any_iou:
        outcome[pi] = OUTCOME_FP_LABEL_MISMATCH
    else:
        outcome[pi] = OUTCOME_FP_LOW_IOU


def dba_classify(
    pred_boxes: np.ndarray,
    scores: np.ndarray,
    pred_ls: np.ndarray,
    group_id: np.ndarray,
    gt_boxes: np.ndarray,
    gt_ls: np.ndarray,
    subset: np.ndarray,
    disjoint: np.ndarray,
    iou_thr: float,
    score_thr: float,
    gt_matched: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Classify grouped predictions: retention window, disjointness, matching.

    Per group, members scoring within ``score_thr`` of the group maximum are
    retained and the rest dropped silently. If any two retained members'
    label sets conflict in condition or state the whole retained set is a
    false positive; otherwise retained members are matched in descending
    score order (ties: lower index). ``gt_matched`` is updated in place and
    shared with the non-overlapping pass.
    """
    n = len(pred_boxes)
    m = len(gt_boxes)
    outcome = np.zeros(n, dtype=np.int8)
    matched_gt = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return outcome, matched_gt
    iou_pg = pairwise_iou(pred_boxes, gt_boxes)
    for gi in range(m):
        members = np.nonzero(group_id == gi)[0]
        if members.size == 0:
            continue
        t = scores[members].max() - score_thr
        retained = members[scores[members] >= t]
        conflict = False
        for i in range(len(retained)):
            for j in range(i + 1, len(retained)):
                if disjoint[pred_ls[retained[i]], pred_ls[retained[j]]]:
                    conflict = True
                    break
            if conflict:
                break
        if conflict:
            outcome[retained] = OUTCOME_FP_DISJOINT
            continue
        order = retained[np.argsort(-scores[retained], kind="stable")]
        for pi in order:
            _claim(
                pi, gi, iou_pg[pi], pred_ls, gt_ls, subset,
                iou_thr, gt_matched, outcome, matched_gt,
            )
    return outcome, matched_gt


def match_greedy(
    pred_boxes: np.ndarray,
    scores: np.ndarray,
    pred_ls: np.ndarray,
    select: np.ndarray,
    gt_boxes: np.ndarray,
    gt_ls: np.ndarray,
    subset: np.ndarray,
    iou_thr: float,
    gt_matched: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy TP/FP matching of selected predictions, descending score.

    Used for the non-overlapping set of the integrated evaluation and for
    the plain / NMS baselines. Unselected predictions keep outcome 0.
    """
    n = len(pred_boxes)
    m = len(gt_boxes)
    outcome = np.zeros(n, dtype=np.int8)
    matched_gt = np.full(n, -1, dtype=np.int64)
    selected = np.nonzero(select)[0]
    if selected.size == 0:
        return outcome, matched_gt
    if m == 0:
        outcome[selected] = OUTCOME_FP_LOW_IOU
        return outcome, matched_gt
    iou_pg = pairwise_iou(pred_boxes, gt_boxes)
    order = selected[np.argsort(-scores[selected], kind="stable")]
    for pi in order:
        _claim(
            pi, -1, iou_pg[pi], pred_ls, gt_ls, subset,
            iou_thr, gt_matched, outcome, matched_gt,
        )
    return outcome, matched_gt


def nms_keep(boxes: np.ndarray, scores: np.ndarray, nms_iou: float) -> np.ndarray:
    """Class-agnostic greedy NMS keep mask.

    Boxes are visited in descending score order (ties: lower index); each
    survivor suppresses later boxes whose IoU strictly exceeds ``nms_iou``.
    """
    n = len(boxes)
    keep = np.ones(n, dtype=np.uint8)
    if n == 0:
        return keep
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    iou_pp = pairwise_iou(boxes, boxes)
    for oi in range(n):
        i = order[oi]
        if not keep[i]:
            continue
        row = iou_pp[i]
        for oj in range(oi + 1, n):
            j = order[oj]
            if keep[j] and row[j] > nms_iou:
                keep[j] = 0
    return keep
