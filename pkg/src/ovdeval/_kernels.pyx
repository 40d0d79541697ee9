# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-image kernels; mirrors ``_kernels_py`` exactly.

Classification arithmetic (IoU, comparisons) is kept bit-identical with
the pure-Python backend: same operations in the same order, compiled with
FP contraction disabled.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

IS_COMPILED = True

OUTCOME_NONE = 0
OUTCOME_TP = 1
OUTCOME_FP_DISJOINT = 2
OUTCOME_FP_LOW_IOU = 3
OUTCOME_FP_LABEL_MISMATCH = 4

cdef signed char _TP = 1
cdef signed char _FP_DISJOINT = 2
cdef signed char _FP_LOW_IOU = 3
cdef signed char _FP_LABEL_MISMATCH = 4


def segment_nlse(values, offsets):
    """Normalized log-sum-exp per segment, max-shift stabilized."""
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    if off.shape[0] < 2:
        return np.empty(0, dtype=np.float64)
    cdef Py_ssize_t k = off.shape[0] - 1
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, lo, hi
    cdef double m, s
    for i in range(k):
        lo = off[i]
        hi = off[i + 1]
        if hi <= lo:
            raise ValueError("empty segment")
        m = v[lo]
        for j in range(lo + 1, hi):
            if v[j] > m:
                m = v[j]
        s = 0.0
        for j in range(lo, hi):
            s += exp(v[j] - m)
        out[i] = m + log(s / (hi - lo))
    return out_arr


def segment_max(values, offsets):
    """Maximum per segment (see ``segment_nlse`` for the layout)."""
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    if off.shape[0] < 2:
        return np.empty(0, dtype=np.float64)
    cdef Py_ssize_t k = off.shape[0] - 1
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, lo, hi
    cdef double m
    for i in range(k):
        lo = off[i]
        hi = off[i + 1]
        if hi <= lo:
            raise ValueError("empty segment")
        m = v[lo]
        for j in range(lo + 1, hi):
            if v[j] > m:
                m = v[j]
        out[i] = m
    return out_arr


cdef inline double _iou(const double[:, ::1] a, Py_ssize_t i,
                        const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double ix, iy, inter, area_a, area_b
    ix = (a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]) - \
         (a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0])
    if ix <= 0.0:
        return 0.0
    iy = (a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]) - \
         (a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1])
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    return inter / (area_a + area_b - inter)


def pairwise_iou(a, b):
    """IoU matrix of shape (len(a), len(b)) for corner-form boxes."""
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t na = av.shape[0], nb = bv.shape[0], i, j
    out_arr = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(na):
        for j in range(nb):
            out[i, j] = _iou(av, i, bv, j)
    return out_arr


def group_image(gt_boxes, pred_boxes, scores, double group_iou):
    """Assign predictions of one image to per-ground-truth overlap groups.

    Same contract as the pure-Python backend: anchors by highest positive
    IoU in annotation order (ties: higher score, then lower index),
    companions by IoU to the anchor strictly above ``group_iou``.
    """
    cdef double[:, ::1] gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] pr = np.ascontiguousarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t m = gt.shape[0], n = pr.shape[0]
    group_arr = np.full(n, -1, dtype=np.int64)
    anchor_arr = np.full(m, -1, dtype=np.int64)
    cdef long long[::1] group_id = group_arr
    cdef long long[::1] anchors = anchor_arr
    if m == 0 or n == 0:
        return group_arr, anchor_arr
    unassigned_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] unassigned = unassigned_arr
    cdef Py_ssize_t gi, pi, best
    cdef double v, best_iou
    for gi in range(m):
        best = -1
        best_iou = 0.0
        for pi in range(n):
            if not unassigned[pi]:
                continue
            v = _iou(gt, gi, pr, pi)
            if v <= 0.0:
                continue
            if v > best_iou or (v == best_iou and best >= 0 and sc[pi] > sc[best]):
                best = pi
                best_iou = v
        if best < 0:
            continue
        anchors[gi] = best
        unassigned[best] = 0
        group_id[best] = gi
        for pi in range(n):
            if unassigned[pi] and _iou(pr, best, pr, pi) > group_iou:
                unassigned[pi] = 0
                group_id[pi] = gi
    return group_arr, anchor_arr


cdef void _claim(Py_ssize_t pi, Py_ssize_t own_gi,
                 const double[:, ::1] pr, const double[:, ::1] gt,
                 const int[::1] pred_ls, const int[::1] gt_ls,
                 const unsigned char[:, ::1] subset,
                 double iou_thr, unsigned char[::1] gt_matched,
                 signed char[::1] outcome, long long[::1] matched_gt):
    cdef Py_ssize_t m = gt.shape[0], g2, best_g
    cdef double v, best_v
    cdef bint any_iou
    if own_gi >= 0 and not gt_matched[own_gi] \
            and _iou(pr, pi, gt, own_gi) >= iou_thr \
            and subset[pred_ls[pi], gt_ls[own_gi]]:
        outcome[pi] = _TP
        matched_gt[pi] = own_gi
        gt_matched[own_gi] = 1
        return
    best_g = -1
    best_v = -1.0
    any_iou = False
    for g2 in range(m):
        v = _iou(pr, pi, gt, g2)
        if v >= iou_thr:
            any_iou = True
            if not gt_matched[g2] and subset[pred_ls[pi], gt_ls[g2]] and v > best_v:
                best_g = g2
                best_v = v
    if best_g >= 0:
        outcome[pi] = _TP
        matched_gt[pi] = best_g
        gt_matched[best_g] = 1
    elif any_iou:
        outcome[pi] = _FP_LABEL_MISMATCH
    else:
        outcome[pi] = _FP_LOW_IOU


cdef void _sort_by_score_desc(long long[::1] idx, const double[::1] sc, Py_ssize_t k):
    # insertion sort; stable, so score ties keep ascending-index order
    cdef Py_ssize_t i, j
    cdef long long tmp
    for i in range(1, k):
        tmp = idx[i]
        j = i - 1
        while j >= 0 and sc[idx[j]] < sc[tmp]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = tmp


def dba_classify(pred_boxes, scores, pred_ls_in, group_id_in,
                 gt_boxes, gt_ls_in, subset_in, disjoint_in,
                 double iou_thr, double score_thr, gt_matched_in):
    """Retention window, group disjointness penalty, and TP/FP matching.

    Same contract as the pure-Python backend; ``gt_matched_in`` is updated
    in place.
    """
    cdef double[:, ::1] pr = np.ascontiguousarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef int[::1] pred_ls = np.ascontiguousarray(pred_ls_in, dtype=np.int32)
    cdef int[::1] gt_ls = np.ascontiguousarray(gt_ls_in, dtype=np.int32)
    cdef long long[::1] group_id = np.ascontiguousarray(group_id_in, dtype=np.int64)
    cdef unsigned char[:, ::1] subset = np.ascontiguousarray(subset_in, dtype=np.uint8)
    cdef unsigned char[:, ::1] disjoint = np.ascontiguousarray(disjoint_in, dtype=np.uint8)
    cdef unsigned char[::1] gt_matched = gt_matched_in
    cdef Py_ssize_t n = pr.shape[0], m = gt.shape[0]
    outcome_arr = np.zeros(n, dtype=np.int8)
    matched_arr = np.full(n, -1, dtype=np.int64)
    cdef signed char[::1] outcome = outcome_arr
    cdef long long[::1] matched_gt = matched_arr
    if n == 0 or m == 0:
        return outcome_arr, matched_arr
    members_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] members = members_arr
    cdef Py_ssize_t gi, pi, i, j, n_members, n_retained
    cdef double t, mx
    cdef bint conflict
    for gi in range(m):
        n_members = 0
        for pi in range(n):
            if group_id[pi] == gi:
                members[n_members] = pi
                n_members += 1
        if n_members == 0:
            continue
        mx = sc[members[0]]
        for i in range(1, n_members):
            if sc[members[i]] > mx:
                mx = sc[members[i]]
        t = mx - score_thr
        # compact retained members in place (ascending index preserved)
        n_retained = 0
        for i in range(n_members):
            if sc[members[i]] >= t:
                members[n_retained] = members[i]
                n_retained += 1
        conflict = False
        for i in range(n_retained):
            for j in range(i + 1, n_retained):
                if disjoint[pred_ls[members[i]], pred_ls[members[j]]]:
                    conflict = True
                    break
            if conflict:
                break
        if conflict:
            for i in range(n_retained):
                outcome[members[i]] = _FP_DISJOINT
            continue
        _sort_by_score_desc(members, sc, n_retained)
        for i in range(n_retained):
            _claim(members[i], gi, pr, gt, pred_ls, gt_ls, subset,
                   iou_thr, gt_matched, outcome, matched_gt)
    return outcome_arr, matched_arr


def match_greedy(pred_boxes, scores, pred_ls_in, select_in,
                 gt_boxes, gt_ls_in, subset_in, double iou_thr, gt_matched_in):
    """Greedy descending-score TP/FP matching of selected predictions."""
    cdef double[:, ::1] pr = np.ascontiguousarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef int[::1] pred_ls = np.ascontiguousarray(pred_ls_in, dtype=np.int32)
    cdef int[::1] gt_ls = np.ascontiguousarray(gt_ls_in, dtype=np.int32)
    cdef unsigned char[::1] select = np.ascontiguousarray(select_in, dtype=np.uint8)
    cdef unsigned char[:, ::1] subset = np.ascontiguousarray(subset_in, dtype=np.uint8)
    cdef unsigned char[::1] gt_matched = gt_matched_in
    cdef Py_ssize_t n = pr.shape[0], m = gt.shape[0]
    outcome_arr = np.zeros(n, dtype=np.int8)
    matched_arr = np.full(n, -1, dtype=np.int64)
    cdef signed char[::1] outcome = outcome_arr
    cdef long long[::1] matched_gt = matched_arr
    sel_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] sel = sel_arr
    cdef Py_ssize_t i, n_sel = 0
    for i in range(n):
        if select[i]:
            sel[n_sel] = i
            n_sel += 1
    if n_sel == 0:
        return outcome_arr, matched_arr
    if m == 0:
        for i in range(n_sel):
            outcome[sel[i]] = _FP_LOW_IOU
        return outcome_arr, matched_arr
    _sort_by_score_desc(sel, sc, n_sel)
    for i in range(n_sel):
        _claim(sel[i], -1, pr, gt, pred_ls, gt_ls, subset,
               iou_thr, gt_matched, outcome, matched_gt)
    return outcome_arr, matched_arr


def nms_keep(boxes, scores, double nms_iou):
    """Class-agnostic greedy NMS keep mask (suppression strictly above)."""
    cdef double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = bx.shape[0]
    keep_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = keep_arr
    if n == 0:
        return keep_arr
    order_arr = np.arange(n, dtype=np.int64)
    cdef long long[::1] order = order_arr
    _sort_by_score_desc(order, sc, n)
    cdef Py_ssize_t oi, oj, i, j
    for oi in range(n):
        i = order[oi]
        if not keep[i]:
            continue
        for oj in range(oi + 1, n):
            j = order[oj]
            if keep[j] and _iou(bx, i, bx, j) > nms_iou:
                keep[j] = 0
    return keep_arr
