"""Streaming throughput harness for the scoring + grouping + DBA path.

Synthesizes prediction records batch by batch directly at the array level
(no JSON, no per-record objects), pushes them through the active kernel
backend, and reports wall time, throughput, and peak RSS. Memory stays
bounded by the batch size regardless of the total record count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import backend
from .dba import _LabelSetVocab
from .synth import _ALL_COMBOS, _combo_label_set

_TOKENS = 8
_RELEVANT = slice(2, 6)  # 4 categorized tokens per prompt
_CANVAS_CELL = 220.0
_BOX = 120.0


@dataclass
class BenchResult:
    backend: str
    records: int
    images: int
    kept: int
    tp: int
    fp: int
    fn: int
    elapsed_s: float
    throughput_rps: float
    peak_rss_mb: float | None

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "records": self.records,
            "images": self.images,
            "kept": self.kept,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "elapsed_s": round(self.elapsed_s, 3),
            "throughput_rps": round(self.throughput_rps, 1),
            "peak_rss_mb": self.peak_rss_mb,
        }


def peak_rss_mb() -> float | None:
    """High-water-mark RSS of this process, from /proc (Linux only)."""
    try:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) / 1024.0
    except OSError:
        return None
    return None


def _gt_layout(gt_per_image: int) -> np.ndarray:
    boxes = np.empty((gt_per_image, 4), dtype=np.float64)
    for g in range(gt_per_image):
        x0 = (g % 8) * _CANVAS_CELL + 40.0
        y0 = (g // 8) * _CANVAS_CELL + 40.0
        boxes[g] = (x0, y0, x0 + _BOX, y0 + _BOX)
    return boxes


def _synth_batch(
    rng: np.random.Generator,
    n_images: int,
    preds_per_image: int,
    gt_boxes: np.ndarray,
    n_label_sets: int,
):
    """Vectorized batch: boxes, per-token logits, label-set ids."""
    n = n_images * preds_per_image
    g = len(gt_boxes)
    target = rng.integers(0, g, size=n)
    jitter = rng.uniform(-4.0, 4.0, size=(n, 2))
    boxes = gt_boxes[target].copy()
    boxes[:, 0] += jitter[:, 0]
    boxes[:, 2] += jitter[:, 0]
    boxes[:, 1] += jitter[:, 1]
    boxes[:, 3] += jitter[:, 1]
    # ~15% of boxes land in empty cells and never overlap ground truth
    background = rng.random(n) < 0.15
    shift = (8 + rng.integers(0, 8, size=n)) * _CANVAS_CELL
    boxes[background, 0] += shift[background]
    boxes[background, 2] += shift[background]

    logits = rng.uniform(0.0, 0.15, size=(n, _TOKENS))
    strength = rng.uniform(0.2, 0.9, size=n)
    logits[:, _RELEVANT] = strength[:, None]

    label_ids = target % n_label_sets
    off_label = rng.random(n) < 0.2
    label_ids[off_label] = rng.integers(0, n_label_sets, size=int(off_label.sum()))
    return boxes, logits, label_ids.astype(np.int32)


def run_benchmark(
    n_records: int,
    preds_per_image: int = 100,
    gt_per_image: int = 5,
    batch_images: int = 2000,
    conf_thr: float = 0.3,
    group_iou: float = 0.85,
    iou_thr: float = 0.5,
    score_thr: float = 0.05,
    seed: int = 0,
    backend_name: str = "auto",
) -> BenchResult:
    backend.set_backend(backend_name)
    rng = np.random.default_rng(seed)
    combos = [_combo_label_set(ids) for ids in _ALL_COMBOS]
    vocab = _LabelSetVocab(combos, combos)
    subset = vocab.subset
    disjoint = vocab.disjoint
    n_label_sets = len(combos)

    gt_boxes = _gt_layout(gt_per_image)
    gt_ls = (np.arange(gt_per_image) % n_label_sets).astype(np.int32)

    n_images = max(1, n_records // preds_per_image)
    tp = fp = fn = kept_total = 0
    done_images = 0
    start = time.perf_counter()
    while done_images < n_images:
        batch = min(batch_images, n_images - done_images)
        boxes, logits, label_ids = _synth_batch(
            rng, batch, preds_per_image, gt_boxes, n_label_sets
        )
        relevant = np.ascontiguousarray(logits[:, _RELEVANT]).ravel()
        offsets = np.arange(batch * preds_per_image + 1, dtype=np.int64) * 4
        scores = backend.segment_nlse(relevant, offsets)
        keep = scores >= conf_thr
        outcome_counts = np.zeros(5, dtype=np.int64)
        for i in range(batch):
            sl = slice(i * preds_per_image, (i + 1) * preds_per_image)
            k = keep[sl]
            boxes_i = boxes[sl][k]
            scores_i = scores[sl][k]
            ls_i = label_ids[sl][k]
            kept_total += len(scores_i)
            group_id, _ = backend.group_image(gt_boxes, boxes_i, scores_i, group_iou)
            gt_matched = np.zeros(gt_per_image, dtype=np.uint8)
            outcome, _ = backend.dba_classify(
                boxes_i, scores_i, ls_i, group_id, gt_boxes, gt_ls,
                subset, disjoint, iou_thr, score_thr, gt_matched,
            )
            outcome_counts += np.bincount(outcome, minlength=5)
            nonov = (group_id < 0).astype(np.uint8)
            outcome2, _ = backend.match_greedy(
                boxes_i, scores_i, ls_i, nonov, gt_boxes, gt_ls,
                subset, iou_thr, gt_matched,
            )
            outcome_counts += np.bincount(outcome2, minlength=5)
            fn += gt_per_image - int(gt_matched.sum())
        tp += int(outcome_counts[backend.OUTCOME_TP])
        fp += int(
            outcome_counts[backend.OUTCOME_FP_DISJOINT]
            + outcome_counts[backend.OUTCOME_FP_LOW_IOU]
            + outcome_counts[backend.OUTCOME_FP_LABEL_MISMATCH]
        )
        done_images += batch
    elapsed = time.perf_counter() - start
    records = n_images * preds_per_image
    return BenchResult(
        backend=backend.backend_name(),
        records=records,
        images=n_images,
        kept=kept_total,
        tp=tp,
        fp=fp,
        fn=fn,
        elapsed_s=elapsed,
        throughput_rps=records / elapsed if elapsed > 0 else float("inf"),
        peak_rss_mb=peak_rss_mb(),
    )
