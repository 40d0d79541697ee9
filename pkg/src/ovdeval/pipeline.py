"""End-to-end evaluation runs: scoring, grouping, classification, slicing.

An evaluation pass pools the threshold-filtered predictions of all prompts
per image, classifies them (dynamic box aggregation, plain matching, or
class-agnostic NMS), and reduces per-image ledgers into slice-level AP/F1
rows. Images are independent, so the per-image work can run in a process
pool; the reduction is ordered by image input order, making reports
byte-identical for any worker count.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, replace
from typing import Sequence

from .dba import DbaParams, EvalLedger, dba
from .grouping import build_groups
from .ingest import (
    GroundTruthRecord,
    PredictionRecord,
    PromptEntry,
    TokenMap,
    parse_ground_truth,
    parse_predictions,
    parse_prompt_catalog,
    parse_token_map,
)
from .metrics import (
    MetricsReport,
    ReportRow,
    average_precision,
    classify_nms,
    classify_plain,
    f1 as f1_of,
    fp_reason_counts,
    integrate,
    precision_recall,
)
from .scoring import (
    ScoredPrediction,
    ScoringMethod,
    attach_label_sets,
    filter_by_threshold,
    score_predictions,
)
from .taxonomy import LabelSet, Level, is_subset, level_memberships

METHODS = ("dba", "nms-ap", "plain-ap")
SLICES = ("global", "cs", "csa", "cso", "alone", "pair", "group")

_CONDITION_SLICES = {"alone": "alone", "pair": "couple", "group": "group"}
_LEVEL_SLICES = {"cs": Level.CS, "csa": Level.CSA, "cso": Level.CSO}


@dataclass(frozen=True)
class RunParams:
    scoring: ScoringMethod = ScoringMethod.NLSE
    conf_thr: float = 0.3
    group_iou: float = 0.85
    iou_thr: float = 0.5
    score_thr: float = 0.0
    nms_iou: float = 0.5
    relevant_only: bool = True
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "scoring": self.scoring.value,
            "conf_thr": self.conf_thr,
            "group_iou": self.group_iou,
            "iou_thr": self.iou_thr,
            "score_thr": self.score_thr,
            "nms_iou": self.nms_iou,
            "relevant_only": self.relevant_only,
        }


@dataclass
class Dataset:
    """Parsed inputs of one evaluation run."""

    gts: list[GroundTruthRecord]
    preds: list[PredictionRecord]
    prompts: dict[str, PromptEntry]
    token_maps: dict[str, TokenMap]

    @classmethod
    def load(
        cls,
        gt_source,
        pred_source,
        prompt_source,
        token_map_source,
        strict_gt: bool = True,
        strict_pred: bool = False,
        registry=None,
    ) -> "Dataset":
        token_maps = parse_token_map(token_map_source)
        prompt_entries = parse_prompt_catalog(prompt_source, registry)
        gt_result = parse_ground_truth(gt_source, registry, strict=strict_gt)
        pred_result = parse_predictions(pred_source, token_maps, strict=strict_pred)
        return cls(
            gts=gt_result.records,
            preds=pred_result.records,
            prompts={e.prompt_id: e for e in prompt_entries},
            token_maps=token_maps,
        )


@dataclass(frozen=True)
class ImageItem:
    """One image's ground truth and filtered predictions, in input order."""

    seq: int
    image_id: str
    gts: tuple[GroundTruthRecord, ...]
    preds: tuple[ScoredPrediction, ...]


def score_and_filter(dataset: Dataset, params: RunParams) -> list[ScoredPrediction]:
    scored = score_predictions(
        dataset.preds, dataset.token_maps, params.scoring, params.relevant_only
    )
    scored = attach_label_sets(scored, dataset.prompts)
    return filter_by_threshold(scored, params.conf_thr)


def group_by_image(
    gts: Sequence[GroundTruthRecord], preds: Sequence[ScoredPrediction]
) -> list[ImageItem]:
    """Bucket records per image; image order is first appearance (GT first)."""
    order: dict[str, int] = {}
    for g in gts:
        order.setdefault(g.image_id, len(order))
    for p in preds:
        order.setdefault(p.prediction.image_id, len(order))
    gt_buckets: dict[str, list[GroundTruthRecord]] = {i: [] for i in order}
    pred_buckets: dict[str, list[ScoredPrediction]] = {i: [] for i in order}
    for g in gts:
        gt_buckets[g.image_id].append(g)
    for p in preds:
        pred_buckets[p.prediction.image_id].append(p)
    return [
        ImageItem(seq, image_id, tuple(gt_buckets[image_id]), tuple(pred_buckets[image_id]))
        for image_id, seq in order.items()
    ]


def evaluate_image(item: ImageItem, params: RunParams, method: str) -> EvalLedger:
    """Classify one image under the given method; FN accounting included."""
    if method == "dba":
        grouping = build_groups(item.gts, item.preds, params.group_iou)
        ledger = dba(
            grouping.groups,
            item.gts,
            DbaParams(iou_thr=params.iou_thr, score_thr=params.score_thr),
            image_seq=item.seq,
        )
        return integrate(
            grouping.non_overlapping, item.gts, ledger, params.iou_thr, item.seq
        )
    if method == "plain-ap":
        return classify_plain(item.preds, item.gts, params.iou_thr, item.seq)
    if method == "nms-ap":
        return classify_nms(item.preds, item.gts, params.nms_iou, params.iou_thr, item.seq)
    raise ValueError(f"unknown method {method!r}")


def merge_ledgers(ledgers: Sequence[EvalLedger]) -> EvalLedger:
    out = EvalLedger()
    for led in ledgers:
        out.tp.extend(led.tp)
        out.fp.extend(led.fp)
        out.fn.extend(led.fn)
    return out


def _image_task(args) -> EvalLedger:
    item, params, method = args
    return evaluate_image(item, params, method)


class _Runner:
    """Maps per-image work, optionally over a process pool.

    Results merge in image input order regardless of worker count, so a
    run's output is independent of parallelism.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = multiprocessing.get_context("fork").Pool(self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def ledger(self, items: Sequence[ImageItem], params: RunParams, method: str) -> EvalLedger:
        tasks = [(item, params, method) for item in items]
        if self._pool is None:
            results = [_image_task(t) for t in tasks]
        else:
            results = self._pool.map(_image_task, tasks, chunksize=max(1, len(tasks) // (4 * self.workers) or 1))
        return merge_ledgers(results)


def slice_membership(ls: LabelSet | None, slice_name: str) -> bool:
    """Whether a label combination contributes to a reporting slice."""
    if slice_name == "global":
        return True
    if ls is None:
        return False
    if slice_name in _LEVEL_SLICES:
        return _LEVEL_SLICES[slice_name] in level_memberships(ls)
    if slice_name in _CONDITION_SLICES:
        return ls.condition is not None and ls.condition.id == _CONDITION_SLICES[slice_name]
    raise ValueError(f"unknown slice {slice_name!r}")


def _slice_items(items: Sequence[ImageItem], slice_name: str) -> list[ImageItem]:
    out = []
    for item in items:
        gts = tuple(g for g in item.gts if slice_membership(g.labels, slice_name))
        preds = tuple(p for p in item.preds if slice_membership(p.label_set, slice_name))
        out.append(ImageItem(item.seq, item.image_id, gts, preds))
    return out


def _synonym_groups(dataset: Dataset) -> dict[str, LabelSet]:
    groups: dict[str, LabelSet] = {}
    for entry in dataset.prompts.values():
        groups.setdefault(entry.synonym_group, entry.label_set)
    return groups


def _map_over_groups(
    runner: _Runner,
    items: Sequence[ImageItem],
    groups: dict[str, LabelSet],
    group_of_prompt: dict[str, str],
    params: RunParams,
    method: str,
) -> float | None:
    """Unweighted mean AP across synonym groups (our mAP concretization).

    Per group, only its own predictions compete and only ground truth
    carrying the group's combination counts; groups without reachable
    ground truth are skipped.
    """
    aps = []
    for group_name in sorted(groups):
        combo = groups[group_name]
        sub_items = []
        for item in items:
            gts = tuple(g for g in item.gts if is_subset(combo, g.labels))
            preds = tuple(
                p for p in item.preds
                if group_of_prompt.get(p.prediction.prompt_id) == group_name
            )
            sub_items.append(ImageItem(item.seq, item.image_id, gts, preds))
        if not any(item.gts for item in sub_items):
            continue
        curve = average_precision(runner.ledger(sub_items, params, method))
        if curve.ap is not None:
            aps.append(curve.ap)
    if not aps:
        return None
    return sum(aps) / len(aps)


def evaluate_slices(
    dataset: Dataset,
    params: RunParams,
    slices: Sequence[str] = ("global",),
    methods: Sequence[str] = ("dba",),
    per_group_map: bool = False,
) -> list[ReportRow]:
    """Full evaluation grid: one row per (method, slice).

    Each slice restricts predictions by their prompt's label combination
    and ground truth by its own labels, then re-runs the matching, so claim
    exclusivity and count reconciliation hold within every slice.
    """
    scored = score_and_filter(dataset, params)
    items = group_by_image(dataset.gts, scored)
    groups = _synonym_groups(dataset) if per_group_map else {}
    group_of_prompt = {
        pid: entry.synonym_group for pid, entry in dataset.prompts.items()
    }
    rows = []
    with _Runner(params.workers) as runner:
        for method in methods:
            for slice_name in slices:
                sliced = _slice_items(items, slice_name)
                n_gt = sum(len(item.gts) for item in sliced)
                has_preds = any(item.preds for item in sliced)
                if n_gt == 0 and not has_preds:
                    rows.append(
                        ReportRow(method, slice_name, None, 0.0, 0.0, 0.0, 0, 0, 0, 0)
                    )
                    continue
                ledger = runner.ledger(sliced, params, method)
                curve = average_precision(ledger)
                precision, recall = precision_recall(ledger)
                map_groups = (
                    _map_over_groups(
                        runner, sliced, groups, group_of_prompt, params, method
                    )
                    if per_group_map
                    else None
                )
                rows.append(
                    ReportRow(
                        method=method,
                        slice_name=slice_name,
                        ap=curve.ap,
                        f1=f1_of(ledger),
                        precision=precision,
                        recall=recall,
                        tp=ledger.tp_count,
                        fp=ledger.fp_count,
                        fn=ledger.fn_count,
                        n_gt=n_gt,
                        map_groups=map_groups,
                        fp_reasons=fp_reason_counts(ledger),
                    )
                )
    return rows


def run_eval(
    dataset: Dataset,
    params: RunParams,
    slices: Sequence[str] = ("global",),
    methods: Sequence[str] = ("dba",),
    per_group_map: bool = False,
    metadata: dict | None = None,
) -> MetricsReport:
    rows = evaluate_slices(dataset, params, slices, methods, per_group_map)
    meta = {"params": params.to_dict(), "slices": list(slices), "methods": list(methods)}
    if metadata:
        meta.update(metadata)
    return MetricsReport(rows=rows, metadata=meta)


@dataclass(frozen=True)
class SweepRow:
    score_thr: float
    precision: float
    recall: float
    f1: float
    ap: float | None
    tp: int
    fp: int
    fn: int


def sweep_score_thr(
    dataset: Dataset,
    grid: Sequence[float],
    params: RunParams | None = None,
) -> tuple[float, list[SweepRow]]:
    """Run the aggregation pipeline per grid value; pick the best global F1.

    Ties go to the smaller threshold. The full table is returned so other
    precision/recall balances remain auditable.
    """
    if not grid:
        raise ValueError("sweep grid is empty")
    params = params or RunParams()
    scored = score_and_filter(dataset, params)
    items = group_by_image(dataset.gts, scored)
    table = []
    with _Runner(params.workers) as runner:
        for thr in grid:
            run = replace(params, score_thr=float(thr))
            ledger = runner.ledger(items, run, "dba")
            precision, recall = precision_recall(ledger)
            table.append(
                SweepRow(
                    score_thr=float(thr),
                    precision=precision,
                    recall=recall,
                    f1=f1_of(ledger),
                    ap=average_precision(ledger).ap,
                    tp=ledger.tp_count,
                    fp=ledger.fp_count,
                    fn=ledger.fn_count,
                )
            )
    best = max(table, key=lambda r: (r.f1, -r.score_thr))
    return best.score_thr, table
