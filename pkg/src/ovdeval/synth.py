"""Seeded synthetic scenarios with controlled pathologies, plus a
brute-force metrics oracle.

The generator lays ground-truth boxes out on a disjoint grid (one cell per
box, so clusters never interact across boxes) and plants one pathology per
ground-truth record according to the configured mix:

* ``duplicate_boxes`` - stacked near-tied copies of a correct prediction;
* ``disjoint_states_near_tie`` - overlapping predictions whose prompts
  conflict in state, all within the retention window;
* ``inflated_max_logit`` - a background box whose single hot token passes
  the max-logit threshold but not the normalized log-sum-exp score;
* ``suppressed_correct_under_wrong`` - a wrong-label box scored just above
  a correct one on the same object, the case plain NMS cannot recover.

A sidecar truth list tags every planted instance so tests can assert the
classification outcome. The oracle re-implements scoring, grouping,
aggregation, matching, and AP from scratch (plain Python, no shared code
with the pipeline modules) and is used only for equivalence testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SizeLimitExceeded
from .geometry import Box
from .ingest import (
    GroundTruthRecord,
    PredictionRecord,
    PromptEntry,
    TokenEntry,
    TokenMap,
    write_ground_truth,
    write_predictions,
    write_prompt_catalog,
    write_token_maps,
)
from .taxonomy import LabelCategory, LabelSet, default_registry

CLEAN = "clean"
DUPLICATE = "duplicate_boxes"
DISJOINT = "disjoint_states_near_tie"
INFLATED = "inflated_max_logit"
SUPPRESSED = "suppressed_correct_under_wrong"

_PATHOLOGIES = (DUPLICATE, DISJOINT, INFLATED, SUPPRESSED)


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario shape and pathology mix; fractions must sum to at most 1."""

    n_images: int = 10
    n_gt_per_image: int = 4
    frac_duplicate: float = 0.0
    frac_disjoint: float = 0.0
    frac_inflated: float = 0.0
    frac_suppressed: float = 0.0
    seed: int = 0

    def __post_init__(self):
        fracs = self.fractions()
        for name, f in fracs.items():
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"{name} fraction {f} outside [0, 1]")
        if sum(fracs.values()) > 1.0 + 1e-12:
            raise ValueError("pathology fractions sum above 1")

    def fractions(self) -> dict[str, float]:
        return {
            DUPLICATE: self.frac_duplicate,
            DISJOINT: self.frac_disjoint,
            INFLATED: self.frac_inflated,
            SUPPRESSED: self.frac_suppressed,
        }


@dataclass(frozen=True)
class PathologyTag:
    """Sidecar truth for one planted instance."""

    kind: str
    image_id: str
    gt_index: int
    pred_indices: tuple[int, ...]


@dataclass
class Scenario:
    gts: list[GroundTruthRecord]
    preds: list[PredictionRecord]
    prompts: list[PromptEntry]
    token_maps: dict[str, TokenMap]
    truth: list[PathologyTag] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Emit the scenario in the ingest file formats plus the sidecar."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "gt": out / "gt.jsonl",
            "predictions": out / "predictions.jsonl",
            "prompts": out / "prompts.jsonl",
            "token_maps": out / "token_maps.jsonl",
            "truth": out / "truth.jsonl",
        }
        with open(paths["gt"], "w", encoding="utf-8") as fh:
            write_ground_truth(self.gts, fh)
        with open(paths["predictions"], "w", encoding="utf-8") as fh:
            write_predictions(self.preds, fh)
        with open(paths["prompts"], "w", encoding="utf-8") as fh:
            write_prompt_catalog(self.prompts, fh)
        with open(paths["token_maps"], "w", encoding="utf-8") as fh:
            write_token_maps(self.token_maps.values(), fh)
        import json

        with open(paths["truth"], "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"schema_version": 1, "kind": "pathology_truth"}) + "\n")
            for tag in self.truth:
                fh.write(
                    json.dumps(
                        {
                            "kind": tag.kind,
                            "image_id": tag.image_id,
                            "gt_index": tag.gt_index,
                            "pred_indices": list(tag.pred_indices),
                        }
                    )
                    + "\n"
                )
        return paths


# Prompt combinations used by the generator. Clean and duplicate records
# draw (gt_combo, prompt_combo) pairs from the first pool; the remaining
# pathologies use fixed casts chosen so the label relations they need
# (subset, state conflicts) hold by construction.
_CLEAN_PAIRS = (
    (("alone", "walking"), ("alone", "walking")),
    (("group", "standing"), ("group", "standing")),
    (("couple", "walking"), ("couple", "walking")),
    (("alone", "standing"), ("alone", "standing")),
    (("group", "sitting", "dining"), ("group", "sitting", "dining")),
    (("alone", "walking", "kid"), ("alone", "walking", "kid")),
)
_DISJOINT_GT = ("alone", "sitting")
_DISJOINT_PROMPTS = (("alone", "sitting"), ("alone", "walking"), ("alone", "running"))
_SUPPRESSED_GT = ("alone", "sitting", "working_with_laptop")
_SUPPRESSED_CORRECT = ("alone", "sitting")
_SUPPRESSED_WRONG = ("alone", "sitting", "dining")
_INFLATED_PROMPT = ("couple", "walking", "talking")

_ALL_COMBOS = tuple(
    sorted(
        {pair[1] for pair in _CLEAN_PAIRS}
        | {pair[0] for pair in _CLEAN_PAIRS}
        | set(_DISJOINT_PROMPTS)
        | {_DISJOINT_GT, _SUPPRESSED_GT, _SUPPRESSED_CORRECT, _SUPPRESSED_WRONG, _INFLATED_PROMPT}
    )
)

_CELL = 220.0
_BOX = 120.0
_GRID_COLS = 16


def _combo_label_set(ids: tuple[str, ...]) -> LabelSet:
    return LabelSet.from_ids(ids, default_registry())


def _prompt_id(ids: tuple[str, ...], variant: int) -> str:
    return "+".join(sorted(ids)) + f"#{variant}"


def _build_catalog() -> tuple[list[PromptEntry], dict[str, TokenMap]]:
    """Two synonym prompts per combination, with whitespace token maps."""
    fillers = (("a", "photo", "of"), ("one", "shot", "showing"))
    prompts: list[PromptEntry] = []
    token_maps: dict[str, TokenMap] = {}
    registry = default_registry()
    for ids in _ALL_COMBOS:
        combo = _combo_label_set(ids)
        group = "+".join(sorted(ids))
        for variant in (0, 1):
            words = list(fillers[variant])
            entries = [TokenEntry(i, w) for i, w in enumerate(words)]
            for label_id in sorted(ids):
                entries.append(
                    TokenEntry(len(entries), label_id, registry.get(label_id).category)
                )
            text = " ".join(e.text for e in entries)
            pid = _prompt_id(ids, variant)
            prompts.append(
                PromptEntry(prompt_id=pid, text=text, label_set=combo, synonym_group=group)
            )
            token_maps[pid] = TokenMap(prompt_id=pid, entries=tuple(entries))
    return prompts, token_maps


def _cell_origin(cell: int) -> tuple[float, float]:
    return (cell % _GRID_COLS) * _CELL, (cell // _GRID_COLS) * _CELL


def _gt_box(cell: int) -> Box:
    x0, y0 = _cell_origin(cell)
    return Box(x0 + 40.0, y0 + 40.0, x0 + 40.0 + _BOX, y0 + 40.0 + _BOX)


def _jitter_box(box: Box, rng: np.random.Generator, amount: float) -> Box:
    dx = round(float(rng.uniform(-amount, amount)), 1)
    dy = round(float(rng.uniform(-amount, amount)), 1)
    return Box(box.x1 + dx, box.y1 + dy, box.x2 + dx, box.y2 + dy)


def _score(rng: np.random.Generator) -> float:
    # coarse grid keeps classification margins far above float noise
    return int(rng.integers(40, 90)) / 100.0


def _logits(
    rng: np.random.Generator,
    token_map: TokenMap,
    relevant_value: float,
    hot_first: float | None = None,
) -> tuple[float, ...]:
    """Filler tokens get low noise; relevant tokens carry the target score.

    With ``hot_first`` set, only the first relevant token is hot and the
    rest stay low, producing a high max-logit but a low mean score.
    """
    out = []
    seen_relevant = 0
    for entry in token_map.entries:
        if entry.category is None:
            out.append(int(rng.integers(0, 16)) / 100.0)
        elif hot_first is not None:
            out.append(hot_first if seen_relevant == 0 else 0.05)
            seen_relevant += 1
        else:
            out.append(relevant_value)
    return tuple(out)


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Deterministic scenario for the given seed; pathologies are tagged."""
    rng = np.random.default_rng(cfg.seed)
    prompts, token_maps = _build_catalog()
    kinds = [CLEAN] + list(_PATHOLOGIES)
    fracs = cfg.fractions()
    probs = [max(0.0, 1.0 - sum(fracs.values()))] + [fracs[k] for k in _PATHOLOGIES]

    gts: list[GroundTruthRecord] = []
    preds: list[PredictionRecord] = []
    truth: list[PathologyTag] = []

    def add_pred(image_id: str, ids: tuple[str, ...], box: Box, value: float,
                 hot_first: float | None = None) -> int:
        variant = int(rng.integers(0, 2))
        pid = _prompt_id(ids, variant)
        preds.append(
            PredictionRecord(
                image_id=image_id,
                prompt_id=pid,
                box=box,
                token_logits=_logits(rng, token_maps[pid], value, hot_first),
            )
        )
        return len(preds) - 1

    for img in range(cfg.n_images):
        image_id = f"img{img:05d}"
        background_cell = cfg.n_gt_per_image  # cells beyond the GT cells stay empty
        for gi in range(cfg.n_gt_per_image):
            kind = kinds[int(rng.choice(len(kinds), p=probs))]
            box = _gt_box(gi)
            if kind == DISJOINT:
                gt_ids: tuple[str, ...] = _DISJOINT_GT
            elif kind == SUPPRESSED:
                gt_ids = _SUPPRESSED_GT
            else:
                gt_ids, prompt_ids = _CLEAN_PAIRS[int(rng.integers(0, len(_CLEAN_PAIRS)))]
            gts.append(
                GroundTruthRecord(
                    image_id=image_id,
                    box=box,
                    labels=_combo_label_set(gt_ids),
                    raw_label_ids=tuple(sorted(gt_ids)),
                )
            )
            s = _score(rng)
            if kind == CLEAN:
                idx = add_pred(image_id, prompt_ids, _jitter_box(box, rng, 3.0), s)
                truth.append(PathologyTag(CLEAN, image_id, gi, (idx,)))
            elif kind == DUPLICATE:
                base = _jitter_box(box, rng, 2.0)
                first = add_pred(image_id, prompt_ids, base, s)
                indices = [first]
                for d in range(1 + int(rng.integers(0, 2))):
                    indices.append(
                        add_pred(
                            image_id, prompt_ids,
                            _jitter_box(base, rng, 1.5),
                            round(s - 0.01 * (d + 1), 2),
                        )
                    )
                truth.append(PathologyTag(DUPLICATE, image_id, gi, tuple(indices)))
            elif kind == DISJOINT:
                indices = []
                for k, p_ids in enumerate(_DISJOINT_PROMPTS):
                    indices.append(
                        add_pred(
                            image_id, p_ids,
                            _jitter_box(box, rng, 1.5),
                            round(s - 0.01 * k, 2),
                        )
                    )
                truth.append(PathologyTag(DISJOINT, image_id, gi, tuple(indices)))
            elif kind == SUPPRESSED:
                wrong = add_pred(
                    image_id, _SUPPRESSED_WRONG, _jitter_box(box, rng, 1.0),
                    round(s + 0.01, 2),
                )
                correct = add_pred(
                    image_id, _SUPPRESSED_CORRECT, _jitter_box(box, rng, 1.0), s
                )
                truth.append(PathologyTag(SUPPRESSED, image_id, gi, (wrong, correct)))
            else:  # INFLATED: the GT stays undetected; a hot-token box lands elsewhere
                hot = 0.5 + 0.05 * int(rng.integers(0, 3))
                idx = add_pred(
                    image_id, _INFLATED_PROMPT, _gt_box(background_cell), s,
                    hot_first=hot,
                )
                background_cell += 1
                truth.append(PathologyTag(INFLATED, image_id, gi, (idx,)))
    return Scenario(gts=gts, preds=preds, prompts=prompts, token_maps=token_maps, truth=truth)


# ---------------------------------------------------------------------------
# Brute-force oracle (independent of the pipeline modules)
# ---------------------------------------------------------------------------

ORACLE_SIZE_LIMIT = 10_000


@dataclass
class OracleResult:
    """Classification sets and metrics from the reference enumeration."""

    tp: set  # (image_id, pred_index, gt_index)
    fp: set  # (image_id, pred_index, reason)
    fn: set  # (image_id, gt_index)
    ap: float | None
    f1: float

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.tp), len(self.fp), len(self.fn)


def _o_iou(a: Box, b: Box) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    ua = (a.x2 - a.x1) * (a.y2 - a.y1)
    ub = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (ua + ub - inter)


def _o_tuple(ls: LabelSet):
    return (
        ls.condition.id if ls.condition else None,
        frozenset(l.id for l in ls.states),
        frozenset(l.id for l in ls.activities),
        frozenset(l.id for l in ls.others),
    )


def _o_subset(a, b) -> bool:
    if a[0] is not None and a[0] != b[0]:
        return False
    return a[1] <= b[1] and a[2] <= b[2] and a[3] <= b[3]


def _o_disjoint(a, b) -> bool:
    if a[0] is not None and b[0] is not None and a[0] != b[0]:
        return True
    return bool(a[1] and b[1] and not (a[1] & b[1]))


def _o_score(pred: PredictionRecord, token_map: TokenMap, scoring: str) -> float:
    sel = [
        pred.token_logits[e.index]
        for e in token_map.entries
        if e.category is not None
    ]
    if scoring == "maxlogit":
        return max(sel)
    if scoring == "native":
        return float(pred.native_score)
    # max-shifted form, so constant-logit fixtures score exactly
    m = max(sel)
    return m + math.log(sum(math.exp(v - m) for v in sel) / len(sel))


def oracle_metrics(
    gts: Sequence[GroundTruthRecord],
    preds: Sequence[PredictionRecord],
    prompts: Sequence[PromptEntry],
    token_maps: dict[str, TokenMap],
    conf_thr: float = 0.3,
    group_iou: float = 0.85,
    iou_thr: float = 0.5,
    score_thr: float = 0.0,
    nms_iou: float = 0.5,
    scoring: str = "nlse",
    method: str = "dba",
) -> OracleResult:
    """Exhaustive re-derivation of the evaluation for testing purposes."""
    if len(preds) > ORACLE_SIZE_LIMIT:
        raise SizeLimitExceeded(f"{len(preds)} boxes exceeds the oracle limit")
    prompt_labels = {e.prompt_id: _o_tuple(e.label_set) for e in prompts}

    # score + threshold filter, keeping original input indices
    scored = []
    for idx, p in enumerate(preds):
        s = _o_score(p, token_maps[p.prompt_id], scoring)
        if s >= conf_thr:
            scored.append((idx, p, s))

    # bucket by image in first-appearance order (ground truth first)
    image_order: list[str] = []
    seen = set()
    for g in gts:
        if g.image_id not in seen:
            seen.add(g.image_id)
            image_order.append(g.image_id)
    for _, p, _ in scored:
        if p.image_id not in seen:
            seen.add(p.image_id)
            image_order.append(p.image_id)
    image_seq = {image_id: k for k, image_id in enumerate(image_order)}

    gt_by_image: dict[str, list[tuple[int, GroundTruthRecord]]] = {i: [] for i in image_order}
    for g in gts:
        gt_by_image[g.image_id].append((len(gt_by_image[g.image_id]), g))
    preds_by_image: dict[str, list[tuple[int, PredictionRecord, float]]] = {
        i: [] for i in image_order
    }
    for idx, p, s in scored:
        preds_by_image[p.image_id].append((idx, p, s))

    tp_set, fp_set, fn_set = set(), set(), set()
    entries = []  # (score, image_seq, pred_index, is_tp)

    for image_id in image_order:
        img_gts = gt_by_image[image_id]
        img_preds = preds_by_image[image_id]
        labels = [prompt_labels[p.prompt_id] for _, p, _ in img_preds]
        matched: set[int] = set()

        def try_match(k: int, own: int | None) -> tuple[bool, int | None, str]:
            idx, p, s = img_preds[k]
            if own is not None and own not in matched:
                if _o_iou(p.box, img_gts[own][1].box) >= iou_thr and _o_subset(
                    labels[k], _o_tuple(img_gts[own][1].labels)
                ):
                    return True, own, ""
            best, best_v, any_iou = None, -1.0, False
            for gi, (_, g) in enumerate(img_gts):
                v = _o_iou(p.box, g.box)
                if v >= iou_thr:
                    any_iou = True
                    if gi not in matched and _o_subset(
                        labels[k], _o_tuple(g.labels)
                    ) and v > best_v:
                        best, best_v = gi, v
            if best is not None:
                return True, best, ""
            return False, None, "label_mismatch" if any_iou else "low_iou"

        def record(k: int, ok: bool, gi: int | None, reason: str):
            idx, p, s = img_preds[k]
            if ok:
                matched.add(gi)
                tp_set.add((image_id, idx, gi))
                entries.append((s, image_seq[image_id], idx, 1))
            else:
                fp_set.add((image_id, idx, reason))
                entries.append((s, image_seq[image_id], idx, 0))

        if method == "plain-ap":
            order = sorted(range(len(img_preds)), key=lambda k: (-img_preds[k][2], img_preds[k][0]))
            for k in order:
                record(k, *try_match(k, None))
        elif method == "nms-ap":
            order = sorted(range(len(img_preds)), key=lambda k: (-img_preds[k][2], img_preds[k][0]))
            suppressed: set[int] = set()
            for a_pos, k in enumerate(order):
                if k in suppressed:
                    continue
                for k2 in order[a_pos + 1 :]:
                    if k2 not in suppressed and _o_iou(
                        img_preds[k][1].box, img_preds[k2][1].box
                    ) > nms_iou:
                        suppressed.add(k2)
            for k in order:
                if k not in suppressed:
                    record(k, *try_match(k, None))
        elif method == "dba":
            group_of: dict[int, int] = {}
            unassigned = set(range(len(img_preds)))
            for gi, (_, g) in enumerate(img_gts):
                best, best_key = None, None
                for k in sorted(unassigned):
                    v = _o_iou(img_preds[k][1].box, g.box)
                    if v <= 0.0:
                        continue
                    key = (v, img_preds[k][2], -k)  # maximize iou, then score, then low index
                    if best_key is None or key > best_key:
                        best, best_key = k, key
                if best is None:
                    continue
                unassigned.discard(best)
                group_of[best] = gi
                anchor_box = img_preds[best][1].box
                for k in sorted(unassigned):
                    if _o_iou(img_preds[k][1].box, anchor_box) > group_iou:
                        unassigned.discard(k)
                        group_of[k] = gi
            for gi in range(len(img_gts)):
                members = [k for k in range(len(img_preds)) if group_of.get(k) == gi]
                if not members:
                    continue
                t = max(img_preds[k][2] for k in members) - score_thr
                retained = [k for k in members if img_preds[k][2] >= t]
                conflict = any(
                    _o_disjoint(labels[a], labels[b])
                    for i, a in enumerate(retained)
                    for b in retained[i + 1 :]
                )
                if conflict:
                    for k in retained:
                        idx = img_preds[k][0]
                        fp_set.add((image_id, idx, "disjoint"))
                        entries.append((img_preds[k][2], image_seq[image_id], idx, 0))
                    continue
                for k in sorted(retained, key=lambda k: (-img_preds[k][2], img_preds[k][0])):
                    record(k, *try_match(k, gi))
            leftovers = [k for k in range(len(img_preds)) if k not in group_of]
            for k in sorted(leftovers, key=lambda k: (-img_preds[k][2], img_preds[k][0])):
                record(k, *try_match(k, None))
        else:
            raise ValueError(f"unknown method {method!r}")

        for gi, (_, g) in enumerate(img_gts):
            if gi not in matched:
                fn_set.add((image_id, gi))

    # all-threshold PR sweep with suffix-max interpolation
    n_pos = len(tp_set) + len(fn_set)
    if n_pos == 0:
        ap = None
    else:
        entries.sort(key=lambda t: (-t[0], t[1], t[2]))
        precisions, recalls = [], []
        tp_cum = 0
        for k, (_, _, _, is_tp) in enumerate(entries, start=1):
            tp_cum += is_tp
            precisions.append(tp_cum / k)
            recalls.append(tp_cum / n_pos)
        ap = 0.0
        prev_r = 0.0
        for k in range(len(entries)):
            if recalls[k] > prev_r:
                ap += (recalls[k] - prev_r) * max(precisions[k:])
                prev_r = recalls[k]
    n_tp, n_fp, n_fn = len(tp_set), len(fp_set), len(fn_set)
    denom = 2 * n_tp + n_fp + n_fn
    return OracleResult(
        tp=tp_set,
        fp=fp_set,
        fn=fn_set,
        ap=ap,
        f1=2 * n_tp / denom if denom else 0.0,
    )
