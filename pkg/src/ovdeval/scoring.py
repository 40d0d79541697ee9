"""Per-prediction confidence: normalized log-sum-exp or max-logit.

N-LSE of a logit vector z of length N is log((1/N) * sum(exp(z_t))),
computed with max-shift stabilization. It is a quasi-arithmetic mean: the
score always lies between the smallest and largest logit, so a single
inflated token cannot carry a box the way it does under max-logit.

Uncategorized (stop-word / function) tokens are excluded before scoring by
default; pass ``relevant_only=False`` to aggregate over the full vector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backend
from .errors import EmptySelection, EmptyVector, MissingNativeScore
from .ingest import PredictionRecord, PromptEntry, TokenMap
from .taxonomy import LabelSet


class ScoringMethod(enum.Enum):
    NLSE = "nlse"
    MAX_LOGIT = "maxlogit"
    NATIVE = "native"


@dataclass(frozen=True)
class ScoredPrediction:
    """A prediction with its confidence under one scoring method.

    ``index`` is the position in the original prediction list; it seeds the
    deterministic tie-breaks downstream. ``label_set`` is the prompt's label
    combination, resolved from the catalog (see ``attach_label_sets``).
    """

    prediction: PredictionRecord
    score: float
    method: ScoringMethod
    index: int = -1
    label_set: LabelSet | None = None


def select_relevant(logits: Sequence[float], token_map: TokenMap) -> np.ndarray:
    """Keep the logits whose token-map entries carry a category.

    Order is preserved. Raises ``EmptySelection`` when no token of the
    prompt is categorized.
    """
    if len(logits) != len(token_map):
        raise ValueError(
            f"{len(logits)} logits against a {len(token_map)}-token map "
            f"for prompt {token_map.prompt_id!r}"
        )
    idx = token_map.relevant_indices()
    if not idx:
        raise EmptySelection(f"prompt {token_map.prompt_id!r} has no categorized token")
    arr = np.asarray(logits, dtype=np.float64)
    return arr[list(idx)]


def n_lse(z: Sequence[float]) -> float:
    """Normalized log-sum-exp: log of the mean of exp(z), max-shifted."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.size == 0:
        raise EmptyVector("n_lse of an empty vector")
    m = float(arr.max())
    return m + math.log(float(np.exp(arr - m).sum()) / arr.size)


def max_logit(z: Sequence[float]) -> float:
    arr = np.asarray(z, dtype=np.float64)
    if arr.size == 0:
        raise EmptyVector("max_logit of an empty vector")
    return float(arr.max())


def score_predictions(
    preds: Sequence[PredictionRecord],
    token_maps: dict[str, TokenMap],
    method: ScoringMethod = ScoringMethod.NLSE,
    relevant_only: bool = True,
) -> list[ScoredPrediction]:
    """Score a batch of predictions; output order follows input order.

    The per-token aggregation runs through the segment kernels of the
    active backend, one segment per prediction.
    """
    if not preds:
        return []
    if method is ScoringMethod.NATIVE:
        out = []
        for i, p in enumerate(preds):
            if p.native_score is None:
                raise MissingNativeScore(
                    f"prediction {i} for prompt {p.prompt_id!r} has no native score"
                )
            out.append(ScoredPrediction(p, float(p.native_score), method, i))
        return out

    values: list[float] = []
    offsets = [0]
    for i, p in enumerate(preds):
        tm = token_maps.get(p.prompt_id)
        if tm is None:
            raise KeyError(f"no token map for prompt {p.prompt_id!r}")
        if relevant_only:
            selected = select_relevant(p.token_logits, tm)
            values.extend(selected.tolist())
        else:
            if not p.token_logits:
                raise EmptyVector(f"prediction {i} has no logits")
            values.extend(p.token_logits)
        offsets.append(len(values))

    values_arr = np.asarray(values, dtype=np.float64)
    offsets_arr = np.asarray(offsets, dtype=np.int64)
    if method is ScoringMethod.NLSE:
        scores = backend.segment_nlse(values_arr, offsets_arr)
    else:
        scores = backend.segment_max(values_arr, offsets_arr)
    return [
        ScoredPrediction(p, float(scores[i]), method, i) for i, p in enumerate(preds)
    ]


def filter_by_threshold(
    preds: Sequence[ScoredPrediction], thr: float
) -> list[ScoredPrediction]:
    """Retain predictions with score >= thr (boundary inclusive), stable order."""
    return [p for p in preds if p.score >= thr]


def attach_label_sets(
    preds: Sequence[ScoredPrediction],
    prompts: dict[str, PromptEntry],
) -> list[ScoredPrediction]:
    """Resolve each prediction's prompt id to its label combination."""
    out = []
    for p in preds:
        entry = prompts.get(p.prediction.prompt_id)
        if entry is None:
            raise KeyError(f"prompt {p.prediction.prompt_id!r} not in catalog")
        out.append(
            ScoredPrediction(p.prediction, p.score, p.method, p.index, entry.label_set)
        )
    return out
