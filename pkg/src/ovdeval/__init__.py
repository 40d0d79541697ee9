"""Evaluation toolkit for open-vocabulary detection on multi-label benchmarks.

Scores per-token logits with normalized log-sum-exp (or the max-logit
baseline), clusters overlapping predictions around per-ground-truth
anchors, applies dynamic box aggregation with a disjointness penalty, and
reports AP/F1 across label levels and social-condition slices.
"""

__version__ = "0.1.0"

from .geometry import Box, area, iou
from .taxonomy import (
    Label,
    LabelCategory,
    LabelRegistry,
    LabelSet,
    Level,
    RuleViolation,
    default_registry,
    disjoint_in_condition_or_state,
    is_subset,
    level_memberships,
    level_of,
    validate_annotation,
    validate_labels,
)

__all__ = [
    "Box",
    "Label",
    "LabelCategory",
    "LabelRegistry",
    "LabelSet",
    "Level",
    "RuleViolation",
    "area",
    "default_registry",
    "disjoint_in_condition_or_state",
    "iou",
    "is_subset",
    "level_memberships",
    "level_of",
    "validate_annotation",
    "validate_labels",
]
