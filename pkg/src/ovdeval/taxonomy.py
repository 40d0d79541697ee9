"""Label universe, label-set algebra, and annotation sanity rules.

The registry is loaded from a versioned data file (``data/labels.jsonl``)
rather than hard-coded; a label belongs to exactly one of four categories
(condition, state, activity, other). ``LabelSet`` partitions a multi-label
assignment by category and supports the subset and disjointness tests used
by the box-classification algorithms.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator, Sequence

from .errors import MalformedRecord, MissingCondition, MissingState, UnknownLabel


class LabelCategory(enum.Enum):
    CONDITION = "condition"
    STATE = "state"
    ACTIVITY = "activity"
    OTHER = "other"


@dataclass(frozen=True)
class Label:
    """One registry entry with a stable string id."""

    id: str
    display_name: str
    category: LabelCategory

    def __repr__(self):
        return f"Label({self.id!r})"


class LabelRegistry:
    """Immutable id -> Label mapping loaded from a data file.

    Aliases (e.g. "pair" for the couple condition) resolve to their
    canonical label on lookup.
    """

    def __init__(self, labels: Sequence[Label], aliases: dict[str, str] | None = None):
        self._labels: dict[str, Label] = {}
        for label in labels:
            if label.id in self._labels:
                raise ValueError(f"duplicate label id {label.id!r}")
            self._labels[label.id] = label
        self._aliases = dict(aliases or {})
        for alias, target in self._aliases.items():
            if alias in self._labels:
                raise ValueError(f"alias {alias!r} shadows a label id")
            if target not in self._labels:
                raise ValueError(f"alias {alias!r} points at unknown id {target!r}")

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self) -> Iterator[Label]:
        return iter(self._labels.values())

    def __contains__(self, key: str) -> bool:
        return key in self._labels or key in self._aliases

    def get(self, key: str) -> Label:
        canonical = self._aliases.get(key, key)
        try:
            return self._labels[canonical]
        except KeyError:
            raise UnknownLabel(key) from None

    def counts(self) -> dict[LabelCategory, int]:
        out = {cat: 0 for cat in LabelCategory}
        for label in self._labels.values():
            out[label.category] += 1
        return out

    def by_category(self, category: LabelCategory) -> list[Label]:
        return [l for l in self._labels.values() if l.category == category]

    @classmethod
    def from_stream(cls, lines: Iterable[str]) -> "LabelRegistry":
        labels: list[Label] = []
        aliases: dict[str, str] = {}
        for line_no, raw in enumerate(lines, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from None
            if "schema_version" in rec and "id" not in rec:
                continue  # header line
            try:
                label = Label(
                    id=rec["id"],
                    display_name=rec["display_name"],
                    category=LabelCategory(rec["category"]),
                )
            except (KeyError, ValueError) as exc:
                raise MalformedRecord(line_no, f"bad registry entry: {exc}") from None
            labels.append(label)
            for alias in rec.get("aliases", []):
                aliases[alias] = label.id
        return cls(labels, aliases)


@functools.lru_cache(maxsize=1)
def default_registry() -> LabelRegistry:
    """Registry loaded from the packaged ``data/labels.jsonl``."""
    text = resources.files("ovdeval").joinpath("data/labels.jsonl").read_text("utf-8")
    return LabelRegistry.from_stream(text.splitlines())


class Level(enum.Enum):
    GLOBAL = "global"
    CS = "cs"
    CSA = "csa"
    CSO = "cso"


@dataclass(frozen=True)
class LabelSet:
    """Multi-label assignment partitioned by category.

    Carries at most one condition; each member's category must match its
    field. Instances are immutable and hashable.
    """

    condition: Label | None = None
    states: frozenset[Label] = frozenset()
    activities: frozenset[Label] = frozenset()
    others: frozenset[Label] = frozenset()

    def __post_init__(self):
        if self.condition is not None and self.condition.category is not LabelCategory.CONDITION:
            raise ValueError(f"{self.condition!r} is not a condition label")
        for field_val, cat in (
            (self.states, LabelCategory.STATE),
            (self.activities, LabelCategory.ACTIVITY),
            (self.others, LabelCategory.OTHER),
        ):
            for label in field_val:
                if label.category is not cat:
                    raise ValueError(f"{label!r} is not a {cat.value} label")
        # Normalize to frozenset so callers may pass any iterable.
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "activities", frozenset(self.activities))
        object.__setattr__(self, "others", frozenset(self.others))

    @classmethod
    def from_labels(cls, labels: Iterable[Label]) -> "LabelSet":
        """Partition raw labels by category; rejects multiple conditions."""
        condition = None
        states, activities, others = set(), set(), set()
        for label in labels:
            if label.category is LabelCategory.CONDITION:
                if condition is not None and condition != label:
                    raise ValueError("more than one condition label")
                condition = label
            elif label.category is LabelCategory.STATE:
                states.add(label)
            elif label.category is LabelCategory.ACTIVITY:
                activities.add(label)
            else:
                others.add(label)
        return cls(condition, frozenset(states), frozenset(activities), frozenset(others))

    @classmethod
    def from_ids(cls, ids: Iterable[str], registry: LabelRegistry | None = None) -> "LabelSet":
        registry = registry or default_registry()
        return cls.from_labels(registry.get(i) for i in ids)

    def all_labels(self) -> frozenset[Label]:
        base = self.states | self.activities | self.others
        if self.condition is not None:
            base = base | {self.condition}
        return base

    def ids(self) -> frozenset[str]:
        return frozenset(l.id for l in self.all_labels())

    def sorted_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.ids()))


def is_subset(a: LabelSet, b: LabelSet) -> bool:
    """True iff every label of ``a`` is contained in ``b``.

    A missing condition in ``a`` imposes no constraint; a present one must
    equal ``b``'s condition.
    """
    if a.condition is not None and a.condition != b.condition:
        return False
    return (
        a.states <= b.states
        and a.activities <= b.activities
        and a.others <= b.others
    )


def disjoint_in_condition_or_state(a: LabelSet, b: LabelSet) -> bool:
    """True iff the two sets conflict on condition or on state.

    Conditions conflict when both are present and differ; states conflict
    when both sides have at least one state and the sets do not intersect.
    Empty fields never trigger disjointness.
    """
    if a.condition is not None and b.condition is not None and a.condition != b.condition:
        return True
    if a.states and b.states and not (a.states & b.states):
        return True
    return False


def level_of(ls: LabelSet) -> Level:
    """Classify a condition+state label set into CS, CSA, or CSO.

    Sets carrying both activity and other labels classify as CSA (they
    additionally surface in the CSO slice, see ``level_memberships``).
    GLOBAL is a reporting slice, never returned here.
    """
    if ls.condition is None:
        raise MissingCondition("label set has no condition label")
    if not ls.states:
        raise MissingState("label set has no state label")
    if ls.activities:
        return Level.CSA
    if ls.others:
        return Level.CSO
    return Level.CS


def level_memberships(ls: LabelSet) -> frozenset[Level]:
    """Reporting slices a label set contributes to (may overlap).

    Always includes GLOBAL. Level slices require a condition and at least
    one state; a set with both activities and others contributes to both
    CSA and CSO.
    """
    out = {Level.GLOBAL}
    if ls.condition is None or not ls.states:
        return frozenset(out)
    if not ls.activities and not ls.others:
        out.add(Level.CS)
    if ls.activities:
        out.add(Level.CSA)
    if ls.others:
        out.add(Level.CSO)
    return frozenset(out)


@dataclass(frozen=True)
class RuleViolation:
    """One broken sanity rule on one record."""

    rule_id: int
    subject: str
    message: str

    def __str__(self):
        return f"[rule {self.rule_id}] {self.subject}: {self.message}"


def _states_of(labels: Sequence[Label]) -> set[str]:
    return {l.id for l in labels if l.category is LabelCategory.STATE}


_SEATED_OR_STANDING = {"sitting", "standing"}

# Rules 6-9 share one shape: activity X requires a sitting/standing state.
_ACTIVITY_STATE_RULES = (
    (6, "shopping"),
    (7, "street_vendors"),
    (8, "load_unload_packages"),
    (9, "waiting_in_bus_station"),
)


def validate_labels(labels: Sequence[Label], subject: str = "") -> list[RuleViolation]:
    """Apply the nine annotation sanity rules to a raw label list.

    Violations are data, not errors; the list is empty iff the record is
    fully valid. Pets are exempt from rules 1-2.
    """
    conditions = sorted({l.id for l in labels if l.category is LabelCategory.CONDITION})
    states = _states_of(labels)
    activities = {l.id for l in labels if l.category is LabelCategory.ACTIVITY}
    others = {l.id for l in labels if l.category is LabelCategory.OTHER}
    is_pet = "pet" in others

    violations: list[RuleViolation] = []

    def add(rule_id: int, message: str):
        violations.append(RuleViolation(rule_id, subject, message))

    if not conditions and not is_pet:
        add(1, "a condition label is required")
    if not states and not is_pet:
        add(2, "at least one state label is required")
    if len(conditions) > 1:
        add(3, f"more than one condition label: {', '.join(conditions)}")
    if "alone" in conditions and len(states) > 1:
        add(4, f"'alone' admits a single state, got {len(states)}")
    if "couple" in conditions and len(states) > 2:
        add(5, f"'couple' admits at most two states, got {len(states)}")
    for rule_id, activity in _ACTIVITY_STATE_RULES:
        if activity in activities and not (states & _SEATED_OR_STANDING):
            add(rule_id, f"'{activity}' requires a sitting or standing state")
    return violations


def validate_annotation(record) -> list[RuleViolation]:
    """Sanity-check a ground-truth record (see ``validate_labels``)."""
    registry = default_registry()
    labels = [registry.get(i) for i in record.raw_label_ids]
    return validate_labels(labels, subject=record.image_id)
