"""Prompt generation: naturally phrased sentences for label combinations.

Templates carry slots for the four category phrases; the synonym
dictionary maps each label to one or more surface phrases. Generation is a
deterministic cross-product of templates and synonym choices, truncated to
``cap_per_combo`` variants per combination (priority: template order, then
synonym order), so the same inputs always produce a byte-identical
catalog.
"""

from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from .errors import MalformedRecord, NoTemplateForLevel
from .ingest import PromptEntry, Source, _decode_line, _open_lines
from .taxonomy import Label, LabelRegistry, LabelSet, Level, default_registry, level_of

DEFAULT_CAP_PER_COMBO = 7

_SLOTS = ("condition_phrase", "state_phrase", "activity_phrase", "other_phrase")


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str
    applicable_levels: frozenset[Level]

    def __post_init__(self):
        for _, slot, _, _ in string.Formatter().parse(self.pattern):
            if slot is not None and slot not in _SLOTS:
                raise ValueError(f"template references unknown slot {slot!r}")

    def slots(self) -> tuple[str, ...]:
        return tuple(
            slot
            for _, slot, _, _ in string.Formatter().parse(self.pattern)
            if slot is not None
        )


@dataclass(frozen=True)
class SynonymDictionary:
    phrases: dict[str, tuple[str, ...]]

    def for_label(self, label: Label) -> tuple[str, ...]:
        got = self.phrases.get(label.id)
        if not got:
            raise KeyError(f"no surface phrases for label {label.id!r}")
        return got

    def covers(self, registry: LabelRegistry) -> bool:
        return all(label.id in self.phrases for label in registry)


def load_templates(source: Source | None = None) -> list[PromptTemplate]:
    if source is None:
        source = _packaged("templates.jsonl")
    out = []
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "prompt_templates")
        if rec is None:
            continue
        try:
            out.append(
                PromptTemplate(
                    pattern=rec["pattern"],
                    applicable_levels=frozenset(Level(v) for v in rec["applicable_levels"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(line_no, f"bad template: {exc}") from None
    return out


def load_synonyms(source: Source | None = None) -> SynonymDictionary:
    if source is None:
        source = _packaged("synonyms.jsonl")
    phrases: dict[str, tuple[str, ...]] = {}
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "synonym_dictionary")
        if rec is None:
            continue
        try:
            phrases[rec["label_id"]] = tuple(rec["phrases"])
        except KeyError as exc:
            raise MalformedRecord(line_no, f"bad synonym entry: {exc}") from None
    return SynonymDictionary(phrases=phrases)


def load_combinations(
    source: Source | None = None, registry: LabelRegistry | None = None
) -> list[LabelSet]:
    registry = registry or default_registry()
    if source is None:
        source = _packaged("combinations.jsonl")
    out = []
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "label_combinations")
        if rec is None:
            continue
        try:
            out.append(LabelSet.from_ids(rec["labels"], registry))
        except KeyError as exc:
            raise MalformedRecord(line_no, f"bad combination: {exc}") from None
    return out


def _packaged(name: str):
    text = resources.files("ovdeval").joinpath(f"data/{name}").read_text("utf-8")
    return text.splitlines()


def synonym_group_id(combo: LabelSet) -> str:
    return "+".join(combo.sorted_ids())


def _slot_labels(combo: LabelSet) -> dict[str, list[Label]]:
    return {
        "condition_phrase": [combo.condition] if combo.condition else [],
        "state_phrase": sorted(combo.states, key=lambda l: l.id),
        "activity_phrase": sorted(combo.activities, key=lambda l: l.id),
        "other_phrase": sorted(combo.others, key=lambda l: l.id),
    }


def _join(phrases: Sequence[str]) -> str:
    return " and ".join(phrases)


def generate_prompts(
    combinations: Iterable[LabelSet],
    templates: Sequence[PromptTemplate] | None = None,
    synonyms: SynonymDictionary | None = None,
    cap_per_combo: int = DEFAULT_CAP_PER_COMBO,
) -> list[PromptEntry]:
    """Emit up to ``cap_per_combo`` unique prompts per combination.

    A template applies when its level matches the combination and every
    slot it references has content. Variants enumerate templates first,
    then synonym choices per label (labels ordered condition, states,
    activities, others; each sorted by id); duplicate texts are dropped.
    """
    templates = templates if templates is not None else load_templates()
    synonyms = synonyms if synonyms is not None else load_synonyms()
    entries: list[PromptEntry] = []
    seen_texts: set[str] = set()
    for combo in combinations:
        level = level_of(combo)
        group = synonym_group_id(combo)
        slot_labels = _slot_labels(combo)
        usable = [
            t
            for t in templates
            if level in t.applicable_levels
            and all(slot_labels[s] for s in t.slots())
        ]
        if not usable:
            raise NoTemplateForLevel(
                f"no template covers level {level.value} for combination {group}"
            )
        texts: list[str] = []
        for template in usable:
            slots = template.slots()
            labels = [l for s in slots for l in slot_labels[s]]
            choice_lists = [synonyms.for_label(l) for l in labels]
            for choices in itertools.product(*choice_lists):
                values: dict[str, str] = {}
                pos = 0
                for s in slots:
                    k = len(slot_labels[s])
                    values[s] = _join(choices[pos : pos + k])
                    pos += k
                text = template.pattern.format(**values)
                if text not in seen_texts:
                    seen_texts.add(text)
                    texts.append(text)
                if len(texts) >= cap_per_combo:
                    break
            if len(texts) >= cap_per_combo:
                break
        for k, text in enumerate(texts):
            entries.append(
                PromptEntry(
                    prompt_id=f"{group}#{k}",
                    text=text,
                    label_set=combo,
                    synonym_group=group,
                )
            )
    return entries
