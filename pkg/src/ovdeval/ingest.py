"""Streaming parsers for the four line-delimited input formats.

All inputs are UTF-8 JSON Lines with an optional ``schema_version`` header
line (always written by the serializers here); see ``docs/formats.md`` for
the exact schemas. Parsers are single-pass generators, so memory stays
bounded regardless of file size.

Ground truth defaults to strict validation (any sanity violation aborts
with a report); predictions default to lenient (structurally bad records
are skipped and reported alongside the good ones). Structural problems in
ground truth (unknown labels, degenerate boxes, bad JSON) always raise.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .errors import (
    DegenerateBox,
    DuplicatePromptId,
    InputError,
    LogitOutOfRange,
    MalformedRecord,
    NonContiguousIndices,
    SanityCheckFailed,
    TokenLengthMismatch,
)
from .geometry import Box
from .taxonomy import (
    LabelCategory,
    LabelRegistry,
    LabelSet,
    RuleViolation,
    default_registry,
    validate_labels,
)

SCHEMA_VERSION = 1

Source = Union[str, Path, IO[str], Iterable[str]]

_LOGIT_TOL = 1e-9


@dataclass(frozen=True)
class GroundTruthRecord:
    """One annotated box with its multi-label assignment."""

    image_id: str
    box: Box
    labels: LabelSet
    raw_label_ids: tuple[str, ...] = ()

    def label_ids(self) -> tuple[str, ...]:
        return self.labels.sorted_ids()


@dataclass(frozen=True)
class PredictionRecord:
    """One predicted box for one (image, prompt) pair with per-token logits."""

    image_id: str
    prompt_id: str
    box: Box
    token_logits: tuple[float, ...]
    native_score: float | None = None


@dataclass(frozen=True)
class PromptEntry:
    prompt_id: str
    text: str
    label_set: LabelSet
    synonym_group: str


@dataclass(frozen=True)
class TokenEntry:
    index: int
    text: str
    category: LabelCategory | None = None


@dataclass(frozen=True)
class TokenMap:
    """Ordered token/category mapping for one prompt's logit vector."""

    prompt_id: str
    entries: tuple[TokenEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def relevant_indices(self) -> tuple[int, ...]:
        return tuple(e.index for e in self.entries if e.category is not None)


@dataclass
class ParseIssue:
    """A skipped record in lenient mode: where and why."""

    line_no: int
    message: str


@dataclass
class GroundTruthResult:
    records: list[GroundTruthRecord]
    violations: list[RuleViolation] = field(default_factory=list)


@dataclass
class PredictionResult:
    records: list[PredictionRecord]
    issues: list[ParseIssue] = field(default_factory=list)


def _open_lines(source: Source) -> Iterator[tuple[int, str]]:
    """Yield (line_no, stripped line); accepts paths, file objects, iterables."""
    if isinstance(source, (str, Path)):
        fh: Iterable[str] = open(source, "r", encoding="utf-8")
        close = True
    elif isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
        close = False
    else:
        fh = source
        close = False
    try:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                yield line_no, line
    finally:
        if close:
            fh.close()


def _decode_line(line_no: int, line: str, kind: str) -> dict | None:
    """Decode one JSON line; returns None for a valid header line."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
    if not isinstance(rec, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    if "schema_version" in rec:
        if rec["schema_version"] != SCHEMA_VERSION:
            raise MalformedRecord(
                line_no, f"unsupported schema_version {rec['schema_version']!r}"
            )
        if "kind" in rec and rec["kind"] != kind:
            raise MalformedRecord(line_no, f"expected a {kind} file, got {rec['kind']!r}")
        return None
    return rec


def _parse_box(rec: dict, line_no: int, box_format: str) -> Box:
    raw = rec.get("box")
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise MalformedRecord(line_no, "box must be a 4-element array")
    try:
        vals = [float(v) for v in raw]
    except (TypeError, ValueError):
        raise MalformedRecord(line_no, "box coordinates must be numbers") from None
    try:
        if box_format == "cxcywh":
            return Box.from_cxcywh(*vals)
        if box_format == "xyxy":
            return Box(*vals)
    except DegenerateBox as exc:
        raise DegenerateBox(f"line {line_no}: {exc}") from None
    raise ValueError(f"unknown box format {box_format!r}")


def _require(rec: dict, key: str, line_no: int):
    if key not in rec:
        raise MalformedRecord(line_no, f"missing field {key!r}")
    return rec[key]


def _gt_from_record(
    line_no: int, rec: dict, registry: LabelRegistry, box_format: str
) -> tuple[GroundTruthRecord, list[RuleViolation]]:
    image_id = str(_require(rec, "image_id", line_no))
    box = _parse_box(rec, line_no, box_format)
    raw_ids = _require(rec, "labels", line_no)
    if not isinstance(raw_ids, list):
        raise MalformedRecord(line_no, "labels must be an array of ids")
    labels = [registry.get(str(i)) for i in raw_ids]
    violations = validate_labels(labels, subject=f"{image_id}:{line_no}")
    # Duplicate-condition records keep the first condition so a lenient
    # parse can still represent them; rule 3 carries the report.
    seen_condition = False
    kept = []
    for label in labels:
        if label.category is LabelCategory.CONDITION:
            if seen_condition:
                continue
            seen_condition = True
        kept.append(label)
    record = GroundTruthRecord(
        image_id=image_id,
        box=box,
        labels=LabelSet.from_labels(kept),
        raw_label_ids=tuple(str(i) for i in raw_ids),
    )
    return record, violations


def iter_ground_truth(
    source: Source,
    registry: LabelRegistry | None = None,
    box_format: str = "xyxy",
) -> Iterator[tuple[GroundTruthRecord, list[RuleViolation]]]:
    """Stream ground-truth records with their per-record sanity violations."""
    registry = registry or default_registry()
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "ground_truth")
        if rec is None:
            continue
        yield _gt_from_record(line_no, rec, registry, box_format)


def parse_ground_truth(
    source: Source,
    registry: LabelRegistry | None = None,
    strict: bool = True,
    box_format: str = "xyxy",
) -> GroundTruthResult:
    """Parse all ground-truth records.

    In strict mode any sanity violation aborts with the full report; in
    lenient mode violations are returned alongside the records.
    """
    records: list[GroundTruthRecord] = []
    violations: list[RuleViolation] = []
    for record, record_violations in iter_ground_truth(source, registry, box_format):
        records.append(record)
        violations.extend(record_violations)
    if strict and violations:
        raise SanityCheckFailed(violations)
    return GroundTruthResult(records=records, violations=violations)


def _prediction_from_record(
    line_no: int,
    rec: dict,
    token_maps: dict[str, TokenMap] | None,
    box_format: str,
) -> PredictionRecord:
    image_id = str(_require(rec, "image_id", line_no))
    prompt_id = str(_require(rec, "prompt_id", line_no))
    box = _parse_box(rec, line_no, box_format)
    raw_logits = _require(rec, "token_logits", line_no)
    if not isinstance(raw_logits, list) or not raw_logits:
        raise MalformedRecord(line_no, "token_logits must be a non-empty array")
    logits = []
    for v in raw_logits:
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise MalformedRecord(line_no, "token_logits must be numbers") from None
        if x < -_LOGIT_TOL or x > 1.0 + _LOGIT_TOL:
            raise LogitOutOfRange(f"line {line_no}: logit {x} outside [0, 1]")
        logits.append(min(max(x, 0.0), 1.0))
    if token_maps is not None:
        tm = token_maps.get(prompt_id)
        if tm is None:
            raise TokenLengthMismatch(
                f"line {line_no}: no token map for prompt {prompt_id!r}"
            )
        if len(tm) != len(logits):
            raise TokenLengthMismatch(
                f"line {line_no}: {len(logits)} logits against a "
                f"{len(tm)}-token map for prompt {prompt_id!r}"
            )
    native = rec.get("native_score")
    return PredictionRecord(
        image_id=image_id,
        prompt_id=prompt_id,
        box=box,
        token_logits=tuple(logits),
        native_score=float(native) if native is not None else None,
    )


def iter_predictions(
    source: Source,
    token_maps: dict[str, TokenMap] | None = None,
    box_format: str = "xyxy",
) -> Iterator[PredictionRecord]:
    """Stream prediction records, raising on the first structural problem."""
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "predictions")
        if rec is None:
            continue
        yield _prediction_from_record(line_no, rec, token_maps, box_format)


def parse_predictions(
    source: Source,
    token_maps: dict[str, TokenMap] | None = None,
    strict: bool = False,
    box_format: str = "xyxy",
) -> PredictionResult:
    """Parse prediction records; lenient mode skips bad records with a report."""
    records: list[PredictionRecord] = []
    issues: list[ParseIssue] = []
    for line_no, line in _open_lines(source):
        try:
            rec = _decode_line(line_no, line, "predictions")
            if rec is None:
                continue
            records.append(_prediction_from_record(line_no, rec, token_maps, box_format))
        except InputError as exc:
            if strict:
                raise
            issues.append(ParseIssue(line_no=line_no, message=str(exc)))
    return PredictionResult(records=records, issues=issues)


def parse_prompt_catalog(
    source: Source,
    registry: LabelRegistry | None = None,
) -> list[PromptEntry]:
    """Parse the prompt catalog; prompt ids must be unique."""
    registry = registry or default_registry()
    entries: list[PromptEntry] = []
    seen: set[str] = set()
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "prompt_catalog")
        if rec is None:
            continue
        prompt_id = str(_require(rec, "prompt_id", line_no))
        if prompt_id in seen:
            raise DuplicatePromptId(prompt_id)
        seen.add(prompt_id)
        raw_ids = _require(rec, "labels", line_no)
        label_set = LabelSet.from_labels(registry.get(str(i)) for i in raw_ids)
        entries.append(
            PromptEntry(
                prompt_id=prompt_id,
                text=str(_require(rec, "text", line_no)),
                label_set=label_set,
                synonym_group=str(_require(rec, "synonym_group", line_no)),
            )
        )
    return entries


def parse_token_map(source: Source) -> dict[str, TokenMap]:
    """Parse token maps keyed by prompt id; indices must be 0-based and gap-free."""
    out: dict[str, TokenMap] = {}
    for line_no, line in _open_lines(source):
        rec = _decode_line(line_no, line, "token_map")
        if rec is None:
            continue
        prompt_id = str(_require(rec, "prompt_id", line_no))
        if prompt_id in out:
            raise DuplicatePromptId(prompt_id)
        raw_tokens = _require(rec, "tokens", line_no)
        if not isinstance(raw_tokens, list):
            raise MalformedRecord(line_no, "tokens must be an array")
        entries = []
        for pos, tok in enumerate(raw_tokens):
            if not isinstance(tok, dict):
                raise MalformedRecord(line_no, "token entries must be objects")
            idx = tok.get("index", pos)
            if idx != pos:
                raise NonContiguousIndices(
                    f"line {line_no}: token index {idx} at position {pos} "
                    f"(indices must be 0-based and gap-free)"
                )
            cat = tok.get("category")
            try:
                category = LabelCategory(cat) if cat is not None else None
            except ValueError:
                raise MalformedRecord(line_no, f"unknown token category {cat!r}") from None
            entries.append(TokenEntry(index=idx, text=str(tok.get("text", "")), category=category))
        out[prompt_id] = TokenMap(prompt_id=prompt_id, entries=tuple(entries))
    return out


# ---------------------------------------------------------------------------
# Serialization (canonical form; round-trips byte-identically)
# ---------------------------------------------------------------------------


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def _header(kind: str) -> str:
    return _dump({"schema_version": SCHEMA_VERSION, "kind": kind})


def write_ground_truth(records: Iterable[GroundTruthRecord], fh: IO[str]) -> None:
    fh.write(_header("ground_truth") + "\n")
    for r in records:
        fh.write(
            _dump(
                {
                    "image_id": r.image_id,
                    "box": list(r.box.as_tuple()),
                    "labels": list(r.raw_label_ids or r.labels.sorted_ids()),
                }
            )
            + "\n"
        )


def write_predictions(records: Iterable[PredictionRecord], fh: IO[str]) -> None:
    fh.write(_header("predictions") + "\n")
    for r in records:
        rec = {
            "image_id": r.image_id,
            "prompt_id": r.prompt_id,
            "box": list(r.box.as_tuple()),
            "token_logits": list(r.token_logits),
        }
        if r.native_score is not None:
            rec["native_score"] = r.native_score
        fh.write(_dump(rec) + "\n")


def write_prompt_catalog(entries: Iterable[PromptEntry], fh: IO[str]) -> None:
    fh.write(_header("prompt_catalog") + "\n")
    for e in entries:
        fh.write(
            _dump(
                {
                    "prompt_id": e.prompt_id,
                    "text": e.text,
                    "labels": list(e.label_set.sorted_ids()),
                    "synonym_group": e.synonym_group,
                }
            )
            + "\n"
        )


def write_token_maps(maps: Iterable[TokenMap], fh: IO[str]) -> None:
    fh.write(_header("token_map") + "\n")
    for tm in maps:
        fh.write(
            _dump(
                {
                    "prompt_id": tm.prompt_id,
                    "tokens": [
                        {
                            "index": e.index,
                            "text": e.text,
                            **({"category": e.category.value} if e.category else {}),
                        }
                        for e in tm.entries
                    ],
                }
            )
            + "\n"
        )
