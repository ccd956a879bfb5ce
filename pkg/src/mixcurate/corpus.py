"""conversation corpus model plus streaming JSONL ingestion and emission.

Record wire format (one JSON object per line, UTF-8):

    {
      "id": "...",                     required, unique within a file
      "source_dataset": "...",         required (loader can fill a default)
      "source_subset": "...",          required (loader can fill a default)
      "conversation": [...],           also accepted on input: "conversations",
                                       "messages"
      "extra_metadata": {"k": "v"},    optional, string -> string
      "annotation": {...} | null,      output records only; null marks a
                                       sample whose annotation failed
      "token_count": 123               optional
    }

Input conversations may use either encoding:

    (a) [{"from": "human"|"gpt"|"system", "value": "..."}]
    (b) [{"role": "user"|"assistant"|"system", "content": "..."}]

Output always uses encoding (b). Annotation objects are flat:

    {"task_category": "...", "other_task_tags": [...], "input_quality": "...",
     "difficulty": "...", "language": "...", "safety": "...",
     "turn_type": "single_turn"|"multi_turn",
     "reward": {"kind": "delta", "r_star": x, "r_base": y, "delta": x-y}
             | {"kind": "judge", "score": 0..5}}

A "judge" reward on a single_turn sample marks the degraded scoring path
(no reward-model endpoint was configured); downstream consumers treat those
rewards as incomparable with deltas.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

logger = logging.getLogger(__name__)

ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
ROLE_SYSTEM = "system"
ROLES = frozenset({ROLE_USER, ROLE_ASSISTANT, ROLE_SYSTEM})

FROM_ROLE_MAP = {"human": ROLE_USER, "gpt": ROLE_ASSISTANT, "system": ROLE_SYSTEM}

SINGLE_TURN = "single_turn"
MULTI_TURN = "multi_turn"
TURN_TYPES = (SINGLE_TURN, MULTI_TURN)

TASK_CATEGORIES = (
    "Information seeking",
    "Reasoning",
    "Planning",
    "Editing",
    "Coding & Debugging",
    "Math",
    "Role playing",
    "Data analysis",
    "Creative writing",
    "Advice seeking",
    "Brainstorming",
    "Others",
)

INPUT_QUALITIES = ("very poor", "poor", "average", "good", "excellent")
DIFFICULTIES = ("very easy", "easy", "medium", "hard", "very hard")
SAFETY_FLAGS = ("safe", "unsafe", "unknown")
SAFETY_UNKNOWN = "unknown"

REWARD_KIND_DELTA = "delta"
REWARD_KIND_JUDGE = "judge"

FORMAT_FROM_VALUE = "from_value"
FORMAT_ROLE_CONTENT = "role_content"
FORMAT_AUTO = "auto"
FORMAT_HINTS = (FORMAT_FROM_VALUE, FORMAT_ROLE_CONTENT, FORMAT_AUTO)

_CONVERSATION_KEYS = ("conversation", "conversations", "messages")


class CorpusRecordError(ValueError):
    """A single record violated the corpus contract."""


class CorpusWriteError(RuntimeError):
    """Emission failed partway; .written says how many records made it out."""

    def __init__(self, message: str, written: int):
        super().__init__(message)
        self.written = written


@dataclass(frozen=True)
class LineDiagnostic:
    line_number: int
    reason: str
    record_id: str | None = None


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise CorpusRecordError(f"unknown role: {self.role!r}")
        if not isinstance(self.content, str):
            raise CorpusRecordError("message content must be text")
        if not self.content.strip() and self.role != ROLE_SYSTEM:
            raise CorpusRecordError(f"empty content for role {self.role!r}")


@dataclass(frozen=True)
class Conversation:
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        roles = [m.role for m in self.messages]
        if ROLE_USER not in roles:
            raise CorpusRecordError("conversation has no user message")
        if ROLE_ASSISTANT not in roles:
            raise CorpusRecordError("conversation has no assistant message")
        if roles[-1] != ROLE_ASSISTANT:
            raise CorpusRecordError("conversation does not end with an assistant message")
        for a, b in zip(roles, roles[1:]):
            if a == b:
                raise CorpusRecordError(f"consecutive {a!r} messages")

    def __len__(self) -> int:
        return len(self.messages)


@dataclass(frozen=True)
class Sample:
    id: str
    source_dataset: str
    source_subset: str
    conversation: Conversation
    extra_metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusRecordError("missing id")
        if not self.source_dataset:
            raise CorpusRecordError("missing source_dataset")
        if not self.source_subset:
            raise CorpusRecordError("missing source_subset")


@dataclass(frozen=True)
class DeltaReward:
    """Single-turn reward: scored response minus scored baseline response."""

    r_star: float
    r_base: float
    delta: float

    def __post_init__(self) -> None:
        if self.delta != self.r_star - self.r_base:
            raise CorpusRecordError("delta must equal r_star - r_base")

    @classmethod
    def from_scores(cls, r_star: float, r_base: float) -> "DeltaReward":
        return cls(r_star=r_star, r_base=r_base, delta=r_star - r_base)


@dataclass(frozen=True)
class JudgeReward:
    """Discrete 0-5 judge score (multi-turn pathway, or degraded single-turn)."""

    score: int

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise CorpusRecordError("judge score must be an integer")
        if not 0 <= self.score <= 5:
            raise CorpusRecordError(f"judge score out of range: {self.score}")


@dataclass(frozen=True)
class Annotation:
    task_category: str
    other_task_tags: tuple[str, ...]
    input_quality: str
    difficulty: str
    language: str
    safety: str
    reward: DeltaReward | JudgeReward
    turn_type: str

    def __post_init__(self) -> None:
        if self.task_category not in TASK_CATEGORIES:
            raise CorpusRecordError(f"unknown task_category: {self.task_category!r}")
        for tag in self.other_task_tags:
            if tag not in TASK_CATEGORIES:
                raise CorpusRecordError(f"unknown task tag: {tag!r}")
        if self.task_category in self.other_task_tags:
            raise CorpusRecordError("task_category repeated in other_task_tags")
        if self.input_quality not in INPUT_QUALITIES:
            raise CorpusRecordError(f"unknown input_quality: {self.input_quality!r}")
        if self.difficulty not in DIFFICULTIES:
            raise CorpusRecordError(f"unknown difficulty: {self.difficulty!r}")
        if self.safety not in SAFETY_FLAGS:
            raise CorpusRecordError(f"unknown safety flag: {self.safety!r}")
        if not self.language:
            raise CorpusRecordError("empty language")
        if self.turn_type not in TURN_TYPES:
            raise CorpusRecordError(f"unknown turn_type: {self.turn_type!r}")
        if self.turn_type == MULTI_TURN and isinstance(self.reward, DeltaReward):
            raise CorpusRecordError("multi_turn sample carries a delta reward")

    @property
    def is_degraded_reward(self) -> bool:
        """True when a single-turn sample was scored on the 0-5 judge scale."""
        return self.turn_type == SINGLE_TURN and isinstance(self.reward, JudgeReward)


@dataclass(frozen=True)
class AnnotatedSample:
    sample: Sample
    annotation: Annotation | None
    token_count: int | None = None

    def __post_init__(self) -> None:
        if self.annotation is not None:
            expected = classify_turn_type(self.sample.conversation)
            if self.annotation.turn_type != expected:
                raise CorpusRecordError(
                    f"turn_type {self.annotation.turn_type!r} disagrees with "
                    f"{len(self.sample.conversation)} messages"
                )
        if self.token_count is not None:
            if self.token_count < len(self.sample.conversation):
                raise CorpusRecordError(
                    "token_count below message count "
                    f"({self.token_count} < {len(self.sample.conversation)})"
                )


def classify_turn_type(conversation: Conversation) -> str:
    """single_turn iff exactly 2 messages, multi_turn iff more."""
    n = len(conversation.messages)
    if n < 2:
        raise CorpusRecordError(f"conversation too short to classify ({n} messages)")
    return SINGLE_TURN if n == 2 else MULTI_TURN


def whitespace_tokens(text: str) -> int:
    """Default tokenizer: whitespace-delimited units, minimum 1 per call."""
    return max(1, len(text.split()))


def count_tokens(
    conversation: Conversation, tokenizer: Callable[[str], int] = whitespace_tokens
) -> int:
    """Sum of per-message token counts under the given tokenizer."""
    return sum(tokenizer(m.content) for m in conversation.messages)


def serialize_conversation(conversation: Conversation) -> str:
    """Render a conversation to the plain text seen by judges and tokenizers.

    One "role: content" paragraph per message. Whitespace tokenization of the
    result equals the per-message sum plus one label token per message.
    """
    return "\n\n".join(f"{m.role}: {m.content}" for m in conversation.messages)


# --------------------------------------------------------------------------
# record <-> object codecs


def _detect_format(items: list, format_hint: str) -> str:
    if format_hint != FORMAT_AUTO:
        return format_hint
    head = items[0]
    if isinstance(head, dict):
        if "from" in head or "value" in head:
            return FORMAT_FROM_VALUE
        if "role" in head or "content" in head:
            return FORMAT_ROLE_CONTENT
    raise CorpusRecordError("cannot detect conversation encoding")


def conversation_from_list(items: object, format_hint: str = FORMAT_AUTO) -> Conversation:
    if format_hint not in FORMAT_HINTS:
        raise CorpusRecordError(f"unknown format hint: {format_hint!r}")
    if not isinstance(items, list) or not items:
        raise CorpusRecordError("conversation is empty or not an array")
    fmt = _detect_format(items, format_hint)
    messages = []
    for obj in items:
        if not isinstance(obj, dict):
            raise CorpusRecordError("conversation entry is not an object")
        if fmt == FORMAT_FROM_VALUE:
            raw_role = obj.get("from")
            content = obj.get("value")
            if raw_role not in FROM_ROLE_MAP:
                raise CorpusRecordError(f"unknown role: {raw_role!r}")
            role = FROM_ROLE_MAP[raw_role]
        else:
            role = obj.get("role")
            content = obj.get("content")
        if not isinstance(content, str):
            raise CorpusRecordError("message content missing or not text")
        messages.append(Message(role=role, content=content))
    return Conversation(messages=tuple(messages))


def _coerce_meta(value: object) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def sample_from_record(
    record: dict,
    format_hint: str = FORMAT_AUTO,
    default_dataset: str | None = None,
    default_subset: str | None = None,
) -> Sample:
    if not isinstance(record, dict):
        raise CorpusRecordError("record is not an object")
    raw_id = record.get("id")
    if raw_id is None or raw_id == "":
        raise CorpusRecordError("missing id")
    items = None
    for key in _CONVERSATION_KEYS:
        if key in record:
            items = record[key]
            break
    if items is None:
        raise CorpusRecordError("missing conversation")
    meta = record.get("extra_metadata") or {}
    if not isinstance(meta, dict):
        raise CorpusRecordError("extra_metadata is not an object")
    return Sample(
        id=str(raw_id),
        source_dataset=str(record.get("source_dataset") or default_dataset or ""),
        source_subset=str(record.get("source_subset") or default_subset or ""),
        conversation=conversation_from_list(items, format_hint),
        extra_metadata={str(k): _coerce_meta(v) for k, v in meta.items()},
    )


def reward_from_dict(obj: object) -> DeltaReward | JudgeReward:
    if not isinstance(obj, dict):
        raise CorpusRecordError("reward is not an object")
    kind = obj.get("kind")
    if kind == REWARD_KIND_DELTA:
        try:
            return DeltaReward(
                r_star=float(obj["r_star"]),
                r_base=float(obj["r_base"]),
                delta=float(obj["delta"]),
            )
        except (KeyError, TypeError) as exc:
            raise CorpusRecordError(f"bad delta reward: {exc}") from exc
    if kind == REWARD_KIND_JUDGE:
        score = obj.get("score")
        if isinstance(score, float) and score.is_integer():
            score = int(score)
        return JudgeReward(score=score)
    raise CorpusRecordError(f"unknown reward kind: {kind!r}")


def reward_to_dict(reward: DeltaReward | JudgeReward) -> dict:
    if isinstance(reward, DeltaReward):
        return {
            "kind": REWARD_KIND_DELTA,
            "r_star": reward.r_star,
            "r_base": reward.r_base,
            "delta": reward.delta,
        }
    return {"kind": REWARD_KIND_JUDGE, "score": reward.score}


def annotation_from_dict(obj: object) -> Annotation:
    if not isinstance(obj, dict):
        raise CorpusRecordError("annotation is not an object")
    try:
        return Annotation(
            task_category=obj["task_category"],
            other_task_tags=tuple(obj.get("other_task_tags") or ()),
            input_quality=obj["input_quality"],
            difficulty=obj["difficulty"],
            language=obj["language"],
            safety=obj["safety"],
            reward=reward_from_dict(obj["reward"]),
            turn_type=obj["turn_type"],
        )
    except KeyError as exc:
        raise CorpusRecordError(f"annotation missing field {exc}") from exc


def annotation_to_dict(annotation: Annotation) -> dict:
    return {
        "task_category": annotation.task_category,
        "other_task_tags": list(annotation.other_task_tags),
        "input_quality": annotation.input_quality,
        "difficulty": annotation.difficulty,
        "language": annotation.language,
        "safety": annotation.safety,
        "reward": reward_to_dict(annotation.reward),
        "turn_type": annotation.turn_type,
    }


def annotated_from_record(record: dict) -> AnnotatedSample:
    sample = sample_from_record(record, format_hint=FORMAT_ROLE_CONTENT)
    raw_annotation = record.get("annotation")
    annotation = None if raw_annotation is None else annotation_from_dict(raw_annotation)
    token_count = record.get("token_count")
    if token_count is not None:
        if not isinstance(token_count, int) or isinstance(token_count, bool) or token_count < 0:
            raise CorpusRecordError(f"bad token_count: {token_count!r}")
    return AnnotatedSample(sample=sample, annotation=annotation, token_count=token_count)


def annotated_to_record(annotated: AnnotatedSample) -> dict:
    sample = annotated.sample
    record: dict = {
        "id": sample.id,
        "source_dataset": sample.source_dataset,
        "source_subset": sample.source_subset,
        "conversation": [
            {"role": m.role, "content": m.content} for m in sample.conversation.messages
        ],
    }
    if sample.extra_metadata:
        record["extra_metadata"] = dict(sorted(sample.extra_metadata.items()))
    record["annotation"] = (
        None if annotated.annotation is None else annotation_to_dict(annotated.annotation)
    )
    if annotated.token_count is not None:
        record["token_count"] = annotated.token_count
    return record


def record_line(annotated: AnnotatedSample) -> str:
    return json.dumps(annotated_to_record(annotated), ensure_ascii=False)


# --------------------------------------------------------------------------
# streaming file I/O


def _iter_records(
    path: Path, on_reject: Callable[[LineDiagnostic], None] | None
) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                _reject(on_reject, LineDiagnostic(line_number, f"bad JSON: {exc}"))
                continue
            yield line_number, record


def _reject(
    on_reject: Callable[[LineDiagnostic], None] | None, diagnostic: LineDiagnostic
) -> None:
    logger.warning("line %d rejected: %s", diagnostic.line_number, diagnostic.reason)
    if on_reject is not None:
        on_reject(diagnostic)


def load_corpus(
    path: str | Path,
    format_hint: str = FORMAT_AUTO,
    *,
    default_dataset: str | None = None,
    default_subset: str | None = None,
    on_reject: Callable[[LineDiagnostic], None] | None = None,
) -> Iterator[Sample]:
    """Stream Samples from a JSONL file, skipping and reporting bad lines.

    An unreadable file raises; a malformed record only produces a diagnostic
    (logged, and passed to on_reject when given) and the stream continues.
    Duplicate ids within the file reject the second occurrence.
    """
    path = Path(path)
    seen_ids: set[str] = set()
    for line_number, record in _iter_records(path, on_reject):
        try:
            sample = sample_from_record(
                record,
                format_hint,
                default_dataset=default_dataset,
                default_subset=default_subset,
            )
        except CorpusRecordError as exc:
            rid = record.get("id") if isinstance(record, dict) else None
            _reject(on_reject, LineDiagnostic(line_number, str(exc), rid))
            continue
        if sample.id in seen_ids:
            _reject(on_reject, LineDiagnostic(line_number, "duplicate id", sample.id))
            continue
        seen_ids.add(sample.id)
        yield sample


def load_annotated_corpus(
    path: str | Path,
    *,
    on_reject: Callable[[LineDiagnostic], None] | None = None,
) -> Iterator[AnnotatedSample]:
    """Stream AnnotatedSamples (annotation may be null) from a JSONL file."""
    path = Path(path)
    seen_ids: set[str] = set()
    for line_number, record in _iter_records(path, on_reject):
        try:
            annotated = annotated_from_record(record)
        except CorpusRecordError as exc:
            rid = record.get("id") if isinstance(record, dict) else None
            _reject(on_reject, LineDiagnostic(line_number, str(exc), rid))
            continue
        if annotated.sample.id in seen_ids:
            _reject(
                on_reject, LineDiagnostic(line_number, "duplicate id", annotated.sample.id)
            )
            continue
        seen_ids.add(annotated.sample.id)
        yield annotated


def emit_corpus(samples: Iterable[AnnotatedSample], path: str | Path) -> int:
    """Write one record per line; returns the number written.

    On I/O failure raises CorpusWriteError carrying the partial-write count.
    """
    path = Path(path)
    written = 0
    try:
        with path.open("w", encoding="utf-8") as handle:
            for annotated in samples:
                handle.write(record_line(annotated))
                handle.write("\n")
                written += 1
    except OSError as exc:
        raise CorpusWriteError(f"write failed after {written} records: {exc}", written) from exc
    return written
