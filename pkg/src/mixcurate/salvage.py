"""tolerant recovery of annotation objects from noisy judge output.

Judge models frequently wrap their JSON in markdown fences, double the outer
braces, prepend chatty prose, or drop a quote. This module recovers the
intended object with a fixed pipeline of repair stages, each applied at most
once, in a fixed order, with a parse attempt after every stage that changed
the text. It never raises: unrecoverable input comes back as a ``failed``
outcome carrying an excerpt for the failure log.

Stages, in order:

1. brace normalization -- peel duplicated outer braces in place, then (when
   the text itself starts with a brace) extract the first balanced block.
2. sanitization -- an ordered, documented list of regex/scan repairs: invalid
   backslash escaping, unbalanced-quote closing, unbalanced-brace repair,
   missing-comma insertion at line breaks, trailing-comma removal, and
   top-level key lowercasing.
3. wrapper stripping -- remove markdown fences, discard text outside the
   first and last braces, truncate after the final closing brace.
4. bare-number fallback -- a lone token 0-5 becomes ``{"score": n}``, only
   when the caller expects the reward-score schema.
5. graceful degradation -- a ``failed`` outcome; nothing is raised.

Strictly valid input short-circuits before any stage runs. "Strictly valid"
means a JSON document whose top level is an object; the schemas handled here
are all objects, and a bare digit must stay repairable by stage 4 rather than
strict-parse to an int.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

logger = logging.getLogger(__name__)

EXPECTED_SCHEMAS = frozenset(
    {"task_tags", "input_quality", "difficulty", "reward_score", "language", "free"}
)

STAGE_BRACES = "brace_normalization"
STAGE_SANITIZE = "sanitization"
STAGE_WRAPPERS = "wrapper_stripping"
STAGE_BARE_NUMBER = "bare_number_fallback"

EXCERPT_CHARS = 256

# stage-1 safety valve: duplicated outer braces are peeled at most this many
# times, so adversarial brace towers stay linear instead of quadratic
_MAX_BRACE_PEELS = 32

_CODE_FENCE = re.compile(r"```[a-zA-Z0-9_+-]*[ \t]*\n?(.*?)```", re.DOTALL)
_OPEN_FENCE_TAG = re.compile(r"^[a-zA-Z0-9_+-]*[ \t]*\n")
_BAD_ESCAPE = re.compile(r'\\(?![\\"/bfnrtu])')
_UNESCAPED_QUOTE = re.compile(r'(?<!\\)"')
_MISSING_COMMA = re.compile(r'(["0-9\]}]|true|false|null)([ \t]*\n[ \t]*)"')
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")
_UPPER_KEY_HINT = re.compile(r'"[^"\n]*[A-Z][^"\n]*"\s*:')
_BARE_SCORE = re.compile(r"[0-5]")


@dataclass(frozen=True)
class SalvageContext:
    """What the caller expects back; gates the bare-number fallback."""

    expected_schema: str = "free"

    def __post_init__(self) -> None:
        if self.expected_schema not in EXPECTED_SCHEMAS:
            raise ValueError(f"unknown expected_schema: {self.expected_schema!r}")


@dataclass(frozen=True)
class SalvageOutcome:
    status: str  # parsed | parsed_after_repair | failed
    value: dict | None
    repairs_applied: tuple[str, ...]
    raw_excerpt: str

    @property
    def ok(self) -> bool:
        return self.status != "failed"


def _strict_parse(text: str) -> dict | None:
    """Parse a strictly valid JSON object, or return None."""
    try:
        doc = json.loads(text)
    except Exception:
        # json raises JSONDecodeError for malformed text and RecursionError
        # for pathological nesting; totality matters more than the reason
        return None
    return doc if isinstance(doc, dict) else None


def extract_first_block(text: str) -> str | None:
    """Return the first balanced brace-delimited span, or None.

    The scan is string-aware: braces inside JSON string literals do not
    count toward nesting depth.
    """
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _peel_duplicated_braces(text: str) -> str:
    """Collapse duplicated outer braces on the first{...last} span, in place.

    Only peels when the character after the outer brace is another brace and
    the inner span is itself a single balanced block, so legitimate nesting
    like {"a": {"b": 1}} is never touched. Peeling in place (leaving any
    surrounding prose or fence intact) lets a later stage finish the job.
    """
    first = text.find("{")
    last = text.rfind("}")
    if first < 0 or last <= first:
        return text
    span = text[first : last + 1]
    peeled = False
    for _ in range(_MAX_BRACE_PEELS):
        inner = span[1:-1].strip()
        if not (inner.startswith("{") and inner.endswith("}")):
            break
        if extract_first_block(inner) != inner:
            break
        span = inner
        peeled = True
    if not peeled:
        return text
    return text[:first] + span + text[last + 1 :]


def _normalize_braces(text: str) -> str:
    """Stage 1: peel duplicated outer braces, then extract the first block.

    Extraction only fires when the trimmed text already starts with a brace;
    fenced or prose-wrapped objects are left for wrapper stripping.
    """
    out = _peel_duplicated_braces(text)
    if out.lstrip().startswith("{"):
        block = extract_first_block(out)
        if block is not None:
            out = block
    return out


def _lowercase_top_level_keys(text: str) -> str:
    if not _UPPER_KEY_HINT.search(text):
        return text
    out = list(text)
    depth = 0
    in_string = False
    escaped = False
    str_start = -1
    n = len(text)
    for i in range(n):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
                if depth == 1:
                    j = i + 1
                    while j < n and text[j] in " \t\r\n":
                        j += 1
                    if j < n and text[j] == ":":
                        out[str_start : i + 1] = text[str_start : i + 1].lower()
            continue
        if ch == '"':
            in_string = True
            str_start = i
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
    return "".join(out)


def _sanitize(text: str) -> str:
    """Stage 2: ordered repair patterns, each applied at most once."""
    t = _BAD_ESCAPE.sub(r"\\\\", text)

    if len(_UNESCAPED_QUOTE.findall(t)) % 2 == 1:
        last_close = t.rfind("}")
        if last_close >= 0:
            t = t[:last_close] + '"' + t[last_close:]
        else:
            t = t + '"'

    opens = t.count("{")
    closes = t.count("}")
    if opens > closes:
        t = t + "}" * (opens - closes)
    elif closes > opens:
        excess = closes - opens
        while excess > 0 and t.rstrip().endswith("}"):
            idx = t.rfind("}")
            t = t[:idx] + t[idx + 1 :]
            excess -= 1

    t = _MISSING_COMMA.sub(r'\1,\2"', t)
    t = _TRAILING_COMMA.sub(r"\1", t)
    t = _lowercase_top_level_keys(t)
    return t


def _strip_wrappers(text: str) -> str:
    """Stage 3: drop fences, then everything outside the outermost braces."""
    t = text
    m = _CODE_FENCE.search(t)
    if m:
        t = m.group(1)
    else:
        s = t.lstrip()
        if s.startswith("```"):
            # unclosed fence: drop the marker and its language tag line
            t = _OPEN_FENCE_TAG.sub("", s[3:], count=1)
    first = t.find("{")
    if first >= 0:
        last = t.rfind("}")
        if last > first:
            t = t[first : last + 1]
        else:
            t = t[first:]
    return t.strip()


_STAGES = (
    (STAGE_BRACES, _normalize_braces),
    (STAGE_SANITIZE, _sanitize),
    (STAGE_WRAPPERS, _strip_wrappers),
)


def salvage(text: str, context: SalvageContext | None = None) -> SalvageOutcome:
    """Recover a structured object from raw judge output.

    Never raises. Failures come back as status="failed" with the first 256
    characters of the original input preserved for logging; the caller loses
    only this one field's value, nothing else.
    """
    if context is None:
        context = SalvageContext()
    raw = text if isinstance(text, str) else str(text)
    excerpt = raw[:EXCERPT_CHARS]

    value = _strict_parse(raw)
    if value is not None:
        return SalvageOutcome("parsed", value, (), excerpt)

    repairs: list[str] = []
    current = raw
    for name, stage in _STAGES:
        try:
            candidate = stage(current)
        except Exception:  # pragma: no cover - stages are total; belt and braces
            candidate = current
        if candidate == current:
            continue
        current = candidate
        repairs.append(name)
        value = _strict_parse(current)
        if value is not None:
            return SalvageOutcome("parsed_after_repair", value, tuple(repairs), excerpt)

    if context.expected_schema == "reward_score":
        token = current.strip()
        if _BARE_SCORE.fullmatch(token):
            repairs.append(STAGE_BARE_NUMBER)
            return SalvageOutcome(
                "parsed_after_repair", {"score": int(token)}, tuple(repairs), excerpt
            )

    logger.debug("salvage failed (schema=%s): %.80r", context.expected_schema, excerpt)
    return SalvageOutcome("failed", None, tuple(repairs), excerpt)
