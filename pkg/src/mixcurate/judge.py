"""prompt construction, endpoint clients, and per-sample annotation.

Every sample is annotated along six dimensions. Four of them (task tags,
input quality, difficulty, language) are one judged chat-completion call
each, built from a shared template skeleton: the serialized conversation in
a fenced block, the tag list or rubric, the exact JSON output schema, and an
in-context example. Safety goes to a separate guard endpoint whose prompt is
just the serialized conversation (guard models define their own format).
Reward depends on the turn type: single-turn samples get a reward-model
score minus a baseline score (delta), multi-turn samples get a 0-5 judge
rating. Without a reward-model endpoint, single-turn samples degrade to the
0-5 judge pathway; the variant stored on the annotation records that, and
the curation thresholds refuse to mix the two.

The 0-5 rating rubric wording and the non-task templates are this module's
own; only the task-classification template follows a published precedent.

Endpoints with a ``stub://`` base URL are served in-process by a
deterministic fake whose responses are a pure function of the prompt, which
makes annotation runs byte-reproducible at any worker count. A conversation
containing the literal marker ``FAILME:<dimension>`` makes the stub emit
unsalvageable garbage for that dimension on every attempt, which is how
tests force annotation failures.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator
from urllib.parse import parse_qs, urlparse

import httpx

from .corpus import (
    DIFFICULTIES,
    INPUT_QUALITIES,
    MULTI_TURN,
    SAFETY_FLAGS,
    SAFETY_UNKNOWN,
    SINGLE_TURN,
    TASK_CATEGORIES,
    TURN_TYPES,
    AnnotatedSample,
    Annotation,
    Conversation,
    DeltaReward,
    JudgeReward,
    ROLE_ASSISTANT,
    ROLE_USER,
    Sample,
    classify_turn_type,
    count_tokens,
    serialize_conversation,
)
from .salvage import SalvageContext, salvage

logger = logging.getLogger(__name__)

__all__ = [
    "Annotation",
    "AnnotatedSample",
    "AnnotationFailure",
    "Annotator",
    "DeltaReward",
    "EndpointSet",
    "JudgeEndpoint",
    "JudgeReward",
    "RateLimiter",
    "StubBaselineGenerator",
    "StubRewardScorer",
    "TransportError",
    "build_transport",
    "render_prompt",
    "score_multi_turn",
    "score_single_turn",
]

DIM_TASK = "task"
DIM_QUALITY = "quality"
DIM_DIFFICULTY = "difficulty"
DIM_LANGUAGE = "language"
DIM_SAFETY = "safety"
DIM_REWARD = "reward"
DIMENSIONS = (DIM_TASK, DIM_QUALITY, DIM_DIFFICULTY, DIM_LANGUAGE, DIM_SAFETY, DIM_REWARD)

SCHEMA_FOR_DIMENSION = {
    DIM_TASK: "task_tags",
    DIM_QUALITY: "input_quality",
    DIM_DIFFICULTY: "difficulty",
    DIM_LANGUAGE: "language",
    DIM_SAFETY: "free",
    DIM_REWARD: "reward_score",
}

_HISTORY_SLOT = "{CONVERSATION_HISTORY}"
_BACKOFF_BASE = 0.5
_BACKOFF_CAP = 8.0
_sleep = time.sleep  # patched in tests


class JudgeError(RuntimeError):
    """Configuration or usage error in the judge layer."""


class TransportError(RuntimeError):
    """A chat-completion call failed at the HTTP or wire-format level."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class JudgeEndpoint:
    base_url: str
    model_name: str
    max_context_tokens: int = 32768
    max_retries: int = 2
    requests_per_second_cap: float = 8.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_context_tokens <= 0:
            raise JudgeError("max_context_tokens must be positive")
        if self.max_retries < 0:
            raise JudgeError("max_retries must be >= 0")
        if self.requests_per_second_cap <= 0:
            raise JudgeError("requests_per_second_cap must be positive")


@dataclass(frozen=True)
class AnnotationFailure:
    sample_id: str
    dimension: str
    attempts: int
    last_excerpt: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "dimension": self.dimension,
            "attempts": self.attempts,
            "last_excerpt": self.last_excerpt,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "AnnotationFailure":
        return cls(
            sample_id=str(record["sample_id"]),
            dimension=str(record["dimension"]),
            attempts=int(record["attempts"]),
            last_excerpt=str(record.get("last_excerpt", "")),
        )


class _DimensionFailed(Exception):
    def __init__(self, dimension: str, attempts: int, excerpt: str):
        super().__init__(f"{dimension} failed after {attempts} attempts")
        self.dimension = dimension
        self.attempts = attempts
        self.excerpt = excerpt


# --------------------------------------------------------------------------
# prompt templates

_TASK_TAG_LIST = """all_task_tags = [
    "Information seeking",  # Specific information or facts
    "Reasoning",            # Requires logical thinking
    "Planning",             # Assistance in creating plans and strategies
    "Editing",              # Editing, rephrasing, proofreading
    "Coding & Debugging",   # Writing, reviewing, or fixing code
    "Math",                 # Math concepts, problems, and equations
    "Role playing",         # The assistant is asked to adopt a persona
    "Data analysis",        # Analyzing data and statistics
    "Creative writing",     # Writing stories, poems, or other texts
    "Advice seeking",       # Guidance on personal or professional issues
    "Brainstorming",        # Generating ideas and creative thinking
    "Others"                # Queries that don't fit the above categories
]"""


def _template(intro: str, section: str, format_text: str, schema: str, example: str) -> str:
    return (
        "# Instruction\n"
        "\n"
        f"{intro}\n"
        "\n"
        "## Conversation\n"
        "```\n"
        f"{_HISTORY_SLOT}\n"
        "```\n"
        "\n"
        f"{section}\n"
        "\n"
        "## Output Format:\n"
        f"{format_text}\n"
        "\n"
        f"{schema}\n"
        "\n"
        "For instance:\n"
        "\n"
        "```json\n"
        f"{example}\n"
        "```\n"
        "\n"
        "Make sure to adhere to this formatting.\n"
    )


_INTRO_MT = "You will be given a conversation between a User and an AI assistant."
_INTRO_ST = (
    "You will be given the initial user query and the assistant's response from a conversation."
)

_TASK_SECTION_MT = (
    "## Tagging the Conversation\n"
    "Please analyze the conversation and select the most relevant task tag from the list below:\n"
    "\n" + _TASK_TAG_LIST
)
_TASK_SECTION_ST = (
    "## Tagging the Query\n"
    "Please analyze the user query and select the most relevant task tag from the list below:\n"
    "\n" + _TASK_TAG_LIST
)
_TASK_FORMAT = 'You can only select a single primary tag. Other tags can go into "other_tags".'
_TASK_SCHEMA = '{\n  "primary_tag": "<primary tag>",\n  "other_tags": ["<tag 1>", "<tag 2>", ...]\n}'
_TASK_EXAMPLE = '{\n    "primary_tag": "Information seeking",\n    "other_tags": ["Advice seeking", "Others"]\n}'

_QUALITY_RATINGS = """all_quality_ratings = [
    "very poor",   # Unclear, incoherent, or contradictory requests
    "poor",        # Missing key information or context
    "average",     # Understandable but underspecified
    "good",        # Clear, specific, mostly complete
    "excellent"    # Precise, complete, and well scoped
]"""
_QUALITY_SECTION_MT = (
    "## Rating the User Input\n"
    "Please assess the quality of the user's inputs across the conversation: how clear,\n"
    "specific, and complete the requests are. Select one rating from the list below:\n"
    "\n" + _QUALITY_RATINGS
)
_QUALITY_SECTION_ST = (
    "## Rating the User Query\n"
    "Please assess the quality of the user's query: how clear, specific, and complete\n"
    "the request is. Select one rating from the list below:\n"
    "\n" + _QUALITY_RATINGS
)
_QUALITY_FORMAT = "Select exactly one rating."
_QUALITY_SCHEMA = '{\n  "input_quality": "<rating>"\n}'
_QUALITY_EXAMPLE = '{\n    "input_quality": "good"\n}'

_DIFFICULTY_LEVELS = """all_difficulty_levels = [
    "very easy",
    "easy",
    "medium",
    "hard",
    "very hard"
]"""
_DIFFICULTY_SECTION_MT = (
    "## Rating the Difficulty\n"
    "Please judge how difficult the user's requests in this conversation are for an AI\n"
    "assistant to answer well. Select one level from the list below:\n"
    "\n" + _DIFFICULTY_LEVELS
)
_DIFFICULTY_SECTION_ST = (
    "## Rating the Difficulty\n"
    "Please judge how difficult the user's query is for an AI assistant to answer well.\n"
    "Select one level from the list below:\n"
    "\n" + _DIFFICULTY_LEVELS
)
_DIFFICULTY_FORMAT = "Select exactly one level."
_DIFFICULTY_SCHEMA = '{\n  "difficulty": "<level>"\n}'
_DIFFICULTY_EXAMPLE = '{\n    "difficulty": "medium"\n}'

_LANGUAGE_SECTION_MT = (
    "## Identifying the Language\n"
    "Please identify the primary language used by the user in this conversation and\n"
    'report it as a short lowercase code (for example "en", "de", "zh").'
)
_LANGUAGE_SECTION_ST = (
    "## Identifying the Language\n"
    "Please identify the language of the user's query and report it as a short\n"
    'lowercase code (for example "en", "de", "zh").'
)
_LANGUAGE_FORMAT = "Report exactly one language code."
_LANGUAGE_SCHEMA = '{\n  "language": "<code>"\n}'
_LANGUAGE_EXAMPLE = '{\n    "language": "en"\n}'

_REWARD_SECTION_MT = (
    "## Scoring the Conversation\n"
    "Please rate the overall quality of the assistant's responses across the entire\n"
    "conversation on a discrete scale from 0 to 5, where 0 means the responses fail\n"
    "the user entirely and 5 means consistently excellent, correct, and helpful\n"
    "responses."
)
_REWARD_SECTION_ST = (
    "## Scoring the Response\n"
    "Please rate the quality of the assistant's response to the user's query on a\n"
    "discrete scale from 0 to 5, where 0 means the response fails the user entirely\n"
    "and 5 means an excellent, correct, and helpful response."
)
_REWARD_FORMAT = "Report exactly one integer score between 0 and 5."
_REWARD_SCHEMA = '{\n  "score": <integer 0-5>\n}'
_REWARD_EXAMPLE = '{\n    "score": 4\n}'

_TEMPLATES: dict[tuple[str, str], str] = {
    (DIM_TASK, MULTI_TURN): _template(
        _INTRO_MT, _TASK_SECTION_MT, _TASK_FORMAT, _TASK_SCHEMA, _TASK_EXAMPLE
    ),
    (DIM_TASK, SINGLE_TURN): _template(
        _INTRO_ST, _TASK_SECTION_ST, _TASK_FORMAT, _TASK_SCHEMA, _TASK_EXAMPLE
    ),
    (DIM_QUALITY, MULTI_TURN): _template(
        _INTRO_MT, _QUALITY_SECTION_MT, _QUALITY_FORMAT, _QUALITY_SCHEMA, _QUALITY_EXAMPLE
    ),
    (DIM_QUALITY, SINGLE_TURN): _template(
        _INTRO_ST, _QUALITY_SECTION_ST, _QUALITY_FORMAT, _QUALITY_SCHEMA, _QUALITY_EXAMPLE
    ),
    (DIM_DIFFICULTY, MULTI_TURN): _template(
        _INTRO_MT, _DIFFICULTY_SECTION_MT, _DIFFICULTY_FORMAT, _DIFFICULTY_SCHEMA,
        _DIFFICULTY_EXAMPLE,
    ),
    (DIM_DIFFICULTY, SINGLE_TURN): _template(
        _INTRO_ST, _DIFFICULTY_SECTION_ST, _DIFFICULTY_FORMAT, _DIFFICULTY_SCHEMA,
        _DIFFICULTY_EXAMPLE,
    ),
    (DIM_LANGUAGE, MULTI_TURN): _template(
        _INTRO_MT, _LANGUAGE_SECTION_MT, _LANGUAGE_FORMAT, _LANGUAGE_SCHEMA, _LANGUAGE_EXAMPLE
    ),
    (DIM_LANGUAGE, SINGLE_TURN): _template(
        _INTRO_ST, _LANGUAGE_SECTION_ST, _LANGUAGE_FORMAT, _LANGUAGE_SCHEMA, _LANGUAGE_EXAMPLE
    ),
    (DIM_REWARD, MULTI_TURN): _template(
        _INTRO_MT, _REWARD_SECTION_MT, _REWARD_FORMAT, _REWARD_SCHEMA, _REWARD_EXAMPLE
    ),
    (DIM_REWARD, SINGLE_TURN): _template(
        _INTRO_ST, _REWARD_SECTION_ST, _REWARD_FORMAT, _REWARD_SCHEMA, _REWARD_EXAMPLE
    ),
}


def first_exchange(conversation: Conversation) -> Conversation:
    """The initial user query and the assistant's reply, system turns dropped."""
    user = next(m for m in conversation.messages if m.role == ROLE_USER)
    start = conversation.messages.index(user)
    assistant = next(
        m for m in conversation.messages[start:] if m.role == ROLE_ASSISTANT
    )
    return Conversation(messages=(user, assistant))


def render_prompt(dimension: str, conversation: Conversation, turn_type: str) -> str:
    """Fill the (dimension, turn_type) template with the serialized history.

    Single-turn prompts see only the first user/assistant exchange; multi-turn
    prompts see every message. The safety dimension has no template: the guard
    endpoint receives the serialized conversation as-is.
    """
    if turn_type not in TURN_TYPES:
        raise JudgeError(f"unknown turn_type: {turn_type!r}")
    scoped = first_exchange(conversation) if turn_type == SINGLE_TURN else conversation
    history = serialize_conversation(scoped)
    if dimension == DIM_SAFETY:
        return history
    template = _TEMPLATES.get((dimension, turn_type))
    if template is None:
        raise JudgeError(f"no template for dimension {dimension!r}")
    return template.replace(_HISTORY_SLOT, history)


# --------------------------------------------------------------------------
# response validators

def _lowered_keys(value: dict) -> dict:
    return {str(key).strip().lower(): item for key, item in value.items()}


def _require(value: dict, key: str):
    lowered = _lowered_keys(value)
    if key not in lowered:
        raise ValueError(f"missing key {key!r}")
    return lowered[key]


def _canon(raw, canonical: tuple[str, ...], what: str) -> str:
    if not isinstance(raw, str):
        raise ValueError(f"{what} must be a string")
    folded = raw.strip().lower()
    for name in canonical:
        if folded == name.lower():
            return name
    raise ValueError(f"unknown {what}: {raw!r}")


def _validate_task(value: dict) -> tuple[str, tuple[str, ...]]:
    primary = _canon(_require(value, "primary_tag"), TASK_CATEGORIES, "task tag")
    raw_others = _lowered_keys(value).get("other_tags", [])
    if raw_others is None:
        raw_others = []
    if not isinstance(raw_others, list):
        raise ValueError("other_tags must be a list")
    others = []
    for raw in raw_others:
        tag = _canon(raw, TASK_CATEGORIES, "task tag")
        if tag != primary and tag not in others:
            others.append(tag)
    return primary, tuple(others)


def _validate_quality(value: dict) -> str:
    return _canon(_require(value, "input_quality"), INPUT_QUALITIES, "input quality")


def _validate_difficulty(value: dict) -> str:
    return _canon(_require(value, "difficulty"), DIFFICULTIES, "difficulty")


_LANGUAGE_OK = "abcdefghijklmnopqrstuvwxyz0123456789-_"


def _validate_language(value: dict) -> str:
    raw = _require(value, "language")
    if not isinstance(raw, str):
        raise ValueError("language must be a string")
    code = raw.strip().lower()
    if not 0 < len(code) <= 16 or any(ch not in _LANGUAGE_OK for ch in code):
        raise ValueError(f"implausible language code: {raw!r}")
    return code


def _validate_judge_score(value: dict) -> int:
    raw = _require(value, "score")
    if isinstance(raw, bool):
        raise ValueError("score must be an integer")
    if isinstance(raw, float):
        if not raw.is_integer():
            raise ValueError(f"score must be an integer: {raw!r}")
        raw = int(raw)
    if not isinstance(raw, int):
        raise ValueError("score must be an integer")
    if not 0 <= raw <= 5:
        raise ValueError(f"score out of range 0-5: {raw}")
    return raw


def _validate_rm_score(value: dict) -> float:
    raw = _require(value, "score")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ValueError("score must be a number")
    score = float(raw)
    if not math.isfinite(score):
        raise ValueError("score must be finite")
    return score


def _parse_safety(content: str) -> str:
    """Guard responses: a JSON object with a safety/label key, or bare text."""
    outcome = salvage(content, SalvageContext("free"))
    if outcome.ok:
        lowered = _lowered_keys(outcome.value)
        raw = lowered.get("safety", lowered.get("label"))
        if raw is not None:
            return _canon(raw, SAFETY_FLAGS, "safety flag")
        raise ValueError("guard object lacks a safety/label key")
    stripped = content.strip()
    token = stripped.split()[0].strip('."\'').lower() if stripped else ""
    for name in SAFETY_FLAGS:
        if token == name:
            return name
    raise ValueError(f"unrecognized guard verdict: {content[:64]!r}")


# --------------------------------------------------------------------------
# transports


class RateLimiter:
    """Serializes request starts so the observed rate never exceeds the cap."""

    def __init__(self, requests_per_second: float):
        if requests_per_second <= 0:
            raise JudgeError("rate cap must be positive")
        self._interval = 1.0 / requests_per_second
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if wait > 0:
            _sleep(wait)


class HttpTransport:
    """OpenAI-compatible chat-completions client over httpx."""

    def __init__(self, endpoint: JudgeEndpoint, api_key: str | None = None, timeout: float = 60.0):
        self._endpoint = endpoint
        self._url = endpoint.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self._endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self._endpoint.temperature,
        }
        try:
            response = self._client.post(self._url, json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self._url} failed: {exc}") from exc
        if response.status_code >= 400:
            raise TransportError(
                f"HTTP {response.status_code} from {self._url}", status=response.status_code
            )
        try:
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc

    def close(self) -> None:
        self._client.close()


_STUB_KINDS = ("judge", "guard", "reward-model", "reference")


def _digest(prompt: str) -> bytes:
    return hashlib.sha256(prompt.encode("utf-8")).digest()


def _failme(prompt: str, dimension: str) -> bool:
    return f"FAILME:{dimension}" in prompt


class StubTransport:
    """Deterministic in-process endpoint for tests and offline runs.

    Responses are a pure function of the prompt text. The judge stub infers
    which dimension is being asked from the schema embedded in the prompt;
    the guard stub always answers the safety schema. With noise enabled the
    JSON is wrapped in salvageable clutter (fences, prose, doubled braces)
    chosen deterministically per prompt.
    """

    def __init__(self, kind: str = "judge", noise: bool = False):
        if kind not in _STUB_KINDS:
            raise JudgeError(f"unknown stub kind: {kind!r}")
        self.kind = kind
        self.noise = noise

    def complete(self, prompt: str) -> str:
        digest = _digest(prompt)
        if self.kind == "guard":
            if _failme(prompt, DIM_SAFETY):
                return "<GUARD ERROR"
            flag = "safe" if digest[0] % 8 else "unsafe"
            return self._wrap(json.dumps({"safety": flag}), digest)
        if self.kind == "reference":
            return f"stub baseline response {digest.hex()[:12]}"
        if self.kind == "reward-model":
            if _failme(prompt, DIM_REWARD):
                return "no score today"
            score = int.from_bytes(digest[:4], "big") % 1001 / 100.0 - 5.0
            return self._wrap(json.dumps({"score": score}), digest)
        return self._judge_payload(prompt, digest)

    def _judge_payload(self, prompt: str, digest: bytes) -> str:
        if '"primary_tag"' in prompt:
            if _failme(prompt, DIM_TASK):
                return "<Information"
            primary = TASK_CATEGORIES[digest[0] % len(TASK_CATEGORIES)]
            others = []
            if digest[1] % 3 == 0:
                extra = TASK_CATEGORIES[digest[2] % len(TASK_CATEGORIES)]
                if extra != primary:
                    others.append(extra)
            return self._wrap(
                json.dumps({"primary_tag": primary, "other_tags": others}), digest
            )
        if '"input_quality"' in prompt:
            if _failme(prompt, DIM_QUALITY):
                return "<INPUT QUALITY>"
            return self._wrap(
                json.dumps({"input_quality": INPUT_QUALITIES[digest[0] % 5]}), digest
            )
        if '"difficulty"' in prompt:
            if _failme(prompt, DIM_DIFFICULTY):
                return "<DIFFICULTY>"
            return self._wrap(json.dumps({"difficulty": DIFFICULTIES[digest[0] % 5]}), digest)
        if '"language"' in prompt:
            if _failme(prompt, DIM_LANGUAGE):
                return "<LANGUAGE>"
            return self._wrap(json.dumps({"language": "en"}), digest)
        if '"score"' in prompt:
            if _failme(prompt, DIM_REWARD):
                return "<SCORE>"
            return self._wrap(json.dumps({"score": digest[0] % 6}), digest)
        raise TransportError("stub judge could not infer the requested schema")

    def _wrap(self, body: str, digest: bytes) -> str:
        if not self.noise:
            return body
        mode = digest[3] % 4
        if mode == 1:
            return f"```json\n{body}\n```"
        if mode == 2:
            return f"Sure! Here is the annotation you asked for:\n{body}\nHope this helps."
        if mode == 3:
            return "{" + body + "}"
        return body

    def close(self) -> None:
        pass


def build_transport(endpoint: JudgeEndpoint, api_key: str | None = None, timeout: float = 60.0):
    """HttpTransport for http(s) URLs, StubTransport for stub:// URLs."""
    parsed = urlparse(endpoint.base_url)
    if parsed.scheme == "stub":
        noise = parse_qs(parsed.query).get("noise", ["0"])[0] not in ("0", "", "false")
        return StubTransport(kind=parsed.netloc or "judge", noise=noise)
    if parsed.scheme in ("http", "https"):
        return HttpTransport(endpoint, api_key=api_key, timeout=timeout)
    raise JudgeError(f"unsupported endpoint scheme: {endpoint.base_url!r}")


# --------------------------------------------------------------------------
# reward pathway plumbing


class StubRewardScorer:
    """Deterministic stand-in for a reward-model endpoint."""

    def score(self, instruction: str, response: str) -> float:
        digest = _digest(instruction + "\x1f" + response)
        if _failme(instruction, DIM_REWARD):
            raise TransportError("stub reward scorer forced failure")
        return int.from_bytes(digest[:4], "big") % 1001 / 100.0 - 5.0


class StubBaselineGenerator:
    """Deterministic stand-in for the reference model."""

    def generate(self, instruction: str) -> str:
        return f"stub baseline response {_digest(instruction).hex()[:12]}"


class ChatRewardScorer:
    """Scores an (instruction, response) pair through a chat endpoint.

    Asks for a {"score": <number>} object and salvages the reply; transport
    errors and malformed replies surface as TransportError so the caller's
    retry loop owns the policy.
    """

    def __init__(self, transport, limiter: RateLimiter | None = None):
        self._transport = transport
        self._limiter = limiter

    @staticmethod
    def _prompt(instruction: str, response: str) -> str:
        return (
            "# Instruction\n\nRate the quality of the assistant response below, relative to\n"
            "what an excellent assistant would produce for this user query. Higher is better.\n"
            "\n## Query\n```\n" + instruction + "\n```\n"
            "\n## Response\n```\n" + response + "\n```\n\n"
            '## Output Format:\nReport one number.\n\n{\n  "score": <number>\n}\n\n'
            'For instance:\n\n```json\n{\n    "score": 1.25\n}\n```\n\n'
            "Make sure to adhere to this formatting.\n"
        )

    def score(self, instruction: str, response: str) -> float:
        prompt = self._prompt(instruction, response)
        if self._limiter is not None:
            self._limiter.acquire()
        content = self._transport.complete(prompt)
        outcome = salvage(content, SalvageContext("reward_score"))
        if not outcome.ok:
            raise TransportError(f"unscoreable reward reply: {outcome.raw_excerpt[:64]!r}")
        try:
            return _validate_rm_score(outcome.value)
        except ValueError as exc:
            raise TransportError(str(exc)) from exc


class ChatBaselineGenerator:
    """Generates the baseline response with the reference chat endpoint."""

    def __init__(self, transport, limiter: RateLimiter | None = None):
        self._transport = transport
        self._limiter = limiter

    def generate(self, instruction: str) -> str:
        if self._limiter is not None:
            self._limiter.acquire()
        return self._transport.complete(instruction)


def score_single_turn(conversation: Conversation, scorer, baseline_generator) -> DeltaReward:
    """Delta reward: dataset response score minus baseline response score."""
    exchange = first_exchange(conversation)
    instruction = exchange.messages[0].content
    response = exchange.messages[1].content
    r_star = scorer.score(instruction, response)
    baseline = baseline_generator.generate(instruction)
    r_base = scorer.score(instruction, baseline)
    return DeltaReward.from_scores(r_star, r_base)


def score_multi_turn(score: int) -> JudgeReward:
    """Wrap a validated 0-5 judge score."""
    return JudgeReward(score=score)


# --------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class EndpointSet:
    """Which endpoints serve which dimension.

    guard is optional: without one, safety is recorded as "unknown" and no
    call is made. reward_model is optional: without one, single-turn samples
    degrade to the 0-5 judge pathway. reference defaults to the judge
    endpoint when a reward model is configured without one.
    """

    judge: JudgeEndpoint
    guard: JudgeEndpoint | None = None
    reward_model: JudgeEndpoint | None = None
    reference: JudgeEndpoint | None = None


_VALIDATORS: dict[str, Callable] = {
    DIM_TASK: _validate_task,
    DIM_QUALITY: _validate_quality,
    DIM_DIFFICULTY: _validate_difficulty,
    DIM_LANGUAGE: _validate_language,
    DIM_REWARD: _validate_judge_score,
}


class Annotator:
    """Drives the six judged dimensions for each sample.

    Thread-safe: annotate_corpus fans samples out over a worker pool while a
    shared per-endpoint rate limiter caps the request rate and a bounded
    window of futures restores input order on the way out.
    """

    def __init__(
        self,
        endpoints: EndpointSet,
        *,
        workers: int = 1,
        api_keys: dict[str, str] | None = None,
        timeout: float = 60.0,
    ):
        if workers < 1:
            raise JudgeError("workers must be >= 1")
        self.endpoints = endpoints
        self.workers = workers
        keys = api_keys or {}
        self._judge = build_transport(endpoints.judge, keys.get("judge"), timeout)
        self._limiters = {"judge": RateLimiter(endpoints.judge.requests_per_second_cap)}
        self._transports = [self._judge]
        self._guard = None
        if endpoints.guard is not None:
            self._guard = build_transport(endpoints.guard, keys.get("guard"), timeout)
            self._limiters["guard"] = RateLimiter(endpoints.guard.requests_per_second_cap)
            self._transports.append(self._guard)
        self._scorer = None
        self._baseline = None
        if endpoints.reward_model is not None:
            rm_transport = build_transport(
                endpoints.reward_model, keys.get("reward_model"), timeout
            )
            rm_limiter = RateLimiter(endpoints.reward_model.requests_per_second_cap)
            self._limiters["reward_model"] = rm_limiter
            self._transports.append(rm_transport)
            if isinstance(rm_transport, StubTransport):
                self._scorer = StubRewardScorer()
            else:
                self._scorer = ChatRewardScorer(rm_transport, rm_limiter)
            reference = endpoints.reference or endpoints.judge
            ref_transport = build_transport(reference, keys.get("reference"), timeout)
            ref_limiter = RateLimiter(reference.requests_per_second_cap)
            self._limiters["reference"] = ref_limiter
            self._transports.append(ref_transport)
            if isinstance(ref_transport, StubTransport):
                self._baseline = StubBaselineGenerator()
            else:
                self._baseline = ChatBaselineGenerator(ref_transport, ref_limiter)

    # -- single dimension ---------------------------------------------------

    def _judged_call(
        self,
        dimension: str,
        prompt: str,
        endpoint: JudgeEndpoint,
        transport,
        limiter: RateLimiter,
    ):
        """One dimension, with retries: transport errors back off, salvage or
        validation misses re-prompt immediately; both consume attempts."""
        schema = SCHEMA_FOR_DIMENSION[dimension]
        validate = _VALIDATORS.get(dimension)
        prompt_tokens = len(prompt.split())
        if prompt_tokens > endpoint.max_context_tokens:
            raise _DimensionFailed(
                dimension,
                0,
                f"prompt of {prompt_tokens} whitespace tokens exceeds "
                f"max_context_tokens={endpoint.max_context_tokens}",
            )
        excerpt = ""
        attempts = 0
        for attempt in range(1, endpoint.max_retries + 2):
            attempts = attempt
            limiter.acquire()
            try:
                content = transport.complete(prompt)
            except TransportError as exc:
                excerpt = f"transport error: {exc}"
                if attempt <= endpoint.max_retries:
                    _sleep(min(_BACKOFF_BASE * 2 ** (attempt - 1), _BACKOFF_CAP))
                continue
            if dimension == DIM_SAFETY:
                try:
                    return _parse_safety(content)
                except ValueError as exc:
                    excerpt = content[:256] or str(exc)
                    continue
            outcome = salvage(content, SalvageContext(schema))
            if not outcome.ok:
                excerpt = outcome.raw_excerpt
                continue
            try:
                return validate(outcome.value)
            except ValueError as exc:
                excerpt = f"{exc}; raw: {outcome.raw_excerpt[:128]}"
                continue
        raise _DimensionFailed(dimension, attempts, excerpt)

    def _judge_dimension(self, dimension: str, conversation: Conversation, turn_type: str):
        prompt = render_prompt(dimension, conversation, turn_type)
        return self._judged_call(
            dimension, prompt, self.endpoints.judge, self._judge, self._limiters["judge"]
        )

    def _safety(self, conversation: Conversation, turn_type: str) -> str:
        if self._guard is None:
            return SAFETY_UNKNOWN
        prompt = render_prompt(DIM_SAFETY, conversation, turn_type)
        return self._judged_call(
            DIM_SAFETY, prompt, self.endpoints.guard, self._guard, self._limiters["guard"]
        )

    def _reward(self, conversation: Conversation, turn_type: str):
        if turn_type == SINGLE_TURN and self._scorer is not None:
            endpoint = self.endpoints.reward_model
            excerpt = ""
            attempts = 0
            for attempt in range(1, endpoint.max_retries + 2):
                attempts = attempt
                try:
                    return score_single_turn(conversation, self._scorer, self._baseline)
                except TransportError as exc:
                    excerpt = f"transport error: {exc}"
                    if attempt <= endpoint.max_retries:
                        _sleep(min(_BACKOFF_BASE * 2 ** (attempt - 1), _BACKOFF_CAP))
            raise _DimensionFailed(DIM_REWARD, attempts, excerpt)
        score = self._judge_dimension(DIM_REWARD, conversation, turn_type)
        return JudgeReward(score=score)

    # -- whole samples ------------------------------------------------------

    def annotate_sample(self, sample: Sample) -> AnnotatedSample | AnnotationFailure:
        conversation = sample.conversation
        turn_type = classify_turn_type(conversation)
        try:
            primary, others = self._judge_dimension(DIM_TASK, conversation, turn_type)
            quality = self._judge_dimension(DIM_QUALITY, conversation, turn_type)
            difficulty = self._judge_dimension(DIM_DIFFICULTY, conversation, turn_type)
            language = self._judge_dimension(DIM_LANGUAGE, conversation, turn_type)
            safety = self._safety(conversation, turn_type)
            reward = self._reward(conversation, turn_type)
        except _DimensionFailed as failed:
            logger.warning(
                "sample %s failed on %s after %d attempts",
                sample.id, failed.dimension, failed.attempts,
            )
            return AnnotationFailure(
                sample_id=sample.id,
                dimension=failed.dimension,
                attempts=failed.attempts,
                last_excerpt=failed.excerpt,
            )
        annotation = Annotation(
            task_category=primary,
            other_task_tags=others,
            input_quality=quality,
            difficulty=difficulty,
            language=language,
            safety=safety,
            reward=reward,
            turn_type=turn_type,
        )
        return AnnotatedSample(
            sample=sample, annotation=annotation, token_count=count_tokens(conversation)
        )

    def annotate_corpus(
        self, samples: Iterable[Sample], *, skip_ids: frozenset[str] | set[str] = frozenset()
    ) -> Iterator[AnnotatedSample | AnnotationFailure]:
        """Annotate in input order; already-processed ids are skipped."""
        if self.workers == 1:
            for sample in samples:
                if sample.id in skip_ids:
                    continue
                yield self.annotate_sample(sample)
            return
        window_cap = self.workers * 4
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            window: deque = deque()
            for sample in samples:
                if sample.id in skip_ids:
                    continue
                window.append(pool.submit(self.annotate_sample, sample))
                if len(window) >= window_cap:
                    yield window.popleft().result()
            while window:
                yield window.popleft().result()

    def close(self) -> None:
        for transport in self._transports:
            transport.close()
