"""Shared builders for the test suite.

Everything here constructs real package objects; no test logic lives in
this module.
"""

from __future__ import annotations

import random

from mixcurate import (
    AnnotatedSample,
    Annotation,
    Conversation,
    DeltaReward,
    JudgeReward,
    Message,
    Sample,
    count_tokens,
    emit_corpus,
)
from mixcurate.corpus import (
    DIFFICULTIES,
    INPUT_QUALITIES,
    MULTI_TURN,
    SINGLE_TURN,
    TASK_CATEGORIES,
)

USER_LINE = "Please explain the difference between a list and a tuple."
ASSISTANT_LINE = "Lists are mutable, tuples are not; tuples can be dict keys."


def conv(*contents: str) -> Conversation:
    """Build an alternating user/assistant conversation from message texts."""
    messages = []
    for i, text in enumerate(contents):
        role = "user" if i % 2 == 0 else "assistant"
        messages.append(Message(role=role, content=text))
    return Conversation(messages=tuple(messages))


def conv_of_length(n_messages: int, stamp: str = "") -> Conversation:
    parts = []
    for i in range(n_messages):
        base = USER_LINE if i % 2 == 0 else ASSISTANT_LINE
        parts.append(f"{base} {stamp} #{i}".strip())
    return conv(*parts)


def mk_sample(
    sid: str,
    *,
    dataset: str = "unit",
    subset: str = "main",
    n_messages: int = 2,
    stamp: str = "",
) -> Sample:
    return Sample(
        id=sid,
        source_dataset=dataset,
        source_subset=subset,
        conversation=conv_of_length(n_messages, stamp=stamp or sid),
    )


def mk_annotated(
    sid: str,
    *,
    category: str = "Reasoning",
    quality: str = "excellent",
    difficulty: str = "medium",
    language: str = "en",
    safety: str = "safe",
    reward: DeltaReward | JudgeReward | None = None,
    delta: float | None = None,
    score: int | None = None,
    single_turn: bool = True,
    dataset: str = "unit",
    subset: str = "main",
    tags: tuple[str, ...] = (),
    with_tokens: bool = False,
    stamp: str = "",
) -> AnnotatedSample:
    """Build a fully annotated sample.

    Pass exactly one of reward, delta (single-turn delta reward), or
    score (judge reward). single_turn controls the conversation length
    so the turn type always matches the transcript.
    """
    if reward is None:
        if delta is not None:
            reward = DeltaReward.from_scores(delta, 0.0)
        elif score is not None:
            reward = JudgeReward(score=score)
        else:
            reward = DeltaReward.from_scores(1.0, 0.0) if single_turn else JudgeReward(score=5)
    sample = mk_sample(
        sid, dataset=dataset, subset=subset, n_messages=2 if single_turn else 4, stamp=stamp
    )
    annotation = Annotation(
        task_category=category,
        other_task_tags=tags,
        input_quality=quality,
        difficulty=difficulty,
        language=language,
        safety=safety,
        reward=reward,
        turn_type=SINGLE_TURN if single_turn else MULTI_TURN,
    )
    token_count = count_tokens(sample.conversation) if with_tokens else None
    return AnnotatedSample(sample=sample, annotation=annotation, token_count=token_count)


def random_annotated_corpus(
    rng: random.Random,
    n: int,
    *,
    dataset: str = "synth",
    subsets: tuple[str, ...] = ("train", "extra"),
    degraded_share: float = 0.0,
    with_tokens: bool = False,
) -> list[AnnotatedSample]:
    """Generate a synthetic annotated corpus with grid-valued rewards.

    Single-turn deltas land on a 0.25 grid in [-2, 5] so quantile
    thresholds are exactly representable; multi-turn rewards are judge
    scores 0..5. A degraded_share of single-turn samples carry judge
    rewards instead of deltas.
    """
    out = []
    for i in range(n):
        single_turn = rng.random() < 0.7
        quality = rng.choice(INPUT_QUALITIES)
        if single_turn:
            if rng.random() < degraded_share:
                reward: DeltaReward | JudgeReward = JudgeReward(score=rng.randrange(6))
            else:
                reward = DeltaReward.from_scores(rng.randrange(-8, 21) * 0.25, 0.0)
        else:
            reward = JudgeReward(score=rng.randrange(6))
        out.append(
            mk_annotated(
                f"{dataset}-{i:05d}",
                category=rng.choice(TASK_CATEGORIES),
                quality=quality,
                difficulty=rng.choice(DIFFICULTIES),
                language=rng.choice(("en", "zh", "es")),
                safety=rng.choice(("safe", "safe", "safe", "unsafe", "unknown")),
                reward=reward,
                single_turn=single_turn,
                dataset=dataset,
                subset=rng.choice(subsets),
                with_tokens=with_tokens,
            )
        )
    return out


def write_corpus(path, samples) -> str:
    emit_corpus(samples, path)
    return str(path)
