"""Data model and streaming I/O behavior."""

from __future__ import annotations

import json
import random

import pytest

from mixcurate import (
    AnnotatedSample,
    Conversation,
    CorpusRecordError,
    Message,
    classify_turn_type,
    count_tokens,
    emit_corpus,
    load_annotated_corpus,
    load_corpus,
    serialize_conversation,
)
from mixcurate.corpus import (
    annotated_from_record,
    annotated_to_record,
    record_line,
    reward_from_dict,
    reward_to_dict,
    sample_from_record,
    whitespace_tokens,
)
from mixcurate import DeltaReward, JudgeReward

from _helpers import conv, conv_of_length, mk_annotated, mk_sample


def test_conversation_requires_user_and_assistant():
    with pytest.raises(CorpusRecordError):
        Conversation(messages=(Message("user", "hi"),))
    with pytest.raises(CorpusRecordError):
        Conversation(messages=(Message("system", "x"), Message("assistant", "hi")))


def test_conversation_must_end_with_assistant():
    with pytest.raises(CorpusRecordError):
        Conversation(messages=(Message("user", "a"), Message("assistant", "b"), Message("user", "c")))


def test_consecutive_same_role_rejected():
    with pytest.raises(CorpusRecordError):
        Conversation(
            messages=(Message("user", "a"), Message("user", "b"), Message("assistant", "c"))
        )


def test_unknown_role_rejected():
    with pytest.raises(CorpusRecordError):
        Message("tool", "output")


def test_system_messages_retained_anywhere():
    prefixed = Conversation(
        messages=(Message("system", "s"), Message("user", "u"), Message("assistant", "a"))
    )
    assert prefixed.messages[0].role == "system"
    mid = Conversation(
        messages=(Message("user", "u"), Message("system", "s"), Message("assistant", "a"))
    )
    assert len(mid) == 3


def test_assistant_first_conversation_allowed():
    opener = Conversation(
        messages=(
            Message("assistant", "welcome"),
            Message("user", "q"),
            Message("assistant", "a"),
        )
    )
    assert classify_turn_type(opener) == "multi_turn"


def test_empty_content_rejected_except_system():
    with pytest.raises(CorpusRecordError):
        Message("user", "   ")
    assert Message("system", "").content == ""


def test_turn_type_is_message_count():
    assert classify_turn_type(conv_of_length(2)) == "single_turn"
    assert classify_turn_type(conv_of_length(4)) == "multi_turn"
    with_system = Conversation(
        messages=(Message("system", "s"), Message("user", "u"), Message("assistant", "a"))
    )
    assert classify_turn_type(with_system) == "multi_turn"


def test_token_count_is_whitespace_tokens_over_all_messages():
    c = conv("one two three", "four five")
    assert whitespace_tokens("one two three") == 3
    assert count_tokens(c) == 5


def test_serialize_conversation_labels_roles():
    text = serialize_conversation(conv("hi there", "hello"))
    assert "user: hi there" in text
    assert "assistant: hello" in text


def test_from_value_wire_format_maps_roles():
    record = {
        "id": "w1",
        "source_dataset": "d",
        "source_subset": "s",
        "conversations": [
            {"from": "human", "value": "hi"},
            {"from": "gpt", "value": "hello"},
        ],
    }
    sample = sample_from_record(record)
    assert [m.role for m in sample.conversation.messages] == ["user", "assistant"]
    assert [m.content for m in sample.conversation.messages] == ["hi", "hello"]


def test_role_content_wire_format():
    record = {
        "id": "w2",
        "source_dataset": "d",
        "source_subset": "s",
        "messages": [
            {"role": "user", "content": "hi"},
            {"role": "assistant", "content": "hello"},
        ],
    }
    sample = sample_from_record(record)
    assert sample.conversation.messages[1].content == "hello"


def test_load_corpus_auto_detects_both_formats(tmp_path):
    path = tmp_path / "mixed.jsonl"
    rows = [
        {
            "id": "a",
            "conversations": [{"from": "human", "value": "q"}, {"from": "gpt", "value": "r"}],
        },
        {
            "id": "b",
            "messages": [{"role": "user", "content": "q"}, {"role": "assistant", "content": "r"}],
        },
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    samples = list(load_corpus(path, default_dataset="d", default_subset="s"))
    assert [s.id for s in samples] == ["a", "b"]
    assert all(s.source_dataset == "d" for s in samples)


def test_load_corpus_reports_rejects_with_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = {
        "id": "ok",
        "source_dataset": "d",
        "source_subset": "s",
        "messages": [{"role": "user", "content": "q"}, {"role": "assistant", "content": "r"}],
    }
    lines = [
        "not json at all",
        json.dumps(good),
        json.dumps({"id": "noconv", "source_dataset": "d", "source_subset": "s"}),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    diagnostics = []
    kept = list(load_corpus(path, default_dataset="d", on_reject=diagnostics.append))
    assert [s.id for s in kept] == ["ok"]
    assert [d.line_number for d in diagnostics] == [1, 3]
    assert all(d.reason for d in diagnostics)


def test_load_corpus_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "dup.jsonl"
    row = {
        "id": "same",
        "source_dataset": "d",
        "source_subset": "s",
        "messages": [{"role": "user", "content": "q"}, {"role": "assistant", "content": "r"}],
    }
    path.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n", encoding="utf-8")
    diagnostics = []
    kept = list(load_corpus(path, on_reject=diagnostics.append))
    assert len(kept) == 1
    assert len(diagnostics) == 1
    assert diagnostics[0].record_id == "same"


def test_annotated_round_trip_both_reward_kinds(tmp_path):
    samples = [
        mk_annotated("d1", delta=-0.75, with_tokens=True),
        mk_annotated("d2", single_turn=False, score=3, quality="good", tags=("Math",)),
    ]
    path = tmp_path / "corpus.jsonl"
    written = emit_corpus(samples, path)
    assert written == 2
    back = list(load_annotated_corpus(path))
    assert back == samples


def test_record_line_is_stable():
    item = mk_annotated("stable", delta=1.25)
    assert record_line(item) == record_line(item)
    assert json.loads(record_line(item)) == annotated_to_record(item)


def test_record_without_annotation_loads_as_none():
    record = annotated_to_record(mk_annotated("n1"))
    record.pop("annotation")
    loaded = annotated_from_record(record)
    assert loaded.annotation is None
    record["annotation"] = None
    assert annotated_from_record(record).annotation is None


def test_turn_type_must_match_conversation():
    single = mk_annotated("t1")
    multi = mk_annotated("t2", single_turn=False)
    with pytest.raises(CorpusRecordError):
        AnnotatedSample(sample=single.sample, annotation=multi.annotation)


def test_token_count_must_cover_message_count():
    item = mk_annotated("t3")
    with pytest.raises(CorpusRecordError):
        AnnotatedSample(sample=item.sample, annotation=item.annotation, token_count=1)


def test_reward_dict_round_trip():
    delta = DeltaReward.from_scores(2.5, 1.0)
    judge = JudgeReward(score=0)
    assert reward_from_dict(reward_to_dict(delta)) == delta
    assert reward_from_dict(reward_to_dict(judge)) == judge


def test_delta_reward_checks_consistency():
    with pytest.raises(CorpusRecordError):
        DeltaReward(r_star=2.0, r_base=1.0, delta=0.5)


def test_judge_reward_range():
    for bad in (-1, 6):
        with pytest.raises(CorpusRecordError):
            JudgeReward(score=bad)


def test_annotation_validates_enums():
    with pytest.raises(CorpusRecordError):
        mk_annotated("e1", category="Poetry")
    with pytest.raises(CorpusRecordError):
        mk_annotated("e2", quality="superb")
    with pytest.raises(CorpusRecordError):
        mk_annotated("e3", safety="maybe")


def test_round_trip_fuzz_small():
    rng = random.Random(11)
    from _helpers import random_annotated_corpus

    originals = random_annotated_corpus(rng, 60, with_tokens=True)
    lines = [record_line(s) for s in originals]
    back = [annotated_from_record(json.loads(line)) for line in lines]
    assert back == originals
