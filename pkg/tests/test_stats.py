"""Corpus profiling: counters, token bins, quantiles, report rendering."""

from __future__ import annotations

import json
import math
import random

import pytest

from mixcurate import AnnotatedSample, build_report, compute_quantiles, diff_reports, profile_corpus
from mixcurate.stats import (
    MISSING,
    QUANTILE_METHODS,
    TOKEN_BIN_CEIL,
    TOKEN_BIN_COUNT,
    TOKEN_BIN_FLOOR,
    MixtureReport,
    TokenBins,
    bin_token_lengths,
    render_markdown,
    report_json,
    token_bin_edges,
)

from _helpers import mk_annotated, random_annotated_corpus
from _oracles import ref_quantile


def test_report_counts_every_axis():
    items = [
        mk_annotated("a", category="Math", quality="excellent", difficulty="hard",
                     language="en", safety="safe", delta=1.0, subset="train"),
        mk_annotated("b", category="Math", quality="good", difficulty="easy",
                     language="zh", safety="unsafe", delta=-1.0, subset="train"),
        mk_annotated("c", category="Planning", quality="good", difficulty="easy",
                      language="en", safety="safe", score=5, single_turn=False, subset="extra"),
    ]
    report = build_report(items)
    assert report.total == 3
    assert report.by_task == {"Math": 2, "Planning": 1}
    assert report.by_turn == {"single_turn": 2, "multi_turn": 1}
    assert report.by_quality == {"excellent": 1, "good": 2}
    assert report.by_difficulty == {"hard": 1, "easy": 2}
    assert report.by_language == {"en": 2, "zh": 1}
    assert report.by_safety == {"safe": 2, "unsafe": 1}
    assert report.by_source_subset == {"train": 2, "extra": 1}
    assert report.by_quality_and_turn["good"] == {"single_turn": 1, "multi_turn": 1}
    assert report.by_task_and_turn["Math"] == {"single_turn": 2}
    assert report.reward_variant_counts == {"delta": 2, "judge_multi_turn": 1}


def test_unannotated_samples_counted_as_missing():
    bare = AnnotatedSample(sample=mk_annotated("u").sample, annotation=None)
    report = build_report([bare])
    assert report.total == 1
    assert report.by_task == {MISSING: 1}
    assert report.by_quality == {MISSING: 1}
    assert report.reward_variant_counts == {MISSING: 1}


def test_degraded_judge_reward_counted_but_not_binned():
    degraded = mk_annotated("g", score=4, single_turn=True)
    report = build_report([degraded])
    assert report.reward_variant_counts == {"judge_single_turn": 1}
    assert report.reward_histogram_st == {}
    assert report.reward_histogram_mt == {}


def test_reward_histograms_clamp_and_bucket():
    items = [
        mk_annotated("a", delta=-20.0),
        mk_annotated("b", delta=0.4),
        mk_annotated("c", delta=13.0),
        mk_annotated("d", single_turn=False, score=5),
        mk_annotated("e", single_turn=False, score=0),
    ]
    report = build_report(items)
    assert report.reward_histogram_st == {"underflow": 1, "0": 1, "overflow": 1}
    assert report.reward_histogram_mt == {"5": 1, "0": 1}


def test_token_bin_edges_geometry():
    edges = token_bin_edges()
    assert len(edges) == TOKEN_BIN_COUNT + 1
    assert edges[0] == TOKEN_BIN_FLOOR == 16.0
    assert edges[-1] == TOKEN_BIN_CEIL == 8192.0
    # Frozen values computed from 16 * 2 ** (9 * i / 40) ahead of time.
    assert edges[20] == pytest.approx(362.03867196751236, abs=0.0)
    ratio = 2 ** (9 / 40)
    assert ratio == pytest.approx(1.1687772485612455, abs=0.0)
    for lo, hi in zip(edges, edges[1:]):
        assert hi / lo == pytest.approx(ratio, rel=1e-13)


def test_token_bins_left_closed_membership():
    bins = TokenBins(edges=token_bin_edges())
    for value in (15, 16, 17, 8191, 8192, 8193):
        bins.add(value)
    assert bins.underflow == 1
    assert bins.overflow == 2
    assert bins.counts[0] == 2
    assert bins.counts[-1] == 1
    assert bins.present == 6


def test_token_bins_conserve_counts():
    rng = random.Random(3)
    bins = TokenBins(edges=token_bin_edges())
    n = 5000
    for _ in range(n):
        bins.add(rng.randrange(1, 20000))
    assert sum(bins.counts) + bins.underflow + bins.overflow == n


def test_samples_without_token_counts_are_skipped_in_bins():
    items = [mk_annotated("a", with_tokens=True), mk_annotated("b")]
    bins = bin_token_lengths(items)
    assert bins.present == 1


def test_profile_corpus_matches_parts():
    rng = random.Random(7)
    items = random_annotated_corpus(rng, 200, with_tokens=True)
    report, bins = profile_corpus(items)
    assert report == build_report(items)
    assert bins == bin_token_lengths(items)


def test_quantiles_frozen_oracle():
    values = [-2, -1, 0, 1, 2, 3, 4, 5]
    assert compute_quantiles(values, [0.25, 0.5, 0.75]) == [-0.25, 1.5, 3.25]


def test_quantiles_match_numpy_linear():
    rng = random.Random(17)
    for _ in range(50):
        data = [rng.uniform(-10, 10) for _ in range(rng.randrange(1, 400))]
        ours = compute_quantiles(data, [0.25, 0.5, 0.75])
        for q, mine in zip((0.25, 0.5, 0.75), ours):
            assert abs(mine - ref_quantile(data, q)) < 1e-9


def test_quantile_methods_monotone_bounded_members():
    rng = random.Random(29)
    for method in QUANTILE_METHODS:
        for _ in range(30):
            data = [rng.uniform(-5, 5) for _ in range(rng.randrange(1, 100))]
            out = compute_quantiles(data, [0.1, 0.25, 0.5, 0.75, 0.9], method=method)
            assert out == sorted(out)
            assert min(data) <= out[0] and out[-1] <= max(data)
            if method in ("nearest", "lower"):
                assert all(v in data for v in out)


def test_quantiles_single_element_and_errors():
    assert compute_quantiles([5.0], [0.25, 0.5, 0.75]) == [5.0, 5.0, 5.0]
    with pytest.raises(ValueError):
        compute_quantiles([], [0.5])
    with pytest.raises(ValueError):
        compute_quantiles([1.0], [0.5], method="median_unbiased")


def test_report_merge_equals_single_pass():
    rng = random.Random(41)
    items = random_annotated_corpus(rng, 300, with_tokens=True)
    whole = build_report(items)
    left = build_report(items[:120])
    right = build_report(items[120:])
    assert left.merge(right) == whole


def test_token_bins_merge():
    rng = random.Random(43)
    values = [rng.randrange(1, 20000) for _ in range(400)]
    whole = TokenBins(edges=token_bin_edges())
    a = TokenBins(edges=token_bin_edges())
    b = TokenBins(edges=token_bin_edges())
    for v in values:
        whole.add(v)
    for v in values[:150]:
        a.add(v)
    for v in values[150:]:
        b.add(v)
    assert a.merge(b) == whole


def test_report_json_is_stable_and_sorted():
    rng = random.Random(47)
    items = random_annotated_corpus(rng, 100, with_tokens=True)
    report, bins = profile_corpus(items)
    text = report_json(report, bins)
    assert text == report_json(report, bins)
    payload = json.loads(text)
    assert payload["report"]["total"] == 100
    assert "token_bins" in payload
    assert text == json.dumps(payload, indent=2, sort_keys=True)


def test_render_markdown_mentions_axes():
    rng = random.Random(53)
    items = random_annotated_corpus(rng, 50, with_tokens=True)
    report, bins = profile_corpus(items)
    text = render_markdown(report, bins, title="Sample corpus")
    assert text.startswith("# Sample corpus")
    for heading in ("task", "quality", "difficulty", "safety", "reward"):
        assert heading in text.lower()


def test_diff_reports_shows_share_changes():
    before = build_report([mk_annotated("a", category="Math", delta=1.0),
                           mk_annotated("b", category="Planning", delta=1.0)])
    after = build_report([mk_annotated("a", category="Math", delta=1.0)])
    diff = diff_reports(before, after)
    assert math.isclose(diff["Planning"]["share_before"], 0.5)
    assert diff["Planning"]["share_after"] == 0.0
    assert diff["Planning"]["relative"] == -1.0
    assert math.isclose(diff["Math"]["delta"], 0.5)
