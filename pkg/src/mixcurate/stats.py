"""streaming corpus statistics: marginals, cross-tabs, quantiles, token bins.

Everything here is a single pass with bounded memory: counters keyed by small
enumerations (plus languages and source subsets, which are few in practice).
Counting is associative -- reports built over shards merge to exactly the
single-pass result, and shares are derived from counts at serialization time
so the merged report is field-for-field identical.

Samples missing a dimension are tallied under an explicit "missing" key, so
every marginal sums to the total. Reward histograms are per-scale views, not
marginals: delta rewards fill the single-turn histogram, judge scores on
multi-turn samples fill the 0-5 histogram, and judge scores on single-turn
samples (the degraded pathway) are only counted in reward_variant_counts,
never mixed into either histogram.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

from .corpus import (
    DIFFICULTIES,
    INPUT_QUALITIES,
    MULTI_TURN,
    SAFETY_FLAGS,
    SINGLE_TURN,
    TASK_CATEGORIES,
    AnnotatedSample,
    DeltaReward,
    JudgeReward,
    classify_turn_type,
)

MISSING = "missing"

QUANTILE_METHODS = ("linear_interpolation", "nearest", "lower")

# single-turn reward histogram: unit-width bins with these integer left edges
ST_HISTOGRAM_LO = -14
ST_HISTOGRAM_HI = 8

VARIANT_DELTA = "delta"
VARIANT_JUDGE_MT = "judge_multi_turn"
VARIANT_JUDGE_ST = "judge_single_turn"
VARIANT_MISSING = "missing"

TOKEN_BIN_COUNT = 40
TOKEN_BIN_FLOOR = 16.0
TOKEN_BIN_CEIL = 8192.0


def token_bin_edges() -> tuple[float, ...]:
    """41 geometric edges from 16 to 8192: edge(i) = 16 * 2**(9*i/40)."""
    return tuple(TOKEN_BIN_FLOOR * 2.0 ** (9.0 * i / TOKEN_BIN_COUNT) for i in range(41))


@dataclass
class TokenBins:
    edges: tuple[float, ...] = field(default_factory=token_bin_edges)
    counts: list[int] = field(default_factory=lambda: [0] * TOKEN_BIN_COUNT)
    underflow: int = 0
    overflow: int = 0

    @property
    def present(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def add(self, token_count: int) -> None:
        if token_count < TOKEN_BIN_FLOOR:
            self.underflow += 1
        elif token_count >= TOKEN_BIN_CEIL:
            self.overflow += 1
        else:
            self.counts[bisect.bisect_right(self.edges, token_count) - 1] += 1

    def merge(self, other: "TokenBins") -> "TokenBins":
        merged = TokenBins(edges=self.edges)
        merged.counts = [a + b for a, b in zip(self.counts, other.counts)]
        merged.underflow = self.underflow + other.underflow
        merged.overflow = self.overflow + other.overflow
        return merged

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "counts": list(self.counts),
            "underflow": self.underflow,
            "overflow": self.overflow,
        }


def bin_token_lengths(samples: Iterable[AnnotatedSample]) -> TokenBins:
    """Histogram token counts into the 40 geometric bins; counts absent -> skipped."""
    bins = TokenBins()
    for annotated in samples:
        if annotated.token_count is not None:
            bins.add(annotated.token_count)
    return bins


@dataclass(frozen=True)
class QuantileThresholds:
    """Reward cutoffs: Q1/Q2 over excellent single-turn, Q3 over good single-turn."""

    q1_excellent_st: float
    q2_excellent_st: float
    q3_good_st: float | None
    method: str
    population_sizes: dict[str, int]

    def __post_init__(self) -> None:
        if self.q1_excellent_st > self.q2_excellent_st:
            raise ValueError("q1 exceeds q2")
        if self.method not in QUANTILE_METHODS:
            raise ValueError(f"unknown quantile method: {self.method!r}")

    def to_dict(self) -> dict:
        return {
            "q1_excellent_st": self.q1_excellent_st,
            "q2_excellent_st": self.q2_excellent_st,
            "q3_good_st": self.q3_good_st,
            "method": self.method,
            "population_sizes": dict(sorted(self.population_sizes.items())),
        }


def compute_quantiles(
    rewards: Iterable[float], qs: list[float], method: str = "linear_interpolation"
) -> list[float]:
    """Order statistics of `rewards` at fractions `qs`.

    linear_interpolation blends the two closest ranks at h = q*(n-1);
    nearest picks round-half-even(h); lower picks floor(h).
    """
    if method not in QUANTILE_METHODS:
        raise ValueError(f"unknown quantile method: {method!r}")
    xs = sorted(float(v) for v in rewards)
    n = len(xs)
    if n == 0:
        raise ValueError("cannot take quantiles of an empty collection")
    out = []
    for q in qs:
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile fraction out of (0,1): {q}")
        h = q * (n - 1)
        lo = math.floor(h)
        if method == "lower":
            out.append(xs[lo])
        elif method == "nearest":
            out.append(xs[min(round(h), n - 1)])
        else:
            hi = min(lo + 1, n - 1)
            frac = h - lo
            out.append(xs[lo] + frac * (xs[hi] - xs[lo]))
    return out


def _st_reward_bin(delta: float) -> str:
    if delta < ST_HISTOGRAM_LO:
        return "underflow"
    if delta >= ST_HISTOGRAM_HI:
        return "overflow"
    return str(math.floor(delta))


@dataclass
class MixtureReport:
    """Counts and shares for one corpus (or one curated output)."""

    total: int = 0
    by_task: dict[str, int] = field(default_factory=dict)
    by_turn: dict[str, int] = field(default_factory=dict)
    by_quality: dict[str, int] = field(default_factory=dict)
    by_difficulty: dict[str, int] = field(default_factory=dict)
    by_language: dict[str, int] = field(default_factory=dict)
    by_safety: dict[str, int] = field(default_factory=dict)
    by_quality_and_turn: dict[str, dict[str, int]] = field(default_factory=dict)
    by_task_and_turn: dict[str, dict[str, int]] = field(default_factory=dict)
    by_source_subset: dict[str, int] = field(default_factory=dict)
    reward_histogram_st: dict[str, int] = field(default_factory=dict)
    reward_histogram_mt: dict[str, int] = field(default_factory=dict)
    reward_variant_counts: dict[str, int] = field(default_factory=dict)

    def add(self, annotated: AnnotatedSample) -> None:
        self.total += 1
        annotation = annotated.annotation
        turn = classify_turn_type(annotated.sample.conversation)
        if annotation is None:
            task = quality = difficulty = language = safety = MISSING
            variant = VARIANT_MISSING
        else:
            task = annotation.task_category
            quality = annotation.input_quality
            difficulty = annotation.difficulty
            language = annotation.language
            safety = annotation.safety
            reward = annotation.reward
            if isinstance(reward, DeltaReward):
                variant = VARIANT_DELTA
                key = _st_reward_bin(reward.delta)
                self.reward_histogram_st[key] = self.reward_histogram_st.get(key, 0) + 1
            elif turn == MULTI_TURN:
                variant = VARIANT_JUDGE_MT
                key = str(reward.score)
                self.reward_histogram_mt[key] = self.reward_histogram_mt.get(key, 0) + 1
            else:
                variant = VARIANT_JUDGE_ST

        for table, key in (
            (self.by_task, task),
            (self.by_turn, turn),
            (self.by_quality, quality),
            (self.by_difficulty, difficulty),
            (self.by_language, language),
            (self.by_safety, safety),
            (self.by_source_subset, annotated.sample.source_subset),
            (self.reward_variant_counts, variant),
        ):
            table[key] = table.get(key, 0) + 1
        slot = self.by_quality_and_turn.setdefault(quality, {})
        slot[turn] = slot.get(turn, 0) + 1
        slot = self.by_task_and_turn.setdefault(task, {})
        slot[turn] = slot.get(turn, 0) + 1

    def merge(self, other: "MixtureReport") -> "MixtureReport":
        merged = MixtureReport(total=self.total + other.total)
        for name in (
            "by_task",
            "by_turn",
            "by_quality",
            "by_difficulty",
            "by_language",
            "by_safety",
            "by_source_subset",
            "reward_histogram_st",
            "reward_histogram_mt",
            "reward_variant_counts",
        ):
            mine: dict = getattr(self, name)
            theirs: dict = getattr(other, name)
            out = dict(mine)
            for key, value in theirs.items():
                out[key] = out.get(key, 0) + value
            setattr(merged, name, out)
        for name in ("by_quality_and_turn", "by_task_and_turn"):
            mine = getattr(self, name)
            theirs = getattr(other, name)
            out = {k: dict(v) for k, v in mine.items()}
            for key, inner in theirs.items():
                slot = out.setdefault(key, {})
                for turn, value in inner.items():
                    slot[turn] = slot.get(turn, 0) + value
            setattr(merged, name, out)
        return merged

    def share(self, table_name: str, key: str) -> float:
        """count/total for one key of one marginal (0.0 when total is 0)."""
        count = getattr(self, table_name).get(key, 0)
        return count / self.total if self.total else 0.0

    def _with_shares(self, table: dict[str, int]) -> dict:
        return {
            key: {"count": count, "share": count / self.total if self.total else 0.0}
            for key, count in sorted(table.items())
        }

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "by_task": self._with_shares(self.by_task),
            "by_turn": self._with_shares(self.by_turn),
            "by_quality": self._with_shares(self.by_quality),
            "by_difficulty": self._with_shares(self.by_difficulty),
            "by_language": self._with_shares(self.by_language),
            "by_safety": self._with_shares(self.by_safety),
            "by_quality_and_turn": {
                k: dict(sorted(v.items())) for k, v in sorted(self.by_quality_and_turn.items())
            },
            "by_task_and_turn": {
                k: dict(sorted(v.items())) for k, v in sorted(self.by_task_and_turn.items())
            },
            "by_source_subset": dict(sorted(self.by_source_subset.items())),
            "reward_histogram_st": dict(sorted(self.reward_histogram_st.items())),
            "reward_histogram_mt": dict(sorted(self.reward_histogram_mt.items())),
            "reward_variant_counts": dict(sorted(self.reward_variant_counts.items())),
        }


def build_report(samples: Iterable[AnnotatedSample]) -> MixtureReport:
    """One streaming pass over annotated samples."""
    report = MixtureReport()
    for annotated in samples:
        report.add(annotated)
    return report


def profile_corpus(samples: Iterable[AnnotatedSample]) -> tuple[MixtureReport, TokenBins]:
    """Report and token bins in a single pass (the CLI stats path)."""
    report = MixtureReport()
    bins = TokenBins()
    for annotated in samples:
        report.add(annotated)
        if annotated.token_count is not None:
            bins.add(annotated.token_count)
    return report, bins


def diff_reports(before: MixtureReport, after: MixtureReport) -> dict[str, dict]:
    """Per-task share movement between two reports.

    relative is share_after/share_before - 1, or None when the category had
    no share before (flagged rather than divided by zero).
    """
    categories = sorted(set(before.by_task) | set(after.by_task))
    out = {}
    for category in categories:
        sb = before.share("by_task", category)
        sa = after.share("by_task", category)
        out[category] = {
            "share_before": sb,
            "share_after": sa,
            "delta": sa - sb,
            "relative": (sa / sb - 1.0) if sb > 0 else None,
        }
    return out


def report_json(report: MixtureReport, token_bins: TokenBins | None = None) -> str:
    """Canonical machine-readable serialization (sorted keys)."""
    doc: dict = {"report": report.to_dict()}
    if token_bins is not None:
        doc["token_bins"] = token_bins.to_dict()
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False)


# --------------------------------------------------------------------------
# human-readable rendering


def _ordered_keys(table: dict[str, int], canonical: tuple[str, ...]) -> list[str]:
    keys = [k for k in canonical if k in table]
    keys += sorted(k for k in table if k not in canonical)
    return keys


def _share_table(report: MixtureReport, name: str, keys: list[str], header: str) -> list[str]:
    table: dict = getattr(report, name)
    lines = [f"| {header} | count | share |", "| --- | ---: | ---: |"]
    for key in keys:
        count = table.get(key, 0)
        share = count / report.total if report.total else 0.0
        lines.append(f"| {key} | {count:,} | {share:.4f} |")
    return lines


def render_markdown(
    report: MixtureReport, token_bins: TokenBins | None = None, title: str = "Corpus report"
) -> str:
    """Markdown summary mirroring the machine report's numbers."""
    turn_keys = [k for k in (SINGLE_TURN, MULTI_TURN) if k in report.by_turn]
    turn_keys += sorted(k for k in report.by_turn if k not in (SINGLE_TURN, MULTI_TURN))

    sections = [f"# {title}", "", f"Total samples: {report.total:,}", ""]
    sections += ["## Turn types", ""]
    sections += _share_table(report, "by_turn", turn_keys, "turn type")
    sections += ["", "## Task categories", ""]
    sections += _share_table(report, "by_task", _ordered_keys(report.by_task, TASK_CATEGORIES), "task")
    sections += ["", "## Input quality", ""]
    sections += _share_table(report, "by_quality", _ordered_keys(report.by_quality, INPUT_QUALITIES), "quality")

    if report.by_quality_and_turn:
        sections += ["", "### Input quality by turn type", ""]
        sections += ["| quality | " + " | ".join(turn_keys) + " |"]
        sections += ["| --- |" + " ---: |" * len(turn_keys)]
        for quality in _ordered_keys(report.by_quality, INPUT_QUALITIES):
            row = report.by_quality_and_turn.get(quality, {})
            cells = " | ".join(f"{row.get(t, 0):,}" for t in turn_keys)
            sections += [f"| {quality} | {cells} |"]

    sections += ["", "## Difficulty", ""]
    sections += _share_table(
        report, "by_difficulty", _ordered_keys(report.by_difficulty, DIFFICULTIES), "difficulty"
    )
    sections += ["", "## Safety", ""]
    sections += _share_table(report, "by_safety", _ordered_keys(report.by_safety, SAFETY_FLAGS), "safety")

    languages = sorted(report.by_language.items(), key=lambda kv: (-kv[1], kv[0]))
    sections += ["", "## Languages", "", "| language | count |", "| --- | ---: |"]
    sections += [f"| {lang} | {count:,} |" for lang, count in languages]

    if report.reward_histogram_st:
        sections += ["", "## Single-turn reward deltas", "", "| bin | count |", "| --- | ---: |"]
        def _bin_order(key: str) -> tuple:
            if key == "underflow":
                return (0, 0)
            if key == "overflow":
                return (2, 0)
            return (1, int(key))
        for key in sorted(report.reward_histogram_st, key=_bin_order):
            label = key if key in ("underflow", "overflow") else f"[{key}, {int(key) + 1})"
            sections += [f"| {label} | {report.reward_histogram_st[key]:,} |"]

    if report.reward_histogram_mt:
        sections += ["", "## Multi-turn judge scores", "", "| score | count |", "| --- | ---: |"]
        for key in sorted(report.reward_histogram_mt, key=int):
            sections += [f"| {key} | {report.reward_histogram_mt[key]:,} |"]

    subsets = sorted(report.by_source_subset.items(), key=lambda kv: (-kv[1], kv[0]))
    sections += ["", "## Source subsets", "", "| subset | count |", "| --- | ---: |"]
    sections += [f"| {name} | {count:,} |" for name, count in subsets]

    if token_bins is not None and token_bins.present:
        sections += ["", "## Token-length bins", "", "| bin | count |", "| --- | ---: |"]
        if token_bins.underflow:
            sections += [f"| < {TOKEN_BIN_FLOOR:.0f} | {token_bins.underflow:,} |"]
        for i, count in enumerate(token_bins.counts):
            if count:
                lo, hi = token_bins.edges[i], token_bins.edges[i + 1]
                sections += [f"| [{lo:.1f}, {hi:.1f}) | {count:,} |"]
        if token_bins.overflow:
            sections += [f"| >= {TOKEN_BIN_CEIL:.0f} | {token_bins.overflow:,} |"]

    return "\n".join(sections) + "\n"
