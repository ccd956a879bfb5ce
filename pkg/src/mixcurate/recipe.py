"""quality-based, task-aware curation: thresholds, core selection, deficit
repair, per-dataset application, merging, and stratified subsampling.

The pipeline per dataset:

1. Reward thresholds. Q1 and Q2 (the 0.25 and 0.5 fractions) over the delta
   rewards of excellent single-turn samples; Q3 (0.75) over good single-turn.
   Judge-scored single-turn samples (degraded annotation runs) are excluded
   from these populations and reported, never silently mixed in.
2. Core selection: multi-turn excellent samples with judge score 5, plus
   single-turn excellent samples with delta above Q2.
3. Deficit detection: task categories whose share in the core drops too far
   below their share in the full corpus (relative by default).
4. Augmentation from the complement of the core: fallback samples (multi-turn
   excellent score 4; single-turn excellent with Q1 < delta <= Q2) and boost
   samples (multi-turn good score 5; single-turn good with delta above Q3),
   by default only from deficient categories, optionally capped per category
   (caps filled in ascending id order).

Each selected sample carries exactly one clause: the first match in the
order below. Datasets are curated independently and merged afterwards with
optional exact-duplicate removal.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .corpus import (
    MULTI_TURN,
    SINGLE_TURN,
    TASK_CATEGORIES,
    AnnotatedSample,
    Annotation,
    Conversation,
    DeltaReward,
    JudgeReward,
    annotated_from_record,
    classify_turn_type,
    load_annotated_corpus,
    record_line,
)
from .stats import (
    MixtureReport,
    QuantileThresholds,
    compute_quantiles,
    QUANTILE_METHODS,
)

logger = logging.getLogger(__name__)

CLAUSE_CORE_MT_EXCELLENT_5 = "core_mt_excellent_5"
CLAUSE_CORE_ST_EXCELLENT_GT_Q2 = "core_st_excellent_gtQ2"
CLAUSE_FALLBACK_MT_EXCELLENT_4 = "fallback_mt_excellent_4"
CLAUSE_FALLBACK_ST_EXCELLENT_Q1_TO_Q2 = "fallback_st_excellent_Q1toQ2"
CLAUSE_BOOST_MT_GOOD_5 = "boost_mt_good_5"
CLAUSE_BOOST_ST_GOOD_GT_Q3 = "boost_st_good_gtQ3"

CLAUSES = (
    CLAUSE_CORE_MT_EXCELLENT_5,
    CLAUSE_CORE_ST_EXCELLENT_GT_Q2,
    CLAUSE_FALLBACK_MT_EXCELLENT_4,
    CLAUSE_FALLBACK_ST_EXCELLENT_Q1_TO_Q2,
    CLAUSE_BOOST_MT_GOOD_5,
    CLAUSE_BOOST_ST_GOOD_GT_Q3,
)
CORE_CLAUSES = frozenset({CLAUSE_CORE_MT_EXCELLENT_5, CLAUSE_CORE_ST_EXCELLENT_GT_Q2})

DEFICIT_RELATIVE = "relative_drop"
DEFICIT_ABSOLUTE = "absolute_drop"
DEFICIT_MODES = (DEFICIT_RELATIVE, DEFICIT_ABSOLUTE)


class RecipeError(RuntimeError):
    """The recipe cannot proceed (bad config, undefined thresholds, ...)."""


@dataclass(frozen=True)
class CurationConfig:
    tau: float = 0.30
    deficit_mode: str = DEFICIT_RELATIVE
    quantile_method: str = "linear_interpolation"
    strict_above: bool = True
    restrict_augmentation_to_deficient: bool = True
    augmentation_cap_per_category: int | None = None
    dedup_on_merge: bool = True
    category_list: tuple[str, ...] = TASK_CATEGORIES
    allow_degraded_single_turn: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise RecipeError(f"tau must be in (0, 1]: {self.tau}")
        if self.deficit_mode not in DEFICIT_MODES:
            raise RecipeError(f"unknown deficit_mode: {self.deficit_mode!r}")
        if self.quantile_method not in QUANTILE_METHODS:
            raise RecipeError(f"unknown quantile_method: {self.quantile_method!r}")
        if self.augmentation_cap_per_category is not None and (
            self.augmentation_cap_per_category < 0
        ):
            raise RecipeError("augmentation_cap_per_category must be >= 0")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "deficit_mode": self.deficit_mode,
            "quantile_method": self.quantile_method,
            "strict_above": self.strict_above,
            "restrict_augmentation_to_deficient": self.restrict_augmentation_to_deficient,
            "augmentation_cap_per_category": self.augmentation_cap_per_category,
            "dedup_on_merge": self.dedup_on_merge,
            "category_list": list(self.category_list),
            "allow_degraded_single_turn": self.allow_degraded_single_turn,
        }


@dataclass(frozen=True)
class SelectionTrace:
    sample_id: str
    clause: str
    source_dataset: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "clause": self.clause,
            "source_dataset": self.source_dataset,
        }


@dataclass
class CurationResult:
    dataset: str
    thresholds: QuantileThresholds
    deficient_categories: tuple[str, ...]
    report_before: MixtureReport
    report_core: MixtureReport
    report_selected: MixtureReport
    clause_counts: dict[str, int]
    traces: list[SelectionTrace]
    selected_count: int
    selected: list[AnnotatedSample] | None = None
    selected_path: Path | None = None
    _tempdir: tempfile.TemporaryDirectory | None = field(default=None, repr=False)

    def iter_selected(self) -> Iterator[AnnotatedSample]:
        """Selected samples in (source_dataset, id) order; reusable."""
        if self.selected is not None:
            return iter(self.selected)
        if self.selected_path is not None:
            return load_annotated_corpus(self.selected_path)
        return iter(())

    def summary(self) -> dict:
        return {
            "dataset": self.dataset,
            "selected": self.selected_count,
            "thresholds": self.thresholds.to_dict(),
            "deficient_categories": list(self.deficient_categories),
            "clause_counts": {c: self.clause_counts.get(c, 0) for c in CLAUSES},
        }


# --------------------------------------------------------------------------
# clause predicates

_EXCELLENT = "excellent"
_GOOD = "good"


def match_clause(
    annotation: Annotation, thresholds: QuantileThresholds, config: CurationConfig
) -> str | None:
    """First matching selection clause, or None.

    Every quantile comparison goes through the same operator: strict (>)
    by default, >= when strict_above is off. The fallback band is
    above(Q1) and not above(Q2), which reads Q1 < delta <= Q2 under the
    default and Q1 <= delta < Q2 otherwise, so core and fallback always
    partition the region above Q1. Judge-score clauses apply to
    multi-turn samples, and to degraded single-turn samples only when
    allow_degraded_single_turn is set.
    """
    reward = annotation.reward
    quality = annotation.input_quality
    judge_ok = isinstance(reward, JudgeReward) and (
        annotation.turn_type == MULTI_TURN or config.allow_degraded_single_turn
    )
    delta_ok = isinstance(reward, DeltaReward) and annotation.turn_type == SINGLE_TURN

    def above(value: float, threshold: float) -> bool:
        return value > threshold if config.strict_above else value >= threshold

    if judge_ok and quality == _EXCELLENT and reward.score == 5:
        return CLAUSE_CORE_MT_EXCELLENT_5
    if delta_ok and quality == _EXCELLENT and above(reward.delta, thresholds.q2_excellent_st):
        return CLAUSE_CORE_ST_EXCELLENT_GT_Q2
    if judge_ok and quality == _EXCELLENT and reward.score == 4:
        return CLAUSE_FALLBACK_MT_EXCELLENT_4
    if (
        delta_ok
        and quality == _EXCELLENT
        and above(reward.delta, thresholds.q1_excellent_st)
        and not above(reward.delta, thresholds.q2_excellent_st)
    ):
        return CLAUSE_FALLBACK_ST_EXCELLENT_Q1_TO_Q2
    if judge_ok and quality == _GOOD and reward.score == 5:
        return CLAUSE_BOOST_MT_GOOD_5
    if (
        delta_ok
        and quality == _GOOD
        and thresholds.q3_good_st is not None
        and above(reward.delta, thresholds.q3_good_st)
    ):
        return CLAUSE_BOOST_ST_GOOD_GT_Q3
    return None


def compute_reward_thresholds(
    samples: Iterable[AnnotatedSample],
    config: CurationConfig,
    dataset_label: str = "corpus",
) -> QuantileThresholds:
    """Step-1 thresholds over one dataset's single-turn reward strata."""
    excellent: list[float] = []
    good: list[float] = []
    degraded = 0
    for annotated in samples:
        annotation = annotated.annotation
        if annotation is None:
            continue
        reward = annotation.reward
        if isinstance(reward, DeltaReward):
            if annotation.input_quality == _EXCELLENT:
                excellent.append(reward.delta)
            elif annotation.input_quality == _GOOD:
                good.append(reward.delta)
        elif annotation.turn_type == SINGLE_TURN:
            degraded += 1
    if not excellent:
        raise RecipeError(
            f"dataset {dataset_label!r} has no delta-scored single-turn samples with "
            "input_quality=excellent, so Q1/Q2 are undefined. Annotate the corpus "
            "with a reward-model endpoint (the judge-only degraded pathway cannot "
            "feed the quantile thresholds)."
        )
    q1, q2 = compute_quantiles(excellent, [0.25, 0.5], config.quantile_method)
    q3 = compute_quantiles(good, [0.75], config.quantile_method)[0] if good else None
    return QuantileThresholds(
        q1_excellent_st=q1,
        q2_excellent_st=q2,
        q3_good_st=q3,
        method=config.quantile_method,
        population_sizes={
            "excellent_st": len(excellent),
            "good_st": len(good),
            "degraded_st_excluded": degraded,
        },
    )


def select_core(
    samples: Iterable[AnnotatedSample],
    thresholds: QuantileThresholds,
    config: CurationConfig | None = None,
) -> tuple[list[AnnotatedSample], list[SelectionTrace]]:
    """Step 2: excellent multi-turn score-5 plus excellent single-turn above Q2."""
    config = config or CurationConfig()
    selected = []
    traces = []
    for annotated in samples:
        if annotated.annotation is None:
            continue
        clause = match_clause(annotated.annotation, thresholds, config)
        if clause in CORE_CLAUSES:
            selected.append(annotated)
            traces.append(
                SelectionTrace(annotated.sample.id, clause, annotated.sample.source_dataset)
            )
    return selected, traces


def detect_deficits(
    before: MixtureReport, after: MixtureReport, config: CurationConfig
) -> set[str]:
    """Step 3: task categories whose share dropped past tau."""
    deficient = set()
    for category in config.category_list:
        share_before = before.share("by_task", category)
        share_after = after.share("by_task", category)
        if config.deficit_mode == DEFICIT_RELATIVE:
            if share_before > 0 and (1.0 - share_after / share_before) > config.tau:
                deficient.add(category)
        else:
            if (share_before - share_after) > config.tau:
                deficient.add(category)
    return deficient


def augment(
    samples: Iterable[AnnotatedSample],
    core: Iterable[AnnotatedSample],
    deficient: set[str],
    thresholds: QuantileThresholds,
    config: CurationConfig,
) -> tuple[list[AnnotatedSample], list[SelectionTrace]]:
    """Step 4: fallback/boost samples from the complement of the core.

    Candidates matching a core clause are never added here (they belong to
    the core by precedence). When restriction is on, only deficient
    categories are eligible; per-category caps fill in ascending id order.
    """
    core_ids = {annotated.sample.id for annotated in core}
    by_category: dict[str, list[tuple[str, AnnotatedSample, str]]] = {}
    for annotated in samples:
        annotation = annotated.annotation
        if annotation is None or annotated.sample.id in core_ids:
            continue
        clause = match_clause(annotation, thresholds, config)
        if clause is None or clause in CORE_CLAUSES:
            continue
        category = annotation.task_category
        if config.restrict_augmentation_to_deficient and category not in deficient:
            continue
        by_category.setdefault(category, []).append((annotated.sample.id, annotated, clause))

    added = []
    traces = []
    cap = config.augmentation_cap_per_category
    for category in sorted(by_category):
        candidates = sorted(by_category[category], key=lambda item: item[0])
        if cap is not None:
            candidates = candidates[:cap]
        for sample_id, annotated, clause in candidates:
            added.append(annotated)
            traces.append(SelectionTrace(sample_id, clause, annotated.sample.source_dataset))
    return added, traces


# --------------------------------------------------------------------------
# full per-dataset pipeline, list-backed or spilled to disk


def _as_factory(
    source: str | Path | Sequence[AnnotatedSample], dataset_label: str | None
) -> tuple[Callable[[], Iterator[AnnotatedSample]], str, bool]:
    """(fresh-iterator factory, label, file_backed)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        label = dataset_label or path.stem
        return (lambda: load_annotated_corpus(path)), label, True
    seq = source
    if dataset_label:
        label = dataset_label
    elif len(seq) and seq[0].sample.source_dataset:
        label = seq[0].sample.source_dataset
    else:
        label = "corpus"
    return (lambda: iter(seq)), label, False


def curate(
    source: str | Path | Sequence[AnnotatedSample],
    config: CurationConfig | None = None,
    *,
    dataset_label: str | None = None,
    output_path: str | Path | None = None,
) -> CurationResult:
    """Run steps 1-4 over one dataset.

    Sequence sources are processed in memory and the result carries the
    selected list. Path sources stream: two passes over the input, selected
    records spilled to a temp file, and only (id, offset) bookkeeping held
    in memory. With output_path the sorted selection is written there;
    otherwise a path source keeps its selection in a temp file owned by the
    returned result.
    """
    config = config or CurationConfig()
    factory, label, file_backed = _as_factory(source, dataset_label)

    report_before = MixtureReport()
    excellent: list[float] = []
    good: list[float] = []
    degraded = 0
    for annotated in factory():
        report_before.add(annotated)
        annotation = annotated.annotation
        if annotation is None:
            continue
        reward = annotation.reward
        if isinstance(reward, DeltaReward):
            if annotation.input_quality == _EXCELLENT:
                excellent.append(reward.delta)
            elif annotation.input_quality == _GOOD:
                good.append(reward.delta)
        elif annotation.turn_type == SINGLE_TURN:
            degraded += 1
    if not excellent:
        raise RecipeError(
            f"dataset {label!r} has no delta-scored single-turn samples with "
            "input_quality=excellent, so Q1/Q2 are undefined. Annotate the corpus "
            "with a reward-model endpoint, or exclude this input."
        )
    q1, q2 = compute_quantiles(excellent, [0.25, 0.5], config.quantile_method)
    q3 = compute_quantiles(good, [0.75], config.quantile_method)[0] if good else None
    thresholds = QuantileThresholds(
        q1_excellent_st=q1,
        q2_excellent_st=q2,
        q3_good_st=q3,
        method=config.quantile_method,
        population_sizes={
            "excellent_st": len(excellent),
            "good_st": len(good),
            "degraded_st_excluded": degraded,
        },
    )
    del excellent, good

    # pass 2: evaluate clauses, spool matches, count the core
    tempdir: tempfile.TemporaryDirectory | None = None
    spool_handle = None
    spool_items: list[AnnotatedSample] | None = None
    if file_backed:
        tempdir = tempfile.TemporaryDirectory(prefix="mixcurate-curate-")
        spool_handle = (Path(tempdir.name) / "matches.jsonl").open("w+", encoding="utf-8")
    else:
        spool_items = []

    # entry: (sort_key, clause, category, ref)
    entries: list[tuple[tuple[str, str], str, str, int]] = []
    report_core = MixtureReport()
    for annotated in factory():
        annotation = annotated.annotation
        if annotation is None:
            continue
        clause = match_clause(annotation, thresholds, config)
        if clause is None:
            continue
        key = (annotated.sample.source_dataset, annotated.sample.id)
        if spool_items is not None:
            ref = len(spool_items)
            spool_items.append(annotated)
        else:
            ref = spool_handle.tell()
            spool_handle.write(record_line(annotated))
            spool_handle.write("\n")
        entries.append((key, clause, annotation.task_category, ref))
        if clause in CORE_CLAUSES:
            report_core.add(annotated)

    deficient = detect_deficits(report_before, report_core, config)

    chosen = [entry for entry in entries if entry[1] in CORE_CLAUSES]
    by_category: dict[str, list[tuple[tuple[str, str], str, str, int]]] = {}
    for entry in entries:
        if entry[1] in CORE_CLAUSES:
            continue
        category = entry[2]
        if config.restrict_augmentation_to_deficient and category not in deficient:
            continue
        by_category.setdefault(category, []).append(entry)
    cap = config.augmentation_cap_per_category
    for category in sorted(by_category):
        candidates = sorted(by_category[category], key=lambda entry: entry[0][1])
        if cap is not None:
            candidates = candidates[:cap]
        chosen.extend(candidates)
    chosen.sort(key=lambda entry: entry[0])

    def _fetch(ref: int) -> AnnotatedSample:
        if spool_items is not None:
            return spool_items[ref]
        spool_handle.seek(ref)
        return annotated_from_record(json.loads(spool_handle.readline()))

    if spool_handle is not None:
        spool_handle.flush()

    selected_list: list[AnnotatedSample] | None = None if file_backed else []
    selected_path: Path | None = None
    keep_tempdir: tempfile.TemporaryDirectory | None = None
    writer = None
    if output_path is not None:
        selected_path = Path(output_path)
        writer = selected_path.open("w", encoding="utf-8")
    elif file_backed:
        keep_tempdir = tempfile.TemporaryDirectory(prefix="mixcurate-selected-")
        selected_path = Path(keep_tempdir.name) / "selected.jsonl"
        writer = selected_path.open("w", encoding="utf-8")

    report_selected = MixtureReport()
    clause_counts: dict[str, int] = {clause: 0 for clause in CLAUSES}
    traces = []
    try:
        for key, clause, _category, ref in chosen:
            annotated = _fetch(ref)
            report_selected.add(annotated)
            clause_counts[clause] += 1
            traces.append(SelectionTrace(key[1], clause, key[0]))
            if writer is not None:
                writer.write(record_line(annotated))
                writer.write("\n")
            if selected_list is not None:
                selected_list.append(annotated)
    finally:
        if writer is not None:
            writer.close()
        if spool_handle is not None:
            spool_handle.close()
        if tempdir is not None:
            tempdir.cleanup()

    logger.info(
        "curated %s: %d selected of %d (deficient: %s)",
        label,
        len(chosen),
        report_before.total,
        ", ".join(sorted(deficient)) or "none",
    )
    return CurationResult(
        dataset=label,
        thresholds=thresholds,
        deficient_categories=tuple(sorted(deficient)),
        report_before=report_before,
        report_core=report_core,
        report_selected=report_selected,
        clause_counts=clause_counts,
        traces=traces,
        selected_count=len(chosen),
        selected=selected_list,
        selected_path=selected_path,
        _tempdir=keep_tempdir,
    )


# --------------------------------------------------------------------------
# merging curated datasets


@dataclass
class MergeResult:
    written: int
    duplicates_dropped: int
    ids_renamed: int
    samples: list[AnnotatedSample] | None = None


def conversation_digest(conversation: Conversation) -> bytes:
    """Content hash used for exact-duplicate detection on merge."""
    hasher = hashlib.sha256()
    for message in conversation.messages:
        hasher.update(message.role.encode("utf-8"))
        hasher.update(b"\x1f")
        hasher.update(message.content.encode("utf-8"))
        hasher.update(b"\x1e")
    return hasher.digest()


def _sorted_corpus_iter(path: Path) -> Iterator[AnnotatedSample]:
    """Stream a corpus file in (source_dataset, id) order via an offset index.

    Binary mode throughout: byte offsets tracked by hand (text handles forbid
    tell() mid-iteration) and seekable for the emission pass.
    """
    index: list[tuple[tuple[str, str], int]] = []
    with path.open("rb") as handle:
        offset = 0
        for line in handle:
            stripped = line.strip()
            if stripped:
                record = json.loads(stripped)
                index.append(((record["source_dataset"], str(record["id"])), offset))
            offset += len(line)
    index.sort(key=lambda item: item[0])
    with path.open("rb") as handle:
        for _key, position in index:
            handle.seek(position)
            yield annotated_from_record(json.loads(handle.readline()))


def _merge_source_iter(
    source: "CurationResult | Sequence[AnnotatedSample] | str | Path",
) -> Callable[[], Iterator[AnnotatedSample]]:
    if isinstance(source, CurationResult):
        return source.iter_selected
    if isinstance(source, (str, Path)):
        path = Path(source)
        return lambda: _sorted_corpus_iter(path)
    ordered = sorted(source, key=lambda a: (a.sample.source_dataset, a.sample.id))
    return lambda: iter(ordered)


def merge_mixtures(
    sources: Sequence["CurationResult | Sequence[AnnotatedSample] | str | Path"],
    config: CurationConfig | None = None,
    *,
    output_path: str | Path | None = None,
) -> MergeResult:
    """Union of curated outputs in global (source_dataset, id) order.

    With dedup_on_merge, records whose conversations hash identically keep
    only the first occurrence. Ids that collide across datasets are
    re-namespaced "{source_dataset}::{id}" (an occurrence counter "#n" breaks
    any remaining tie); unique ids pass through untouched.
    """
    if not sources:
        raise RecipeError("merge needs at least one source")
    config = config or CurationConfig()
    factories = [_merge_source_iter(source) for source in sources]

    def _keyed(factory: Callable[[], Iterator[AnnotatedSample]]):
        for annotated in factory():
            yield (annotated.sample.source_dataset, annotated.sample.id), annotated

    def _merged_stream():
        return heapq.merge(*[_keyed(f) for f in factories], key=lambda kv: kv[0])

    # first pass: find ids that collide among the records that will survive
    # dedup, walking the same global order as the emission pass so "first
    # occurrence wins" agrees between the passes
    seen_ids: set[str] = set()
    colliding: set[str] = set()
    pre_digests: set[bytes] = set()
    for _key, annotated in _merged_stream():
        if config.dedup_on_merge:
            digest = conversation_digest(annotated.sample.conversation)
            if digest in pre_digests:
                continue
            pre_digests.add(digest)
        sid = annotated.sample.id
        if sid in seen_ids:
            colliding.add(sid)
        else:
            seen_ids.add(sid)
    del seen_ids, pre_digests

    seen_digests: set[bytes] = set()
    emitted_ids: set[str] = set()
    written = 0
    dropped = 0
    renamed = 0
    out_samples: list[AnnotatedSample] | None = [] if output_path is None else None
    writer = Path(output_path).open("w", encoding="utf-8") if output_path is not None else None
    try:
        for (dataset, sid), annotated in _merged_stream():
            if config.dedup_on_merge:
                digest = conversation_digest(annotated.sample.conversation)
                if digest in seen_digests:
                    dropped += 1
                    continue
                seen_digests.add(digest)
            final_id = sid
            if sid in colliding:
                final_id = f"{dataset}::{sid}"
            if final_id in emitted_ids:
                bump = 2
                while f"{final_id}#{bump}" in emitted_ids:
                    bump += 1
                final_id = f"{final_id}#{bump}"
            if final_id != sid:
                renamed += 1
                annotated = replace(annotated, sample=replace(annotated.sample, id=final_id))
            emitted_ids.add(final_id)
            if writer is not None:
                writer.write(record_line(annotated))
                writer.write("\n")
            else:
                out_samples.append(annotated)
            written += 1
    finally:
        if writer is not None:
            writer.close()
    return MergeResult(
        written=written, duplicates_dropped=dropped, ids_renamed=renamed, samples=out_samples
    )


# --------------------------------------------------------------------------
# stratified subsampling


@dataclass
class SampleResult:
    written: int
    strata: dict[str, tuple[int, int]]  # stratum -> (population, taken)
    samples: list[AnnotatedSample] | None = None


_ANNOTATION_KEYS = frozenset(
    {"task_category", "input_quality", "difficulty", "language", "safety"}
)


def _stratum_value(annotated: AnnotatedSample, key: str) -> str:
    sample = annotated.sample
    if key == "id":
        return sample.id
    if key == "source_dataset":
        return sample.source_dataset
    if key == "source_subset":
        return sample.source_subset
    if key == "turn_type":
        return classify_turn_type(sample.conversation)
    if key == "token_count":
        return str(annotated.token_count)
    if key in _ANNOTATION_KEYS:
        if annotated.annotation is None:
            return "missing"
        return str(getattr(annotated.annotation, key))
    return sample.extra_metadata.get(key, "missing")


def _stratum_rng(seed: int, stratum: str) -> random.Random:
    material = hashlib.sha256(f"{seed}|{stratum}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(material, "big"))


def stratified_sample(
    source: str | Path | Sequence[AnnotatedSample],
    fraction: float,
    keys: Sequence[str] = ("source_subset",),
    seed: int = 0,
    *,
    output_path: str | Path | None = None,
) -> SampleResult:
    """Proportional per-stratum subsample, deterministic under the seed.

    Each stratum (tuple of key values) contributes round(fraction * size)
    samples (half-up), drawn without replacement by a stratum-local RNG
    seeded from (seed, stratum), so results do not depend on stratum
    iteration order. Output preserves input order.
    """
    if not 0.0 < fraction <= 1.0:
        raise RecipeError(f"fraction must be in (0, 1]: {fraction}")
    if not keys:
        raise RecipeError("at least one stratification key is required")
    factory, _label, _file_backed = _as_factory(source, None)

    strata: dict[str, list[int]] = {}
    position = 0
    for annotated in factory():
        stratum = "\x1f".join(_stratum_value(annotated, key) for key in keys)
        strata.setdefault(stratum, []).append(position)
        position += 1

    chosen: set[int] = set()
    stratum_sizes: dict[str, tuple[int, int]] = {}
    for stratum, positions in strata.items():
        take = int(fraction * len(positions) + 0.5)
        take = min(take, len(positions))
        stratum_sizes[stratum] = (len(positions), take)
        if take:
            rng = _stratum_rng(seed, stratum)
            chosen.update(rng.sample(positions, take))

    out_samples: list[AnnotatedSample] | None = [] if output_path is None else None
    writer = Path(output_path).open("w", encoding="utf-8") if output_path is not None else None
    written = 0
    try:
        position = 0
        for annotated in factory():
            if position in chosen:
                if writer is not None:
                    writer.write(record_line(annotated))
                    writer.write("\n")
                else:
                    out_samples.append(annotated)
                written += 1
            position += 1
    finally:
        if writer is not None:
            writer.close()
    return SampleResult(written=written, strata=stratum_sizes, samples=out_samples)
