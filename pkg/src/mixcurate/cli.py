"""command-line surface: annotate, stats, curate, sample, merge, validate.

Every command writes a run manifest next to its output: the effective config
snapshot, input/output paths, counts, seed, tool version, and wall time.
Manifests from reruns with identical inputs, config, and seed are identical
except for the timing object.

Exit codes: 0 on success (partial annotation success included), 1 on runtime
failure (bad corpus, undefined thresholds, I/O), 2 on usage or config errors.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import click

from . import __version__
from .config import ConfigError, ToolConfig, api_keys_from_env, load_config
from .corpus import (
    FORMAT_AUTO,
    FORMAT_HINTS,
    CorpusWriteError,
    LineDiagnostic,
    load_annotated_corpus,
    load_corpus,
    record_line,
)
from .judge import Annotator, AnnotationFailure, TransportError
from .recipe import (
    DEFICIT_MODES,
    CurationConfig,
    RecipeError,
    curate as run_curate,
    merge_mixtures,
    stratified_sample,
)
from .stats import (
    MISSING,
    QUANTILE_METHODS,
    diff_reports,
    profile_corpus,
    render_markdown,
    report_json,
)

logger = logging.getLogger(__name__)

_IN_PATH = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_PATH = click.Path(dir_okay=False, path_type=Path)


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_tool_config(config_path: Path | None) -> ToolConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(str(exc))


def _write_manifest(
    path: Path,
    command: str,
    config: ToolConfig,
    seed: int | None,
    inputs: list[Path],
    outputs: list[Path],
    counts: dict[str, int],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config.snapshot(),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "counts": counts,
        "timing": {"wall_time_seconds": round(time.monotonic() - started, 3)},
    }
    _prepare(path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _echo_rejections(diagnostics: list[LineDiagnostic], limit: int = 5) -> None:
    for diag in diagnostics[:limit]:
        where = f"line {diag.line_number}"
        if diag.record_id:
            where += f" (id {diag.record_id})"
        click.echo(f"  rejected {where}: {diag.reason}", err=True)
    if len(diagnostics) > limit:
        click.echo(f"  ... and {len(diagnostics) - limit} more", err=True)


@click.group()
@click.version_option(__version__, prog_name="mixcurate")
@click.option("--verbose", "-v", is_flag=True, help="Debug-level logging.")
def main(verbose: bool) -> None:
    """Streaming annotation, profiling, and curation of SFT corpora."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# --------------------------------------------------------------------------
# annotate


def _scan_resume_file(path: Path, id_key: str) -> set[str]:
    """Ids of complete records in a checkpoint file; torn tails are dropped.

    A run killed mid-write can leave a partial last line. Everything up to
    the last complete, parseable line is kept (and its ids collected); the
    file is truncated there so appending resumes cleanly.
    """
    ids: set[str] = set()
    if not path.exists():
        return ids
    keep = 0
    offset = 0
    with path.open("rb") as handle:
        for line in handle:
            offset += len(line)
            if not line.endswith(b"\n"):
                break
            stripped = line.strip()
            if stripped:
                try:
                    ids.add(str(json.loads(stripped)[id_key]))
                except (ValueError, KeyError, TypeError):
                    break
            keep = offset
    if keep < path.stat().st_size:
        logger.warning("truncating torn tail of %s at byte %d", path, keep)
        os.truncate(path, keep)
    return ids


@main.command()
@click.argument("input_path", metavar="INPUT", type=_IN_PATH)
@click.option("--config", "config_path", type=_IN_PATH, required=True,
              help="YAML config naming the judge endpoints.")
@click.option("--output", "-o", "output_path", type=_OUT_PATH, required=True,
              help="Annotated corpus (JSONL).")
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Worker threads (overrides config).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Recorded in the manifest; annotation itself is deterministic.")
@click.option("--resume/--no-resume", default=False, show_default=True,
              help="Skip ids already present in the output and failure log.")
@click.option("--failures", "failures_path", type=_OUT_PATH, default=None,
              help="Failure log (default: <output stem>.failures.jsonl).")
@click.option("--checkpoint-every", type=click.IntRange(min=1), default=None,
              help="Flush output every N samples (overrides config).")
@click.option("--input-format", type=click.Choice(FORMAT_HINTS), default=None,
              help="Wire format of INPUT (overrides config).")
@click.option("--default-dataset", default=None,
              help="source_dataset for records that lack one.")
@click.option("--default-subset", default=None,
              help="source_subset for records that lack one.")
def annotate(
    input_path: Path,
    config_path: Path,
    output_path: Path,
    workers: int | None,
    seed: int,
    resume: bool,
    failures_path: Path | None,
    checkpoint_every: int | None,
    input_format: str | None,
    default_dataset: str | None,
    default_subset: str | None,
) -> None:
    """Annotate a conversation corpus with an LLM judge."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    if config.endpoints is None:
        raise click.UsageError(f"config {config_path} has no endpoints section")
    settings = config.annotate
    overrides = {}
    if workers is not None:
        overrides["workers"] = workers
    if checkpoint_every is not None:
        overrides["checkpoint_every"] = checkpoint_every
    if input_format is not None:
        overrides["input_format"] = input_format
    if default_dataset is not None:
        overrides["default_dataset"] = default_dataset
    if default_subset is not None:
        overrides["default_subset"] = default_subset
    if overrides:
        settings = dataclasses.replace(settings, **overrides)
        config = dataclasses.replace(config, annotate=settings)

    if failures_path is None:
        failures_path = output_path.with_name(output_path.stem + ".failures.jsonl")
    manifest_path = output_path.with_name(output_path.stem + ".manifest.json")

    skip_ids: set[str] = set()
    if resume:
        skip_ids |= _scan_resume_file(output_path, "id")
        skip_ids |= _scan_resume_file(failures_path, "sample_id")
        if skip_ids:
            click.echo(f"resuming past {len(skip_ids)} already-processed sample(s)", err=True)

    diagnostics: list[LineDiagnostic] = []
    counters = {"read": 0, "skipped_resume": 0}

    def fresh_samples():
        stream = load_corpus(
            input_path,
            settings.input_format,
            default_dataset=settings.default_dataset,
            default_subset=settings.default_subset,
            on_reject=diagnostics.append,
        )
        for sample in stream:
            counters["read"] += 1
            if sample.id in skip_ids:
                counters["skipped_resume"] += 1
                continue
            yield sample

    annotator = Annotator(
        endpoints=config.endpoints,
        workers=settings.workers,
        api_keys=api_keys_from_env(),
        timeout=settings.timeout,
    )
    annotated = failed = 0
    mode = "a" if resume else "w"
    try:
        with _prepare(output_path).open(mode, encoding="utf-8") as out_handle, \
                _prepare(failures_path).open(mode, encoding="utf-8") as fail_handle:
            for result in annotator.annotate_corpus(fresh_samples()):
                if isinstance(result, AnnotationFailure):
                    fail_handle.write(json.dumps(result.to_dict(), ensure_ascii=False) + "\n")
                    failed += 1
                else:
                    out_handle.write(record_line(result) + "\n")
                    annotated += 1
                if (annotated + failed) % settings.checkpoint_every == 0:
                    out_handle.flush()
                    fail_handle.flush()
                    logger.info("progress: %d annotated, %d failed", annotated, failed)
    except (OSError, TransportError) as exc:
        raise click.ClickException(str(exc))
    finally:
        annotator.close()

    rejected = len(diagnostics)
    total_read = counters["read"] + rejected
    counts = {
        "read": total_read,
        "rejected": rejected,
        "skipped_resume": counters["skipped_resume"],
        "annotated": annotated,
        "failed": failed,
    }
    if diagnostics:
        _echo_rejections(diagnostics)
    _write_manifest(
        manifest_path, "annotate", config, seed,
        [input_path], [output_path, failures_path], counts, started,
    )
    click.echo(
        f"annotated {annotated} of {total_read} record(s) "
        f"({failed} failed, {rejected} rejected, {counters['skipped_resume']} resumed past)"
    )


# --------------------------------------------------------------------------
# stats


@main.command()
@click.argument("input_path", metavar="INPUT", type=_IN_PATH)
@click.option("--output", "-o", "prefix", type=_OUT_PATH, required=True,
              help="Output prefix; writes <prefix>.report.json and <prefix>.report.md.")
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--figures/--no-figures", "figures_flag", default=None,
              help="Render PNG charts next to the reports (default: on).")
@click.option("--seed", type=int, default=0, show_default=True)
def stats(
    input_path: Path,
    prefix: Path,
    config_path: Path | None,
    figures_flag: bool | None,
    seed: int,
) -> None:
    """Profile an annotated corpus into machine and Markdown reports."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    if figures_flag is not None:
        config = dataclasses.replace(
            config, stats=dataclasses.replace(config.stats, figures=figures_flag)
        )

    diagnostics: list[LineDiagnostic] = []
    report, bins = profile_corpus(
        load_annotated_corpus(input_path, on_reject=diagnostics.append)
    )
    if report.total == 0 and diagnostics:
        _echo_rejections(diagnostics)
        raise click.ClickException(
            f"no usable records in {input_path}: every line was rejected "
            "(is this an annotated corpus in role/content format?)"
        )
    unannotated = report.by_quality.get(MISSING, 0)
    if report.total > 0 and unannotated == report.total:
        raise click.ClickException(
            f"{input_path} has no annotations: the annotation field is missing or null "
            f"on all {report.total} record(s); run `mixcurate annotate` first"
        )

    json_path = _prepare(Path(str(prefix) + ".report.json"))
    md_path = Path(str(prefix) + ".report.md")
    json_path.write_text(report_json(report, bins) + "\n", encoding="utf-8")
    md_path.write_text(
        render_markdown(report, bins, title=f"Corpus report: {input_path.name}"),
        encoding="utf-8",
    )
    outputs = [json_path, md_path]
    if config.stats.figures:
        from .figures import render_report_figures

        outputs += render_report_figures(report, bins, prefix)

    counts = {"read": report.total + len(diagnostics), "rejected": len(diagnostics),
              "reported": report.total}
    if diagnostics:
        _echo_rejections(diagnostics)
    _write_manifest(
        Path(str(prefix) + ".manifest.json"), "stats", config, seed,
        [input_path], outputs, counts, started,
    )
    click.echo(f"reported on {report.total} record(s): {json_path}, {md_path}")


# --------------------------------------------------------------------------
# curate


@main.command()
@click.argument("inputs", metavar="INPUT...", type=_IN_PATH, nargs=-1, required=True)
@click.option("--output", "-o", "prefix", type=_OUT_PATH, required=True,
              help="Output prefix; writes <prefix>.mixture.jsonl and sidecars.")
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Accepted for interface uniformity; curation is single-pass streaming.")
@click.option("--tau", type=float, default=None, help="Diversity-deficit threshold.")
@click.option("--deficit-mode", type=click.Choice(DEFICIT_MODES), default=None)
@click.option("--quantile-method", type=click.Choice(QUANTILE_METHODS), default=None)
@click.option("--strict-above/--inclusive-above", "strict_above", default=None,
              help="Whether 'above quantile' excludes equality.")
@click.option("--restrict/--no-restrict", "restrict", default=None,
              help="Limit augmentation to deficient categories.")
@click.option("--cap", "cap", type=click.IntRange(min=0), default=None,
              help="Augmentation cap per category.")
@click.option("--dedup/--no-dedup", "dedup", default=None,
              help="Drop exact-duplicate conversations on merge.")
@click.option("--allow-degraded/--no-allow-degraded", "allow_degraded", default=None,
              help="Let judge-scored single-turn samples match judge-score clauses.")
@click.option("--figures/--no-figures", "figures_flag", default=None)
def curate(
    inputs: tuple[Path, ...],
    prefix: Path,
    config_path: Path | None,
    seed: int,
    workers: int | None,
    tau: float | None,
    deficit_mode: str | None,
    quantile_method: str | None,
    strict_above: bool | None,
    restrict: bool | None,
    cap: int | None,
    dedup: bool | None,
    allow_degraded: bool | None,
    figures_flag: bool | None,
) -> None:
    """Curate one or more annotated corpora into a merged mixture."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    overrides = {
        "tau": tau,
        "deficit_mode": deficit_mode,
        "quantile_method": quantile_method,
        "strict_above": strict_above,
        "restrict_augmentation_to_deficient": restrict,
        "augmentation_cap_per_category": cap,
        "dedup_on_merge": dedup,
        "allow_degraded_single_turn": allow_degraded,
    }
    overrides = {key: value for key, value in overrides.items() if value is not None}
    curation = config.curation
    if overrides:
        try:
            curation = dataclasses.replace(curation, **overrides)
        except RecipeError as exc:
            raise click.UsageError(str(exc))
        config = dataclasses.replace(config, curation=curation)
    if figures_flag is not None:
        config = dataclasses.replace(
            config, stats=dataclasses.replace(config.stats, figures=figures_flag)
        )

    labels = [path.stem for path in inputs]
    if len(set(labels)) != len(labels):
        raise click.UsageError(f"input basenames must be distinct, got: {labels}")

    mixture_path = _prepare(Path(str(prefix) + ".mixture.jsonl"))
    traces_path = Path(str(prefix) + ".traces.jsonl")
    report_json_path = Path(str(prefix) + ".report.json")
    report_md_path = Path(str(prefix) + ".report.md")

    results = []
    with tempfile.TemporaryDirectory(prefix="mixcurate-cli-") as tmp:
        for path, label in zip(inputs, labels):
            try:
                result = run_curate(
                    path,
                    curation,
                    dataset_label=label,
                    output_path=Path(tmp) / f"{label}.selected.jsonl",
                )
            except RecipeError as exc:
                raise click.ClickException(str(exc))
            click.echo(
                f"{label}: selected {result.selected_count} of {result.report_before.total} "
                f"(deficient: {', '.join(result.deficient_categories) or 'none'})"
            )
            results.append(result)

        try:
            merge_result = merge_mixtures(results, curation, output_path=mixture_path)
        except RecipeError as exc:
            raise click.ClickException(str(exc))

        with traces_path.open("w", encoding="utf-8") as handle:
            for result in results:
                for trace in result.traces:
                    handle.write(json.dumps(trace.to_dict(), ensure_ascii=False) + "\n")

    mixture_report, mixture_bins = profile_corpus(load_annotated_corpus(mixture_path))

    dataset_reports = {}
    for result in results:
        dataset_reports[result.dataset] = {
            "thresholds": result.thresholds.to_dict(),
            "deficient_categories": list(result.deficient_categories),
            "clause_counts": dict(sorted(result.clause_counts.items())),
            "selected": result.selected_count,
            "report_before": result.report_before.to_dict(),
            "report_core": result.report_core.to_dict(),
            "report_selected": result.report_selected.to_dict(),
            "task_share_shift": diff_reports(result.report_before, result.report_selected),
        }
    report_doc = {
        "datasets": dataset_reports,
        "merge": {
            "written": merge_result.written,
            "duplicates_dropped": merge_result.duplicates_dropped,
            "ids_renamed": merge_result.ids_renamed,
        },
        "mixture": {
            "report": mixture_report.to_dict(),
            "token_bins": mixture_bins.to_dict(),
        },
    }
    report_json_path.write_text(
        json.dumps(report_doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )

    md = ["# Curation report", ""]
    md.append("| dataset | input | selected | deficient categories |")
    md.append("| --- | ---: | ---: | --- |")
    for result in results:
        md.append(
            f"| {result.dataset} | {result.report_before.total:,} | "
            f"{result.selected_count:,} | {', '.join(result.deficient_categories) or '-'} |"
        )
    md += ["",
           f"Merged mixture: {merge_result.written:,} sample(s) "
           f"({merge_result.duplicates_dropped:,} duplicate(s) dropped, "
           f"{merge_result.ids_renamed:,} id(s) renamed).", ""]
    md.append(render_markdown(mixture_report, mixture_bins, title="Mixture profile"))
    report_md_path.write_text("\n".join(md), encoding="utf-8")

    outputs = [mixture_path, traces_path, report_json_path, report_md_path]
    if config.stats.figures:
        from .figures import render_report_figures

        outputs += render_report_figures(mixture_report, mixture_bins, prefix)

    counts = {
        "read": sum(result.report_before.total for result in results),
        "selected": sum(result.selected_count for result in results),
        "written": merge_result.written,
        "duplicates_dropped": merge_result.duplicates_dropped,
        "ids_renamed": merge_result.ids_renamed,
    }
    _write_manifest(
        Path(str(prefix) + ".manifest.json"), "curate", config, seed,
        list(inputs), outputs, counts, started,
    )
    click.echo(f"mixture of {merge_result.written} sample(s) written to {mixture_path}")


# --------------------------------------------------------------------------
# sample


@main.command("sample")
@click.argument("input_path", metavar="INPUT", type=_IN_PATH)
@click.option("--output", "-o", "output_path", type=_OUT_PATH, required=True)
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--fraction", type=float, default=None,
              help="Fraction per stratum in (0, 1] (overrides config).")
@click.option("--by", "keys", multiple=True,
              help="Stratification key(s); repeatable (overrides config).")
@click.option("--seed", type=int, default=0, show_default=True)
def sample(
    input_path: Path,
    output_path: Path,
    config_path: Path | None,
    fraction: float | None,
    keys: tuple[str, ...],
    seed: int,
) -> None:
    """Draw a stratified subsample of an annotated corpus."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    settings = config.sample
    overrides = {}
    if fraction is not None:
        overrides["fraction"] = fraction
    if keys:
        overrides["keys"] = tuple(keys)
    if overrides:
        try:
            settings = dataclasses.replace(settings, **overrides)
        except ConfigError as exc:
            raise click.UsageError(str(exc))
        config = dataclasses.replace(config, sample=settings)

    try:
        result = stratified_sample(
            input_path, settings.fraction, settings.keys, seed,
            output_path=_prepare(output_path),
        )
    except RecipeError as exc:
        raise click.UsageError(str(exc))
    population = sum(size for size, _taken in result.strata.values())
    counts = {"read": population, "selected": result.written, "strata": len(result.strata)}
    _write_manifest(
        output_path.with_name(output_path.stem + ".manifest.json"),
        "sample", config, seed, [input_path], [output_path], counts, started,
    )
    click.echo(
        f"sampled {result.written} of {population} record(s) "
        f"across {len(result.strata)} strat{'um' if len(result.strata) == 1 else 'a'}"
    )


# --------------------------------------------------------------------------
# merge


@main.command()
@click.argument("inputs", metavar="INPUT...", type=_IN_PATH, nargs=-1, required=True)
@click.option("--output", "-o", "output_path", type=_OUT_PATH, required=True)
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--dedup/--no-dedup", "dedup", default=None,
              help="Drop exact-duplicate conversations (default: on).")
@click.option("--seed", type=int, default=0, show_default=True)
def merge(
    inputs: tuple[Path, ...],
    output_path: Path,
    config_path: Path | None,
    dedup: bool | None,
    seed: int,
) -> None:
    """Merge annotated corpora with duplicate and id-collision handling."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    curation = config.curation
    if dedup is not None:
        curation = dataclasses.replace(curation, dedup_on_merge=dedup)
        config = dataclasses.replace(config, curation=curation)
    try:
        result = merge_mixtures(list(inputs), curation, output_path=_prepare(output_path))
    except (RecipeError, CorpusWriteError) as exc:
        raise click.ClickException(str(exc))
    counts = {
        "read": result.written + result.duplicates_dropped,
        "written": result.written,
        "duplicates_dropped": result.duplicates_dropped,
        "ids_renamed": result.ids_renamed,
    }
    _write_manifest(
        output_path.with_name(output_path.stem + ".manifest.json"),
        "merge", config, seed, list(inputs), [output_path], counts, started,
    )
    click.echo(
        f"merged {result.written} record(s) "
        f"({result.duplicates_dropped} duplicate(s) dropped, {result.ids_renamed} id(s) renamed)"
    )


# --------------------------------------------------------------------------
# validate


@main.command()
@click.argument("input_path", metavar="INPUT", type=_IN_PATH)
@click.option("--output", "-o", "prefix", type=_OUT_PATH, default=None,
              help="Manifest prefix (default: alongside INPUT).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--limit", type=click.IntRange(min=1), default=20, show_default=True,
              help="How many violations to print.")
def validate(
    input_path: Path,
    prefix: Path | None,
    seed: int,
    config_path: Path | None,
    limit: int,
) -> None:
    """Check every record against the corpus invariants; exit 0 iff clean."""
    started = time.monotonic()
    config = _load_tool_config(config_path)
    diagnostics: list[LineDiagnostic] = []
    valid = 0
    for _annotated in load_annotated_corpus(input_path, on_reject=diagnostics.append):
        valid += 1
    violations = len(diagnostics)
    counts = {"read": valid + violations, "valid": valid, "violations": violations}
    if prefix is None:
        prefix = input_path.with_name(input_path.stem + ".validate")
    _write_manifest(
        Path(str(prefix) + ".manifest.json"), "validate", config, seed,
        [input_path], [], counts, started,
    )
    if violations:
        click.echo(f"{violations} violation(s) in {valid + violations} record(s):")
        _echo_rejections(diagnostics, limit)
        sys.exit(1)
    click.echo(f"all {valid} record(s) valid")


if __name__ == "__main__":
    main()
