"""End-to-end checks for the command line interface.

Everything runs through click's CliRunner against stub:// endpoints, so no
network is involved. The subprocess-level determinism checks live in
test_acceptance.py.
"""

import json
import random

import pytest
from click.testing import CliRunner

from mixcurate import __version__
from mixcurate.cli import main
from mixcurate.corpus import AnnotatedSample, load_annotated_corpus
from mixcurate.recipe import CurationConfig, curate, merge_mixtures, stratified_sample

from _helpers import mk_annotated, mk_sample, random_annotated_corpus, write_corpus


def _runner():
    return CliRunner()


def _write_raw(path, n, *, fail_at=None, fail_dimension="language"):
    """Write n unannotated records in the from/value wire format."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            question = f"Walk me through step {i} of the bread recipe."
            if fail_at is not None and i == fail_at:
                question += f" FAILME:{fail_dimension}"
            record = {
                "id": f"r{i}",
                "conversations": [
                    {"from": "human", "value": question},
                    {"from": "gpt", "value": f"Step {i}: fold the dough and rest it."},
                ],
            }
            fh.write(json.dumps(record) + "\n")


def _load_manifest(prefix_path):
    base = prefix_path.parent / prefix_path.stem if prefix_path.suffix else prefix_path
    return json.loads((base.parent / (base.name + ".manifest.json")).read_text())


def test_version_flag():
    result = _runner().invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "mixcurate" in result.output
    assert __version__ in result.output


def test_annotate_requires_config(tmp_path):
    raw = tmp_path / "raw.jsonl"
    _write_raw(raw, 2)
    result = _runner().invoke(main, ["annotate", str(raw), "-o", str(tmp_path / "out.jsonl")])
    assert result.exit_code == 2
    assert "--config" in result.output


def test_missing_input_is_a_usage_error(tmp_path, stub_config):
    result = _runner().invoke(
        main,
        ["annotate", str(tmp_path / "nope.jsonl"), "--config", str(stub_config()), "-o", str(tmp_path / "out.jsonl")],
    )
    assert result.exit_code == 2


def test_annotate_end_to_end(tmp_path, stub_config):
    raw = tmp_path / "raw.jsonl"
    _write_raw(raw, 6, fail_at=3, fail_dimension="difficulty")
    out = tmp_path / "out.jsonl"

    result = _runner().invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "annotated 5 of 6 record(s) (1 failed, 0 rejected, 0 resumed past)" in result.output

    samples = list(load_annotated_corpus(str(out)))
    assert len(samples) == 5
    assert all(s.annotation is not None for s in samples)
    assert "r3" not in {s.sample.id for s in samples}
    # dataset/subset defaults come from the config file
    assert {s.sample.source_dataset for s in samples} == {"rawdemo"}
    assert {s.sample.source_subset for s in samples} == {"unit"}

    failures = [json.loads(line) for line in (tmp_path / "out.failures.jsonl").read_text().splitlines()]
    assert len(failures) == 1
    assert failures[0]["sample_id"] == "r3"
    assert failures[0]["dimension"] == "difficulty"
    assert failures[0]["attempts"] >= 1
    assert failures[0]["last_excerpt"]

    manifest = _load_manifest(out)
    assert manifest["command"] == "annotate"
    assert manifest["tool_version"] == __version__
    assert manifest["counts"] == {
        "annotated": 5,
        "failed": 1,
        "read": 6,
        "rejected": 0,
        "skipped_resume": 0,
    }
    assert manifest["inputs"] == [str(raw)]
    assert str(out) in manifest["outputs"]
    assert isinstance(manifest["timing"]["wall_time_seconds"], float)


def test_annotate_manifest_stable_modulo_timing(tmp_path, stub_config):
    raw = tmp_path / "raw.jsonl"
    _write_raw(raw, 4)
    out = tmp_path / "out.jsonl"
    runner = _runner()

    assert runner.invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out)]).exit_code == 0
    first = _load_manifest(out)
    assert runner.invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out)]).exit_code == 0
    second = _load_manifest(out)

    first.pop("timing")
    second.pop("timing")
    assert first == second


def test_annotate_resume_reconstructs_byte_identically(tmp_path, stub_config):
    raw = tmp_path / "raw.jsonl"
    _write_raw(raw, 8, fail_at=2, fail_dimension="reward")
    runner = _runner()

    baseline = tmp_path / "full.jsonl"
    assert runner.invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(baseline)]).exit_code == 0
    expected = baseline.read_bytes()

    out = tmp_path / "resumed.jsonl"
    assert runner.invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out)]).exit_code == 0
    # simulate a crash mid-write: keep three complete lines and half a fourth
    lines = out.read_bytes().splitlines(keepends=True)
    torn = b"".join(lines[:3]) + lines[3][: len(lines[3]) // 2]
    out.write_bytes(torn)

    result = runner.invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out), "--resume"])
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == expected

    # three complete output lines survive the tear, plus the logged failure id
    counts = _load_manifest(out)["counts"]
    assert counts["skipped_resume"] == 4
    assert counts["annotated"] + counts["failed"] + counts["skipped_resume"] + counts["rejected"] == counts["read"]


def test_annotate_rejects_malformed_lines_but_continues(tmp_path, stub_config):
    raw = tmp_path / "raw.jsonl"
    _write_raw(raw, 3)
    lines = raw.read_text().splitlines()
    lines.insert(1, "this is not json")
    raw.write_text("\n".join(lines) + "\n")

    out = tmp_path / "out.jsonl"
    result = _runner().invoke(main, ["annotate", str(raw), "--config", str(stub_config()), "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "1 rejected" in result.output
    counts = _load_manifest(out)["counts"]
    assert counts["rejected"] == 1
    assert counts["annotated"] == 3


def test_stats_writes_reports(tmp_path):
    corpus = tmp_path / "ann.jsonl"
    rng = random.Random(21)
    write_corpus(corpus, random_annotated_corpus(rng, 60, with_tokens=True))
    prefix = tmp_path / "st"

    result = _runner().invoke(main, ["stats", str(corpus), "-o", str(prefix), "--no-figures"])
    assert result.exit_code == 0, result.output
    assert "reported on 60 record(s)" in result.output

    payload = json.loads((tmp_path / "st.report.json").read_text())
    assert payload["report"]["total"] == 60
    assert set(payload) == {"report", "token_bins"}
    markdown = (tmp_path / "st.report.md").read_text()
    assert markdown.startswith("#")
    assert "Task categories" in markdown
    assert not list(tmp_path.glob("st*.png"))


def test_stats_renders_figures(tmp_path):
    corpus = tmp_path / "ann.jsonl"
    rng = random.Random(22)
    write_corpus(corpus, random_annotated_corpus(rng, 24, with_tokens=True))
    prefix = tmp_path / "fig"

    result = _runner().invoke(main, ["stats", str(corpus), "-o", str(prefix), "--figures"])
    assert result.exit_code == 0, result.output
    produced = {p.name for p in tmp_path.glob("fig_*.png")}
    expected = {
        "fig_tasks.png",
        "fig_quality.png",
        "fig_difficulty.png",
        "fig_safety.png",
        "fig_tokens.png",
        "fig_reward_st.png",
        "fig_reward_mt.png",
    }
    assert produced == expected
    for name in expected:
        assert (tmp_path / name).stat().st_size > 0


def test_stats_fails_when_nothing_is_annotated(tmp_path):
    corpus = tmp_path / "raw.jsonl"
    write_corpus(corpus, [AnnotatedSample(mk_sample(f"u{i}"), None) for i in range(5)])
    result = _runner().invoke(main, ["stats", str(corpus), "-o", str(tmp_path / "st"), "--no-figures"])
    assert result.exit_code == 1
    assert "annotation" in result.output.lower()


def test_curate_cli_matches_library(tmp_path):
    rng = random.Random(31)
    alpha_samples = random_annotated_corpus(rng, 120, dataset="alpha", with_tokens=True)
    beta_samples = random_annotated_corpus(rng, 90, dataset="beta", with_tokens=True)
    alpha = tmp_path / "alpha.jsonl"
    beta = tmp_path / "beta.jsonl"
    write_corpus(alpha, alpha_samples)
    write_corpus(beta, beta_samples)
    prefix = tmp_path / "mix"

    result = _runner().invoke(main, ["curate", str(alpha), str(beta), "-o", str(prefix), "--no-figures"])
    assert result.exit_code == 0, result.output
    assert "alpha: selected" in result.output
    assert "beta: selected" in result.output

    config = CurationConfig()
    lib_alpha = curate(alpha_samples, config, dataset_label="alpha")
    lib_beta = curate(beta_samples, config, dataset_label="beta")
    merge = merge_mixtures([lib_alpha, lib_beta], config)

    got = list(load_annotated_corpus(str(tmp_path / "mix.mixture.jsonl")))
    assert [s.sample.id for s in got] == [s.sample.id for s in merge.samples]

    traces = [json.loads(line) for line in (tmp_path / "mix.traces.jsonl").read_text().splitlines()]
    lib_traces = {
        (t.sample_id, t.source_dataset): t.clause
        for t in lib_alpha.traces + lib_beta.traces
    }
    assert len(traces) == len(lib_traces)
    for row in traces:
        assert lib_traces[(row["sample_id"], row["source_dataset"])] == row["clause"]

    report = json.loads((tmp_path / "mix.report.json").read_text())
    assert set(report) == {"datasets", "merge", "mixture"}
    thresholds = report["datasets"]["alpha"]["thresholds"]
    assert thresholds["q1_excellent_st"] == lib_alpha.thresholds.q1_excellent_st
    assert thresholds["q2_excellent_st"] == lib_alpha.thresholds.q2_excellent_st
    assert thresholds["method"] == "linear_interpolation"
    assert report["merge"]["written"] == merge.written
    assert report["mixture"]["report"]["total"] == merge.written

    manifest = _load_manifest(prefix)
    curation_settings = manifest["config"]["curation"]
    assert curation_settings["tau"] == config.tau
    assert curation_settings["strict_above"] is True
    assert curation_settings["quantile_method"] == "linear_interpolation"
    assert manifest["counts"]["written"] == merge.written


def test_curate_flag_passthrough(tmp_path):
    rng = random.Random(32)
    samples = random_annotated_corpus(rng, 150, dataset="gamma", degraded_share=0.2, with_tokens=True)
    corpus = tmp_path / "gamma.jsonl"
    write_corpus(corpus, samples)
    prefix = tmp_path / "mix"

    result = _runner().invoke(
        main,
        [
            "curate",
            str(corpus),
            "-o",
            str(prefix),
            "--no-figures",
            "--tau",
            "0.5",
            "--inclusive-above",
            "--no-restrict",
            "--cap",
            "2",
            "--allow-degraded",
        ],
    )
    assert result.exit_code == 0, result.output

    config = CurationConfig(
        tau=0.5,
        strict_above=False,
        restrict_augmentation_to_deficient=False,
        augmentation_cap_per_category=2,
        allow_degraded_single_turn=True,
    )
    expected = curate(samples, config, dataset_label="gamma")
    got = list(load_annotated_corpus(str(tmp_path / "mix.mixture.jsonl")))
    assert {s.sample.id for s in got} == {s.sample.id for s in expected.iter_selected()}

    settings = _load_manifest(prefix)["config"]["curation"]
    assert settings["tau"] == 0.5
    assert settings["strict_above"] is False
    assert settings["restrict_augmentation_to_deficient"] is False
    assert settings["augmentation_cap_per_category"] == 2
    assert settings["allow_degraded_single_turn"] is True


def test_curate_rejects_colliding_input_stems(tmp_path):
    rng = random.Random(33)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    pa = tmp_path / "a" / "corp.jsonl"
    pb = tmp_path / "b" / "corp.jsonl"
    write_corpus(pa, random_annotated_corpus(rng, 20, dataset="a"))
    write_corpus(pb, random_annotated_corpus(rng, 20, dataset="b"))

    result = _runner().invoke(main, ["curate", str(pa), str(pb), "-o", str(tmp_path / "m"), "--no-figures"])
    assert result.exit_code == 2
    assert "distinct" in result.output


def test_sample_cli_matches_library(tmp_path):
    rng = random.Random(41)
    samples = random_annotated_corpus(rng, 100, dataset="delta", with_tokens=True)
    corpus = tmp_path / "delta.jsonl"
    write_corpus(corpus, samples)
    out = tmp_path / "picked.jsonl"

    result = _runner().invoke(
        main,
        [
            "sample",
            str(corpus),
            "-o",
            str(out),
            "--fraction",
            "0.3",
            "--by",
            "source_subset",
            "--by",
            "task_category",
            "--seed",
            "5",
        ],
    )
    assert result.exit_code == 0, result.output

    expected = stratified_sample(samples, 0.3, keys=("source_subset", "task_category"), seed=5)
    got = list(load_annotated_corpus(str(out)))
    assert [s.sample.id for s in got] == [s.sample.id for s in expected.samples]
    assert f"sampled {expected.written} of 100 record(s)" in result.output

    manifest = _load_manifest(out)
    assert manifest["counts"]["selected"] == expected.written
    assert manifest["seed"] == 5


def test_merge_cli_matches_library(tmp_path):
    rng = random.Random(42)
    left = random_annotated_corpus(rng, 40, dataset="left")
    right = random_annotated_corpus(rng, 30, dataset="right")
    # plant one exact duplicate conversation across files
    right[0] = mk_annotated("dupe", dataset="right", stamp=left[0].sample.id)
    left_path = tmp_path / "left.jsonl"
    right_path = tmp_path / "right.jsonl"
    write_corpus(left_path, left)
    write_corpus(right_path, right)
    out = tmp_path / "merged.jsonl"

    result = _runner().invoke(main, ["merge", str(left_path), str(right_path), "-o", str(out)])
    assert result.exit_code == 0, result.output

    expected = merge_mixtures([left, right])
    got = list(load_annotated_corpus(str(out)))
    assert [s.sample.id for s in got] == [s.sample.id for s in expected.samples]
    assert f"merged {expected.written} record(s)" in result.output
    assert f"{expected.duplicates_dropped} duplicate(s) dropped" in result.output
    assert expected.duplicates_dropped == 1

    no_dedup = tmp_path / "kept.jsonl"
    result = _runner().invoke(
        main, ["merge", str(left_path), str(right_path), "-o", str(no_dedup), "--no-dedup"]
    )
    assert result.exit_code == 0, result.output
    kept = merge_mixtures([left, right], CurationConfig(dedup_on_merge=False))
    assert [s.sample.id for s in load_annotated_corpus(str(no_dedup))] == [
        s.sample.id for s in kept.samples
    ]


def test_validate_clean_corpus(tmp_path):
    corpus = tmp_path / "good.jsonl"
    write_corpus(corpus, [mk_annotated(f"v{i}") for i in range(4)])
    result = _runner().invoke(main, ["validate", str(corpus)])
    assert result.exit_code == 0
    assert "all 4 record(s) valid" in result.output
    assert (tmp_path / "good.validate.manifest.json").exists()


def test_validate_reports_violations(tmp_path):
    corpus = tmp_path / "good.jsonl"
    write_corpus(corpus, [mk_annotated(f"v{i}") for i in range(4)])
    lines = corpus.read_text().splitlines()
    lines.insert(1, "not json at all")
    lines.insert(2, '{"id": "hollow", "conversation": []}')
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")

    result = _runner().invoke(main, ["validate", str(bad), "-o", str(tmp_path / "check")])
    assert result.exit_code == 1
    assert "2 violation(s) in 6 record(s)" in result.output
    assert "rejected line 2" in result.output
    assert "rejected line 3" in result.output
    assert (tmp_path / "check.manifest.json").exists()

    limited = _runner().invoke(main, ["validate", str(bad), "--limit", "1", "-o", str(tmp_path / "check2")])
    assert limited.exit_code == 1
    assert "... and 1 more" in limited.output


def test_validate_counts_in_manifest(tmp_path):
    corpus = tmp_path / "good.jsonl"
    write_corpus(corpus, [mk_annotated(f"v{i}") for i in range(3)])
    result = _runner().invoke(main, ["validate", str(corpus), "-o", str(tmp_path / "v")])
    assert result.exit_code == 0
    manifest = json.loads((tmp_path / "v.manifest.json").read_text())
    assert manifest["command"] == "validate"
    assert manifest["counts"]["read"] == 3


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "mixcurate.cli", "--version"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert "mixcurate" in proc.stdout
