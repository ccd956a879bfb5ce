#!/usr/bin/env python3
"""Convert a Hugging Face dataset (or a JSONL export) into corpus records.

Best effort by design: published annotation dumps do not share a single
column layout, so every field can be re-pointed with --column-map and
anything that cannot be interpreted is skipped with a count instead of
aborting the run. The output is the record-per-line JSONL format the
toolkit reads natively (documented in README.md).

Examples:

    python scripts/convert_hf_dataset.py org/annotated-sft --split train \\
        --dataset-label tulu --output tulu.jsonl

    python scripts/convert_hf_dataset.py rows.jsonl --local \\
        --column-map conversation=messages --column-map id=uid \\
        --dataset-label smoltalk --output smoltalk.jsonl

Hub sources stream through the `datasets` package (pip install datasets);
--local reads a plain JSONL file with no third-party dependency.
"""

import argparse
import json
import logging
import sys

logger = logging.getLogger("convert_hf_dataset")

ROLE_MAP = {
    "human": "user",
    "user": "user",
    "gpt": "assistant",
    "assistant": "assistant",
    "system": "system",
}

# output field -> source columns tried in order; --column-map overrides
DEFAULT_COLUMNS = {
    "id": ("id", "uid"),
    "conversation": ("conversation", "conversations", "messages"),
    "source_dataset": ("source_dataset", "source"),
    "source_subset": ("source_subset", "subset", "split"),
    "task_category": ("task_category", "primary_tag"),
    "other_task_tags": ("other_task_tags", "other_tags"),
    "input_quality": ("input_quality", "quality"),
    "difficulty": ("difficulty",),
    "language": ("language", "lang"),
    "safety": ("safety", "safety_label"),
    "reward_delta": ("delta", "reward_delta", "reward"),
    "reward_star": ("r_star", "reward_star"),
    "reward_base": ("r_base", "reward_base"),
    "reward_score": ("score", "judge_score", "reward_score"),
    "token_count": ("token_count", "num_tokens"),
}

ANNOTATION_FIELDS = ("task_category", "input_quality", "difficulty", "language", "safety")
SAFETY_VALUES = {"safe", "unsafe", "unknown"}


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="hub dataset name, or a JSONL path with --local")
    parser.add_argument("--local", action="store_true", help="treat SOURCE as a local JSONL file")
    parser.add_argument("--split", default="train", help="hub split to stream (default: train)")
    parser.add_argument("--output", "-o", required=True, help="destination JSONL path")
    parser.add_argument(
        "--dataset-label",
        default=None,
        help="source_dataset for rows that lack one (default: derived from SOURCE)",
    )
    parser.add_argument(
        "--subset-label", default="main", help="source_subset for rows that lack one"
    )
    parser.add_argument(
        "--column-map",
        action="append",
        default=[],
        metavar="FIELD=COLUMN",
        help="re-point an output field at a source column; repeatable",
    )
    parser.add_argument("--limit", type=int, default=None, help="convert at most N rows")
    parser.add_argument(
        "--no-token-counts",
        action="store_true",
        help="skip the whitespace token count (kept by default when derivable)",
    )
    return parser.parse_args(argv)


def build_column_table(overrides):
    table = {field: list(columns) for field, columns in DEFAULT_COLUMNS.items()}
    for entry in overrides:
        field, _, column = entry.partition("=")
        if not column or field not in table:
            known = ", ".join(sorted(table))
            raise SystemExit(f"bad --column-map {entry!r}; expected FIELD=COLUMN with FIELD in {known}")
        table[field] = [column]
    return table


def iter_source(args):
    if args.local:
        def rows():
            with open(args.source, "r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if line:
                        yield json.loads(line)

        return rows()
    try:
        import datasets
    except ImportError:
        raise SystemExit(
            "converting a hub dataset needs the `datasets` package "
            "(pip install datasets), or pass --local with a JSONL file"
        )
    return iter(datasets.load_dataset(args.source, split=args.split, streaming=True))


def pick(row, columns):
    for column in columns:
        if column in row and row[column] is not None:
            return row[column]
    return None


def normalize_conversation(raw):
    """Return [{'role', 'content'}, ...] or None if the value is opaque."""
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except ValueError:
            return None
    if not isinstance(raw, list) or not raw:
        return None
    messages = []
    for item in raw:
        if not isinstance(item, dict):
            return None
        role = item.get("role") or item.get("from")
        content = item.get("content") if "content" in item else item.get("value")
        role = ROLE_MAP.get(str(role).strip().lower()) if role is not None else None
        if role is None or not isinstance(content, str):
            return None
        messages.append({"role": role, "content": content})
    return messages


def build_reward(row, columns, turn_type):
    delta = pick(row, columns["reward_delta"])
    star = pick(row, columns["reward_star"])
    base = pick(row, columns["reward_base"])
    if delta is not None and turn_type == "single_turn":
        try:
            delta = float(delta)
            star = float(star) if star is not None else delta
            base = float(base) if base is not None else star - delta
        except (TypeError, ValueError):
            return None
        return {"kind": "delta", "r_star": star, "r_base": base, "delta": delta}
    score = pick(row, columns["reward_score"])
    if score is None:
        return None
    try:
        score = int(score)
    except (TypeError, ValueError):
        return None
    if not 0 <= score <= 5:
        return None
    return {"kind": "judge", "score": score}


def build_annotation(row, columns, turn_type):
    values = {}
    for field in ANNOTATION_FIELDS:
        value = pick(row, columns[field])
        if value is None:
            return None
        values[field] = str(value).strip() if field == "task_category" else str(value).strip().lower()
    if values["safety"] not in SAFETY_VALUES:
        values["safety"] = "unknown"
    reward = build_reward(row, columns, turn_type)
    if reward is None:
        return None
    tags = pick(row, columns["other_task_tags"])
    if isinstance(tags, str):
        tags = [tag.strip() for tag in tags.split(",") if tag.strip()]
    values["other_task_tags"] = list(tags) if isinstance(tags, list) else []
    values["reward"] = reward
    values["turn_type"] = turn_type
    return values


def convert(args):
    columns = build_column_table(args.column_map)
    label = args.dataset_label or args.source.rsplit("/", 1)[-1].split(".")[0]
    converted = skipped = unannotated = assigned_ids = 0
    seen_ids = set()

    with open(args.output, "w", encoding="utf-8") as out:
        for index, row in enumerate(iter_source(args)):
            if args.limit is not None and converted >= args.limit:
                break
            conversation = normalize_conversation(pick(row, columns["conversation"]))
            if conversation is None or len(conversation) < 2:
                skipped += 1
                continue
            turn_type = "single_turn" if len(conversation) == 2 else "multi_turn"

            record_id = pick(row, columns["id"])
            if record_id is None:
                record_id = f"{label}-{index:08d}"
                assigned_ids += 1
            record_id = str(record_id)
            bump = 1
            while record_id in seen_ids:
                bump += 1
                record_id = f"{record_id}#{bump}"
            seen_ids.add(record_id)

            record = {
                "id": record_id,
                "source_dataset": str(pick(row, columns["source_dataset"]) or label),
                "source_subset": str(pick(row, columns["source_subset"]) or args.subset_label),
                "conversation": conversation,
                "annotation": build_annotation(row, columns, turn_type),
            }
            if record["annotation"] is None:
                unannotated += 1

            if not args.no_token_counts:
                tokens = pick(row, columns["token_count"])
                if tokens is None:
                    tokens = sum(len(m["content"].split()) for m in conversation)
                if isinstance(tokens, int) and tokens >= len(conversation):
                    record["token_count"] = tokens

            out.write(json.dumps(record, ensure_ascii=False) + "\n")
            converted += 1

    logger.info(
        "converted %d row(s) to %s (%d skipped, %d without a full annotation, %d ids assigned)",
        converted,
        args.output,
        skipped,
        unannotated,
        assigned_ids,
    )
    return 0 if converted else 1


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    return convert(parse_args(argv if argv is not None else sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main())
