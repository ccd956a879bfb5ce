"""chart rendering for corpus reports.

Reporting commands call render_report_figures after writing the delimited
output; each populated table becomes one PNG next to it. The stats module
itself stays plot-free so library users never pay the matplotlib import.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .corpus import DIFFICULTIES, INPUT_QUALITIES, SAFETY_FLAGS, TASK_CATEGORIES
from .stats import MixtureReport, TokenBins, token_bin_edges

logger = logging.getLogger(__name__)

_FIGSIZE = (8.0, 4.5)
_DPI = 120
_BAR_COLOR = "#4878a8"


def _ordered(table: dict[str, int], canonical: tuple[str, ...]) -> list[str]:
    keys = [k for k in canonical if k in table]
    keys += sorted(k for k in table if k not in canonical)
    return keys


def _bar_chart(table: dict[str, int], order: list[str], title: str, path: Path) -> None:
    counts = [table[k] for k in order]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.bar(range(len(order)), counts, color=_BAR_COLOR)
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels(order, rotation=40, ha="right", fontsize=8)
    ax.set_ylabel("samples")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def _st_histogram_order(table: dict[str, int]) -> list[str]:
    numeric = sorted((k for k in table if k not in ("underflow", "overflow")), key=int)
    keys = []
    if "underflow" in table:
        keys.append("underflow")
    keys += numeric
    if "overflow" in table:
        keys.append("overflow")
    return keys


def _reward_charts(report: MixtureReport, prefix: Path, written: list[Path]) -> None:
    if report.reward_histogram_st:
        path = prefix.with_name(prefix.name + "_reward_st.png")
        order = _st_histogram_order(report.reward_histogram_st)
        _bar_chart(
            report.reward_histogram_st, order,
            "Single-turn reward delta (unit bins)", path,
        )
        written.append(path)
    if report.reward_histogram_mt:
        path = prefix.with_name(prefix.name + "_reward_mt.png")
        order = [str(s) for s in range(6) if str(s) in report.reward_histogram_mt]
        _bar_chart(report.reward_histogram_mt, order, "Multi-turn judge score", path)
        written.append(path)


def _token_chart(bins: TokenBins, prefix: Path, written: list[Path]) -> None:
    if not bins.present:
        return
    edges = token_bin_edges()
    lefts = list(edges[:-1])
    widths = [edges[i + 1] - edges[i] for i in range(len(edges) - 1)]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.bar(lefts, bins.counts, width=widths, align="edge", color=_BAR_COLOR,
           edgecolor="white", linewidth=0.3)
    ax.set_xscale("log")
    ax.set_xlabel("tokens per sample (log scale)")
    ax.set_ylabel("samples")
    title = "Token length distribution"
    if bins.underflow or bins.overflow:
        title += f" (underflow={bins.underflow}, overflow={bins.overflow})"
    ax.set_title(title)
    fig.tight_layout()
    path = prefix.with_name(prefix.name + "_tokens.png")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)


def render_report_figures(
    report: MixtureReport, token_bins: TokenBins | None, prefix: str | Path
) -> list[Path]:
    """Write one PNG per populated table; returns the files written."""
    prefix = Path(prefix)
    written: list[Path] = []
    charts = (
        (report.by_task, TASK_CATEGORIES, "Task categories", "_tasks.png"),
        (report.by_quality, INPUT_QUALITIES, "Input quality", "_quality.png"),
        (report.by_difficulty, DIFFICULTIES, "Difficulty", "_difficulty.png"),
        (report.by_safety, SAFETY_FLAGS, "Safety", "_safety.png"),
    )
    for table, canonical, title, suffix in charts:
        if not table:
            continue
        path = prefix.with_name(prefix.name + suffix)
        _bar_chart(table, _ordered(table, canonical), title, path)
        written.append(path)
    _reward_charts(report, prefix, written)
    if token_bins is not None:
        _token_chart(token_bins, prefix, written)
    logger.info("wrote %d figure(s)", len(written))
    return written
