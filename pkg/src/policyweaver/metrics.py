"""Evaluation layer: goal-completion rates, anytime and cost curves, and
report emission.

TGC gives per-task credit (passed tasks over all tasks); SGC gives per-domain
credit (a domain counts only when every task passed). The curves replay the
run's event log: after each policy-generation cycle, y is the fraction of
suite domains solved so far, plotted against the iteration ordinal or the
priced cumulative inference cost.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .model import EngineConfig, ModelError, canonical_json
from .orchestrator import (
    EVENT_DEBUG_ITERATION,
    EVENT_DOMAIN_SOLVED,
    DomainResult,
    RunEvent,
    SuiteReport,
)
from .repository import UsageStats


@dataclass(frozen=True)
class CurvePoint:
    """One sample: cumulative solved fraction after an iteration ordinal or a
    spend level."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.y <= 1.0:
            raise ModelError(f"curve point y must be in [0, 1], got {self.y}")


def _check_curve(points: Sequence[CurvePoint]) -> list[CurvePoint]:
    for prev, here in zip(points, points[1:]):
        if here.x <= prev.x:
            raise ModelError("curve x values must be strictly increasing")
        if here.y < prev.y:
            raise ModelError("curve y values must be non-decreasing")
    return list(points)


def tgc_sgc(results: Sequence[DomainResult]) -> dict[str, float]:
    """Task and scenario goal-completion percentages over a results set."""
    if not results:
        raise ModelError("tgc_sgc requires at least one domain result")
    total_tasks = sum(len(result.task_passes) for result in results)
    passed_tasks = sum(result.tasks_passed for result in results)
    solved = sum(1 for result in results if result.solved)
    return {
        "tgc": 100.0 * passed_tasks / total_tasks,
        "sgc": 100.0 * solved / len(results),
    }


def _solved_after_each_iteration(events: Sequence[RunEvent]) -> list[int]:
    """Replay the log: solved-domain count attributed to each debug iteration.

    A domain-solved event immediately follows the iteration that produced it,
    so the solve credits the latest iteration."""
    counts: list[int] = []
    solved = 0
    for event in events:
        if event.kind == EVENT_DEBUG_ITERATION:
            counts.append(solved)
        elif event.kind == EVENT_DOMAIN_SOLVED:
            solved += 1
            if counts:
                counts[-1] = solved
    return counts


def anytime_curve(events: Sequence[RunEvent], total_domains: int) -> list[CurvePoint]:
    """Cumulative solved fraction after each debugging iteration."""
    if total_domains < 1:
        raise ModelError("anytime_curve requires at least one domain")
    counts = _solved_after_each_iteration(events)
    return _check_curve(
        [CurvePoint(x=float(i), y=count / total_domains) for i, count in enumerate(counts, 1)]
    )


def cost_curve(
    events: Sequence[RunEvent], total_domains: int, config: EngineConfig
) -> list[CurvePoint]:
    """Cumulative solved fraction against priced cumulative inference cost.

    Iterations that added no billed tokens collapse into one point, keeping
    the later (higher) y."""
    if total_domains < 1:
        raise ModelError("cost_curve requires at least one domain")
    counts = _solved_after_each_iteration(events)
    iteration_events = [e for e in events if e.kind == EVENT_DEBUG_ITERATION]
    points: list[CurvePoint] = []
    for event, count in zip(iteration_events, counts):
        x = (
            event.usage.input_tokens * config.price_per_m_input
            + event.usage.output_tokens * config.price_per_m_output
        ) / 1_000_000
        point = CurvePoint(x=x, y=count / total_domains)
        if points and points[-1].x == point.x:
            points[-1] = point
        else:
            points.append(point)
    return _check_curve(points)


# -- report emission ----------------------------------------------------------

SUMMARY_JSON = "summary.json"
DOMAINS_CSV = "domains.csv"
CURVES_CSV = "curves.csv"
USAGE_CSV = "usage.csv"
EVENTS_JSONL = "events.jsonl"
SUMMARY_TXT = "summary.txt"

REPORT_FILES = (SUMMARY_JSON, DOMAINS_CSV, CURVES_CSV, USAGE_CSV, EVENTS_JSONL, SUMMARY_TXT)

_DOMAIN_COLUMNS = (
    "domain_id",
    "status",
    "tasks_passed",
    "tasks_total",
    "iterations",
    "input_tokens",
    "output_tokens",
    "policy_id",
    "components_learned",
)
_CURVE_COLUMNS = ("curve", "x", "y")
_USAGE_COLUMNS = (
    "provenance",
    "available",
    "total_used",
    "utilization_pct",
    "per_scenario_mean",
    "reuse_rate",
    "multi_use_pct",
)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return out.getvalue()


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def render_curves_csv(
    events: Sequence[RunEvent], total_domains: int, config: EngineConfig
) -> str:
    """The curves table as CSV text; lets a saved event log be re-rendered."""
    rows: list[tuple[str, str, str]] = []
    if total_domains:
        for point in anytime_curve(events, total_domains):
            rows.append(("anytime", _fmt(point.x), _fmt(point.y)))
        for point in cost_curve(events, total_domains, config):
            rows.append(("cost", _fmt(point.x), _fmt(point.y)))
    return _csv_text(_CURVE_COLUMNS, rows)


def emit_reports(
    out_dir: str | Path,
    report: SuiteReport,
    config: EngineConfig,
    usage_stats: Mapping[str, UsageStats] | None = None,
) -> list[Path]:
    """Write the machine-readable tables plus a plain-text summary.

    Field order is fixed, so identical inputs produce byte-identical files.
    An empty suite produces headers-only tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = report.results
    rates = tgc_sgc(results) if results else {"tgc": 0.0, "sgc": 0.0}
    total = report.events[-1].usage if report.events else None
    input_tokens = total.input_tokens if total else 0
    output_tokens = total.output_tokens if total else 0
    cost = (
        input_tokens * config.price_per_m_input
        + output_tokens * config.price_per_m_output
    ) / 1_000_000

    summary = {
        "mode": report.mode,
        "domains": len(results),
        "solved": report.solved_domains,
        "tgc": rates["tgc"],
        "sgc": rates["sgc"],
        "debug_iterations": report.debug_iterations,
        "generalization_passes": len(report.generalization_passes),
        "input_tokens": input_tokens,
        "output_tokens": output_tokens,
        "cost": cost,
        "config": config.to_dict(),
    }

    domain_rows = [
        (
            result.domain_id,
            result.status,
            result.tasks_passed,
            len(result.task_passes),
            result.iterations,
            result.usage.input_tokens,
            result.usage.output_tokens,
            result.policy_id,
            " ".join(result.components_learned),
        )
        for result in results
    ]

    curves_text = render_curves_csv(report.events, len(results), config)

    usage_rows = []
    for provenance, stats in (usage_stats or {}).items():
        usage_rows.append(
            (
                provenance,
                stats.available,
                stats.total_used,
                _fmt(stats.utilization_pct),
                _fmt(stats.per_scenario_mean),
                _fmt(stats.reuse_rate),
                _fmt(stats.multi_use_pct),
            )
        )

    lines = [
        f"mode: {report.mode}",
        f"domains solved: {report.solved_domains}/{len(results)}",
        f"TGC: {rates['tgc']:.1f}%  SGC: {rates['sgc']:.1f}%",
        f"debugging iterations: {report.debug_iterations}",
        f"generalization passes: {len(report.generalization_passes)}",
        f"tokens: {input_tokens} in / {output_tokens} out  cost: {cost:.4f}",
    ]
    for result in results:
        lines.append(
            f"  {result.domain_id}: {result.status} "
            f"({result.tasks_passed}/{len(result.task_passes)} tasks, "
            f"{result.iterations} iterations)"
        )

    files = {
        SUMMARY_JSON: canonical_json(summary, indent=2) + "\n",
        DOMAINS_CSV: _csv_text(_DOMAIN_COLUMNS, domain_rows),
        CURVES_CSV: curves_text,
        USAGE_CSV: _csv_text(_USAGE_COLUMNS, usage_rows),
        EVENTS_JSONL: "".join(
            canonical_json(event.to_dict()) + "\n" for event in report.events
        ),
        SUMMARY_TXT: "\n".join(lines) + "\n",
    }
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
