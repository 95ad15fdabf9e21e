"""
Fix-rate and coverage metrics, and the JSON/markdown report.

FR is computed on trace-validated fixes, so it is not the figure a formal
tool would report for the same assertions.
"""
import json
import logging
import os
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from cdfg import BACKWARD, DesignCdfg, cone_of_influence
from exceptions import UnknownSignal
from fix import FIXED, SKIPPED, FixOutcome
from hdl_frontend import SvaAssertion, render_assertion

SCHEMA_VERSION = 1
VALIDATION_LABEL = "trace-validated"
COVERAGE_LABEL = "COI(analog)"
PROOF_CORE_NOTE = "requires formal engine"
PUBLISHED_COUNTS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "benchmarks", "published_fix_counts.json")


class DesignRow(BaseModel):
    """TE/LE counts of one design under one strategy or backend label."""
    model_config = ConfigDict(extra="forbid")

    design: str
    column: str
    te_attempted: int = 0
    te_fixed: int = 0
    le_attempted: int = 0
    le_fixed: int = 0
    unclassified: int = 0
    fr: Optional[float] = Field(default=None, description="Percent, one decimal; None when nothing was attempted")


class OutcomeRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    design: str
    strategy: str
    bucket: Optional[str] = None
    classification: Optional[str] = None
    classification_source: Optional[str] = None
    status: str
    original: str
    accepted: Optional[str] = None
    origin: Optional[str] = None
    candidates_tried: int = 0
    error: Optional[str] = None


class CoverageRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    design: str
    metric: str = COVERAGE_LABEL
    before: float
    after: float
    proof_core: str = PROOF_CORE_NOTE


class FixReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    validation: str = VALIDATION_LABEL
    rows: List[DesignRow] = Field(default_factory=list)
    outcomes: List[OutcomeRow] = Field(default_factory=list)
    coverage: List[CoverageRow] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)


def fr_percent(fixed: int, attempted: int) -> Optional[float]:
    """100 * fixed / attempted rounded half-up to one decimal; None for zero attempts."""
    if attempted == 0:
        return None
    value = (Decimal(100 * fixed) / Decimal(attempted)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return float(value)


def design_row(design: str, column: str, te: Sequence[int], le: Sequence[int], unclassified: int = 0) -> DesignRow:
    """Builds a row from (attempted, fixed) pairs."""
    return DesignRow(
        design=design,
        column=column,
        te_attempted=te[0],
        te_fixed=te[1],
        le_attempted=le[0],
        le_fixed=le[1],
        unclassified=unclassified,
        fr=fr_percent(te[1] + le[1], te[0] + le[0]),
    )


def fr_metrics(outcomes: Iterable[FixOutcome], column: Optional[str] = None) -> List[DesignRow]:
    """
    TE/LE attempted and fixed counts and FR per design, in order of first
    appearance. Skipped (already passing) assertions are not attempts.
    Outcomes with neither label nor classification (errors before the
    classifier ran) are unfixed LE attempts, also tallied in `unclassified`.
    """
    counts: Dict[str, Dict[str, int]] = {}
    columns: Dict[str, str] = {}
    for outcome in outcomes:
        if outcome.status == SKIPPED:
            continue
        entry = counts.setdefault(outcome.design, {"TE": 0, "TE_fixed": 0, "LE": 0, "LE_fixed": 0, "none": 0})
        columns.setdefault(outcome.design, column or outcome.strategy)
        bucket = outcome.bucket
        if bucket is None:
            entry["none"] += 1
            bucket = "LE"
        entry[bucket] += 1
        if outcome.status == FIXED:
            entry[f"{bucket}_fixed"] += 1
    return [
        design_row(design, columns[design], (c["TE"], c["TE_fixed"]), (c["LE"], c["LE_fixed"]), c["none"])
        for design, c in counts.items()
    ]


def outcome_rows(outcomes: Iterable[FixOutcome]) -> List[OutcomeRow]:
    rows = []
    for outcome in outcomes:
        rows.append(
            OutcomeRow(
                name=outcome.name,
                design=outcome.design,
                strategy=outcome.strategy,
                bucket=outcome.bucket,
                classification=outcome.kind,
                classification_source=outcome.classification.source if outcome.classification else None,
                status=outcome.status,
                original=outcome.original_text,
                accepted=render_assertion(outcome.accepted.assertion) if outcome.accepted else None,
                origin=outcome.accepted.origin if outcome.accepted else None,
                candidates_tried=len(outcome.candidates),
                error=outcome.error,
            )
        )
    return rows


def _round(value: float) -> float:
    return float(Decimal(str(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def coi_coverage(g: DesignCdfg, assertions: Iterable[SvaAssertion]) -> float:
    """
    Percentage of design signals in the backward cone of influence of at
    least one assertion. Assertions naming signals the design lacks are
    skipped with a warning.
    """
    total = g.graph.number_of_nodes()
    if total == 0:
        return 0.0
    touched = set()
    for assertion in assertions:
        try:
            seeds = [g.resolve(name) for name in assertion.all_signals()]
        except UnknownSignal as e:
            logging.warning(f"Skipping {assertion.name or 'assertion'} for coverage: {e}")
            continue
        if seeds:
            touched |= set(cone_of_influence(g, seeds, BACKWARD))
    return _round(100.0 * len(touched) / total)


def coverage_row(design: str, g: DesignCdfg, outcomes: Sequence[FixOutcome]) -> CoverageRow:
    """COI(analog) of the original assertions against the same set with accepted fixes swapped in."""
    parsed = [outcome for outcome in outcomes if outcome.original is not None]
    before = [outcome.original for outcome in parsed]
    after = [outcome.accepted.assertion if outcome.accepted else outcome.original for outcome in parsed]
    return CoverageRow(design=design, before=coi_coverage(g, before), after=coi_coverage(g, after))


def load_published_counts(path: str = PUBLISHED_COUNTS_PATH) -> List[DesignRow]:
    """Rows for the published comparison: `{column: {design: {te: [attempted, fixed], le: [...]}}}`."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    rows = []
    for column, designs in data.items():
        for design, counts in designs.items():
            rows.append(design_row(design, column, counts["te"], counts["le"]))
    return rows


def _format_fr(fr: Optional[float]) -> str:
    return "N/A" if fr is None else f"{fr:.1f}%"


def _fix_rate_table(rows: Sequence[DesignRow]) -> List[str]:
    """Metrics down the side, designs grouped under each column; counts are attempted/fixed."""
    columns = list(dict.fromkeys(row.column for row in rows))
    designs = list(dict.fromkeys(row.design for row in rows))
    cells = {(row.design, row.column): row for row in rows}
    keys = [(column, design) for column in columns for design in designs if (design, column) in cells]
    header = ["Metric"] + [f"{column} {design}" for column, design in keys]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for metric in ("TE", "LE", "FR"):
        line = [metric]
        for column, design in keys:
            row = cells[(design, column)]
            if metric == "TE":
                line.append(f"{row.te_attempted}/{row.te_fixed}")
            elif metric == "LE":
                line.append(f"{row.le_attempted}/{row.le_fixed}")
            else:
                line.append(_format_fr(row.fr))
        lines.append("| " + " | ".join(line) + " |")
    return lines


def _coverage_table(rows: Sequence[CoverageRow]) -> List[str]:
    designs = [row.design for row in rows]
    lines = ["| Metric | " + " | ".join(f"{d} before | {d} after" for d in designs) + " |"]
    lines.append("|" + "---|" * (1 + 2 * len(designs)))
    lines.append(f"| {COVERAGE_LABEL} | " + " | ".join(f"{row.before:.1f}% | {row.after:.1f}%" for row in rows) + " |")
    lines.append("| Proof core | " + " | ".join(f"{row.proof_core} | {row.proof_core}" for row in rows) + " |")
    return lines


def render_markdown(report: FixReport) -> str:
    lines = [f"# Assertion repair report ({report.validation})", "", "## Fix rate", ""]
    lines += _fix_rate_table(report.rows) if report.rows else ["No assertions were attempted."]
    if report.coverage:
        lines += ["", "## Coverage", ""] + _coverage_table(report.coverage)
    if report.outcomes:
        lines += ["", "## Assertions", "", "| Name | Design | Type | Status | Fix |", "|---|---|---|---|---|"]
        for row in report.outcomes:
            fix = f"`{row.accepted}` ({row.origin})" if row.accepted else (row.error or "-")
            lines.append(f"| {row.name} | {row.design} | {row.bucket or '-'} | {row.status} | {fix} |")
    return "\n".join(lines) + "\n"


def emit_report(report: FixReport, format: str = "json") -> bytes:
    """
    Serialises the report. JSON output has sorted keys and is byte-stable for
    equal reports; markdown lays out TE/LE/FR rows under column and design headers.
    """
    if format == "json":
        return (json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n").encode("utf-8")
    if format == "markdown":
        return render_markdown(report).encode("utf-8")
    raise ValueError(f"Unknown report format '{format}'")


def write_report(report: FixReport, directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, format in (("report.json", "json"), ("report.md", "markdown")):
        path = os.path.join(directory, name)
        with open(path, "wb") as f:
            f.write(emit_report(report, format))
        paths.append(path)
    logging.info(f"Report written to {', '.join(paths)}")
    return paths
