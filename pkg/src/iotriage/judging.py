"""Parsing and aggregation of rubric verdicts.

Judge completions are parsed into four-metric rubric scores (3 + 3 + 2 + 2
points, half-point granularity), validated against the scales, mapped back
from anonymous A/B to model names, merged with human-expert CSV scores,
and aggregated into per-judge / per-model / per-dataset means.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DataError, VerdictParseError

METRIC_KEYS = ("attack_analysis", "mitigation", "technical_depth", "clarity")
METRIC_MAXIMA = {"attack_analysis": 3.0, "mitigation": 3.0, "technical_depth": 2.0, "clarity": 2.0}
METRIC_PHRASES = {
    "attack_analysis": "attack analysis",
    "mitigation": "mitigation quality",
    "technical_depth": "technical depth",
    "clarity": "clarity",
}
TOTAL_MAX = 10.0
HUMAN_JUDGE_ID = "human"


@dataclass(frozen=True)
class RubricScore:
    m1_attack_analysis: float
    m2_mitigation: float
    m3_technical_depth: float
    m4_clarity: float
    total: float

    @classmethod
    def from_metrics(cls, values: dict[str, float], total: float | None = None) -> "RubricScore":
        metric_sum = sum(values[k] for k in METRIC_KEYS)
        return cls(
            m1_attack_analysis=values["attack_analysis"],
            m2_mitigation=values["mitigation"],
            m3_technical_depth=values["technical_depth"],
            m4_clarity=values["clarity"],
            total=metric_sum if total is None else total,
        )

    def metrics(self) -> dict[str, float]:
        return {
            "attack_analysis": self.m1_attack_analysis,
            "mitigation": self.m2_mitigation,
            "technical_depth": self.m3_technical_depth,
            "clarity": self.m4_clarity,
        }

    @property
    def metric_sum(self) -> float:
        return sum(self.metrics().values())


@dataclass
class JudgeVerdict:
    judge_id: str
    scenario_id: str
    score_a: RubricScore
    score_b: RubricScore
    preferred: str  # "A" | "B" | "tie"
    justification: str
    raw: str
    parse_path: str = "structured"  # structured | prose


def format_score_block(score_a: RubricScore, score_b: RubricScore, preferred: str) -> str:
    """Render the machine-readable block the evaluation prompt requests."""

    def line(tag: str, s: RubricScore) -> str:
        return (
            f"{tag}: attack_analysis={_fmt(s.m1_attack_analysis)} "
            f"mitigation={_fmt(s.m2_mitigation)} "
            f"technical_depth={_fmt(s.m3_technical_depth)} "
            f"clarity={_fmt(s.m4_clarity)} total={_fmt(s.total)}"
        )

    tag = preferred.upper() if preferred.lower() in ("a", "b") else "TIE"
    return "SCORES:\n" + line("A", score_a) + "\n" + line("B", score_b) + f"\nPREFERRED: {tag}"


def _fmt(value: float) -> str:
    return f"{value:g}"


_STRUCTURED = re.compile(
    r"SCORES:\s*\n"
    r"\s*A:\s*attack_analysis=([\d.]+)\s+mitigation=([\d.]+)\s+"
    r"technical_depth=([\d.]+)\s+clarity=([\d.]+)\s+total=([\d.]+)\s*\n"
    r"\s*B:\s*attack_analysis=([\d.]+)\s+mitigation=([\d.]+)\s+"
    r"technical_depth=([\d.]+)\s+clarity=([\d.]+)\s+total=([\d.]+)\s*\n"
    r"\s*PREFERRED:\s*(A|B|TIE)",
    re.IGNORECASE,
)

_TOTAL = re.compile(r"(\d+(?:\.\d+)?)\s*(?:out of|/)\s*10\b")
_NUMBER = re.compile(r"(\d+(?:\.\d+)?)(?:\s*/\s*\d+(?:\.\d+)?)?")
_RANGE = re.compile(r"\b\d+(?:\.\d+)?\s*-\s*\d+(?:\.\d+)?\b")
_PROSE_PREFERRED = re.compile(
    r"response\s+([ab])\s+(?:is\s+)?(?:the\s+)?(?:better|stronger|superior|preferred|outperforms)",
    re.IGNORECASE,
)


def parse_verdict(raw: str, judge_id: str = "", scenario_id: str = "") -> JudgeVerdict:
    """Parse a judge completion into a verdict.

    The primary path reads the machine-readable score block requested by
    the evaluation prompt. The fallback path extracts labeled per-metric
    lines and "x out of 10" / "x/10" totals from prose. Unparseable text
    raises with the raw completion attached; a score is never guessed.
    """
    match = _STRUCTURED.search(raw)
    if match:
        groups = [float(g) for g in match.groups()[:10]]
        score_a = RubricScore.from_metrics(dict(zip(METRIC_KEYS, groups[0:4])), total=groups[4])
        score_b = RubricScore.from_metrics(dict(zip(METRIC_KEYS, groups[5:9])), total=groups[9])
        preferred = match.group(11).lower()
        preferred = preferred if preferred in ("a", "b") else "tie"
        return JudgeVerdict(
            judge_id=judge_id,
            scenario_id=scenario_id,
            score_a=score_a,
            score_b=score_b,
            preferred=preferred.upper() if preferred in ("a", "b") else "tie",
            justification=raw[: match.start()].strip(),
            raw=raw,
            parse_path="structured",
        )
    return _parse_prose(raw, judge_id, scenario_id)


def _parse_prose(raw: str, judge_id: str, scenario_id: str) -> JudgeVerdict:
    per_metric: dict[str, tuple[float, float]] = {}
    for line in raw.splitlines():
        lowered = line.lower()
        for key, phrase in METRIC_PHRASES.items():
            if key in per_metric or phrase not in lowered:
                continue
            tail = line[lowered.index(phrase) + len(phrase):]
            tail = _RANGE.sub(" ", tail)
            numbers = [float(m.group(1)) for m in _NUMBER.finditer(tail)]
            if len(numbers) >= 2:
                per_metric[key] = (numbers[0], numbers[1])

    missing = [k for k in METRIC_KEYS if k not in per_metric]
    if missing:
        raise VerdictParseError(
            f"could not find per-metric scores for: {', '.join(missing)}", raw=raw
        )

    totals = [float(m.group(1)) for m in _TOTAL.finditer(_RANGE.sub(" ", raw))]
    metrics_a = {k: per_metric[k][0] for k in METRIC_KEYS}
    metrics_b = {k: per_metric[k][1] for k in METRIC_KEYS}
    score_a = RubricScore.from_metrics(metrics_a, total=totals[0] if len(totals) >= 2 else None)
    score_b = RubricScore.from_metrics(metrics_b, total=totals[1] if len(totals) >= 2 else None)

    preferred_match = _PROSE_PREFERRED.search(raw)
    if preferred_match:
        preferred = preferred_match.group(1).upper()
    elif score_a.total > score_b.total:
        preferred = "A"
    elif score_b.total > score_a.total:
        preferred = "B"
    else:
        preferred = "tie"

    return JudgeVerdict(
        judge_id=judge_id,
        scenario_id=scenario_id,
        score_a=score_a,
        score_b=score_b,
        preferred=preferred,
        justification=raw.strip(),
        raw=raw,
        parse_path="prose",
    )


def _check_score(tag: str, score: RubricScore, violations: list[str]) -> None:
    for key, value in score.metrics().items():
        maximum = METRIC_MAXIMA[key]
        if not 0.0 <= value <= maximum:
            violations.append(f"{tag}: {key}={value:g} outside [0, {maximum:g}]")
        if abs(value * 2 - round(value * 2)) > 1e-9:
            violations.append(f"{tag}: {key}={value:g} not on the half-point grid")
    if not 0.0 <= score.total <= TOTAL_MAX:
        violations.append(f"{tag}: total={score.total:g} outside [0, {TOTAL_MAX:g}]")
    if abs(score.total - score.metric_sum) > 1e-9:
        violations.append(
            f"{tag}: total={score.total:g} does not equal metric sum {score.metric_sum:g}"
        )


def validate(verdict: JudgeVerdict) -> list[str]:
    """Scale, granularity, sum, and preference-consistency checks.

    Violations are data, not exceptions; an empty list means ok.
    """
    violations: list[str] = []
    _check_score("A", verdict.score_a, violations)
    _check_score("B", verdict.score_b, violations)

    total_a, total_b = verdict.score_a.total, verdict.score_b.total
    if total_a != total_b:
        expected = "A" if total_a > total_b else "B"
        if verdict.preferred != expected:
            violations.append(
                f"preferred={verdict.preferred} inconsistent with totals "
                f"(A={total_a:g}, B={total_b:g})"
            )
    elif verdict.preferred not in ("A", "B", "tie"):
        violations.append(f"unknown preferred value: {verdict.preferred!r}")
    return violations


def deanonymize(verdict: JudgeVerdict, assignment: dict[str, str]) -> dict[str, object]:
    """Map anonymous A/B scores back to evaluated-model names."""
    if "A" not in assignment or "B" not in assignment:
        raise DataError(f"missing assignment record for scenario {verdict.scenario_id!r}")
    scores = {assignment["A"]: verdict.score_a, assignment["B"]: verdict.score_b}
    preferred_model = assignment.get(verdict.preferred) if verdict.preferred in ("A", "B") else None
    return {"scores": scores, "preferred_model": preferred_model}


@dataclass(frozen=True)
class ScoredCell:
    """One (judge, scenario, model) rubric total in aggregation shape."""

    judge_id: str
    scenario_id: str
    dataset: str
    model_id: str
    score: RubricScore


def cells_from_verdict(
    verdict: JudgeVerdict, assignment: dict[str, str], dataset: str | None = None
) -> list[ScoredCell]:
    mapped = deanonymize(verdict, assignment)
    if dataset is None:
        dataset = verdict.scenario_id.split("/", 1)[0]
    return [
        ScoredCell(
            judge_id=verdict.judge_id,
            scenario_id=verdict.scenario_id,
            dataset=dataset,
            model_id=model_id,
            score=score,
        )
        for model_id, score in mapped["scores"].items()
    ]


def ingest_human_scores(path: str | Path) -> list[ScoredCell]:
    """Load human-expert scores from CSV into scored cells.

    Expected columns: scenario_id, model_id, attack_analysis, mitigation,
    technical_depth, clarity. Duplicate (scenario, model) rows are an error
    so stale sheets do not silently double-count.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"human score file not found: {path}")
    required = ["scenario_id", "model_id", *METRIC_KEYS]
    cells: list[ScoredCell] = []
    seen: set[tuple[str, str]] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"human score CSV missing columns: {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                metrics = {k: float(row[k]) for k in METRIC_KEYS}
            except (TypeError, ValueError):
                raise DataError(f"malformed human score row {lineno}: {row}") from None
            scenario_id = (row["scenario_id"] or "").strip()
            model_id = (row["model_id"] or "").strip()
            if not scenario_id or not model_id:
                raise DataError(f"malformed human score row {lineno}: empty ids")
            key = (scenario_id, model_id)
            if key in seen:
                raise DataError(
                    f"duplicate human score for {key} at row {lineno}; deduplicate the CSV"
                )
            seen.add(key)
            cells.append(
                ScoredCell(
                    judge_id=HUMAN_JUDGE_ID,
                    scenario_id=scenario_id,
                    dataset=scenario_id.split("/", 1)[0],
                    model_id=model_id,
                    score=RubricScore.from_metrics(metrics),
                )
            )
    return cells


@dataclass(frozen=True)
class JudgeMean:
    judge_id: str
    model_id: str
    dataset: str
    mean_total: float
    n_cells: int


@dataclass(frozen=True)
class OverallRow:
    model_id: str
    dataset: str
    judge_ensemble_mean: float | None
    human_mean: float | None
    n_judges: int
    n_human_cells: int


@dataclass
class AggregateReport:
    per_judge: list[JudgeMean]
    overall: list[OverallRow]
    missing: list[dict] = field(default_factory=list)


def aggregate(cells: list[ScoredCell], missing: list[dict] | None = None) -> AggregateReport:
    """Mean rubric totals per (judge, model, dataset) plus the overall table.

    The ensemble mean per (model, dataset) averages the per-judge means of
    the LLM judges; human means stay separate. Missing cells are simply not
    present and are carried through as counts.
    """
    if not cells:
        raise DataError("no scored cells to aggregate")

    groups: dict[tuple[str, str, str], list[float]] = {}
    for cell in sorted(cells, key=lambda c: (c.judge_id, c.model_id, c.dataset, c.scenario_id)):
        groups.setdefault((cell.judge_id, cell.model_id, cell.dataset), []).append(cell.score.total)

    per_judge = [
        JudgeMean(judge_id=j, model_id=m, dataset=d, mean_total=sum(vals) / len(vals), n_cells=len(vals))
        for (j, m, d), vals in sorted(groups.items())
    ]

    overall: list[OverallRow] = []
    pairs = sorted({(jm.model_id, jm.dataset) for jm in per_judge})
    for model_id, dataset in pairs:
        judge_means = [
            jm.mean_total
            for jm in per_judge
            if jm.model_id == model_id and jm.dataset == dataset and jm.judge_id != HUMAN_JUDGE_ID
        ]
        human = [
            jm
            for jm in per_judge
            if jm.model_id == model_id and jm.dataset == dataset and jm.judge_id == HUMAN_JUDGE_ID
        ]
        overall.append(
            OverallRow(
                model_id=model_id,
                dataset=dataset,
                judge_ensemble_mean=sum(judge_means) / len(judge_means) if judge_means else None,
                human_mean=human[0].mean_total if human else None,
                n_judges=len(judge_means),
                n_human_cells=human[0].n_cells if human else 0,
            )
        )
    return AggregateReport(per_judge=per_judge, overall=overall, missing=list(missing or []))


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def report_to_json(report: AggregateReport) -> str:
    payload = {
        "per_judge": [asdict(jm) for jm in report.per_judge],
        "overall": [asdict(row) for row in report.overall],
        "missing": report.missing,
    }
    return json.dumps(payload, indent=2) + "\n"


def report_from_json(text: str) -> AggregateReport:
    payload = json.loads(text)
    return AggregateReport(
        per_judge=[JudgeMean(**jm) for jm in payload["per_judge"]],
        overall=[OverallRow(**row) for row in payload["overall"]],
        missing=payload.get("missing", []),
    )


def report_to_csv(report: AggregateReport) -> str:
    lines = ["dataset,model,judge,mean,n_cells"]
    for jm in report.per_judge:
        lines.append(f"{jm.dataset},{jm.model_id},{jm.judge_id},{jm.mean_total:.4f},{jm.n_cells}")
    for row in report.overall:
        if row.judge_ensemble_mean is not None:
            lines.append(
                f"{row.dataset},{row.model_id},ensemble,{row.judge_ensemble_mean:.4f},{row.n_judges}"
            )
    return "\n".join(lines) + "\n"


_BAR_COLORS = ("#4878a8", "#e08a3c", "#6aa84f", "#a64d79")


def _svg_grouped_bars(
    title: str,
    groups: list[str],
    series: list[tuple[str, list[float | None]]],
    group_class: str,
    max_value: float = 10.0,
) -> str:
    bar_w = 26
    gap = 30
    group_w = bar_w * len(series) + gap
    plot_h = 240
    left = 60
    top = 50
    width = left + group_w * len(groups) + 40
    height = top + plot_h + 70

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 20}" y2="{top + plot_h}" '
        'stroke="#333" stroke-width="1"/>',
    ]
    for tick in range(0, int(max_value) + 1, 2):
        y = top + plot_h - tick / max_value * plot_h
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{tick}</text>'
        )
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{width - 20}" y2="{y:.1f}" '
            'stroke="#ddd" stroke-width="0.5"/>'
        )
    for g, group in enumerate(groups):
        x0 = left + g * group_w + gap / 2
        parts.append(f'<g class="{group_class}" data-group="{group}">')
        for s, (_, values) in enumerate(series):
            value = values[g]
            if value is None:
                continue
            bar_h = value / max_value * plot_h
            x = x0 + s * bar_w
            y = top + plot_h - bar_h
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w - 4}" height="{bar_h:.1f}" '
                f'fill="{_BAR_COLORS[s % len(_BAR_COLORS)]}"/>'
            )
            parts.append(
                f'<text x="{x + (bar_w - 4) / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                f'font-size="9" font-family="sans-serif">{value:.2f}</text>'
            )
        parts.append(
            f'<text x="{x0 + (bar_w * len(series) - 4) / 2:.1f}" y="{top + plot_h + 16}" '
            f'text-anchor="middle" font-size="10" font-family="sans-serif">{group}</text>'
        )
        parts.append("</g>")
    for s, (name, _) in enumerate(series):
        x = left + s * 160
        y = height - 24
        parts.append(
            f'<rect x="{x}" y="{y - 10}" width="12" height="12" '
            f'fill="{_BAR_COLORS[s % len(_BAR_COLORS)]}"/>'
        )
        parts.append(
            f'<text x="{x + 18}" y="{y}" font-size="11" font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export(
    report: AggregateReport,
    out_dir: str | Path,
    formats: tuple[str, ...] = ("csv", "json", "svg"),
) -> dict[str, Path]:
    """Write report tables and grouped-bar charts; returns written paths."""
    if not report.per_judge:
        raise DataError("empty report: nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    if "csv" in formats:
        path = out_dir / "report.csv"
        path.write_text(report_to_csv(report), encoding="utf-8")
        written["csv"] = path
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(report_to_json(report), encoding="utf-8")
        written["json"] = path
    if "svg" in formats:
        datasets = sorted({jm.dataset for jm in report.per_judge})
        models = sorted({jm.model_id for jm in report.per_judge})
        by_key = {(jm.dataset, jm.judge_id, jm.model_id): jm.mean_total for jm in report.per_judge}
        for dataset in datasets:
            judges = sorted({jm.judge_id for jm in report.per_judge if jm.dataset == dataset})
            series = [
                (model, [by_key.get((dataset, judge, model)) for judge in judges])
                for model in models
            ]
            svg = _svg_grouped_bars(
                f"Judge scores ({dataset})", judges, series, group_class="judge-group"
            )
            path = out_dir / f"judge_scores_{dataset.replace('/', '_')}.svg"
            path.write_text(svg, encoding="utf-8")
            written[f"svg:{dataset}"] = path

        overall_by = {(r.dataset, r.model_id): r for r in report.overall}
        series = []
        for model in models:
            values: list[float | None] = []
            for dataset in datasets:
                row = overall_by.get((dataset, model))
                values.append(row.judge_ensemble_mean if row else None)
            series.append((f"{model} (judges)", values))
        for model in models:
            values = []
            for dataset in datasets:
                row = overall_by.get((dataset, model))
                values.append(row.human_mean if row else None)
            series.append((f"{model} (human)", values))
        svg = _svg_grouped_bars(
            "Overall evaluated-model performance", datasets, series, group_class="dataset-group"
        )
        path = out_dir / "overall.svg"
        path.write_text(svg, encoding="utf-8")
        written["svg:overall"] = path

    return written
