"""Pipeline orchestration: detect, kb, triage, judge, report, synth.

One JSON config file drives every subcommand; each run writes its
artifacts (prompts, completions, verdicts, reports, models) plus a
manifest into a run directory so replay-mode reruns reproduce it offline.
Exit codes: 0 success, 2 config, 3 data, 4 network/gateway, 5 parse.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dataset import (
    LabeledDataset,
    PreprocessConfig,
    dump_label_map,
    load_csv,
    preprocess,
    sample_scenario,
    split,
)
from .detect import (
    ForestParams,
    benchmark,
    predict_batch,
    save_model,
    train_gaussian_nb,
    train_knn,
    train_logreg,
    train_random_forest,
)
from .errors import ConfigError, DataError, GatewayError, TriageError, VerdictParseError
from .judging import (
    aggregate,
    cells_from_verdict,
    export,
    ingest_human_scores,
    parse_verdict,
    validate,
)
from .llm_gateway import EndpointConfig, FixtureStore, run_matrix
from .metrics import confusion, render_report, report
from .promptkit import build_scenario_prompt, enumerate_scenarios
from .rag import LocalEmbedder, build_knowledge_base, save_index
from .synth import SynthConfig, write_csv
from .util import derive_seed, slugify

DEFAULT_DEVICE = "Raspberry Pi 4 Model B"


@dataclass
class DatasetConfig:
    source_id: str
    path: Path
    label_column: str | None = None
    drop_columns: list[str] | None = None


@dataclass
class RunConfig:
    seed: int
    mode: str = "replay"
    output_dir: Path = Path("runs/latest")
    datasets: list[DatasetConfig] = field(default_factory=list)
    split_ratio: float = 0.8
    classifiers: dict = field(default_factory=dict)
    preprocess_overrides: dict = field(default_factory=dict)
    kb_attacks_path: Path | None = None
    kb_devices_path: Path | None = None
    similarity_floor: float = 0.15
    embedding_dim: int = 384
    devices: dict = field(default_factory=dict)
    environment: str = "IoT/IIoT"
    scenario_template: Path | None = None
    evaluation_template: Path | None = None
    evaluated_endpoints: list[EndpointConfig] = field(default_factory=list)
    judge_endpoints: list[EndpointConfig] = field(default_factory=list)
    fixtures_dir: Path | None = None
    human_scores: Path | None = None
    raw: dict = field(default_factory=dict)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate the run config; relative paths resolve against it."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    base = path.parent

    def resolve(p: str | None) -> Path | None:
        if p is None:
            return None
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    if "seed" not in raw:
        raise ConfigError("config must set a seed")

    datasets = []
    for item in raw.get("datasets", []):
        ds_path = resolve(item["path"])
        if not ds_path.exists():
            raise ConfigError(f"dataset file not found: {ds_path}")
        datasets.append(
            DatasetConfig(
                source_id=item["source_id"],
                path=ds_path,
                label_column=item.get("label_column"),
                drop_columns=item.get("drop_columns"),
            )
        )

    endpoints = raw.get("endpoints", {})

    def parse_endpoints(items: list[dict]) -> list[EndpointConfig]:
        return [EndpointConfig(**item) for item in items]

    kb_cfg = raw.get("kb", {})
    for key in ("attacks_path", "devices_path"):
        value = resolve(kb_cfg.get(key))
        if value is not None and not value.exists():
            raise ConfigError(f"knowledge base file not found: {value}")

    templates = raw.get("templates", {})
    config = RunConfig(
        seed=int(raw["seed"]),
        mode=raw.get("mode", "replay"),
        output_dir=resolve(raw.get("output_dir", "runs/latest")),
        datasets=datasets,
        split_ratio=float(raw.get("split", {}).get("ratio", 0.8)),
        classifiers=raw.get("classifiers", {"rf": {}, "knn": {}, "gnb": {}, "logreg": {}}),
        preprocess_overrides=raw.get("preprocess", {}),
        kb_attacks_path=resolve(kb_cfg.get("attacks_path")),
        kb_devices_path=resolve(kb_cfg.get("devices_path")),
        similarity_floor=float(kb_cfg.get("similarity_floor", 0.15)),
        embedding_dim=int(kb_cfg.get("embedding_dim", 384)),
        devices=raw.get("devices", {}),
        environment=raw.get("environment", "IoT/IIoT"),
        scenario_template=resolve(templates.get("scenario")),
        evaluation_template=resolve(templates.get("evaluation")),
        evaluated_endpoints=parse_endpoints(endpoints.get("evaluated", [])),
        judge_endpoints=parse_endpoints(endpoints.get("judges", [])),
        fixtures_dir=resolve(raw.get("fixtures_dir")),
        human_scores=resolve(raw.get("human_scores")),
        raw=raw,
    )
    if config.mode not in ("live", "record", "replay"):
        raise ConfigError(f"unknown mode: {config.mode!r}")
    if config.mode == "replay" and config.fixtures_dir is not None and not config.fixtures_dir.exists():
        raise ConfigError(f"fixtures directory not found: {config.fixtures_dir}")
    if config.human_scores is not None and not config.human_scores.exists():
        raise ConfigError(f"human score file not found: {config.human_scores}")
    return config


def write_manifest(config: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": config.seed,
        "mode": config.mode,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": config.raw,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _preprocess_config(ds_cfg: DatasetConfig, config: RunConfig) -> PreprocessConfig:
    overrides = dict(config.preprocess_overrides)
    if ds_cfg.label_column:
        overrides["label_column"] = ds_cfg.label_column
    if ds_cfg.drop_columns is not None:
        overrides["drop_columns"] = tuple(ds_cfg.drop_columns)
    return PreprocessConfig.for_source(ds_cfg.source_id, **overrides)


def _load_datasets(config: RunConfig) -> dict[str, LabeledDataset]:
    if not config.datasets:
        raise ConfigError("config lists no datasets")
    out = {}
    for ds_cfg in config.datasets:
        table = load_csv(ds_cfg.path, ds_cfg.source_id)
        out[ds_cfg.source_id] = preprocess(table, _preprocess_config(ds_cfg, config))
    return out


_BENCH_HEADER = (
    "model,macro_precision,macro_recall,macro_f1,weighted_precision,weighted_recall,"
    "weighted_f1,accuracy,train_seconds,test_seconds"
)


def cmd_detect(config: RunConfig, out_dir: Path) -> dict:
    """Preprocess, split, train all configured models, and write reports."""
    write_manifest(config, out_dir, "detect")
    summary: dict = {}
    for ds_cfg in config.datasets:
        table = load_csv(ds_cfg.path, ds_cfg.source_id)
        ds = preprocess(table, _preprocess_config(ds_cfg, config))
        pair = split(ds, config.split_ratio, derive_seed(config.seed, "split", ds_cfg.source_id))

        models = []
        for kind, params in config.classifiers.items():
            if kind == "rf":
                params = dict(params)
                params.setdefault("seed", derive_seed(config.seed, "rf", ds_cfg.source_id))
                models.append(train_random_forest(pair.train, ForestParams(**params)))
            elif kind == "knn":
                models.append(train_knn(pair.train, **params))
            elif kind == "gnb":
                models.append(train_gaussian_nb(pair.train))
            elif kind == "logreg":
                models.append(train_logreg(pair.train, **params))
            else:
                raise ConfigError(f"unknown classifier kind: {kind!r}")

        report_dir = out_dir / "reports" / ds_cfg.source_id
        report_dir.mkdir(parents=True, exist_ok=True)
        model_dir = out_dir / "models"
        model_dir.mkdir(parents=True, exist_ok=True)

        rows = benchmark(models, pair)
        lines = [_BENCH_HEADER]
        for row in rows:
            lines.append(
                f"{row.kind},{row.macro_precision:.4f},{row.macro_recall:.4f},{row.macro_f1:.4f},"
                f"{row.weighted_precision:.4f},{row.weighted_recall:.4f},{row.weighted_f1:.4f},"
                f"{row.accuracy:.4f},{row.train_seconds:.2f},{row.test_seconds:.2f}"
            )
        (report_dir / "benchmark.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        for model in models:
            predicted = predict_batch(model, pair.test.feature_matrix)
            rep = report(confusion(pair.test.labels, predicted, model.class_set))
            for fmt, suffix in (("markdown", "md"), ("csv", "csv"), ("json", "json")):
                (report_dir / f"report_{model.kind}.{suffix}").write_text(
                    render_report(rep, fmt), encoding="utf-8"
                )
            save_model(model, model_dir / f"{ds_cfg.source_id}__{model.kind}.json")

        summary[ds_cfg.source_id] = {
            "ranking": [row.kind for row in rows],
            "macro_f1": {row.kind: row.macro_f1 for row in rows},
        }
    return summary


def cmd_kb(config: RunConfig, out_dir: Path) -> dict:
    """Build, validate, and persist the attack and device indices."""
    write_manifest(config, out_dir, "kb")
    kb = build_knowledge_base(
        embedder=LocalEmbedder(config.embedding_dim),
        attack_kb_path=config.kb_attacks_path,
        device_kb_path=config.kb_devices_path,
        similarity_floor=config.similarity_floor,
    )
    kb_dir = out_dir / "kb"
    kb_dir.mkdir(parents=True, exist_ok=True)
    save_index(kb.attack_index, kb_dir / "attack_index.json")
    save_index(kb.device_index, kb_dir / "device_index.json")
    return {
        "attack_entries": len(kb.attack_index),
        "device_entries": len(kb.device_index),
        "paths": [str(kb_dir / "attack_index.json"), str(kb_dir / "device_index.json")],
    }


def _matching_scenarios(config: RunConfig, scenario_filter: str | None):
    sources = tuple(ds.source_id for ds in config.datasets)
    specs = enumerate_scenarios(sources)
    if scenario_filter:
        needle = scenario_filter.lower()
        specs = [
            s for s in specs
            if needle in s.native_label.lower() or needle in s.scenario_id.lower()
        ]
        if not specs:
            raise ConfigError(f"scenario filter matched nothing: {scenario_filter!r}")
    return specs


def cmd_triage(
    config: RunConfig,
    out_dir: Path,
    scenario_filter: str | None = None,
    transport=None,
) -> dict:
    """Scenario prompts through evaluated models and judges to a report."""
    write_manifest(config, out_dir, "triage")
    if len(config.evaluated_endpoints) != 2:
        raise ConfigError(
            f"triage needs exactly 2 evaluated endpoints, got {len(config.evaluated_endpoints)}"
        )
    if not config.judge_endpoints:
        raise ConfigError("triage needs at least 1 judge endpoint")

    datasets = _load_datasets(config)
    kb = build_knowledge_base(
        embedder=LocalEmbedder(config.embedding_dim),
        attack_kb_path=config.kb_attacks_path,
        device_kb_path=config.kb_devices_path,
        similarity_floor=config.similarity_floor,
    )
    specs = _matching_scenarios(config, scenario_filter)

    prompts_dir = out_dir / "prompts"
    prompts_dir.mkdir(parents=True, exist_ok=True)
    scenario_prompts = []
    for spec in specs:
        ds = datasets[spec.source_id]
        features_json = sample_scenario(
            ds, spec.native_label, derive_seed(config.seed, "sample", spec.scenario_id)
        )
        device_name = config.devices.get(spec.source_id, DEFAULT_DEVICE)
        context = kb.retrieve_context(spec.native_label, device_name)
        prompt = build_scenario_prompt(
            spec,
            features_json,
            context.attack_entry.text,
            context.device_spec,
            environment=config.environment,
            template_path=config.scenario_template,
        )
        scenario_prompts.append(prompt)

        slug = slugify(spec.scenario_id)
        (prompts_dir / f"{slug}.txt").write_text(prompt.rendered, encoding="utf-8")
        (prompts_dir / f"{slug}.provenance.json").write_text(
            json.dumps(
                {
                    "scenario_id": spec.scenario_id,
                    "native_label": spec.native_label,
                    "canonical": spec.canonical.name,
                    "category": spec.canonical.category,
                    "device": device_name,
                    "environment": config.environment,
                    "sample_seed": derive_seed(config.seed, "sample", spec.scenario_id),
                    "retrieval": context.provenance(),
                },
                indent=2,
            ),
            encoding="utf-8",
        )

    store = FixtureStore(config.fixtures_dir) if config.fixtures_dir else None
    bundle = run_matrix(
        scenario_prompts,
        config.evaluated_endpoints,
        config.judge_endpoints,
        config.mode,
        out_dir,
        seed=config.seed,
        store=store,
        transport=transport,
    )

    cells, parse_failures = _parse_judge_cells(bundle, config.judge_endpoints, out_dir)
    if config.human_scores:
        cells.extend(ingest_human_scores(config.human_scores))

    missing = bundle.missing + parse_failures
    result: dict = {
        "scenarios": len(scenario_prompts),
        "cells": len(bundle.cells),
        "missing": missing,
    }
    if cells:
        agg = aggregate(cells, missing=missing)
        export(agg, out_dir / "reports")
        _persist_cells(cells, missing, out_dir)
        result["report"] = str(out_dir / "reports" / "report.json")

    if bundle.missing:
        raise GatewayError(f"{len(bundle.missing)} matrix cell(s) missing; rerun to resume")
    if parse_failures:
        raise VerdictParseError(f"{len(parse_failures)} judge completion(s) unparseable")
    return result


def _parse_judge_cells(bundle, judge_endpoints, out_dir: Path):
    verdict_dir = out_dir / "verdicts"
    verdict_dir.mkdir(parents=True, exist_ok=True)
    judge_names = {j.name for j in judge_endpoints}
    cells = []
    failures = []
    for (scenario_id, endpoint_name), cell in sorted(bundle.cells.items()):
        if endpoint_name not in judge_names:
            continue
        assignment = bundle.assignments.get(scenario_id)
        if assignment is None:
            failures.append(
                {"scenario_id": scenario_id, "endpoint": endpoint_name, "error": "no assignment"}
            )
            continue
        try:
            verdict = parse_verdict(cell.response_text, judge_id=endpoint_name, scenario_id=scenario_id)
        except VerdictParseError:
            failures.append(
                {"scenario_id": scenario_id, "endpoint": endpoint_name, "error": "parse"}
            )
            continue
        violations = validate(verdict)
        slug = f"{slugify(scenario_id)}__{slugify(endpoint_name)}"
        (verdict_dir / f"{slug}.json").write_text(
            json.dumps(
                {
                    "judge_id": verdict.judge_id,
                    "scenario_id": verdict.scenario_id,
                    "score_a": verdict.score_a.__dict__,
                    "score_b": verdict.score_b.__dict__,
                    "preferred": verdict.preferred,
                    "parse_path": verdict.parse_path,
                    "violations": violations,
                },
                indent=2,
            ),
            encoding="utf-8",
        )
        cells.extend(cells_from_verdict(verdict, assignment))
    return cells, failures


def _persist_cells(cells, missing, out_dir: Path) -> None:
    payload = {
        "cells": [
            {
                "judge_id": c.judge_id,
                "scenario_id": c.scenario_id,
                "dataset": c.dataset,
                "model_id": c.model_id,
                "score": c.score.__dict__,
            }
            for c in cells
        ],
        "missing": missing,
    }
    (out_dir / "cells.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _load_cells(run_dir: Path):
    from .judging import RubricScore, ScoredCell

    path = run_dir / "cells.json"
    if not path.exists():
        raise DataError(f"no cells.json under {run_dir}; run triage first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    cells = [
        ScoredCell(
            judge_id=item["judge_id"],
            scenario_id=item["scenario_id"],
            dataset=item["dataset"],
            model_id=item["model_id"],
            score=RubricScore(**item["score"]),
        )
        for item in payload["cells"]
    ]
    return cells, payload.get("missing", [])


def cmd_judge(config: RunConfig, run_dir: Path) -> dict:
    """Re-parse stored judge completions and rebuild the report (no network)."""
    completions_dir = run_dir / "completions"
    assignments_dir = run_dir / "assignments"
    if not completions_dir.exists():
        raise DataError(f"no completions under {run_dir}")

    assignments: dict[str, dict[str, str]] = {}
    if assignments_dir.exists():
        for path in sorted(assignments_dir.glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            assignments[data["scenario_id"]] = data["assignment"]

    cells = []
    failures = []
    for cell_path in sorted(completions_dir.glob("*/*.json")):
        data = json.loads(cell_path.read_text(encoding="utf-8"))
        if data.get("role") != "judge":
            continue
        scenario_id = data["scenario_id"]
        assignment = assignments.get(scenario_id)
        if assignment is None:
            failures.append({"scenario_id": scenario_id, "endpoint": data["endpoint_name"], "error": "no assignment"})
            continue
        try:
            verdict = parse_verdict(
                data["response_text"], judge_id=data["endpoint_name"], scenario_id=scenario_id
            )
        except VerdictParseError:
            failures.append({"scenario_id": scenario_id, "endpoint": data["endpoint_name"], "error": "parse"})
            continue
        cells.extend(cells_from_verdict(verdict, assignment))

    if config.human_scores:
        cells.extend(ingest_human_scores(config.human_scores))
    if not cells:
        raise DataError("no parseable judge completions found")
    agg = aggregate(cells, missing=failures)
    export(agg, run_dir / "reports")
    _persist_cells(cells, failures, run_dir)
    return {"cells": len(cells), "failures": len(failures)}


def cmd_report(run_dir: Path) -> dict:
    """Re-render exports from persisted aggregation inputs, no recomputation."""
    cells, missing = _load_cells(run_dir)
    agg = aggregate(cells, missing=missing)
    written = export(agg, run_dir / "reports")
    return {"written": [str(p) for p in written.values()]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iotriage",
        description="IoT/IIoT attack triage: detection, retrieval, prompting, judging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--mode", choices=("live", "record", "replay"), help="mode override")

    p_detect = sub.add_parser("detect", help="train and benchmark the flow classifiers")
    add_common(p_detect)

    p_kb = sub.add_parser("kb", help="build and persist the knowledge-base indices")
    p_kb.add_argument("--config", help="run config JSON")
    p_kb.add_argument("--out", help="output directory (overrides config)")
    p_kb.add_argument(
        "--dump-label-map", action="store_true", help="print the shipped label mapping and exit"
    )

    p_triage = sub.add_parser("triage", help="run scenarios through models and judges")
    add_common(p_triage)
    p_triage.add_argument("--filter", help="only scenarios whose label matches this substring")

    p_judge = sub.add_parser("judge", help="re-judge from stored completions")
    p_judge.add_argument("--config", required=True)
    p_judge.add_argument("--run", help="run directory (defaults to config output_dir)")

    p_report = sub.add_parser("report", help="re-render exports for a finished run")
    p_report.add_argument("--run", required=True, help="run directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p_synth.add_argument("--source", choices=("edge-iiotset", "ciciot2023"), required=True)
    p_synth.add_argument("--rows", type=int, default=4000)
    p_synth.add_argument("--seed", type=int, default=42)
    p_synth.add_argument("--out", required=True, help="CSV path to write")
    p_synth.add_argument("--duplicates", type=float, default=0.0)
    p_synth.add_argument("--missing", type=float, default=0.01)

    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "mode", None) is not None:
        config.mode = args.mode
    if getattr(args, "out", None) is not None:
        config.output_dir = Path(args.out)
    return config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            path = write_csv(
                SynthConfig(
                    source_id=args.source,
                    rows=args.rows,
                    seed=args.seed,
                    duplicate_fraction=args.duplicates,
                    missing_fraction=args.missing,
                ),
                args.out,
            )
            print(f"wrote {path}")
            return 0

        if args.command == "kb" and args.dump_label_map:
            print(dump_label_map())
            return 0

        if args.command == "report":
            result = cmd_report(Path(args.run))
            print(json.dumps(result, indent=2))
            return 0

        if getattr(args, "config", None) is None:
            raise ConfigError(f"--config is required for {args.command}")
        config = _apply_overrides(load_run_config(args.config), args)

        if args.command == "detect":
            result = cmd_detect(config, config.output_dir)
        elif args.command == "kb":
            result = cmd_kb(config, config.output_dir)
        elif args.command == "triage":
            result = cmd_triage(config, config.output_dir, scenario_filter=args.filter)
        elif args.command == "judge":
            run_dir = Path(args.run) if args.run else config.output_dir
            result = cmd_judge(config, run_dir)
        else:  # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command: {args.command}")
        print(json.dumps(result, indent=2, default=str))
        return 0
    except TriageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
