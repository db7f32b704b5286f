"""Command-line entry points: ingest, build, eval, stats.

Every command writes exactly one invocation manifest (invocation.json) into
its --out directory; the deterministic pipeline manifest is separate.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import evalharness, ingest, pipeline
from .config import load_config
from .errors import (
    ConfigError,
    DetoxError,
    EmptySourceError,
    PolicyError,
    ProtocolError,
    RequestError,
    ResumeError,
    RunAborted,
    SchemaError,
    ServiceError,
    TransportError,
)
from .scoring import HttpScorerClient, MockScorerClient

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3

_CONFIG_ERRORS = (ConfigError, SchemaError, PolicyError, EmptySourceError,
                  ResumeError, FileNotFoundError, ValueError)
_TRANSPORT_ERRORS = (TransportError, RequestError, ProtocolError, ServiceError, RunAborted)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_invocation(out_dir: Path, command: str, started: str,
                      chash: str | None, outputs: dict, summary: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": chash,
        "started_at": started,
        "finished_at": _now(),
        "outputs": outputs,
        "summary": summary,
    }
    (out_dir / "invocation.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _build_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides["split"] = {"seed": args.seed}
    if getattr(args, "policy", None):
        overrides["gating"] = args.policy
    if getattr(args, "mock_script", None):
        overrides["mock_script"] = args.mock_script
    if getattr(args, "scorer_base", None):
        overrides["scorer_mode"] = "http"
        overrides["scorer_base"] = args.scorer_base
    return overrides


def _scorer_from_config(config):
    if config.scorer_mode == "http":
        if not config.scorer_base:
            raise ConfigError("scorer_mode is http but no scorer base configured "
                              "(set DETOX_SCORER_BASE or --scorer-base)")
        return HttpScorerClient(config.scorer_base)
    return MockScorerClient()


def cmd_ingest(args) -> int:
    started = _now()
    config = load_config(args.config, _build_overrides(args))
    if not config.sources:
        raise ConfigError("config declares no sources to ingest")
    for spec in config.sources:
        if not Path(spec.path).exists():
            raise FileNotFoundError(f"source file not found: {spec.path}")
    summary = ingest.ingest_sources(config.sources, config.label_policy)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / "samples.jsonl"
    ingest.write_samples(summary.samples, samples_path)
    counts = {
        "loaded_per_source": summary.loaded_per_source,
        "filtered_per_source": summary.filtered_per_source,
        "skipped_rows": summary.skipped_rows,
        "degenerate": summary.degenerate,
        "duplicates": summary.duplicates,
        "samples": len(summary.samples),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(counts, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"ingested {len(summary.samples)} samples "
          f"({summary.duplicates} duplicates, {summary.degenerate} degenerate, "
          f"{summary.skipped_rows} skipped rows)")
    for source in sorted(summary.filtered_per_source):
        print(f"  {source}: {summary.filtered_per_source[source]} kept "
              f"of {summary.loaded_per_source.get(source, 0)} loaded")
    if not summary.samples:
        print("warning: zero samples survived filtering", file=sys.stderr)
    _write_invocation(out_dir, "ingest", started, None,
                      {"samples": str(samples_path)}, counts)
    return EXIT_OK


def cmd_build(args) -> int:
    started = _now()
    config = load_config(args.config, _build_overrides(args))
    samples = ingest.read_samples(args.samples)
    out_dir = Path(args.out)
    checkpoint_dir = Path(args.checkpoints) if args.checkpoints else out_dir / "checkpoints"
    began = time.monotonic()
    result = pipeline.run(
        config, samples, checkpoint_dir,
        resume=args.resume, force=args.force,
        scorer=_scorer_from_config(config))
    elapsed = time.monotonic() - began
    paths = pipeline.write_outputs(result, out_dir)
    stats = result.stats
    print(f"built {len(result.pairs)} pairs from {stats.input_count} samples "
          f"in {elapsed:.2f}s")
    for status in pipeline.TERMINAL_STATUSES:
        print(f"  {status}: {stats.status_counts.get(status, 0)}")
    print(f"  refusals: {stats.refusal_first_pass} first-pass, "
          f"{stats.refusal_recovered} recovered")
    print(f"  est. cost: ${stats.cost.rounded:.3f}")
    _write_invocation(out_dir, "build", started, result.config_hash, paths,
                      stats.to_dict())
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = load_config(args.config, _build_overrides(args)) if args.config else None
    scorer = (_scorer_from_config(config) if config else
              (HttpScorerClient(args.scorer_base) if args.scorer_base else MockScorerClient()))

    if args.baseline:
        if not args.inputs:
            raise ConfigError("--baseline requires --inputs with one toxic text per line")
        toxic_lines = evalharness.read_reference_file(args.inputs)
        if args.baseline == "delete":
            if not args.lexicon:
                raise ConfigError("--baseline delete requires --lexicon")
            lexicon = evalharness.load_lexicon(args.lexicon)
            generated = [evalharness.baseline_delete(t, lexicon) for t in toxic_lines]
        else:
            generated = [evalharness.baseline_duplicate(t) for t in toxic_lines]
        outputs_path = out_dir / "outputs.tsv"
        with open(outputs_path, "w", encoding="utf-8") as fh:
            for toxic, system in zip(toxic_lines, generated):
                fh.write(f"{toxic}\t{system}\n")
        outputs = [evalharness.SystemOutput(toxic=t, system_output=s, id=str(i + 1))
                   for i, (t, s) in enumerate(zip(toxic_lines, generated))]
    else:
        if not args.outputs:
            raise ConfigError("either --outputs or --baseline is required")
        outputs = evalharness.read_outputs_file(args.outputs)

    if not Path(args.references).exists():
        raise FileNotFoundError(f"reference file not found: {args.references}")
    references = evalharness.read_reference_file(args.references)
    if len(outputs) != len(references):
        short = min(len(outputs), len(references))
        raise ValueError(
            f"outputs and references misaligned at line {short + 1}: "
            f"{len(outputs)} outputs vs {len(references)} references")

    report = evalharness.evaluate(outputs, references, scorer)
    paths = evalharness.write_report(report, out_dir)
    print(f"evaluated {report.n} outputs")
    print(f"  style accuracy:       {report.style_accuracy:.4f}")
    print(f"  content preservation: {report.content_preservation:.4f}")
    print(f"  fluency:              {report.fluency:.4f}")
    print(f"  bleu:                 {report.bleu:.4f}")
    _write_invocation(out_dir, "eval", started, None, paths,
                      report.to_dict())
    return EXIT_OK


def cmd_stats(args) -> int:
    started = _now()
    config = load_config(args.config, _build_overrides(args)) if args.config else load_config()
    records_map, corrupt = pipeline.load_records(args.checkpoints)
    records = list(records_map.values())
    stats = pipeline.stats_from_records(records, config.pricing, config.thresholds) \
        if records else None

    print(f"checkpoints: {args.checkpoints}")
    if corrupt:
        print(f"  {corrupt} corrupt line(s) skipped")
    if stats is None:
        print("  no records")
        summary: dict = {"records": 0, "corrupt": corrupt}
    else:
        print(f"  records: {stats.input_count}")
        for status in pipeline.TERMINAL_STATUSES + pipeline.NON_TERMINAL_STATUSES:
            count = stats.status_counts.get(status, 0)
            if count or status in pipeline.TERMINAL_STATUSES:
                print(f"  {status}: {count}")
        print(f"  refusals: {stats.refusal_first_pass} first-pass, "
              f"{stats.refusal_recovered} recovered")
        if stats.content_agreement:
            print(f"  content kappa:  {stats.content_agreement['kappa']:.4f}")
        if stats.toxicity_agreement:
            print(f"  toxicity kappa: {stats.toxicity_agreement['kappa']:.4f}")
        print(f"  est. cost: ${stats.cost.rounded:.3f}")
        summary = dict(stats.to_dict(), corrupt=corrupt)

    out_dir = Path(args.out) if args.out else Path(args.checkpoints).parent / "stats"
    _write_invocation(out_dir, "stats", started, None,
                      {"checkpoints": str(args.checkpoints)}, summary)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detoxcorpus",
        description="Build and evaluate parallel detoxification corpora")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--mock-script", dest="mock_script",
                       help="scripted mock backend rules (YAML/JSON)")
        p.add_argument("--scorer-base", dest="scorer_base",
                       help="scorer service base URL (switches scorer mode to http)")

    p_ingest = sub.add_parser("ingest", help="load, filter, normalize, dedupe sources")
    common(p_ingest)
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_build = sub.add_parser("build", help="run the annotation pipeline")
    common(p_build)
    p_build.add_argument("--samples", required=True, help="samples.jsonl from ingest")
    p_build.add_argument("--out", required=True, help="output directory")
    p_build.add_argument("--checkpoints", help="checkpoint directory (default: OUT/checkpoints)")
    p_build.add_argument("--resume", action="store_true",
                         help="continue from existing checkpoints")
    p_build.add_argument("--force", action="store_true",
                         help="discard existing checkpoints and start fresh")
    p_build.add_argument("--policy", choices=("llm_verdict", "conjunctive"),
                         help="gating policy override")
    p_build.set_defaults(func=cmd_build)

    p_eval = sub.add_parser("eval", help="score system outputs")
    common(p_eval)
    p_eval.add_argument("--outputs", help="two-column TSV: toxic TAB system_output")
    p_eval.add_argument("--references", required=True, help="reference file, one per line")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--baseline", choices=("duplicate", "delete"),
                        help="generate outputs with a naive baseline first")
    p_eval.add_argument("--inputs", help="toxic texts for --baseline, one per line")
    p_eval.add_argument("--lexicon", help="toxic-word list for --baseline delete")
    p_eval.set_defaults(func=cmd_eval)

    p_stats = sub.add_parser("stats", help="summarize a checkpoint directory")
    common(p_stats)
    p_stats.add_argument("--checkpoints", required=True, help="checkpoint directory")
    p_stats.add_argument("--out", help="directory for the invocation manifest")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _TRANSPORT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except DetoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    raise SystemExit(main())
