"""End-to-end corpus build: per-sample state machine over the three tasks,
refusal fallback, gating, checkpoint/resume, splits, emission, run stats."""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .annotator import Annotator, load_templates
from .config import PipelineConfig, SplitSpec, config_hash
from .errors import (
    GateError,
    ProtocolError,
    RequestError,
    ResumeError,
    RunAborted,
    ServiceError,
    TransportError,
    VerdictError,
)
from .ingest import CleanSample
from .llm_client import (
    ChatClient,
    CostEstimate,
    OpenAIChatBackend,
    Pricing,
    ResponseCache,
    ScriptedMockBackend,
    SlidingWindowRateLimiter,
    UsageLedger,
    estimate_cost,
    load_mock_script,
)
from .scoring import (
    HttpScorerClient,
    MockScorerClient,
    ScoreThresholds,
    VALIDATION_PROFILE,
    cohen_kappa,
    similarity_label,
    toxicity_label,
)

log = logging.getLogger(__name__)

NON_TERMINAL_STATUSES = ("Pending", "RefusedOnce", "Paraphrased", "ContentOk")
TERMINAL_STATUSES = ("RefusedFinal", "ContentFail", "ToxicFail", "VerdictError", "Accepted")

RECORDS_FILE = "records.jsonl"
CACHE_FILE = "cache.jsonl"
META_FILE = "run_meta.json"


@dataclass
class Attempt:
    task: str
    variant: str | None
    outcome: str  # "ok" | "refusal" | "unparseable"
    input_tokens: int = 0
    output_tokens: int = 0
    cached: bool = False

    def to_dict(self) -> dict:
        return {
            "task": self.task, "variant": self.variant, "outcome": self.outcome,
            "input_tokens": self.input_tokens, "output_tokens": self.output_tokens,
            "cached": self.cached,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Attempt":
        return cls(**data)


@dataclass
class AnnotationRecord:
    sample_id: str
    toxic_text: str
    source: str = ""
    paraphrase: str | None = None
    attempts: list[Attempt] = field(default_factory=list)
    task2_verdict: str | None = None
    task3_verdict: str | None = None
    content_sim: float | None = None
    toxicity: float | None = None
    status: str = "Pending"
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES

    def touch(self) -> None:
        self.updated_at = time.time()

    def to_dict(self) -> dict:
        scores = {}
        if self.content_sim is not None:
            scores["content_sim"] = self.content_sim
        if self.toxicity is not None:
            scores["toxicity"] = self.toxicity
        return {
            "sample_id": self.sample_id,
            "toxic_text": self.toxic_text,
            "source": self.source,
            "paraphrase": self.paraphrase,
            "attempts": [a.to_dict() for a in self.attempts],
            "task2_verdict": self.task2_verdict,
            "task3_verdict": self.task3_verdict,
            "validation_scores": scores or None,
            "status": self.status,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationRecord":
        scores = data.get("validation_scores") or {}
        return cls(
            sample_id=data["sample_id"],
            toxic_text=data["toxic_text"],
            source=data.get("source", ""),
            paraphrase=data.get("paraphrase"),
            attempts=[Attempt.from_dict(a) for a in data.get("attempts", [])],
            task2_verdict=data.get("task2_verdict"),
            task3_verdict=data.get("task3_verdict"),
            content_sim=scores.get("content_sim"),
            toxicity=scores.get("toxicity"),
            status=data.get("status", "Pending"),
            created_at=data.get("created_at", 0.0),
            updated_at=data.get("updated_at", 0.0),
        )


@dataclass
class ParallelPair:
    id: str
    toxic: str
    detoxified: str
    source: str
    content_sim: float | None
    toxicity: float | None
    pipeline_version: str
    split: str | None = None

    def to_corpus_json(self) -> str:
        return json.dumps(
            {"id": self.id, "toxic": self.toxic, "detoxified": self.detoxified,
             "source": self.source, "content_sim": self.content_sim,
             "toxicity": self.toxicity, "split": self.split},
            ensure_ascii=False, sort_keys=True)


@dataclass
class RunStats:
    input_count: int
    status_counts: dict[str, int]
    refusal_first_pass: int
    refusal_recovered: int
    ledger: dict
    cost: CostEstimate
    content_agreement: dict | None
    toxicity_agreement: dict | None

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "status_counts": dict(sorted(self.status_counts.items())),
            "refusal_first_pass": self.refusal_first_pass,
            "refusal_recovered": self.refusal_recovered,
            "ledger": self.ledger,
            "cost": {"raw": self.cost.raw, "rounded": self.cost.rounded},
            "content_agreement": self.content_agreement,
            "toxicity_agreement": self.toxicity_agreement,
        }


@dataclass
class RunResult:
    pairs: list[ParallelPair]
    stats: RunStats
    records: list[AnnotationRecord]
    config_hash: str


@dataclass
class RunContext:
    annotator: Annotator
    scorer: object
    thresholds: ScoreThresholds
    gating: str


def apply_gate(record: AnnotationRecord, policy: str, thresholds: ScoreThresholds) -> bool:
    """Accept iff task2=Yes and task3=No; the conjunctive policy additionally
    requires the cross-validation scores to agree."""
    if record.task2_verdict is None or record.task3_verdict is None:
        raise GateError(f"record {record.sample_id}: gate requires both verdicts")
    verdict_ok = record.task2_verdict == "Yes" and record.task3_verdict == "No"
    if policy == "llm_verdict":
        return verdict_ok
    if record.content_sim is None or record.toxicity is None:
        raise GateError(f"record {record.sample_id}: conjunctive gate requires scores")
    return (verdict_ok
            and record.content_sim > thresholds.content_sim_min
            and record.toxicity <= thresholds.toxicity_max_for_nontoxic)


def step(record: AnnotationRecord, ctx: RunContext) -> AnnotationRecord:
    """Advance a non-terminal record by exactly one transition."""
    if record.terminal:
        raise ValueError(f"record {record.sample_id} already terminal: {record.status}")

    if record.status == "Pending":
        outcome = ctx.annotator.paraphrase(record.toxic_text, "primary")
        record.attempts.append(Attempt(
            task="paraphrase", variant="primary",
            outcome="refusal" if outcome.refused else "ok",
            input_tokens=outcome.input_tokens, output_tokens=outcome.output_tokens,
            cached=outcome.cached))
        if outcome.refused:
            record.status = "RefusedOnce"
        else:
            record.paraphrase = outcome.text
            record.status = "Paraphrased"

    elif record.status == "RefusedOnce":
        outcome = ctx.annotator.paraphrase(record.toxic_text, "fallback")
        record.attempts.append(Attempt(
            task="paraphrase_fallback", variant="fallback",
            outcome="refusal" if outcome.refused else "ok",
            input_tokens=outcome.input_tokens, output_tokens=outcome.output_tokens,
            cached=outcome.cached))
        if outcome.refused:
            record.status = "RefusedFinal"
        else:
            record.paraphrase = outcome.text
            record.status = "Paraphrased"

    elif record.status == "Paraphrased":
        assert record.paraphrase
        try:
            outcome = ctx.annotator.content_check(record.toxic_text, record.paraphrase)
        except VerdictError as exc:
            record.attempts.append(Attempt(
                task="content_check", variant=None, outcome="unparseable",
                input_tokens=getattr(exc, "input_tokens", 0),
                output_tokens=getattr(exc, "output_tokens", 0)))
            record.status = "VerdictError"
            record.touch()
            return record
        record.attempts.append(Attempt(
            task="content_check", variant=None, outcome="ok",
            input_tokens=outcome.input_tokens, output_tokens=outcome.output_tokens,
            cached=outcome.cached))
        record.task2_verdict = outcome.verdict.value
        record.content_sim = similarity_label(
            record.toxic_text, record.paraphrase, ctx.scorer, ctx.thresholds,
            VALIDATION_PROFILE).score
        if outcome.verdict.value == "No":
            record.status = "ContentFail"
        elif (ctx.gating == "conjunctive"
              and record.content_sim <= ctx.thresholds.content_sim_min):
            record.status = "ContentFail"
        else:
            record.status = "ContentOk"

    elif record.status == "ContentOk":
        assert record.paraphrase
        try:
            outcome = ctx.annotator.toxicity_check(record.paraphrase)
        except VerdictError as exc:
            record.attempts.append(Attempt(
                task="toxicity_check", variant=None, outcome="unparseable",
                input_tokens=getattr(exc, "input_tokens", 0),
                output_tokens=getattr(exc, "output_tokens", 0)))
            record.status = "VerdictError"
            record.touch()
            return record
        record.attempts.append(Attempt(
            task="toxicity_check", variant=None, outcome="ok",
            input_tokens=outcome.input_tokens, output_tokens=outcome.output_tokens,
            cached=outcome.cached))
        record.task3_verdict = outcome.verdict.value
        record.toxicity = toxicity_label(
            record.paraphrase, ctx.scorer, ctx.thresholds).score
        if outcome.verdict.value == "Yes":
            record.status = "ToxicFail"
        elif apply_gate(record, ctx.gating, ctx.thresholds):
            record.status = "Accepted"
        else:
            # conjunctive gate rejected on a score: attribute the failure
            record.status = ("ToxicFail"
                             if record.toxicity > ctx.thresholds.toxicity_max_for_nontoxic
                             else "ContentFail")

    record.touch()
    return record


def compute_agreement(records: list[AnnotationRecord],
                      thresholds: ScoreThresholds) -> dict[str, dict | None]:
    """Kappa between LLM verdicts and the score-derived labels, for the
    content and toxicity checks separately."""
    if len(records) < 2:
        raise ValueError(f"need at least 2 records, got {len(records)}")
    content_pairs = [
        (r.task2_verdict == "Yes", r.content_sim > thresholds.content_sim_min)
        for r in records if r.task2_verdict is not None and r.content_sim is not None
    ]
    toxicity_pairs = [
        (r.task3_verdict == "Yes", r.toxicity > thresholds.toxicity_max_for_nontoxic)
        for r in records if r.task3_verdict is not None and r.toxicity is not None
    ]
    result: dict[str, dict | None] = {"content": None, "toxicity": None}
    if len(content_pairs) >= 2:
        result["content"] = cohen_kappa(
            [a for a, _ in content_pairs], [b for _, b in content_pairs]).to_dict()
    if len(toxicity_pairs) >= 2:
        result["toxicity"] = cohen_kappa(
            [a for a, _ in toxicity_pairs], [b for _, b in toxicity_pairs]).to_dict()
    return result


def stats_from_records(records: list[AnnotationRecord], pricing: Pricing,
                       thresholds: ScoreThresholds) -> RunStats:
    status_counts = {status: 0 for status in TERMINAL_STATUSES}
    for record in records:
        if record.terminal:
            status_counts[record.status] += 1
        else:
            status_counts[record.status] = status_counts.get(record.status, 0) + 1

    refusal_first_pass = sum(
        1 for r in records
        if any(a.task == "paraphrase" and a.outcome == "refusal" for a in r.attempts))
    refusal_recovered = sum(
        1 for r in records
        if any(a.task == "paraphrase" and a.outcome == "refusal" for a in r.attempts)
        and any(a.task == "paraphrase_fallback" and a.outcome == "ok" for a in r.attempts))

    ledger = UsageLedger()
    for record in records:
        for attempt in record.attempts:
            ledger.add(attempt.task, attempt.input_tokens, attempt.output_tokens)
    cost = estimate_cost(ledger, pricing)

    agreement: dict[str, dict | None] = {"content": None, "toxicity": None}
    if len(records) >= 2:
        agreement = compute_agreement(records, thresholds)

    return RunStats(
        input_count=len(records),
        status_counts={k: v for k, v in status_counts.items() if v or k in TERMINAL_STATUSES},
        refusal_first_pass=refusal_first_pass,
        refusal_recovered=refusal_recovered,
        ledger=ledger.to_dict(),
        cost=cost,
        content_agreement=agreement["content"],
        toxicity_agreement=agreement["toxicity"],
    )


def split(pairs: list[ParallelPair], spec: SplitSpec) -> dict[str, list[ParallelPair]]:
    """Seeded shuffle, then floor(n*r_val) / floor(n*r_test) to val/test and
    the remainder to train. Also stamps each pair's `split` field."""
    n = len(pairs)
    if n < 3:
        raise ValueError(f"need at least 3 pairs to split, got {n}")
    indices = list(range(n))
    random.Random(spec.seed).shuffle(indices)
    n_val = int(n * spec.ratios[1])
    n_test = int(n * spec.ratios[2])
    val_idx = set(indices[:n_val])
    test_idx = set(indices[n_val:n_val + n_test])
    buckets: dict[str, list[ParallelPair]] = {"train": [], "val": [], "test": []}
    for i, pair in enumerate(pairs):
        name = "val" if i in val_idx else "test" if i in test_idx else "train"
        pair.split = name
        buckets[name].append(pair)
    return buckets


class _CheckpointWriter:
    def __init__(self, path: Path):
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def write(self, record: AnnotationRecord) -> None:
        line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def load_records(checkpoint_dir: Path | str) -> tuple[dict[str, AnnotationRecord], int]:
    """Read checkpointed records (last revision per sample wins). Returns the
    records keyed by sample id plus the count of corrupt lines skipped."""
    path = Path(checkpoint_dir) / RECORDS_FILE
    records: dict[str, AnnotationRecord] = {}
    corrupt = 0
    if not path.exists():
        return records, corrupt
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                record = AnnotationRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError):
                corrupt += 1
                continue
            records[record.sample_id] = record
    return records, corrupt


def build_backend(config: PipelineConfig, clock=time.monotonic):
    if config.mock_script:
        return ScriptedMockBackend(load_mock_script(config.mock_script), clock=clock)
    return OpenAIChatBackend(config.api_base, config.api_key)


def build_scorer(config: PipelineConfig):
    if config.scorer_mode == "http":
        if not config.scorer_base:
            raise ServiceError("scorer_mode is http but no scorer base URL configured")
        return HttpScorerClient(config.scorer_base)
    return MockScorerClient()


def run(
    config: PipelineConfig,
    samples: list[CleanSample],
    checkpoint_dir: Path | str,
    resume: bool = False,
    force: bool = False,
    backend=None,
    scorer=None,
    sleep=time.sleep,
) -> RunResult:
    """Drive every sample to a terminal status and assemble the corpus.

    Per-sample verdict failures never abort the run; transport-level failures
    abort after flushing checkpoints (resume picks up from there). With
    `resume`, terminal records are skipped and non-terminal ones continue
    from their last checkpointed transition.
    """
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    records_path = checkpoint_dir / RECORDS_FILE
    meta_path = checkpoint_dir / META_FILE

    templates = load_templates(config.templates_dir)
    chash = config_hash(config, templates)
    prompt_versions = {task: tpl.version for task, tpl in sorted(templates.items())}

    if force:
        records_path.unlink(missing_ok=True)
        meta_path.unlink(missing_ok=True)
        (checkpoint_dir / CACHE_FILE).unlink(missing_ok=True)

    existing: dict[str, AnnotationRecord] = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("config_hash") != chash:
            raise ResumeError(
                f"checkpoint dir {checkpoint_dir} was written with config hash "
                f"{meta.get('config_hash')!r}, current is {chash!r} (use force to discard)")
        if records_path.exists() and records_path.stat().st_size > 0:
            if not resume:
                raise ResumeError(
                    f"checkpoint dir {checkpoint_dir} already has records; "
                    "pass resume=True to continue or force=True to discard")
            existing, corrupt = load_records(checkpoint_dir)
            if corrupt:
                log.warning("skipped %d corrupt checkpoint lines", corrupt)
    else:
        meta_path.write_text(
            json.dumps({"config_hash": chash, "prompt_versions": prompt_versions},
                       sort_keys=True) + "\n",
            encoding="utf-8")

    if backend is None:
        backend = build_backend(config)
    if scorer is None:
        scorer = build_scorer(config)
    limiter = (SlidingWindowRateLimiter(config.rate_limit)
               if config.rate_limit else None)
    client = ChatClient(
        backend,
        retry=config.retry,
        limiter=limiter,
        cache=ResponseCache(checkpoint_dir / CACHE_FILE),
        sleep=sleep,
    )
    annotator = Annotator(
        client, templates, params=config.model,
        params_by_task=config.model_overrides,
        refusal_patterns=config.refusal_patterns)
    ctx = RunContext(annotator=annotator, scorer=scorer,
                     thresholds=config.thresholds, gating=config.gating)

    # authoritative order: the samples argument, then checkpoint-only records
    ordered: list[AnnotationRecord] = []
    seen = set()
    for sample in samples:
        if sample.id in existing:
            ordered.append(existing[sample.id])
        else:
            ordered.append(AnnotationRecord(
                sample_id=sample.id, toxic_text=sample.text, source=sample.source))
        seen.add(sample.id)
    for sample_id, record in existing.items():
        if sample_id not in seen:
            ordered.append(record)

    writer = _CheckpointWriter(records_path)
    abort = threading.Event()
    fatal: list[Exception] = []
    fatal_lock = threading.Lock()

    def process(record: AnnotationRecord) -> None:
        if record.terminal:
            return
        if not record.attempts and record.status == "Pending":
            writer.write(record)  # register the sample before first transition
        while not record.terminal:
            if abort.is_set():
                return
            try:
                step(record, ctx)
            except (TransportError, RequestError, ProtocolError, ServiceError) as exc:
                with fatal_lock:
                    fatal.append(exc)
                abort.set()
                return
            writer.write(record)

    try:
        if config.concurrency == 1:
            for record in ordered:
                process(record)
        else:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                list(pool.map(process, ordered))
    finally:
        writer.close()

    if fatal:
        raise RunAborted(f"run aborted after backend failure: {fatal[0]}") from fatal[0]

    stats = stats_from_records(ordered, config.pricing, config.thresholds)
    pairs = [
        ParallelPair(
            id=r.sample_id, toxic=r.toxic_text, detoxified=r.paraphrase or "",
            source=r.source, content_sim=r.content_sim, toxicity=r.toxicity,
            pipeline_version=chash)
        for r in ordered if r.status == "Accepted"
    ]
    if len(pairs) >= 3:
        split(pairs, config.split)
    else:
        for pair in pairs:
            pair.split = "train"
    return RunResult(pairs=pairs, stats=stats, records=ordered, config_hash=chash)


def resume(config: PipelineConfig, samples: list[CleanSample],
           checkpoint_dir: Path | str, **kwargs) -> RunResult:
    """Continue an interrupted run; errors if the config hash changed."""
    return run(config, samples, checkpoint_dir, resume=True, **kwargs)


def _tsv_safe(text: str) -> str:
    return text.replace("\t", " ").replace("\n", " ").replace("\r", " ")


def write_outputs(result: RunResult, out_dir: Path | str) -> dict[str, str]:
    """Emit corpus.jsonl, pairs.tsv, per-split TSVs, and the deterministic
    run manifest. Returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / "corpus.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for pair in result.pairs:
            fh.write(pair.to_corpus_json() + "\n")
    pairs_path = out_dir / "pairs.tsv"
    with open(pairs_path, "w", encoding="utf-8") as fh:
        for pair in result.pairs:
            fh.write(f"{_tsv_safe(pair.toxic)}\t{_tsv_safe(pair.detoxified)}\n")
    splits_dir = out_dir / "splits"
    splits_dir.mkdir(exist_ok=True)
    split_counts = {}
    for name in ("train", "val", "test"):
        bucket = [p for p in result.pairs if p.split == name]
        split_counts[name] = len(bucket)
        with open(splits_dir / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for pair in bucket:
                fh.write(f"{_tsv_safe(pair.toxic)}\t{_tsv_safe(pair.detoxified)}\n")
    manifest = {
        "config_hash": result.config_hash,
        "pair_count": len(result.pairs),
        "split_counts": split_counts,
        "stats": result.stats.to_dict(),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    return {
        "corpus": str(corpus_path), "pairs": str(pairs_path),
        "splits_dir": str(splits_dir), "manifest": str(manifest_path),
    }
