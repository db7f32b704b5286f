"""Declarative pipeline configuration: defaults, YAML file, flag overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .annotator import DEFAULT_REFUSAL_PATTERNS, PromptTemplate
from .errors import ConfigError
from .ingest import ReaderSpec
from .llm_client import ModelParams, Pricing, RetryPolicy
from .scoring import ScoreThresholds

GATING_POLICIES = ("llm_verdict", "conjunctive")

ENV_API_KEY = "DETOX_API_KEY"
ENV_API_BASE = "DETOX_API_BASE"
ENV_SCORER_BASE = "DETOX_SCORER_BASE"


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 13

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"split ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)}")


@dataclass
class PipelineConfig:
    sources: list[ReaderSpec] = field(default_factory=list)
    label_policy: dict[str, set[str]] = field(default_factory=dict)
    templates_dir: str | None = None
    model: ModelParams = ModelParams()
    model_overrides: dict[str, ModelParams] = field(default_factory=dict)
    thresholds: ScoreThresholds = ScoreThresholds()
    gating: str = "llm_verdict"
    split: SplitSpec = SplitSpec()
    pricing: Pricing = Pricing()
    api_base: str = "https://api.openai.com/v1"
    api_key: str = ""
    mock_script: str | None = None
    scorer_mode: str = "mock"  # "mock" | "http"
    scorer_base: str | None = None
    concurrency: int = 8
    rate_limit: float | None = None
    retry: RetryPolicy = RetryPolicy()
    refusal_patterns: tuple[str, ...] = DEFAULT_REFUSAL_PATTERNS
    seed: int = 13

    def __post_init__(self):
        if self.gating not in GATING_POLICIES:
            raise ConfigError(f"gating must be one of {GATING_POLICIES}, got {self.gating!r}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")


def _model_params(data: dict, base: ModelParams = ModelParams()) -> ModelParams:
    return ModelParams(
        model_name=data.get("model_name", base.model_name),
        max_tokens=data.get("max_tokens", base.max_tokens),
        temperature=data.get("temperature", base.temperature),
    )


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig with precedence: overrides > file > defaults.
    Credentials come from the environment only."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        data = loaded
    if overrides:
        data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})

    seed = int(data.get("seed", 13))
    sources = [
        ReaderSpec(
            format=entry["format"], path=entry["path"], source=entry["source"],
            columns=dict(entry["columns"]), delimiter=entry.get("delimiter", ","),
        )
        for entry in data.get("sources", [])
    ]
    label_policy = {
        source: set(labels) for source, labels in (data.get("label_policy") or {}).items()
    }
    model = _model_params(data.get("model") or {})
    model_overrides = {
        task: _model_params(params or {}, base=model)
        for task, params in (data.get("model_overrides") or {}).items()
    }
    thresholds_data = data.get("thresholds") or {}
    thresholds = ScoreThresholds(
        content_sim_min=thresholds_data.get("content_sim_min", 0.70),
        toxicity_max_for_nontoxic=thresholds_data.get("toxicity_max_for_nontoxic", 0.9),
    )
    split_data = data.get("split") or {}
    split = SplitSpec(
        ratios=tuple(split_data.get("ratios", (0.8, 0.1, 0.1))),
        seed=int(split_data.get("seed", seed)),
    )
    pricing_data = data.get("pricing") or {}
    pricing = Pricing(
        input_per_million=pricing_data.get("input_per_million", 0.15),
        output_per_million=pricing_data.get("output_per_million", 0.60),
    )
    retry_data = data.get("retry") or {}
    retry = RetryPolicy(
        attempts=int(retry_data.get("attempts", 5)),
        base_delay=float(retry_data.get("base_delay", 1.0)),
        jitter=float(retry_data.get("jitter", 0.2)),
    )
    return PipelineConfig(
        sources=sources,
        label_policy=label_policy,
        templates_dir=data.get("templates_dir"),
        model=model,
        model_overrides=model_overrides,
        thresholds=thresholds,
        gating=data.get("gating", "llm_verdict"),
        split=split,
        pricing=pricing,
        api_base=os.environ.get(ENV_API_BASE) or data.get("api_base", "https://api.openai.com/v1"),
        api_key=os.environ.get(ENV_API_KEY, ""),
        mock_script=data.get("mock_script"),
        scorer_mode=data.get("scorer_mode", "mock"),
        scorer_base=os.environ.get(ENV_SCORER_BASE) or data.get("scorer_base"),
        concurrency=int(data.get("concurrency", 8)),
        rate_limit=data.get("rate_limit"),
        retry=retry,
        refusal_patterns=tuple(data.get("refusal_patterns", DEFAULT_REFUSAL_PATTERNS)),
        seed=seed,
    )


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_hash(config: PipelineConfig, templates: dict[str, PromptTemplate]) -> str:
    """Stable hash of the semantic build configuration. Endpoints, pricing,
    concurrency, retry and transport knobs are excluded: changing them must
    not invalidate a resume."""
    payload = {
        "templates": {
            task: {
                "version": tpl.version,
                "sha": hashlib.sha256(
                    ((tpl.system or "") + "\x00" + tpl.user_template).encode("utf-8")
                ).hexdigest(),
            }
            for task, tpl in sorted(templates.items())
        },
        "model": [config.model.model_name, config.model.max_tokens, config.model.temperature],
        "model_overrides": {
            task: [p.model_name, p.max_tokens, p.temperature]
            for task, p in sorted(config.model_overrides.items())
        },
        "thresholds": [config.thresholds.content_sim_min,
                       config.thresholds.toxicity_max_for_nontoxic],
        "gating": config.gating,
        "split": [list(config.split.ratios), config.split.seed],
        "refusal_patterns": list(config.refusal_patterns),
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
