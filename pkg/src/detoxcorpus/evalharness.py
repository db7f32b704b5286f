"""Four-metric evaluation for detoxification system outputs, plus the naive
duplicate/delete baselines."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .scoring import EVALUATION_PROFILE, ScorerClient, corpus_bleu, cosine_similarity

# neutral cuts on calibrated probabilities; configurable per call
STYLE_NONTOXIC_MAX = 0.5
FLUENCY_MIN = 0.5


@dataclass(frozen=True)
class SystemOutput:
    toxic: str
    system_output: str
    id: str | None = None


@dataclass
class EvalReport:
    style_accuracy: float
    content_preservation: float
    fluency: float
    bleu: float
    n: int
    per_sample: list[dict] | None = None

    def to_dict(self, include_per_sample: bool = False) -> dict:
        data = {
            "style_accuracy": self.style_accuracy,
            "content_preservation": self.content_preservation,
            "fluency": self.fluency,
            "bleu": self.bleu,
            "n": self.n,
        }
        if include_per_sample and self.per_sample is not None:
            data["per_sample"] = self.per_sample
        return data


def evaluate(
    outputs: list[SystemOutput],
    references: list[str],
    scorer: ScorerClient,
    style_nontoxic_max: float = STYLE_NONTOXIC_MAX,
    fluency_min: float = FLUENCY_MIN,
    with_per_sample: bool = True,
) -> EvalReport:
    """Score system outputs against references.

    style accuracy: fraction with style score <= cut (classified non-toxic);
    content preservation: mean evaluation-profile cosine(toxic, output);
    fluency: fraction with fluency score > cut; BLEU: corpus-level vs refs.
    """
    if not outputs:
        raise ValueError("no outputs to evaluate")
    if len(outputs) != len(references):
        raise ValueError(
            f"outputs and references misaligned: {len(outputs)} vs {len(references)}")

    system_texts = [o.system_output for o in outputs]
    toxic_texts = [o.toxic for o in outputs]

    style_scores = scorer.score(system_texts, "style")
    fluency_scores = scorer.score(system_texts, "fluency")
    toxic_vecs = scorer.embed(toxic_texts, EVALUATION_PROFILE.name)
    output_vecs = scorer.embed(system_texts, EVALUATION_PROFILE.name)
    sims = [cosine_similarity(a, b) for a, b in zip(toxic_vecs, output_vecs)]

    style_flags = [s <= style_nontoxic_max for s in style_scores]
    fluent_flags = [s > fluency_min for s in fluency_scores]
    n = len(outputs)
    report = EvalReport(
        style_accuracy=sum(style_flags) / n,
        content_preservation=sum(sims) / n,
        fluency=sum(fluent_flags) / n,
        bleu=corpus_bleu(system_texts, references),
        n=n,
    )
    if with_per_sample:
        report.per_sample = [
            {"id": o.id, "style": float(style), "sim": float(sim), "fluent": bool(fluent)}
            for o, style, sim, fluent in zip(outputs, style_scores, sims, fluent_flags)
        ]
    return report


def baseline_duplicate(toxic: str) -> str:
    """Copy the input unchanged."""
    return toxic


_WS_RE = re.compile(r"\s+")


def baseline_delete(toxic: str, lexicon: frozenset[str] | set[str]) -> str:
    """Drop tokens whose lowercase form is in the lexicon; re-collapse
    whitespace."""
    kept = [tok for tok in toxic.split() if tok.lower() not in lexicon]
    return _WS_RE.sub(" ", " ".join(kept)).strip()


def load_lexicon(path: Path | str) -> frozenset[str]:
    """One lowercase token per line; blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"lexicon file not found: {path}")
    tokens = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            token = line.strip().lower()
            if token:
                tokens.add(token)
    return frozenset(tokens)


def read_outputs_file(path: Path | str) -> list[SystemOutput]:
    """Two-column delimited input: toxic TAB system_output."""
    outputs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}: line {lineno}: expected 2 tab-separated columns, got {len(parts)}")
            outputs.append(SystemOutput(toxic=parts[0], system_output=parts[1],
                                        id=str(lineno)))
    return outputs


def read_reference_file(path: Path | str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def write_report(report: EvalReport, out_dir: Path | str) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    per_sample_path = out_dir / "per_sample.jsonl"
    with open(per_sample_path, "w", encoding="utf-8") as fh:
        for row in report.per_sample or []:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return {"report": str(report_path), "per_sample": str(per_sample_path)}
