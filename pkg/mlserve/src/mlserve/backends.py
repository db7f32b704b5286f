"""Model backends behind the scorer endpoints.

Two families: `transformer` backends load published checkpoints (network or
local mirror required); `hashed`/`hashed-ngram` backends are deterministic
offline stand-ins so the service and its contract can run anywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import yaml


class StartupError(RuntimeError):
    """A configured checkpoint could not be loaded."""


class EmbeddingBackend(Protocol):
    dim: int

    def encode(self, texts: Sequence[str]) -> list[list[float]]: ...


class ScoreBackend(Protocol):
    def score(self, texts: Sequence[str]) -> list[float]: ...


class HashedNgramEmbedder:
    """Character n-gram hashing into a fixed number of buckets, L2-normalized.
    Identical texts embed identically; overlapping texts land nearby."""

    def __init__(self, dim: int = 768, seed: int = 0, ngram: int = 3):
        self.dim = dim
        self.seed = seed
        self.ngram = ngram

    def encode(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> list[float]:
        vec = np.zeros(self.dim)
        padded = f"\x02{text.lower()}\x03"
        for i in range(max(len(padded) - self.ngram + 1, 1)):
            gram = padded[i : i + self.ngram]
            digest = hashlib.blake2b(
                f"{self.seed}:{gram}".encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return (vec / norm).tolist()


class HashedScoreBackend:
    """Deterministic pseudo-probability in [0, 1) derived from the text hash."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, texts: Sequence[str]) -> list[float]:
        out = []
        for text in texts:
            digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
            out.append(int.from_bytes(digest[:8], "big") / 2**64)
        return out


class TransformerEmbedder:
    """Sentence embeddings from a published checkpoint."""

    def __init__(self, checkpoint: str, dim: int, device: str = "cpu"):
        try:
            from sentence_transformers import SentenceTransformer
            self._model = SentenceTransformer(checkpoint, device=device)
        except Exception as exc:
            raise StartupError(f"cannot load embedder {checkpoint!r}: {exc}") from exc
        self.dim = dim

    def encode(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = self._model.encode(list(texts), convert_to_numpy=True,
                                     normalize_embeddings=False)
        return [v.tolist() for v in vectors]


class TransformerClassifier:
    """Probability of one target class from a sequence classifier checkpoint.
    `target` names an entry of id2label (case-insensitive); `multi_label`
    switches softmax to per-logit sigmoid."""

    def __init__(self, checkpoint: str, target: str, multi_label: bool = False,
                 device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            from transformers import AutoModelForSequenceClassification, AutoTokenizer
            self._torch = torch
            self._tokenizer = AutoTokenizer.from_pretrained(checkpoint)
            self._model = AutoModelForSequenceClassification.from_pretrained(checkpoint)
            self._model.to(device)
            self._model.eval()
        except Exception as exc:
            raise StartupError(f"cannot load classifier {checkpoint!r}: {exc}") from exc
        self.device = device
        self.batch_size = batch_size
        self.multi_label = multi_label
        id2label = {i: label.lower() for i, label in self._model.config.id2label.items()}
        matches = [i for i, label in id2label.items() if label == target.lower()]
        if not matches:
            raise StartupError(
                f"{checkpoint!r} has no class {target!r}; classes: {sorted(id2label.values())}")
        self.target_index = matches[0]

    def score(self, texts: Sequence[str]) -> list[float]:
        torch = self._torch
        scores: list[float] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            encoded = self._tokenizer(batch, return_tensors="pt", padding=True,
                                      truncation=True, max_length=256).to(self.device)
            with torch.no_grad():
                logits = self._model(**encoded).logits
            if self.multi_label:
                probs = torch.sigmoid(logits[:, self.target_index])
            else:
                probs = torch.softmax(logits, dim=-1)[:, self.target_index]
            scores.extend(float(p) for p in probs)
        return scores


@dataclass
class ScorerBackends:
    embedders: dict[str, EmbeddingBackend]
    scorers: dict[str, ScoreBackend]


def _build_embedder(spec: dict) -> EmbeddingBackend:
    kind = spec.get("type", "hashed-ngram")
    if kind == "hashed-ngram":
        return HashedNgramEmbedder(dim=int(spec.get("dim", 768)),
                                   seed=int(spec.get("seed", 0)))
    if kind == "transformer":
        return TransformerEmbedder(spec["checkpoint"], dim=int(spec.get("dim", 768)),
                                   device=spec.get("device", "cpu"))
    raise StartupError(f"unknown embedder type: {kind!r}")


def _build_scorer(spec: dict) -> ScoreBackend:
    kind = spec.get("type", "hashed")
    if kind == "hashed":
        return HashedScoreBackend(seed=int(spec.get("seed", 0)))
    if kind == "transformer":
        return TransformerClassifier(
            spec["checkpoint"], target=spec.get("target", ""),
            multi_label=bool(spec.get("multi_label", False)),
            device=spec.get("device", "cpu"))
    raise StartupError(f"unknown scorer type: {kind!r}")


def build_backends(models_config: dict | str | Path) -> ScorerBackends:
    """Instantiate all configured backends; any load failure is a startup
    error (the service must not come up half-configured)."""
    if not isinstance(models_config, dict):
        with open(models_config, encoding="utf-8") as fh:
            models_config = yaml.safe_load(fh)
    embedders = {
        name: _build_embedder(spec)
        for name, spec in (models_config.get("embedders") or {}).items()
    }
    scorers = {
        name: _build_scorer(spec)
        for name, spec in (models_config.get("scorers") or {}).items()
    }
    missing_profiles = {"validation", "evaluation"} - set(embedders)
    missing_kinds = {"toxicity", "fluency", "style"} - set(scorers)
    if missing_profiles or missing_kinds:
        raise StartupError(
            f"models config incomplete: missing embedders {sorted(missing_profiles)}, "
            f"scorers {sorted(missing_kinds)}")
    return ScorerBackends(embedders=embedders, scorers=scorers)
