"""Score-based cross-validation of LLM verdicts and agreement/overlap math."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import ServiceError

BLEU_EPSILON = 1e-9


@dataclass(frozen=True)
class ScoreThresholds:
    content_sim_min: float = 0.70
    toxicity_max_for_nontoxic: float = 0.9

    def __post_init__(self):
        for name in ("content_sim_min", "toxicity_max_for_nontoxic"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class EmbeddingProfile:
    name: str  # "validation" | "evaluation"
    endpoint: str
    dimension: int


# both default embedding checkpoints produce 768-dim sentence vectors
VALIDATION_PROFILE = EmbeddingProfile("validation", "/embed", 768)
EVALUATION_PROFILE = EmbeddingProfile("evaluation", "/embed", 768)
PROFILES = {p.name: p for p in (VALIDATION_PROFILE, EVALUATION_PROFILE)}

SCORE_KINDS = ("toxicity", "fluency", "style")


@dataclass(frozen=True)
class LabeledScore:
    label: str
    score: float


@dataclass(frozen=True)
class AgreementReport:
    kappa: float
    n: int
    observed_agreement: float
    expected_agreement: float
    confusion: dict[str, int]  # keys yes_yes, yes_no, no_yes, no_no

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa, "n": self.n,
            "observed_agreement": self.observed_agreement,
            "expected_agreement": self.expected_agreement,
            "confusion": dict(sorted(self.confusion.items())),
        }


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.ndim != 1 or vb.ndim != 1 or va.shape != vb.shape or va.size == 0:
        raise ValueError(f"vectors must share one nonzero dimension, got {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


def content_label_from_score(score: float, thresholds: ScoreThresholds) -> str:
    # strictly above the threshold counts as meaning-preserving
    return "Yes" if score > thresholds.content_sim_min else "No"


def toxicity_label_from_score(score: float, thresholds: ScoreThresholds) -> str:
    # strictly above the threshold counts as still-toxic
    return "Toxic" if score > thresholds.toxicity_max_for_nontoxic else "NonToxic"


class ScorerClient(Protocol):
    def embed(self, texts: Sequence[str], profile: str) -> list[list[float]]: ...

    def score(self, texts: Sequence[str], kind: str) -> list[float]: ...


def similarity_label(
    toxic: str,
    detox: str,
    scorer: ScorerClient,
    thresholds: ScoreThresholds,
    profile: EmbeddingProfile = VALIDATION_PROFILE,
) -> LabeledScore:
    """Embed both texts and label Yes iff cosine is strictly above the
    content threshold."""
    vectors = scorer.embed([toxic, detox], profile.name)
    for vec in vectors:
        if len(vec) != profile.dimension:
            raise ServiceError(
                f"scorer returned {len(vec)}-dim vector for {profile.name} "
                f"(declared {profile.dimension})")
    score = cosine_similarity(vectors[0], vectors[1])
    return LabeledScore(content_label_from_score(score, thresholds), score)


def toxicity_label(text: str, scorer: ScorerClient, thresholds: ScoreThresholds) -> LabeledScore:
    """Score toxicity and label Toxic iff strictly above the threshold."""
    score = scorer.score([text], "toxicity")[0]
    return LabeledScore(toxicity_label_from_score(score, thresholds), score)


def cohen_kappa(a: Sequence[bool], b: Sequence[bool]) -> AgreementReport:
    """Two-rater Cohen's kappa over binary labels.

    When chance agreement is 1 (both raters constant), kappa is defined as
    1.0 for perfect agreement and 0.0 otherwise.
    """
    if len(a) != len(b):
        raise ValueError(f"label lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("at least one label pair required")
    n = len(a)
    n11 = n10 = n01 = n00 = 0
    for x, y in zip(a, b):
        if x and y:
            n11 += 1
        elif x and not y:
            n10 += 1
        elif not x and y:
            n01 += 1
        else:
            n00 += 1
    po = (n11 + n00) / n
    p_a_yes = (n11 + n10) / n
    p_b_yes = (n11 + n01) / n
    pe = p_a_yes * p_b_yes + (1 - p_a_yes) * (1 - p_b_yes)
    if pe >= 1.0:
        kappa = 1.0 if po == 1.0 else 0.0
    else:
        kappa = (po - pe) / (1 - pe)
    return AgreementReport(
        kappa=kappa, n=n, observed_agreement=po, expected_agreement=pe,
        confusion={"yes_yes": n11, "yes_no": n10, "no_yes": n01, "no_no": n00},
    )


_PUNCT_SPLIT_RE = re.compile(r"([^\w\s])")


def tokenize_for_bleu(text: str) -> list[str]:
    """Pinned BLEU tokenization: lowercase, punctuation as standalone tokens."""
    return _PUNCT_SPLIT_RE.sub(r" \1 ", text.lower()).split()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus-level BLEU-4 with uniform weights, add-epsilon smoothing on
    zero n-gram matches, and brevity penalty exp(1 - r/c) when c <= r."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypotheses and references differ in length: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ValueError("empty corpus")
    hyp_tokens = [tokenize_for_bleu(h) for h in hypotheses]
    ref_tokens = [tokenize_for_bleu(r) for r in references]
    c = sum(len(t) for t in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    if c == 0:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        matches = 0
        total = 0
        for hyp, ref in zip(hyp_tokens, ref_tokens):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            matches += sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
            total += sum(hyp_counts.values())
        if total == 0:
            p_n = 1.0  # no n-grams of this order exist: vacuously precise
        elif matches == 0:
            p_n = BLEU_EPSILON / total
        else:
            p_n = matches / total
        log_sum += math.log(p_n)

    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


class HttpScorerClient:
    """Client for the scorer-service HTTP contract."""

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        try:
            resp = self.session.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ServiceError(f"scorer unreachable at {url}: {exc}") from exc
        if resp.status_code != 200:
            raise ServiceError(f"scorer returned {resp.status_code} for {url}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ServiceError(f"scorer returned non-JSON payload for {url}") from exc

    def embed(self, texts: Sequence[str], profile: str) -> list[list[float]]:
        body = self._post("/embed", {"texts": list(texts), "profile": profile})
        if "vectors" not in body or len(body["vectors"]) != len(texts):
            raise ServiceError("scorer /embed payload malformed")
        return body["vectors"]

    def score(self, texts: Sequence[str], kind: str) -> list[float]:
        body = self._post("/score", {"texts": list(texts), "kind": kind})
        if "scores" not in body or len(body["scores"]) != len(texts):
            raise ServiceError("scorer /score payload malformed")
        return body["scores"]


class MockScorerClient:
    """Deterministic in-process scorer: hash-seeded pseudo-embeddings and
    table-driven (or hash-derived) scores. Identical texts always map to
    identical vectors/scores."""

    def __init__(
        self,
        profiles: dict[str, EmbeddingProfile] | None = None,
        score_overrides: dict[str, dict[str, float]] | None = None,
        score_defaults: dict[str, float] | None = None,
    ):
        self.profiles = profiles or PROFILES
        self.score_overrides = score_overrides or {}
        self.score_defaults = score_defaults or {}

    def embed(self, texts: Sequence[str], profile: str) -> list[list[float]]:
        if profile not in self.profiles:
            raise ServiceError(f"unknown profile: {profile}")
        dim = self.profiles[profile].dimension
        return [self._vector(text, profile, dim) for text in texts]

    def score(self, texts: Sequence[str], kind: str) -> list[float]:
        if kind not in SCORE_KINDS:
            raise ServiceError(f"unknown kind: {kind}")
        return [self._score(text, kind) for text in texts]

    @staticmethod
    def _vector(text: str, profile: str, dim: int) -> list[float]:
        digest = hashlib.sha256(f"{profile}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        return rng.standard_normal(dim).tolist()

    def _score(self, text: str, kind: str) -> float:
        override = self.score_overrides.get(kind, {})
        if text in override:
            return override[text]
        if kind in self.score_defaults:
            return self.score_defaults[kind]
        digest = hashlib.sha256(f"{kind}\x00{text}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") / 2**64
