"""Source corpus loading, hate-label filtering, text normalization, dedup."""

from __future__ import annotations

import csv
import html
import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptySourceError, PolicyError, SchemaError

URL_RE = re.compile(r"(?<!\S)(?:https?://|www\.)\S+", re.IGNORECASE)
# the normalized tags themselves must survive re-normalization untouched
HANDLE_RE = re.compile(r"@(?!USER\b|NUMBER\b)\w+")
USER_RUN_RE = re.compile(r"@USER(?:\s+@USER)+")
PUNCT_RUN_RE = re.compile(r"([^\w\s])\1{3,}")
WS_RE = re.compile(r"\s+")

# entity decoding can reveal new tags/handles, so one pass is not enough
_MAX_NORMALIZE_PASSES = 50


@dataclass(frozen=True)
class RawPost:
    id: str
    source: str
    text: str
    label: str


@dataclass(frozen=True)
class CleanSample:
    id: str
    text: str
    source: str
    original_text: str

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "source": self.source, "text": self.text,
             "original_text": self.original_text},
            ensure_ascii=False, sort_keys=True,
        )


@dataclass(frozen=True)
class ReaderSpec:
    """Declares how to map one source file onto RawPost records."""

    format: str  # "delimited" | "records"
    path: str
    source: str
    columns: dict[str, str]  # logical name -> file column/key
    delimiter: str = ","

    def __post_init__(self):
        if self.format not in ("delimited", "records"):
            raise SchemaError(f"unsupported reader format: {self.format!r}")
        for key in ("id", "text", "label"):
            if key not in self.columns:
                raise SchemaError(f"reader spec for {self.path} missing column mapping: {key!r}")


@dataclass
class LoadResult:
    posts: list[RawPost]
    skipped: int = 0


def load_source(spec: ReaderSpec) -> LoadResult:
    """Read one source file into RawPost records; rows with empty text or id
    are skipped and counted."""
    path = Path(spec.path)
    if spec.format == "delimited":
        result = _load_delimited(path, spec)
    else:
        result = _load_records(path, spec)
    if not result.posts and result.skipped == 0:
        raise EmptySourceError(f"no parsable rows in {path}")
    return result


def _load_delimited(path: Path, spec: ReaderSpec) -> LoadResult:
    posts: list[RawPost] = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=spec.delimiter)
        header = reader.fieldnames or []
        for logical, column in spec.columns.items():
            if column not in header:
                raise SchemaError(
                    f"{path}: header is missing column {column!r} (mapped from {logical!r})")
        for row in reader:
            post = _row_to_post(row, spec)
            if post is None:
                skipped += 1
            else:
                posts.append(post)
    return LoadResult(posts, skipped)


def _load_records(path: Path, spec: ReaderSpec) -> LoadResult:
    posts: list[RawPost] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            for logical, key in spec.columns.items():
                if key not in row:
                    raise SchemaError(
                        f"{path}: line {lineno}: missing key {key!r} (mapped from {logical!r})")
            post = _row_to_post(row, spec)
            if post is None:
                skipped += 1
            else:
                posts.append(post)
    return LoadResult(posts, skipped)


def _row_to_post(row: dict, spec: ReaderSpec) -> RawPost | None:
    raw_id = row.get(spec.columns["id"])
    raw_text = row.get(spec.columns["text"])
    raw_label = row.get(spec.columns["label"])
    post_id = "" if raw_id is None else str(raw_id).strip()
    text = "" if raw_text is None else str(raw_text)
    label = "" if raw_label is None else str(raw_label)
    if not post_id or not text.strip():
        return None
    return RawPost(id=post_id, source=spec.source, text=text, label=label)


def merge_posts(batches: list[list[RawPost]]) -> list[RawPost]:
    """Concatenate batches, enforcing (source, id) uniqueness."""
    seen: set[tuple[str, str]] = set()
    merged: list[RawPost] = []
    for batch in batches:
        for post in batch:
            key = (post.source, post.id)
            if key in seen:
                raise SchemaError(f"duplicate (source, id): {key}")
            seen.add(key)
            merged.append(post)
    return merged


def filter_hate(posts: list[RawPost], label_policy: dict[str, set[str]]) -> list[RawPost]:
    """Keep posts whose label is in the allowed set for their source."""
    kept = []
    for post in posts:
        if post.source not in label_policy:
            raise PolicyError(f"no label policy for source {post.source!r}")
        if post.label in label_policy[post.source]:
            kept.append(post)
    return kept


def _normalize_pass(text: str) -> str:
    text = URL_RE.sub("", text)
    text = text.replace("<user>", "@USER").replace("<number>", "@NUMBER")
    text = HANDLE_RE.sub("@USER", text)
    text = USER_RUN_RE.sub("@USER", text)
    text = html.unescape(text)
    text = "".join(
        ch for ch in text
        if not (unicodedata.category(ch) in ("Cc", "Cf") and not ch.isspace())
    )
    text = PUNCT_RUN_RE.sub(r"\1\1\1", text)
    text = WS_RE.sub(" ", text)
    return text.strip()


def normalize(text: str) -> str:
    """Normalize one post: drop URLs, map handles and dataset tags to
    @USER/@NUMBER (collapsing consecutive @USER runs), decode HTML entities,
    strip control characters, bound punctuation runs at 3, collapse
    whitespace. Iterated to a fixed point so the output is stable under
    re-normalization. May return "" (degenerate); never raises.
    """
    current = text
    for _ in range(_MAX_NORMALIZE_PASSES):
        nxt = _normalize_pass(current)
        if nxt == current:
            return nxt
        current = nxt
    return current


@dataclass
class CleaningResult:
    samples: list[CleanSample]
    degenerate: int = 0


def to_clean_samples(posts: list[RawPost]) -> CleaningResult:
    """Normalize filtered posts; empty-after-normalization posts are flagged
    (dropped and counted), not raised."""
    samples: list[CleanSample] = []
    degenerate = 0
    for post in posts:
        text = normalize(post.text)
        if not text:
            degenerate += 1
            continue
        samples.append(CleanSample(
            id=f"{post.source}/{post.id}", text=text,
            source=post.source, original_text=post.text,
        ))
    return CleaningResult(samples, degenerate)


@dataclass
class DedupeResult:
    samples: list[CleanSample]
    duplicates: int = 0


def dedupe(samples: list[CleanSample]) -> DedupeResult:
    """Exact-match dedup on normalized text; first occurrence wins."""
    seen: set[str] = set()
    kept: list[CleanSample] = []
    duplicates = 0
    for sample in samples:
        if sample.text in seen:
            duplicates += 1
            continue
        seen.add(sample.text)
        kept.append(sample)
    return DedupeResult(kept, duplicates)


@dataclass
class IngestSummary:
    samples: list[CleanSample] = field(default_factory=list)
    loaded_per_source: dict[str, int] = field(default_factory=dict)
    filtered_per_source: dict[str, int] = field(default_factory=dict)
    skipped_rows: int = 0
    degenerate: int = 0
    duplicates: int = 0


def ingest_sources(specs: list[ReaderSpec], label_policy: dict[str, set[str]]) -> IngestSummary:
    """Full ingest: load each source, merge, filter, normalize, dedupe."""
    summary = IngestSummary()
    batches = []
    for spec in specs:
        result = load_source(spec)
        summary.skipped_rows += result.skipped
        summary.loaded_per_source[spec.source] = (
            summary.loaded_per_source.get(spec.source, 0) + len(result.posts))
        batches.append(result.posts)
    merged = merge_posts(batches)
    filtered = filter_hate(merged, label_policy)
    for post in filtered:
        summary.filtered_per_source[post.source] = (
            summary.filtered_per_source.get(post.source, 0) + 1)
    cleaned = to_clean_samples(filtered)
    summary.degenerate = cleaned.degenerate
    deduped = dedupe(cleaned.samples)
    summary.duplicates = deduped.duplicates
    summary.samples = deduped.samples
    return summary


def write_samples(samples: list[CleanSample], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(sample.to_json() + "\n")


def read_samples(path: Path | str) -> list[CleanSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            samples.append(CleanSample(
                id=row["id"], text=row["text"], source=row["source"],
                original_text=row.get("original_text", row["text"]),
            ))
    return samples
