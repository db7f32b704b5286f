"""The three annotation tasks: paraphrase generation (with a fallback prompt
for refusals), content-preservation check, and toxicity check."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError, VerdictError, VerdictParseError
from .ingest import CleanSample
from .llm_client import ChatClient, ChatRequest, ModelParams

TASKS = ("paraphrase", "paraphrase_fallback", "content_check", "toxicity_check")
TASK_SLOTS = {
    "paraphrase": ("text",),
    "paraphrase_fallback": ("text",),
    "content_check": ("toxic", "detox"),
    "toxicity_check": ("text",),
}

DEFAULT_REFUSAL_PATTERNS = (
    "sorry, i can",
    "i cannot assist",
    "i can't assist",
    "i'm unable to",
    "as an ai",
)

_SLOT_RE = re.compile(r"\{(text|toxic|detox)\}")


@dataclass(frozen=True)
class PromptTemplate:
    task: str
    version: str
    user_template: str
    system: str | None = None

    def __post_init__(self):
        if self.task not in TASK_SLOTS:
            raise ConfigError(f"unknown template task: {self.task!r}")
        for slot in TASK_SLOTS[self.task]:
            count = self.user_template.count("{" + slot + "}")
            if count != 1:
                raise ConfigError(
                    f"template {self.task}/{self.version}: slot {{{slot}}} "
                    f"appears {count} times, expected exactly 1")

    def render(self, **values: str) -> str:
        expected = set(TASK_SLOTS[self.task])
        if set(values) != expected:
            raise ConfigError(f"template {self.task} needs slots {expected}, got {set(values)}")
        # single-pass substitution: inserted text is never rescanned, so slot
        # markers inside sample text cannot corrupt the rendering
        return _SLOT_RE.sub(lambda m: values[m.group(1)], self.user_template)


def load_template(path: Path | str) -> PromptTemplate:
    raw = Path(path).read_text(encoding="utf-8")
    match = re.match(r"\A---\n(.*?)\n---\n(.*)\Z", raw, re.DOTALL)
    if not match:
        raise ConfigError(f"{path}: expected YAML front-matter delimited by ---")
    meta = yaml.safe_load(match.group(1)) or {}
    for key in ("task", "version"):
        if key not in meta:
            raise ConfigError(f"{path}: front-matter missing {key!r}")
    return PromptTemplate(
        task=meta["task"],
        version=str(meta["version"]),
        system=meta.get("system"),
        user_template=match.group(2).strip(),
    )


def load_templates(directory: Path | str | None = None) -> dict[str, PromptTemplate]:
    """Load the four task templates from a directory (defaults to the
    package's bundled prompts); keyed by task."""
    if directory is None:
        directory = resources.files("detoxcorpus") / "prompts"
    directory = Path(str(directory))
    templates: dict[str, PromptTemplate] = {}
    for path in sorted(directory.glob("*.txt")):
        template = load_template(path)
        templates[template.task] = template
    missing = [t for t in TASKS if t not in templates]
    if missing:
        raise ConfigError(f"prompt directory {directory} missing templates: {missing}")
    return templates


def detect_refusal(completion: str, patterns: tuple[str, ...] = DEFAULT_REFUSAL_PATTERNS) -> bool:
    """True iff the completion is empty or matches a refusal pattern,
    case-insensitively."""
    stripped = completion.strip()
    if not stripped:
        return True
    lowered = stripped.lower()
    return any(p in lowered for p in patterns)


@dataclass(frozen=True)
class Verdict:
    value: str  # "Yes" | "No"
    raw: str

    @property
    def is_yes(self) -> bool:
        return self.value == "Yes"


def parse_verdict(raw: str) -> Verdict:
    """Normalize a yes/no completion; raises VerdictParseError otherwise."""
    cleaned = raw.strip().lower().lstrip(" \t\n\"'.,:;!?-*()[]")
    if cleaned.startswith("yes"):
        return Verdict("Yes", raw)
    if cleaned.startswith("no"):
        return Verdict("No", raw)
    raise VerdictParseError(f"cannot parse verdict from {raw!r}")


_WRAPPING_QUOTES = [('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")]


def strip_wrapping(text: str) -> str:
    text = text.strip()
    changed = True
    while changed and len(text) >= 2:
        changed = False
        for left, right in _WRAPPING_QUOTES:
            if text.startswith(left) and text.endswith(right):
                text = text[len(left):-len(right)].strip()
                changed = True
                break
    return text


@dataclass(frozen=True)
class ParaphraseOutcome:
    refused: bool
    text: str  # cleaned paraphrase when not refused, else ""
    raw: str
    input_tokens: int = 0
    output_tokens: int = 0
    cached: bool = False


@dataclass(frozen=True)
class VerdictOutcome:
    verdict: Verdict
    input_tokens: int = 0
    output_tokens: int = 0
    cached: bool = False
    reasks: int = 0


class Annotator:
    """Binds prompt templates, model params, and a chat client into the three
    task operations. Stateless per call; safe for concurrent use."""

    def __init__(
        self,
        client: ChatClient,
        templates: dict[str, PromptTemplate],
        params: ModelParams = ModelParams(),
        params_by_task: dict[str, ModelParams] | None = None,
        refusal_patterns: tuple[str, ...] = DEFAULT_REFUSAL_PATTERNS,
    ):
        self.client = client
        self.templates = templates
        self.params = params
        self.params_by_task = params_by_task or {}
        self.refusal_patterns = tuple(p.lower() for p in refusal_patterns)

    def _params_for(self, task: str) -> ModelParams:
        return self.params_by_task.get(task, self.params)

    def _request(self, task: str, **slots: str) -> ChatRequest:
        template = self.templates[task]
        return ChatRequest(
            user=template.render(**slots),
            system=template.system,
            params=self._params_for(task),
        )

    def paraphrase(self, sample: CleanSample | str, variant: str = "primary") -> ParaphraseOutcome:
        """Task 1: rewrite toxic text. `variant` is "primary" or "fallback";
        empty completions count as refusals."""
        text = sample.text if isinstance(sample, CleanSample) else sample
        if not text:
            raise ValueError("sample text must be non-empty")
        task = "paraphrase" if variant == "primary" else "paraphrase_fallback"
        response = self.client.complete(self._request(task, text=text), task=task)
        cleaned = strip_wrapping(response.text)
        refused = detect_refusal(cleaned, self.refusal_patterns)
        return ParaphraseOutcome(
            refused=refused, text="" if refused else cleaned, raw=response.text,
            input_tokens=response.input_tokens, output_tokens=response.output_tokens,
            cached=response.cached)

    def content_check(self, toxic: str, detox: str) -> VerdictOutcome:
        """Task 2: does the rewrite preserve the meaning? Yes/No."""
        if not toxic or not detox:
            raise ValueError("both texts must be non-empty")
        return self._verdict_task("content_check", toxic=toxic, detox=detox)

    def toxicity_check(self, detox: str) -> VerdictOutcome:
        """Task 3: is the rewrite still toxic? Yes means discard."""
        if not detox:
            raise ValueError("detox text must be non-empty")
        return self._verdict_task("toxicity_check", text=detox)

    def _verdict_task(self, task: str, **slots: str) -> VerdictOutcome:
        request = self._request(task, **slots)
        response = self.client.complete(request, task=task)
        try:
            verdict = parse_verdict(response.text)
            return VerdictOutcome(
                verdict=verdict, input_tokens=response.input_tokens,
                output_tokens=response.output_tokens, cached=response.cached)
        except VerdictParseError:
            pass
        # one re-ask, bypassing the cache (a cached identical request would
        # replay the same malformed answer)
        retry = self.client.complete(request, task=task, use_cache=False)
        tokens_in = response.input_tokens + retry.input_tokens
        tokens_out = response.output_tokens + retry.output_tokens
        try:
            verdict = parse_verdict(retry.text)
            return VerdictOutcome(
                verdict=verdict, input_tokens=tokens_in, output_tokens=tokens_out,
                cached=response.cached, reasks=1)
        except VerdictParseError as exc:
            error = VerdictError(
                f"{task}: unparseable verdicts {response.text!r} then {retry.text!r}")
            error.input_tokens = tokens_in
            error.output_tokens = tokens_out
            raise error from exc
