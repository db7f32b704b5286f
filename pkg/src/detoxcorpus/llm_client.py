"""Chat-completion client for any OpenAI-compatible endpoint, plus a
deterministic scripted mock for offline runs. Handles retries, rate limiting,
response caching, and token metering; refusal semantics live in `annotator`.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests
import yaml

from .errors import (
    MockScriptError,
    ProtocolError,
    RequestError,
    TransientError,
    TransportError,
)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ModelParams:
    model_name: str = "gpt-4o-mini"
    max_tokens: int = 256
    temperature: float = 0.6

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str | None = None
    params: ModelParams = ModelParams()

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")


@dataclass
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    cached: bool = False
    latency_ms: int = 0


class UsageLedger:
    """Thread-safe token accounting with a per-task breakdown."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total_input_tokens = 0
        self.total_output_tokens = 0
        self.per_task: dict[str, tuple[int, int]] = {}

    def add(self, task: str, input_tokens: int, output_tokens: int) -> None:
        with self._lock:
            self.total_input_tokens += input_tokens
            self.total_output_tokens += output_tokens
            prev = self.per_task.get(task, (0, 0))
            self.per_task[task] = (prev[0] + input_tokens, prev[1] + output_tokens)

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "total_input_tokens": self.total_input_tokens,
                "total_output_tokens": self.total_output_tokens,
                "per_task": {k: list(v) for k, v in sorted(self.per_task.items())},
            }


@dataclass(frozen=True)
class Pricing:
    input_per_million: float = 0.15
    output_per_million: float = 0.60

    def __post_init__(self):
        if self.input_per_million < 0 or self.output_per_million < 0:
            raise ValueError("prices must be nonnegative")


@dataclass(frozen=True)
class CostEstimate:
    raw: float
    rounded: float


def estimate_cost(ledger, pricing: Pricing) -> CostEstimate:
    """Dollar cost of a usage ledger; `rounded` is the 3-decimal display value."""
    if isinstance(ledger, UsageLedger):
        input_tokens = ledger.total_input_tokens
        output_tokens = ledger.total_output_tokens
    else:
        input_tokens, output_tokens = ledger
    raw = (input_tokens / 1e6) * pricing.input_per_million + (
        output_tokens / 1e6) * pricing.output_per_million
    return CostEstimate(raw=raw, rounded=round(raw, 3))


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 1.0
    jitter: float = 0.2

    def delay(self, attempt: int, rng: random.Random) -> float:
        base = self.base_delay * (2 ** attempt)
        return base * (1.0 + rng.uniform(-self.jitter, self.jitter))


class SlidingWindowRateLimiter:
    """Blocks dispatches so no sliding `window`-second interval ever sees more
    than `rate` of them. (A token bucket would allow up to 2x rate in a
    window straddling a refill, so we track actual dispatch times.)"""

    def __init__(self, rate: float, window: float = 1.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = int(rate)
        self.window = window
        self.clock = clock
        self.sleep = sleep
        self._times: list[float] = []
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock()
                self._times = [t for t in self._times if now - t < self.window]
                if len(self._times) < self.rate:
                    self._times.append(now)
                    return
                self.sleep(self.window - (now - self._times[0]))


class ResponseCache:
    """In-memory cache with an optional append-only JSONL backing file."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._entries[row["key"]] = row

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, text: str, input_tokens: int, output_tokens: int) -> None:
        row = {"key": key, "text": text,
               "input_tokens": input_tokens, "output_tokens": output_tokens}
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = row
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def cache_key(backend_id: str, req: ChatRequest) -> str:
    payload = json.dumps(
        [backend_id, req.params.model_name, req.params.max_tokens,
         req.params.temperature, req.system or "", req.user],
        ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class BackendResult:
    text: str
    input_tokens: int
    output_tokens: int


class OpenAIChatBackend:
    """Live backend speaking the OpenAI-compatible chat-completions contract."""

    def __init__(self, base_url: str, api_key: str, timeout: float = 60.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self._session = session

    @property
    def backend_id(self) -> str:
        return f"openai:{self.base_url}"

    def send(self, req: ChatRequest) -> BackendResult:
        if not self.api_key:
            raise RequestError("no API credential configured (set DETOX_API_KEY)")
        if self._session is None:
            self._session = requests.Session()
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        body = {
            "model": req.params.model_name,
            "messages": messages,
            "max_tokens": req.params.max_tokens,
            "temperature": req.params.temperature,
        }
        try:
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise TransientError(f"timeout after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise TransientError(f"connection failure: {exc}") from exc
        if resp.status_code in RETRYABLE_STATUSES:
            raise TransientError(f"backend returned {resp.status_code}", status=resp.status_code)
        if resp.status_code != 200:
            raise RequestError(f"backend returned {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage") or {}
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion payload: {exc}") from exc
        return BackendResult(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
        )


def _approx_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class MockRule:
    response: str | None = None
    fail: int | str | None = None  # HTTP status or "timeout"
    exact: str | None = None
    contains: str | None = None
    pattern: str | None = None
    times: int | None = None  # consumable rule when set
    _regex: re.Pattern | None = field(default=None, repr=False)

    def matches(self, user_text: str) -> bool:
        if self.times is not None and self.times <= 0:
            return False
        if self.exact is not None:
            return user_text == self.exact
        if self.contains is not None:
            return self.contains in user_text
        if self.pattern is not None:
            if self._regex is None:
                self._regex = re.compile(self.pattern, re.DOTALL)
            return self._regex.search(user_text) is not None
        return True  # bare rule acts as catch-all


def load_mock_script(path: Path | str) -> list[MockRule]:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, list):
        raise MockScriptError(f"mock script {path} must be a list of rules")
    rules = []
    for entry in raw:
        rules.append(MockRule(
            response=entry.get("response"),
            fail=entry.get("fail"),
            exact=entry.get("exact"),
            contains=entry.get("contains"),
            pattern=entry.get("pattern"),
            times=entry.get("times"),
        ))
    return rules


class ScriptedMockBackend:
    """Offline backend answering from an ordered rule list. Every dispatch is
    logged with its clock time so tests can assert rate limits."""

    def __init__(self, rules: list[MockRule], clock: Callable[[], float] = time.monotonic):
        self.rules = rules
        self.clock = clock
        self.dispatch_log: list[dict] = []
        self._lock = threading.Lock()

    @property
    def backend_id(self) -> str:
        return "mock"

    def send(self, req: ChatRequest) -> BackendResult:
        with self._lock:
            rule = next((r for r in self.rules if r.matches(req.user)), None)
            if rule is not None and rule.times is not None:
                rule.times -= 1
            self.dispatch_log.append({
                "time": self.clock(),
                "user": req.user,
                "ok": rule is not None and rule.fail is None,
            })
        if rule is None:
            raise MockScriptError(f"no mock rule matches request: {req.user[:120]!r}")
        if rule.fail is not None:
            if rule.fail == "timeout":
                raise TransientError("scripted timeout")
            status = int(rule.fail)
            if status in RETRYABLE_STATUSES:
                raise TransientError(f"scripted {status}", status=status)
            raise RequestError(f"scripted {status}")
        text = rule.response or ""
        prompt = (req.system or "") + " " + req.user
        return BackendResult(
            text=text,
            input_tokens=_approx_tokens(prompt),
            output_tokens=_approx_tokens(text),
        )


class ChatClient:
    """Shared completion client: cache -> rate limit -> retry loop -> ledger."""

    def __init__(
        self,
        backend,
        retry: RetryPolicy = RetryPolicy(),
        limiter: SlidingWindowRateLimiter | None = None,
        cache: ResponseCache | None = None,
        ledger: UsageLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.backend = backend
        self.retry = retry
        self.limiter = limiter
        self.cache = cache if cache is not None else ResponseCache()
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.live_completions = 0
        self.cache_hits = 0
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest, task: str = "default",
                 use_cache: bool = True) -> ChatResponse:
        key = cache_key(self.backend.backend_id, req)
        if use_cache:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return ChatResponse(
                    text=hit["text"], input_tokens=hit["input_tokens"],
                    output_tokens=hit["output_tokens"], cached=True, latency_ms=0)

        last_exc: TransientError | None = None
        for attempt in range(self.retry.attempts):
            if attempt > 0:
                self.sleep(self.retry.delay(attempt - 1, self.rng))
            if self.limiter is not None:
                self.limiter.acquire()
            started = time.monotonic()
            try:
                result = self.backend.send(req)
            except TransientError as exc:
                last_exc = exc
                continue
            latency_ms = int((time.monotonic() - started) * 1000)
            self.ledger.add(task, result.input_tokens, result.output_tokens)
            self.cache.put(key, result.text, result.input_tokens, result.output_tokens)
            with self._lock:
                self.live_completions += 1
            return ChatResponse(
                text=result.text, input_tokens=result.input_tokens,
                output_tokens=result.output_tokens, cached=False, latency_ms=latency_ms)
        assert last_exc is not None
        raise TransportError(
            f"gave up after {self.retry.attempts} attempts: {last_exc}",
            status=last_exc.status, attempts=self.retry.attempts)
