import json
import random

import pytest

from detoxcorpus.errors import (
    MockScriptError,
    ProtocolError,
    RequestError,
    TransportError,
)
from detoxcorpus.llm_client import (
    ChatClient,
    ChatRequest,
    ModelParams,
    MockRule,
    OpenAIChatBackend,
    Pricing,
    ResponseCache,
    RetryPolicy,
    ScriptedMockBackend,
    SlidingWindowRateLimiter,
    UsageLedger,
    cache_key,
    estimate_cost,
    load_mock_script,
)

FAST_RETRY = RetryPolicy(attempts=5, base_delay=0.0, jitter=0.0)


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, dt):
        self.now += dt


def _client(rules, **kwargs):
    backend = ScriptedMockBackend(rules)
    kwargs.setdefault("retry", FAST_RETRY)
    kwargs.setdefault("sleep", lambda dt: None)
    return ChatClient(backend, **kwargs), backend


class TestModelParams:
    def test_defaults(self):
        params = ModelParams()
        assert params.model_name == "gpt-4o-mini"
        assert params.max_tokens == 256
        assert params.temperature == 0.6

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelParams(max_tokens=0)
        with pytest.raises(ValueError):
            ModelParams(temperature=2.5)

    def test_empty_user_rejected(self):
        with pytest.raises(ValueError):
            ChatRequest(user="")


class TestScriptedMock:
    def test_exact_and_cache(self):
        client, _ = _client([MockRule(exact="rephrase X", response="Y")])
        req = ChatRequest(user="rephrase X")
        first = client.complete(req)
        second = client.complete(req)
        assert first.text == "Y" and not first.cached
        assert second.cached and second.text == first.text
        assert client.live_completions == 1
        assert client.cache_hits == 1

    def test_fail_twice_then_succeed(self):
        rules = [MockRule(contains="x", fail=429, times=2),
                 MockRule(contains="x", response="ok")]
        client, backend = _client(rules)
        response = client.complete(ChatRequest(user="x"))
        assert response.text == "ok"
        assert len(backend.dispatch_log) == 3
        assert [entry["ok"] for entry in backend.dispatch_log] == [False, False, True]

    def test_retry_exhaustion_carries_status(self):
        client, _ = _client([MockRule(fail=503)], retry=RetryPolicy(2, 0.0, 0.0))
        with pytest.raises(TransportError) as err:
            client.complete(ChatRequest(user="x"))
        assert err.value.status == 503
        assert err.value.attempts == 2

    def test_non_retryable_4xx_raises_immediately(self):
        client, backend = _client([MockRule(fail=400)])
        with pytest.raises(RequestError):
            client.complete(ChatRequest(user="x"))
        assert len(backend.dispatch_log) == 1

    def test_unmatched_request_is_protocol_error(self):
        client, _ = _client([MockRule(exact="something else", response="y")])
        with pytest.raises(MockScriptError):
            client.complete(ChatRequest(user="x"))

    def test_pattern_matcher(self):
        client, _ = _client([MockRule(pattern=r"rewrite.*S3", response="ok")])
        assert client.complete(ChatRequest(user="rewrite this\nS3 text")).text == "ok"

    def test_script_file_round_trip(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps([
            {"contains": "a", "response": "first"},
            {"pattern": "b+", "fail": 429, "times": 1},
        ]))
        rules = load_mock_script(path)
        assert rules[0].contains == "a"
        assert rules[1].fail == 429 and rules[1].times == 1

    def test_timeout_code_is_retryable(self):
        rules = [MockRule(fail="timeout", times=1), MockRule(response="ok")]
        client, _ = _client(rules)
        assert client.complete(ChatRequest(user="x")).text == "ok"


class TestCache:
    def test_cache_returns_identical_text(self):
        client, _ = _client([MockRule(response="exact bytes é")])
        req = ChatRequest(user="q")
        first = client.complete(req)
        second = client.complete(req)
        assert second.text == first.text
        assert second.input_tokens == first.input_tokens

    def test_key_varies_with_params(self):
        req_a = ChatRequest(user="q", params=ModelParams(temperature=0.0))
        req_b = ChatRequest(user="q", params=ModelParams(temperature=0.6))
        assert cache_key("m", req_a) != cache_key("m", req_b)
        assert cache_key("m", req_a) == cache_key("m", req_a)

    def test_persisted_cache_survives_restart(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        client, _ = _client([MockRule(response="v1")], cache=ResponseCache(path))
        client.complete(ChatRequest(user="q"))
        # a fresh client over the same file serves the cached answer without
        # touching its (empty) script
        client2, backend2 = _client([], cache=ResponseCache(path))
        response = client2.complete(ChatRequest(user="q"))
        assert response.cached and response.text == "v1"
        assert backend2.dispatch_log == []

    def test_use_cache_false_bypasses(self):
        client, backend = _client([MockRule(response="v")])
        client.complete(ChatRequest(user="q"))
        client.complete(ChatRequest(user="q"), use_cache=False)
        assert len(backend.dispatch_log) == 2


class TestLedger:
    def test_additivity_over_random_sequences(self):
        rng = random.Random(100)
        for _ in range(100):
            n = rng.randint(1, 12)
            rules = [MockRule(exact=f"prompt {i} " + "w " * rng.randint(0, 9),
                              response="r " * rng.randint(0, 9)) for i in range(n)]
            client, _ = _client(list(rules))
            expected_in = expected_out = 0
            for rule in rules:
                response = client.complete(ChatRequest(user=rule.exact),
                                           task=rng.choice("abc"))
                if not response.cached:
                    expected_in += response.input_tokens
                    expected_out += response.output_tokens
            assert client.ledger.total_input_tokens == expected_in
            assert client.ledger.total_output_tokens == expected_out
            per_task = client.ledger.to_dict()["per_task"]
            assert sum(v[0] for v in per_task.values()) == expected_in
            assert sum(v[1] for v in per_task.values()) == expected_out

    def test_cached_calls_do_not_double_bill(self):
        client, _ = _client([MockRule(response="three token reply")])
        first = client.complete(ChatRequest(user="q"))
        client.complete(ChatRequest(user="q"))
        assert client.ledger.total_output_tokens == first.output_tokens


class TestEstimateCost:
    def test_reference_input_figure(self):
        ledger = UsageLedger()
        ledger.add("paraphrase", 19_153_000, 0)
        cost = estimate_cost(ledger, Pricing(input_per_million=0.15, output_per_million=0.60))
        assert cost.rounded == pytest.approx(2.873)

    def test_zero_tokens(self):
        assert estimate_cost(UsageLedger(), Pricing()).rounded == 0.0

    def test_hand_arithmetic(self):
        ledger = UsageLedger()
        ledger.add("t", 2_000_000, 1_000_000)
        cost = estimate_cost(ledger, Pricing(input_per_million=0.50, output_per_million=1.00))
        assert cost.raw == pytest.approx(2.0)
        assert cost.rounded == 2.0

    def test_negative_price_rejected(self):
        with pytest.raises(ValueError):
            Pricing(input_per_million=-0.1)


class TestRateLimiter:
    def test_sliding_window_never_exceeds_rate(self):
        clock = FakeClock()
        limiter = SlidingWindowRateLimiter(5, clock=clock, sleep=clock.sleep)
        backend = ScriptedMockBackend([MockRule(response="ok")], clock=clock)
        client = ChatClient(backend, retry=FAST_RETRY, limiter=limiter,
                            sleep=clock.sleep)
        for i in range(50):
            client.complete(ChatRequest(user=f"call {i}"))
        times = [entry["time"] for entry in backend.dispatch_log]
        assert len(times) == 50
        for anchor in times:
            in_window = sum(1 for t in times if anchor <= t < anchor + 1.0)
            assert in_window <= 5
            trailing = sum(1 for t in times if anchor - 1.0 < t <= anchor)
            assert trailing <= 5

    def test_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            SlidingWindowRateLimiter(0)


class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload or {})

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class _FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


def _completion_payload(text="hi", prompt_tokens=7, completion_tokens=3):
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class TestOpenAIBackend:
    def test_parses_completion_and_usage(self):
        session = _FakeSession([_FakeResponse(200, _completion_payload())])
        backend = OpenAIChatBackend("http://api.test/v1", "key", session=session)
        client = ChatClient(backend, retry=FAST_RETRY, sleep=lambda dt: None)
        response = client.complete(ChatRequest(user="hello", system="sys"))
        assert response.text == "hi"
        assert (response.input_tokens, response.output_tokens) == (7, 3)
        sent = session.calls[0]["json"]
        assert sent["model"] == "gpt-4o-mini"
        assert sent["max_tokens"] == 256
        assert sent["temperature"] == 0.6
        assert sent["messages"][0] == {"role": "system", "content": "sys"}

    def test_empty_credential_fails_before_network(self):
        session = _FakeSession([])
        backend = OpenAIChatBackend("http://api.test/v1", "", session=session)
        client = ChatClient(backend, retry=FAST_RETRY, sleep=lambda dt: None)
        with pytest.raises(RequestError, match="credential"):
            client.complete(ChatRequest(user="hello"))
        assert session.calls == []

    def test_retries_on_429_then_succeeds(self):
        session = _FakeSession([
            _FakeResponse(429), _FakeResponse(502),
            _FakeResponse(200, _completion_payload("done")),
        ])
        backend = OpenAIChatBackend("http://api.test/v1", "key", session=session)
        client = ChatClient(backend, retry=FAST_RETRY, sleep=lambda dt: None)
        assert client.complete(ChatRequest(user="q")).text == "done"
        assert len(session.calls) == 3

    def test_malformed_payload_is_protocol_error(self):
        session = _FakeSession([_FakeResponse(200, {"nope": 1})])
        backend = OpenAIChatBackend("http://api.test/v1", "key", session=session)
        client = ChatClient(backend, retry=FAST_RETRY, sleep=lambda dt: None)
        with pytest.raises(ProtocolError):
            client.complete(ChatRequest(user="q"))

    def test_plain_4xx_is_request_error(self):
        session = _FakeSession([_FakeResponse(403, {}, text="forbidden")])
        backend = OpenAIChatBackend("http://api.test/v1", "key", session=session)
        client = ChatClient(backend, retry=FAST_RETRY, sleep=lambda dt: None)
        with pytest.raises(RequestError, match="403"):
            client.complete(ChatRequest(user="q"))
