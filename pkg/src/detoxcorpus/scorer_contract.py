"""Reusable conformance checks for the scorer-service wire contract.

Any scorer implementation (the in-repo mock or a live model server) must pass
these checks unchanged. A check driver is any callable
`post(path, payload) -> (status_code, json_body)`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import requests

PostFn = Callable[[str, dict], tuple[int, dict]]

EXPECTED_DIMS = {"validation": 768, "evaluation": 768}
KINDS = ("toxicity", "fluency", "style")


def http_poster(base_url: str, timeout: float = 30.0) -> PostFn:
    base = base_url.rstrip("/")

    def post(path: str, payload: dict) -> tuple[int, dict]:
        resp = requests.post(base + path, json=payload, timeout=timeout)
        return resp.status_code, resp.json()

    return post


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    return dot / (na * nb)


def check_scorer_contract(post: PostFn, dims: dict[str, int] | None = None) -> None:
    """Assert the full contract; raises AssertionError naming the failure."""
    dims = dims or EXPECTED_DIMS
    texts = ["the cat sat on the mat", "a completely different sentence"]

    for profile, dim in dims.items():
        status, body = post("/embed", {"texts": texts, "profile": profile})
        assert status == 200, f"/embed {profile}: expected 200, got {status}: {body}"
        assert set(body) == {"vectors"}, f"/embed {profile}: body keys {set(body)}"
        vectors = body["vectors"]
        assert len(vectors) == len(texts), f"/embed {profile}: {len(vectors)} vectors"
        for vec in vectors:
            assert len(vec) == dim, f"/embed {profile}: dim {len(vec)} != declared {dim}"
            assert all(isinstance(x, (int, float)) for x in vec)

        # identical texts embed identically: self-cosine 1.0
        status, body = post("/embed", {"texts": [texts[0], texts[0]], "profile": profile})
        assert status == 200
        same = body["vectors"]
        cos = _cosine(same[0], same[1])
        assert abs(cos - 1.0) <= 1e-6, f"/embed {profile}: self-cosine {cos}"

        # determinism across calls
        status, body2 = post("/embed", {"texts": [texts[0], texts[0]], "profile": profile})
        assert body2["vectors"][0] == same[0], f"/embed {profile}: non-deterministic"

    for kind in KINDS:
        status, body = post("/score", {"texts": texts, "kind": kind})
        assert status == 200, f"/score {kind}: expected 200, got {status}: {body}"
        assert set(body) == {"scores"}, f"/score {kind}: body keys {set(body)}"
        scores = body["scores"]
        assert len(scores) == len(texts), f"/score {kind}: {len(scores)} scores"
        for value in scores:
            assert isinstance(value, (int, float)) and 0.0 <= value <= 1.0, (
                f"/score {kind}: score {value} outside [0, 1]")
        status, body2 = post("/score", {"texts": texts, "kind": kind})
        assert body2["scores"] == scores, f"/score {kind}: non-deterministic"

    # empty batches are accepted
    status, body = post("/embed", {"texts": [], "profile": "validation"})
    assert status == 200 and body == {"vectors": []}, f"/embed empty: {status} {body}"
    status, body = post("/score", {"texts": [], "kind": "toxicity"})
    assert status == 200 and body == {"scores": []}, f"/score empty: {status} {body}"

    # malformed requests are rejected with a 4xx and an error body
    bad_requests = [
        ("/embed", {"texts": texts}),
        ("/embed", {"texts": texts, "profile": "nope"}),
        ("/embed", {"texts": "not-a-list", "profile": "validation"}),
        ("/score", {"texts": texts}),
        ("/score", {"texts": texts, "kind": "nope"}),
        ("/score", {"texts": [1, 2], "kind": "toxicity"}),
    ]
    for path, payload in bad_requests:
        status, body = post(path, payload)
        assert 400 <= status < 500, f"{path} {payload}: expected 4xx, got {status}"
        assert "error" in body, f"{path} {payload}: missing error body: {body}"
