import math
from pathlib import Path

import pytest
import requests

# shared conformance checks published by the pipeline package: the live
# service must pass them exactly as the offline mock does
from detoxcorpus.scorer_contract import check_scorer_contract, http_poster

from mlserve.backends import (
    HashedNgramEmbedder,
    HashedScoreBackend,
    StartupError,
    build_backends,
)
from mlserve.service import BackgroundServer

MODELS_OFFLINE = Path(__file__).resolve().parents[1] / "models.offline.yaml"


@pytest.fixture(scope="module")
def live_server():
    backends = build_backends(MODELS_OFFLINE)
    with BackgroundServer(backends) as server:
        yield server


class TestContractConformance:
    def test_shared_contract_suite(self, live_server):
        check_scorer_contract(http_poster(live_server.base_url))

    def test_embed_self_cosine(self, live_server):
        resp = requests.post(live_server.base_url + "/embed",
                             json={"texts": ["same text", "same text"],
                                   "profile": "evaluation"},
                             timeout=10)
        assert resp.status_code == 200
        a, b = resp.json()["vectors"]
        dot = sum(x * y for x, y in zip(a, b))
        norm = math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(x * x for x in b))
        assert abs(dot / norm - 1.0) <= 1e-6

    def test_error_statuses_match_mock_shape(self, live_server):
        resp = requests.post(live_server.base_url + "/score",
                             json={"texts": ["x"], "kind": "bogus"}, timeout=10)
        assert resp.status_code == 400
        assert "error" in resp.json()


class TestBackends:
    def test_hashed_ngram_similarity_orders_sensibly(self):
        embedder = HashedNgramEmbedder(dim=256, seed=0)
        base, near, far = embedder.encode([
            "the quick brown fox", "the quick brown foxes", "unrelated words here"])

        def cos(a, b):
            return sum(x * y for x, y in zip(a, b))  # vectors are unit-norm

        assert cos(base, near) > cos(base, far)

    def test_hashed_scores_deterministic_in_range(self):
        backend = HashedScoreBackend(seed=9)
        scores = backend.score(["a", "b", "a"])
        assert scores[0] == scores[2]
        assert all(0.0 <= s < 1.0 for s in scores)

    def test_incomplete_models_config_is_startup_error(self):
        with pytest.raises(StartupError, match="incomplete"):
            build_backends({"embedders": {}, "scorers": {}})

    def test_unknown_backend_type_is_startup_error(self):
        with pytest.raises(StartupError):
            build_backends({
                "embedders": {"validation": {"type": "nope"},
                              "evaluation": {"type": "hashed-ngram"}},
                "scorers": {"toxicity": {}, "fluency": {}, "style": {}},
            })
