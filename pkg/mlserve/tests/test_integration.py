"""Cross-package surfaces: the trainer's output files feed the pipeline's
eval command, scored over HTTP by this package's live service."""

import json
import subprocess
import sys

import pytest

from mlserve.backends import build_backends
from mlserve.service import BackgroundServer
from mlserve.trainer import ModelSpec, TrainerConfig, train

from .test_trainer import MODELS_OFFLINE, _toy_corpus


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("integration")
    _toy_corpus(root / "corpus")
    config = TrainerConfig(
        corpus_dir=str(root / "corpus"),
        out_dir=str(root / "trained"),
        max_epochs=1,
        seed=13,
        max_len=24,
        model=ModelSpec(d_model=32, layers=1, heads=2, ffn_dim=64),
        models_config=str(MODELS_OFFLINE),
    )
    outcome = train(config)
    return root, outcome


def test_eval_command_consumes_trainer_outputs(trained):
    root, outcome = trained
    out_dir = root / "trained"
    eval_dir = root / "evald"
    backends = build_backends(MODELS_OFFLINE)
    with BackgroundServer(backends) as server:
        proc = subprocess.run(
            [sys.executable, "-m", "detoxcorpus.cli", "eval",
             "--outputs", str(out_dir / "outputs.tsv"),
             "--references", str(out_dir / "references.txt"),
             "--out", str(eval_dir),
             "--scorer-base", server.base_url],
            capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr

    report = json.loads((eval_dir / "report.json").read_text())
    for metric in ("style_accuracy", "content_preservation", "fluency", "bleu"):
        assert 0.0 <= report[metric] <= 1.0, metric
    # same backends, same pinned metric definitions: reports agree
    for metric in ("style_accuracy", "content_preservation", "fluency", "bleu"):
        assert report[metric] == pytest.approx(outcome.report[metric], abs=1e-9), metric
