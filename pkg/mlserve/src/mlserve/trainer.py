"""Fine-tune a seq2seq detoxifier on the pipeline's two-column export.

Defaults follow the reference recipe: lr 1e-5, batch size 8, up to 7 epochs
early-stopped on validation BLEU, weight decay 0.01. Without a pretrained
checkpoint a small randomly initialized encoder-decoder of the same family is
built over a corpus word vocabulary, which keeps the trainer runnable on CPU
and offline.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .backends import ScorerBackends, build_backends
from .bleu import corpus_bleu

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"


class ConfigError(RuntimeError):
    pass


@dataclass
class ModelSpec:
    pretrained: str | None = None  # e.g. facebook/bart-large
    d_model: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    max_positions: int = 128


@dataclass
class TrainerConfig:
    corpus_dir: str = "corpus"
    out_dir: str = "trained"
    learning_rate: float = 1e-5
    batch_size: int = 8
    max_epochs: int = 7
    weight_decay: float = 0.01
    selection_metric: str = "bleu"
    patience: int = 2
    seed: int = 13
    max_len: int = 64
    model: ModelSpec = field(default_factory=ModelSpec)
    models_config: str | None = None  # scorers for the final report

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("learning_rate, batch_size, max_epochs must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.selection_metric.lower() != "bleu":
            raise ConfigError(f"unsupported selection metric: {self.selection_metric!r}")


def load_trainer_config(path: str | Path) -> TrainerConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    model = ModelSpec(**(data.pop("model", None) or {}))
    return TrainerConfig(model=model, **data)


def load_pairs(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"split file not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"{path}: line {lineno}: expected 2 columns")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise ConfigError(f"split file is empty: {path}")
    return pairs


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class WordVocab:
    def __init__(self, tokens: list[str]):
        self.itos = [PAD, BOS, EOS, UNK] + sorted(set(tokens))
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        self.pad_id = self.stoi[PAD]
        self.bos_id = self.stoi[BOS]
        self.eos_id = self.stoi[EOS]
        self.unk_id = self.stoi[UNK]

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str, max_len: int) -> list[int]:
        ids = [self.stoi.get(tok, self.unk_id) for tok in tokenize(text)][: max_len - 1]
        return ids + [self.eos_id]

    def decode(self, ids) -> str:
        specials = {self.pad_id, self.bos_id, self.eos_id}
        return " ".join(self.itos[i] for i in ids
                        if 0 <= i < len(self.itos) and i not in specials)

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "WordVocab":
        vocab = cls.__new__(cls)
        vocab.itos = json.loads(path.read_text(encoding="utf-8"))
        vocab.stoi = {tok: i for i, tok in enumerate(vocab.itos)}
        vocab.pad_id = vocab.stoi[PAD]
        vocab.bos_id = vocab.stoi[BOS]
        vocab.eos_id = vocab.stoi[EOS]
        vocab.unk_id = vocab.stoi[UNK]
        return vocab


def _build_model(vocab: WordVocab, spec: ModelSpec):
    from transformers import BartConfig, BartForConditionalGeneration

    if spec.pretrained:
        return BartForConditionalGeneration.from_pretrained(spec.pretrained)
    config = BartConfig(
        vocab_size=len(vocab),
        d_model=spec.d_model,
        encoder_layers=spec.layers,
        decoder_layers=spec.layers,
        encoder_attention_heads=spec.heads,
        decoder_attention_heads=spec.heads,
        encoder_ffn_dim=spec.ffn_dim,
        decoder_ffn_dim=spec.ffn_dim,
        max_position_embeddings=spec.max_positions,
        pad_token_id=vocab.pad_id,
        bos_token_id=vocab.bos_id,
        eos_token_id=vocab.eos_id,
        decoder_start_token_id=vocab.bos_id,
        forced_eos_token_id=None,
    )
    return BartForConditionalGeneration(config)


def _pad_batch(rows: list[list[int]], pad_id: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    return torch.tensor([r + [pad_id] * (width - len(r)) for r in rows], dtype=torch.long)


def _batches(pairs, vocab, max_len, batch_size, rng=None):
    order = list(range(len(pairs)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        src = _pad_batch([vocab.encode(s, max_len) for s, _ in chunk], vocab.pad_id)
        tgt = _pad_batch([vocab.encode(t, max_len) for _, t in chunk], vocab.pad_id)
        labels = tgt.clone()
        labels[labels == vocab.pad_id] = -100
        yield src, tgt, labels


def _generate(model, vocab, texts, max_len, batch_size) -> list[str]:
    outputs = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            src = _pad_batch([vocab.encode(t, max_len) for t in chunk], vocab.pad_id)
            generated = model.generate(
                input_ids=src,
                attention_mask=(src != vocab.pad_id).long(),
                max_length=max_len,
                num_beams=1,
                do_sample=False,
            )
            outputs.extend(vocab.decode(row.tolist()) for row in generated)
    return outputs


@dataclass
class TrainOutcome:
    checkpoint_dir: Path
    report: dict
    history: list[dict]
    best_epoch: int


def train(config: TrainerConfig) -> TrainOutcome:
    """Train, early-stop on validation BLEU, decode the test split, and emit
    a four-metric report plus harness-format output files."""
    corpus = Path(config.corpus_dir)
    train_pairs = load_pairs(corpus / "splits" / "train.tsv")
    val_pairs = load_pairs(corpus / "splits" / "val.tsv")
    test_pairs = load_pairs(corpus / "splits" / "test.tsv")

    random.seed(config.seed)
    np.random.seed(config.seed)
    torch.manual_seed(config.seed)
    threads_before = torch.get_num_threads()
    torch.set_num_threads(1)  # bitwise-reproducible CPU reductions

    try:
        tokens = [tok for s, t in train_pairs + val_pairs for tok in
                  tokenize(s) + tokenize(t)]
        vocab = WordVocab(tokens)
        model = _build_model(vocab, config.model)
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=config.learning_rate,
            weight_decay=config.weight_decay)

        shuffle_rng = random.Random(config.seed)
        history: list[dict] = []
        best_bleu = -1.0
        best_epoch = -1
        best_state: dict | None = None
        epochs_since_best = 0

        for epoch in range(config.max_epochs):
            model.train()
            losses = []
            for src, _, labels in _batches(train_pairs, vocab, config.max_len,
                                           config.batch_size, rng=shuffle_rng):
                optimizer.zero_grad()
                out = model(input_ids=src,
                            attention_mask=(src != vocab.pad_id).long(),
                            labels=labels)
                loss = out.loss
                if not math.isfinite(loss.item()):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}: {loss.item()} "
                        f"(lr={config.learning_rate}, batch={config.batch_size})")
                loss.backward()
                optimizer.step()
                losses.append(loss.item())

            val_hyps = _generate(model, vocab, [s for s, _ in val_pairs],
                                 config.max_len, config.batch_size)
            val_bleu = corpus_bleu(val_hyps, [t for _, t in val_pairs])
            history.append({"epoch": epoch,
                            "train_loss": sum(losses) / len(losses),
                            "val_bleu": val_bleu})
            log.info("epoch %d: loss %.4f, val BLEU %.4f", epoch,
                     history[-1]["train_loss"], val_bleu)

            if val_bleu > best_bleu:
                best_bleu = val_bleu
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    break

        assert best_state is not None
        model.load_state_dict(best_state)

        out_dir = Path(config.out_dir)
        checkpoint_dir = out_dir / "checkpoint"
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        torch.save(model.state_dict(), checkpoint_dir / "model.pt")
        vocab.save(checkpoint_dir / "vocab.json")
        (checkpoint_dir / "trainer_state.json").write_text(
            json.dumps({
                "best_epoch": best_epoch, "best_val_bleu": best_bleu,
                "learning_rate": config.learning_rate,
                "batch_size": config.batch_size,
                "max_epochs": config.max_epochs,
                "weight_decay": config.weight_decay,
                "selection_metric": config.selection_metric,
                "patience": config.patience,
                "seed": config.seed,
            }, sort_keys=True, indent=2) + "\n", encoding="utf-8")

        # decode the test split and write harness-format files: the pipeline's
        # eval command can re-score these outputs independently
        test_sources = [s for s, _ in test_pairs]
        test_refs = [t for _, t in test_pairs]
        test_hyps = _generate(model, vocab, test_sources, config.max_len,
                              config.batch_size)
        with open(out_dir / "outputs.tsv", "w", encoding="utf-8") as fh:
            for src, hyp in zip(test_sources, test_hyps):
                fh.write(f"{src}\t{hyp}\n")
        with open(out_dir / "references.txt", "w", encoding="utf-8") as fh:
            for ref in test_refs:
                fh.write(ref + "\n")

        backends = build_backends(config.models_config) if config.models_config \
            else _offline_backends()
        report = four_metric_report(test_sources, test_hyps, test_refs, backends)
        (out_dir / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        (out_dir / "history.json").write_text(
            json.dumps(history, indent=2) + "\n", encoding="utf-8")
        return TrainOutcome(checkpoint_dir=checkpoint_dir, report=report,
                            history=history, best_epoch=best_epoch)
    finally:
        torch.set_num_threads(threads_before)


def _offline_backends() -> ScorerBackends:
    return build_backends({
        "embedders": {
            "validation": {"type": "hashed-ngram", "dim": 768, "seed": 1},
            "evaluation": {"type": "hashed-ngram", "dim": 768, "seed": 2},
        },
        "scorers": {
            "toxicity": {"type": "hashed", "seed": 3},
            "fluency": {"type": "hashed", "seed": 4},
            "style": {"type": "hashed", "seed": 5},
        },
    })


def four_metric_report(sources: list[str], outputs: list[str], references: list[str],
                       backends: ScorerBackends,
                       style_nontoxic_max: float = 0.5,
                       fluency_min: float = 0.5) -> dict:
    """Style accuracy, content preservation, fluency, BLEU over a decoded
    test split, scored with the configured backends."""
    n = len(outputs)
    style = backends.scorers["style"].score(outputs)
    fluency = backends.scorers["fluency"].score(outputs)
    src_vecs = backends.embedders["evaluation"].encode(sources)
    out_vecs = backends.embedders["evaluation"].encode(outputs)
    sims = []
    for a, b in zip(src_vecs, out_vecs):
        va, vb = np.asarray(a), np.asarray(b)
        sims.append(float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb))))
    return {
        "style_accuracy": sum(1 for s in style if s <= style_nontoxic_max) / n,
        "content_preservation": sum(sims) / n,
        "fluency": sum(1 for s in fluency if s > fluency_min) / n,
        "bleu": corpus_bleu(outputs, references),
        "n": n,
    }
