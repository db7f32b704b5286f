"""Corpus BLEU-4 used for model selection and the final report.

Pinned definition (matching the pipeline harness so numbers are comparable):
lowercase, punctuation split into standalone tokens, uniform 1/4 weights,
epsilon=1e-9 on zero n-gram matches, brevity penalty exp(1-r/c) when c <= r.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Sequence

EPSILON = 1e-9
_PUNCT_RE = re.compile(r"([^\w\s])")


def tokenize(text: str) -> list[str]:
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    if len(hypotheses) != len(references) or not hypotheses:
        raise ValueError("aligned non-empty corpora required")
    hyp_tokens = [tokenize(h) for h in hypotheses]
    ref_tokens = [tokenize(r) for r in references]
    c = sum(len(t) for t in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        matches = total = 0
        for hyp, ref in zip(hyp_tokens, ref_tokens):
            hyp_counts = Counter(tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1))
            ref_counts = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
            matches += sum(min(v, ref_counts[g]) for g, v in hyp_counts.items())
            total += sum(hyp_counts.values())
        if total == 0:
            p_n = 1.0
        elif matches == 0:
            p_n = EPSILON / total
        else:
            p_n = matches / total
        log_sum += math.log(p_n)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)
