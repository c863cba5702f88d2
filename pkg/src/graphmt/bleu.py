"""Corpus-level BLEU-4 with clipped n-gram precisions and brevity penalty.

No smoothing: any zero n-gram precision zeroes the score, which keeps the
bundled hand-computed fixtures exact.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import EvaluationError


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4):
    """BLEU as a percentage in [0, 100] over tokenized sentence pairs."""
    if len(hypotheses) != len(references):
        raise EvaluationError(f"hypothesis/reference line counts differ: "
                              f"{len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise EvaluationError("nothing to score: zero sentences")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    brevity = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_precision)
