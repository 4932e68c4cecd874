"""Corpus-level BLEU-4 over whitespace tokens (or any hashable tokens)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

SMOOTH_EPS = 1e-9
MAX_ORDER = 4


@dataclass(frozen=True)
class BleuStats:
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    hyp_len: int
    ref_len: int

    @property
    def precisions(self) -> tuple[float, ...]:
        """Clipped precisions for every order the hypotheses are long enough to have.

        Orders with no hypothesis n-grams at all are left out (effective
        order), so a corpus of short sentences can still score 100 against
        itself. A zero match count is replaced by SMOOTH_EPS.
        """
        return tuple((m if m > 0 else SMOOTH_EPS) / t
                     for m, t in zip(self.matches, self.totals) if t > 0)

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len > self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    @property
    def score(self) -> float:
        bp = self.brevity_penalty
        if bp == 0.0 or not self.precisions:
            return 0.0
        log_p = sum(math.log(p) for p in self.precisions) / len(self.precisions)
        return 100.0 * bp * math.exp(log_p)


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def bleu_stats(hypotheses: Sequence, references: Sequence, max_order: int = MAX_ORDER) -> BleuStats:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("BLEU needs at least one sentence pair")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for i, (h, r) in enumerate(zip(hypotheses, references)):
        h, r = _tokens(h), _tokens(r)
        if not r:
            raise ValueError(f"empty reference at index {i}")
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(tuple(matches), tuple(totals), hyp_len, ref_len)


def corpus_bleu(hypotheses: Sequence, references: Sequence) -> float:
    """BLEU-4 in [0, 100]: geometric mean of clipped n-gram precisions times brevity penalty.

    Sentences are strings (split on whitespace) or token sequences.

    >>> round(corpus_bleu(["a b c d"], ["a b c d e"]), 6)
    77.880078
    """
    return bleu_stats(hypotheses, references).score
