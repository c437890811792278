"""Corpus BLEU-4, ROUGE-L and an exact-match METEOR variant."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .autodiff import ContractError

BLEU_SMOOTHING = "add-1 on numerator and denominator for n >= 2"
ROUGE_BETA2 = 1.2


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(references: Sequence[Sequence[str]], candidates: Sequence[Sequence[str]]) -> float:
    """Corpus-level BLEU-4 with one reference per candidate.

    Clipped n-gram matches and candidate n-gram totals are summed over the
    whole corpus before the precisions are formed.  Orders 2-4 get add-one
    smoothing; a zero unigram precision gives 0.
    """
    if len(references) != len(candidates):
        raise ContractError("%d references for %d candidates" % (len(references), len(candidates)))
    if not references:
        raise ContractError("BLEU of an empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    ref_len = cand_len = 0
    for ref, cand in zip(references, candidates):
        ref_len += len(ref)
        cand_len += len(cand)
        for n in range(1, 5):
            c = _ngrams(cand, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(k, r[g]) for g, k in c.items())
            totals[n - 1] += sum(c.values())
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, 4):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p / 4)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(reference: Sequence[str], candidate: Sequence[str], beta2: float = ROUGE_BETA2) -> float:
    """LCS F-measure ``(1 + b2) P R / (R + b2 P)``."""
    if not reference:
        raise ContractError("ROUGE-L needs a nonempty reference")
    if not candidate:
        return 0.0
    lcs = lcs_length(reference, candidate)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta2) * p * r / (r + beta2 * p)


def _align(reference: Sequence[str], candidate: Sequence[str]) -> list[tuple[int, int]]:
    # each candidate word takes the earliest unused reference position holding it
    used = set()
    pairs = []
    for i, w in enumerate(candidate):
        for j, r in enumerate(reference):
            if j not in used and r == w:
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def meteor_lite(reference: Sequence[str], candidate: Sequence[str]) -> float:
    """METEOR with exact unigram matching only (no stems, no synonyms)."""
    if not reference:
        raise ContractError("METEOR needs a nonempty reference")
    pairs = _align(reference, candidate)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)


def corpus_scores(references, candidates) -> dict:
    return {
        "bleu4": bleu4(references, candidates),
        "rouge_l": sum(rouge_l(r, c) for r, c in zip(references, candidates)) / len(references),
        "meteor_lite": sum(meteor_lite(r, c) for r, c in zip(references, candidates)) / len(references),
    }
