"""Caption/answer quality metrics: BLEU-n, ROUGE-L, METEOR (exact matches only) and CIDEr.

Every function takes pre-tokenised word lists; :func:`nlg_report` handles
tokenisation and corpus aggregation.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..data.vocab import split_words

log = logging.getLogger(__name__)

Tokens = Sequence[str]

ROUGE_BETA2 = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, references: Sequence[Tokens]) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def _clipped(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[int, int]:
    cand = ngrams(candidate, n)
    best: Counter = Counter()
    for ref in references:
        best |= ngrams(ref, n)
    return sum(min(c, best[g]) for g, c in cand.items()), max(len(candidate) - n + 1, 0)


def _bleu_from_stats(matches, totals, c: int, r: int) -> float:
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def bleu(candidate: Tokens, references: Sequence[Tokens], n: int = 4) -> float:
    """Sentence BLEU-n: geometric mean of clipped precisions times the brevity penalty."""
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be between 1 and 4")
    if not references:
        raise ValueError("need at least one reference")
    if not candidate:
        return 0.0
    stats = [_clipped(candidate, references, k) for k in range(1, n + 1)]
    return _bleu_from_stats([m for m, _ in stats], [t for _, t in stats], len(candidate),
                            _closest_ref_len(len(candidate), references))


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], n: int = 4) -> float:
    """Corpus BLEU-n with statistics summed over all segments before the geometric mean."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matches, totals = [0] * n, [0] * n
    c = r = 0
    for cand, refs in zip(candidates, references):
        for k in range(1, n + 1):
            m, t = _clipped(cand, refs, k)
            matches[k - 1] += m
            totals[k - 1] += t
        c += len(cand)
        r += _closest_ref_len(len(cand), refs)
    return _bleu_from_stats(matches, totals, c, r)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, references, beta2: float = ROUGE_BETA2) -> float:
    """LCS F-measure; with several references the best precision and recall are combined."""
    if references and isinstance(references[0], str):
        references = [references]
    if not candidate or not references:
        return 0.0
    precs, recs = [], []
    for ref in references:
        lcs = lcs_length(candidate, ref)
        precs.append(lcs / len(candidate))
        recs.append(lcs / len(ref) if ref else 0.0)
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta2) * p * r / (r + beta2 * p)


def align_exact(candidate: Tokens, reference: Tokens) -> tuple[int, int]:
    """(matches, chunks) of the exact-match alignment with most matches, then fewest chunks."""
    ref_pos: dict[str, list[int]] = {}
    for j, w in enumerate(reference):
        ref_pos.setdefault(w, []).append(j)
    target = sum((Counter(candidate) & Counter(reference)).values())
    if target == 0:
        return 0, 0
    n = len(candidate)

    @lru_cache(maxsize=None)
    def best(i: int, used: int, last: int) -> tuple[int, int]:
        # returns (matches, -chunks) for candidate[i:], given ref positions used and
        # the ref index aligned to candidate[i-1] (-2 if it was unaligned)
        if i == n:
            return 0, 0
        options = [best(i + 1, used, -2)]
        for j in ref_pos.get(candidate[i], ()):
            if used >> j & 1:
                continue
            m, neg_chunks = best(i + 1, used | (1 << j), j)
            options.append((m + 1, neg_chunks - (0 if j == last + 1 and last >= 0 else 1)))
        return max(options)

    matches, neg_chunks = best(0, 0, -2)
    return matches, -neg_chunks


def meteor_exact(candidate: Tokens, references) -> float:
    """METEOR with exact unigram matching only; best score over the references."""
    if references and isinstance(references[0], str):
        references = [references]
    scores = [0.0]
    for ref in references:
        if not candidate or not ref:
            continue
        m, chunks = align_exact(candidate, ref)
        if m == 0:
            continue
        p, r = m / len(candidate), m / len(ref)
        f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)  # = 10PR / (R + 9P)
        penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
        scores.append(f_mean * (1 - penalty))
    return max(scores)


class CiderScorer:
    """CIDEr with document frequencies taken from the reference sets (one document per sample)."""

    def __init__(self, references: Sequence[Sequence[Tokens]], max_n: int = 4):
        self.max_n = max_n
        self.num_docs = len(references)
        if self.num_docs < 2:
            log.warning("CIDEr on a %d-document corpus: every idf is zero", self.num_docs)
        self.df: Counter = Counter()
        for refs in references:
            seen = set()
            for ref in refs:
                for k in range(1, max_n + 1):
                    seen.update(ngrams(ref, k))
            self.df.update(seen)

    def _vector(self, tokens: Tokens, k: int) -> tuple[dict, Counter, tuple]:
        counts = ngrams(tokens, k)
        total = max(sum(counts.values()), 1)
        vec = {g: c / total * math.log(self.num_docs / max(self.df[g], 1)) for g, c in counts.items()}
        return vec, counts, tuple(tokens)

    def _sim(self, a, b) -> float:
        (va, ca, ta), (vb, cb, tb) = a, b
        na = math.sqrt(sum(x * x for x in va.values()))
        nb = math.sqrt(sum(x * x for x in vb.values()))
        if na == 0 or nb == 0:
            # no informative n-grams: identical bags count as a full match, but two empty
            # bags (both texts shorter than n) only when the texts themselves agree
            if na != nb or ca != cb:
                return 0.0
            return 1.0 if ca or ta == tb else 0.0
        return sum(x * vb.get(g, 0.0) for g, x in va.items()) / (na * nb)

    def score(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        total = 0.0
        for k in range(1, self.max_n + 1):
            cv = self._vector(candidate, k)
            total += float(np.mean([self._sim(cv, self._vector(r, k)) for r in references]))
        return 10.0 * total / self.max_n


def cider(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("empty corpus")
    scorer = CiderScorer(references)
    return float(np.mean([scorer.score(c, r) for c, r in zip(candidates, references)]))


def nlg_scores(predictions: Sequence[str], references: Sequence[Sequence[str]]) -> dict[str, float]:
    """Corpus-level B-1..B-4, METEOR (exact), ROUGE-L and CIDEr over raw strings."""
    if not predictions:
        raise ValueError("no predictions to score")
    cands = [split_words(p) for p in predictions]
    refs = [[split_words(r) for r in rs] for rs in references]
    out = {f"B-{n}": corpus_bleu(cands, refs, n) for n in range(1, 5)}
    out["M"] = float(np.mean([meteor_exact(c, r) for c, r in zip(cands, refs)]))
    out["R"] = float(np.mean([rouge_l(c, r) for c, r in zip(cands, refs)]))
    out["C"] = cider(cands, refs)
    return out
