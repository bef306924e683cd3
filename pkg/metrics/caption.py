"""
Caption quality metrics over tokenized text, all scaled to [0, 100].
"""

import math
from collections import Counter
from typing import Dict, List, Sequence, Tuple

Tokens = Sequence[str]
References = Sequence[Sequence[Tokens]]

BLEU_ORDER = 4
CIDER_ORDER = 4
CIDER_SIGMA = 6.0
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


def _check_corpus(candidates: Sequence[Tokens], references: References) -> None:
    if not candidates:
        raise ValueError("empty candidate list")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference groups")
    for i, refs in enumerate(references):
        if not refs:
            raise ValueError(f"candidate {i} has no references")


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# BLEU


def modified_precision(candidate: Tokens, refs: Sequence[Tokens], n: int) -> Tuple[int, int]:
    """(clipped matches, candidate n-gram count) with max-reference clipping."""
    counts = ngrams(candidate, n)
    max_ref: Counter = Counter()
    for ref in refs:
        for gram, count in ngrams(ref, n).items():
            max_ref[gram] = max(max_ref[gram], count)
    clipped = sum(min(count, max_ref[gram]) for gram, count in counts.items())
    return clipped, sum(counts.values())


def _closest_ref_length(candidate: Tokens, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - len(candidate)), len(r)) for r in refs)[1]


def bleu4(candidates: Sequence[Tokens], references: References) -> float:
    """Corpus BLEU-4; a zero-match order contributes 1 / (2 * candidate n-gram count)."""
    _check_corpus(candidates, references)
    clipped = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    cand_length = ref_length = 0
    for candidate, refs in zip(candidates, references):
        cand_length += len(candidate)
        ref_length += _closest_ref_length(candidate, refs)
        for n in range(1, BLEU_ORDER + 1):
            c, t = modified_precision(candidate, refs, n)
            clipped[n - 1] += c
            totals[n - 1] += t

    if cand_length == 0:
        return 0.0
    log_precision = 0.0
    for c, t in zip(clipped, totals):
        p = c / t if c > 0 else 1.0 / (2 * max(t, 1))
        log_precision += math.log(p) / BLEU_ORDER
    brevity = 1.0 if cand_length >= ref_length else math.exp(1 - ref_length / cand_length)
    return 100.0 * brevity * math.exp(log_precision)


# ROUGE-L


def lcs_length(a: Tokens, b: Tokens) -> int:
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def _rouge_l_pair(candidate: Tokens, ref: Tokens) -> float:
    lcs = lcs_length(candidate, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(ref)
    return 2 * p * r / (p + r)


def rouge_l(candidates: Sequence[Tokens], references: References) -> float:
    _check_corpus(candidates, references)
    scores = [max(_rouge_l_pair(c, r) for r in refs) for c, refs in zip(candidates, references)]
    return 100.0 * sum(scores) / len(scores)


# METEOR (exact-match tier)


def align_exact(candidate: Tokens, ref: Tokens) -> List[Tuple[int, int]]:
    """Greedy left-to-right exact alignment, each reference token used at most once."""
    used = set()
    pairs = []
    for i, token in enumerate(candidate):
        for j, other in enumerate(ref):
            if j not in used and token == other:
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def count_chunks(pairs: Sequence[Tuple[int, int]]) -> int:
    """Runs of alignments adjacent in both candidate and reference."""
    chunks = 0
    previous = None
    for i, j in sorted(pairs):
        if previous is None or i != previous[0] + 1 or j != previous[1] + 1:
            chunks += 1
        previous = (i, j)
    return chunks


def meteor_pair(candidate: Tokens, ref: Tokens) -> float:
    pairs = align_exact(candidate, ref)
    matched = len(pairs)
    if matched == 0:
        return 0.0
    p, r = matched / len(candidate), matched / len(ref)
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (count_chunks(pairs) / matched) ** METEOR_BETA
    return f_mean * (1 - penalty)


def meteor_lite(candidates: Sequence[Tokens], references: References) -> float:
    _check_corpus(candidates, references)
    scores = [max(meteor_pair(c, r) for r in refs) for c, refs in zip(candidates, references)]
    return 100.0 * sum(scores) / len(scores)


# CIDEr


def _document_frequency(references: References, n: int) -> Counter:
    df: Counter = Counter()
    for refs in references:
        df.update(set(gram for ref in refs for gram in ngrams(ref, n)))
    return df


def _tfidf(tokens: Tokens, n: int, idf: Dict[tuple, float], default_idf: float) -> Dict[tuple, float]:
    return {gram: count * idf.get(gram, default_idf) for gram, count in ngrams(tokens, n).items()}


def _cosine(u: Dict[tuple, float], v: Dict[tuple, float]) -> float:
    norm_u = math.sqrt(sum(x * x for x in u.values()))
    norm_v = math.sqrt(sum(x * x for x in v.values()))
    if norm_u == 0 or norm_v == 0:
        return 0.0
    return sum(x * v.get(gram, 0.0) for gram, x in u.items()) / (norm_u * norm_v)


def cider_scores(candidates: Sequence[Tokens], references: References, sigma: float = CIDER_SIGMA) -> List[float]:
    """Per-candidate CIDEr (10 x mean over n of the length-penalised tf-idf cosine)."""
    _check_corpus(candidates, references)
    n_images = len(references)
    if n_images < 2:
        raise ValueError("CIDEr idf undefined for a corpus of one image")

    per_order = []
    for n in range(1, CIDER_ORDER + 1):
        df = _document_frequency(references, n)
        idf = {gram: math.log(n_images / (1 + count)) for gram, count in df.items()}
        default_idf = math.log(n_images)
        scores = []
        for candidate, refs in zip(candidates, references):
            cand_vec = _tfidf(candidate, n, idf, default_idf)
            total = 0.0
            for ref in refs:
                delta = len(candidate) - len(ref)
                total += _cosine(cand_vec, _tfidf(ref, n, idf, default_idf)) * math.exp(-delta * delta / (2 * sigma * sigma))
            scores.append(total / len(refs))
        per_order.append(scores)
    return [10.0 * sum(order[i] for order in per_order) / CIDER_ORDER for i in range(len(candidates))]


def cider(candidates: Sequence[Tokens], references: References) -> float:
    scores = cider_scores(candidates, references)
    return min(max(sum(scores) / len(scores), 0.0), 100.0)
