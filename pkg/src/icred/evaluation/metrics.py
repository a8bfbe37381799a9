"""
Automatic response metrics: corpus BLEU, ROUGE-L, length, nouns per
response, and positional token accuracy.

All scores are percentages except the length and noun averages.
"""

import math
from collections import Counter
from pathlib import Path
from typing import FrozenSet, List, Sequence, Union

from icred.errors import ConfigError, ContractError, DomainError

Tokens = Sequence[str]

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2


def _check_aligned(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> None:
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise DomainError("metrics need at least one candidate")


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> float:
    """
    Corpus-level BLEU with one reference per candidate.

    Clipped n-gram matches and candidate n-gram totals are summed over the
    corpus. This is effective-order BLEU: an order with no candidate n-grams
    at all is left out of the geometric mean instead of being smoothed, so a
    candidate set identical to its references scores 100 even when every
    candidate is shorter than ``max_n``. An order with n-grams but no matches
    uses a ``BLEU_EPSILON`` numerator. The brevity penalty compares total
    candidate and reference lengths.

    Raises:
        ContractError: Lists of different length
        DomainError: Empty lists
    """
    _check_aligned(candidates, references)
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0

    log_precisions: List[float] = []
    for n in range(1, max_n + 1):
        matches = total = 0
        for cand, ref in zip(candidates, references):
            cand_counts = ngram_counts(cand, n)
            ref_counts = ngram_counts(ref, n)
            matches += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
            total += sum(cand_counts.values())
        if total == 0:
            continue
        log_precisions.append(math.log(max(matches, BLEU_EPSILON) / total))

    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Length of the longest common subsequence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_instance(candidate: Tokens, reference: Tokens, beta: float = ROUGE_BETA) -> float:
    """LCS-based F score in [0, 1]; two empty sequences score 1."""
    if not candidate and not reference:
        return 1.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (recall + b2 * precision)


def rouge_l(candidates: Sequence[Tokens], references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    """Mean per-instance ROUGE-L F score, as a percentage."""
    _check_aligned(candidates, references)
    return 100.0 * sum(rouge_l_instance(c, r, beta) for c, r in zip(candidates, references)) / len(candidates)


def avg_length(candidates: Sequence[Tokens]) -> float:
    if not candidates:
        raise DomainError("avg_length of no candidates")
    return sum(len(c) for c in candidates) / len(candidates)


def load_lexicon(path: Union[str, Path]) -> FrozenSet[str]:
    """
    Read a noun lexicon (one lowercase word per line, ``#`` comments allowed).

    Raises:
        ConfigError: Missing or unreadable file
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read noun lexicon {path}: {e}") from e
    return frozenset(
        line.strip().lower() for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )


def nouns_in(tokens: Tokens, lexicon: FrozenSet[str]) -> int:
    return sum(1 for t in tokens if t.lower() in lexicon)


def noun_count(candidates: Sequence[Tokens], lexicon: Union[FrozenSet[str], str, Path]) -> float:
    """
    Mean number of lexicon words per response.

    Raises:
        ConfigError: ``lexicon`` is a path that cannot be read
        DomainError: No candidates
    """
    if not isinstance(lexicon, (set, frozenset)):
        lexicon = load_lexicon(lexicon)
    if not candidates:
        raise DomainError("noun_count of no candidates")
    return sum(nouns_in(c, lexicon) for c in candidates) / len(candidates)


def token_accuracy_instance(candidate: Tokens, reference: Tokens) -> float:
    """Fraction of reference positions the candidate reproduces in place."""
    if not reference:
        return 1.0 if not candidate else 0.0
    hits = sum(1 for i, tok in enumerate(reference) if i < len(candidate) and candidate[i] == tok)
    return hits / len(reference)


def token_accuracy(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    _check_aligned(candidates, references)
    return 100.0 * sum(token_accuracy_instance(c, r) for c, r in zip(candidates, references)) / len(candidates)


def payload_accuracy(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Percentage of instances whose final reference token appears at the same position in the candidate."""
    _check_aligned(candidates, references)
    hits = 0
    for cand, ref in zip(candidates, references):
        if ref and len(cand) >= len(ref) and cand[len(ref) - 1] == ref[-1]:
            hits += 1
    return 100.0 * hits / len(candidates)
