"""
JSON-lines I/O, train/dev/test splitting, statistics and validation.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from icred.corpus.models import ContextInstance, CorpusStats
from icred.errors import DataError, DomainError, SizingError

logger = logging.getLogger(__name__)


def read_jsonl(path: Union[str, Path]) -> List[ContextInstance]:
    """
    Load a canonical corpus file.

    Raises:
        DataError: Unreadable file or an invalid line (the line number is named)
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"Cannot read corpus {path}: {e}") from e

    instances = []
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            instances.append(ContextInstance.model_validate_json(line))
        except ValidationError as e:
            raise DataError(f"{path}:{line_no}: invalid instance: {e}") from e
    logger.debug(f"Loaded {len(instances)} instances from {path}")
    return instances


def write_jsonl(path: Union[str, Path], instances: Iterable[ContextInstance]) -> int:
    """Write one instance per line; returns the count."""
    lines = [inst.to_jsonl() for inst in instances]
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
    return len(lines)


def split_sizes(n: int, ratios: Sequence[int] = (8, 1, 1)) -> Tuple[int, int, int]:
    """
    Sizes of (train, dev, test): dev and test are floor(n * ratio / total),
    train takes the remainder.
    """
    total = sum(ratios)
    dev = n * ratios[1] // total
    test = n * ratios[2] // total
    return n - dev - test, dev, test


def split_dataset(
    instances: Sequence[ContextInstance],
    seed: int,
    ratios: Sequence[int] = (8, 1, 1)
) -> Tuple[List[ContextInstance], List[ContextInstance], List[ContextInstance]]:
    """
    Shuffle with ``seed`` and partition into train/dev/test.

    Raises:
        SizingError: Fewer than 10 instances
    """
    n = len(instances)
    if n < 10:
        raise SizingError(f"need at least 10 instances to split, got {n}")
    n_train, n_dev, _ = split_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    picked = [instances[i] for i in order]
    return picked[:n_train], picked[n_train:n_train + n_dev], picked[n_train + n_dev:]


def corpus_stats(instances: Sequence[ContextInstance]) -> CorpusStats:
    """
    Compute corpus statistics.

    Speakers count turn speakers and responding speakers; addressees count
    turn addressees and target addressees.

    Raises:
        DomainError: Empty corpus
    """
    if not instances:
        raise DomainError("corpus_stats of an empty corpus")

    speakers, addressees, vocab = set(), set(), set()
    ctx_tokens = res_tokens = silent = 0
    for inst in instances:
        for turn in inst.turns:
            speakers.add(turn.speaker)
            if turn.addressee is not None:
                addressees.add(turn.addressee)
            vocab.update(turn.tokens)
            ctx_tokens += len(turn.tokens)
        speakers.add(inst.responding_speaker)
        addressees.add(inst.target_addressee)
        vocab.update(inst.response)
        res_tokens += len(inst.response)
        silent += not inst.target_spoke

    n = len(instances)
    return CorpusStats(
        context_count=n,
        speaker_count=len(speakers),
        addressee_count=len(addressees),
        vocab_size=len(vocab),
        token_count=ctx_tokens + res_tokens,
        avg_tokens_per_context=ctx_tokens / n,
        avg_tokens_per_response=res_tokens / n,
        context_token_count=ctx_tokens,
        response_token_count=res_tokens,
        silent_target_count=silent
    )


def validate_corpus(
    instances: Sequence[ContextInstance],
    window: int = 5,
    max_utterance_length: int = 20,
    max_response_length: Optional[int] = None
) -> List[str]:
    """List every instance that breaks the window or length caps."""
    problems = []
    for i, inst in enumerate(instances):
        if len(inst.turns) > window:
            problems.append(f"instance {i}: {len(inst.turns)} turns exceed window {window}")
        for t, turn in enumerate(inst.turns):
            if len(turn.tokens) > max_utterance_length:
                problems.append(f"instance {i} turn {t}: {len(turn.tokens)} tokens exceed {max_utterance_length}")
        if max_response_length is not None and len(inst.response) > max_response_length:
            problems.append(f"instance {i}: response of {len(inst.response)} tokens exceeds {max_response_length}")
    return problems
