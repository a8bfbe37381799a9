"""
Word <-> index mapping with fixed reserved entries.
"""

from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from icred.corpus.models import ContextInstance
from icred.errors import ConfigError, DataError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class Vocabulary:
    """Reserved tokens occupy indices 0..3; regular words follow."""

    def __init__(self, words: Iterable[str] = ()):
        self.index_to_word: List[str] = list(RESERVED)
        self.word_to_index: Dict[str, int] = {w: i for i, w in enumerate(RESERVED)}
        for word in words:
            if word in self.word_to_index:
                raise DataError(f"duplicate vocabulary entry: {word!r}")
            self.word_to_index[word] = len(self.index_to_word)
            self.index_to_word.append(word)

    def __len__(self) -> int:
        return len(self.index_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    @property
    def words(self) -> List[str]:
        """Regular (non-reserved) words in index order."""
        return self.index_to_word[len(RESERVED):]

    def index(self, word: str) -> int:
        return self.word_to_index.get(word, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.index(t) for t in tokens]

    def decode(self, ids: Sequence[int], strip_eos: bool = True) -> List[str]:
        """Map ids back to words, stopping at EOS when ``strip_eos``."""
        out = []
        for i in ids:
            if strip_eos and i == EOS_ID:
                break
            out.append(self.index_to_word[i])
        return out

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(f"{w}\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        """
        Read one word per line; line k holds index k + 4.

        Raises:
            ConfigError: File missing
            DataError: Duplicate or reserved words
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read vocabulary {path}: {e}") from e
        words = [line.strip() for line in text.splitlines() if line.strip()]
        clash = [w for w in words if w in RESERVED]
        if clash:
            raise DataError(f"vocabulary file lists reserved tokens: {clash}")
        return cls(words)


def build_vocabulary(
    instances: Iterable[ContextInstance],
    min_count: int = 1,
    max_size: Optional[int] = None
) -> Vocabulary:
    """
    Count context and response tokens; most frequent first, ties alphabetical.

    Args:
        instances: Corpus
        min_count: Drop words seen fewer times
        max_size: Cap on regular words (reserved entries not counted)
    """
    counts: Counter = Counter()
    for inst in instances:
        for turn in inst.turns:
            counts.update(turn.tokens)
        counts.update(inst.response)
    for reserved in RESERVED:
        counts.pop(reserved, None)
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocabulary(ranked)
