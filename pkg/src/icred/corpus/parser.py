"""
Raw chat-log parsing, tokenization and addressee extraction.
"""

import logging
import re
from pathlib import Path
from typing import Iterable, List, Optional, Pattern, Sequence, Tuple, Union

from icred.corpus.models import RawTurn, RejectedLine
from icred.errors import ConfigError

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"\w+(?:'\w+)?|[^\w\s]")

# Leading name, optional ':' or ',' and the rest of the line.
DEFAULT_ADDRESSEE_PATTERN = r"^\s*(?P<name>[^\s:,]+)\s*[:,]?\s+(?P<rest>.*)$"


def tokenize(text: str) -> List[str]:
    """Lowercase, then split into words and single punctuation marks."""
    return TOKEN_PATTERN.findall(text.lower())


def truncate(tokens: Sequence[str], limit: int) -> List[str]:
    """Keep the first ``limit`` tokens."""
    return list(tokens[:limit])


def parse_raw_log(lines: Iterable[str]) -> Tuple[List[List[RawTurn]], List[RejectedLine]]:
    """
    Group ``time<TAB>speaker<TAB>utterance`` lines into conversations.

    A blank line ends a conversation. Line order is kept; timestamps are
    dropped.

    Args:
        lines: Text lines (trailing newlines allowed)

    Returns:
        (conversations, rejected lines)
    """
    conversations: List[List[RawTurn]] = []
    rejects: List[RejectedLine] = []
    current: List[RawTurn] = []

    for line_no, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if current:
                conversations.append(current)
                current = []
            continue

        parts = line.split("\t", 2)
        if len(parts) != 3:
            rejects.append(RejectedLine(line_number=line_no, line=line, reason="expected 3 tab-separated fields"))
            continue
        _, speaker, text = (p.strip() for p in parts)
        if not speaker:
            rejects.append(RejectedLine(line_number=line_no, line=line, reason="empty speaker"))
            continue
        if not tokenize(text):
            rejects.append(RejectedLine(line_number=line_no, line=line, reason="empty utterance"))
            continue
        current.append(RawTurn(speaker=speaker, text=text))

    if current:
        conversations.append(current)

    if rejects:
        logger.info(f"Rejected {len(rejects)} malformed log lines")
    return conversations, rejects


def compile_addressee_pattern(pattern: Union[str, Pattern, None] = None) -> Pattern:
    """
    Compile an addressee-mention pattern.

    Raises:
        ConfigError: Invalid regex, or no ``name``/``rest`` groups
    """
    if pattern is None:
        pattern = DEFAULT_ADDRESSEE_PATTERN
    if isinstance(pattern, str):
        try:
            pattern = re.compile(pattern)
        except re.error as e:
            raise ConfigError(f"Invalid addressee pattern: {e}") from e
    if not {"name", "rest"} <= set(pattern.groupindex):
        raise ConfigError("Addressee pattern needs named groups 'name' and 'rest'")
    return pattern


def extract_addressee(
    text: str,
    known_interlocutors: Iterable[str],
    speaker: Optional[str] = None,
    pattern: Union[str, Pattern, None] = None
) -> Tuple[Optional[str], List[str]]:
    """
    Pull a leading addressee mention off an utterance.

    Args:
        text: Utterance text
        known_interlocutors: Speakers seen in this conversation
        speaker: Who said the utterance (cannot address themselves)
        pattern: Mention pattern with ``name`` and ``rest`` groups

    Returns:
        (addressee or None, tokens without the mention)
    """
    regex = compile_addressee_pattern(pattern)
    match = regex.match(text)
    if match:
        known = {name.lower(): name for name in known_interlocutors}
        name = known.get(match.group("name").lower())
        rest = tokenize(match.group("rest"))
        if name is not None and rest and name != speaker:
            return name, rest
    return None, tokenize(text)


def load_rules(path: Union[str, Path]) -> List[str]:
    """
    Read generic-response patterns, one lowercase substring per line.

    Raises:
        ConfigError: The file is missing or unreadable
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read generic-response rules {path}: {e}") from e
    rules = []
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            rules.append(line)
    return rules


def filter_generic(response: Sequence[str], rules: Sequence[str]) -> bool:
    """Return True to keep the response, False when it contains a generic pattern."""
    joined = " ".join(response).lower()
    return not any(rule in joined for rule in rules)
