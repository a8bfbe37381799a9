"""
Context-window construction: raw conversations -> ContextInstance records.
"""

import logging
from typing import Iterable, List, Optional, Pattern, Sequence, Tuple, Union

from icred.corpus.models import ContextInstance, DialogueTurn, IngestReport, RawTurn
from icred.corpus.parser import (
    compile_addressee_pattern,
    extract_addressee,
    filter_generic,
    parse_raw_log,
    truncate,
)
from icred.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 5


def annotate_conversation(
    raw_turns: Sequence[RawTurn],
    max_utterance_length: int = 20,
    pattern: Union[str, Pattern, None] = None,
    report: Optional[IngestReport] = None
) -> List[DialogueTurn]:
    """
    Extract addressees and cap utterance length for one conversation.

    The known-interlocutor set is every speaker of the conversation.
    """
    regex = compile_addressee_pattern(pattern)
    known = {t.speaker for t in raw_turns}
    turns = []
    for raw in raw_turns:
        addressee, tokens = extract_addressee(raw.text, known, speaker=raw.speaker, pattern=regex)
        if not tokens:
            continue
        if len(tokens) > max_utterance_length and report is not None:
            report.truncated_utterances += 1
        turns.append(DialogueTurn(
            speaker=raw.speaker,
            addressee=addressee,
            tokens=truncate(tokens, max_utterance_length)
        ))
        if report is not None:
            report.turns += 1
            report.addressed_turns += addressee is not None
    return turns


def build_contexts(
    turns: Sequence[DialogueTurn],
    window: int = DEFAULT_WINDOW,
    rules: Sequence[str] = (),
    max_response_length: Optional[int] = None,
    report: Optional[IngestReport] = None
) -> List[ContextInstance]:
    """
    Emit one instance per addressed turn whose roles appear in the preceding window.

    Args:
        turns: Conversation turns with addressees already extracted
        window: Maximum number of context turns
        rules: Generic-response patterns; matching responses are dropped
        max_response_length: Optional cap on response tokens
        report: Counters to update

    Returns:
        Instances in conversation order
    """
    instances = []
    for t, turn in enumerate(turns):
        if turn.addressee is None:
            continue
        context = list(turns[max(0, t - window):t])
        seen = set()
        for c in context:
            seen.add(c.speaker)
            if c.addressee is not None:
                seen.add(c.addressee)
        if turn.speaker not in seen or turn.addressee not in seen:
            if report is not None:
                report.missing_interlocutor += 1
            continue
        if not filter_generic(turn.tokens, rules):
            if report is not None:
                report.generic_dropped += 1
            continue

        response = list(turn.tokens)
        if max_response_length is not None:
            response = truncate(response, max_response_length)
        instance = ContextInstance(
            turns=context,
            responding_speaker=turn.speaker,
            target_addressee=turn.addressee,
            response=response
        )
        if report is not None and not instance.target_spoke:
            report.silent_targets += 1
        instances.append(instance)
    return instances


def ingest(
    lines: Iterable[str],
    window: int = DEFAULT_WINDOW,
    rules: Sequence[str] = (),
    max_utterance_length: int = 20,
    max_response_length: Optional[int] = None,
    pattern: Union[str, Pattern, None] = None
) -> Tuple[List[ContextInstance], IngestReport]:
    """
    Full ingestion: parse, extract addressees, truncate, build contexts.

    Raises:
        DataError: The log holds no parsable conversation
    """
    conversations, rejects = parse_raw_log(lines)
    if not conversations:
        raise DataError("raw log contains no conversations")

    report = IngestReport(conversations=len(conversations), rejects=rejects)
    instances: List[ContextInstance] = []
    for raw_turns in conversations:
        turns = annotate_conversation(raw_turns, max_utterance_length, pattern, report)
        instances.extend(build_contexts(turns, window, rules, max_response_length, report))

    report.instances = len(instances)
    logger.info(
        f"Ingested {report.instances} instances from {report.conversations} conversations "
        f"({report.generic_dropped} generic, {report.missing_interlocutor} missing interlocutor, "
        f"{len(report.rejects)} rejected lines)"
    )
    if report.silent_targets:
        logger.warning(f"{report.silent_targets} instances have a target addressee who never speaks")
    return instances, report
