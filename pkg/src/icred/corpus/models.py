"""
Pydantic records for conversations, context instances and corpus statistics.

Field order matters: ``model_dump_json`` emits keys in declaration order,
which is the canonical JSON-lines layout.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


# ============================================================================
# RAW LOG
# ============================================================================

class RawTurn(BaseModel):
    """One parsed log line after the timestamp has been dropped."""
    speaker: str
    text: str


class RejectedLine(BaseModel):
    """A log line that could not be parsed."""
    line_number: int
    line: str
    reason: str


# ============================================================================
# CONTEXT INSTANCES
# ============================================================================

class DialogueTurn(BaseModel):
    """A speaker says tokens, optionally to one addressee."""
    speaker: str = Field(..., min_length=1)
    addressee: Optional[str] = None
    tokens: List[str] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _distinct_roles(self) -> "DialogueTurn":
        if self.addressee is not None and self.addressee == self.speaker:
            raise ValueError(f"speaker {self.speaker!r} cannot address themselves")
        return self


class ContextInstance(BaseModel):
    """
    A context window plus who responds to whom and the gold response.

    Both the responding speaker and the target addressee must appear in the
    context, as a speaker or as an addressee.
    """
    turns: List[DialogueTurn] = Field(..., min_length=1)
    responding_speaker: str
    target_addressee: str
    response: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_roles(self) -> "ContextInstance":
        if self.responding_speaker == self.target_addressee:
            raise ValueError("responding_speaker and target_addressee must differ")
        seen = set(self.interlocutors_in_context())
        for role in ("responding_speaker", "target_addressee"):
            if getattr(self, role) not in seen:
                raise ValueError(f"{role} {getattr(self, role)!r} does not appear in the context")
        return self

    def interlocutors_in_context(self) -> List[str]:
        """Interlocutor ids in order of first appearance (speaker before addressee)."""
        order: Dict[str, None] = {}
        for turn in self.turns:
            order.setdefault(turn.speaker)
            if turn.addressee is not None:
                order.setdefault(turn.addressee)
        return list(order)

    def interlocutors(self) -> List[str]:
        """Every interlocutor of the instance; column order of the interlocutor matrix."""
        order = dict.fromkeys(self.interlocutors_in_context())
        order.setdefault(self.responding_speaker)
        order.setdefault(self.target_addressee)
        return list(order)

    def last_turn_by(self, speaker: str) -> Optional[int]:
        """Index of the last turn said by ``speaker``, or None."""
        for i in range(len(self.turns) - 1, -1, -1):
            if self.turns[i].speaker == speaker:
                return i
        return None

    @property
    def target_spoke(self) -> bool:
        return self.last_turn_by(self.target_addressee) is not None

    @property
    def context_token_count(self) -> int:
        return sum(len(t.tokens) for t in self.turns)

    def to_jsonl(self) -> str:
        return self.model_dump_json()


# ============================================================================
# REPORTS
# ============================================================================

class CorpusStats(BaseModel):
    """Corpus statistics; averages are totals divided by the context count."""
    context_count: int = Field(..., ge=0)
    speaker_count: int = Field(..., ge=0)
    addressee_count: int = Field(..., ge=0)
    vocab_size: int = Field(..., ge=0)
    token_count: int = Field(..., ge=0)
    avg_tokens_per_context: float = Field(..., ge=0.0)
    avg_tokens_per_response: float = Field(..., ge=0.0)
    context_token_count: int = Field(0, ge=0)
    response_token_count: int = Field(0, ge=0)
    silent_target_count: int = Field(0, ge=0, description="Instances whose target addressee never speaks")

    def table_rows(self) -> List[tuple]:
        """Rows labelled the way the dataset statistics table labels them."""
        return [
            ("# Contexts", f"{self.context_count:,}"),
            ("# Speakers", f"{self.speaker_count:,}"),
            ("# Addressees", f"{self.addressee_count:,}"),
            ("# Vocabulary", f"{self.vocab_size:,}"),
            ("# Tokens", f"{self.token_count:,}"),
            ("Avg. Tok/Ctx", f"{self.avg_tokens_per_context:.2f}"),
            ("Avg. Tok/Res", f"{self.avg_tokens_per_response:.2f}"),
            ("Silent targets", f"{self.silent_target_count:,}"),
        ]


class IngestReport(BaseModel):
    """What happened while turning a raw log into instances."""
    conversations: int = 0
    turns: int = 0
    addressed_turns: int = 0
    truncated_utterances: int = 0
    generic_dropped: int = 0
    missing_interlocutor: int = 0
    silent_targets: int = 0
    instances: int = 0
    rejects: List[RejectedLine] = Field(default_factory=list)
