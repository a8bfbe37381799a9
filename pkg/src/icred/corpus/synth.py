"""
Synthetic addressee-copy corpora.

Two grammars share one config:

* copy (``answers = 0``): every utterance carries filler words plus one
  content token that is unique within its instance. The gold response is a
  fixed frame followed by the content token of the target addressee's last
  utterance.
* question/answer (``answers > 0``): the responding speaker asks one question
  token; the target addressee's last utterance answers ``answers`` questions
  as ``question answer`` pairs. The gold response is the frame followed by the
  answer paired with the responding speaker's question. The utterance summary
  cannot hold the whole table, so the payload is only recoverable by reading
  the target addressee's word states.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from icred.corpus.models import ContextInstance, DialogueTurn
from icred.errors import ConfigError


class SynthConfig(BaseModel):
    """Grammar of the synthetic corpus."""

    model_config = ConfigDict(extra="forbid")

    instances: int = Field(default=100, ge=1)
    interlocutors: int = Field(default=4, ge=2)
    content_vocab_size: int = Field(default=20, ge=1)
    filler_vocab_size: int = Field(default=10, ge=0)
    turns: int = Field(default=3, ge=1)
    filler_per_utterance: int = Field(default=2, ge=0)
    addressee_rate: float = Field(default=0.8, ge=0.0, le=1.0)
    answers: int = Field(default=0, ge=0, description="Question/answer pairs in the target's last utterance; 0 = copy grammar")
    question_vocab_size: int = Field(default=40, ge=1)
    frame: Tuple[str, ...] = ("the", "answer", "is")

    @property
    def content_vocab(self) -> List[str]:
        return [f"k{i:02d}" for i in range(self.content_vocab_size)]

    @property
    def filler_vocab(self) -> List[str]:
        return [f"f{i:02d}" for i in range(self.filler_vocab_size)]

    @property
    def question_vocab(self) -> List[str]:
        return [f"q{i:02d}" for i in range(self.question_vocab_size)]

    @property
    def interlocutor_ids(self) -> List[str]:
        return [f"a{i + 1}" for i in range(self.interlocutors)]


def payload_of(instance: ContextInstance) -> str:
    """The response token copied from the target addressee's last utterance."""
    return instance.response[-1]


def _utterance(config: SynthConfig, rng: np.random.Generator, token: str) -> List[str]:
    filler = config.filler_vocab
    tokens = [filler[i] for i in rng.integers(len(filler), size=config.filler_per_utterance)] if filler else []
    tokens.insert(int(rng.integers(len(tokens) + 1)), token)
    return tokens


def _addressee(config: SynthConfig, rng: np.random.Generator, speaker: str) -> Optional[str]:
    if rng.random() >= config.addressee_rate:
        return None
    others = [p for p in config.interlocutor_ids if p != speaker]
    return others[rng.integers(len(others))]


def _copy_instance(config: SynthConfig, rng: np.random.Generator) -> ContextInstance:
    people = config.interlocutor_ids
    content = config.content_vocab
    picks = rng.choice(len(content), size=config.turns, replace=False)

    while True:
        turns = []
        for t in range(config.turns):
            speaker = people[rng.integers(len(people))]
            addressee = _addressee(config, rng, speaker)
            turns.append(DialogueTurn(speaker=speaker, addressee=addressee, tokens=_utterance(config, rng, content[picks[t]])))

        speakers = sorted({t.speaker for t in turns})
        present = sorted({t.speaker for t in turns} | {t.addressee for t in turns if t.addressee})
        if len(present) >= 2:
            break

    target = speakers[rng.integers(len(speakers))]
    responders = [p for p in present if p != target]
    responder = responders[rng.integers(len(responders))]
    last = max(i for i, t in enumerate(turns) if t.speaker == target)
    payload = content[picks[last]]
    return ContextInstance(
        turns=turns,
        responding_speaker=responder,
        target_addressee=target,
        response=[*config.frame, payload]
    )


def _answered_instance(config: SynthConfig, rng: np.random.Generator) -> ContextInstance:
    people = config.interlocutor_ids
    content = config.content_vocab
    questions = config.question_vocab

    order = rng.permutation(len(people))
    responder, target = people[order[0]], people[order[1]]
    bystanders = [people[i] for i in order[2:]]

    # only bystanders may talk after the answer
    answer_at = config.turns - 1 if not bystanders else int(rng.integers(1, config.turns))
    question_at = int(rng.integers(answer_at))
    keys = rng.choice(len(questions), size=config.answers, replace=False)
    values = rng.choice(len(content), size=config.answers, replace=False)
    asked = int(rng.integers(config.answers))

    turns = []
    for t in range(config.turns):
        if t == question_at:
            turns.append(DialogueTurn(speaker=responder, addressee=target,
                                      tokens=_utterance(config, rng, questions[keys[asked]])))
        elif t == answer_at:
            table = [token for k, v in zip(keys, values) for token in (questions[k], content[v])]
            turns.append(DialogueTurn(speaker=target, addressee=responder, tokens=table))
        else:
            allowed = list(bystanders)
            if t < answer_at:
                allowed.append(target)
            if t < question_at:
                allowed.append(responder)
            speaker = allowed[rng.integers(len(allowed))]
            decoy = content[rng.integers(len(content))]
            turns.append(DialogueTurn(speaker=speaker, addressee=_addressee(config, rng, speaker),
                                      tokens=_utterance(config, rng, decoy)))

    return ContextInstance(
        turns=turns,
        responding_speaker=responder,
        target_addressee=target,
        response=[*config.frame, content[values[asked]]]
    )


def _check(config: SynthConfig) -> None:
    if config.answers:
        if config.turns < 2:
            raise ConfigError("the question/answer grammar needs at least 2 turns")
        if config.answers > config.content_vocab_size:
            raise ConfigError(f"{config.answers} answers need distinct content tokens, vocabulary has {config.content_vocab_size}")
        if config.answers > config.question_vocab_size:
            raise ConfigError(f"{config.answers} answers need distinct questions, vocabulary has {config.question_vocab_size}")
        return
    if config.content_vocab_size < config.interlocutors:
        raise ConfigError(
            f"content vocabulary ({config.content_vocab_size}) is smaller than "
            f"the interlocutor count ({config.interlocutors})"
        )
    if config.content_vocab_size < config.turns:
        raise ConfigError(f"content vocabulary ({config.content_vocab_size}) cannot give {config.turns} turns distinct tokens")
    if config.turns == 1 and config.addressee_rate == 0.0:
        raise ConfigError("a single unaddressed turn cannot hold two interlocutors")


def synth_generate(config: SynthConfig, seed: int) -> List[ContextInstance]:
    """
    Generate a seed-deterministic corpus.

    Raises:
        ConfigError: Copy grammar with a content vocabulary smaller than the
            interlocutor or turn count, or no way to place two interlocutors;
            question/answer grammar with fewer than 2 turns or more answers
            than content or question tokens
    """
    _check(config)
    rng = np.random.default_rng(seed)
    build = _answered_instance if config.answers else _copy_instance
    return [build(config, rng) for _ in range(config.instances)]
