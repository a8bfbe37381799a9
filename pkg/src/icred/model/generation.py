"""
Response decoding: greedy and beam search.

Beam hypotheses are ranked by their raw log-probability sum while searching;
the candidate with the best length-normalized score wins. Length counts
generated tokens including EOS.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from icred.corpus.models import ContextInstance
from icred.corpus.vocabulary import EOS_ID
from icred.errors import ConfigError
from icred.model.network import AddresseeMemory, DecoderState, ICREDModel, InterlocutorPrediction

logger = logging.getLogger(__name__)


@dataclass
class GenerationResult:
    """A decoded response plus the roles it was conditioned on."""
    ids: List[int]
    tokens: List[str]
    score: float
    length: int
    responding_speaker: str
    target_addressee: str
    memory_flagged: bool = False
    prediction: Optional[InterlocutorPrediction] = field(default=None, repr=False)

    @property
    def normalized_score(self) -> float:
        return self.score / max(self.length, 1)


@dataclass
class _Hypothesis:
    ids: List[int]
    score: float
    state: DecoderState


def _prepare(model: ICREDModel, instance: ContextInstance, use_predicted_roles: bool):
    ctx = model.encode_context(instance)
    prediction = None
    if use_predicted_roles:
        prediction = model.predict_interlocutors(instance, ctx)
        instance = model.with_roles(instance, prediction.speaker, prediction.addressee)
        ctx.memory = model.select_addressee_memory(instance, ctx.utterances)
    a_res, a_tgt = model.role_vectors(ctx, instance)
    return instance, ctx.memory, a_res, a_tgt, prediction


def _step(model: ICREDModel, state: DecoderState, a_res, a_tgt, memory: AddresseeMemory) -> Tuple[np.ndarray, DecoderState]:
    logits, state = model.decode_step(state, a_res, a_tgt, memory)
    return special.log_softmax(logits.data), state


def _greedy(model: ICREDModel, a_res, a_tgt, memory: AddresseeMemory) -> Tuple[List[int], float]:
    state = model.initial_state(a_res, a_tgt)
    ids: List[int] = []
    score = 0.0
    for _ in range(model.config.max_response_length):
        log_probs, state = _step(model, state, a_res, a_tgt, memory)
        token = int(np.argmax(log_probs))
        score += float(log_probs[token])
        ids.append(token)
        if token == EOS_ID:
            break
        state = model.feed(state, token)
    return ids, score


def greedy_decode(model: ICREDModel, instance: ContextInstance, use_predicted_roles: bool = False) -> GenerationResult:
    """Take the most probable word at each step until EOS or the length cap."""
    instance, memory, a_res, a_tgt, prediction = _prepare(model, instance, use_predicted_roles)
    ids, score = _greedy(model, a_res, a_tgt, memory)
    return _result(model, instance, ids, score, memory, prediction)


def beam_decode(
    model: ICREDModel,
    instance: ContextInstance,
    width: int,
    use_predicted_roles: bool = False
) -> GenerationResult:
    """
    Beam search keeping ``width`` live hypotheses per step.

    Expansions are ranked by raw score with a stable sort, so ties go to the
    earlier hypothesis and lower word index. An expansion ranked within the
    top ``width`` that emits EOS or reaches the length cap finishes; the live
    beam is refilled to ``width`` from the unfinished expansions.

    The greedy hypothesis is the first candidate and wins ties, so the result
    never scores below greedy decoding. Search stops once ``width`` hypotheses
    have finished, or when no live hypothesis can still beat the best
    candidate: log-probabilities are non-positive, so a live raw score S can
    at best reach S / max_response_length after normalization.

    Raises:
        ConfigError: ``width`` < 1
    """
    if width < 1:
        raise ConfigError(f"beam width must be at least 1, got {width}")
    instance, memory, a_res, a_tgt, prediction = _prepare(model, instance, use_predicted_roles)
    limit = model.config.max_response_length

    best_ids, best_score = _greedy(model, a_res, a_tgt, memory)
    live = [_Hypothesis(ids=[], score=0.0, state=model.initial_state(a_res, a_tgt))]
    finished = 0

    while live and finished < width:
        if all(hyp.score / limit <= best_score / len(best_ids) for hyp in live):
            break
        expansions = []
        for hyp in live:
            state = hyp.state if not hyp.ids else model.feed(hyp.state, hyp.ids[-1])
            log_probs, state = _step(model, state, a_res, a_tgt, memory)
            expansions.append((hyp, state, hyp.score + log_probs))

        totals = np.concatenate([scores for _, _, scores in expansions])
        vocab_size = expansions[0][2].size
        final_step = len(live[0].ids) + 1 >= limit

        live = []
        for rank, flat in enumerate(np.argsort(-totals, kind="stable")):
            if rank >= width and (final_step or len(live) == width):
                break
            hyp, state, scores = expansions[flat // vocab_size]
            token = int(flat % vocab_size)
            ids, score = hyp.ids + [token], float(scores[token])
            if token == EOS_ID or final_step:
                if rank < width:
                    finished += 1
                    if score / len(ids) > best_score / len(best_ids):
                        best_ids, best_score = ids, score
            elif len(live) < width:
                live.append(_Hypothesis(ids=ids, score=score, state=state))

    return _result(model, instance, best_ids, best_score, memory, prediction)


def _result(model, instance, ids, score, memory, prediction) -> GenerationResult:
    return GenerationResult(
        ids=ids,
        tokens=model.vocab.decode(ids),
        score=score,
        length=len(ids),
        responding_speaker=instance.responding_speaker,
        target_addressee=instance.target_addressee,
        memory_flagged=memory.flagged,
        prediction=prediction
    )


def generate(
    model: ICREDModel,
    instance: ContextInstance,
    beam_width: int = 1,
    use_predicted_roles: bool = False
) -> GenerationResult:
    """
    Decode a response for ``instance`` (its gold response is ignored).

    Args:
        model: Model to decode with
        instance: Context with responding speaker and target addressee
        beam_width: 1 for greedy, more for beam search
        use_predicted_roles: Replace the gold roles with the prediction heads' choice

    Raises:
        ConfigError: ``beam_width`` < 1
    """
    if beam_width < 1:
        raise ConfigError(f"beam width must be at least 1, got {beam_width}")
    if beam_width == 1:
        return greedy_decode(model, instance, use_predicted_roles)
    return beam_decode(model, instance, beam_width, use_predicted_roles)
