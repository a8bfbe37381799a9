"""
The ICRED network.

Four layers per instance:
    1. bi-GRU utterance encoder (word states + a summary per turn)
    2. speaker interaction: a zero-initialized interlocutor matrix updated
       turn by turn with role-specific GRUs (speaker / addressee / observer)
    3. addressee memory: word states of the target addressee's last utterance
    4. attentive decoder conditioned on the responding speaker and target
       addressee columns, with a softmax tied to the word embeddings

Every instance builds its own tape; parameters are shared read-only.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from icred.config import MemoryType, ModelConfig
from icred.corpus.models import ContextInstance
from icred.corpus.vocabulary import BOS_ID, EOS_ID, Vocabulary
from icred.errors import ContractError, DimensionError, DomainError
from icred.model.params import ModelParams
from icred.tensor import (
    Value,
    concat,
    gru_step,
    hconcat,
    matmul,
    max_columns,
    mean,
    nll,
    row,
    scale,
    softmax,
    stack_columns,
    take_rows,
    tanh,
    zeros,
)

logger = logging.getLogger(__name__)


# ============================================================================
# STATE RECORDS
# ============================================================================

@dataclass
class UtteranceEncoding:
    """Word states (utterance_hidden_dim x L) and the summary of the last word."""
    states: Value
    summary: Value

    @property
    def length(self) -> int:
        return self.states.shape[1]


@dataclass
class InterlocutorMatrix:
    """Per-instance interlocutor columns, in first-appearance order."""
    order: List[str]
    columns: Dict[str, Value]

    def column(self, interlocutor: str) -> Value:
        try:
            return self.columns[interlocutor]
        except KeyError:
            raise ContractError(f"interlocutor {interlocutor!r} is not part of this instance") from None

    def matrix(self, ids: Optional[Sequence[str]] = None) -> Value:
        """Columns of ``ids`` (default: all) stacked into interlocutor_dim x k."""
        return stack_columns([self.column(i) for i in (ids or self.order)])


@dataclass
class AddresseeMemory:
    """
    Word states the decoder attends over.

    ``column_turns`` maps each column to the turn it came from; ``flagged``
    marks an empty or fallback memory for the selected memory type.
    """
    states: Optional[Value]
    column_turns: List[int] = field(default_factory=list)
    source_turn: Optional[int] = None
    flagged: bool = False

    @property
    def empty(self) -> bool:
        return self.states is None


@dataclass
class DecoderState:
    """Decoder GRU state, previous word embedding and the last attention read."""
    s: Value
    x_prev: Value
    alpha: Optional[Value] = None
    c: Optional[Value] = None


@dataclass
class ContextEncoding:
    """Everything the decoder needs from the context, computed once per instance."""
    utterances: List[UtteranceEncoding]
    interlocutors: InterlocutorMatrix
    memory: AddresseeMemory


@dataclass
class InterlocutorPrediction:
    """Distributions over candidate responding speakers and target addressees."""
    candidates: List[str]
    speaker_scores: Value
    addressee_scores: Value
    speaker_probs: np.ndarray
    addressee_probs: np.ndarray
    degenerate: bool = False

    @property
    def speaker(self) -> str:
        return self.candidates[int(np.argmax(self.speaker_probs))]

    @property
    def addressee(self) -> str:
        """Best addressee candidate other than the predicted speaker."""
        speaker = self.speaker
        order = np.argsort(-self.addressee_probs, kind="stable")
        for i in order:
            if self.candidates[i] != speaker:
                return self.candidates[i]
        return self.candidates[int(order[0])]


# ============================================================================
# MODEL
# ============================================================================

class ICREDModel:
    """Interlocutor-aware encoder/decoder over one shared parameter set."""

    def __init__(self, config: ModelConfig, params: ModelParams, vocab: Vocabulary):
        """
        Args:
            config: Architecture and variant switches
            params: Weights (built for ``config``)
            vocab: Token mapping; its size must match the embedding matrix

        Raises:
            DimensionError: Vocabulary and embedding sizes disagree
        """
        if len(vocab) != params.embedding.shape[0]:
            raise DimensionError(f"vocabulary has {len(vocab)} entries, embedding matrix has {params.embedding.shape[0]} rows")
        self.config = config
        self.params = params
        self.vocab = vocab

    # --- inputs ---
    def utterance_ids(self, tokens: Sequence[str]) -> List[int]:
        return self.vocab.encode(tokens[:self.config.max_utterance_length])

    def response_targets(self, instance: ContextInstance) -> List[int]:
        """Gold response ids capped at the maximum response length, then EOS."""
        limit = self.config.max_response_length
        if len(instance.response) > limit:
            logger.warning(f"Response of {len(instance.response)} tokens truncated to {limit}")
        return self.vocab.encode(instance.response[:limit]) + [EOS_ID]

    # --- layer 1 ---
    def encode_utterance(self, ids: Sequence[int]) -> UtteranceEncoding:
        """
        Bi-GRU over one utterance.

        Column i is [forward state after word i; backward state after reading
        words L..i]. The summary is the last column.

        Raises:
            DomainError: Empty utterance
        """
        if not ids:
            raise DomainError("cannot encode an empty utterance")
        p = self.params
        words = take_rows(p.embedding, ids)
        xs = [row(words, i) for i in range(len(ids))]

        fwd, h = [], zeros(self.config.encoder_dim)
        for x in xs:
            h = gru_step(p.enc_fwd, h, x)
            fwd.append(h)
        bwd, h = [], zeros(self.config.encoder_dim)
        for x in reversed(xs):
            h = gru_step(p.enc_bwd, h, x)
            bwd.append(h)

        L = len(ids)
        columns = [concat([fwd[i], bwd[L - 1 - i]]) for i in range(L)]
        return UtteranceEncoding(states=stack_columns(columns), summary=columns[-1])

    # --- layer 2 ---
    def run_interaction(
        self,
        instance: ContextInstance,
        encodings: Sequence[UtteranceEncoding],
        interlocutors: Optional[Sequence[str]] = None
    ) -> InterlocutorMatrix:
        """
        Update the zero-initialized interlocutor matrix turn by turn.

        The speaker column goes through the speaker GRU, the addressee column
        through the addressee GRU and every other column through the observer
        GRU. Without an addressee, everyone but the speaker observes.

        Raises:
            ContractError: A turn names an interlocutor outside ``interlocutors``,
                or encodings are not aligned with turns
        """
        if len(encodings) != len(instance.turns):
            raise ContractError(f"{len(encodings)} encodings for {len(instance.turns)} turns")
        order = list(interlocutors) if interlocutors is not None else instance.interlocutors()
        p = self.params
        start = zeros(self.config.interlocutor_dim)
        columns = {a: start for a in order}

        for turn, enc in zip(instance.turns, encodings):
            for who in (turn.speaker, turn.addressee):
                if who is not None and who not in columns:
                    raise ContractError(f"turn references unknown interlocutor {who!r}")
            updated = {}
            for a, col in columns.items():
                if a == turn.speaker:
                    cell = p.gru_spk
                elif a == turn.addressee:
                    cell = p.gru_adr
                else:
                    cell = p.gru_obs
                updated[a] = gru_step(cell, col, enc.summary)
            columns = updated
        return InterlocutorMatrix(order=order, columns=columns)

    # --- layer 3 ---
    def select_addressee_memory(
        self,
        instance: ContextInstance,
        encodings: Sequence[UtteranceEncoding],
        memory_type: Optional[MemoryType] = None
    ) -> AddresseeMemory:
        """
        Pick the word states the decoder reads.

        addressee: last utterance of the target addressee; speaker: last
        utterance of the responding speaker; latest: the final turn; all: every
        turn in order; none: nothing. An empty addressee/speaker memory is
        flagged and, with ``empty_memory_fallback = latest``, replaced by the
        final turn.
        """
        memory_type = MemoryType(memory_type or self.config.memory_type)
        last = len(instance.turns) - 1

        if memory_type == MemoryType.NONE:
            return AddresseeMemory(states=None)
        if memory_type == MemoryType.ALL:
            column_turns = [t for t, enc in enumerate(encodings) for _ in range(enc.length)]
            return AddresseeMemory(states=hconcat([e.states for e in encodings]), column_turns=column_turns)
        if memory_type == MemoryType.LATEST:
            turn = last
        else:
            who = instance.target_addressee if memory_type == MemoryType.ADDRESSEE else instance.responding_speaker
            turn = instance.last_turn_by(who)
            if turn is None:
                if self.config.empty_memory_fallback == "latest":
                    logger.debug(f"{who} never spoke; memory falls back to the latest turn")
                    return self._memory_of(encodings, last, flagged=True)
                return AddresseeMemory(states=None, flagged=True)
        return self._memory_of(encodings, turn)

    @staticmethod
    def _memory_of(encodings: Sequence[UtteranceEncoding], turn: int, flagged: bool = False) -> AddresseeMemory:
        enc = encodings[turn]
        return AddresseeMemory(states=enc.states, column_turns=[turn] * enc.length, source_turn=turn, flagged=flagged)

    # --- layer 4 ---
    def attend(self, s_prev: Value, memory: AddresseeMemory) -> Tuple[Value, Value]:
        """
        Bilinear attention: score_k = s^T W_a m_k, alpha = softmax(scores),
        c = sum_k alpha_k m_k.

        Raises:
            ContractError: Empty memory
        """
        if memory.empty:
            raise ContractError("attend needs a non-empty memory")
        scores = matmul(matmul(s_prev, self.params.W_a), memory.states)
        alpha = softmax(scores)
        return matmul(memory.states, alpha), alpha

    def role_vectors(self, ctx: ContextEncoding, instance: ContextInstance) -> Tuple[Value, Value]:
        """(A_res, A_tgt) with the disabled vectors replaced by zeros."""
        d_a = self.config.interlocutor_dim
        a_res = ctx.interlocutors.column(instance.responding_speaker) if self.config.use_speaker_vector else zeros(d_a)
        a_tgt = ctx.interlocutors.column(instance.target_addressee) if self.config.use_addressee_vector else zeros(d_a)
        return a_res, a_tgt

    def initial_state(self, a_res: Value, a_tgt: Value, x0: Optional[Value] = None) -> DecoderState:
        """s_0 = tanh(W_init [A_res; A_tgt]); x_0 = BOS embedding."""
        s0 = tanh(matmul(self.params.W_init, concat([a_res, a_tgt])))
        if x0 is None:
            x0 = row(self.params.embedding, BOS_ID)
        return DecoderState(s=s0, x_prev=x0)

    def decode_step(self, state: DecoderState, a_res: Value, a_tgt: Value, memory: AddresseeMemory) -> Tuple[Value, DecoderState]:
        """
        One decoder step.

        The attention read uses the previous state; the GRU input is
        [c; A_res; A_tgt; x_prev]; logits are E (W_proj [s; c; A_res; A_tgt] + b_proj).

        Returns:
            (logits over the vocabulary, next state keeping ``x_prev`` for the caller to replace)
        """
        p = self.params
        if memory.empty:
            c, alpha = zeros(self.config.utterance_hidden_dim), None
        else:
            c, alpha = self.attend(state.s, memory)
        s = gru_step(p.gru_dec, state.s, concat([c, a_res, a_tgt, state.x_prev]))
        out = matmul(p.W_proj, concat([s, c, a_res, a_tgt])) + p.b_proj
        logits = matmul(p.embedding, out)
        return logits, DecoderState(s=s, x_prev=state.x_prev, alpha=alpha, c=c)

    def feed(self, state: DecoderState, token_id: int) -> DecoderState:
        """Next decoder input is the embedding of ``token_id``."""
        return replace(state, x_prev=row(self.params.embedding, token_id))

    # --- whole instance ---
    def encode_context(self, instance: ContextInstance) -> ContextEncoding:
        utterances = [self.encode_utterance(self.utterance_ids(t.tokens)) for t in instance.turns]
        return ContextEncoding(
            utterances=utterances,
            interlocutors=self.run_interaction(instance, utterances),
            memory=self.select_addressee_memory(instance, utterances)
        )

    def step_nlls(self, instance: ContextInstance, ctx: Optional[ContextEncoding] = None) -> List[Value]:
        """Teacher-forced per-token NLL terms (gold response then EOS)."""
        ctx = ctx or self.encode_context(instance)
        targets = self.response_targets(instance)
        a_res, a_tgt = self.role_vectors(ctx, instance)

        inputs = take_rows(self.params.embedding, [BOS_ID] + targets[:-1])
        state = self.initial_state(a_res, a_tgt, x0=row(inputs, 0))
        terms = []
        for j, target in enumerate(targets):
            logits, state = self.decode_step(state, a_res, a_tgt, ctx.memory)
            terms.append(nll(logits, target))
            if j + 1 < len(targets):
                state = replace(state, x_prev=row(inputs, j + 1))
        return terms

    def step_distributions(self, instance: ContextInstance) -> List[np.ndarray]:
        """Teacher-forced next-word distributions (numpy, one per target token)."""
        ctx = self.encode_context(instance)
        targets = self.response_targets(instance)
        a_res, a_tgt = self.role_vectors(ctx, instance)
        state = self.initial_state(a_res, a_tgt)
        out = []
        for target in targets:
            logits, state = self.decode_step(state, a_res, a_tgt, ctx.memory)
            out.append(special.softmax(logits.data))
            state = self.feed(state, target)
        return out

    def nll_loss(self, instance: ContextInstance, ctx: Optional[ContextEncoding] = None) -> Value:
        """Mean per-token negative log-likelihood of the gold response."""
        return mean(self.step_nlls(instance, ctx))

    def l2_penalty(self) -> Value:
        return scale(self.params.l2(), self.config.l2_weight)

    def forward_loss(self, instance: ContextInstance) -> Value:
        """Mean per-token NLL plus the L2 penalty over every parameter."""
        if not instance.response:
            raise ContractError("forward_loss needs a gold response")
        return self.nll_loss(instance) + self.l2_penalty()

    # --- interlocutor prediction ---
    def predict_interlocutors(self, instance: ContextInstance, ctx: Optional[ContextEncoding] = None) -> InterlocutorPrediction:
        """
        Score every interlocutor seen in the context as responding speaker and
        as target addressee.

        score(a_i) = [max-pool(A); h^n]^T W A_i, normalized by softmax over the
        candidates; speaker and addressee have separate W.

        Raises:
            ContractError: The model has no prediction heads
        """
        p = self.params
        if p.W_pred_spk is None or p.W_pred_adr is None:
            raise ContractError("interlocutor prediction needs a model built with joint_prediction")
        ctx = ctx or self.encode_context(instance)
        candidates = instance.interlocutors_in_context()
        A = ctx.interlocutors.matrix(candidates)
        query = concat([max_columns(A), ctx.utterances[-1].summary])

        spk_scores = matmul(matmul(query, p.W_pred_spk), A)
        adr_scores = matmul(matmul(query, p.W_pred_adr), A)
        degenerate = len(candidates) < 2
        if degenerate:
            logger.warning("Interlocutor prediction with fewer than 2 candidates")
        return InterlocutorPrediction(
            candidates=candidates,
            speaker_scores=spk_scores,
            addressee_scores=adr_scores,
            speaker_probs=softmax(spk_scores).data,
            addressee_probs=softmax(adr_scores).data,
            degenerate=degenerate
        )

    def prediction_nll(self, instance: ContextInstance, ctx: Optional[ContextEncoding] = None) -> Value:
        """NLL of the gold speaker plus NLL of the gold addressee."""
        pred = self.predict_interlocutors(instance, ctx)
        try:
            spk = pred.candidates.index(instance.responding_speaker)
            adr = pred.candidates.index(instance.target_addressee)
        except ValueError:
            raise ContractError("gold interlocutors are outside the candidate set") from None
        return nll(pred.speaker_scores, spk) + nll(pred.addressee_scores, adr)

    def joint_loss(self, instance: ContextInstance) -> Value:
        """
        forward_loss + prediction_weight * prediction NLL.

        Raises:
            ContractError: Joint prediction disabled
        """
        if not self.config.joint_prediction:
            raise ContractError("joint_loss needs joint_prediction enabled")
        if not instance.response:
            raise ContractError("joint_loss needs a gold response")
        ctx = self.encode_context(instance)
        generation = self.nll_loss(instance, ctx) + self.l2_penalty()
        return generation + scale(self.prediction_nll(instance, ctx), self.config.prediction_weight)

    def training_loss(self, instance: ContextInstance, include_l2: bool = True) -> Value:
        """The loss the trainer optimizes: joint when enabled, otherwise generation only."""
        ctx = self.encode_context(instance)
        loss = self.nll_loss(instance, ctx)
        if self.config.joint_prediction:
            loss = loss + scale(self.prediction_nll(instance, ctx), self.config.prediction_weight)
        if include_l2:
            loss = loss + self.l2_penalty()
        return loss

    def with_roles(self, instance: ContextInstance, speaker: str, addressee: str) -> ContextInstance:
        """Copy of ``instance`` with the responding speaker and target addressee replaced."""
        return instance.model_copy(update={"responding_speaker": speaker, "target_addressee": addressee})


def uniform_loss(vocab_size: int) -> float:
    """Per-token NLL of a uniform next-word distribution."""
    return float(np.log(vocab_size))

