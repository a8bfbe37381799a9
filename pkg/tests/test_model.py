"""
Tests for the ICRED network: parameters, encoders, interaction, memory,
decoder losses, interlocutor prediction and gradient correctness.
"""

import numpy as np
import pytest

from icred.config import MemoryType
from icred.corpus import SynthConfig, Vocabulary, synth_generate
from icred.corpus.vocabulary import EOS_ID
from icred.errors import ConfigError, ContractError, DimensionError, DomainError
from icred.model import (
    AddresseeMemory,
    ICREDModel,
    ModelParams,
    UtteranceEncoding,
    generate,
    identify_variant,
    load_word_vectors,
    param_shapes,
    uniform_loss,
)
from icred.model.variants import VARIANTS, variant_config
from icred.tensor import Value, grad_check, gru_step, zeros

from tests.builders import MICRO_SYNTH, make_instance, micro_config, micro_model
from tests.reference import scalar_affine, scalar_attend, scalar_gru_step


@pytest.fixture
def three_turns():
    return make_instance(
        [("ann", "bob", "a b"), ("bob", "ann", "c"), ("cat", None, "d e f")],
        "ann", "bob", response=["g", "h"],
    )


@pytest.fixture
def silent_target():
    return make_instance([("ann", "cat", "x"), ("bob", "ann", "y")], "bob", "cat")


def _rebuilt(model: ICREDModel, replacements) -> ICREDModel:
    """Same config and vocabulary, with some parameter arrays swapped out."""
    arrays = {**model.params.arrays(), **replacements}
    return ICREDModel(model.config, ModelParams.from_arrays(model.config, arrays), model.vocab)


def _gate_lists(cell):
    return tuple({g: getattr(cell, f"{kind}_{g}").data.tolist() for g in "zrh"} for kind in "WUb")


def _noisy_columns(monkeypatch, model: ICREDModel, role: str, rng) -> None:
    """Replace the column of ``role`` with noise after every interaction pass."""
    original = model.run_interaction

    def noisy(instance, encodings, interlocutors=None):
        matrix = original(instance, encodings, interlocutors)
        matrix.columns[getattr(instance, role)] = Value(rng.normal(size=model.config.interlocutor_dim))
        return matrix

    monkeypatch.setattr(model, "run_interaction", noisy)


def _noisy_word_states(monkeypatch, model: ICREDModel, rng) -> None:
    """Add noise to every word state except the summary column."""
    original = model.encode_utterance

    def noisy(ids):
        enc = original(ids)
        states = enc.states.data.copy()
        states[:, :-1] += rng.normal(size=(states.shape[0], states.shape[1] - 1))
        return UtteranceEncoding(states=Value(states), summary=enc.summary)

    monkeypatch.setattr(model, "encode_utterance", noisy)


def _outputs(model: ICREDModel, instances):
    return [(model.nll_loss(inst).item(), generate(model, inst, beam_width=2).ids) for inst in instances]


# =============================================================================
# Parameters
# =============================================================================

def test_parameter_names(micro_vocab):
    shapes = param_shapes(micro_config(micro_vocab))
    assert shapes["embedding"] == (len(micro_vocab), 4)
    assert shapes["enc_fwd.W_z"] == (2, 4)
    assert shapes["gru_dec.W_h"] == (4, 4 + 2 * 4 + 4)
    assert shapes["out.W_proj"] == (4, 4 + 4 + 2 * 4)
    assert {"attn.W_a", "init.W", "out.b_proj"} <= set(shapes)
    assert "pred_spk.W" not in shapes
    joint = param_shapes(micro_config(micro_vocab, joint_prediction=True))
    assert joint["pred_spk.W"] == joint["pred_adr.W"] == (8, 4)


def test_initialize_is_seeded(micro_vocab):
    config = micro_config(micro_vocab)
    a = ModelParams.initialize(config, seed=5).arrays()
    b = ModelParams.initialize(config, seed=5).arrays()
    c = ModelParams.initialize(config, seed=6).arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["embedding"], c["embedding"])
    assert not a["gru_dec.b_z"].any() and not a["out.b_proj"].any()


def test_params_validate_set_and_shapes(micro_vocab):
    config = micro_config(micro_vocab)
    arrays = ModelParams.zeros(config).arrays()
    with pytest.raises(DimensionError):
        ModelParams.from_arrays(config, {k: v for k, v in arrays.items() if k != "init.W"})
    with pytest.raises(DimensionError):
        ModelParams.from_arrays(config, {**arrays, "init.W": np.zeros((3, 3))})


def test_vocab_size_must_match(micro_vocab):
    config = micro_config(micro_vocab)
    with pytest.raises(DimensionError):
        ICREDModel(config, ModelParams.zeros(config), Vocabulary(["only"]))


def test_missing_vocab_size():
    from icred.config import ModelConfig

    with pytest.raises(ConfigError):
        param_shapes(ModelConfig())


# =============================================================================
# Encoders
# =============================================================================

def test_encode_utterance(micro):
    ids = micro.vocab.encode(["the", "answer", "is"])
    enc = micro.encode_utterance(ids)
    assert enc.states.shape == (4, 3)
    assert np.array_equal(enc.summary.data, enc.states.data[:, -1])

    p = micro.params
    first = gru_step(p.enc_fwd, zeros(2), Value(p.embedding.data[ids[0]]))
    assert np.allclose(enc.states.data[:2, 0], first.data)
    with pytest.raises(DomainError):
        micro.encode_utterance([])


def test_observer_symmetry(micro):
    """Interlocutors with identical role histories end with identical columns."""
    corpus = synth_generate(MICRO_SYNTH.model_copy(update={"instances": 1000}), seed=99)
    for inst in corpus:
        encodings = [micro.encode_utterance(micro.utterance_ids(t.tokens)) for t in inst.turns]
        order = inst.interlocutors() + ["x1", "x2"]
        matrix = micro.run_interaction(inst, encodings, interlocutors=order)
        assert np.array_equal(matrix.column("x1").data, matrix.column("x2").data)
        assert matrix.matrix().shape == (4, len(order))


def test_encode_utterance_matches_scalar_loops(micro):
    ids = micro.vocab.encode(["the", "answer", "is"])
    enc = micro.encode_utterance(ids)
    xs = [micro.params.embedding.data[i].tolist() for i in ids]

    fwd, h = [], [0.0, 0.0]
    for x in xs:
        h = scalar_gru_step(*_gate_lists(micro.params.enc_fwd), h, x)
        fwd.append(h)
    bwd, h = [], [0.0, 0.0]
    for x in reversed(xs):
        h = scalar_gru_step(*_gate_lists(micro.params.enc_bwd), h, x)
        bwd.append(h)

    expected = np.array([fwd[i] + bwd[2 - i] for i in range(3)]).T
    assert np.allclose(enc.states.data, expected, rtol=0, atol=1e-12)
    assert np.allclose(enc.summary.data, fwd[2] + bwd[0], rtol=0, atol=1e-12)


def test_one_turn_updates_each_role_with_its_own_cell(micro):
    inst = make_instance([("ann", "bob", "a b")], "bob", "ann")
    encodings = [micro.encode_utterance(micro.utterance_ids(inst.turns[0].tokens))]
    matrix = micro.run_interaction(inst, encodings, interlocutors=["ann", "bob", "cat"])

    p = micro.params
    start = zeros(micro.config.interlocutor_dim)
    for who, cell in (("ann", p.gru_spk), ("bob", p.gru_adr), ("cat", p.gru_obs)):
        assert np.array_equal(matrix.column(who).data, gru_step(cell, start, encodings[0].summary).data), who
    assert not np.array_equal(matrix.column("ann").data, matrix.column("cat").data)
    assert not np.array_equal(matrix.column("bob").data, matrix.column("cat").data)


def test_interaction_rejects_unknown_interlocutor(micro, three_turns):
    encodings = [micro.encode_utterance(micro.utterance_ids(t.tokens)) for t in three_turns.turns]
    with pytest.raises(ContractError):
        micro.run_interaction(three_turns, encodings, interlocutors=["ann", "bob"])
    with pytest.raises(ContractError):
        micro.run_interaction(three_turns, encodings[:2])


def test_interaction_roles_matter(micro, three_turns):
    ctx = micro.encode_context(three_turns)
    ann = ctx.interlocutors.column("ann").data
    bob = ctx.interlocutors.column("bob").data
    assert not np.array_equal(ann, bob)


# =============================================================================
# Addressee memory
# =============================================================================

@pytest.mark.parametrize("memory_type, width, turns", [
    (MemoryType.ADDRESSEE, 1, [1]),
    (MemoryType.SPEAKER, 2, [0, 0]),
    (MemoryType.LATEST, 3, [2, 2, 2]),
    (MemoryType.ALL, 6, [0, 0, 1, 2, 2, 2]),
])
def test_memory_selection(micro, three_turns, memory_type, width, turns):
    encodings = micro.encode_context(three_turns).utterances
    memory = micro.select_addressee_memory(three_turns, encodings, memory_type)
    assert memory.states.shape == (4, width)
    assert memory.column_turns == turns
    assert not memory.flagged


def test_memory_none(micro, three_turns):
    encodings = micro.encode_context(three_turns).utterances
    assert micro.select_addressee_memory(three_turns, encodings, MemoryType.NONE).empty


def test_empty_memory_is_flagged(micro_vocab, silent_target):
    model = micro_model(micro_vocab)
    memory = model.encode_context(silent_target).memory
    assert memory.empty and memory.flagged
    assert np.isfinite(model.forward_loss(silent_target).item())

    fallback = micro_model(micro_vocab, empty_memory_fallback="latest")
    memory = fallback.encode_context(silent_target).memory
    assert memory.flagged and memory.source_turn == 1


def test_attend_needs_memory(micro, silent_target):
    memory = micro.encode_context(silent_target).memory
    with pytest.raises(ContractError):
        micro.attend(zeros(4), memory)


def test_attention_weights_are_a_distribution(micro, three_turns):
    ctx = micro.encode_context(three_turns)
    a_res, a_tgt = micro.role_vectors(ctx, three_turns)
    state = micro.initial_state(a_res, a_tgt)
    c, alpha = micro.attend(state.s, ctx.memory)
    assert alpha.shape == (1,)
    assert alpha.data.sum() == pytest.approx(1.0)
    assert np.allclose(c.data, ctx.memory.states.data[:, 0])


def test_identical_memory_columns_are_returned(micro):
    rng = np.random.default_rng(4)
    column = rng.normal(size=4)
    memory = AddresseeMemory(states=Value(np.tile(column[:, None], (1, 3))))
    c, alpha = micro.attend(Value(rng.normal(size=4)), memory)
    assert np.allclose(c.data, column, rtol=0, atol=1e-12)
    assert np.allclose(alpha.data, 1.0 / 3.0)


def test_zero_attention_weights_average_the_memory(micro):
    rng = np.random.default_rng(5)
    model = _rebuilt(micro, {"attn.W_a": np.zeros((4, 4))})
    states = rng.normal(size=(4, 5))
    c, alpha = model.attend(Value(rng.normal(size=4)), AddresseeMemory(states=Value(states)))
    assert np.allclose(alpha.data, 0.2, rtol=0, atol=1e-15)
    assert np.allclose(c.data, states.mean(axis=1), rtol=0, atol=1e-12)


def test_attend_matches_scalar_loops(micro):
    rng = np.random.default_rng(6)
    s = rng.normal(size=4)
    states = rng.normal(scale=2.0, size=(4, 5))
    c, alpha = micro.attend(Value(s), AddresseeMemory(states=Value(states)))
    expected_c, expected_alpha = scalar_attend(s.tolist(), micro.params.W_a.data.tolist(), states.T.tolist())
    assert np.allclose(alpha.data, expected_alpha, rtol=0, atol=1e-12)
    assert np.allclose(c.data, expected_c, rtol=0, atol=1e-12)


@pytest.mark.parametrize("flag, role", [
    ("use_speaker_vector", "responding_speaker"),
    ("use_addressee_vector", "target_addressee"),
])
def test_disabled_role_vector_ignores_its_column(micro_vocab, synth_corpus, monkeypatch, flag, role):
    instances = synth_corpus[:5]
    for enabled in (False, True):
        model = micro_model(micro_vocab, **{flag: enabled})
        before = _outputs(model, instances)
        _noisy_columns(monkeypatch, model, role, np.random.default_rng(0))
        after = _outputs(model, instances)
        if enabled:
            assert [loss for loss, _ in after] != [loss for loss, _ in before]
        else:
            assert after == before


def test_word_states_are_invisible_without_memory(micro_vocab, synth_corpus, monkeypatch):
    instances = synth_corpus[:5]
    for memory_type in (MemoryType.NONE, MemoryType.ADDRESSEE):
        model = micro_model(micro_vocab, memory_type=memory_type)
        before = _outputs(model, instances)
        _noisy_word_states(monkeypatch, model, np.random.default_rng(1))
        after = _outputs(model, instances)
        if memory_type == MemoryType.NONE:
            assert after == before
        else:
            assert [loss for loss, _ in after] != [loss for loss, _ in before]


# =============================================================================
# Losses
# =============================================================================

def test_zero_model_scores_uniform_nll(micro_vocab, synth_corpus):
    config = micro_config(micro_vocab)
    model = ICREDModel(config, ModelParams.zeros(config), micro_vocab)
    expected = uniform_loss(len(micro_vocab))
    for inst in synth_corpus:
        assert abs(model.nll_loss(inst).item() - expected) < 1e-10


def test_zero_parameters_give_zero_logits(micro_vocab):
    config = micro_config(micro_vocab)
    model = ICREDModel(config, ModelParams.zeros(config), micro_vocab)
    rng = np.random.default_rng(7)
    a_res, a_tgt = Value(rng.normal(size=4)), Value(rng.normal(size=4))
    memory = AddresseeMemory(states=Value(rng.normal(size=(4, 3))))
    logits, state = model.decode_step(model.initial_state(a_res, a_tgt), a_res, a_tgt, memory)
    assert logits.shape == (len(micro_vocab),)
    assert not logits.data.any()
    assert not state.s.data.any()


def test_decode_step_matches_scalar_loops(micro):
    rng = np.random.default_rng(8)
    p = micro.params
    a_res, a_tgt = Value(rng.normal(size=4)), Value(rng.normal(size=4))
    memory = AddresseeMemory(states=Value(rng.normal(size=(4, 3))))
    state = micro.feed(micro.initial_state(a_res, a_tgt), 5)
    logits, after = micro.decode_step(state, a_res, a_tgt, memory)

    s = state.s.data.tolist()
    roles = a_res.data.tolist() + a_tgt.data.tolist()
    c, alpha = scalar_attend(s, p.W_a.data.tolist(), memory.states.data.T.tolist())
    s_next = scalar_gru_step(*_gate_lists(p.gru_dec), s, c + roles + state.x_prev.data.tolist())
    out = scalar_affine(p.W_proj.data.tolist(), s_next + c + roles, p.b_proj.data.tolist())
    expected = scalar_affine(p.embedding.data.tolist(), out)

    assert np.allclose(after.alpha.data, alpha, rtol=0, atol=1e-12)
    assert np.allclose(after.s.data, s_next, rtol=0, atol=1e-12)
    assert np.allclose(logits.data, expected, rtol=0, atol=1e-12)


def test_response_targets_capped(micro_vocab):
    model = micro_model(micro_vocab, max_response_length=2)
    inst = make_instance([("ann", "bob", "the")], "bob", "ann", response=["the", "answer", "is"])
    assert model.response_targets(inst) == micro_vocab.encode(["the", "answer"]) + [EOS_ID]
    assert len(model.step_nlls(inst)) == 3


def test_step_distributions(micro, instance):
    dists = micro.step_distributions(instance)
    assert len(dists) == len(instance.response) + 1
    for d in dists:
        assert d.shape == (len(micro.vocab),)
        assert d.sum() == pytest.approx(1.0)


def test_forward_loss_adds_l2(micro, instance):
    l2 = micro.config.l2_weight * sum(float(np.sum(a * a)) for a in micro.params.arrays().values())
    assert micro.forward_loss(instance).item() == pytest.approx(micro.nll_loss(instance).item() + l2)
    assert micro.training_loss(instance).item() == micro.forward_loss(instance).item()


def test_forward_loss_needs_response(micro, instance):
    with pytest.raises(ContractError):
        micro.forward_loss(instance.model_copy(update={"response": []}))
    with pytest.raises(ContractError):
        micro.joint_loss(instance)


def test_role_vectors_disabled(micro_vocab, three_turns):
    model = micro_model(micro_vocab, use_speaker_vector=False)
    a_res, a_tgt = model.role_vectors(model.encode_context(three_turns), three_turns)
    assert not a_res.data.any()
    assert a_tgt.data.any()

    model = micro_model(micro_vocab, use_addressee_vector=False)
    a_res, a_tgt = model.role_vectors(model.encode_context(three_turns), three_turns)
    assert a_res.data.any()
    assert not a_tgt.data.any()


# =============================================================================
# Interlocutor prediction
# =============================================================================

def test_predict_interlocutors(micro_vocab, three_turns):
    model = micro_model(micro_vocab, joint_prediction=True)
    pred = model.predict_interlocutors(three_turns)
    assert pred.candidates == ["ann", "bob", "cat"]
    assert pred.speaker_probs.sum() == pytest.approx(1.0)
    assert pred.addressee_probs.sum() == pytest.approx(1.0)
    assert pred.addressee != pred.speaker
    assert not pred.degenerate


def test_identical_columns_split_prediction_evenly(micro_vocab):
    model = micro_model(micro_vocab, joint_prediction=True)
    arrays = model.params.arrays()
    shared = {f"gru_{role}.{name.split('.')[1]}": arrays[name]
              for role in ("adr", "obs") for name in arrays if name.startswith("gru_spk.")}
    model = _rebuilt(model, shared)
    inst = make_instance([("ann", "bob", "a b"), ("bob", "ann", "c")], "ann", "bob")
    pred = model.predict_interlocutors(inst)
    assert pred.candidates == ["ann", "bob"]
    assert np.allclose(pred.speaker_probs, [0.5, 0.5])
    assert np.allclose(pred.addressee_probs, [0.5, 0.5])


def test_zero_prediction_weights_are_uniform(micro_vocab, three_turns):
    model = micro_model(micro_vocab, joint_prediction=True)
    model = _rebuilt(model, {"pred_spk.W": np.zeros((8, 4)), "pred_adr.W": np.zeros((8, 4))})
    pred = model.predict_interlocutors(three_turns)
    assert np.allclose(pred.speaker_probs, 1.0 / 3.0)
    assert np.allclose(pred.addressee_probs, 1.0 / 3.0)


def test_zero_model_prediction_nll(micro_vocab, three_turns):
    config = micro_config(micro_vocab, joint_prediction=True)
    model = ICREDModel(config, ModelParams.zeros(config), micro_vocab)
    assert model.prediction_nll(three_turns).item() == pytest.approx(2.0 * np.log(3.0), abs=1e-12)


def test_prediction_needs_heads(micro, three_turns):
    with pytest.raises(ContractError):
        micro.predict_interlocutors(three_turns)


def test_zero_prediction_weight_matches_forward_loss(micro_vocab, instance):
    model = micro_model(micro_vocab, joint_prediction=True, prediction_weight=0.0)
    assert model.joint_loss(instance).item() == model.forward_loss(instance).item()


def test_joint_loss_adds_prediction_nll(micro_vocab, instance):
    model = micro_model(micro_vocab, joint_prediction=True, prediction_weight=0.5)
    expected = model.forward_loss(instance).item() + 0.5 * model.prediction_nll(instance).item()
    assert model.joint_loss(instance).item() == pytest.approx(expected)


# =============================================================================
# Gradients
# =============================================================================

@pytest.mark.parametrize("joint", [False, True])
@pytest.mark.parametrize("variant", list(VARIANTS))
def test_gradients_match_finite_differences(micro_vocab, instance, variant, joint):
    config = variant_config(micro_config(micro_vocab, joint_prediction=joint), variant)
    model = ICREDModel(config, ModelParams.initialize(config, seed=21), micro_vocab)
    loss_fn = (lambda: model.joint_loss(instance)) if joint else (lambda: model.forward_loss(instance))

    report = grad_check(loss_fn, model.params.values, tolerance=1e-4, max_coords_per_param=4, seed=1)
    assert report.ok, report.flagged[:5]


def test_gradients_with_empty_memory(micro_vocab, silent_target):
    model = micro_model(micro_vocab, seed=8)
    report = grad_check(lambda: model.forward_loss(silent_target), model.params.values, max_coords_per_param=4)
    assert report.ok, report.flagged[:5]


# =============================================================================
# Variants and word vectors
# =============================================================================

def test_variants_round_trip(micro_vocab):
    base = micro_config(micro_vocab)
    for name in VARIANTS:
        assert identify_variant(variant_config(base, name)) == name
    assert variant_config(base, "no_memory").memory_type == MemoryType.NONE
    assert identify_variant(base.model_copy(update={"use_speaker_vector": False, "use_addressee_vector": False})) is None
    with pytest.raises(ConfigError):
        variant_config(base, "bogus")


def test_load_word_vectors(tmp_path, micro):
    path = tmp_path / "vectors.txt"
    path.write_text("answer 1 2 3 4\nunseen 5 6 7 8\n", encoding="utf-8")
    assert load_word_vectors(path, micro.vocab, micro.params) == 1
    assert np.array_equal(micro.params.embedding.data[micro.vocab.index("answer")], [1, 2, 3, 4])

    path.write_text("answer 1 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_word_vectors(path, micro.vocab, micro.params)
    with pytest.raises(ConfigError):
        load_word_vectors(tmp_path / "none.txt", micro.vocab, micro.params)
