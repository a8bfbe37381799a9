"""The ICRED network, its parameters, decoding and ablation variants."""

from icred.model.generation import GenerationResult, beam_decode, generate, greedy_decode
from icred.model.network import (
    AddresseeMemory,
    ContextEncoding,
    DecoderState,
    ICREDModel,
    InterlocutorMatrix,
    InterlocutorPrediction,
    UtteranceEncoding,
    uniform_loss,
)
from icred.model.params import ModelParams, load_word_vectors, param_shapes
from icred.model.variants import LABELS, VARIANTS, identify_variant, variant_config
