"""
Ablation variants: each is a set of ModelConfig overrides.
"""

from typing import Any, Dict, Optional

from icred.config import MemoryType, ModelConfig
from icred.errors import ConfigError

VARIANTS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "no_memory": {"memory_type": MemoryType.NONE},
    "no_speaker_vector": {"use_speaker_vector": False},
    "no_addressee_vector": {"use_addressee_vector": False},
    "memory_all": {"memory_type": MemoryType.ALL},
    "memory_latest": {"memory_type": MemoryType.LATEST},
    "memory_speaker": {"memory_type": MemoryType.SPEAKER},
}

LABELS = {
    "full": "ICRED",
    "no_memory": "w/o Adr_Mem",
    "no_speaker_vector": "w/o Ctx_Spk_Vec",
    "no_addressee_vector": "w/o Ctx_Adr_Vec",
    "memory_all": "All utterance memory",
    "memory_latest": "Latest memory",
    "memory_speaker": "Speaker memory",
}

COMPONENT_ABLATIONS = ("full", "no_memory", "no_speaker_vector", "no_addressee_vector")
MEMORY_TYPES = ("full", "memory_all", "memory_latest", "memory_speaker", "no_memory")


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """
    Apply a variant's overrides to ``base`` (the base should be the full model).

    Raises:
        ConfigError: Unknown variant
    """
    if name not in VARIANTS:
        raise ConfigError(f"Unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    overrides = {
        "memory_type": MemoryType.ADDRESSEE,
        "use_speaker_vector": True,
        "use_addressee_vector": True,
        **VARIANTS[name],
    }
    return base.model_copy(update=overrides)


def identify_variant(config: ModelConfig) -> Optional[str]:
    """Name of the variant ``config`` realizes, or None for other combinations."""
    for name in VARIANTS:
        if variant_config(config, name) == config:
            return name
    return None
