"""Checkpoint files and training-state persistence."""

from icred.storage.checkpoint import (
    CheckpointStorage,
    TrainingState,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
