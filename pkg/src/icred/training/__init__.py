"""Training loop, evaluation loss and resumable runs."""

from icred.training.trainer import Trainer, TrainResult, evaluate_loss, train
