"""
Mini-batch training loop for ICRED.

Each instance of a batch builds its own tape; tapes may run on a thread pool
and their gradients are summed in batch order, so results do not depend on
scheduling. The L2 term is applied once per batch.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from icred.config import TrainConfig
from icred.corpus.models import ContextInstance
from icred.errors import DomainError, NumericalError
from icred.model.network import ICREDModel
from icred.storage.checkpoint import CheckpointStorage, TrainingState
from icred.tensor import Adam, backward

logger = logging.getLogger(__name__)

CurveRow = Tuple[int, float, Optional[float]]


@dataclass
class TrainResult:
    """Outcome of a training run."""
    steps: int
    curve: List[CurveRow] = field(default_factory=list)
    best_dev: Optional[float] = None
    best_step: Optional[int] = None
    stopped_early: bool = False
    best_arrays: Optional[Dict[str, np.ndarray]] = None


class Trainer:
    """
    Adam training with early stopping on dev NLL.

    Usage:
        trainer = Trainer(model, train_split, dev_split, TrainConfig(max_steps=500))
        result = trainer.train()
    """

    def __init__(
        self,
        model: ICREDModel,
        train: Sequence[ContextInstance],
        dev: Sequence[ContextInstance],
        config: TrainConfig,
        storage: Optional[CheckpointStorage] = None
    ):
        """
        Args:
            model: Model whose parameters are optimized in place
            train: Training instances
            dev: Development instances for early stopping
            config: Loop hyperparameters
            storage: Where best/last checkpoints go (defaults to ``config.checkpoint_dir``)

        Raises:
            DomainError: Empty train or dev split
        """
        if not train:
            raise DomainError("training split is empty")
        if not dev:
            raise DomainError("dev split is empty")
        self.model = model
        self.train_split = list(train)
        self.dev_split = list(dev)
        self.config = config
        if storage is None and config.checkpoint_dir is not None:
            storage = CheckpointStorage(config.checkpoint_dir)
        self.storage = storage

        self.optimizer = Adam(model.params.values, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.rng = np.random.default_rng(config.seed)
        self.state = TrainingState()
        self._best_arrays: Optional[Dict[str, np.ndarray]] = None

    # --- resume ---
    def restore(self, state: TrainingState, optimizer_arrays: Dict[str, np.ndarray]) -> None:
        """Continue from saved training state (parameters must already be loaded)."""
        self.state = state.model_copy(deep=True)
        self.optimizer.load_state(optimizer_arrays, step=state.step)
        if state.rng_state:
            self.rng.bit_generator.state = json.loads(state.rng_state)
        logger.info(f"Resuming at step {state.step}")

    @classmethod
    def resume(
        cls,
        storage: CheckpointStorage,
        train: Sequence[ContextInstance],
        dev: Sequence[ContextInstance],
        config: TrainConfig
    ) -> "Trainer":
        """Rebuild a trainer from ``last.ckpt`` and its training-state sidecars."""
        model_config, params, vocab, state, adam = storage.load_last()
        trainer = cls(ICREDModel(model_config, params, vocab), train, dev, config, storage)
        trainer.restore(state, adam)
        return trainer

    # --- gradients ---
    def _instance_gradients(self, index: int) -> Tuple[float, Dict[str, np.ndarray]]:
        instance = self.train_split[index]
        try:
            loss = self.model.training_loss(instance, include_l2=False)
            grads = backward(loss, accumulate=False)
        except NumericalError as e:
            raise NumericalError(f"training instance {index}: {e}") from e
        return loss.item(), grads

    def _map(self, fn, items: Sequence):
        if self.config.workers <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            return list(executor.map(fn, items))

    def sample_batch(self) -> List[int]:
        n = len(self.train_split)
        return [int(i) for i in self.rng.choice(n, size=min(self.config.batch_size, n), replace=False)]

    def batch_gradients(self, batch: Sequence[int]) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        Mean loss and gradients over ``batch``, plus the L2 term.

        Raises:
            NumericalError: A tape or the reduced gradient is not finite
        """
        results = self._map(self._instance_gradients, batch)
        params = self.model.params.values
        size = len(batch)

        loss = sum(r[0] for r in results) / size
        grads = {name: np.zeros_like(p.data) for name, p in params.items()}
        for _, instance_grads in results:
            for name, g in instance_grads.items():
                grads[name] += g
        lam = self.model.config.l2_weight
        for name, p in params.items():
            grads[name] = grads[name] / size + 2.0 * lam * p.data
        if lam:
            loss += lam * float(sum(np.sum(p.data * p.data) for p in params.values()))

        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise NumericalError(f"non-finite loss or gradient for batch {list(batch)}")
        return loss, grads

    def _clip(self, grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        limit = self.config.max_grad_norm
        if limit is None:
            return grads
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
        if norm <= limit:
            return grads
        factor = limit / norm
        return {name: g * factor for name, g in grads.items()}

    def step(self) -> float:
        """One optimizer update; returns the batch loss."""
        loss, grads = self.batch_gradients(self.sample_batch())
        self.optimizer.step(self._clip(grads))
        self.optimizer.zero_grad()
        self.state.step += 1
        return loss

    # --- evaluation ---
    def evaluate_loss(self, split: Optional[Sequence[ContextInstance]] = None) -> float:
        """Mean per-token NLL over ``split`` (dev by default), L2 excluded."""
        split = self.dev_split if split is None else list(split)
        return evaluate_loss(self.model, split, threads=self.config.workers)

    def _record_eval(self, dev_nll: float) -> None:
        s = self.state
        if s.best_dev is None or dev_nll < s.best_dev:
            s.best_dev, s.best_step, s.bad_evals = dev_nll, s.step, 0
            self._best_arrays = {k: np.array(v) for k, v in self.model.params.arrays().items()}
            if self.storage is not None:
                self.storage.save_best(self.model.params, self.model.config, self.model.vocab)
        else:
            s.bad_evals += 1
            if s.bad_evals >= self.config.patience:
                s.stopped = True
        logger.info(
            f"step {s.step}: train {s.curve[-1][1]:.4f}, dev NLL {dev_nll:.4f} "
            f"(best {s.best_dev:.4f} at step {s.best_step})"
        )

    def save_last(self) -> None:
        if self.storage is None:
            return
        self.state.rng_state = json.dumps(self.rng.bit_generator.state)
        self.storage.save_last(
            self.model.params, self.model.config, self.model.vocab, self.state, self.optimizer.state_arrays()
        )
        self.storage.write_curve(self.state.curve)

    def train(self) -> TrainResult:
        """
        Run until ``max_steps`` or until dev NLL fails to improve for
        ``patience`` consecutive evaluations.
        """
        cfg = self.config
        progress = tqdm(
            range(self.state.step, cfg.max_steps),
            desc="train",
            disable=not cfg.show_progress,
            ncols=80
        )
        for _ in progress:
            if self.state.stopped:
                break
            loss = self.step()
            dev_nll = None
            if self.state.step % cfg.eval_every == 0:
                dev_nll = self.evaluate_loss()
            self.state.curve.append((self.state.step, loss, dev_nll))
            if dev_nll is not None:
                self._record_eval(dev_nll)
                self.save_last()
            progress.set_postfix(loss=f"{loss:.3f}")

        if self.state.stopped:
            logger.info(f"Early stop at step {self.state.step} (patience {cfg.patience})")
        self.save_last()
        if self.storage is not None and not self.storage.best_path.exists():
            self.storage.save_best(self.model.params, self.model.config, self.model.vocab)

        return TrainResult(
            steps=self.state.step,
            curve=list(self.state.curve),
            best_dev=self.state.best_dev,
            best_step=self.state.best_step,
            stopped_early=self.state.stopped,
            best_arrays=self._best_arrays
        )


def evaluate_loss(model: ICREDModel, split: Sequence[ContextInstance], threads: int = 1) -> float:
    """
    Mean over instances of the per-token NLL (no L2 term).

    Raises:
        DomainError: Empty split
    """
    if not split:
        raise DomainError("cannot evaluate an empty split")

    def one(instance: ContextInstance) -> float:
        return model.nll_loss(instance).item()

    if threads <= 1:
        values = [one(inst) for inst in split]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            values = list(executor.map(one, split))
    return float(sum(values) / len(values))


def train(
    model: ICREDModel,
    train_split: Sequence[ContextInstance],
    dev_split: Sequence[ContextInstance],
    config: TrainConfig,
    storage: Optional[CheckpointStorage] = None
) -> TrainResult:
    """Convenience wrapper around ``Trainer``."""
    return Trainer(model, train_split, dev_split, config, storage).train()
