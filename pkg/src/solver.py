"""
Training orchestrator.

Adam over every network tensor, mini-batches with per-example gradients summed
in a fixed order (optionally computed on a thread pool), validation L1 on
waveforms and the halve-the-learning-rate-and-restart schedule.
"""

import time
import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from engines.triple_engine import AmssTriple
from errors import NonFiniteLoss, TrainingError
from network.amss_net import (
    ModelParams, backward_spectrogram, forward, forward_spectrogram, spectrogram_loss, triple_features,
)

logger = logging.getLogger(__name__)


class AdamOptimizer:
    """
    Adam with first/second moments kept per named tensor.

    Args:
        lr: Learning rate
        beta1: Exponential decay for the first moment
        beta2: Exponential decay for the second moment
        eps: Numerical stability term
    """
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, tensors: "OrderedDict[str, np.ndarray]",
             grads: "OrderedDict[str, np.ndarray]") -> "OrderedDict[str, np.ndarray]":
        """Returns updated copies; the input tensors are left untouched."""
        self.t += 1
        updated: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in tensors.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1 - self.beta2) * (g ** 2)
            self.m[name], self.v[name] = m, v

            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            updated[name] = value - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


@dataclass
class TrainResult:
    params: ModelParams
    losses: List[float]
    val_losses: List[float] = field(default_factory=list)
    restarts: List[int] = field(default_factory=list)
    best_step: int = 0
    elapsed_s: float = 0.0


class Solver:
    """
    Orchestrator Class.
    Owns the parameters, the optimizer state and the per-triple feature cache for one training run.
    """
    def __init__(self, params: ModelParams, settings: Optional[config.TrainSettings] = None, jobs: int = 1) -> None:
        settings = settings or config.get_config().training
        self.settings = settings
        self.params = params
        self.jobs = max(1, jobs)
        self.optimizer = AdamOptimizer(settings.lr, settings.beta1, settings.beta2, settings.eps)
        self.best_params = params.copy()
        self.best_score = np.inf
        self._features: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # --- GRADIENTS ---

    def _example(self, index: int, triple: AmssTriple) -> Tuple[float, "OrderedDict[str, np.ndarray]"]:
        if index not in self._features:
            self._features[index] = triple_features(triple, self.params)
        X0, target, ids = self._features[index]
        Y, cache = forward_spectrogram(X0, ids, self.params)
        loss, dY = spectrogram_loss(Y, target)
        _, grads = backward_spectrogram(dY, cache, self.params)
        return loss, grads

    def batch_gradients(self, triples: Sequence[AmssTriple],
                        indices: Sequence[int]) -> Tuple[float, "OrderedDict[str, np.ndarray]"]:
        """Mean loss and mean gradient over the batch, summed in index order."""
        jobs = [(int(i), triples[int(i)]) for i in indices]
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(lambda job: self._example(*job), jobs))
        else:
            results = [self._example(*job) for job in jobs]

        total = 0.0
        summed: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.zeros_like(value)) for name, value in self.params.tensors.items()
        )
        for loss, grads in results:
            total += loss
            for name in summed:
                summed[name] += grads[name]
        n = len(results)
        for name in summed:
            summed[name] /= n
        return total / n, summed

    def step(self, triples: Sequence[AmssTriple], indices: Sequence[int], step: int) -> float:
        """
        One Adam update on the given batch; returns the batch loss before the update.

        Raises:
            NonFiniteLoss: If the loss or any gradient is NaN/inf
        """
        loss, grads = self.batch_gradients(triples, indices)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NonFiniteLoss(step, loss)
        self.params = self.params.with_tensors(self.optimizer.step(self.params.tensors, grads))
        return loss

    # --- VALIDATION & SCHEDULE ---

    def validation_l1(self, triples: Sequence[AmssTriple]) -> float:
        """Mean absolute waveform error of the current model over the held-out triples."""
        errors = [
            float(np.mean(np.abs(forward(t.input, t.description, self.params).samples - t.target.samples)))
            for t in triples
        ]
        return float(np.mean(errors))

    def _track_best(self, score: float, params: ModelParams) -> bool:
        if score < self.best_score:
            self.best_score = score
            self.best_params = params.copy()
            return True
        return False

    def halve_and_restart(self) -> None:
        """Halves the learning rate, clears Adam's moments and resumes from the best parameters seen so far."""
        self.optimizer.lr /= 2.0
        self.optimizer.reset()
        self.params = self.best_params.copy()
        logger.info(f"Restarting from best checkpoint (score {self.best_score:.6f}) with lr={self.optimizer.lr:.2e}")

    # --- TRAINING LOOP ---

    def train(
        self,
        triples: Sequence[AmssTriple],
        steps: Optional[int] = None,
        lr: Optional[float] = None,
        batch_size: Optional[int] = None,
        validation: Optional[Sequence[AmssTriple]] = None,
        restart_at: Sequence[int] = (),
        seed: int = 0,
        log_every: int = 10,
    ) -> TrainResult:
        """
        Minimizes the spectrogram L2 loss.

        Args:
            triples: Training triples
            steps: Number of Adam updates (config default when None)
            lr: Learning rate (config default when None)
            batch_size: Triples per update; the whole set in fixed order when >= len(triples)
            validation: Held-out triples scored by waveform L1 after every log interval
            restart_at: Steps at which halve_and_restart is applied
            seed: Seeds the batch sampler

        Returns:
            TrainResult with the final parameters and the per-step loss record

        Raises:
            TrainingError: On an empty dataset, non-positive steps/batch or an lr outside config.LR_RANGE
        """
        if not triples:
            raise TrainingError("cannot train on an empty dataset")
        steps = self.settings.steps if steps is None else steps
        batch_size = self.settings.batch_size if batch_size is None else batch_size
        if steps <= 0 or batch_size <= 0:
            raise TrainingError(f"steps and batch size must be positive, got steps={steps} batch={batch_size}")
        if lr is not None:
            low, high = config.LR_RANGE
            # lr = 0 freezes the parameters (a loss-tracking dry run).
            if lr != 0.0 and not low <= lr <= high:
                raise TrainingError(f"learning rate must be 0 or lie in [{low:g}, {high:g}], got {lr}")
            self.optimizer.lr = lr
        rng = np.random.default_rng(seed)
        restart_steps = set(int(s) for s in restart_at)

        result = TrainResult(self.params, [])
        start = time.perf_counter()
        for step in range(steps):
            if step in restart_steps:
                self.halve_and_restart()
                result.restarts.append(step)

            if batch_size >= len(triples):
                indices = list(range(len(triples)))
            else:
                indices = sorted(rng.choice(len(triples), size=batch_size, replace=False).tolist())
            before = self.params
            loss = self.step(triples, indices, step)
            result.losses.append(loss)

            last = step == steps - 1
            if validation and (step % log_every == 0 or last):
                val = self.validation_l1(validation)
                result.val_losses.append(val)
                if self._track_best(val, self.params):
                    result.best_step = step
            elif not validation and self._track_best(loss, before):
                result.best_step = step

            if step % log_every == 0 or last:
                logger.info(f"step {step + 1}/{steps} | loss {loss:.6f} | lr {self.optimizer.lr:.2e}")

        result.params = self.params
        result.elapsed_s = time.perf_counter() - start
        logger.info(f"Training finished: {steps} steps in {result.elapsed_s:.1f}s")
        return result
