"""Optimization loop, dataset splits, multi-seed selection, and evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .autodiff import Tape, backward
from .autodiff.tensor import Parameter
from .model import ModelConfig, SCLModel
from .rpm.dataset import Dataset


@dataclass
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    seeds: int = 5
    early_stop_patience: int = 10
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    The decay multiplies parameters by (1 - lr * wd) after the Adam step,
    so with zero gradients the parameter norm decays geometrically and the
    moment estimates stay untouched.
    """

    def __init__(self, params: Sequence[Parameter], lr: float = 0.005,
                 weight_decay: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.tensor.data) for p in self.params]
        self.v = [np.zeros_like(p.tensor.data) for p in self.params]

    @classmethod
    def from_config(cls, params: Sequence[Parameter], cfg: TrainConfig) -> "Adam":
        return cls(params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        decay = 1.0 - self.lr * self.weight_decay
        for i, p in enumerate(self.params):
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.tensor.data)
            elif not np.all(np.isfinite(g)):
                raise RuntimeError(f"non-finite gradient on {p.name}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.tensor.data.dtype)
            if self.weight_decay != 0.0:
                p.tensor.data *= p.tensor.data.dtype.type(decay)


def split_dataset(dataset: Union[Dataset, int], ratios: Sequence[float],
                  seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint, exhaustive (train, valid, test) index arrays.

    The shuffle is seed-deterministic. Datasets that declare fixed sections
    (different filters for train/valid vs test) keep their section membership;
    ratios are ignored for those.
    """
    if isinstance(dataset, Dataset):
        n = len(dataset)
        sections = dataset.sections
        if sections is not None:
            bounds = np.cumsum([0] + list(sections))
            return tuple(np.arange(bounds[i], bounds[i + 1]) for i in range(3))
    else:
        n = int(dataset)
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"ratios must be three values summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0])
    n_valid = int(n * (ratios[0] + ratios[1])) - n_train
    if n_train == 0 or n_valid == 0 or n_train + n_valid >= n:
        raise ValueError(f"empty split for n={n} with ratios {ratios}")
    return (perm[:n_train], perm[n_train:n_train + n_valid],
            perm[n_train + n_valid:])


@dataclass
class Metrics:
    seed: int
    train_loss: list[float] = field(default_factory=list)
    valid_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_acc: float = 0.0
    test_acc: float = 0.0
    wall_clock_s: Optional[float] = None

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1] if self.train_loss else float("inf")

    def to_json_obj(self) -> dict:
        return {
            "seed": self.seed,
            "train_loss": self.train_loss,
            "valid_acc": self.valid_acc,
            "best_epoch": self.best_epoch,
            "best_valid_acc": self.best_valid_acc,
            "test_acc": self.test_acc,
            "wall_clock_s": self.wall_clock_s,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Metrics":
        return cls(**obj)


def evaluate(model: SCLModel, dataset: Dataset, indices: Sequence[int],
             mask_context: bool = False, batch_size: int = 128) -> float:
    """Fraction of problems where the top-scoring candidate is the answer."""
    indices = np.asarray(indices)
    answers = dataset.answers()[indices]
    correct = 0
    for lo in range(0, len(indices), batch_size):
        idx = indices[lo:lo + batch_size]
        batch = dataset.batch_images(idx, mask_context=mask_context)
        scores = model.scores(batch).data
        correct += int((scores.argmax(axis=1) == answers[lo:lo + len(idx)]).sum())
    return correct / len(indices)


def train(model: SCLModel, dataset: Dataset, cfg: TrainConfig, seed: int,
          train_idx: np.ndarray, valid_idx: np.ndarray,
          test_idx: Optional[np.ndarray] = None,
          epoch_hook: Optional[Callable[[int, SCLModel], None]] = None,
          log: Optional[Callable[[str], None]] = None) -> Metrics:
    """Minimize the 8-way cross entropy; keep the best-validation parameters.

    The model is left loaded with the best-validation state. epoch_hook runs
    after each epoch's validation with the current (not best) parameters.
    """
    t0 = time.monotonic()
    rng = np.random.default_rng([seed, 1])
    opt = Adam.from_config(model.parameters(), cfg)
    metrics = Metrics(seed=seed)
    best_state: Optional[dict] = None
    since_best = 0
    answers = dataset.answers()

    for epoch in range(cfg.epochs):
        order = rng.permutation(np.asarray(train_idx))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = dataset.batch_images(idx)
            targets = answers[idx]
            model.zero_grad()
            with Tape() as tape:
                loss = model.loss(batch, targets)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            backward(tape, loss)
            opt.step()
            losses.append(value)
        metrics.train_loss.append(float(np.mean(losses)))

        acc = evaluate(model, dataset, valid_idx)
        metrics.valid_acc.append(acc)
        if log:
            log(f"seed {seed} epoch {epoch}: loss {metrics.train_loss[-1]:.4f} "
                f"valid {acc:.4f}")
        if epoch_hook is not None:
            epoch_hook(epoch, model)
        if acc > metrics.best_valid_acc:
            metrics.best_valid_acc = acc
            metrics.best_epoch = epoch
            best_state = model.state_dict()
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience > 0 and since_best >= cfg.early_stop_patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    if test_idx is not None and len(test_idx):
        metrics.test_acc = evaluate(model, dataset, test_idx)
    metrics.wall_clock_s = None if cfg.deterministic else time.monotonic() - t0
    return metrics


def select_best(runs: Sequence[Metrics]) -> int:
    """Index of the winning run: highest validation accuracy, ties broken by
    lower final train loss, then lower seed."""
    if not runs:
        raise ValueError("select_best: no runs")
    return min(range(len(runs)),
               key=lambda i: (-runs[i].best_valid_acc,
                              runs[i].final_train_loss, runs[i].seed))


def train_runs(model_cfg: ModelConfig, dataset: Dataset, cfg: TrainConfig,
               epoch_hook_for: Optional[Callable[[int], Optional[Callable]]] = None,
               log: Optional[Callable[[str], None]] = None,
               split_seed: Optional[int] = None
               ) -> tuple[SCLModel, list[Metrics], int]:
    """Train cfg.seeds independent models and return the best-validated one.

    The split is determined by the dataset (its manifest seed unless
    split_seed overrides), so every run sees identical partitions.
    """
    seed = dataset.manifest["seed"] if split_seed is None else split_seed
    train_idx, valid_idx, test_idx = split_dataset(dataset, cfg.split, seed)
    runs: list[Metrics] = []
    states: list[dict] = []
    for model_seed in range(cfg.seeds):
        model = SCLModel(model_cfg, seed=model_seed)
        hook = epoch_hook_for(model_seed) if epoch_hook_for is not None else None
        metrics = train(model, dataset, cfg, model_seed, train_idx, valid_idx,
                        test_idx, epoch_hook=hook, log=log)
        runs.append(metrics)
        states.append(model.state_dict())
    best = select_best(runs)
    winner = SCLModel(model_cfg, seed=best)
    winner.load_state_dict(states[best])
    return winner, runs, best
