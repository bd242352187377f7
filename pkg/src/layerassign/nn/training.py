"""Loss, optimizer, learning-rate schedules, training loop and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .network import Network, NumericError

__all__ = [
    "TrainConfig",
    "TrainSummary",
    "DivergenceError",
    "SGD",
    "lr_at",
    "softmax_cross_entropy",
    "iterate_minibatches",
    "train_step",
    "train",
    "evaluate",
    "predict",
    "to_float",
]

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or activation."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None, who: str | None = None):
        super().__init__(message)
        self.epoch, self.step, self.who = epoch, step, who


@dataclass
class TrainConfig:
    """SGD/Nesterov training schedule.

    ``lr_schedule`` is ``"multistep"`` (multiply by ``lr_factor`` at each
    epoch in ``milestones``) or ``"linear"`` (per-iteration linear decay from
    ``base_lr`` to zero over the whole run).
    """

    base_lr: float = 0.05
    lr_schedule: str = "multistep"
    milestones: tuple[int, ...] = ()
    lr_factor: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 10
    rng_seed: int = 0
    augment_flip: bool = False
    augment_crop: bool = False

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if not self.base_lr >= 0:
            raise ValueError("base_lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr_schedule not in ("multistep", "linear"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class TrainSummary:
    epoch_losses: list[float] = field(default_factory=list)
    val_accuracy: float | None = None
    steps: int = 0


def lr_at(cfg: TrainConfig, epoch: int, it: int, iters_per_epoch: int) -> float:
    """Learning rate for iteration ``it`` of ``epoch`` (both 0-based)."""
    if cfg.lr_schedule == "linear":
        total = max(cfg.epochs * iters_per_epoch, 1)
        return cfg.base_lr * (1.0 - (epoch * iters_per_epoch + it) / total)
    drops = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.base_lr * cfg.lr_factor ** drops


class SGD:
    """SGD with Nesterov momentum and L2 weight decay.

    Momentum buffers are keyed by parameter identity, so one optimizer can
    serve many networks that share parameter arrays; a step only touches the
    parameters of the network it is given.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0, nesterov: bool = True):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self._velocity: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, net: Network, lr: float) -> None:
        mu, wd = self.momentum, self.weight_decay
        for layer in net.layers():
            for name, p in layer.params.items():
                g = layer.grads[name]
                if wd:
                    g = g + wd * p
                entry = self._velocity.get(id(p))
                if entry is None or entry[0] is not p:
                    v = g.astype(p.dtype, copy=True)
                    self._velocity[id(p)] = (p, v)
                else:
                    v = entry[1]
                    v *= mu
                    v += g
                upd = g + mu * v if self.nesterov else v
                p -= (lr * upd).astype(p.dtype, copy=False)
            layer.grads = {}


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, labels], 1e-300)).mean())
    grad = probs
    grad[rows, labels] -= 1.0
    return loss, grad / n


def to_float(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map uint8 pixels onto [-1, 1]; float inputs pass through."""
    if images.dtype == np.uint8:
        return (images.astype(dtype) / 127.5 - 1.0).astype(dtype)
    return images.astype(dtype, copy=False)


def _augment(xb: np.ndarray, rng: np.random.Generator, flip: bool, crop: bool) -> np.ndarray:
    if flip:
        mask = rng.random(len(xb)) < 0.5
        xb = xb.copy()
        xb[mask] = xb[mask, :, :, ::-1]
    if crop:
        n, c, h, w = xb.shape
        padded = np.zeros((n, c, h + 8, w + 8), dtype=xb.dtype)
        padded[:, :, 4:-4, 4:-4] = xb
        offs = rng.integers(0, 9, size=(n, 2))
        xb = np.stack([padded[i, :, dy:dy + h, dx:dx + w] for i, (dy, dx) in enumerate(offs)])
    return xb


def iterate_minibatches(x: np.ndarray, y: np.ndarray, batch_size: int, rng: np.random.Generator,
                        flip: bool = False, crop: bool = False) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One shuffled epoch of minibatches; the last short batch is kept."""
    order = rng.permutation(len(x))
    for start in range(0, len(x), batch_size):
        idx = order[start:start + batch_size]
        xb = to_float(x[idx])
        if flip or crop:
            xb = _augment(xb, rng, flip, crop)
        yield xb, y[idx]


def train_step(net: Network, xb: np.ndarray, yb: np.ndarray, opt: SGD, lr: float) -> float:
    """Forward, backward and one optimizer update; returns the batch loss."""
    try:
        logits = net.forward(xb, train=True)
    except NumericError as exc:
        raise DivergenceError(str(exc), who=str(net.assignment)) from exc
    loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), yb)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss", who=str(net.assignment))
    net.backward(dlogits.astype(net.dtype))
    opt.step(net, lr)
    return loss


def n_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def train(net: Network, data, cfg: TrainConfig, opt: SGD | None = None) -> TrainSummary:
    """Train ``net`` on ``data.train_x/train_y``; report accuracy on the val split if present."""
    if len(data.train_x) == 0:
        raise ValueError("training set is empty")
    opt = opt or SGD(cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.rng_seed)
    iters = n_batches(len(data.train_x), cfg.batch_size)
    summary = TrainSummary()
    for epoch in range(cfg.epochs):
        total = 0.0
        batches = iterate_minibatches(data.train_x, data.train_y, cfg.batch_size, rng,
                                      cfg.augment_flip, cfg.augment_crop)
        for it, (xb, yb) in enumerate(batches):
            try:
                loss = train_step(net, xb, yb, opt, lr_at(cfg, epoch, it, iters))
            except DivergenceError as exc:
                exc.epoch, exc.step = epoch, it
                raise DivergenceError(f"{exc} at epoch {epoch} step {it}", epoch, it, exc.who) from exc
            total += loss * len(yb)
            summary.steps += 1
        summary.epoch_losses.append(total / len(data.train_x))
        log.debug("epoch %d loss %.4f", epoch, summary.epoch_losses[-1])
    if getattr(data, "val_x", None) is not None and len(data.val_x):
        summary.val_accuracy = evaluate(net, data.val_x, data.val_y)
    return summary


def predict(net: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode logits for ``x``."""
    out = [net.forward(to_float(x[i:i + batch_size], net.dtype)) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy in inference mode."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred = predict(net, x, batch_size).argmax(axis=1)
    return float((pred == np.asarray(y)).mean())
