"""Masked per-pixel loss, SGD with momentum, and the training loop.

Two labeling strategies are supported. Under ``fully-bp`` every pixel must
carry a class label and every pixel contributes to the loss. Under
``ignore-bound`` pixels labeled with the ignore sentinel contribute
neither loss nor gradient; their score gradient is exactly zero, not
merely small.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rng
from .errors import ArgumentError, NumericsError, StrategyError
from .fcn import Network
from .volume import LabelMap, MultiChannelVolume


class Strategy(str, Enum):
    FULLY_BP = "fully-bp"
    IGNORE_BOUND = "ignore-bound"


class LossMode(str, Enum):
    SUM = "sum"
    MEAN = "mean"


#: Named hyperparameter bundles: ``desk`` trains from scratch in seconds;
#: ``reference`` is the published fine-tuning combination (summed loss,
#: lr 1e-14, momentum 0.99, weight decay 5e-4).
HPARAMS = {
    "desk": {"loss_mode": LossMode.MEAN, "learning_rate": 1e-2, "momentum": 0.9,
             "weight_decay": 5e-4},
    "reference": {"loss_mode": LossMode.SUM, "learning_rate": 1e-14, "momentum": 0.99,
                  "weight_decay": 5e-4},
}


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy = Strategy.IGNORE_BOUND
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 1000
    loss_mode: LossMode = LossMode.MEAN
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ArgumentError("weight_decay must be >= 0")
        if self.iterations < 1 or self.eval_every < 1:
            raise ArgumentError("iterations and eval_every must be >= 1")


@dataclass(frozen=True)
class LossReport:
    iteration: int
    train_loss: float
    test_loss: float | None
    train_pixels: int
    test_pixels: int | None


def contributing_pixels(labels: LabelMap) -> int:
    return int((labels.labels != labels.ignore_index).sum())


def masked_cross_entropy(
    scores: np.ndarray,
    labels: LabelMap,
    strategy: Strategy = Strategy.IGNORE_BOUND,
    loss_mode: LossMode = LossMode.SUM,
) -> tuple[float, np.ndarray]:
    """Multinomial logistic loss over non-ignored pixels.

    ``scores`` must be post-softmax (n_classes, H, W). Returns the loss and
    its gradient w.r.t. the scores; entries at ignored pixels are exactly
    zero. ``sum`` mode adds per-pixel terms; ``mean`` divides by the
    contributing pixel count.
    """
    strategy = Strategy(strategy)
    loss_mode = LossMode(loss_mode)
    if scores.ndim != 3:
        raise ArgumentError(f"scores must be (n_classes, H, W), got {scores.shape}")
    if scores.shape[1:] != labels.labels.shape:
        raise ArgumentError(
            f"scores spatial {scores.shape[1:]} != labels {labels.labels.shape}"
        )
    lab = labels.labels
    ign = labels.ignore_index
    contributing = lab != ign
    if strategy is Strategy.FULLY_BP and not contributing.all():
        raise StrategyError(
            "labels contain ignore pixels; fully-bp requires a fully labeled map"
        )
    rows, cols = np.nonzero(contributing)
    grad = np.zeros_like(scores)
    if rows.size == 0:
        return 0.0, grad
    cls = lab[rows, cols].astype(np.intp)
    if cls.max() >= scores.shape[0]:
        raise ArgumentError(
            f"label {cls.max()} out of range for {scores.shape[0]} score channels"
        )
    ys = scores[cls, rows, cols]
    loss = float(-np.log(ys.astype(np.float64)).sum())
    grad[cls, rows, cols] = -1.0 / ys
    if loss_mode is LossMode.MEAN:
        loss /= rows.size
        grad /= rows.size
    return loss, grad


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray] | None,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """One SGD step; weight decay applies to ``.w`` tensors, not biases.

    Update rule per tensor: g' = grad + wd * param;
    v <- momentum * v - lr * g'; param <- param + v. Returns fresh arrays
    so earlier snapshots (and forward caches) stay valid.
    """
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    new_params = {}
    new_velocity = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in {name}")
        if cfg.weight_decay and name.endswith(".w"):
            g = g + cfg.weight_decay * p
        v = cfg.momentum * velocity[name] - cfg.learning_rate * g
        new_params[name] = p + v
        new_velocity[name] = v
    return new_params, new_velocity


def _evaluate_loss(net: Network, sample: tuple[MultiChannelVolume, LabelMap],
                   cfg: TrainConfig) -> float:
    scores, _ = net.forward(sample[0].data)
    loss, _ = masked_cross_entropy(scores, sample[1], cfg.strategy, cfg.loss_mode)
    return loss


def train(
    dataset: list[tuple[MultiChannelVolume, LabelMap]],
    test: tuple[MultiChannelVolume, LabelMap] | None,
    net: Network,
    cfg: TrainConfig,
    checkpoint_iters: tuple[int, ...] = (),
    on_checkpoint=None,
) -> tuple[Network, list[LossReport]]:
    """Single-sample SGD over a seeded per-epoch shuffle of ``dataset``.

    Emits a :class:`LossReport` every ``eval_every`` iterations and at the
    final one. A non-finite loss or gradient raises
    :class:`NumericsError` carrying the iteration index and the partial
    history.
    """
    if not dataset:
        raise ArgumentError("dataset is empty")
    for vol, lab in dataset:
        if vol.channels != net.cfg.input_channels:
            raise ArgumentError(
                f"sample has {vol.channels} channels, network expects "
                f"{net.cfg.input_channels}"
            )
        if (vol.height, vol.width) != (lab.height, lab.width):
            raise ArgumentError("volume and label spatial dims differ")

    shuffle = rng.stream(cfg.seed, rng.SHUFFLE)
    order: list[int] = []
    velocity = None
    history: list[LossReport] = []
    checkpoints = set(checkpoint_iters)
    test_pixels = contributing_pixels(test[1]) if test else None

    for it in range(1, cfg.iterations + 1):
        if not order:
            order = list(shuffle.permutation(len(dataset)))
        vol, lab = dataset[order.pop(0)]
        scores, cache = net.forward(vol.data)
        loss, grad_scores = masked_cross_entropy(scores, lab, cfg.strategy, cfg.loss_mode)
        if not np.isfinite(loss):
            raise NumericsError(f"non-finite loss at iteration {it}", iteration=it,
                                history=history)
        grads, _ = net.backward(cache, grad_scores)
        try:
            net.params, velocity = sgd_momentum_step(net.params, grads, velocity, cfg)
        except NumericsError as exc:
            raise NumericsError(f"{exc} at iteration {it}", iteration=it,
                                history=history) from exc
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            test_loss = _evaluate_loss(net, test, cfg) if test else None
            history.append(
                LossReport(it, loss, test_loss, contributing_pixels(lab), test_pixels)
            )
        if it in checkpoints and on_checkpoint is not None:
            on_checkpoint(it, net)
    return net, history


def predict(net: Network, v: MultiChannelVolume) -> LabelMap:
    """Argmax class per pixel; ties break toward the lowest class index."""
    scores, _ = net.forward(v.data)
    return LabelMap(np.argmax(scores, axis=0).astype(np.uint8), n_classes=net.cfg.n_classes)
