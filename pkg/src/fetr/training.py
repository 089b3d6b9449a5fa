"""Loss, optimizers, learning-rate schedule, augmentation and the epoch loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .backbone import Network
from .data import ImageSet
from .errors import ConfigError, DataError, NonFiniteGradientError
from .metrics import RunMetrics, run_metrics, topk_accuracy
from .ops import log_softmax
from .tensor import Tensor, no_grad

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 48
    optimizer: str = "adam"
    lr: float = 1e-4
    weight_decay: float = 1e-5
    warmup_epochs: int = 0
    lr_schedule: str = "cosine"
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    random_crop: bool = True
    hflip: bool = True
    crop_scale_min: float = 0.7
    eval_crop_ratio: float = 0.875

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.lr_schedule != "cosine":
            raise ConfigError(f"only the cosine schedule is supported, got {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# loss --------------------------------------------------------------------------


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise DataError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"label outside [0, {K})")
    onehot = np.zeros((B, K), dtype=logits.dtype)
    onehot[np.arange(B), labels] = -1.0 / B
    return (log_softmax(logits, axis=-1) * Tensor(onehot)).sum()


# optimizers -------------------------------------------------------------------

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    buffers: dict = field(default_factory=dict)  # "<param>/<m|v|momentum>" -> ndarray


def decays(name: str, param: Tensor) -> bool:
    """Weight decay hits conv/FC weights only: not BN affines, biases or style encodings."""
    return param.ndim >= 2 and not name.endswith("cfc")


def check_gradients(params) -> None:
    for name, p in params:
        if p.grad is not None:
            bad = int((~np.isfinite(p.grad.data)).sum())
            if bad:
                raise NonFiniteGradientError(name, bad)


def optimizer_step(params, state: OptimizerState, config: TrainConfig, lr: float) -> None:
    """Update ``params`` (``(name, Tensor)`` pairs) in place from their ``.grad``.

    Adam uses bias correction; SGD uses heavy-ball momentum. Both apply decoupled
    weight decay. Parameters without a gradient are left alone.
    """
    check_gradients(params)
    state.step += 1
    b1, b2 = ADAM_BETAS
    for name, p in params:
        if p.grad is None:
            continue
        g = p.grad.data
        if config.weight_decay and decays(name, p):
            p.data *= 1.0 - lr * config.weight_decay
        if state.kind == "adam":
            m = state.buffers.setdefault(f"{name}/m", np.zeros_like(p.data))
            v = state.buffers.setdefault(f"{name}/v", np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**state.step)
            vhat = v / (1 - b2**state.step)
            p.data -= (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(p.dtype)
        else:
            buf = state.buffers.get(f"{name}/momentum")
            if buf is None:
                buf = state.buffers[f"{name}/momentum"] = g.copy()
            else:
                buf *= config.momentum
                buf += g
            p.data -= (lr * buf).astype(p.dtype)


def lr_at(step: int, total_steps: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Linear warmup from lr/100 to lr, then cosine decay to lr/1000."""
    base = config.lr
    start, end = base / 100.0, base / 1000.0
    warmup = config.warmup_epochs * steps_per_epoch
    if warmup and step < warmup:
        return start + (base - start) * step / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, max(0.0, (step - warmup) / span))
    return end + 0.5 * (base - end) * (1.0 + math.cos(math.pi * progress))


# augmentation --------------------------------------------------------------------


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling of a ``C x H x W`` array."""
    _, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis_weights(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(image.dtype)

    y0, y1, wy = axis_weights(h, out_h)
    x0, x1, wx = axis_weights(w, out_w)
    rows = image[:, y0, :] * (1 - wy)[None, :, None] + image[:, y1, :] * wy[None, :, None]
    return rows[:, :, x0] * (1 - wx) + rows[:, :, x1] * wx


def augment_sample(image: np.ndarray, mode: str, rng: Optional[np.random.Generator], size=(32, 32), config: Optional[TrainConfig] = None) -> np.ndarray:
    """Train: random resized crop plus horizontal flip. Eval: resize then center crop."""
    config = config or TrainConfig()
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3 or min(image.shape[1:]) < 2:
        raise DataError(f"expected a 3 x H x W image with H, W >= 2, got {image.shape}")
    th, tw = size
    _, h, w = image.shape
    if mode == "train":
        out = image
        if config.random_crop:
            side = math.sqrt(rng.uniform(config.crop_scale_min, 1.0))
            ch, cw = max(2, int(round(h * side))), max(2, int(round(w * side)))
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            out = out[:, top : top + ch, left : left + cw]
        out = resize_bilinear(out, th, tw)
        if config.hflip and rng.random() < 0.5:
            out = out[:, :, ::-1]
        return np.ascontiguousarray(out)
    if mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    scale = max(th, tw) / config.eval_crop_ratio / min(h, w)
    rh, rw = max(th, int(round(h * scale))), max(tw, int(round(w * scale)))
    out = resize_bilinear(image, rh, rw)
    top, left = (rh - th) // 2, (rw - tw) // 2
    return np.ascontiguousarray(out[:, top : top + th, left : left + tw])


def prepare_batch(data: ImageSet, index, mode: str, rng, size, config: TrainConfig, dtype) -> Tensor:
    if mode == "train" and not config.augment:
        mode = "eval"
    imgs = [augment_sample(data.images[i], mode, rng, size, config) for i in index]
    batch = (np.stack(imgs) - PIXEL_MEAN) / PIXEL_STD
    return Tensor(batch.astype(dtype))


# loops ----------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    top1: float
    top5: float


def batches_for(n: int, batch_size: int) -> list:
    """Contiguous slices of a length-``n`` order; a trailing singleton joins the previous batch."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def train_epoch(model: Network, data: ImageSet, config: TrainConfig, state: OptimizerState, epoch: int) -> EpochStats:
    """One pass over ``data`` in an order fixed by ``(config.seed, epoch)``."""
    n = len(data)
    if n == 0:
        raise DataError("empty training set")
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(n)
    spans = batches_for(n, config.batch_size)
    total_steps = config.epochs * len(spans)
    params = model.named_parameters()
    size = model.spec.input_size
    dtype = np.dtype(model.spec.dtype)
    loss_sum = top1 = top5 = 0.0
    lr = config.lr
    for lo, hi in spans:
        idx = order[lo:hi]
        x = prepare_batch(data, idx, "train", rng, size, config, dtype)
        y = data.labels[idx]
        for _, p in params:
            p.grad = None
        logits = model.forward(x, training=True)
        loss = cross_entropy_loss(logits, y)
        loss.backward()
        lr = lr_at(state.step, total_steps, config, len(spans))
        optimizer_step(params, state, config, lr)
        bs = hi - lo
        loss_sum += loss.item() * bs
        k5 = min(5, logits.shape[1])
        top1 += topk_accuracy(logits.data, y, 1) * bs
        top5 += topk_accuracy(logits.data, y, k5) * bs
    return EpochStats(epoch=epoch, lr=lr, loss=loss_sum / n, top1=top1 / n, top5=top5 / n)


def predict_logits(model: Network, data: ImageSet, config: Optional[TrainConfig] = None, batch_size: int = 64) -> np.ndarray:
    config = config or TrainConfig()
    dtype = np.dtype(model.spec.dtype)
    out = []
    with no_grad():
        for lo in range(0, len(data), batch_size):
            idx = range(lo, min(len(data), lo + batch_size))
            x = prepare_batch(data, idx, "eval", None, model.spec.input_size, config, dtype)
            out.append(model.forward(x, training=False).data)
    return np.concatenate(out)


def evaluate(model: Network, data: ImageSet, config: Optional[TrainConfig] = None, ks=(1, 5)) -> RunMetrics:
    """Eval-mode metrics over every sample; does not touch parameters or BN buffers."""
    if len(data) == 0:
        raise DataError("empty evaluation set")
    logits = predict_logits(model, data, config)
    return run_metrics(logits, data.labels, data.class_names, ks)
