"""Normalisation, train/test split, ADAM and the supervised training loop."""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .imageio import Image
from .mwcnn import backward_from_cache, forward, forward_with_cache
from .phantom import Pair, PairedDataset
from .tensor_core import mse_loss

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """The loss became NaN or infinite."""


@dataclass
class TrainConfig:
    learning_rate: float = 1.024e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 256
    batch_size: int = 8
    split_fraction: float = 0.85
    seed: int = 0
    # step decay hook: lr *= lr_decay_factor every lr_decay_every epochs (0 = off)
    lr_decay_every: int = 0
    lr_decay_factor: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def lr_at(self, epoch):
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)


def normalize(image):
    """Min-max scale to [0, 1]; a constant image maps to zeros."""
    pix = np.asarray(image.data if isinstance(image, Image) else image)
    lo, hi = pix.min(), pix.max()
    if hi == lo:
        out = np.zeros_like(pix)
    else:
        out = (pix - lo) / (hi - lo)
    return image.with_data(out) if isinstance(image, Image) else out


def split(dataset, fraction, seed):
    """Seeded shuffle then partition into (train, test) index arrays.

    The train part gets ``round(fraction * N)`` items. A test part that comes
    out empty triggers a warning.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    # python's round() is half-to-even; a single item should still be trained on
    n_train = min(n, max(n_train, 1))
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    if len(test_idx) == 0:
        warnings.warn(f"split of {n} item(s) leaves the test set empty", RuntimeWarning, stacklevel=2)
    return train_idx, test_idx


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(params, grads, state, config, lr=None):
    """In-place ADAM update of the arrays in ``params`` (list of ndarrays).

    ``m <- b1 m + (1-b1) g``; ``v <- b2 v + (1-b2) g^2``; bias-corrected
    ``theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    lr = config.learning_rate if lr is None else lr
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return params, state


def stack_pairs(dataset, indices=None, dtype=np.float32):
    """(noisy, clean) as (n, 1, h, w) arrays."""
    pairs = dataset.pairs if indices is None else [dataset.pairs[i] for i in indices]
    x = np.stack([np.asarray(p.noisy.data, dtype=dtype) for p in pairs])[:, None]
    y = np.stack([np.asarray(p.clean.data, dtype=dtype) for p in pairs])[:, None]
    return x, y


def normalize_dataset(dataset):
    """Both members of every pair normalised by their own min/max."""
    return PairedDataset([Pair(normalize(p.noisy), normalize(p.clean), p.label) for p in dataset.pairs])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float


@dataclass
class TrainResult:
    params: object
    history: list = field(default_factory=list)
    train_indices: np.ndarray = None
    test_indices: np.ndarray = None


def mean_loss(params, x, y, batch_size):
    if len(x) == 0:
        return math.nan
    total = 0.0
    for s in range(0, len(x), batch_size):
        xb, yb = x[s : s + batch_size], y[s : s + batch_size]
        loss, _ = mse_loss(forward(params, xb), yb)
        total += loss * len(xb)
    return total / len(x)


def train(params, dataset, config, on_epoch=None, on_checkpoint=None):
    """Fit ``params`` in place on the train split of a normalised dataset.

    Each epoch visits the training pairs in a fresh seeded order, in
    mini-batches of ``config.batch_size``: forward, MSE loss, backward, ADAM.
    ``on_epoch(record)`` is called after every epoch and
    ``on_checkpoint(epoch, params)`` every ``config.checkpoint_every`` epochs.
    """
    train_idx, test_idx = split(dataset, config.split_fraction, config.seed)
    x_train, y_train = stack_pairs(dataset, train_idx)
    x_test, y_test = stack_pairs(dataset, test_idx) if len(test_idx) else (x_train[:0], y_train[:0])

    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    history = []
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = np.sort(order[s : s + config.batch_size])
            xb, yb = x_train[idx], y_train[idx]
            out, records = forward_with_cache(params, xb)
            loss, grad = mse_loss(out, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            layer_grads, _ = backward_from_cache(params, records, grad)
            flat = []
            for lg in layer_grads:
                flat.extend((lg.weights, lg.bias))
            adam_step(arrays, flat, state, config, lr=lr)
            total += loss * len(idx)
        rec = EpochRecord(epoch, total / n, mean_loss(params, x_test, y_test, config.batch_size))
        history.append(rec)
        log.info("epoch %d train %.6g test %.6g", rec.epoch, rec.train_loss, rec.test_loss)
        if on_epoch is not None:
            on_epoch(rec)
        if on_checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, params)
    return TrainResult(params, history, train_idx, test_idx)


def history_to_csv(history):
    lines = ["epoch,mean_train_loss,mean_test_loss"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.test_loss!r}")
    return "\n".join(lines) + "\n"
