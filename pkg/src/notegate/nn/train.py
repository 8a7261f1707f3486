"""Optimization of the error detector."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import Patch
from .checkpoint import Checkpoint
from .model import Network, bce_from_logits, build_error_detector, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 20
    patience: int = 5
    seed: int = 0
    dropout: float = 0.3
    leaky_slope: float = 0.01

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "batch_size", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = (params[k] - upd).astype(params[k].dtype)


class PatchSource:
    """Builds detector inputs ``(B, n_bins, 2n+1, channels + 1)`` from
    :class:`~notegate.deform.PatchExample` references.

    ``spectra`` maps track id to a ``(n_frames, n_bins, channels)`` array or
    :class:`~notegate.spectral.SpectrogramStack`.
    """

    def __init__(self, spectra: dict, n: int = 40):
        self.n = n
        self._x = {}
        for tid, X in spectra.items():
            x = np.asarray(getattr(X, "data", X), dtype=np.float32)
            self._x[tid] = np.pad(x, ((n, n), (0, 0), (0, 0)))
        self._y = {}

    def _padded_labels(self, labels):
        key = id(labels)
        hit = self._y.get(key)
        if hit is None or hit[0] is not labels:
            hit = (labels, np.pad(np.asarray(labels, dtype=np.float32), ((self.n, self.n), (0, 0))))
            self._y[key] = hit
        return hit[1]

    def batch(self, examples) -> np.ndarray:
        w = 2 * self.n + 1
        out = []
        for e in examples:
            x = self._x[e.track_id][e.center:e.center + w]
            y = self._padded_labels(e.labels)[e.center:e.center + w]
            out.append(np.concatenate([x, y[:, :, None]], axis=2))
        return np.stack(out).transpose(0, 2, 1, 3)


def patch_inputs(patches) -> np.ndarray:
    """Stack :class:`~notegate.core.Patch` objects into a detector batch."""
    return np.stack([p.as_input() if isinstance(p, Patch) else np.asarray(p) for p in patches])


def backprop(net: Network, x, z, weights=None, mode="train", rng=None):
    """Mean BCE over the batch and gradients for every parameter."""
    if len(x) == 0:
        raise ValueError("backprop needs a non-empty batch")
    logits = net.forward(x, mode, rng)
    loss, dlogits, _ = bce_from_logits(logits, z, weights)
    if not np.isfinite(loss):
        layer = net.first_nonfinite_layer(x, "eval")
        raise FloatingPointError(f"non-finite loss (first non-finite layer: {layer or 'loss'})")
    return loss, net.backward(dlogits)


def predict(net: Network, x, batch_size=256) -> np.ndarray:
    out = [sigmoid(net.forward(x[i:i + batch_size], "eval").reshape(-1).astype(np.float64))
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _accuracy(p, z):
    pred = p >= 0.5
    z = np.asarray(z).astype(bool)
    acc = float(np.mean(pred == z))
    recalls = [float(np.mean(pred[z == c] == c)) for c in (False, True) if np.any(z == c)]
    return acc, float(np.mean(recalls))


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self):
        return {"epochs": self.epochs, "best_epoch": self.best_epoch}


def evaluate(net, source: PatchSource, examples, batch_size=256):
    z = np.array([e.z for e in examples])
    p = np.concatenate([predict(net, source.batch(examples[i:i + batch_size]), batch_size)
                        for i in range(0, len(examples), batch_size)])
    loss = float(np.mean(-(z * np.log(np.clip(p, 1e-7, 1)) + (1 - z) * np.log(np.clip(1 - p, 1e-7, 1)))))
    acc, bal = _accuracy(p, z)
    return {"loss": loss, "accuracy": acc, "balanced_accuracy": bal}


def train(train_split, holdout_split, source: PatchSource, cfg: TrainConfig = TrainConfig(),
          net: Network | None = None):
    """Train the error detector; return ``(checkpoint, history)``.

    The returned checkpoint holds the epoch with the best holdout accuracy
    (threshold 0.5). Results are deterministic for a fixed seed and BLAS
    thread count.
    """
    if not train_split or not holdout_split:
        raise ValueError("train and holdout splits must both be non-empty")
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = build_error_detector(seed=cfg.seed, dropout=cfg.dropout, slope=cfg.leaky_slope)
    opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    hist = History()
    best = None
    best_acc = -1.0
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_split))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_split[i] for i in order[start:start + cfg.batch_size]]
            x = source.batch(batch)
            z = np.array([e.z for e in batch], dtype=np.float64)
            try:
                loss, grads = backprop(net, x, z, rng=rng)
            except FloatingPointError as exc:
                raise FloatingPointError(f"training diverged at epoch {epoch}, batch {b}: {exc}") from exc
            opt.step(net.params, grads)
            losses.append(loss)
        tr = evaluate(net, source, train_split)
        ho = evaluate(net, source, holdout_split)
        row = {"epoch": epoch, "train_batch_loss": float(np.mean(losses)),
               **{f"train_{k}": v for k, v in tr.items()},
               **{f"holdout_{k}": v for k, v in ho.items()}}
        hist.epochs.append(row)
        log.info("epoch %d: train acc %.3f holdout acc %.3f", epoch, tr["accuracy"], ho["accuracy"])
        if ho["accuracy"] > best_acc:
            best_acc = ho["accuracy"]
            hist.best_epoch = epoch
            best = Checkpoint.from_network(net, {"train_config": cfg.to_dict(), "epoch": epoch,
                                                 "metrics": row})
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, hist


def predict_batch(checkpoint: Checkpoint | Network, patches, batch_size=256) -> np.ndarray:
    """Eval-mode error probabilities for patches (order preserved)."""
    net = checkpoint if isinstance(checkpoint, Network) else checkpoint.to_network()
    x = patch_inputs(patches) if not isinstance(patches, np.ndarray) else patches
    return predict(net, x, batch_size)
