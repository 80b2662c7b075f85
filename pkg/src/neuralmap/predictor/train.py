"""Mini-batch training of the gated network on TV-weighted β-NLL."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .loss import beta_nll, tv_weights
from .net import GatedNet

log = logging.getLogger(__name__)


class Divergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.5
    learning_rate: float = 2e-3
    batch_size: int = 32
    epochs: int = 20
    tv_epsilon: float = 1e-6
    tv_reweight: bool = True
    seed: int = 0
    widths: tuple[int, int, int] = (16, 32, 32)
    lr_decay: float = 0.9  # multiplicative, per epoch
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.tv_epsilon > 0:
            raise ValueError("tv_epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class Dataset:
    """Stacked input and label grids, each shaped (N, rows, cols)."""

    input_elev: np.ndarray
    input_valid: np.ndarray
    label_elev: np.ndarray
    label_valid: np.ndarray
    resolution: float = 0.04
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.input_elev)

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_elev.shape[1:]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.input_elev[idx], self.input_valid[idx], self.label_elev[idx],
                       self.label_valid[idx], self.resolution, dict(self.meta))

    def split(self, train_fraction: float = 0.8):
        n_train = int(round(train_fraction * len(self)))
        return self.subset(slice(0, n_train)), self.subset(slice(n_train, None))


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] -= upd.astype(params[k].dtype)


def mean_loss(mean, log_var, data: Dataset, beta: float = 0.5) -> float:
    """Unweighted mean over samples of the per-sample β-NLL."""
    loss, _, _ = beta_nll(mean, log_var, data.label_elev, data.label_valid, beta)
    return float(np.mean(loss))


def evaluate(net: GatedNet, data: Dataset, beta: float = 0.5) -> float:
    mean, log_var = net.predict_arrays(data.input_elev, data.input_valid)
    return mean_loss(mean, log_var, data, beta)


def train(data: Dataset, cfg: TrainConfig, validation: Dataset | None = None, net: GatedNet | None = None,
          callback=None):
    """Train a GatedNet; returns ``(net, curve)`` with curve rows (epoch, train, val)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    rows, cols = data.shape
    if net is None:
        net = GatedNet(rows, cols, cfg.widths, seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = Adam(net.params, cfg.learning_rate)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            mean, log_var, cache = net.forward(data.input_elev[idx], data.input_valid[idx])
            loss, g_mean, g_s = beta_nll(mean.astype(float), log_var.astype(float),
                                         data.label_elev[idx], data.label_valid[idx], cfg.beta)
            b = len(idx)
            if cfg.tv_reweight:
                w = b * tv_weights(data.label_elev[idx], cfg.tv_epsilon, data.label_valid[idx])
            else:
                w = np.ones(b)
            batch_loss = float(np.sum(w * loss) / b)
            if not math.isfinite(batch_loss):
                raise Divergence(f"non-finite loss at epoch {epoch}, batch starting {start}")
            scale = (w / b)[:, None, None]
            grads = net.backward(g_mean * scale, g_s * scale, cache)
            norm = math.sqrt(sum(float(np.sum(g.astype(float) ** 2)) for g in grads.values()))
            if not math.isfinite(norm):
                raise Divergence(f"non-finite gradient at epoch {epoch}")
            if norm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            opt.step(net.params, grads)
            total += float(np.sum(loss))
            count += b
        opt.lr *= cfg.lr_decay
        train_loss = total / count
        val_loss = evaluate(net, validation, cfg.beta) if validation is not None and len(validation) else float("nan")
        curve.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
        if callback is not None:
            callback(epoch, train_loss, val_loss)
    return net, curve
