"""Full-batch training of an attention layer on database triples."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .attention import LayerWeights, backward_batch, build_bundle, forward_batch
from .db import Database
from .metrics import accuracy_table, argmax_accuracy, tau_accuracy

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.5, 0.75, 0.95, 0.99)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    record_every: int = 100
    stop_when_memorized: bool = False

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class HistoryRow:
    epoch: int
    loss: float
    acc_argmax: float
    acc: dict  # tau -> accuracy


@dataclass
class TrainReport:
    weights: LayerWeights
    history: list = field(default_factory=list)
    epochs_run: int = 0
    final_loss: float = float("nan")

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "loss", "acc_argmax", "acc_075", "acc_095", "acc_099"])
            for h in self.history:
                wr.writerow([h.epoch, repr(h.loss), repr(h.acc_argmax),
                             repr(h.acc.get(0.75, float("nan"))),
                             repr(h.acc.get(0.95, float("nan"))),
                             repr(h.acc.get(0.99, float("nan")))])


def _batch(db: Database) -> tuple[np.ndarray, np.ndarray]:
    ids = db.token_ids()
    # the causal mask makes the logits at positions 1 and 2 independent of the
    # object token, so the (k, q) prefix is enough to score both predictions
    return ids[:, :2], ids[:, 1:]


def _ce_and_grad(Z: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    B = Z.shape[0]
    Zs = Z - Z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(Zs).sum(axis=-1, keepdims=True))
    logp = Zs - logsum
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -picked.sum() / B
    dZ = np.exp(logp)
    np.put_along_axis(dZ, targets[..., None], np.take_along_axis(dZ, targets[..., None], -1) - 1.0, -1)
    return float(loss), dZ / B


def loss(w: LayerWeights, db: Database) -> float:
    """Mean over triples of the cross-entropy for predicting q after k plus
    predicting v after (k, q)."""
    X, T = _batch(db)
    return _ce_and_grad(forward_batch(w, X), T)[0]


def loss_and_gradients(w: LayerWeights, db: Database) -> tuple[float, dict[str, np.ndarray]]:
    X, T = _batch(db)
    Z, cache = forward_batch(w, X, return_cache=True)
    value, dZ = _ce_and_grad(Z, T)
    return value, backward_batch(w, cache, dZ)


def gradients(w: LayerWeights, db: Database) -> dict[str, np.ndarray]:
    return loss_and_gradients(w, db)[1]


def final_logits(w: LayerWeights, db: Database) -> np.ndarray:
    """Logits at the last position of every (k, q) prefix, full vocabulary."""
    X, _ = _batch(db)
    return forward_batch(w, X)[:, -1]


def evaluate(w: LayerWeights, db: Database, taus=DEFAULT_TAUS, full_vocab: bool = False) -> dict:
    """Accuracies of a layer on a database.

    By default predictions are read from the layer tensor, i.e. restricted to
    the object tokens. ``full_vocab`` scores the model's logits over the whole
    vocabulary instead.
    """
    if not full_vocab:
        return accuracy_table(build_bundle(w, db).L, db, taus)
    Z = final_logits(w, db)
    vid = db.token_ids()[:, 2]
    n = len(vid)
    target = Z[np.arange(n), vid]
    others = Z.copy()
    others[np.arange(n), vid] = -np.inf
    out = {"argmax": float(np.mean(target > others.max(axis=1)))}
    from .metrics import softmax_threshold

    for t in taus:
        out[float(t)] = float(softmax_threshold(Z, t)[np.arange(n), vid].mean())
    return out


class Adam:
    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def _record(w, db, epoch, value, taus):
    acc = accuracy_table(build_bundle(w, db).L, db, taus)
    return HistoryRow(epoch, value, acc.pop("argmax"), acc)


def train(w: LayerWeights, db: Database, cfg: TrainConfig = TrainConfig(), taus=DEFAULT_TAUS) -> TrainReport:
    """Run ``cfg.max_epochs`` full-batch optimizer steps on a copy of ``w``.

    History is recorded at epoch 0, every ``record_every`` epochs and at the
    end. Raises :class:`TrainingDiverged` if the loss stops being finite.
    """
    w = w.copy()
    params = w.params()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)
    X, T = _batch(db)
    report = TrainReport(weights=w)
    value = float("nan")
    epoch = 0
    for epoch in range(cfg.max_epochs + 1):
        Z, cache = forward_batch(w, X, return_cache=True)
        value, dZ = _ce_and_grad(Z, T)
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at epoch {epoch}")
        last = epoch == cfg.max_epochs
        if cfg.record_every and (epoch % cfg.record_every == 0 or last):
            report.history.append(_record(w, db, epoch, value, taus))
        if cfg.stop_when_memorized and tau_accuracy(build_bundle(w, db).L, db, 0.99) == 1.0:
            if not report.history or report.history[-1].epoch != epoch:
                report.history.append(_record(w, db, epoch, value, taus))
            break
        if last:
            break
        opt.step(params, backward_batch(w, cache, dZ))
    report.epochs_run = epoch
    report.final_loss = value
    log.debug("trained %d epochs, final loss %.4g, argmax acc %.3f",
              epoch, value, argmax_accuracy(build_bundle(w, db).L, db))
    return report
