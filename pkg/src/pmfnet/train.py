"""Loss, Adam optimizer, and the seeded training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeError
from .metrics import MetricsReport, evaluate
from .tensor import Tensor, add, clip, log, mul, neg, scale, shift, sum_all

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    dropout: float = 0.2
    l2_head: float = 0.001
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    variant: str = "full"
    threshold: float = 0.5

    def validate(self):
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeError("dropout must lie in [0,1)")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ShapeError("batch_size and epochs must be positive")


def bce_loss(p: Tensor, y: int) -> Tensor:
    """Binary cross-entropy on a scalar probability, clamped away from 0/1."""
    pc = clip(p, BCE_EPS, 1.0 - BCE_EPS)
    if y == 1:
        return neg(log(pc))
    if y == 0:
        return neg(log(shift(neg(pc), 1.0)))
    raise ShapeError(f"label must be 0 or 1, got {y!r}")


def bce_loss_batch(p: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of a probability vector against 0/1 labels."""
    labels = np.asarray(labels)
    if labels.shape != p.shape:
        raise ShapeError(f"labels shape {labels.shape} != probabilities shape {p.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ShapeError("labels must be 0 or 1")
    y = Tensor(labels.astype(p.data.dtype))
    pc = clip(p, BCE_EPS, 1.0 - BCE_EPS)
    ll = add(mul(y, log(pc)), mul(shift(neg(y), 1.0), log(shift(neg(pc), 1.0))))
    return scale(sum_all(neg(ll)), 1.0 / labels.size)


def head_l2_penalty(head, coeff: float) -> Tensor:
    """L2 penalty over the prediction head's weight matrices only."""
    total = None
    for w in head.weight_tensors():
        term = sum_all(mul(w, w))
        total = term if total is None else add(total, term)
    return scale(total, coeff)


class Adam:
    """Bias-corrected adaptive-moment optimizer over named parameters."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {path: np.zeros_like(t.data) for path, t in self.params}
        self.v = {path: np.zeros_like(t.data) for path, t in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for path, tensor in self.params:
            g = tensor.grad
            if g is None:
                g = np.zeros_like(tensor.data)
            if g.shape != tensor.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {tensor.data.shape} at {path}")
            m = self.m[path]
            v = self.v[path]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(tensor.data.dtype)

    def zero_grad(self):
        for _, tensor in self.params:
            tensor.grad = None


def format_log_line(epoch: int, loss: float, report: MetricsReport) -> str:
    return f"epoch={epoch} loss={loss:.6f} {report.line()}"


def train(model, samples, cfg: TrainConfig, log=None) -> list[str]:
    """Seeded mini-batch training; returns the per-epoch log lines.

    Every epoch reshuffles with a generator derived from the config seed,
    runs Adam over mini-batches, evaluates on the training split, and emits
    one stable log line. Identical config and data give identical lines.
    """
    cfg.validate()
    optimizer = Adam(model.named_parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    lines = []
    n = len(samples)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            optimizer.zero_grad()
            p, _ = model.forward_batch(batch, train=True, rng=dropout_rng)
            mean_loss = bce_loss_batch(p, [s.label for s in batch])
            objective = add(mean_loss, head_l2_penalty(model.head, cfg.l2_head))
            value = mean_loss.item()
            if not math.isfinite(value):
                raise NumericsError(
                    f"non-finite training loss in epoch {epoch}, batch {n_batches}"
                )
            objective.backward()
            optimizer.step()
            epoch_loss += value
            n_batches += 1
        report = evaluate(model, samples, threshold=cfg.threshold)
        line = format_log_line(epoch, epoch_loss / n_batches, report)
        lines.append(line)
        if log is not None:
            log(line)
    return lines
