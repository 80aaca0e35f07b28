"""Training loops over a flat iterate split into named min/max blocks."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .optimizers import (AdamState, NumericalAbort, QitdState, SaddleState, adam_step,
                         gda_step, omd_step, qitd_step, sgd_step)

log = logging.getLogger(__name__)

SADDLE_OPTIMIZERS = ("omd", "qitd", "gda")
DESCENT_OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class Block:
    """Named parameter block; ``step_scale`` multiplies its gradient (two-time-scale runs)."""

    name: str
    size: int
    role: str  # "min" or "max"
    step_scale: float = 1.0


class SaddleProblem:
    """``inf over min blocks, sup over max blocks`` of ``loss(parts, batch)``.

    ``parts`` maps block names to flat parameter Nodes. Min blocks are laid out
    first in the iterate, then max blocks, so ``J`` is (+1 ... +1, -1 ... -1).
    """

    def __init__(self, blocks, loss: Callable):
        blocks = list(blocks)
        self.blocks = [b for b in blocks if b.role == "min"] + [b for b in blocks if b.role == "max"]
        if not all(b.role in ("min", "max") for b in blocks):
            raise ValueError("block role must be 'min' or 'max'")
        self.loss = loss
        self.offsets = {}
        pos = 0
        for b in self.blocks:
            self.offsets[b.name] = (pos, b.size)
            pos += b.size
        self.size = pos
        self.J = np.concatenate([np.full(b.size, 1.0 if b.role == "min" else -1.0)
                                 for b in self.blocks])
        self.step_scale = np.concatenate([np.full(b.size, float(b.step_scale)) for b in self.blocks])
        if np.any(self.step_scale <= 0):
            raise ValueError("block step scales must be positive")

    def pack(self, **parts) -> np.ndarray:
        return np.concatenate([np.asarray(parts[b.name], dtype=np.float64).ravel()
                               for b in self.blocks])

    def unpack(self, w) -> dict:
        return {name: np.asarray(w[s:s + n]) for name, (s, n) in self.offsets.items()}

    def _parts(self, wnode) -> dict:
        return {name: ad.segment(wnode, s, (n,)) for name, (s, n) in self.offsets.items()}

    def node(self, wnode, batch):
        return self.loss(self._parts(wnode), batch)

    def value(self, w, batch) -> float:
        return float(self.node(ad.constant(w), batch).value)

    def value_and_grad(self, w, batch):
        return ad.value_and_grad(lambda wn: self.node(wn, batch), w)

    def grad(self, w, batch) -> np.ndarray:
        return self.value_and_grad(w, batch)[1]

    def mask(self, name) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        s, n = self.offsets[name]
        m[s:s + n] = True
        return m


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    constraint_ok: list = field(default_factory=list)

    def append(self, loss, lr, ok=True):
        self.losses.append(float(loss))
        self.lrs.append(float(lr))
        self.constraint_ok.append(bool(ok))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "loss", "lr"])
            for i, (l, e) in enumerate(zip(self.losses, self.lrs)):
                out.writerow([i, repr(l), repr(e)])


class BatchSampler:
    """Uniform with-replacement minibatches; ``None`` size means the full sample every step."""

    def __init__(self, sample, batch_size, rng):
        self.sample = sample
        self.batch_size = batch_size
        self.rng = rng

    def __call__(self):
        if self.batch_size is None:
            return self.sample
        idx = self.rng.integers(0, len(self.sample), size=self.batch_size)
        if isinstance(self.sample, np.ndarray):
            return self.sample[idx]
        return self.sample.take(idx)


def train_saddle(problem: SaddleProblem, w0, sample, *, optimizer="omd", n_iter=1000,
                 batch_size=None, lr=1e-3, gamma=0.75, eps=1e-3, beta=0.1, lr_max=2e-2,
                 rng=None, post_step=None, on_step=None, disc_steps=1, inner_blocks=None,
                 log_every=0):
    """Run a saddle-point optimiser; returns ``(w, history)``.

    ``post_step(w) -> w`` runs after every update (e.g. label-net clamping).
    ``disc_steps > 1`` adds extra OMD/GDA steps per iteration that move only
    ``inner_blocks`` (default: every max block).
    """
    if optimizer not in SADDLE_OPTIMIZERS:
        raise ValueError(f"saddle optimizer must be one of {SADDLE_OPTIMIZERS}")
    rng = np.random.default_rng(0) if rng is None else rng
    next_batch = BatchSampler(sample, batch_size, rng)
    history = TrainHistory()
    w = np.asarray(w0, dtype=np.float64).copy()
    if post_step is not None:
        w = post_step(w)

    if optimizer == "qitd":
        state = QitdState(w, problem.J, lr, gamma=gamma, eps=eps, beta=beta, lr_max=lr_max)
    else:
        state = SaddleState(w, problem.J, lr)
    if inner_blocks is None:
        inner = problem.J < 0
    else:
        inner = np.any([problem.mask(name) for name in inner_blocks], axis=0)
    scale = problem.step_scale
    scaled = not np.all(scale == 1.0)

    def value_and_grad(wv, b):
        val, g = problem.value_and_grad(wv, b)
        return (val, g * scale) if scaled else (val, g)

    for it in range(n_iter):
        batch = next_batch()
        if optimizer == "qitd":
            eta = state.lr
            state = qitd_step(state, problem.value, value_and_grad, batch)
            history.append(state.last_loss, eta, state.constraint_ok)
        else:
            seen = []

            def grad_fn(wv, _b=batch):
                val, g = value_and_grad(wv, _b)
                seen.append(val)
                return g

            step = omd_step if optimizer == "omd" else gda_step
            state = step(state, grad_fn)
            history.append(seen[0], state.lr)
            for _ in range(disc_steps - 1):
                def masked(wv, _b=batch):
                    return value_and_grad(wv, _b)[1] * inner
                state = step(state, masked)
        if not np.isfinite(history.losses[-1]):
            raise NumericalAbort(f"non-finite loss at step {it}")
        if post_step is not None:
            state.w = post_step(state.w)
        if on_step is not None:
            on_step(state.w, batch)
        if log_every and it % log_every == 0:
            log.info("step %d loss %.6g lr %.3g", it, history.losses[-1], history.lrs[-1])
    return state.w, history


def train_descent(value_and_grad, p0, sample, *, optimizer="sgd", n_iter=1000, batch_size=None,
                  lr=1e-2, rng=None, divergence=1e6, log_every=0):
    """Plain minimisation with SGD or Adam; aborts if the loss exceeds ``divergence``."""
    if optimizer not in DESCENT_OPTIMIZERS:
        raise ValueError(f"descent optimizer must be one of {DESCENT_OPTIMIZERS}")
    rng = np.random.default_rng(0) if rng is None else rng
    next_batch = BatchSampler(sample, batch_size, rng)
    history = TrainHistory()
    p = np.asarray(p0, dtype=np.float64).copy()
    adam = AdamState(p) if optimizer == "adam" else None
    for it in range(n_iter):
        batch = next_batch()
        val, g = value_and_grad(p if adam is None else adam.params, batch)
        if not np.isfinite(val) or val > divergence:
            raise NumericalAbort(f"descent diverged at step {it} (loss {val:.3g})")
        history.append(val, lr)
        if adam is None:
            p = sgd_step(p, g, lr)
        else:
            adam = adam_step(adam, g, lr)
        if log_every and it % log_every == 0:
            log.info("step %d loss %.6g", it, val)
    return (p if adam is None else adam.params), history
