"""Saddle-point and descent steps.

The iterate ``w`` concatenates a minimisation block and a maximisation block;
``J`` is stored as its diagonal (+1 on the min block, -1 on the max block), so
``J * g`` is the twisted gradient.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

MAX_DENSE_QITD = 4000


class NumericalAbort(RuntimeError):
    """Non-finite loss or gradient, or an optimiser that cannot proceed."""


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(f"non-finite {what} encountered")
    return arr


def _value_grad(out):
    # grad functions may return the gradient or a (value, gradient) pair
    if isinstance(out, tuple):
        value, g = out
        value = float(value)
    else:
        value, g = float("nan"), out
    return value, _finite(np.asarray(g, dtype=np.float64), "gradient")


def sign_vector(n_min: int, n_max: int) -> np.ndarray:
    return np.concatenate([np.ones(n_min), -np.ones(n_max)])


@dataclass
class SaddleState:
    w: np.ndarray
    J: np.ndarray
    lr: float
    n: int = 0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.J = np.asarray(self.J, dtype=np.float64)
        if self.J.shape != self.w.shape or not np.all(np.abs(self.J) == 1.0):
            raise ValueError("J must be a +-1 diagonal matching w")

    @property
    def n_min(self) -> int:
        return int(np.sum(self.J > 0))


def omd_step(state: SaddleState, grad_fn) -> SaddleState:
    """Optimistic mirror descent: a waiting state then the actual update."""
    eta, J, w = state.lr, state.J, state.w
    _, g = _value_grad(grad_fn(w))
    w_wait = w - eta * J * g
    _, g_wait = _value_grad(grad_fn(w_wait))
    return dataclasses.replace(state, w=w - eta * J * g_wait, n=state.n + 1)


def gda_step(state: SaddleState, grad_fn) -> SaddleState:
    """Plain simultaneous gradient descent-ascent (baseline)."""
    _, g = _value_grad(grad_fn(state.w))
    return dataclasses.replace(state, w=state.w - state.lr * state.J * g, n=state.n + 1)


@dataclass
class QitdState(SaddleState):
    """QITD state; ``B`` starts at ``J`` and is never reset."""

    B: np.ndarray | None = None
    gamma: float = 0.75
    eps: float = 1e-3
    beta: float = 0.1
    lr_max: float = 2e-2
    constraint_ok: bool = True
    line_search_steps: int = 0
    last_loss: float = float("nan")

    def __post_init__(self):
        super().__post_init__()
        if self.w.size > MAX_DENSE_QITD:
            raise NumericalAbort(
                f"QITD stores a dense {self.w.size}x{self.w.size} matrix; "
                f"use OMD for more than {MAX_DENSE_QITD} parameters")
        if self.B is None:
            self.B = np.diag(self.J)
        if not 0 < self.gamma < 1 or self.eps <= 0 or self.beta <= 0 or self.lr_max <= 0:
            raise ValueError("need 0 < gamma < 1, eps > 0, beta > 0, lr_max > 0")


def anticipatory_ok(loss_fn, w, w_new, J, batch) -> bool:
    """``L(tau', xi) <= L(tau', xi') <= L(tau, xi')`` on the step's batch."""
    is_min = J > 0
    mixed_a = np.where(is_min, w_new, w)   # (tau', xi)
    mixed_b = np.where(is_min, w, w_new)   # (tau, xi')
    la = loss_fn(mixed_a, batch)
    lb = loss_fn(w_new, batch)
    lc = loss_fn(mixed_b, batch)
    _finite(np.array([la, lb, lc]), "loss")
    return la <= lb <= lc


def rank_one_update(B, g, s):
    """``B + alpha s s^T / |s|^2`` with ``alpha = |s|^2 / <g, s>`` clipped to ``|alpha| <= 1``.

    Returns ``(B_new, alpha)``; ``alpha`` is ``None`` when the update is skipped.
    """
    ss = float(s @ s)
    gs = float(g @ s)
    if ss == 0.0 or gs == 0.0:
        return B, None
    alpha = ss / gs
    alpha = float(np.sign(alpha) * min(abs(alpha), 1.0))
    return B + alpha * np.outer(s, s) / ss, alpha


def qitd_step(state: QitdState, loss_fn, grad_fn, batch=None) -> QitdState:
    """One step of stochastic quasi implicit twisted descent.

    ``loss_fn(w, batch)`` and ``grad_fn(w, batch)`` evaluate on the same batch.
    """
    w, J, B = state.w, state.J, state.B
    value, g = _value_grad(grad_fn(w, batch))
    eta_prev = state.lr
    eta = eta_prev
    Bg = B @ g
    w_new = w - eta * Bg
    ok = anticipatory_ok(loss_fn, w, w_new, J, batch)
    searches = 0
    while eta > state.eps * eta_prev and not ok:
        eta *= state.gamma
        w_new = w - eta * Bg
        ok = anticipatory_ok(loss_fn, w, w_new, J, batch)
        searches += 1
    if ok:
        eta = min((1.0 + state.beta) * eta, state.lr_max)
    _, g_new = _value_grad(grad_fn(w_new, batch))
    B_new, _ = rank_one_update(B, g, J * g_new - Bg)
    return dataclasses.replace(
        state, w=w_new, B=B_new, lr=eta, n=state.n + 1, constraint_ok=ok,
        line_search_steps=searches, last_loss=value,
    )


def sgd_step(params, grad, lr: float) -> np.ndarray:
    grad = _finite(np.asarray(grad, dtype=np.float64), "gradient")
    return np.asarray(params, dtype=np.float64) - lr * grad


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)


def adam_step(state: AdamState, grad, lr: float) -> AdamState:
    """Bias-corrected Adam, no weight decay."""
    g = _finite(np.asarray(grad, dtype=np.float64), "gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    p = state.params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return dataclasses.replace(state, params=p, m=m, v=v, t=t)
