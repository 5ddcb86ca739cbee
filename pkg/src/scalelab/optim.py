"""Adam optimizer and the two-class cross-entropy objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from .errors import InvalidLabelError, NumericError, ShapeError, StateError

MAX_STEP = 2**31
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    # True: divide by sqrt(v_hat + eps); False: by sqrt(v_hat) + eps
    eps_inside_sqrt: bool = True

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"decay rates must lie in [0, 1): {self.beta1}, {self.beta2}")
        if not 0 <= self.lr < math.inf:
            raise ValueError(f"learning rate must be finite and non-negative, got {self.lr}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class AdamState:
    """First moment ``m``, second moment ``v`` and step counter ``t`` for one tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, h: AdamHyper = AdamHyper()):
    """Apply one Adam update to ``params`` in place and return ``(params, state)``.

    The bias-corrected moments are ``m / (1 - beta1**t)`` and
    ``v / (1 - beta2**t)``. With the default ``eps_inside_sqrt`` the step is
    ``lr * m_hat / sqrt(v_hat + eps)``.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    if state.t >= MAX_STEP:
        raise StateError(f"Adam step counter overflow at t={state.t}")
    state.t += 1
    t = state.t
    g = grads.astype(np.float64, copy=False)
    m = h.beta1 * state.m.astype(np.float64) + (1.0 - h.beta1) * g
    v = h.beta2 * state.v.astype(np.float64) + (1.0 - h.beta2) * g * g
    m_hat = m / (1.0 - h.beta1**t)
    v_hat = v / (1.0 - h.beta2**t)
    if h.eps_inside_sqrt:
        step = h.lr * m_hat / np.sqrt(v_hat + h.eps)
    else:
        step = h.lr * m_hat / (np.sqrt(v_hat) + h.eps)
    state.m[...] = m
    state.v[...] = v
    params -= step.astype(params.dtype)
    return params, state


def bias_corrected(state: AdamState, h: AdamHyper = AdamHyper()):
    """Return ``(m_hat, v_hat)`` for the state's current step."""
    if state.t == 0:
        raise StateError("no Adam step has been taken yet")
    return state.m / (1 - h.beta1**state.t), state.v / (1 - h.beta2**state.t)


def softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received non-finite logits")
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(logits.dtype, copy=False)


class LossValue(NamedTuple):
    loss: float
    grad_logits: np.ndarray


def _check_labels(labels, n) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        bad = labels[(labels != 0) & (labels != 1)][0]
        raise InvalidLabelError(f"label {bad!r} is not in {{0, 1}}")
    return labels.astype(np.int64)


def cross_entropy_loss(logits: np.ndarray, labels) -> LossValue:
    """Batch-mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"logits must be (N, 2), got {logits.shape}")
    n = logits.shape[0]
    y = _check_labels(labels, n)
    p = softmax(logits.astype(np.float64))
    picked = np.maximum(p[np.arange(n), y], PROB_FLOOR)
    loss = float(-np.log(picked).sum() / n)
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return LossValue(loss, grad.astype(logits.dtype, copy=False))


def sigmoid_bce_loss(logit_diff: np.ndarray, labels) -> float:
    """Binary cross-entropy of sigmoid(logit_diff), where logit_diff = z1 - z0.

    For two classes this equals ``cross_entropy_loss`` on ``(z0, z1)``.
    """
    z = np.asarray(logit_diff, dtype=np.float64)
    y = _check_labels(labels, z.shape[0])
    # -log sigmoid(z) = log1p(exp(-z)), evaluated stably
    signed = np.where(y == 1, z, -z)
    per = np.logaddexp(0.0, -signed)
    per = np.minimum(per, -math.log(PROB_FLOOR))
    return float(per.mean())


def init_states(params: List[np.ndarray]) -> List[AdamState]:
    return [AdamState.zeros_like(p) for p in params]
