"""Gradient-ascent optimizers over the flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)

    def to_dict(self) -> dict:
        return {
            "kind": "adam",
            "t": self.t,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": self.m,
            "v": self.v,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AdamState":
        if doc.get("kind") != "adam":
            raise ConfigError(f"not an adam state: {doc.get('kind')!r}")
        return cls(
            np.array(doc["m"]), np.array(doc["v"]), int(doc["t"]),
            float(doc["beta1"]), float(doc["beta2"]), float(doc["eps"]),
        )


def _check_finite(grad: np.ndarray) -> None:
    if not np.isfinite(grad).all():
        raise NumericsError("non-finite gradient; step aborted")


def adam_ascend(flat: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """One in-place maximization step; raises before touching params or state."""
    _check_finite(grad)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    flat += lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_ascend(flat: np.ndarray, grad: np.ndarray, lr: float) -> None:
    _check_finite(grad)
    flat += lr * grad
