"""Optimizers over the flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from clpd.errors import ConfigError
from clpd.model.core import StudentModel

METHODS = ("sgd-momentum", "adam-style")


@dataclass
class OptimState:
    method: str
    lr: float
    step_count: int = 0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown optimizer {self.method!r}, expected {METHODS}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")


def init_optimizer(model: StudentModel, method: str, lr: float) -> OptimState:
    state = OptimState(method=method, lr=lr)
    n = model.num_params
    if method == "sgd-momentum":
        state.buffers["velocity"] = np.zeros(n)
    else:
        state.buffers["m"] = np.zeros(n)
        state.buffers["v"] = np.zeros(n)
    return state


def clip_by_global_norm(grad: np.ndarray, clip: float) -> np.ndarray:
    if clip <= 0:
        return grad
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > clip:
        return grad * (clip / norm)
    return grad


def apply_update(model: StudentModel, state: OptimState, grad: np.ndarray, clip: float) -> None:
    """Clip at the global norm, then apply the configured update rule in place.

    The gradient array is scratch owned by the caller's step; it may be
    scaled in place by clipping.
    """
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise RuntimeError(
            f"non-finite gradient ({bad} of {grad.size} entries) at step "
            f"{state.step_count}; aborting run"
        )
    if clip > 0:
        norm = float(np.sqrt(np.dot(grad, grad)))
        if norm > clip:
            grad *= clip / norm
    state.step_count += 1
    if state.method == "sgd-momentum":
        vel = state.buffers["velocity"]
        vel *= state.momentum
        vel += grad
        model.params -= state.lr * vel
    else:
        m, v = state.buffers["m"], state.buffers["v"]
        scratch = state.buffers.setdefault("scratch", np.empty_like(m))
        m *= state.beta1
        np.multiply(grad, 1.0 - state.beta1, out=scratch)
        m += scratch
        v *= state.beta2
        np.multiply(grad, grad, out=scratch)
        scratch *= 1.0 - state.beta2
        v += scratch
        t = state.step_count
        # scratch becomes the update direction: mhat / (sqrt(vhat) + eps)
        np.divide(v, 1.0 - state.beta2**t, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += state.eps
        np.divide(m, scratch, out=scratch)
        scratch *= state.lr / (1.0 - state.beta1**t)
        model.params -= scratch
