from __future__ import annotations

import numpy as np
import pytest

from clpd import data
from clpd.model import core


@pytest.fixture(scope="session")
def tiny_dataset() -> data.Dataset:
    return data.generate_task(60, [1, 3], [0, 9], seed=7, value_limit=20)


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return data.split(tiny_dataset, [0.7, 0.15, 0.15], seed=3)


@pytest.fixture(scope="session")
def vocab():
    return data.default_vocab()


@pytest.fixture()
def tiny_model_cfg(vocab) -> core.ModelConfig:
    return core.ModelConfig(
        vocab_size=len(vocab), embed_dim=12, hidden_dim=24, num_layers=2,
        context_len=120,
    )


def perfect_profile(max_steps: int = 6):
    from clpd.teachers import CompetenceProfile

    return CompetenceProfile({k: 1.0 for k in range(1, max_steps + 1)})


def uniform_model(vocab_size: int, context_len: int = 120) -> core.StudentModel:
    """All-zero parameters: every next-token distribution is uniform."""
    cfg = core.ModelConfig(
        vocab_size=vocab_size, embed_dim=8, hidden_dim=10, num_layers=1,
        context_len=context_len,
    )
    model = core.init_model(cfg, seed=0)
    model.params[:] = 0.0
    return model


def rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_diff_gradcheck(model, loss_fn, coords, eps: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    _, grad = loss_fn()
    worst = 0.0
    for i in coords:
        old = model.params[i]
        model.params[i] = old + eps
        up, _ = loss_fn()
        model.params[i] = old - eps
        down, _ = loss_fn()
        model.params[i] = old
        numeric = (up - down) / (2.0 * eps)
        worst = max(worst, rel_err(grad[i], numeric))
    return worst


def const_logit_model(vocab_size: int, logits, context_len: int = 64) -> core.StudentModel:
    """Zero weights plus a fixed output bias: constant logits at every position."""
    model = uniform_model(vocab_size, context_len)
    model.view("out.b")[...] = np.asarray(logits, dtype=float)
    return model
