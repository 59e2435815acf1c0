"""Tiny sequence model: exact-gradient training, decoding, evaluation."""

from clpd.model.core import (
    ModelConfig,
    StudentModel,
    forward_batch,
    forward_logits,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from clpd.model.decode import (
    batched_greedy_decode,
    exact_match_accuracy,
    greedy_decode,
    parse_final_answer,
)
from clpd.model.losses import seqkd_loss, skd_kld_loss
from clpd.model.optim import OptimState, apply_update, init_optimizer

__all__ = [
    "ModelConfig",
    "StudentModel",
    "OptimState",
    "init_model",
    "forward_batch",
    "forward_logits",
    "seqkd_loss",
    "skd_kld_loss",
    "apply_update",
    "init_optimizer",
    "greedy_decode",
    "batched_greedy_decode",
    "parse_final_answer",
    "exact_match_accuracy",
    "save_checkpoint",
    "load_checkpoint",
]
