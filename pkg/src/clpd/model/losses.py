"""Distillation training objectives with exact gradients.

Both losses supervise the response region only: the sequence fed to the
model is <bos> + prompt + response, and loss positions are exactly those
whose *target* is a response token.

* sequence-level loss: mean per-token NLL of the response tokens.
* distribution-matching loss: mean per-position forward KL between the
  teacher's next-token distribution and the student's.
"""

from __future__ import annotations

import numpy as np

from clpd.data import default_vocab
from clpd.model import core
from clpd.model.workspace import default_workspace


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _log_softmax_into(logits: np.ndarray, ws, name: str) -> np.ndarray:
    """log_softmax computed in workspace buffers (no large temporaries)."""
    ls = ws.get(name, logits.shape)
    np.subtract(logits, logits.max(axis=-1, keepdims=True), out=ls)
    expbuf = ws.get(name + ".exp", logits.shape)
    np.exp(ls, out=expbuf)
    ls -= np.log(expbuf.sum(axis=-1, keepdims=True))
    return ls


def batch_arrays(bos_id: int, pad_id: int, prompts, outputs):
    """Encode (prompt, output) pairs into padded (inputs, targets, mask).

    Position p of row i is masked when targets[i, p] is a response token,
    i.e. p >= len(prompt_i).
    """
    seqs = []
    for prompt, output in zip(prompts, outputs):
        if len(output) == 0:
            raise ValueError("empty response")
        seqs.append((bos_id, *prompt, *output))
    max_t = max(len(s) for s in seqs) - 1
    batch = len(seqs)
    inputs = np.full((batch, max_t), pad_id, dtype=np.int64)
    targets = np.full((batch, max_t), pad_id, dtype=np.int64)
    mask = np.zeros((batch, max_t), dtype=bool)
    for i, (seq, prompt) in enumerate(zip(seqs, prompts)):
        t = len(seq) - 1
        inputs[i, :t] = seq[:-1]
        targets[i, :t] = seq[1:]
        mask[i, len(prompt) : t] = True
    return inputs, targets, mask


def _response_counts(mask: np.ndarray) -> np.ndarray:
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("sample with no response tokens")
    return counts.astype(float)


def seqkd_batch_ids(model: core.StudentModel, inputs, targets, mask, kernels=None, ws=None):
    """Mean-of-means NLL over a batch; returns (loss, per_sample, grad).

    The gradient lives in a workspace buffer: consume it before the next
    backward pass on the same workspace, or copy it.
    """
    ws = ws or default_workspace()
    logits, cache = core.forward_batch(model, inputs, kernels, ws)
    ls = _log_softmax_into(logits, ws, "loss.ls")
    batch = inputs.shape[0]
    rows, cols = np.nonzero(mask)
    picked = ls[rows, cols, targets[rows, cols]]
    counts = _response_counts(mask)
    per_sample = np.zeros(batch)
    np.add.at(per_sample, rows, -picked)
    per_sample /= counts
    loss = float(per_sample.mean())

    dlogits = ws.zeros("loss.dlogits", logits.shape)
    probs = np.exp(ls[rows, cols])
    probs[np.arange(rows.size), targets[rows, cols]] -= 1.0
    dlogits[rows, cols] = probs / (counts[rows, None] * batch)
    grad = core.backward_batch(model, cache, dlogits, kernels, ws)
    return loss, per_sample, grad


def kld_batch_ids(model: core.StudentModel, inputs, mask, teacher_probs, kernels=None, ws=None):
    """Forward KL(teacher || student) averaged per sample then over the batch.

    teacher_probs is (B, T, V); rows are meaningful only where mask is True.
    """
    ws = ws or default_workspace()
    logits, cache = core.forward_batch(model, inputs, kernels, ws)
    ls = _log_softmax_into(logits, ws, "loss.ls")
    batch = inputs.shape[0]
    rows, cols = np.nonzero(mask)
    p = teacher_probs[rows, cols]
    safe = np.where(p > 0.0, p, 1.0)
    plogp = (p * np.log(safe)).sum(axis=1)
    cross = -(p * ls[rows, cols]).sum(axis=1)
    counts = _response_counts(mask)
    per_sample = np.zeros(batch)
    np.add.at(per_sample, rows, plogp + cross)
    per_sample /= counts
    loss = float(per_sample.mean())

    dlogits = ws.zeros("loss.dlogits", logits.shape)
    dlogits[rows, cols] = (np.exp(ls[rows, cols]) - p) / (counts[rows, None] * batch)
    grad = core.backward_batch(model, cache, dlogits, kernels, ws)
    return loss, per_sample, grad


def nll_per_sample(model: core.StudentModel, inputs, targets, mask, kernels=None, ws=None) -> np.ndarray:
    """Per-sample mean NLL without gradients (scoring / alignment path)."""
    ws = ws or default_workspace()
    logits, _ = core.forward_batch(model, inputs, kernels, ws)
    ls = _log_softmax_into(logits, ws, "loss.ls")
    rows, cols = np.nonzero(mask)
    picked = ls[rows, cols, targets[rows, cols]]
    counts = _response_counts(mask)
    per_sample = np.zeros(inputs.shape[0])
    np.add.at(per_sample, rows, -picked)
    return per_sample / counts


def distribution_matrix(vocab_size, prompts, outputs, distributions):
    """Place per-position teacher distributions into the padded (B,T,V) grid."""
    max_t = max(1 + len(p) + len(o) for p, o in zip(prompts, outputs)) - 1
    probs = np.zeros((len(prompts), max_t, vocab_size))
    for i, (prompt, output, dists) in enumerate(zip(prompts, outputs, distributions)):
        if dists is None:
            raise ValueError(
                "sample has no token distributions; use the sequence-level loss instead"
            )
        if len(dists) != len(output):
            raise ValueError(
                f"got {len(dists)} distributions for {len(output)} output tokens"
            )
        start = len(prompt)
        for j, dist in enumerate(dists):
            probs[i, start + j] = dist
    return probs


def seqkd_loss(model: core.StudentModel, sample, prompt):
    """Single-sample sequence-level loss; returns (loss, flat gradient)."""
    vocab = default_vocab()
    inputs, targets, mask = batch_arrays(
        vocab.bos_id, vocab.pad_id, [tuple(prompt)], [tuple(sample.output_tokens)]
    )
    loss, _, grad = seqkd_batch_ids(model, inputs, targets, mask)
    return loss, grad.copy()


def skd_kld_loss(model: core.StudentModel, sample, prompt):
    """Single-sample forward-KL loss; requires sample.token_distributions."""
    vocab = default_vocab()
    output = tuple(sample.output_tokens)
    inputs, _, mask = batch_arrays(vocab.bos_id, vocab.pad_id, [tuple(prompt)], [output])
    probs = distribution_matrix(
        model.config.vocab_size, [tuple(prompt)], [output], [sample.token_distributions]
    )
    loss, _, grad = kld_batch_ids(model, inputs, mask, probs)
    return loss, grad.copy()
