"""Greedy decoding and final-answer exact-match evaluation."""

from __future__ import annotations

import numpy as np

from clpd.data import Dataset, default_vocab
from clpd.model import core


def batched_greedy_decode(
    model: core.StudentModel,
    prompts,
    max_len: int,
    kernels=None,
    capture_probs: bool = False,
):
    """Greedy-decode a batch of prompts in lockstep.

    Returns a list of (tokens, truncated) pairs; tokens exclude the EOS that
    terminated decoding, truncated marks rows that hit max_len without EOS.
    With capture_probs, rows gain a third element: the model's softmax at
    every emitted position, including the one that produced EOS.
    Deterministic: argmax ties resolve to the lowest token id.
    """
    vocab = default_vocab()
    batch = len(prompts)
    if batch == 0:
        return []
    lengths = np.array([1 + len(p) for p in prompts])
    max_t = int(lengths.max())
    warmup = np.full((batch, max_t), vocab.pad_id, dtype=np.int64)
    for i, prompt in enumerate(prompts):
        warmup[i, 0] = vocab.bos_id
        warmup[i, 1 : 1 + len(prompt)] = prompt

    logits, cache = core.forward_batch(model, warmup, kernels)
    recurrent = model.config.arch == "gated-recurrent"
    rows = np.arange(batch)
    last = logits[rows, lengths - 1]
    if recurrent:
        layer_h = core.gru_states_from_forward(model, cache)
        states = [h[rows, lengths - 1] for h in layer_h]
    else:
        # attention decodes by re-running the growing prefix each step
        grown = [list(seq[:length]) for seq, length in zip(warmup.tolist(), lengths)]

    outputs: list[list[int]] = [[] for _ in range(batch)]
    probs: list[list[np.ndarray]] = [[] for _ in range(batch)]
    done = np.zeros(batch, dtype=bool)
    for _ in range(max_len):
        nxt = last.argmax(axis=1)
        nxt = np.where(done, vocab.pad_id, nxt)
        hit_eos = (nxt == vocab.eos_id) & ~done
        if capture_probs:
            shifted = last - last.max(axis=1, keepdims=True)
            soft = np.exp(shifted)
            soft /= soft.sum(axis=1, keepdims=True)
            for i in range(batch):
                if not done[i]:
                    probs[i].append(soft[i].copy())
        for i in range(batch):
            if not done[i] and not hit_eos[i]:
                outputs[i].append(int(nxt[i]))
        done |= hit_eos
        if done.all():
            break
        if recurrent:
            step_in = np.where(done, vocab.pad_id, nxt).astype(np.int64)
            last, states = core.gru_step(model, step_in, states, kernels)
        else:
            for i in range(batch):
                grown[i].append(int(vocab.pad_id if done[i] else nxt[i]))
            max_t = max(len(g) for g in grown)
            padded = np.full((batch, max_t), vocab.pad_id, dtype=np.int64)
            for i, g in enumerate(grown):
                padded[i, : len(g)] = g
            logits, _ = core.forward_batch(model, padded, kernels)
            pos = np.array([len(g) - 1 for g in grown])
            last = logits[rows, pos]
    truncated = ~done
    if capture_probs:
        return [
            (tuple(outputs[i]), bool(truncated[i]), probs[i]) for i in range(batch)
        ]
    return [(tuple(outputs[i]), bool(truncated[i])) for i in range(batch)]


def greedy_decode(model: core.StudentModel, prompt, max_len: int):
    """Greedy decode one prompt; returns tokens generated before EOS."""
    (tokens, _truncated), = batched_greedy_decode(model, [tuple(prompt)], max_len)
    return tokens


def parse_final_answer(tokens, vocab=None):
    """Integer value of the last number token group, or None if absent.

    A number group is a maximal contiguous run of digit tokens optionally
    preceded by the minus-sign token.
    """
    vocab = vocab or default_vocab()
    digit_ids = vocab.digit_ids()
    minus = vocab.minus_id
    words = None
    end = len(tokens)
    i = end - 1
    while i >= 0:
        if tokens[i] in digit_ids:
            j = i
            while j >= 0 and tokens[j] in digit_ids:
                j -= 1
            if j >= 0 and tokens[j] == minus:
                j -= 1
            words = vocab.decode(tokens[j + 1 : i + 1])
            break
        i -= 1
    if words is None:
        return None
    try:
        return int("".join(words))
    except ValueError:
        return None


def default_decode_budget(dataset: Dataset) -> int:
    """Generation cap: longest reference response plus slack."""
    from clpd.data import reference_response

    longest = max(
        (len(reference_response(e, dataset.vocab)) for e in dataset.examples),
        default=8,
    )
    return longest + 16


def exact_match_accuracy(
    model: core.StudentModel,
    dataset: Dataset,
    indices=None,
    max_len: int | None = None,
    kernels=None,
) -> float:
    """Fraction of examples whose decoded final answer equals the reference.

    Unparsable outputs count as incorrect.
    """
    examples = (
        dataset.examples
        if indices is None
        else [dataset.examples[i] for i in indices]
    )
    if not examples:
        return 0.0
    if max_len is None:
        max_len = default_decode_budget(dataset)
    decoded = batched_greedy_decode(model, [e.prompt for e in examples], max_len, kernels)
    hits = 0
    for example, (tokens, _trunc) in zip(examples, decoded):
        answer = parse_final_answer(tokens, dataset.vocab)
        if answer is not None and answer == example.answer:
            hits += 1
    return hits / len(examples)
