from __future__ import annotations

import math

import numpy as np
import pytest

from clpd import data
from clpd.data import reference_response
from clpd.model import core, decode, losses, optim
from tests.conftest import const_logit_model, uniform_model


def test_init_deterministic(tiny_model_cfg):
    a = core.init_model(tiny_model_cfg, seed=3)
    b = core.init_model(tiny_model_cfg, seed=3)
    assert np.array_equal(a.params, b.params)


def test_init_seed_changes_params(tiny_model_cfg):
    a = core.init_model(tiny_model_cfg, seed=3)
    b = core.init_model(tiny_model_cfg, seed=4)
    assert not np.array_equal(a.params, b.params)


def test_init_finite(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=5)
    assert np.all(np.isfinite(model.params))


def test_layout_covers_params(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    total = sum(
        int(np.prod(shape)) for _, (_, shape) in model.param_layout.items()
    )
    assert total == model.num_params


def test_config_validation():
    with pytest.raises(Exception, match="embed_dim"):
        core.ModelConfig(vocab_size=10, embed_dim=0, hidden_dim=4, num_layers=1,
                         context_len=8)
    with pytest.raises(Exception, match="arch"):
        core.ModelConfig(vocab_size=10, embed_dim=4, hidden_dim=4, num_layers=1,
                         context_len=8, arch="rnn")
    with pytest.raises(Exception, match="small-attention"):
        core.ModelConfig(vocab_size=10, embed_dim=4, hidden_dim=8, num_layers=1,
                         context_len=8, arch="small-attention")


@pytest.mark.parametrize("arch,dims", [("gated-recurrent", (6, 8)), ("small-attention", (8, 8))])
def test_causality(arch, dims):
    cfg = core.ModelConfig(vocab_size=12, embed_dim=dims[0], hidden_dim=dims[1],
                           num_layers=2, context_len=16, arch=arch)
    model = core.init_model(cfg, seed=2)
    tokens = np.array([[1, 3, 5, 7, 9, 2]])
    before, _ = core.forward_batch(model, tokens)
    before = before.copy()
    bumped = tokens.copy()
    bumped[0, 4] = 11
    after, _ = core.forward_batch(model, bumped)
    assert np.array_equal(before[0, :4], after[0, :4])
    assert not np.allclose(before[0, 4:], after[0, 4:])


def test_softmax_rows_sum_to_one(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=6)
    logits = core.forward_logits(model, [1, 4, 7, 9])
    probs = np.exp(losses.log_softmax(logits))
    assert np.all(np.abs(probs.sum(axis=-1) - 1.0) < 1e-12)


def test_batch_of_one_matches_single(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=7)
    seq = [1, 5, 9, 3, 2]
    single = core.forward_logits(model, seq)
    batched, _ = core.forward_batch(model, np.array([seq]))
    assert np.array_equal(single, batched[0])


def test_padded_batch_consistent_with_single(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=8)
    a = [1, 5, 9, 3, 2, 6, 7]
    b = [2, 4, 6]
    pad = 0
    batch = np.full((2, len(a)), pad, dtype=np.int64)
    batch[0] = a
    batch[1, : len(b)] = b
    batched, _ = core.forward_batch(model, batch)
    batched = batched.copy()
    single_b, _ = core.forward_batch(model, np.array([b]))
    assert np.allclose(batched[1, : len(b)], single_b[0], atol=1e-12)


def test_overlong_input_rejected(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    with pytest.raises(ValueError, match="context_len"):
        core.forward_batch(model, np.zeros((1, tiny_model_cfg.context_len + 1), dtype=np.int64))
    with pytest.raises(ValueError, match="vocabulary"):
        core.forward_batch(model, np.array([[0, tiny_model_cfg.vocab_size]]))


def test_checkpoint_roundtrip_bit_exact(tmp_path, tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=11)
    path = tmp_path / "model.ckpt"
    core.save_checkpoint(model, path)
    loaded = core.load_checkpoint(path)
    assert loaded.config == model.config
    assert np.array_equal(loaded.params, model.params)
    # and byte-stable on rewrite
    core.save_checkpoint(loaded, tmp_path / "model2.ckpt")
    assert (tmp_path / "model2.ckpt").read_bytes() == path.read_bytes()


# --- optimizer ----------------------------------------------------------------


def test_zero_grad_no_change(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    before = model.params.copy()
    opt = optim.init_optimizer(model, "sgd-momentum", lr=0.1)
    optim.apply_update(model, opt, np.zeros(model.num_params), clip=1.0)
    assert np.array_equal(model.params, before)
    assert opt.step_count == 1


def test_zero_lr_no_change(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    before = model.params.copy()
    opt = optim.init_optimizer(model, "adam-style", lr=0.0)
    optim.apply_update(model, opt, np.ones(model.num_params), clip=0.0)
    assert np.array_equal(model.params, before)


def test_clipping_rescales_to_norm():
    grad = np.zeros(100)
    grad[0] = 10.0
    clipped = optim.clip_by_global_norm(grad, 1.0)
    assert abs(np.linalg.norm(clipped) - 1.0) < 1e-9
    small = np.full(4, 0.01)
    assert np.array_equal(optim.clip_by_global_norm(small, 1.0), small)


def test_nonfinite_grad_aborts(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    opt = optim.init_optimizer(model, "sgd-momentum", lr=0.1)
    grad = np.zeros(model.num_params)
    grad[3] = float("nan")
    with pytest.raises(RuntimeError, match="non-finite gradient"):
        optim.apply_update(model, opt, grad, clip=1.0)


def test_momentum_accumulates(tiny_model_cfg):
    model = core.init_model(tiny_model_cfg, seed=1)
    opt = optim.init_optimizer(model, "sgd-momentum", lr=1.0)
    grad = np.ones(model.num_params)
    p0 = model.params.copy()
    optim.apply_update(model, opt, grad, clip=0.0)
    step1 = p0 - model.params
    optim.apply_update(model, opt, grad, clip=0.0)
    step2 = p0 - step1 - model.params
    # second step includes 0.9 * previous velocity
    assert np.allclose(step2, 1.9 * step1, atol=1e-12)


# --- decoding -----------------------------------------------------------------


def test_eos_first_model_decodes_empty(vocab):
    logits = np.zeros(len(vocab))
    logits[vocab.eos_id] = 10.0
    model = const_logit_model(len(vocab), logits)
    out = decode.greedy_decode(model, [vocab.id("start"), vocab.id("3")], max_len=8)
    assert out == ()


def test_greedy_decode_deterministic(tiny_model_cfg, tiny_dataset):
    model = core.init_model(tiny_model_cfg, seed=3)
    prompt = tiny_dataset[0].prompt
    a = decode.greedy_decode(model, prompt, max_len=24)
    b = decode.greedy_decode(model, prompt, max_len=24)
    assert a == b


def test_batched_decode_matches_singles(tiny_model_cfg, tiny_dataset):
    model = core.init_model(tiny_model_cfg, seed=3)
    prompts = [e.prompt for e in tiny_dataset.examples[:6]]
    rows = decode.batched_greedy_decode(model, prompts, max_len=20)
    for prompt, (tokens, truncated) in zip(prompts, rows):
        assert decode.greedy_decode(model, prompt, max_len=20) == tokens


def test_parse_final_answer(vocab):
    def ids(text):
        return vocab.encode_text(text)

    assert decode.parse_final_answer(ids("3 add 4 = 7 <ans> 7"), vocab) == 7
    assert decode.parse_final_answer(ids("<ans> - 1 2"), vocab) == -12
    assert decode.parse_final_answer(ids("so then add"), vocab) is None
    assert decode.parse_final_answer([], vocab) is None
    # the last group wins
    assert decode.parse_final_answer(ids("1 0 then 2 5"), vocab) == 25


def test_exact_match_eos_only_model_scores_zero(tiny_dataset, vocab):
    logits = np.zeros(len(vocab))
    logits[vocab.eos_id] = 10.0
    model = const_logit_model(len(vocab), logits, context_len=120)
    assert decode.exact_match_accuracy(model, tiny_dataset) == 0.0


def overfit_three_examples(vocab):
    """Train a small model to reproduce three short reference targets."""
    full = data.generate_task(3, [1, 1], [0, 5], seed=21)
    cfg = core.ModelConfig(vocab_size=len(vocab), embed_dim=16, hidden_dim=32,
                           num_layers=1, context_len=64)
    model = core.init_model(cfg, seed=2)
    opt = optim.init_optimizer(model, "adam-style", lr=1e-2)
    prompts = [e.prompt for e in full.examples]
    outputs = [reference_response(e, vocab) for e in full.examples]
    inputs, targets, mask = losses.batch_arrays(vocab.bos_id, vocab.pad_id, prompts, outputs)
    for _ in range(300):
        _, _, grad = losses.seqkd_batch_ids(model, inputs, targets, mask)
        optim.apply_update(model, opt, grad, clip=1.0)
    return model, full


def test_overfit_model_decodes_training_targets(vocab):
    # overfit-one-batch oracle: decoded output equals the memorized target
    model, full = overfit_three_examples(vocab)
    for e in full.examples:
        want = reference_response(e, vocab)
        got = decode.greedy_decode(model, e.prompt, max_len=len(want) + 8)
        assert got + (vocab.eos_id,) == want
    assert decode.exact_match_accuracy(model, full) == 1.0


def test_exact_match_two_of_three(vocab):
    # hand-decoded oracle: corrupt one reference answer; the memorizer now
    # scores exactly 2/3
    model, full = overfit_three_examples(vocab)
    tampered = data.Dataset(
        (
            full.examples[0],
            full.examples[1],
            data.Example(
                id=full.examples[2].id,
                prompt=full.examples[2].prompt,
                answer=full.examples[2].answer + 1,
                cot=None, step_count=None, cot_char_len=None,
            ),
        ),
        vocab,
        "train",
    )
    assert decode.exact_match_accuracy(model, tampered) == pytest.approx(2 / 3)


def test_truncation_flagged(vocab):
    # a model that never emits EOS truncates at max_len
    logits = np.zeros(len(vocab))
    logits[vocab.id("5")] = 10.0
    model = const_logit_model(len(vocab), logits)
    rows = decode.batched_greedy_decode(model, [(vocab.id("3"),)], max_len=4)
    tokens, truncated = rows[0]
    assert truncated and len(tokens) == 4
