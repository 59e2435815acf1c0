from __future__ import annotations

import json
import math

import numpy as np
import pytest

from clpd import data
from clpd.errors import ConfigError, DataFormatError


def test_generate_empty():
    ds = data.generate_task(0, [1, 3], [0, 9], seed=1)
    assert len(ds) == 0


def test_generate_single_step_answer_matches_op():
    # one-step chains: the answer is exactly start <op> operand
    ds = data.generate_task(25, [1, 1], [0, 9], seed=3)
    for e in ds.examples:
        start, ops = data.parse_steps(e)
        assert len(ops) == 1
        assert e.step_count == 1
        assert data.run_chain(start, ops)[-1] == e.answer


def test_generate_specific_add_chain():
    # hunt a seed whose single example is a plain addition, then check by hand
    for seed in range(60):
        ds = data.generate_task(1, [1, 1], [3, 4], seed=seed)
        start, ops = data.parse_steps(ds[0])
        if ops[0][0] == "add":
            assert ds[0].answer == start + ops[0][1]
            return
    pytest.fail("no addition chain found in seed scan")


def test_step_count_histogram_uniform():
    # oracle: binomial counting model, each bin within 3 sigma of n/6
    n, bins = 1000, 6
    ds = data.generate_task(n, [1, bins], [0, 9], seed=7)
    counts = {k: 0 for k in range(1, bins + 1)}
    for e in ds.examples:
        counts[e.step_count] += 1
    p = 1.0 / bins
    sigma = math.sqrt(n * p * (1 - p))
    for k, c in counts.items():
        assert abs(c - n * p) <= 3 * sigma, f"bin {k}: {c}"


def test_generate_deterministic_bitwise():
    a = data.generate_task(40, [1, 4], [0, 9], seed=11)
    b = data.generate_task(40, [1, 4], [0, 9], seed=11)
    assert a.examples == b.examples


def test_generate_bad_ranges():
    with pytest.raises(ConfigError):
        data.generate_task(5, [0, 3], [0, 9], seed=1)
    with pytest.raises(ConfigError):
        data.generate_task(5, [3, 2], [0, 9], seed=1)
    with pytest.raises(ConfigError):
        data.generate_task(5, [1, 3], [9, 0], seed=1)


def test_cot_soundness_full_dataset(tiny_dataset):
    for e in tiny_dataset.examples:
        assert data.replay_cot(e.cot) == e.answer
        assert e.step_count == len(e.cot)
        assert e.cot_char_len == sum(len(s) for s in e.cot)


def test_value_limit_respected():
    ds = data.generate_task(200, [1, 6], [0, 9], seed=5, value_limit=15)
    for e in ds.examples:
        start, ops = data.parse_steps(e)
        assert all(abs(v) <= 15 for v in data.run_chain(start, ops))


def test_vocabulary_closure(tiny_dataset):
    size = len(tiny_dataset.vocab)
    for e in tiny_dataset.examples:
        assert all(0 <= t < size for t in e.prompt)
        assert all(
            0 <= t < size for t in data.reference_response(e, tiny_dataset.vocab)
        )


def test_vocab_specials_unique(vocab):
    assert vocab.tokens.count(data.PAD) == 1
    assert vocab.tokens.count(data.BOS) == 1
    assert vocab.tokens.count(data.EOS) == 1
    # index lookup is a bijection
    assert sorted(vocab.id(t) for t in vocab.tokens) == list(range(len(vocab)))


def test_roundtrip_lossless(tmp_path, tiny_dataset):
    path = tmp_path / "ds.jsonl"
    data.save_dataset(tiny_dataset, path)
    loaded = data.load_dataset(path)
    assert loaded.examples == tiny_dataset.examples
    # bytes are stable across rewrites
    data.save_dataset(loaded, tmp_path / "ds2.jsonl")
    assert (tmp_path / "ds2.jsonl").read_bytes() == path.read_bytes()


def test_load_missing_field(tmp_path, tiny_dataset):
    path = tmp_path / "bad.jsonl"
    rec = json.loads(data.example_record(tiny_dataset[0], tiny_dataset.vocab))
    del rec["answer"]
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DataFormatError, match="answer"):
        data.load_dataset(path)


def test_load_reports_line_number(tmp_path, tiny_dataset):
    good = data.example_record(tiny_dataset[0], tiny_dataset.vocab)
    path = tmp_path / "bad.jsonl"
    path.write_text(good + "\n" + "{not json\n")
    with pytest.raises(DataFormatError, match=":2"):
        data.load_dataset(path)


def test_load_step_count_mismatch(tmp_path, tiny_dataset):
    rec = json.loads(data.example_record(tiny_dataset[0], tiny_dataset.vocab))
    rec["step_count"] = rec["step_count"] + 1
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DataFormatError, match="step_count"):
        data.load_dataset(path)


def test_split_sizes():
    ds = data.generate_task(10, [1, 2], [0, 9], seed=2)
    train, val, test = data.split(ds, [0.8, 0.1, 0.1], seed=1)
    assert (len(train), len(val), len(test)) == (8, 1, 1)


def test_split_partition_property(tiny_dataset):
    train, val, test = data.split(tiny_dataset, [0.7, 0.15, 0.15], seed=9)
    all_ids = sorted(e.id for part in (train, val, test) for e in part.examples)
    assert all_ids == sorted(e.id for e in tiny_dataset.examples)


def test_split_deterministic(tiny_dataset):
    a = data.split(tiny_dataset, [0.7, 0.15, 0.15], seed=4)
    b = data.split(tiny_dataset, [0.7, 0.15, 0.15], seed=4)
    for left, right in zip(a, b):
        assert left.examples == right.examples


def test_split_too_small():
    ds = data.generate_task(2, [1, 1], [0, 9], seed=1)
    with pytest.raises(ConfigError):
        data.split(ds, [0.8, 0.1, 0.1], seed=1)


def test_split_bad_fractions(tiny_dataset):
    with pytest.raises(ConfigError):
        data.split(tiny_dataset, [0.5, 0.2, 0.2], seed=1)


def test_dataset_hash_changes_with_content():
    a = data.generate_task(10, [1, 2], [0, 9], seed=1)
    b = data.generate_task(10, [1, 2], [0, 9], seed=2)
    assert data.dataset_hash(a) != data.dataset_hash(b)
    assert data.dataset_hash(a) == data.dataset_hash(
        data.generate_task(10, [1, 2], [0, 9], seed=1)
    )


def test_number_words_negative_and_zero():
    assert data.number_words(0) == ["0"]
    assert data.number_words(-12) == ["-", "1", "2"]
    assert data.number_words(305) == ["3", "0", "5"]
