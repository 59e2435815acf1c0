"""Synthetic multi-step arithmetic reasoning tasks.

Each example is a chain "start with a0 . then <op> v . ... what is the
result ?" together with a worked solution (one step string per operation)
and the final integer answer.  Difficulty is exactly the number of chain
operations, which gives the step-count ranking a clean ground truth.

Numbers are serialized digit-by-digit over a closed word-level vocabulary,
so answers require genuine multi-token decoding.  All generation is a pure
function of (config, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from clpd import rng
from clpd.errors import ConfigError, DataFormatError, InvariantError

PAD, BOS, EOS, SEP, ANS = "<pad>", "<bos>", "<eos>", "<sep>", "<ans>"

_DIGITS = tuple(str(d) for d in range(10))
_PROMPT_WORDS = (
    "start", "with", "then", "add", "subtract", "multiply", "by",
    "what", "is", "the", "result", "?", ".", "=",
)
_FILLERS = ("so", "now", "we", "have")
_ALT_WORDS = ("plus", "minus", "times", "thus", "next", "get", "you")

# Style-noise substitution map used by simulated teachers; alternates are in
# the vocabulary but never appear in reference solutions.
SYNONYMS = {
    "add": "plus",
    "subtract": "minus",
    "multiply": "times",
    "so": "thus",
    "now": "next",
    "we": "you",
    "have": "get",
}

# Chains whose intermediate values leave this range are redrawn.
VALUE_LIMIT = 999

_MULTIPLIERS = (2, 3)


@dataclass(frozen=True)
class Vocabulary:
    """Closed, ordered token list with exactly one PAD/BOS/EOS."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise InvariantError(f"duplicate vocabulary token {tok!r}")
            index[tok] = i
        for special in (PAD, BOS, EOS):
            if special not in index:
                raise InvariantError(f"vocabulary lacks {special}")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise DataFormatError(f"token {token!r} not in vocabulary") from None

    def encode(self, words) -> tuple[int, ...]:
        return tuple(self.id(w) for w in words)

    def encode_text(self, text: str) -> tuple[int, ...]:
        return self.encode(text.split())

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def bos_id(self) -> int:
        return self._index[BOS]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]

    @property
    def ans_id(self) -> int:
        return self._index[ANS]

    def digit_ids(self) -> frozenset[int]:
        return frozenset(self._index[d] for d in _DIGITS)

    @property
    def minus_id(self) -> int:
        return self._index["-"]


def default_vocab() -> Vocabulary:
    return Vocabulary(
        (PAD, BOS, EOS, SEP, ANS)
        + _DIGITS
        + ("-",)
        + _PROMPT_WORDS
        + _FILLERS
        + _ALT_WORDS
    )


def number_words(n: int) -> list[str]:
    """Digit-by-digit serialization, '-' sign first for negatives."""
    words = list(str(abs(n)))
    return (["-"] + words) if n < 0 else words


@dataclass(frozen=True)
class Example:
    """One training instance: prompt tokens plus reference solution."""

    id: int
    prompt: tuple[int, ...]
    answer: int
    cot: tuple[str, ...] | None = None
    step_count: int | None = None
    cot_char_len: int | None = None

    def __post_init__(self):
        if self.id < 0:
            raise InvariantError(f"example id {self.id} is negative")
        if not self.prompt:
            raise InvariantError(f"example {self.id} has an empty prompt")
        if self.cot is not None:
            if self.step_count != len(self.cot):
                raise InvariantError(
                    f"example {self.id}: step_count {self.step_count} != "
                    f"{len(self.cot)} solution steps"
                )
            char_len = sum(len(s) for s in self.cot)
            if self.cot_char_len != char_len:
                raise InvariantError(
                    f"example {self.id}: cot_char_len {self.cot_char_len} != {char_len}"
                )


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    vocab: Vocabulary
    split_tag: str = "train"

    def __post_init__(self):
        if self.split_tag not in ("train", "validation", "test"):
            raise InvariantError(f"unknown split tag {self.split_tag!r}")
        ids = [e.id for e in self.examples]
        if len(set(ids)) != len(ids):
            raise InvariantError("duplicate example ids")
        size = len(self.vocab)
        for e in self.examples:
            if any(t >= size or t < 0 for t in e.prompt):
                raise InvariantError(f"example {e.id} has out-of-vocab token index")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def by_id(self, example_id: int) -> Example:
        index = self.__dict__.get("_id_index")
        if index is None:
            index = {e.id: e for e in self.examples}
            object.__setattr__(self, "_id_index", index)
        try:
            return index[example_id]
        except KeyError:
            raise KeyError(f"no example with id {example_id}") from None


def _apply_op(value: int, op: str, operand: int) -> int:
    if op == "add":
        return value + operand
    if op == "subtract":
        return value - operand
    if op == "multiply":
        return value * operand
    raise ValueError(f"unknown op {op!r}")


def _op_words(op: str, operand: int) -> list[str]:
    if op == "multiply":
        return ["multiply", "by"] + number_words(operand)
    return [op] + number_words(operand)


def chain_prompt_words(start: int, ops) -> list[str]:
    words = ["start", "with"] + number_words(start) + ["."]
    for op, operand in ops:
        words += ["then"] + _op_words(op, operand) + ["."]
    words += ["what", "is", "the", "result", "?"]
    return words


def step_string(current: int, op: str, operand: int, result: int) -> str:
    words = number_words(current) + _op_words(op, operand) + ["="] + number_words(result)
    return " ".join(words)


def run_chain(start: int, ops) -> list[int]:
    """All intermediate values of the chain, including the final answer."""
    values = []
    value = start
    for op, operand in ops:
        value = _apply_op(value, op, operand)
        values.append(value)
    return values


def parse_steps(example: Example):
    """Recover (start_value, [(op, operand), ...]) from the solution steps."""
    if not example.cot:
        raise DataFormatError(f"example {example.id} has no solution steps")
    ops = []
    start = None
    for raw in example.cot:
        words = raw.split()
        if "=" not in words:
            raise DataFormatError(f"malformed solution step {raw!r}")
        op = next((w for w in ("add", "subtract", "multiply") if w in words), None)
        if op is None:
            raise DataFormatError(f"no operator in solution step {raw!r}")
        op_at = words.index(op)
        operand_from = op_at + (2 if op == "multiply" else 1)  # skip "by"
        eq = words.index("=")
        current = _parse_number(words[:op_at])
        operand = _parse_number(words[operand_from:eq])
        if start is None:
            start = current
        ops.append((op, operand))
    return start, ops


def replay_cot(steps) -> int:
    """Recompute the final answer from step strings (soundness check)."""
    value = None
    for raw in steps:
        words = raw.split()
        if "=" not in words:
            raise DataFormatError(f"malformed solution step {raw!r}")
        eq = words.index("=")
        value = _parse_number(words[eq + 1 :])
    if value is None:
        raise DataFormatError("empty solution")
    return value


def _parse_number(words) -> int:
    if not words:
        raise DataFormatError("empty number")
    text = "".join(words)
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(f"cannot parse number from {words!r}") from None


def _draw_chain(gen, step_count: int, lo: int, hi: int, limit: int):
    """Draw (start, ops) whose intermediates all fit in [-limit, limit]."""
    for _ in range(1000):
        start = int(gen.integers(lo, hi + 1))
        ops = []
        for _ in range(step_count):
            kind = ("add", "subtract", "multiply")[int(gen.integers(0, 3))]
            if kind == "multiply":
                operand = int(_MULTIPLIERS[int(gen.integers(0, len(_MULTIPLIERS)))])
            else:
                operand = int(gen.integers(lo, hi + 1))
            ops.append((kind, operand))
        values = run_chain(start, ops)
        if all(abs(v) <= limit for v in values) and abs(start) <= limit:
            return start, ops, values
    raise ConfigError(
        f"could not draw a chain with {step_count} steps in [{lo}, {hi}] "
        f"bounded by {limit}"
    )


def generate_task(n: int, step_range, value_range, seed: int, value_limit: int = VALUE_LIMIT) -> Dataset:
    """Generate n arithmetic-chain examples with worked solutions.

    Deterministic: example i depends only on (seed, i), so regeneration with
    the same seed is bitwise identical and workers may generate disjoint id
    ranges independently.  value_limit tightens the intermediate-value
    envelope below the hard clamp; smaller limits keep the arithmetic-fact
    table small enough for tiny students to cover.
    """
    min_steps, max_steps = int(step_range[0]), int(step_range[1])
    lo, hi = int(value_range[0]), int(value_range[1])
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    if min_steps < 1 or min_steps > max_steps:
        raise ConfigError(f"bad step_range [{min_steps}, {max_steps}]")
    if lo > hi:
        raise ConfigError(f"inverted value_range [{lo}, {hi}]")
    if not 1 <= value_limit <= VALUE_LIMIT:
        raise ConfigError(f"value_limit must be in [1, {VALUE_LIMIT}], got {value_limit}")

    vocab = default_vocab()
    examples = []
    for i in range(n):
        gen = rng.stream(seed, "example", i)
        step_count = int(gen.integers(min_steps, max_steps + 1))
        start, ops, values = _draw_chain(gen, step_count, lo, hi, value_limit)
        current = start
        steps = []
        for (op, operand), result in zip(ops, values):
            steps.append(step_string(current, op, operand, result))
            current = result
        answer = values[-1]
        if replay_cot(steps) != answer:
            raise InvariantError(f"example {i}: solution does not reach answer")
        examples.append(
            Example(
                id=i,
                prompt=vocab.encode(chain_prompt_words(start, ops)),
                answer=answer,
                cot=tuple(steps),
                step_count=step_count,
                cot_char_len=sum(len(s) for s in steps),
            )
        )
    return Dataset(tuple(examples), vocab, "train")


def reference_response(example: Example, vocab: Vocabulary) -> tuple[int, ...]:
    """Token ids of the reference solution: steps, <ans>, answer, <eos>."""
    words: list[str] = []
    if example.cot:
        for step in example.cot:
            words += step.split() + [SEP]
    words += [ANS] + number_words(example.answer) + [EOS]
    return vocab.encode(words)


def full_sequence(example: Example, vocab: Vocabulary, response) -> tuple[int, ...]:
    """Model-view token sequence: <bos> prompt response."""
    return (vocab.bos_id,) + tuple(example.prompt) + tuple(response)


# --- persistence -----------------------------------------------------------

_FIELDS = ("id", "prompt", "answer", "cot", "step_count")


def example_record(example: Example, vocab: Vocabulary) -> str:
    rec = {
        "id": example.id,
        "prompt": " ".join(vocab.decode(example.prompt)),
        "answer": example.answer,
        "cot": list(example.cot) if example.cot is not None else None,
        "step_count": example.step_count,
    }
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    """Write one JSON record per example; stable field order and bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in dataset.examples:
            fh.write(example_record(e, dataset.vocab) + "\n")


def load_dataset(path, split_tag: str = "train") -> Dataset:
    path = Path(path)
    vocab = default_vocab()
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            for fieldname in _FIELDS:
                if fieldname not in rec:
                    raise DataFormatError(
                        f"{path}:{lineno}: missing field {fieldname!r}"
                    )
            cot = rec["cot"]
            try:
                example = Example(
                    id=rec["id"],
                    prompt=vocab.encode_text(rec["prompt"]),
                    answer=rec["answer"],
                    cot=tuple(cot) if cot is not None else None,
                    step_count=rec["step_count"],
                    cot_char_len=(
                        sum(len(s) for s in cot) if cot is not None else None
                    ),
                )
            except InvariantError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if cot is not None and replay_cot(cot) != rec["answer"]:
                raise DataFormatError(
                    f"{path}:{lineno}: solution does not reproduce answer"
                )
            examples.append(example)
    return Dataset(tuple(examples), vocab, split_tag)


def dataset_hash(dataset: Dataset) -> str:
    """sha256 over the canonical record bytes; used in cache keys."""
    h = hashlib.sha256()
    for e in dataset.examples:
        h.update(example_record(e, dataset.vocab).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint covering train/validation/test partition, seed-deterministic."""
    if len(fractions) != 3:
        raise ConfigError("split needs exactly three fractions")
    fracs = [float(f) for f in fractions]
    if any(f <= 0 for f in fracs):
        raise ConfigError(f"split fractions must be positive, got {fracs}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")
    n = len(dataset)
    if n < 3:
        raise ConfigError(f"dataset of size {n} is too small to split")

    order = rng.stream(seed, "split").permutation(n)
    n_train = math.floor(fracs[0] * n + 0.5)
    n_val = math.floor(fracs[1] * n + 0.5)
    n_train = max(1, n_train)
    n_val = max(1, n_val)
    if n_train + n_val >= n:
        n_train = n - 2
        n_val = 1
    cuts = (n_train, n_train + n_val)

    def take(indices, tag):
        chosen = sorted(int(i) for i in indices)
        return Dataset(
            tuple(dataset.examples[i] for i in chosen), dataset.vocab, tag
        )

    return (
        take(order[: cuts[0]], "train"),
        take(order[cuts[0] : cuts[1]], "validation"),
        take(order[cuts[1] :], "test"),
    )
