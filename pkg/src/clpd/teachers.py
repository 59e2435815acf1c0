"""Teachers: simulated oracles, model checkpoints, and pool construction.

Oracle teachers turn a competence profile into supervision with controllable
quality: per-step-count accuracy decides whether the emitted solution is
correct, verbosity inserts filler words, and style noise swaps words for
synonyms.  Wrong solutions stay plausible: exactly one intermediate result
is perturbed and the error propagates through the remaining steps.

Checkpoint teachers are frozen student-shaped models decoded greedily.

Draw-order contract for oracle generation (keeps noise grids comparable
under paired seeds): (1) one uniform for correctness, (2) error step index
and offset when incorrect, (3) filler choices per step, (4) one uniform per
emitted solution token.  Steps 1-3 never depend on style_noise, so raising
only the noise knob substitutes a superset of the same token positions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clpd import rng
from clpd.data import (
    ANS,
    EOS,
    SEP,
    SYNONYMS,
    Dataset,
    Example,
    _apply_op,
    default_vocab,
    number_words,
    parse_steps,
)
from clpd.errors import DataFormatError, InvariantError, MissingArtifactError
from clpd.model import losses
from clpd.model.core import StudentModel
from clpd.model.decode import batched_greedy_decode, parse_final_answer

log = logging.getLogger(__name__)

_FILLER_WORDS = ("so", "now", "we", "have")


@dataclass(frozen=True)
class CompetenceProfile:
    """Controllable competence and alignment knobs for a simulated teacher."""

    accuracy_by_steps: dict[int, float]
    verbosity: int = 0
    style_noise: float = 0.0

    def __post_init__(self):
        for k, p in self.accuracy_by_steps.items():
            if not 0.0 <= p <= 1.0:
                raise InvariantError(f"accuracy for {k} steps is {p}, outside [0, 1]")
        if self.verbosity < 0:
            raise InvariantError(f"verbosity must be >= 0, got {self.verbosity}")
        if not 0.0 <= self.style_noise <= 1.0:
            raise InvariantError(f"style_noise {self.style_noise} outside [0, 1]")


@dataclass(frozen=True)
class Teacher:
    id: str
    kind: str  # "oracle" | "checkpoint"
    profile: CompetenceProfile | None = None
    model: StudentModel | None = None
    exposes_distribution: bool = False

    def __post_init__(self):
        if self.kind == "oracle":
            if self.profile is None or self.model is not None:
                raise InvariantError(f"oracle teacher {self.id!r} needs a profile only")
        elif self.kind == "checkpoint":
            if self.model is None or self.profile is not None:
                raise InvariantError(f"checkpoint teacher {self.id!r} needs a model only")
        else:
            raise InvariantError(f"unknown teacher kind {self.kind!r}")


@dataclass(frozen=True)
class TeacherPool:
    """Viable teachers ordered weakest to strongest by measured performance."""

    teachers: tuple[Teacher, ...]
    perf: tuple[float, ...]
    tau: float

    def __post_init__(self):
        if not self.teachers:
            raise InvariantError("teacher pool is empty")
        if len(self.perf) != len(self.teachers):
            raise InvariantError("perf list not parallel to teachers")
        for p in self.perf:
            if p < self.tau:
                raise InvariantError(f"pool contains perf {p} below tau {self.tau}")
        for a, b in zip(self.perf, self.perf[1:]):
            if a > b:
                raise InvariantError("pool perf values are not non-decreasing")

    def __len__(self) -> int:
        return len(self.teachers)

    def by_id(self, teacher_id: str) -> Teacher:
        for t in self.teachers:
            if t.id == teacher_id:
                return t
        raise KeyError(f"no teacher {teacher_id!r} in pool")


@dataclass(frozen=True)
class DistillSample:
    example_id: int
    teacher_id: str
    output_tokens: tuple[int, ...]
    token_distributions: tuple | None = None
    truncated: bool = False

    def __post_init__(self):
        if self.token_distributions is not None:
            if len(self.token_distributions) != len(self.output_tokens):
                raise InvariantError(
                    f"sample {self.example_id}: {len(self.token_distributions)} "
                    f"distributions for {len(self.output_tokens)} tokens"
                )
            for i, dist in enumerate(self.token_distributions):
                arr = np.asarray(dist)
                if arr.ndim != 1 or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
                    raise InvariantError(
                        f"sample {self.example_id}: distribution {i} is not a "
                        "probability vector"
                    )


# --- oracle generation --------------------------------------------------------


def _emitted_values(start: int, ops, error_at: int | None, delta: int) -> list[int]:
    """Chain results as written down, with one slip propagated onward."""
    values = []
    current = start
    for i, (op, operand) in enumerate(ops):
        result = _apply_op(current, op, operand)
        if error_at is not None and i == error_at:
            result += delta
        values.append(result)
        current = result
    return values


def _solution_words(start: int, ops, values, gen, verbosity: int) -> list[str]:
    words: list[str] = []
    current = start
    for (op, operand), result in zip(ops, values):
        for _ in range(verbosity):
            words.append(_FILLER_WORDS[int(gen.integers(0, len(_FILLER_WORDS)))])
        words += number_words(current)
        words += ["multiply", "by"] if op == "multiply" else [op]
        words += number_words(operand)
        words += ["="] + number_words(result)
        words.append(SEP)
        current = result
    return words


def oracle_generate(teacher: Teacher, example: Example, gen) -> DistillSample:
    """Sample one solution from an oracle teacher.

    Filler insertion and synonym substitution touch solution tokens only;
    the final answer tokens are never altered.
    """
    if teacher.kind != "oracle":
        raise ValueError(f"teacher {teacher.id!r} is not an oracle")
    profile = teacher.profile
    if example.step_count not in profile.accuracy_by_steps:
        raise LookupError(
            f"teacher {teacher.id!r} profile does not cover step_count="
            f"{example.step_count} (example {example.id})"
        )
    start, ops = parse_steps(example)

    correct = float(gen.random()) < profile.accuracy_by_steps[example.step_count]
    if correct:
        error_at, delta = None, 0
    else:
        error_at = int(gen.integers(0, len(ops)))
        # nonzero offset in [-3, 3]; propagation through add/subtract keeps
        # it, multiply scales it, so the final answer is always wrong
        delta = int(gen.integers(1, 4)) * (1 if gen.random() < 0.5 else -1)
    values = _emitted_values(start, ops, error_at, delta)

    words = _solution_words(start, ops, values, gen, profile.verbosity)
    noisy = []
    for w in words:
        u = float(gen.random())  # one draw per token regardless of synonyms
        if u < profile.style_noise and w in SYNONYMS:
            noisy.append(SYNONYMS[w])
        else:
            noisy.append(w)
    final = noisy + [ANS] + number_words(values[-1]) + [EOS]
    vocab = default_vocab()
    return DistillSample(
        example_id=example.id,
        teacher_id=teacher.id,
        output_tokens=vocab.encode(final),
    )


# --- checkpoint generation ------------------------------------------------


def checkpoint_generate(
    teacher: Teacher,
    example: Example,
    max_len: int = 128,
    kernels=None,
) -> DistillSample:
    """Greedy decode the teacher model on one prompt."""
    samples = checkpoint_generate_batch(teacher, [example], max_len, kernels)
    return samples[0]


def checkpoint_generate_batch(teacher, examples, max_len=128, kernels=None):
    if teacher.kind != "checkpoint":
        raise ValueError(f"teacher {teacher.id!r} is not a checkpoint teacher")
    vocab = default_vocab()
    decoded = batched_greedy_decode(
        teacher.model,
        [e.prompt for e in examples],
        max_len,
        kernels,
        capture_probs=teacher.exposes_distribution,
    )
    samples = []
    for example, row in zip(examples, decoded):
        if teacher.exposes_distribution:
            tokens, truncated, probs = row
        else:
            tokens, truncated = row
            probs = None
        output = tuple(tokens) + (vocab.eos_id,)
        dists = None
        if probs is not None:
            if truncated:
                # the terminal EOS was appended, not produced by the model
                dists = None
            else:
                dists = tuple(probs)
        samples.append(
            DistillSample(
                example_id=example.id,
                teacher_id=teacher.id,
                output_tokens=output,
                token_distributions=dists,
                truncated=truncated,
            )
        )
    return samples


# --- corpus generation and caching ---------------------------------------


def generate_corpus(
    teacher: Teacher,
    dataset: Dataset,
    seed: int,
    max_len: int = 128,
    kernels=None,
) -> dict[int, DistillSample]:
    """Teacher outputs for every example, keyed by example id.

    Oracle randomness is a substream of (seed, example id) only, so two
    teachers generated under the same seed are sampled on paired draws.
    """
    vocab = dataset.vocab
    samples: dict[int, DistillSample] = {}
    if teacher.kind == "oracle":
        for e in dataset.examples:
            gen = rng.stream(seed, "corpus", e.id)
            samples[e.id] = oracle_generate(teacher, e, gen)
    else:
        batch = 256
        for at in range(0, len(dataset), batch):
            chunk = dataset.examples[at : at + batch]
            for s in checkpoint_generate_batch(teacher, chunk, max_len, kernels):
                samples[s.example_id] = s
    return samples


def corpus_filename(teacher_id: str, dataset_hash: str, seed: int) -> str:
    return f"{teacher_id}-{dataset_hash[:12]}-s{seed}.jsonl"


def save_corpus(samples: dict[int, DistillSample], vocab, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for example_id in sorted(samples):
            s = samples[example_id]
            rec = {
                "example_id": s.example_id,
                "teacher_id": s.teacher_id,
                "output_tokens": " ".join(vocab.decode(s.output_tokens)),
                "truncated": s.truncated,
            }
            if s.token_distributions is not None:
                rec["distributions"] = [
                    [float(p) for p in dist] for dist in s.token_distributions
                ]
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_corpus(path, vocab) -> dict[int, DistillSample]:
    path = Path(path)
    samples: dict[int, DistillSample] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                dists = rec.get("distributions")
                sample = DistillSample(
                    example_id=rec["example_id"],
                    teacher_id=rec["teacher_id"],
                    output_tokens=vocab.encode_text(rec["output_tokens"]),
                    token_distributions=(
                        tuple(np.asarray(d) for d in dists) if dists is not None else None
                    ),
                    truncated=rec["truncated"],
                )
            except (json.JSONDecodeError, KeyError, InvariantError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad corpus record: {exc}")
            samples[sample.example_id] = sample
    return samples


# --- evaluation, filtering, alignment --------------------------------------


def sample_answer(sample: DistillSample, vocab) -> int | None:
    return parse_final_answer(list(sample.output_tokens), vocab)


def evaluate_teacher(
    teacher: Teacher,
    dataset: Dataset,
    seed: int = 0,
    indices=None,
    max_len: int = 128,
    kernels=None,
) -> float:
    """Final-answer exact-match accuracy on a validation set.

    Oracle teachers use fresh draws keyed by (seed, teacher id, example id);
    checkpoint teachers are deterministic.
    """
    examples = (
        dataset.examples if indices is None else [dataset.examples[i] for i in indices]
    )
    if not examples:
        raise ValueError("validation set is empty")
    vocab = dataset.vocab
    if teacher.kind == "oracle":
        samples = [
            oracle_generate(teacher, e, rng.stream(seed, "perf", teacher.id, e.id))
            for e in examples
        ]
    else:
        samples = checkpoint_generate_batch(teacher, examples, max_len, kernels)
    hits = sum(
        1
        for e, s in zip(examples, samples)
        if sample_answer(s, vocab) == e.answer
    )
    return hits / len(examples)


def filter_and_order(
    candidates,
    tau: float,
    dataset: Dataset,
    seed: int = 0,
    indices=None,
    max_len: int = 128,
    kernels=None,
) -> TeacherPool:
    """Keep teachers with Perf >= tau, ordered weakest to strongest."""
    if not candidates:
        raise ValueError("no candidate teachers")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    scored = []
    for position, teacher in enumerate(candidates):
        perf = evaluate_teacher(teacher, dataset, seed, indices, max_len, kernels)
        if perf >= tau:
            scored.append((perf, position, teacher))
    if not scored:
        raise RuntimeError(
            f"no viable teacher at tau={tau}: all candidates scored below threshold"
        )
    scored.sort(key=lambda item: (item[0], item[1]))
    return TeacherPool(
        teachers=tuple(t for _, _, t in scored),
        perf=tuple(p for p, _, _ in scored),
        tau=tau,
    )


def alignment_nll(
    student: StudentModel,
    samples,
    dataset: Dataset,
    kernels=None,
    batch_size: int = 64,
) -> float:
    """Student's mean per-token NLL on teacher outputs (lower = more aligned)."""
    if not samples:
        raise ValueError("no samples to score")
    vocab = dataset.vocab
    usable = []
    skipped = 0
    for s in samples:
        if len(s.output_tokens) == 0:
            skipped += 1
            continue
        usable.append(s)
    if skipped:
        log.warning("alignment: skipped %d empty teacher outputs", skipped)
    if not usable:
        raise ValueError("all teacher outputs were empty")
    total = 0.0
    for at in range(0, len(usable), batch_size):
        chunk = usable[at : at + batch_size]
        prompts = [dataset.by_id(s.example_id).prompt for s in chunk]
        outputs = [s.output_tokens for s in chunk]
        inputs, targets, mask = losses.batch_arrays(
            vocab.bos_id, vocab.pad_id, prompts, outputs
        )
        total += losses.nll_per_sample(student, inputs, targets, mask, kernels).sum()
    return total / len(usable)


def corpus_subset(corpus: dict[int, DistillSample], dataset: Dataset, positions):
    """Samples for the given dataset positions; errors name the missing pair."""
    subset = []
    for pos in positions:
        example = dataset.examples[pos]
        if example.id not in corpus:
            teacher = next(iter(corpus.values())).teacher_id if corpus else "?"
            raise MissingArtifactError(
                f"no cached sample for teacher {teacher!r}, example {example.id}"
            )
        subset.append(corpus[example.id])
    return subset
