"""Per-example difficulty scoring and easy-to-hard ordering.

Two estimators: the step count of the reference solution (with total
solution character length as tie-break), or the student's mean per-token
NLL on the reference target.  Orderings are total and reproducible: equal
(primary, tiebreak) pairs fall back to ascending example id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clpd.data import Dataset, full_sequence, reference_response
from clpd.errors import DataFormatError, InvariantError
from clpd.model import losses
from clpd.model.core import StudentModel

ESTIMATORS = ("cot_steps", "student_loss")


@dataclass(frozen=True)
class DifficultyScore:
    primary: float
    tiebreak: float
    example_id: int

    def key(self):
        return (self.primary, self.tiebreak, self.example_id)

    def __post_init__(self):
        if not math.isfinite(self.primary) or self.primary < 0:
            raise InvariantError(
                f"example {self.example_id}: difficulty {self.primary!r} is not a "
                "finite non-negative number"
            )


@dataclass(frozen=True)
class Curriculum:
    """A permutation of dataset positions, non-decreasing in difficulty.

    ``consumed`` marks a frozen prefix left behind by a mid-training re-rank:
    its scores are historical, so monotonicity is asserted from ``consumed``
    onward (0 for one-shot curricula, i.e. the whole ordering).
    """

    order: tuple[int, ...]
    scores: tuple[DifficultyScore, ...]  # parallel to order
    estimator_tag: str
    consumed: int = 0

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise InvariantError("order is not a permutation of [0, N)")
        if len(self.scores) != len(self.order):
            raise InvariantError("scores not parallel to order")
        if self.estimator_tag not in ESTIMATORS:
            raise InvariantError(f"unknown estimator tag {self.estimator_tag!r}")
        if not 0 <= self.consumed <= len(self.order):
            raise InvariantError(f"consumed={self.consumed} outside [0, N]")
        tail = self.scores[self.consumed :]
        for a, b in zip(tail, tail[1:]):
            if a.key() > b.key():
                raise InvariantError("scores along order are not non-decreasing")

    def __len__(self) -> int:
        return len(self.order)


def score_by_cot(dataset: Dataset) -> list[DifficultyScore]:
    """Difficulty = reference step count, tie-broken by solution length."""
    scores = []
    for e in dataset.examples:
        if e.cot is None or e.step_count is None or e.cot_char_len is None:
            raise ValueError(
                f"step-count estimator unavailable: example {e.id} has no "
                "reference solution"
            )
        scores.append(DifficultyScore(float(e.step_count), float(e.cot_char_len), e.id))
    return scores


def score_by_student_loss(
    student: StudentModel,
    dataset: Dataset,
    kernels=None,
    batch_size: int = 64,
) -> list[DifficultyScore]:
    """Difficulty = teacher-forced mean per-token NLL of the reference target.

    Deterministic (no sampling); ties broken by example id.
    """
    if student.config.vocab_size != len(dataset.vocab):
        raise ValueError(
            f"vocabulary mismatch: model has {student.config.vocab_size} tokens, "
            f"dataset has {len(dataset.vocab)}"
        )
    vocab = dataset.vocab
    nlls = np.empty(len(dataset))
    for at in range(0, len(dataset), batch_size):
        chunk = dataset.examples[at : at + batch_size]
        prompts = [e.prompt for e in chunk]
        outputs = [reference_response(e, vocab) for e in chunk]
        inputs, targets, mask = losses.batch_arrays(
            vocab.bos_id, vocab.pad_id, prompts, outputs
        )
        nlls[at : at + len(chunk)] = losses.nll_per_sample(
            student, inputs, targets, mask, kernels
        )
    return [
        DifficultyScore(float(nll), float(e.id), e.id)
        for nll, e in zip(nlls, dataset.examples)
    ]


def build_curriculum(
    scores, estimator_tag: str = "cot_steps"
) -> Curriculum:
    """Stable sort by (primary, tiebreak, example_id), easiest first."""
    if not scores:
        raise ValueError("cannot build a curriculum from zero scores")
    for s in scores:
        if math.isnan(s.primary) or math.isnan(s.tiebreak):
            raise ValueError(f"example {s.example_id} has a NaN difficulty score")
    order = sorted(range(len(scores)), key=lambda i: scores[i].key())
    return Curriculum(
        order=tuple(order),
        scores=tuple(scores[i] for i in order),
        estimator_tag=estimator_tag,
    )


def take_extreme_split(curriculum: Curriculum, fraction: float, end: str) -> list[int]:
    """First (easiest) or last (hardest) ceil(fraction * N) positions."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if end not in ("easiest", "hardest"):
        raise ValueError(f"end must be 'easiest' or 'hardest', got {end!r}")
    n = len(curriculum)
    take = math.ceil(fraction * n)
    if end == "easiest":
        return list(curriculum.order[:take])
    return list(curriculum.order[n - take :])


def rerank_remaining(
    curriculum: Curriculum,
    consumed: int,
    student: StudentModel,
    dataset: Dataset,
    kernels=None,
) -> Curriculum:
    """Re-score the unconsumed suffix with the current student and re-sort it.

    The prefix [0, consumed) is untouched.  A changed suffix tags the whole
    curriculum student_loss, since that estimator now governs its ordering.
    """
    n = len(curriculum)
    if not 0 <= consumed <= n:
        raise ValueError(f"consumed must be in [0, {n}], got {consumed}")
    if consumed == n:
        return curriculum
    fresh = score_by_student_loss(student, dataset, kernels)
    suffix = sorted(curriculum.order[consumed:], key=lambda i: fresh[i].key())
    order = curriculum.order[:consumed] + tuple(suffix)
    scores = curriculum.scores[:consumed] + tuple(fresh[i] for i in suffix)
    return Curriculum(order, scores, "student_loss", consumed=consumed)


# --- persistence -------------------------------------------------------------


def save_curriculum(curriculum: Curriculum, dataset: Dataset, path) -> None:
    """JSON-lines audit export: one record per curriculum rank."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rank, (pos, score) in enumerate(zip(curriculum.order, curriculum.scores)):
            rec = {
                "rank": rank,
                "example_id": dataset.examples[pos].id,
                "primary": score.primary,
                "tiebreak": score.tiebreak,
                "estimator_tag": curriculum.estimator_tag,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_curriculum(path, dataset: Dataset) -> Curriculum:
    path = Path(path)
    position_of = {e.id: i for i, e in enumerate(dataset.examples)}
    order: list[int] = []
    scores: list[DifficultyScore] = []
    tag = "cot_steps"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                tag = rec["estimator_tag"]
                pos = position_of[rec["example_id"]]
                scores.append(
                    DifficultyScore(rec["primary"], rec["tiebreak"], rec["example_id"])
                )
                order.append(pos)
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad curriculum record: {exc}")
    return Curriculum(tuple(order), tuple(scores), tag)
