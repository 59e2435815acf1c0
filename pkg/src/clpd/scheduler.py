"""Staged distillation: segmentation, teacher assignment, training variants.

The core loop walks contiguous curriculum segments, each supervised by one
teacher's cached outputs, and applies the configured loss and optimizer.
Variants differ only in data order and teacher schedule:

    vanilla   shuffled data, one fixed teacher
    cl_only   curriculum order, one fixed teacher
    pd_only   shuffled data, teachers weakest to strongest
    clpd      curriculum order, teachers weakest to strongest
    clpd_rt   curriculum order, teachers strongest to weakest
    clpd_rd   reversed curriculum (hard first), teachers weakest to strongest
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from clpd import rng
from clpd.curriculum import Curriculum, rerank_remaining
from clpd.data import Dataset, reference_response
from clpd.errors import ConfigError, InvariantError
from clpd.model import core, decode, losses, optim
from clpd.model.workspace import Workspace
from clpd.teachers import TeacherPool, alignment_nll, corpus_subset

VARIANTS = ("vanilla", "cl_only", "pd_only", "clpd", "clpd_rt", "clpd_rd")
_FIXED_TEACHER_VARIANTS = ("vanilla", "cl_only")
_CURRICULUM_ORDER_VARIANTS = ("cl_only", "clpd", "clpd_rt", "clpd_rd")


@dataclass(frozen=True)
class SegmentPlan:
    """Contiguous slices of the data order, each bound to one teacher."""

    boundaries: tuple[int, ...]
    teacher_ids: tuple[str, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        m = len(self.teacher_ids)
        if len(self.boundaries) != m + 1 or len(self.fractions) != m:
            raise InvariantError("plan sizes disagree")
        if self.boundaries[0] != 0:
            raise InvariantError("first boundary must be 0")
        for a, b in zip(self.boundaries, self.boundaries[1:]):
            if b <= a:
                raise InvariantError(f"empty or inverted segment at boundary {b}")
        if any(f <= 0 for f in self.fractions):
            raise InvariantError("fractions must be positive")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvariantError(f"fractions sum to {sum(self.fractions)!r}, not 1")

    @property
    def num_segments(self) -> int:
        return len(self.teacher_ids)

    def segment_range(self, k: int) -> range:
        return range(self.boundaries[k], self.boundaries[k + 1])


@dataclass(frozen=True)
class RunConfig:
    variant: str
    seed: int = 1
    estimator: str = "cot_steps"
    loss: str = "seqkd"
    epochs: int = 3
    batch_size: int = 32
    tau: float = 0.6
    fractions: tuple[float, ...] | None = None
    dynamic_rerank: bool = False
    fixed_teacher_id: str | None = None
    optimizer: str = "adam-style"
    lr: float = 3e-3
    clip: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.loss not in ("seqkd", "skd_kld"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.variant in _FIXED_TEACHER_VARIANTS and not self.fixed_teacher_id:
            raise ConfigError(f"variant {self.variant!r} requires fixed_teacher_id")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class StageMetrics:
    epoch: int
    segment: int
    teacher_id: str
    mean_loss: float
    accuracy: float


@dataclass
class RunResult:
    variant: str
    seed: int
    final_accuracy: float
    per_stage: tuple[StageMetrics, ...]
    alignment: dict[str, float]
    wall_time: float
    teacher_ids: tuple[str, ...]
    student: core.StudentModel | None = field(default=None, repr=False, compare=False)


def make_segments(
    curriculum_size: int | Curriculum,
    pool: TeacherPool,
    fractions=None,
) -> SegmentPlan:
    """Split [0, N) into one contiguous, non-empty segment per pool teacher.

    Boundary k is round(N * cumulative fraction), then nudged so every
    segment keeps at least one example.
    """
    n = curriculum_size if isinstance(curriculum_size, int) else len(curriculum_size)
    m = len(pool)
    if m < 1:
        raise ConfigError("need at least one teacher")
    if n < m:
        raise ConfigError(f"cannot split {n} examples into {m} non-empty segments")
    if fractions is None:
        fracs = tuple(1.0 / m for _ in range(m))
    else:
        fracs = tuple(float(f) for f in fractions)
        if len(fracs) != m:
            raise ConfigError(f"got {len(fracs)} fractions for {m} teachers")
        if any(f <= 0 for f in fracs):
            raise ConfigError("fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"fractions sum to {sum(fracs)!r}, not 1")

    bounds = [0] * (m + 1)
    bounds[m] = n
    cum = 0.0
    for k in range(1, m):
        cum += fracs[k - 1]
        bounds[k] = math.floor(n * cum + 0.5)
    for k in range(1, m):  # forward: no empty segment on the left
        bounds[k] = max(bounds[k], bounds[k - 1] + 1)
    for k in range(m - 1, 0, -1):  # backward: no empty segment on the right
        bounds[k] = min(bounds[k], bounds[k + 1] - 1)
    return SegmentPlan(
        boundaries=tuple(bounds),
        teacher_ids=tuple(t.id for t in pool.teachers),
        fractions=fracs,
    )


def plan_variant(cfg: RunConfig, curriculum: Curriculum, pool: TeacherPool):
    """Resolve a variant into (data order, segment plan)."""
    n = len(curriculum)
    shuffled = tuple(int(i) for i in rng.stream(cfg.seed, "shuffle").permutation(n))

    if cfg.variant in _FIXED_TEACHER_VARIANTS:
        pool.by_id(cfg.fixed_teacher_id)  # must be viable
        order = curriculum.order if cfg.variant == "cl_only" else shuffled
        plan = SegmentPlan((0, n), (cfg.fixed_teacher_id,), (1.0,))
        return tuple(order), plan

    plan = make_segments(n, pool, cfg.fractions)
    if cfg.variant == "pd_only":
        return shuffled, plan
    if cfg.variant == "clpd":
        return tuple(curriculum.order), plan
    if cfg.variant == "clpd_rt":
        return tuple(curriculum.order), replace(
            plan, teacher_ids=tuple(reversed(plan.teacher_ids))
        )
    if cfg.variant == "clpd_rd":
        return tuple(reversed(curriculum.order)), plan
    raise ConfigError(f"unknown variant {cfg.variant!r}")


def _loss_step(cfg, model, vocab, prompts, samples, kernels, ws):
    outputs = [s.output_tokens for s in samples]
    if cfg.loss == "seqkd":
        inputs, targets, mask = losses.batch_arrays(
            vocab.bos_id, vocab.pad_id, prompts, outputs
        )
        return losses.seqkd_batch_ids(model, inputs, targets, mask, kernels, ws)
    dists = [s.token_distributions for s in samples]
    if any(d is None for d in dists):
        bad = next(s for s, d in zip(samples, dists) if d is None)
        raise ConfigError(
            f"teacher {bad.teacher_id!r} sample for example {bad.example_id} has "
            "no token distributions; use loss=seqkd"
        )
    inputs, _, mask = losses.batch_arrays(vocab.bos_id, vocab.pad_id, prompts, outputs)
    probs = losses.distribution_matrix(
        model.config.vocab_size, prompts, outputs, dists
    )
    return losses.kld_batch_ids(model, inputs, mask, probs, kernels, ws)


def run_plan(
    cfg: RunConfig,
    model_cfg: core.ModelConfig,
    train: Dataset,
    evalset: Dataset,
    plan: SegmentPlan,
    data_order,
    corpora: dict[str, dict],
    curriculum: Curriculum | None = None,
    student: core.StudentModel | None = None,
    kernels=None,
    stage_evalset: Dataset | None = None,
) -> RunResult:
    """Run staged training over an explicit plan (the scheduling engine).

    One epoch visits every example exactly once: segments are traversed in
    order, minibatches never straddle a segment boundary, and optimizer
    state persists across segments and epochs.  Post-stage diagnostics are
    measured on stage_evalset (default: evalset); final accuracy always
    comes from evalset.
    """
    started = time.perf_counter()
    vocab = train.vocab
    ws = Workspace()
    student = student if student is not None else core.init_model(model_cfg, cfg.seed)
    opt = optim.init_optimizer(student, cfg.optimizer, cfg.lr)
    order = list(data_order)
    if sorted(order) != list(range(len(train))):
        raise InvariantError("data order is not a permutation of the training set")
    stage_evalset = stage_evalset if stage_evalset is not None else evalset

    stages: list[StageMetrics] = []
    reranked = False
    for epoch in range(cfg.epochs):
        for k in range(plan.num_segments):
            teacher_id = plan.teacher_ids[k]
            corpus = corpora[teacher_id]
            seg = list(plan.segment_range(k))
            loss_sum, n_batches = 0.0, 0
            for at in range(0, len(seg), cfg.batch_size):
                positions = [order[i] for i in seg[at : at + cfg.batch_size]]
                chunk = [train.examples[i] for i in positions]
                samples = corpus_subset(corpus, train, positions)
                loss, _, grad = _loss_step(
                    cfg, student, vocab, [e.prompt for e in chunk], samples, kernels, ws
                )
                optim.apply_update(student, opt, grad, cfg.clip)
                loss_sum += loss
                n_batches += 1
            accuracy = decode.exact_match_accuracy(student, stage_evalset, kernels=kernels)
            stages.append(
                StageMetrics(epoch, k, teacher_id, loss_sum / max(n_batches, 1), accuracy)
            )
            if cfg.dynamic_rerank and not reranked and epoch == 0 and k == 0:
                if curriculum is None:
                    raise ConfigError("dynamic_rerank needs the curriculum")
                consumed = plan.boundaries[1]
                updated = rerank_remaining(curriculum, consumed, student, train, kernels)
                order = list(updated.order)
                reranked = True

    final_accuracy = decode.exact_match_accuracy(student, evalset, kernels=kernels)
    alignment = {}
    for teacher_id in dict.fromkeys(plan.teacher_ids):
        k = plan.teacher_ids.index(teacher_id)
        positions = [order[i] for i in plan.segment_range(k)][:200]
        samples = corpus_subset(corpora[teacher_id], train, positions)
        alignment[teacher_id] = alignment_nll(student, samples, train, kernels)
    return RunResult(
        variant=cfg.variant,
        seed=cfg.seed,
        final_accuracy=final_accuracy,
        per_stage=tuple(stages),
        alignment=alignment,
        wall_time=time.perf_counter() - started,
        teacher_ids=plan.teacher_ids,
        student=student,
    )


def run_distillation(
    cfg: RunConfig,
    model_cfg: core.ModelConfig,
    train: Dataset,
    evalset: Dataset,
    pool: TeacherPool,
    corpora: dict[str, dict],
    curriculum: Curriculum,
    kernels=None,
    stage_evalset: Dataset | None = None,
) -> RunResult:
    """Plan the configured variant and run it end to end."""
    order, plan = plan_variant(cfg, curriculum, pool)
    return run_plan(
        cfg, model_cfg, train, evalset, plan, order, corpora, curriculum,
        kernels=kernels, stage_evalset=stage_evalset,
    )


def _distill_on_subset(
    student: core.StudentModel,
    train: Dataset,
    positions,
    corpus: dict,
    epochs: int,
    batch_size: int,
    optimizer: str,
    lr: float,
    clip: float,
    seed: int,
    kernels=None,
) -> core.StudentModel:
    """Single-teacher distillation on a subset, i.i.d. order (in place)."""
    vocab = train.vocab
    opt = optim.init_optimizer(student, optimizer, lr)
    ws = Workspace()
    shuffled = [positions[i] for i in rng.stream(seed, "subset-shuffle").permutation(len(positions))]
    for _ in range(epochs):
        for at in range(0, len(shuffled), batch_size):
            chunk_pos = shuffled[at : at + batch_size]
            chunk = [train.examples[i] for i in chunk_pos]
            samples = corpus_subset(corpus, train, chunk_pos)
            _, _, grad = losses.seqkd_batch_ids(
                student,
                *losses.batch_arrays(
                    vocab.bos_id, vocab.pad_id,
                    [e.prompt for e in chunk],
                    [s.output_tokens for s in samples],
                ),
                kernels,
                ws,
            )
            optim.apply_update(student, opt, grad, clip)
    return student


def competence_alignment_report(
    pool: TeacherPool,
    student: core.StudentModel,
    curriculum: Curriculum,
    train: Dataset,
    evalset: Dataset,
    corpora: dict[str, dict],
    fraction: float = 0.2,
    epochs: int = 3,
    batch_size: int = 32,
    optimizer: str = "adam-style",
    lr: float = 3e-3,
    clip: float = 1.0,
    seed: int = 1,
    kernels=None,
) -> list[dict]:
    """Per-teacher competence / alignment / distilled-student grid.

    For each teacher and each extreme split of the curriculum: the teacher's
    exact-match accuracy on its cached outputs for that split, the given
    student's alignment NLL on those outputs, and the test accuracy of a
    copy of the student distilled only on that split.
    """
    from clpd.curriculum import take_extreme_split
    from clpd.teachers import sample_answer

    splits = {
        "hard": take_extreme_split(curriculum, fraction, "hardest"),
        "easy": take_extreme_split(curriculum, fraction, "easiest"),
    }
    rows = []
    for teacher, perf in zip(pool.teachers, pool.perf):
        row = {"teacher_id": teacher.id, "perf": perf}
        for split_name, positions in splits.items():
            samples = corpus_subset(corpora[teacher.id], train, positions)
            hits = sum(
                1
                for pos, s in zip(positions, samples)
                if sample_answer(s, train.vocab) == train.examples[pos].answer
            )
            row[f"teacher_accuracy_{split_name}"] = hits / len(samples)
            row[f"alignment_{split_name}"] = alignment_nll(
                student, samples, train, kernels
            )
            trained = _distill_on_subset(
                student.copy(), train, positions, corpora[teacher.id],
                epochs, batch_size, optimizer, lr, clip, seed, kernels,
            )
            row[f"student_accuracy_{split_name}"] = decode.exact_match_accuracy(
                trained, evalset, kernels=kernels
            )
        rows.append(row)
    return rows


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for n < 2."""
    arr = np.asarray(list(values), dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def partition_sweep(
    base_cfg: RunConfig,
    model_cfg: core.ModelConfig,
    train: Dataset,
    evalset: Dataset,
    pool: TeacherPool,
    corpora: dict[str, dict],
    curriculum: Curriculum,
    fraction_vectors,
    seeds,
    kernels=None,
):
    """clpd vs pd_only across data partitions; returns (cells, raw rows)."""
    raw = []
    for fractions in fraction_vectors:
        for variant in ("clpd", "pd_only"):
            for seed in seeds:
                cfg = replace(
                    base_cfg, variant=variant, seed=seed,
                    fractions=tuple(fractions), fixed_teacher_id=None,
                )
                result = run_distillation(
                    cfg, model_cfg, train, evalset, pool, corpora, curriculum, kernels
                )
                raw.append(
                    {
                        "fractions": tuple(fractions),
                        "variant": variant,
                        "seed": seed,
                        "final_accuracy": result.final_accuracy,
                    }
                )
    cells = []
    for fractions in fraction_vectors:
        for variant in ("clpd", "pd_only"):
            accs = [
                r["final_accuracy"]
                for r in raw
                if r["fractions"] == tuple(fractions) and r["variant"] == variant
            ]
            mean, std = mean_std(accs)
            cells.append(
                {
                    "fractions": tuple(fractions),
                    "variant": variant,
                    "mean": mean,
                    "std": std,
                    "n": len(accs),
                }
            )
    return cells, raw


def train_on_references(
    student: core.StudentModel,
    dataset: Dataset,
    indices,
    steps: int,
    batch_size: int = 32,
    optimizer: str = "adam-style",
    lr: float = 3e-3,
    clip: float = 1.0,
    kernels=None,
) -> core.StudentModel:
    """Supervised warm-start on reference solutions (in place); returns student."""
    if steps <= 0 or not indices:
        return student
    vocab = dataset.vocab
    opt = optim.init_optimizer(student, optimizer, lr)
    ws = Workspace()
    done = 0
    while done < steps:
        for at in range(0, len(indices), batch_size):
            if done >= steps:
                break
            chunk = [dataset.examples[i] for i in indices[at : at + batch_size]]
            inputs, targets, mask = losses.batch_arrays(
                vocab.bos_id, vocab.pad_id,
                [e.prompt for e in chunk],
                [reference_response(e, vocab) for e in chunk],
            )
            _, _, grad = losses.seqkd_batch_ids(student, inputs, targets, mask, kernels, ws)
            optim.apply_update(student, opt, grad, clip)
            done += 1
    return student
