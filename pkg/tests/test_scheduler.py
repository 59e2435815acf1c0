from __future__ import annotations

import numpy as np
import pytest

from clpd import curriculum as cur
from clpd import data, scheduler, teachers
from clpd.data import reference_response
from clpd.errors import ConfigError, InvariantError
from clpd.model import core, losses, optim


def oracle(identifier, acc, verbosity=0, noise=0.0):
    return teachers.Teacher(
        id=identifier, kind="oracle",
        profile=teachers.CompetenceProfile(
            {k: float(acc) for k in range(1, 7)}, verbosity, noise
        ),
    )


def pool_of(*specs):
    ts = tuple(oracle(i, a) for i, a in specs)
    return teachers.TeacherPool(ts, tuple(a for _, a in specs), tau=0.0)


@pytest.fixture(scope="module")
def world():
    full = data.generate_task(90, [1, 3], [0, 9], seed=19, value_limit=20)
    train, val, test = data.split(full, [0.7, 0.15, 0.15], seed=2)
    ordered = cur.build_curriculum(cur.score_by_cot(train))
    pool = pool_of(("weak", 0.6), ("strong", 0.95))
    corpora = {
        t.id: teachers.generate_corpus(t, train, seed=5) for t in pool.teachers
    }
    mcfg = core.ModelConfig(
        vocab_size=len(train.vocab), embed_dim=10, hidden_dim=16, num_layers=1,
        context_len=120,
    )
    return train, test, ordered, pool, corpora, mcfg


# --- segments ----------------------------------------------------------------


def test_make_segments_uniform_halving():
    assert scheduler.make_segments(10, pool_of(("a", 0.5), ("b", 0.9))).boundaries == (0, 5, 10)


def test_make_segments_custom_fractions():
    plan = scheduler.make_segments(10, pool_of(("a", 0.5), ("b", 0.9)), [0.3, 0.7])
    assert plan.boundaries == (0, 3, 10)
    assert plan.fractions == (0.3, 0.7)


def test_make_segments_rounding_rule():
    plan = scheduler.make_segments(7, pool_of(("a", 0.1), ("b", 0.2), ("c", 0.3)))
    assert plan.boundaries == (0, 2, 5, 7)


def test_make_segments_property_sweep():
    # oracle: direct invariant checks across sizes, teacher counts, fractions
    gen = np.random.default_rng(3)
    for n in range(3, 51):
        for m in range(2, 6):
            if n < m:
                continue
            pool = pool_of(*((f"t{i}", 0.1 * (i + 1)) for i in range(m)))
            for fractions in (None, _random_fractions(gen, m)):
                plan = scheduler.make_segments(n, pool, fractions)
                assert plan.boundaries[0] == 0 and plan.boundaries[-1] == n
                widths = [
                    plan.boundaries[k + 1] - plan.boundaries[k] for k in range(m)
                ]
                assert all(w >= 1 for w in widths)
                assert sum(w for w in widths) == n


def _random_fractions(gen, m):
    raw = gen.random(m) + 0.05
    raw /= raw.sum()
    raw[-1] = 1.0 - raw[:-1].sum()
    return raw.tolist()


def test_make_segments_too_few_examples():
    with pytest.raises(ConfigError):
        scheduler.make_segments(1, pool_of(("a", 0.5), ("b", 0.9)))


def test_segment_plan_invariants():
    with pytest.raises(InvariantError):
        scheduler.SegmentPlan((0, 0, 10), ("a", "b"), (0.5, 0.5))
    with pytest.raises(InvariantError):
        scheduler.SegmentPlan((0, 10), ("a",), (0.9,))


# --- variants ----------------------------------------------------------------


def test_plan_variant_shapes(world):
    train, _, ordered, pool, _, _ = world
    n = len(train)
    for variant in scheduler.VARIANTS:
        cfg = scheduler.RunConfig(
            variant=variant, seed=3,
            fixed_teacher_id="strong" if variant in ("vanilla", "cl_only") else None,
        )
        order, plan = scheduler.plan_variant(cfg, ordered, pool)
        assert sorted(order) == list(range(n))
        assert plan.boundaries[-1] == n


def test_clpd_m1_equals_cl_only(world):
    train, _, ordered, _, _, _ = world
    solo = pool_of(("only", 0.9))
    clpd_cfg = scheduler.RunConfig(variant="clpd", seed=4)
    cl_cfg = scheduler.RunConfig(variant="cl_only", seed=4, fixed_teacher_id="only")
    a = scheduler.plan_variant(clpd_cfg, ordered, solo)
    b = scheduler.plan_variant(cl_cfg, ordered, solo)
    assert a == b


def test_clpd_rt_reverses_teachers_only(world):
    _, _, ordered, pool, _, _ = world
    base = scheduler.plan_variant(scheduler.RunConfig(variant="clpd", seed=5), ordered, pool)
    flipped = scheduler.plan_variant(
        scheduler.RunConfig(variant="clpd_rt", seed=5), ordered, pool
    )
    assert flipped[1].teacher_ids == tuple(reversed(base[1].teacher_ids))
    assert flipped[0] == base[0]
    assert flipped[1].boundaries == base[1].boundaries


def test_clpd_rd_reverses_data_only(world):
    _, _, ordered, pool, _, _ = world
    base = scheduler.plan_variant(scheduler.RunConfig(variant="clpd", seed=6), ordered, pool)
    flipped = scheduler.plan_variant(
        scheduler.RunConfig(variant="clpd_rd", seed=6), ordered, pool
    )
    assert flipped[0] == tuple(reversed(base[0]))
    assert flipped[1] == base[1]


def test_vanilla_requires_fixed_teacher():
    with pytest.raises(ConfigError, match="fixed_teacher_id"):
        scheduler.RunConfig(variant="vanilla", seed=1)


def test_coupling_law_clpd(world):
    # teacher strength rank and difficulty are jointly non-decreasing
    train, _, ordered, pool, _, _ = world
    cfg = scheduler.RunConfig(variant="clpd", seed=7)
    order, plan = scheduler.plan_variant(cfg, ordered, pool)
    strength = {tid: i for i, tid in enumerate(t.id for t in pool.teachers)}
    score_at = {pos: s.key() for pos, s in zip(ordered.order, ordered.scores)}
    last_rank, last_score = -1, None
    for k in range(plan.num_segments):
        rank = strength[plan.teacher_ids[k]]
        assert rank >= last_rank
        last_rank = rank
        for i in plan.segment_range(k):
            score = score_at[order[i]]
            assert last_score is None or score >= last_score
            last_score = score


def test_anti_coupling_law_clpd_rt(world):
    train, _, ordered, pool, _, _ = world
    cfg = scheduler.RunConfig(variant="clpd_rt", seed=8)
    order, plan = scheduler.plan_variant(cfg, ordered, pool)
    strength = {tid: i for i, tid in enumerate(t.id for t in pool.teachers)}
    ranks = [strength[tid] for tid in plan.teacher_ids]
    assert ranks == sorted(ranks, reverse=True)
    score_at = {pos: s.key() for pos, s in zip(ordered.order, ordered.scores)}
    seq = [score_at[p] for p in order]
    assert seq == sorted(seq)


# --- runs ---------------------------------------------------------------------


def run_cfg(variant="clpd", **kw):
    base = dict(variant=variant, seed=1, epochs=1, batch_size=16, lr=5e-3)
    base.update(kw)
    return scheduler.RunConfig(**base)


def test_zero_epochs_returns_untrained_accuracy(world):
    train, test, ordered, pool, corpora, mcfg = world
    cfg = run_cfg(epochs=0)
    result = scheduler.run_distillation(cfg, mcfg, train, test, pool, corpora, ordered)
    from clpd.model import decode

    untrained = core.init_model(mcfg, cfg.seed)
    assert result.final_accuracy == decode.exact_match_accuracy(untrained, test)
    assert result.per_stage == ()


def test_per_stage_bookkeeping(world):
    train, test, ordered, pool, corpora, mcfg = world
    cfg = run_cfg(epochs=2)
    result = scheduler.run_distillation(cfg, mcfg, train, test, pool, corpora, ordered)
    assert len(result.per_stage) == 2 * len(pool)
    _, plan = scheduler.plan_variant(cfg, ordered, pool)
    for epoch in range(2):
        for k in range(plan.num_segments):
            stage = result.per_stage[epoch * plan.num_segments + k]
            assert stage.teacher_id == plan.teacher_ids[k]
            assert stage.epoch == epoch and stage.segment == k


def test_direct_loop_equivalence(world):
    # oracle: hand-written training loop; one teacher, curriculum order
    train, test, ordered, _, corpora, mcfg = world
    solo = pool_of(("strong", 0.95))
    cfg = run_cfg(variant="cl_only", fixed_teacher_id="strong", epochs=1)
    result = scheduler.run_distillation(cfg, mcfg, train, test, solo, corpora, ordered)

    model = core.init_model(mcfg, cfg.seed)
    opt = optim.init_optimizer(model, cfg.optimizer, cfg.lr)
    vocab = train.vocab
    corpus = corpora["strong"]
    order = list(ordered.order)
    for at in range(0, len(order), cfg.batch_size):
        positions = order[at : at + cfg.batch_size]
        chunk = [train.examples[i] for i in positions]
        samples = [corpus[e.id] for e in chunk]
        inputs, targets, mask = losses.batch_arrays(
            vocab.bos_id, vocab.pad_id,
            [e.prompt for e in chunk],
            [s.output_tokens for s in samples],
        )
        _, _, grad = losses.seqkd_batch_ids(model, inputs, targets, mask)
        optim.apply_update(model, opt, grad, cfg.clip)
    assert np.array_equal(result.student.params, model.params)


def test_coverage_each_example_once_per_epoch(world):
    # oracle: count corpus lookups; epochs=2 minus epochs=1 == one per example
    train, test, ordered, pool, corpora, mcfg = world

    class CountingCorpus(dict):
        def __init__(self, inner):
            super().__init__(inner)
            self.counts = {}

        def __getitem__(self, key):
            self.counts[key] = self.counts.get(key, 0) + 1
            return super().__getitem__(key)

    def run_with_epochs(epochs):
        counting = {tid: CountingCorpus(c) for tid, c in corpora.items()}
        cfg = run_cfg(epochs=epochs)
        scheduler.run_distillation(cfg, mcfg, train, test, pool, counting, ordered)
        merged = {}
        for c in counting.values():
            for k, v in c.counts.items():
                merged[k] = merged.get(k, 0) + v
        return merged

    once = run_with_epochs(1)
    twice = run_with_epochs(2)
    for e in train.examples:
        assert twice[e.id] - once[e.id] == 1


def test_run_bitwise_deterministic(world):
    train, test, ordered, pool, corpora, mcfg = world
    cfg = run_cfg(variant="clpd", seed=9)
    a = scheduler.run_distillation(cfg, mcfg, train, test, pool, corpora, ordered)
    b = scheduler.run_distillation(cfg, mcfg, train, test, pool, corpora, ordered)
    assert np.array_equal(a.student.params, b.student.params)
    assert a.final_accuracy == b.final_accuracy
    assert a.per_stage == b.per_stage


def test_degenerate_m1_variants_identical(world):
    # with one teacher, clpd == cl_only through the public path, and
    # pd_only on the curriculum order matches via the engine
    train, test, ordered, _, corpora, mcfg = world
    solo = pool_of(("strong", 0.95))
    results = {}
    for variant, teacher in (("clpd", None), ("cl_only", "strong")):
        cfg = run_cfg(variant=variant, fixed_teacher_id=teacher, seed=11)
        results[variant] = scheduler.run_distillation(
            cfg, mcfg, train, test, solo, corpora, ordered
        )
    assert np.array_equal(
        results["clpd"].student.params, results["cl_only"].student.params
    )
    pd_cfg = run_cfg(variant="pd_only", seed=11)
    _, plan = scheduler.plan_variant(pd_cfg, ordered, solo)
    pd_result = scheduler.run_plan(
        pd_cfg, mcfg, train, test, plan, tuple(ordered.order), corpora, ordered
    )
    assert np.array_equal(
        pd_result.student.params, results["clpd"].student.params
    )


def test_missing_corpus_sample_names_pair(world):
    train, test, ordered, pool, corpora, mcfg = world
    broken = {tid: dict(c) for tid, c in corpora.items()}
    victim = train.examples[0].id
    del broken["weak"][victim]
    cfg = run_cfg(variant="clpd", seed=1)
    from clpd.errors import MissingArtifactError

    with pytest.raises(MissingArtifactError, match=f"example {victim}"):
        scheduler.run_distillation(cfg, mcfg, train, test, pool, broken, ordered)


def test_dynamic_rerank_preserves_prefix(world):
    train, test, ordered, pool, corpora, mcfg = world
    cfg = run_cfg(variant="clpd", epochs=1, dynamic_rerank=True)
    result = scheduler.run_distillation(cfg, mcfg, train, test, pool, corpora, ordered)
    assert len(result.per_stage) == len(pool)
    baseline = scheduler.run_distillation(
        run_cfg(variant="clpd", epochs=1), mcfg, train, test, pool, corpora, ordered
    )
    # first stage is identical; the rerank kicks in afterwards
    assert result.per_stage[0] == baseline.per_stage[0]


# --- reports -------------------------------------------------------------


def test_competence_alignment_report_grid(world):
    train, test, ordered, pool, corpora, mcfg = world
    student = core.init_model(mcfg, seed=2)
    rows = scheduler.competence_alignment_report(
        pool, student, ordered, train, test, corpora, fraction=0.2, epochs=1,
        batch_size=16,
    )
    assert [r["teacher_id"] for r in rows] == [t.id for t in pool.teachers]
    for row in rows:
        for metric in (
            "teacher_accuracy_hard", "teacher_accuracy_easy",
            "alignment_hard", "alignment_easy",
            "student_accuracy_hard", "student_accuracy_easy",
        ):
            assert metric in row
        assert 0.0 <= row["teacher_accuracy_hard"] <= 1.0
        assert 0.0 <= row["student_accuracy_easy"] <= 1.0


def test_perfect_teacher_accuracy_one_on_both_splits(world):
    train, test, ordered, _, _, mcfg = world
    perfect = pool_of(("perfect", 1.0))
    corpora = {"perfect": teachers.generate_corpus(perfect.teachers[0], train, seed=3)}
    student = core.init_model(mcfg, seed=2)
    rows = scheduler.competence_alignment_report(
        perfect, student, ordered, train, test, corpora, fraction=0.2, epochs=1,
        batch_size=16,
    )
    assert rows[0]["teacher_accuracy_hard"] == 1.0
    assert rows[0]["teacher_accuracy_easy"] == 1.0


def test_partition_sweep_degenerate(world):
    train, test, ordered, pool, corpora, mcfg = world
    base = run_cfg(variant="clpd", epochs=1)
    cells, raw = scheduler.partition_sweep(
        base, mcfg, train, test, pool, corpora, ordered,
        fraction_vectors=[(0.5, 0.5)], seeds=[1],
    )
    assert len(cells) == 2 and len(raw) == 2
    clpd_cell = next(c for c in cells if c["variant"] == "clpd")
    direct = scheduler.run_distillation(
        scheduler.RunConfig(
            variant="clpd", seed=1, epochs=1, batch_size=16, lr=5e-3,
            fractions=(0.5, 0.5),
        ),
        mcfg, train, test, pool, corpora, ordered,
    )
    assert clpd_cell["mean"] == direct.final_accuracy
    assert clpd_cell["std"] == 0.0


def test_partition_sweep_repeated_seeds_zero_std(world):
    train, test, ordered, pool, corpora, mcfg = world
    base = run_cfg(variant="clpd", epochs=1)
    cells, _ = scheduler.partition_sweep(
        base, mcfg, train, test, pool, corpora, ordered,
        fraction_vectors=[(0.5, 0.5)], seeds=[2, 2],
    )
    for cell in cells:
        assert cell["std"] == 0.0


def test_mean_std_matches_numpy():
    values = [0.1, 0.4, 0.25, 0.3]
    mean, std = scheduler.mean_std(values)
    assert abs(mean - np.mean(values)) < 1e-15
    assert abs(std - np.std(values, ddof=1)) < 1e-15
