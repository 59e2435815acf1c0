"""Experiment orchestration: wires datasets, teachers, ranking and runs.

Each command reads its inputs from the artifact layout, never from process
state, so commands compose across invocations and worker processes.  Run
cells are parallelized at run granularity; every cell derives its RNG from
its (seed, cell) identity alone, so the degree of parallelism never
changes results.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from clpd import curriculum as curriculum_mod
from clpd import data, scheduler, teachers
from clpd.errors import ConfigError, MissingArtifactError
from clpd.harness import svg
from clpd.harness.artifacts import Layout, provenance_block, read_csv, write_csv
from clpd.harness.config import config_hash
from clpd.model import core
from clpd.teachers import Teacher, TeacherPool

SPLITS = ("train", "validation", "test")


# --- shared plumbing ---------------------------------------------------------


def build_roster(config: dict, base_dir: Path | None = None) -> list[Teacher]:
    roster = []
    for entry in config["teachers"]["roster"]:
        if entry["kind"] == "oracle":
            profile = teachers.CompetenceProfile(
                accuracy_by_steps={int(k): float(v) for k, v in entry["accuracy_by_steps"].items()},
                verbosity=int(entry.get("verbosity", 0)),
                style_noise=float(entry.get("style_noise", 0.0)),
            )
            roster.append(Teacher(id=entry["id"], kind="oracle", profile=profile))
        else:
            path = Path(entry["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            model = core.load_checkpoint(path)
            roster.append(
                Teacher(
                    id=entry["id"],
                    kind="checkpoint",
                    model=model,
                    exposes_distribution=bool(entry.get("exposes_distribution", False)),
                )
            )
    return roster


def layout_for(config: dict, out_override=None) -> Layout:
    return Layout(out_override or config["experiment"]["out_dir"])


def load_splits(config: dict, layout: Layout, needed_by: str):
    loaded = []
    for split in SPLITS:
        path = layout.require(layout.dataset_file(split), needed_by, "gen")
        loaded.append(data.load_dataset(path, split_tag=split))
    return tuple(loaded)


def model_config(config: dict, vocab_size: int) -> core.ModelConfig:
    m = config["model"]
    return core.ModelConfig(
        vocab_size=vocab_size,
        embed_dim=m["embed_dim"],
        hidden_dim=m["hidden_dim"],
        num_layers=m["num_layers"],
        context_len=m["context_len"],
        arch=m["arch"],
    )


def build_pool(config: dict, roster, validation) -> TeacherPool:
    t = config["teachers"]
    return teachers.filter_and_order(
        roster, t["tau"], validation, seed=t["eval_seed"], max_len=t["max_decode_len"]
    )


def corpora_for_pool(config: dict, layout: Layout, train, pool, needed_by: str):
    dhash = data.dataset_hash(train)
    seed = config["teachers"]["corpus_seed"]
    corpora = {}
    for teacher in pool.teachers:
        path = layout.corpus_file(teachers.corpus_filename(teacher.id, dhash, seed))
        layout.require(path, needed_by, "corpus")
        corpora[teacher.id] = teachers.load_corpus(path, train.vocab)
    return corpora


def load_curriculum(config: dict, layout: Layout, train, needed_by: str):
    path = layout.require(layout.curriculum_file(), needed_by, "rank")
    return curriculum_mod.load_curriculum(path, train)


def base_run_config(config: dict, variant: str, seed: int, teacher_id=None, fractions=None):
    t = config["train"]
    e = config["experiment"]
    return scheduler.RunConfig(
        variant=variant,
        seed=seed,
        estimator=t["estimator"],
        loss=t["loss"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        tau=config["teachers"]["tau"],
        fractions=tuple(fractions) if fractions else (
            tuple(e["fractions"]) if e["fractions"] else None
        ),
        dynamic_rerank=t["dynamic_rerank"],
        fixed_teacher_id=teacher_id,
        optimizer=t["optimizer"],
        lr=t["lr"],
        clip=t["clip"],
    )


def run_label(variant: str, teacher_id=None) -> str:
    return f"{variant}[{teacher_id}]" if teacher_id else variant


def _fractions_cell(fractions) -> str:
    if not fractions:
        return "uniform"
    return ":".join(repr(float(f)) for f in fractions)


def run_csv_rows(result: scheduler.RunResult, cfg: scheduler.RunConfig, label: str):
    header = [
        "variant", "label", "estimator", "loss", "tau", "fractions", "seed",
        "final_accuracy",
    ]
    row = [
        cfg.variant, label, cfg.estimator, cfg.loss, cfg.tau,
        _fractions_cell(cfg.fractions), cfg.seed, result.final_accuracy,
    ]
    for i, stage in enumerate(result.per_stage):
        header += [
            f"stage{i}_epoch", f"stage{i}_segment", f"stage{i}_teacher",
            f"stage{i}_loss", f"stage{i}_accuracy",
        ]
        row += [stage.epoch, stage.segment, stage.teacher_id, stage.mean_loss,
                stage.accuracy]
    for teacher_id in result.teacher_ids:
        if teacher_id in result.alignment:
            header.append(f"alignment_{teacher_id}")
            row.append(result.alignment[teacher_id])
    return header, row


# --- commands ----------------------------------------------------------------


def cmd_gen(config: dict, out_override=None) -> list[Path]:
    layout = layout_for(config, out_override)
    d = config["dataset"]
    full = data.generate_task(
        d["n"], d["step_range"], d["value_range"], d["seed"],
        value_limit=d["value_limit"],
    )
    longest = max(
        1 + len(e.prompt) + len(data.reference_response(e, full.vocab))
        for e in full.examples
    )
    if longest > config["model"]["context_len"]:
        raise ConfigError(
            f"model.context_len: {config['model']['context_len']} is shorter than "
            f"the longest serialized example ({longest})"
        )
    parts = data.split(full, d["split_fractions"], d["split_seed"])
    written = []
    for split, part in zip(SPLITS, parts):
        path = layout.dataset_file(split)
        data.save_dataset(part, path)
        written.append(path)
    return written


def cmd_corpus(config: dict, out_override=None) -> list[Path]:
    layout = layout_for(config, out_override)
    train, _, _ = load_splits(config, layout, "corpus")
    roster = build_roster(config)
    dhash = data.dataset_hash(train)
    seed = config["teachers"]["corpus_seed"]
    written = []
    for teacher in roster:
        samples = teachers.generate_corpus(
            teacher, train, seed, max_len=config["teachers"]["max_decode_len"]
        )
        path = layout.corpus_file(teachers.corpus_filename(teacher.id, dhash, seed))
        teachers.save_corpus(samples, train.vocab, path)
        written.append(path)
    return written


def cmd_rank(config: dict, out_override=None) -> Path:
    layout = layout_for(config, out_override)
    train, validation, _ = load_splits(config, layout, "rank")
    t = config["train"]
    if t["estimator"] == "cot_steps":
        scores = curriculum_mod.score_by_cot(train)
    else:
        student = core.init_model(model_config(config, len(train.vocab)), t["rank_seed"])
        if t["warm_start_steps"] > 0:
            scheduler.train_on_references(
                student, validation, list(range(len(validation))),
                t["warm_start_steps"], t["batch_size"], t["optimizer"], t["lr"],
                t["clip"],
            )
        scores = curriculum_mod.score_by_student_loss(student, train)
    ordered = curriculum_mod.build_curriculum(scores, t["estimator"])
    path = layout.curriculum_file()
    curriculum_mod.save_curriculum(ordered, train, path)
    return path


def cmd_teachers(config: dict, out_override=None) -> Path:
    layout = layout_for(config, out_override)
    train, validation, _ = load_splits(config, layout, "teachers")
    roster = build_roster(config)
    t = config["teachers"]
    perfs = [
        teachers.evaluate_teacher(
            teacher, validation, seed=t["eval_seed"], max_len=t["max_decode_len"]
        )
        for teacher in roster
    ]
    kept = sorted(
        (
            (perf, i)
            for i, perf in enumerate(perfs)
            if perf >= t["tau"]
        ),
    )
    rank_of = {i: rank for rank, (_, i) in enumerate(kept)}
    rows = []
    for i, (teacher, perf) in enumerate(zip(roster, perfs)):
        rows.append(
            [teacher.id, teacher.kind, perf, perf >= t["tau"],
             rank_of.get(i, -1), t["tau"]]
        )
    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    path = layout.teachers_file()
    write_csv(path, ["teacher_id", "kind", "perf", "kept", "pool_rank", "tau"], rows, prov)
    if not kept:
        raise RuntimeError(
            f"no viable teacher at tau={t['tau']}: all candidates scored below threshold"
        )
    return path


def _single_run(config: dict, layout: Layout, variant: str, seed: int, teacher_id=None,
                fractions=None):
    train, validation, test = load_splits(config, layout, "distill")
    roster = build_roster(config)
    pool = build_pool(config, roster, validation)
    ordered = load_curriculum(config, layout, train, "distill")
    if variant in ("vanilla", "cl_only") and teacher_id is None:
        teacher_id = config["experiment"]["fixed_teacher_id"]
        if teacher_id is None:
            raise ConfigError(
                "experiment.fixed_teacher_id: required for vanilla/cl_only runs "
                "(or pass --teacher)"
            )
    cfg = base_run_config(config, variant, seed, teacher_id, fractions)
    mcfg = model_config(config, len(train.vocab))
    order, plan = scheduler.plan_variant(cfg, ordered, pool)
    needed = set(plan.teacher_ids)
    corpora = {
        tid: corpus
        for tid, corpus in corpora_for_pool(config, layout, train, pool, "distill").items()
        if tid in needed
    }
    result = scheduler.run_plan(
        cfg, mcfg, train, test, plan, order, corpora, ordered,
        stage_evalset=validation,
    )
    return cfg, result


def cmd_distill(config: dict, variant: str, seed: int, teacher_id=None,
                out_override=None, fractions=None) -> Path:
    layout = layout_for(config, out_override)
    cfg, result = _single_run(config, layout, variant, seed, teacher_id, fractions)
    label = run_label(variant, cfg.fixed_teacher_id)
    header, row = run_csv_rows(result, cfg, label)
    train_path = layout.dataset_file("train")
    train = data.load_dataset(train_path, "train")
    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    path = layout.run_file(label, seed)
    write_csv(path, header, [row], prov)
    return path


def _suite_cells(config: dict, pool: TeacherPool):
    cells = []
    for variant in config["experiment"]["variants"]:
        if variant in ("vanilla", "cl_only"):
            for teacher in pool.teachers:
                cells.append((variant, teacher.id))
        else:
            cells.append((variant, None))
    return cells


def _run_cell_worker(payload):
    from clpd.threads import limit_blas_threads_once

    limit_blas_threads_once(1)
    config, out_dir, variant, seed, teacher_id, fractions = payload
    layout = Layout(out_dir)
    cfg, result = _single_run(config, layout, variant, seed, teacher_id, fractions)
    label = run_label(variant, cfg.fixed_teacher_id)
    header, row = run_csv_rows(result, cfg, label)
    train = data.load_dataset(layout.dataset_file("train"), "train")
    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    write_csv(layout.run_file(label, seed), header, [row], prov)
    return {
        "label": label,
        "variant": variant,
        "seed": seed,
        "fractions": _fractions_cell(cfg.fractions),
        "final_accuracy": result.final_accuracy,
    }


def parallel_map(worker, payloads, jobs: int):
    if jobs == 0:
        jobs = os.cpu_count() or 1
    if jobs == 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


def cmd_suite(config: dict, out_override=None, jobs=None) -> Path:
    layout = layout_for(config, out_override)
    train, validation, _ = load_splits(config, layout, "suite")
    pool = build_pool(config, build_roster(config), validation)
    seeds = config["experiment"]["seeds"]
    cells = _suite_cells(config, pool)
    payloads = [
        (config, str(layout.root), variant, seed, teacher_id, None)
        for variant, teacher_id in cells
        for seed in seeds
    ]
    jobs = config["experiment"]["jobs"] if jobs is None else jobs
    results = parallel_map(_run_cell_worker, payloads, jobs)

    rows = []
    for variant, teacher_id in cells:
        label = run_label(variant, teacher_id)
        accs = [r["final_accuracy"] for r in results if r["label"] == label]
        mean, std = scheduler.mean_std(accs)
        rows.append([label, variant, teacher_id or "", len(accs), mean, std])
    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    path = layout.report_file()
    write_csv(path, ["label", "variant", "teacher_id", "n", "mean", "std"], rows, prov)
    return path


def cmd_sweep(config: dict, out_override=None, jobs=None) -> Path:
    layout = layout_for(config, out_override)
    train, validation, _ = load_splits(config, layout, "sweep")
    pool = build_pool(config, build_roster(config), validation)
    if len(pool) != 2:
        raise ConfigError(
            f"experiment.sweep_weak_fractions: the partition sweep needs a "
            f"two-teacher pool, got {len(pool)}"
        )
    seeds = config["experiment"]["seeds"]
    grid = [
        (float(f), 1.0 - float(f)) for f in config["experiment"]["sweep_weak_fractions"]
    ]
    payloads = [
        (config, str(layout.root), variant, seed, None, fractions)
        for fractions in grid
        for variant in ("clpd", "pd_only")
        for seed in seeds
    ]
    jobs = config["experiment"]["jobs"] if jobs is None else jobs
    results = parallel_map(_run_cell_worker, payloads, jobs)

    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    raw_rows = [
        [r["variant"], r["fractions"], r["seed"], r["final_accuracy"]]
        for r in results
    ]
    write_csv(
        layout.sweep_raw_file(),
        ["variant", "fractions", "seed", "final_accuracy"],
        raw_rows, prov,
    )

    cells = []
    series = {"clpd": [], "pd_only": []}
    for fractions in grid:
        key = _fractions_cell(fractions)
        for variant in ("clpd", "pd_only"):
            accs = [
                r["final_accuracy"]
                for r in results
                if r["variant"] == variant and r["fractions"] == key
            ]
            mean, std = scheduler.mean_std(accs)
            cells.append([variant, key, fractions[0], len(accs), mean, std])
            series[variant].append((fractions[0], mean, std))
    path = layout.sweep_file()
    write_csv(
        path,
        ["variant", "fractions", "weak_fraction", "n", "mean", "std"],
        cells, prov,
    )
    svg.line_chart(
        layout.sweep_svg(),
        [
            {"label": "clpd", "points": series["clpd"]},
            {"label": "pd_only", "points": series["pd_only"]},
        ],
        "weak-teacher data fraction", "exact-match accuracy",
        "clpd vs pd_only across data partitions", prov,
    )
    return path


def _table1_worker(payload):
    from clpd.threads import limit_blas_threads_once

    limit_blas_threads_once(1)
    config, out_dir, seed = payload
    layout = Layout(out_dir)
    train, validation, test = load_splits(config, layout, "table1")
    pool = build_pool(config, build_roster(config), validation)
    ordered = load_curriculum(config, layout, train, "table1")
    t = config["train"]
    tb = config["table1"]
    mcfg = model_config(config, len(train.vocab))

    # per-seed teacher corpora give the grid sampling spread across seeds
    corpora = {
        teacher.id: teachers.generate_corpus(
            teacher, train, seed, max_len=config["teachers"]["max_decode_len"]
        )
        for teacher in pool.teachers
    }
    student = core.init_model(mcfg, seed)
    scheduler.train_on_references(
        student, validation, list(range(len(validation))),
        tb["warm_start_steps"], t["batch_size"], t["optimizer"], t["lr"], t["clip"],
    )
    rows = scheduler.competence_alignment_report(
        pool, student, ordered, train, test, corpora,
        fraction=tb["fraction"], epochs=tb["epochs"], batch_size=t["batch_size"],
        optimizer=t["optimizer"], lr=t["lr"], clip=t["clip"], seed=seed,
    )
    for row in rows:
        row["seed"] = seed
    return rows


_TABLE1_METRICS = (
    "teacher_accuracy_hard", "teacher_accuracy_easy",
    "alignment_hard", "alignment_easy",
    "student_accuracy_hard", "student_accuracy_easy",
)


def cmd_table1(config: dict, out_override=None, jobs=None) -> Path:
    layout = layout_for(config, out_override)
    train, validation, _ = load_splits(config, layout, "table1")
    pool = build_pool(config, build_roster(config), validation)
    seeds = config["table1"]["seeds"] or config["experiment"]["seeds"]
    payloads = [(config, str(layout.root), seed) for seed in seeds]
    jobs = config["experiment"]["jobs"] if jobs is None else jobs
    per_seed = parallel_map(_table1_worker, payloads, jobs)

    rows = []
    mean_by_metric: dict[str, list[float]] = {}
    for teacher in pool.teachers:
        row = [teacher.id]
        for metric in _TABLE1_METRICS:
            values = [
                r[metric]
                for seed_rows in per_seed
                for r in seed_rows
                if r["teacher_id"] == teacher.id
            ]
            mean, std = scheduler.mean_std(values)
            row += [mean, std]
            mean_by_metric.setdefault(metric, []).append(mean)
        rows.append(row)
    header = ["teacher_id"]
    for metric in _TABLE1_METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    prov = provenance_block(config_hash(config), data.dataset_hash(train))
    path = layout.table1_file()
    write_csv(path, header, rows, prov)

    group_labels = [t.id for t in pool.teachers]
    svg.grouped_bar_chart(
        layout.table1_svg(),
        group_labels,
        [
            {"label": metric, "values": mean_by_metric[metric]}
            for metric in _TABLE1_METRICS
        ],
        "metric value",
        "teacher competence / alignment / distilled student",
        prov,
    )
    return path


def reaggregate_report(layout: Layout) -> list[dict]:
    """Recompute the suite report from raw run files (integrity check)."""
    import glob as globmod

    _, _, report_rows = read_csv(layout.report_file())
    out = []
    for row in report_rows:
        label = row["label"]
        accs = []
        pattern = globmod.escape(str(layout.root / "runs" / label)) + "_s*.csv"
        for path in sorted(globmod.glob(pattern)):
            _, _, rows = read_csv(path)
            accs.extend(float(r["final_accuracy"]) for r in rows)
        mean, std = scheduler.mean_std(accs)
        out.append({"label": label, "n": len(accs), "mean": mean, "std": std})
    return out
