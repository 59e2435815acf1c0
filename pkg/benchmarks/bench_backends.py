#!/usr/bin/env python3
"""Benchmark the recurrent-scan backends (compiled vs pure numpy).

Times the raw scan kernels and a full training step at several batch
sizes, then prints a table with speedups.  Run from the repo root:

    python benchmarks/bench_backends.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from clpd import data
from clpd.data import reference_response
from clpd.model import backend, core, losses, optim
from clpd.model.workspace import Workspace
from clpd.threads import limit_blas_threads


def time_call(fn, repeats: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def bench_scan(kernels, batch: int, steps: int, hidden: int, repeats: int):
    gen = np.random.default_rng(0)
    u = np.ascontiguousarray(gen.normal(size=(3 * hidden, hidden)) * 0.2)
    xproj = np.ascontiguousarray(gen.normal(size=(batch, steps, 3 * hidden)))
    h0 = np.zeros((batch, hidden))
    dh_out = np.ascontiguousarray(gen.normal(size=(batch, steps, hidden)))
    h = np.empty((batch, steps, hidden))
    stash = tuple(np.empty((batch, steps, hidden)) for _ in range(4))
    dxproj = np.empty((batch, steps, 3 * hidden))
    du = np.empty((3 * hidden, hidden))
    dh = np.empty((batch, hidden))

    fwd = time_call(lambda: kernels.scan_forward(u, xproj, h0, h, *stash), repeats)
    bwd = time_call(
        lambda: kernels.scan_backward(u, h0, h, *stash, dh_out, dxproj, du, dh),
        repeats,
    )
    return fwd, bwd


def bench_train_step(kernels, batch: int, repeats: int):
    full = data.generate_task(batch, [1, 6], [0, 9], seed=11, value_limit=20)
    vocab = full.vocab
    cfg = core.ModelConfig(
        vocab_size=len(vocab), embed_dim=24, hidden_dim=64, num_layers=2,
        context_len=176,
    )
    model = core.init_model(cfg, seed=1)
    opt = optim.init_optimizer(model, "adam-style", 5e-3)
    ws = Workspace()
    chunk = full.examples[:batch]
    inputs, targets, mask = losses.batch_arrays(
        vocab.bos_id, vocab.pad_id,
        [e.prompt for e in chunk],
        [reference_response(e, vocab) for e in chunk],
    )

    def step():
        _, _, grad = losses.seqkd_batch_ids(model, inputs, targets, mask, kernels, ws)
        optim.apply_update(model, opt, grad, 1.0)

    ms = time_call(step, repeats)
    tokens = int(mask.sum()) + int((inputs != vocab.pad_id).sum())
    return ms, tokens


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=12)
    args = parser.parse_args()

    limit_blas_threads(1)
    names = backend.available_backends()
    if "cython" not in names:
        print("compiled kernel not built; benchmarking pure python only")

    print("\nscan kernels (hidden=64, steps=96)")
    print(f"{'batch':>6} | " + " | ".join(f"{n} fwd/bwd (ms)" for n in names)
          + (" | speedup fwd/bwd" if len(names) == 2 else ""))
    for batch in (1, 8, 32, 128):
        cells = []
        results = {}
        for name in names:
            fwd, bwd = bench_scan(backend.get_backend(name), batch, 96, 64, args.repeats)
            results[name] = (fwd, bwd)
            cells.append(f"{fwd:8.2f} / {bwd:6.2f}")
        line = f"{batch:>6} | " + " | ".join(cells)
        if len(names) == 2:
            line += (
                f" | {results['python'][0] / results['cython'][0]:.2f}x"
                f" / {results['python'][1] / results['cython'][1]:.2f}x"
            )
        print(line)

    print("\nfull training step (seqkd loss + adam, hidden=64, 2 layers)")
    print(f"{'batch':>6} | " + " | ".join(f"{n} ms/step" for n in names)
          + (" | speedup" if len(names) == 2 else ""))
    for batch in (8, 16, 32, 64):
        cells = []
        results = {}
        for name in names:
            ms, _ = bench_train_step(backend.get_backend(name), batch, args.repeats)
            results[name] = ms
            cells.append(f"{ms:10.2f}")
        line = f"{batch:>6} | " + " | ".join(cells)
        if len(names) == 2:
            line += f" | {results['python'] / results['cython']:.2f}x"
        print(line)


if __name__ == "__main__":
    main()
