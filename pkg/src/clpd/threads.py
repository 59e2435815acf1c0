"""Pin BLAS pools to one thread per process.

The training kernels issue thousands of tiny GEMMs per batch; OpenBLAS
thread handoff costs more than the math at these sizes, and the harness
already parallelizes at run granularity.  Called by the CLI, by worker
processes, and by the benchmark; best-effort (unknown BLAS builds are left
alone).
"""

from __future__ import annotations

import ctypes
import glob
import os

_SYMBOLS = (
    "scipy_openblas_set_num_threads64_",
    "scipy_openblas_set_num_threads",
    "openblas_set_num_threads64_",
    "openblas_set_num_threads",
)

_done = False


def limit_blas_threads(n: int = 1) -> int:
    """Set every discoverable OpenBLAS pool to n threads; returns #libs hit."""
    global _done
    hit = 0
    roots = set()
    for mod in ("numpy", "scipy"):
        try:
            pkg = __import__(mod)
        except ImportError:
            continue
        roots.add(os.path.dirname(os.path.dirname(pkg.__file__)))
    for root in roots:
        for pattern in ("numpy.libs/libscipy_openblas*.so*", "scipy.libs/libscipy_openblas*.so*"):
            for path in sorted(glob.glob(os.path.join(root, pattern))):
                try:
                    lib = ctypes.CDLL(path)
                except OSError:
                    continue
                for name in _SYMBOLS:
                    fn = getattr(lib, name, None)
                    if fn is not None:
                        fn(ctypes.c_int(n))
                        hit += 1
                        break
    _done = True
    return hit


def limit_blas_threads_once(n: int = 1) -> None:
    if not _done:
        limit_blas_threads(n)
