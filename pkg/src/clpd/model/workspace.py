"""Reusable scratch buffers for the training hot path.

Fresh multi-megabyte temporaries per batch cost more in page faults than
the GEMMs they feed, so forward/backward and the losses write into named
buffers that persist across batches.  Buffers grow monotonically and are
never shared between names; a workspace belongs to one run (not
thread-safe, which matches the one-mutable-model-per-run concurrency
model).
"""

from __future__ import annotations

import numpy as np


class Workspace:
    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def get(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        """A float64 array of the given shape, reused across calls."""
        size = int(np.prod(shape))
        buf = self._buffers.get(name)
        if buf is None or buf.size < size:
            buf = np.empty(max(size, 1))
            self._buffers[name] = buf
        return buf[:size].reshape(shape)

    def zeros(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        out = self.get(name, shape)
        out.fill(0.0)
        return out


_default = Workspace()


def default_workspace() -> Workspace:
    return _default
