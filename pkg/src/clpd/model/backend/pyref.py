"""Pure-numpy recurrent scan kernels (reference backend).

The gated cell is the fused-gate variant: the reset gate is applied to the
recurrent projection, so all three recurrent matmuls fold into one GEMM per
timestep:

    ah        = h_prev @ u.T                      # rows of u: [z; r; c]
    z         = sigmoid(xz + ah_z)
    r         = sigmoid(xr + ah_r)
    c         = tanh(xc + r * ah_c)
    h         = (1 - z) * h_prev + z * c

`xproj` carries the input-side preactivations (W x + b) for the whole
sequence, precomputed by the caller in one GEMM.  Kernels write into
caller-provided output arrays so the training loop can reuse buffers.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def scan_forward(u, xproj, h0, h, z, r, c, ahc) -> None:
    """Run the gated recurrence over a (B, T, 3H) preactivation tensor.

    Fills h (B, T, H) and the stash (z, r, c, ahc) needed by backward.
    """
    batch, steps, three_h = xproj.shape
    hidden = three_h // 3
    h_prev = h0
    ah = np.empty((batch, three_h))

    def sigmoid_into(preact, out):
        np.negative(preact, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)

    for t in range(steps):
        np.matmul(h_prev, u.T, out=ah)
        z_t, r_t, c_t = z[:, t], r[:, t], c[:, t]
        sigmoid_into(ah[:, :hidden] + xproj[:, t, :hidden], z_t)
        sigmoid_into(ah[:, hidden : 2 * hidden] + xproj[:, t, hidden : 2 * hidden], r_t)
        ahc[:, t] = ah[:, 2 * hidden :]
        np.multiply(r_t, ahc[:, t], out=c_t)
        c_t += xproj[:, t, 2 * hidden :]
        np.tanh(c_t, out=c_t)
        h_t = h[:, t]
        np.subtract(c_t, h_prev, out=h_t)
        h_t *= z_t
        h_t += h_prev
        h_prev = h_t


def scan_backward(u, h0, h, z, r, c, ahc, dh_out, dxproj, du, dh) -> None:
    """Backpropagate through the recurrence.

    dh_out is the gradient arriving at each h_t from outside the scan.
    Fills dxproj (B, T, 3H) and du (3H, H); dh (B, H) carries the running
    gradient and ends as d h0.
    """
    batch, steps, hidden = h.shape
    du.fill(0.0)
    dh.fill(0.0)
    dah = np.empty((batch, 3 * hidden))
    for t in range(steps - 1, -1, -1):
        dh += dh_out[:, t]
        h_prev = h[:, t - 1] if t > 0 else h0
        z_t, r_t, c_t, ahc_t = z[:, t], r[:, t], c[:, t], ahc[:, t]
        dz = dh * (c_t - h_prev)
        dac = dh * z_t * (1.0 - c_t * c_t)
        dr = dac * ahc_t
        daz = dz * z_t * (1.0 - z_t)
        dar = dr * r_t * (1.0 - r_t)
        dxproj[:, t, :hidden] = daz
        dxproj[:, t, hidden : 2 * hidden] = dar
        dxproj[:, t, 2 * hidden :] = dac
        dah[:, :hidden] = daz
        dah[:, hidden : 2 * hidden] = dar
        np.multiply(dac, r_t, out=dah[:, 2 * hidden :])
        dh *= 1.0 - z_t
        dh += dah @ u
        du += dah.T @ h_prev
