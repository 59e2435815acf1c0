# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent scan kernels.

Mirrors clpd.model.backend.pyref exactly (same fused-gate recurrence, same
GEMM shapes via BLAS); only the per-timestep loop and elementwise math run
in C.  Transcendentals use libm, so results match the numpy backend to
float64 rounding rather than bitwise.  Kernels write into caller-provided
output arrays.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef void _gemm_nt(int m, int n, int k, double* a, double* b, double* c,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k)^T  [+ beta * C]
    cdef double one = 1.0
    dgemm("T", "N", &n, &m, &k, &one, b, &k, a, &k, &beta, c, &n)


cdef void _gemm_nn(int m, int n, int k, double* a, double* b, double* c,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n)  [+ beta * C]
    cdef double one = 1.0
    dgemm("N", "N", &n, &m, &k, &one, b, &n, a, &k, &beta, c, &n)


cdef void _gemm_tn(int m, int n, int k, double* a, double* b, double* c,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(k,m)^T @ B(k,n)  [+ beta * C]
    cdef double one = 1.0
    dgemm("N", "T", &n, &m, &k, &one, b, &n, a, &m, &beta, c, &n)


def scan_forward(double[:, ::1] u, double[:, :, ::1] xproj, double[:, ::1] h0,
                 double[:, :, ::1] h, double[:, :, ::1] z, double[:, :, ::1] r,
                 double[:, :, ::1] c, double[:, :, ::1] ahc):
    cdef int batch = xproj.shape[0]
    cdef int steps = xproj.shape[1]
    cdef int hidden = xproj.shape[2] // 3
    if steps == 0:
        return

    hprev_arr = np.array(h0, copy=True)  # the caller's h0 must stay untouched
    cdef double[:, ::1] hprev = hprev_arr
    ah_arr = np.empty((batch, 3 * hidden))
    cdef double[:, ::1] ah = ah_arr

    cdef int t, b, j
    cdef double z_t, r_t, c_t, h_t
    with nogil:
        for t in range(steps):
            _gemm_nt(batch, 3 * hidden, hidden, &hprev[0, 0], &u[0, 0],
                     &ah[0, 0], 0.0)
            for b in range(batch):
                for j in range(hidden):
                    z_t = _sigmoid(xproj[b, t, j] + ah[b, j])
                    r_t = _sigmoid(xproj[b, t, hidden + j] + ah[b, hidden + j])
                    c_t = tanh(xproj[b, t, 2 * hidden + j] + r_t * ah[b, 2 * hidden + j])
                    h_t = (1.0 - z_t) * hprev[b, j] + z_t * c_t
                    z[b, t, j] = z_t
                    r[b, t, j] = r_t
                    c[b, t, j] = c_t
                    ahc[b, t, j] = ah[b, 2 * hidden + j]
                    h[b, t, j] = h_t
                    hprev[b, j] = h_t


def scan_backward(double[:, ::1] u, double[:, ::1] h0, double[:, :, ::1] h,
                  double[:, :, ::1] z, double[:, :, ::1] r, double[:, :, ::1] c,
                  double[:, :, ::1] ahc, double[:, :, ::1] dh_out,
                  double[:, :, ::1] dxproj, double[:, ::1] du, double[:, ::1] dh):
    cdef int batch = h.shape[0]
    cdef int steps = h.shape[1]
    cdef int hidden = h.shape[2]
    du[:, :] = 0.0
    dh[:, :] = 0.0
    if steps == 0:
        return

    hprev_arr = np.empty((batch, hidden))
    dah_arr = np.empty((batch, 3 * hidden))
    cdef double[:, ::1] hprev = hprev_arr
    cdef double[:, ::1] dah = dah_arr

    cdef int t, b, j
    cdef double z_t, r_t, c_t, ahc_t, hp, d, dz, dc, dac, dr, daz, dar
    with nogil:
        for t in range(steps - 1, -1, -1):
            if t > 0:
                for b in range(batch):
                    memcpy(&hprev[b, 0], &h[b, t - 1, 0], hidden * sizeof(double))
            else:
                for b in range(batch):
                    memcpy(&hprev[b, 0], &h0[b, 0], hidden * sizeof(double))
            for b in range(batch):
                for j in range(hidden):
                    d = dh[b, j] + dh_out[b, t, j]
                    z_t = z[b, t, j]
                    r_t = r[b, t, j]
                    c_t = c[b, t, j]
                    ahc_t = ahc[b, t, j]
                    hp = hprev[b, j]
                    dz = d * (c_t - hp)
                    dc = d * z_t
                    dh[b, j] = d * (1.0 - z_t)
                    dac = dc * (1.0 - c_t * c_t)
                    dr = dac * ahc_t
                    daz = dz * z_t * (1.0 - z_t)
                    dar = dr * r_t * (1.0 - r_t)
                    dxproj[b, t, j] = daz
                    dxproj[b, t, hidden + j] = dar
                    dxproj[b, t, 2 * hidden + j] = dac
                    dah[b, j] = daz
                    dah[b, hidden + j] = dar
                    dah[b, 2 * hidden + j] = dac * r_t
            # dh_prev += dah @ u ; du += dah^T @ h_prev
            _gemm_nn(batch, hidden, 3 * hidden, &dah[0, 0], &u[0, 0],
                     &dh[0, 0], 1.0)
            _gemm_tn(3 * hidden, hidden, batch, &dah[0, 0], &hprev[0, 0],
                     &du[0, 0], 1.0)
