# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled batched propagation kernel.

Implements the same contract as the numpy reference: column-parallel
scenario states in Fortran order, indicator before step, fault window
populations as column prefixes, dense steps through BLAS dgemm with the
forcing preloaded into the destination buffer.
"""

from libc.math cimport fabs
from libc.string cimport memcpy

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


def run_batch(double[::1, :] e_f, double[::1] j_f,
              double[::1, :] e_0, double[::1] j_0,
              double[::1] gain, Py_ssize_t p_plus, Py_ssize_t p_minus,
              double[::1] x0, double[:, ::1] dw,
              long[::1] m_dyn, long[::1] m_ind,
              double[::1] flow_scale, long[::1] fr, long[::1] to,
              long faulted, double retained,
              int[::1, :] counts, double[::1] max_ratio,
              double[::1, :] x_out):
    cdef Py_ssize_t k_steps = dw.shape[0]
    cdef Py_ssize_t b = dw.shape[1]
    cdef Py_ssize_t two_n = x0.shape[0]
    cdef Py_ssize_t n_lines = flow_scale.shape[0]

    cdef double[::1, :] xbuf = np.empty((two_n, b), order="F")
    cdef double[::1, :] wbuf = np.empty((two_n, b), order="F")
    cdef double* xp = &xbuf[0, 0]
    cdef double* wp = &wbuf[0, 0]
    cdef double* swap
    cdef double* col_ptr
    cdef double* x0p = &x0[0]
    cdef double* jfp = &j_f[0]
    cdef double* j0p = &j_0[0]
    cdef double* efp = &e_f[0, 0]
    cdef double* e0p = &e_0[0, 0]
    cdef double* gp = &gain[0]
    cdef double* dwp = &dw[0, 0] if k_steps * b else NULL
    cdef int* cp = &counts[0, 0]
    cdef double* mrp = &max_ratio[0]

    cdef char transn = b'N'
    cdef double one = 1.0
    cdef int im = <int> two_n
    cdef int ik = <int> two_n
    cdef int lda = <int> two_n
    cdef int ncols

    cdef Py_ssize_t k, col, e, i, m, mi
    cdef double val, amp, mr

    with nogil:
        for col in range(b):
            memcpy(xp + col * two_n, x0p, two_n * sizeof(double))

        for k in range(k_steps):
            m = m_dyn[k]
            mi = m_ind[k]

            # exceedance indicator at the left endpoint of this step
            for col in range(b):
                col_ptr = xp + col * two_n
                mr = mrp[col]
                for e in range(n_lines):
                    val = fabs(col_ptr[fr[e]] - col_ptr[to[e]]) * flow_scale[e]
                    if e == faulted and col < mi:
                        val = val * retained
                    if val > 1.0:
                        cp[col * n_lines + e] += 1
                    if val > mr:
                        mr = val
                mrp[col] = mr

            # multiplicative noise on the columns still inside the fault
            for col in range(m):
                col_ptr = xp + col * two_n
                amp = (col_ptr[p_plus] - col_ptr[p_minus]) * dwp[k * b + col]
                for i in range(two_n):
                    col_ptr[i] += gp[i] * amp

            # preload the forcing so dgemm can accumulate with beta = 1
            for col in range(b):
                memcpy(wp + col * two_n, jfp if col < m else j0p,
                       two_n * sizeof(double))
            if m > 0:
                ncols = <int> m
                dgemm(&transn, &transn, &im, &ncols, &ik, &one,
                      efp, &lda, xp, &lda, &one, wp, &lda)
            if m < b:
                ncols = <int> (b - m)
                dgemm(&transn, &transn, &im, &ncols, &ik, &one,
                      e0p, &lda, xp + m * two_n, &lda, &one,
                      wp + m * two_n, &lda)

            swap = xp
            xp = wp
            wp = swap

        memcpy(&x_out[0, 0], xp, two_n * b * sizeof(double))
