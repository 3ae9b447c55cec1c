# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython Gauss-Seidel sweep for the dynamic-programming oracle.

Mirrors _sweep_py.gs_sweep exactly: in-place, monotone non-increasing
updates, returns the largest decrease of the sweep.
"""


def gs_sweep(double[::1] values, const unsigned char[::1] fixed,
             const long long[:, ::1] base, const double[:, :, ::1] wts,
             const long long[::1] offsets, const double[:, ::1] stage,
             bint reverse):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t n_ctrl = base.shape[1]
    cdef Py_ssize_t n_corner = offsets.shape[0]
    cdef Py_ssize_t ii, i, k, c
    cdef long long b
    cdef double best, acc, change
    cdef double max_change = 0.0

    for ii in range(n):
        i = n - 1 - ii if reverse else ii
        if fixed[i]:
            continue
        best = values[i]
        for k in range(n_ctrl):
            b = base[i, k]
            if b < 0:
                continue
            acc = stage[i, k]
            for c in range(n_corner):
                acc += wts[i, k, c] * values[b + offsets[c]]
            if acc < best:
                best = acc
        change = values[i] - best
        if change > max_change:
            max_change = change
        values[i] = best
    return max_change
