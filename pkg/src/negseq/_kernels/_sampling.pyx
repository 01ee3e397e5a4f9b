# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling hot loops; decision-identical to negseq._kernels.pyref."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def accept_draws(cnp.int64_t[:, ::1] out,
                 cnp.int64_t[::1] filled,
                 cnp.int64_t[::1] ks,
                 cnp.float64_t[::1] us,
                 cnp.float64_t[::1] prob,
                 cnp.int64_t[::1] alias,
                 cnp.int64_t[::1] support_ids,
                 cnp.int64_t[::1] need,
                 cnp.int64_t[::1] excl_items,
                 cnp.int64_t[::1] excl_indptr,
                 cnp.uint8_t[::1] scratch):
    cdef Py_ssize_t B = filled.shape[0]
    cdef Py_ssize_t n_slots = out.shape[1]
    cdef Py_ssize_t b, j, e, e0, e1, f, m, pos = 0
    cdef cnp.int64_t cell, item

    for b in range(B):
        m = need[b]
        if m == 0:
            continue
        e0 = excl_indptr[b]
        e1 = excl_indptr[b + 1]
        for e in range(e0, e1):
            scratch[excl_items[e]] = 1
        f = filled[b]
        for j in range(m):
            cell = ks[pos + j]
            if us[pos + j] >= prob[cell]:
                cell = alias[cell]
            item = support_ids[cell]
            if scratch[item] == 0 and f < n_slots:
                out[b, f] = item
                f += 1
        filled[b] = f
        pos += m
        for e in range(e0, e1):
            scratch[excl_items[e]] = 0


def member_mask(cnp.int64_t[:, ::1] pool,
                cnp.int64_t[::1] excl_items,
                cnp.int64_t[::1] excl_indptr,
                cnp.uint8_t[::1] scratch):
    cdef Py_ssize_t B = pool.shape[0]
    cdef Py_ssize_t P = pool.shape[1]
    cdef Py_ssize_t b, p, e, e0, e1
    mask_arr = np.zeros((B, P), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mask = mask_arr

    for b in range(B):
        e0 = excl_indptr[b]
        e1 = excl_indptr[b + 1]
        for e in range(e0, e1):
            scratch[excl_items[e]] = 1
        for p in range(P):
            mask[b, p] = scratch[pool[b, p]]
        for e in range(e0, e1):
            scratch[excl_items[e]] = 0
    return mask_arr
