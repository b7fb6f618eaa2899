# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    N_STATS = 16

ctypedef cnp.int16_t w_t


cdef inline int _clip(int v, int lo, int hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def accumulate_columns(w_t[:, :] w, const cnp.int64_t[:] idx, cnp.int32_t[:] out):
    cdef Py_ssize_t i, k, m = w.shape[0], n = idx.shape[0]
    cdef int acc
    if n == 0:
        return
    with nogil:
        for i in range(m):
            acc = 0
            for k in range(n):
                acc += w[i, idx[k]]
            out[i] += acc


def hebbian_update(w_t[:, :] w, const cnp.int64_t[:] pre, const cnp.int64_t[:] post,
                   int delta, int lo, int hi):
    cdef Py_ssize_t a, b, i
    with nogil:
        for a in range(post.shape[0]):
            i = post[a]
            for b in range(pre.shape[0]):
                w[i, pre[b]] = <w_t>_clip(w[i, pre[b]] + delta, lo, hi)


def run_oracle(w_t[:, ::1] w1, w_t[:, ::1] w2, const cnp.uint8_t[:, ::1] x,
               const cnp.int64_t[:] labels, const cnp.int64_t[:] order,
               int v_thr, int w1_lo, int w1_hi, int w2_lo, int w2_hi, int step, bint learn):
    cdef Py_ssize_t n_hid = w1.shape[0], n_in = w1.shape[1], n_out = w2.shape[0]
    cdef Py_ssize_t n = order.shape[0]
    cdef int half = v_thr // 2
    stats_arr = np.zeros((n, N_STATS), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] stats = stats_arr
    cdef cnp.int64_t[::1] active = np.empty(n_in, dtype=np.int64)
    cdef cnp.int64_t[::1] hid = np.empty(n_hid, dtype=np.int64)
    cdef cnp.int32_t[::1] a1 = np.empty(n_hid, dtype=np.int32)
    cdef cnp.int32_t[::1] a2 = np.empty(n_out, dtype=np.int32)
    cdef cnp.int32_t[::1] err = np.empty(n_out, dtype=np.int32)
    cdef cnp.int8_t[::1] b_h = np.empty(n_hid, dtype=np.int8)
    cdef Py_ssize_t row, s, i, j, k, n_act, n_hidden
    cdef int acc, lab, pred, v, back, any_err
    cdef cnp.int64_t *st
    with nogil:
        for row in range(n):
            s = order[row]
            st = &stats[row, 0]
            lab = <int>labels[s]
            n_act = 0
            for i in range(n_in):
                if x[s, i]:
                    active[n_act] = i
                    n_act += 1
            st[1] = n_act
            n_hidden = 0
            for j in range(n_hid):
                acc = 0
                for k in range(n_act):
                    acc += w1[j, active[k]]
                a1[j] = acc
                if acc > half:
                    hid[n_hidden] = j
                    n_hidden += 1
                if acc > 0:
                    st[3] += 1
                if acc > v_thr:
                    st[4] += 1
                b_h[j] = acc > 0 and acc <= v_thr
                st[8] += b_h[j]
            st[2] = n_hidden
            pred = -1
            any_err = 0
            for k in range(n_out):
                acc = 0
                for j in range(n_hidden):
                    acc += w2[k, hid[j]]
                a2[k] = acc
                err[k] = 0
                if acc > half:
                    st[5] += 1
                    if pred < 0:
                        pred = <int>k
                    if k != lab:
                        st[15] += 1
                        if acc <= v_thr:
                            err[k] = -1
                elif k == lab:
                    st[15] += 1
                    if acc > 0:
                        err[k] = 1
                if acc > 0:
                    st[6] += 1
                if acc > v_thr:
                    st[7] += 1
                if err[k] > 0:
                    st[9] += 1
                    any_err = 1
                elif err[k] < 0:
                    st[10] += 1
                    any_err = 1
            st[0] = pred
            if not any_err:
                continue
            for j in range(n_hid):
                back = 0
                for k in range(n_out):
                    if err[k]:
                        back += err[k] * w2[k, j]
                if back > 0:
                    st[11] += 1
                    if b_h[j]:
                        st[13] += 1
                        if learn:
                            for k in range(n_act):
                                i = active[k]
                                w1[j, i] = <w_t>_clip(w1[j, i] + step, w1_lo, w1_hi)
                elif back < 0:
                    st[12] += 1
                    if b_h[j]:
                        st[14] += 1
                        if learn:
                            for k in range(n_act):
                                i = active[k]
                                w1[j, i] = <w_t>_clip(w1[j, i] - step, w1_lo, w1_hi)
            if learn:
                for k in range(n_out):
                    if err[k]:
                        v = err[k] * step
                        for j in range(n_hidden):
                            i = hid[j]
                            w2[k, i] = <w_t>_clip(w2[k, i] + v, w2_lo, w2_hi)
    return stats_arr
