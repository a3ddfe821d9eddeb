# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``_pykernels``. Same signatures, same results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, tanh, INFINITY

cnp.import_array()


cdef inline double _logaddexp(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _sigmoid(double z) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * z))


def ctc_alpha_beta(log_probs, ext):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(ext, dtype=np.int64)
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t S = lab.shape[0]
    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    skip_arr = np.zeros(S, dtype=np.uint8)
    cdef unsigned char[::1] skip = skip_arr
    cdef Py_ssize_t t, s
    cdef double acc
    with nogil:
        for s in range(2, S):
            skip[s] = lab[s] != lab[0] and lab[s] != lab[s - 2]
        alpha[0, 0] = lp[0, lab[0]]
        if S > 1:
            alpha[0, 1] = lp[0, lab[1]]
        for t in range(1, T):
            for s in range(S):
                acc = alpha[t - 1, s]
                if s >= 1:
                    acc = _logaddexp(acc, alpha[t - 1, s - 1])
                if s >= 2 and skip[s]:
                    acc = _logaddexp(acc, alpha[t - 1, s - 2])
                if acc != -INFINITY:
                    alpha[t, s] = acc + lp[t, lab[s]]
        beta[T - 1, S - 1] = lp[T - 1, lab[S - 1]]
        if S > 1:
            beta[T - 1, S - 2] = lp[T - 1, lab[S - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(S):
                acc = beta[t + 1, s]
                if s + 1 < S:
                    acc = _logaddexp(acc, beta[t + 1, s + 1])
                if s + 2 < S and skip[s + 2]:
                    acc = _logaddexp(acc, beta[t + 1, s + 2])
                if acc != -INFINITY:
                    beta[t, s] = acc + lp[t, lab[s]]
    return alpha_arr, beta_arr


def edit_distance(ref, hyp):
    cdef long long[::1] a = np.ascontiguousarray(list(ref), dtype=np.int64)
    cdef long long[::1] b = np.ascontiguousarray(list(hyp), dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    if n == 0:
        return int(m)
    if m == 0:
        return int(n)
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    cdef Py_ssize_t i, j
    cdef long long best, cand
    with nogil:
        for i in range(1, n + 1):
            cur[0] = i
            for j in range(1, m + 1):
                best = prev[j] + 1
                cand = cur[j - 1] + 1
                if cand < best:
                    best = cand
                cand = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
                if cand < best:
                    best = cand
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
    return int(prev[m])


def lstm_forward(xw, w_hh):
    cdef double[:, ::1] z_in = np.ascontiguousarray(xw, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh, dtype=np.float64)
    cdef Py_ssize_t T = z_in.shape[0]
    cdef Py_ssize_t H4 = z_in.shape[1]
    cdef Py_ssize_t H = H4 // 4
    hs_arr = np.zeros((T, H))
    cs_arr = np.zeros((T, H))
    gates_arr = np.zeros((T, H4))
    z_arr = np.zeros(H4)
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[::1] z = z_arr
    cdef Py_ssize_t t, k, j
    cdef double hk, c_prev, ig, fg, gg, og, c
    with nogil:
        for t in range(T):
            for j in range(H4):
                z[j] = z_in[t, j]
            if t > 0:
                for k in range(H):
                    hk = hs[t - 1, k]
                    if hk != 0.0:
                        for j in range(H4):
                            z[j] += hk * w[k, j]
            for j in range(H):
                ig = _sigmoid(z[j])
                fg = _sigmoid(z[H + j])
                gg = tanh(z[2 * H + j])
                og = _sigmoid(z[3 * H + j])
                c_prev = cs[t - 1, j] if t > 0 else 0.0
                c = fg * c_prev + ig * gg
                cs[t, j] = c
                hs[t, j] = og * tanh(c)
                gates[t, j] = ig
                gates[t, H + j] = fg
                gates[t, 2 * H + j] = gg
                gates[t, 3 * H + j] = og
    return hs_arr, cs_arr, gates_arr


def lstm_backward(dhs, w_hh, hs, cs, gates):
    cdef double[:, ::1] dh_in = np.ascontiguousarray(dhs, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh, dtype=np.float64)
    cdef double[:, ::1] h_ = np.ascontiguousarray(hs, dtype=np.float64)
    cdef double[:, ::1] c_ = np.ascontiguousarray(cs, dtype=np.float64)
    cdef double[:, ::1] gt = np.ascontiguousarray(gates, dtype=np.float64)
    cdef Py_ssize_t T = h_.shape[0]
    cdef Py_ssize_t H = h_.shape[1]
    cdef Py_ssize_t H4 = 4 * H
    dz_arr = np.zeros((T, H4))
    dw_arr = np.zeros((H, H4))
    dh_next_arr = np.zeros(H)
    dc_next_arr = np.zeros(H)
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] dh_next = dh_next_arr
    cdef double[::1] dc_next = dc_next_arr
    cdef Py_ssize_t t, j, k
    cdef double ig, fg, gg, og, tc, dh, dc, c_prev, acc, hk
    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(H):
                ig = gt[t, j]
                fg = gt[t, H + j]
                gg = gt[t, 2 * H + j]
                og = gt[t, 3 * H + j]
                tc = tanh(c_[t, j])
                c_prev = c_[t - 1, j] if t > 0 else 0.0
                dh = dh_in[t, j] + dh_next[j]
                dc = dc_next[j] + dh * og * (1.0 - tc * tc)
                dz[t, j] = dc * gg * ig * (1.0 - ig)
                dz[t, H + j] = dc * c_prev * fg * (1.0 - fg)
                dz[t, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                dz[t, 3 * H + j] = dh * tc * og * (1.0 - og)
                dc_next[j] = dc * fg
            if t > 0:
                for k in range(H):
                    hk = h_[t - 1, k]
                    for j in range(H4):
                        dw[k, j] += hk * dz[t, j]
            for k in range(H):
                acc = 0.0
                for j in range(H4):
                    acc += w[k, j] * dz[t, j]
                dh_next[k] = acc
    return dz_arr, dw_arr
