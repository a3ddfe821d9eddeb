"""Pure numpy implementations of the hot loops.

These are the reference versions; ``_ckernels.pyx`` mirrors every function
here with the same signature and must agree to floating-point round-off.
"""

import numpy as np

NEG_INF = -np.inf


def ctc_alpha_beta(log_probs, ext):
    """Log-space forward and backward variables for CTC.

    ``log_probs`` is (T, K) log-softmax output, ``ext`` the blank-interleaved
    target of length S = 2U + 1 (blank id at even positions). Both returned
    tables are (T, S) and include the emission at ``t`` (Graves convention),
    so the state posterior is ``alpha + beta - log_probs[t, ext[s]]``.
    """
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    ext = np.ascontiguousarray(ext, dtype=np.int64)
    T = log_probs.shape[0]
    S = ext.shape[0]
    emit = log_probs[:, ext]

    # skip[s]: transition s-2 -> s allowed (non-blank, differs from s-2)
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != ext[0]) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        two = np.full(S, NEG_INF)
        two[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        acc = np.logaddexp(acc, two)
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        two = np.full(S, NEG_INF)
        two[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        acc = np.logaddexp(acc, two)
        beta[t] = acc + emit[t]
    return alpha, beta


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein distance between two integer sequences."""
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            cost = 0 if r == hyp[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[m]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(xw, w_hh):
    """Run the LSTM recurrence given the precomputed input projection.

    ``xw`` is (T, 4H): x_t @ W_ih + b for every step. Gate order is
    input, forget, cell, output. Returns hidden states (T, H), cell states
    (T, H) and post-activation gates (T, 4H). Initial h and c are zero.
    """
    xw = np.ascontiguousarray(xw, dtype=np.float64)
    T, H4 = xw.shape
    H = H4 // 4
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    gates = np.zeros((T, H4))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        z = xw[t] + h @ w_hh
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def lstm_backward(dhs, w_hh, hs, cs, gates):
    """Backpropagate through the recurrence.

    Returns the gradient w.r.t. the pre-activation gate inputs (T, 4H) and
    w.r.t. ``w_hh``. Callers chain the first into W_ih, bias and x.
    """
    dhs = np.ascontiguousarray(dhs, dtype=np.float64)
    T, H = hs.shape
    dz = np.zeros((T, 4 * H))
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros(H)
        tc = np.tanh(c)
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[t, :H] = dc * g * i * (1.0 - i)
        dz[t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[t, 3 * H:] = dh * tc * o * (1.0 - o)
        if t > 0:
            dw_hh += np.outer(hs[t - 1], dz[t])
        dh_next = w_hh @ dz[t]
        dc_next = dc * f
    return dz, dw_hh
