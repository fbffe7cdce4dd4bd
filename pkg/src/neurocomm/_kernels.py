"""Compiled time recurrences for the SRM layers (rows = neurons, columns = steps)."""

import numpy as np
from numba import njit


@njit(cache=True)
def exp_filter_diff(x, a1, a2):
    """out[:, t] = sum_{d>=1} (a1**d - a2**d) * x[:, t-d]."""
    M, T = x.shape
    out = np.empty_like(x)
    for i in range(M):
        t1 = 0.0
        t2 = 0.0
        for t in range(T):
            out[i, t] = t1 - t2
            t1 = a1 * (t1 + x[i, t])
            t2 = a2 * (t2 + x[i, t])
    return out


@njit(cache=True)
def exp_filter_diff_adjoint(g, a1, a2):
    M, T = g.shape
    out = np.empty_like(g)
    for i in range(M):
        t1 = 0.0
        t2 = 0.0
        for t in range(T - 1, -1, -1):
            out[i, t] = t1 - t2
            t1 = a1 * (t1 + g[i, t])
            t2 = a2 * (t2 + g[i, t])
    return out


@njit(cache=True)
def feedback_loop(current, ar, sign, threshold, slope, relaxed):
    M, T = current.shape
    potential = np.empty_like(current)
    spikes = np.empty_like(current)
    for i in range(M):
        ref = 0.0
        for t in range(T):
            o = current[i, t] + sign * ref
            if relaxed:
                b = 0.5 * (1.0 + np.tanh(0.5 * slope * (o - threshold)))
            else:
                b = 1.0 if o >= threshold else 0.0
            potential[i, t] = o
            spikes[i, t] = b
            ref = ar * (ref + b)
    return potential, spikes


@njit(cache=True)
def feedback_loop_adjoint(g, potential, ar, sign, threshold, slope):
    M, T = g.shape
    g_o = np.empty_like(g)
    for i in range(M):
        g_ref = 0.0
        for t in range(T - 1, -1, -1):
            s = 0.5 * (1.0 + np.tanh(0.5 * slope * (potential[i, t] - threshold)))
            go = (g[i, t] + ar * g_ref) * slope * s * (1.0 - s)
            g_o[i, t] = go
            g_ref = sign * go + ar * g_ref
    return g_o


@njit(cache=True)
def bp_decode(llr, edge_chk, edge_var, chk_ptr, chk_edges, var_ptr, var_edges, max_iters):
    """Sum-product decoding per word with early exit on a zero syndrome.

    Edges are listed once; ``chk_edges[chk_ptr[i]:chk_ptr[i+1]]`` are the
    edges of check ``i`` and likewise for variables.
    """
    B, n = llr.shape
    E = edge_chk.shape[0]
    m = chk_ptr.shape[0] - 1
    hard = np.zeros((B, n), dtype=np.uint8)
    ok = np.zeros(B, dtype=np.bool_)
    used = np.zeros(B, dtype=np.int64)
    v2c = np.empty(E)
    c2v = np.empty(E)
    t = np.empty(E)
    for b in range(B):
        for j in range(n):
            hard[b, j] = 1 if llr[b, j] < 0 else 0
        for e in range(E):
            v2c[e] = llr[b, edge_var[e]]
        it = 0
        while True:
            sat = True
            for i in range(m):
                s = 0
                for q in range(chk_ptr[i], chk_ptr[i + 1]):
                    s ^= hard[b, edge_var[chk_edges[q]]]
                if s:
                    sat = False
                    break
            if sat or it >= max_iters:
                ok[b] = sat
                break
            for e in range(E):
                x = v2c[e]
                if x > 60.0:
                    x = 60.0
                elif x < -60.0:
                    x = -60.0
                t[e] = np.tanh(0.5 * x)
            for i in range(m):
                for q in range(chk_ptr[i], chk_ptr[i + 1]):
                    e = chk_edges[q]
                    p = 1.0
                    for r in range(chk_ptr[i], chk_ptr[i + 1]):
                        if r != q:
                            p *= t[chk_edges[r]]
                    if p > 1.0 - 1e-15:
                        p = 1.0 - 1e-15
                    elif p < -1.0 + 1e-15:
                        p = -1.0 + 1e-15
                    c2v[e] = 2.0 * np.arctanh(p)
            for j in range(n):
                tot = llr[b, j]
                for q in range(var_ptr[j], var_ptr[j + 1]):
                    tot += c2v[var_edges[q]]
                for q in range(var_ptr[j], var_ptr[j + 1]):
                    e = var_edges[q]
                    v2c[e] = tot - c2v[e]
                hard[b, j] = 1 if tot < 0 else 0
            it += 1
        used[b] = it
    return hard, ok, used
