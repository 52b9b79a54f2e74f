"""Compiled hot path of the per-subframe detector.

One fused pass per subcarrier: linear comb interpolation, Gram matrix with
diagonal loading, Cholesky solve for every data symbol. Semantics are pinned
to the pure-numpy reference path in server.SubframeProcessor by equivalence
tests; this module only exists to hit the per-subframe latency budget.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def detect_subframe(hc, yd, noise_var, x_out, bad_out):  # pragma: no cover - timed path
    """hc: (slots, M, K, P) comb LS estimates; yd: (slots, M, T, N) data
    symbols; x_out: (slots, N, K, T) equalized; bad_out: (slots, N) uint8
    flags for subcarriers whose detection matrix was singular to working
    precision (their outputs are zeroed)."""
    slots, M, K, P = hc.shape
    T = yd.shape[2]
    N = K * P
    h = np.empty((M, K), dtype=np.complex128)
    a = np.empty((K, K), dtype=np.complex128)
    rhs = np.empty((K, T), dtype=np.complex128)
    for s in range(slots):
        for n in range(N):
            # per-user linear interpolation with edge hold
            for k in range(K):
                t = (n - k) / K
                if t <= 0.0:
                    for m in range(M):
                        h[m, k] = hc[s, m, k, 0]
                elif t >= P - 1:
                    for m in range(M):
                        h[m, k] = hc[s, m, k, P - 1]
                else:
                    j = int(t)
                    w = t - j
                    for m in range(M):
                        h[m, k] = hc[s, m, k, j] * (1.0 - w) + hc[s, m, k, j + 1] * w
            # A = H^H H + sigma^2 I, rhs = H^H y
            for k in range(K):
                for l in range(k, K):
                    acc = 0.0 + 0.0j
                    for m in range(M):
                        acc += np.conj(h[m, k]) * h[m, l]
                    a[k, l] = acc
                    if l != k:
                        a[l, k] = np.conj(acc)
                a[k, k] = a[k, k].real + noise_var
                for t_i in range(T):
                    accy = 0.0 + 0.0j
                    for m in range(M):
                        accy += np.conj(h[m, k]) * yd[s, m, t_i, n]
                    rhs[k, t_i] = accy
            # Cholesky A = L L^H, lower factor stored in a
            tol = 0.0
            for k in range(K):
                if a[k, k].real > tol:
                    tol = a[k, k].real
            tol = max(tol * 1e-10, 1e-300)
            bad = False
            for k in range(K):
                v = a[k, k].real
                for p in range(k):
                    v -= a[k, p].real ** 2 + a[k, p].imag ** 2
                if not v > tol:
                    bad = True
                    break
                d = np.sqrt(v)
                a[k, k] = d
                for i in range(k + 1, K):
                    acc2 = a[i, k]
                    for p in range(k):
                        acc2 -= a[i, p] * np.conj(a[k, p])
                    a[i, k] = acc2 / d
            if bad:
                bad_out[s, n] = 1
                for k in range(K):
                    for t_i in range(T):
                        x_out[s, n, k, t_i] = 0.0
                continue
            bad_out[s, n] = 0
            for t_i in range(T):
                for i in range(K):  # forward: L z = rhs
                    acc3 = rhs[i, t_i]
                    for p in range(i):
                        acc3 -= a[i, p] * x_out[s, n, p, t_i]
                    x_out[s, n, i, t_i] = acc3 / a[i, i].real
                for i in range(K - 1, -1, -1):  # backward: L^H x = z
                    acc4 = x_out[s, n, i, t_i]
                    for p in range(i + 1, K):
                        acc4 -= np.conj(a[p, i]) * x_out[s, n, p, t_i]
                    x_out[s, n, i, t_i] = acc4 / a[i, i].real
