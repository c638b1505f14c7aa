"""Hot loops with a numba path and a pure-numpy fallback.

Set ``EDDPC_USE_NUMBA=0`` before import to force the numpy path. If numba
is not importable the numpy path is used regardless.
"""
import os

import numpy as np

USE_NUMBA = os.environ.get("EDDPC_USE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "")

try:
    if USE_NUMBA:
        from numba import njit
    else:
        njit = None
except ImportError:  # pragma: no cover
    njit = None

NUMBA_ACTIVE = njit is not None


def _hankel_np(data, depth):
    # data: (T, q) -> (q*depth, T-depth+1), column j is data[j:j+depth].ravel()
    T, q = data.shape
    windows = np.lib.stride_tricks.sliding_window_view(data, depth, axis=0)
    # windows: (T-depth+1, q, depth) -> want rows ordered (time, var)
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(depth * q, T - depth + 1))


def _hankel_average_np(H, q, depth):
    rows, cols = H.shape
    T = cols + depth - 1
    blocks = H.reshape(depth, q, cols)
    total = np.zeros((T, q))
    for i in range(depth):
        total[i:i + cols] += blocks[i].T
    counts = np.minimum.reduce([np.arange(1, T + 1), np.full(T, depth), np.full(T, cols),
                                np.arange(T, 0, -1)])
    return total / counts[:, None]


def _simulate_np(A, B, C, D, x0, U):
    N = U.shape[0]
    X = np.empty((N + 1, A.shape[0]))
    Y = np.empty((N, C.shape[0]))
    X[0] = x0
    for k in range(N):
        Y[k] = C @ X[k] + D @ U[k]
        X[k + 1] = A @ X[k] + B @ U[k]
    return X, Y


if NUMBA_ACTIVE:

    @njit(cache=True)
    def _hankel_nb(data, depth):
        T, q = data.shape
        cols = T - depth + 1
        out = np.empty((depth * q, cols))
        for j in range(cols):
            for i in range(depth):
                for v in range(q):
                    out[i * q + v, j] = data[j + i, v]
        return out

    @njit(cache=True)
    def _hankel_average_nb(H, q, depth):
        cols = H.shape[1]
        T = cols + depth - 1
        total = np.zeros((T, q))
        counts = np.zeros(T)
        for i in range(depth):
            for j in range(cols):
                counts[i + j] += 1.0
                for v in range(q):
                    total[i + j, v] += H[i * q + v, j]
        for t in range(T):
            for v in range(q):
                total[t, v] /= counts[t]
        return total

    @njit(cache=True)
    def _simulate_nb(A, B, C, D, x0, U):
        N = U.shape[0]
        n = A.shape[0]
        p = C.shape[0]
        m = B.shape[1]
        X = np.empty((N + 1, n))
        Y = np.empty((N, p))
        X[0] = x0
        for k in range(N):
            for i in range(p):
                acc = 0.0
                for j in range(n):
                    acc += C[i, j] * X[k, j]
                for j in range(m):
                    acc += D[i, j] * U[k, j]
                Y[k, i] = acc
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += A[i, j] * X[k, j]
                for j in range(m):
                    acc += B[i, j] * U[k, j]
                X[k + 1, i] = acc
        return X, Y


def hankel(data, depth):
    data = np.ascontiguousarray(data, dtype=float)
    if NUMBA_ACTIVE:
        return _hankel_nb(data, int(depth))
    return _hankel_np(data, int(depth))


def hankel_average(H, q, depth):
    """Average block-Hankel entries sharing a time sample; returns (T, q)."""
    H = np.ascontiguousarray(H, dtype=float)
    if NUMBA_ACTIVE:
        return _hankel_average_nb(H, int(q), int(depth))
    return _hankel_average_np(H, int(q), int(depth))


def simulate(A, B, C, D, x0, U):
    """Propagate x+ = Ax + Bu, y = Cx + Du. Returns states (N+1, n) and outputs (N, p)."""
    args = [np.ascontiguousarray(a, dtype=float) for a in (A, B, C, D, x0, U)]
    if NUMBA_ACTIVE:
        return _simulate_nb(*args)
    return _simulate_np(*args)
