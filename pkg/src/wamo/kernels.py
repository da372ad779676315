"""Hot inner loops: strided circular filtering and circular unfolding.

Every kernel exists twice, a numba-compiled loop and a numpy expression.
The public names dispatch to the compiled loop unless numba is missing or
``WAMO_DISABLE_NUMBA`` is set. All arrays are ``(batch, time, channels)``.

A "step" filter is ``y[n] = sum_k f[k] * x[(n + step*k) mod T]``. With
``step = +2**(s-1)`` this is the analysis correlation of the a-trous scheme,
with ``step = -2**(s-1)`` the synthesis convolution. The adjoint of a step
filter with respect to ``x`` is the same filter with ``-step``.
"""
import math

import numpy as np

from ._accel import HAS_NUMBA, njit

__all__ = [
    "gelu_forward",
    "gelu_backward",
    "step_filter",
    "step_filter_grad",
    "circular_unfold",
    "circular_fold",
    "HAS_NUMBA",
]


GELU_C = math.sqrt(2.0 / math.pi)


# --- numpy reference path ---------------------------------------------------

def gelu_forward(x):
    """tanh-approximate GELU; returns (out, tanh term) for the backward pass.

    Stays in numpy on both paths: its vectorized tanh beats a scalar loop.
    """
    th = x * x
    th *= 0.044715
    th += 1.0
    th *= x
    th *= GELU_C
    np.tanh(th, out=th)
    out = th + 1.0
    out *= x
    out *= 0.5
    return out, th


def gelu_backward_numpy(g, x, th):
    d = x * x
    d *= 3 * 0.044715
    d += 1.0
    d *= GELU_C
    d *= 1.0 - th * th
    d *= x
    d += 1.0 + th
    d *= 0.5
    d *= g
    return d


def step_filter_numpy(x, f, step):
    out = np.zeros_like(x)
    for k in range(f.shape[0]):
        out += f[k] * np.roll(x, -step * k, axis=1)
    return out


def step_filter_grad_numpy(gy, x, step, n_taps):
    gf = np.empty(n_taps, dtype=x.dtype)
    for k in range(n_taps):
        gf[k] = np.vdot(gy, np.roll(x, -step * k, axis=1))
    return gf


def circular_unfold_numpy(x, ksize):
    T = x.shape[1]
    pad = (ksize - 1) // 2
    idx = (np.arange(T)[:, None] + np.arange(ksize)[None, :] - pad) % T
    return x[:, idx, :]


def circular_fold_numpy(u):
    B, T, K, C = u.shape
    pad = (K - 1) // 2
    out = np.zeros((B, T, C), dtype=u.dtype)
    for k in range(K):
        out += np.roll(u[:, :, k, :], k - pad, axis=1)
    return out


# --- compiled path ----------------------------------------------------------

@njit(cache=True, fastmath=True)
def _gelu_backward_nb(g, x, th):
    out = np.empty_like(x)
    gf = g.ravel()
    xf = x.ravel()
    tf = th.ravel()
    of = out.ravel()
    for i in range(xf.size):
        v = xf[i]
        t = tf[i]
        of[i] = gf[i] * 0.5 * ((1.0 + t) + v * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * v * v))
    return out


@njit(cache=True)
def _step_filter_nb(x, f, step):
    B, T, C = x.shape
    L = f.shape[0]
    out = np.zeros_like(x)
    for b in range(B):
        for n in range(T):
            for k in range(L):
                src = (n + step * k) % T
                w = f[k]
                for c in range(C):
                    out[b, n, c] += w * x[b, src, c]
    return out


@njit(cache=True)
def _step_filter_grad_nb(gy, x, step, n_taps):
    B, T, C = x.shape
    gf = np.zeros(n_taps, dtype=x.dtype)
    for k in range(n_taps):
        acc = 0.0
        for b in range(B):
            for n in range(T):
                src = (n + step * k) % T
                for c in range(C):
                    acc += gy[b, n, c] * x[b, src, c]
        gf[k] = acc
    return gf


@njit(cache=True)
def _circular_unfold_nb(x, ksize):
    B, T, C = x.shape
    pad = (ksize - 1) // 2
    out = np.empty((B, T, ksize, C), dtype=x.dtype)
    for b in range(B):
        for n in range(T):
            for k in range(ksize):
                src = (n + k - pad) % T
                for c in range(C):
                    out[b, n, k, c] = x[b, src, c]
    return out


@njit(cache=True)
def _circular_fold_nb(u):
    B, T, K, C = u.shape
    pad = (K - 1) // 2
    out = np.zeros((B, T, C), dtype=u.dtype)
    for b in range(B):
        for n in range(T):
            for k in range(K):
                dst = (n + k - pad) % T
                for c in range(C):
                    out[b, dst, c] += u[b, n, k, c]
    return out


# --- dispatch ---------------------------------------------------------------

def _c(a):
    return np.ascontiguousarray(a)


if HAS_NUMBA:
    def gelu_backward(g, x, th):
        return _gelu_backward_nb(_c(g), _c(x), _c(th))

    def step_filter(x, f, step):
        return _step_filter_nb(_c(x), _c(f).astype(x.dtype, copy=False), int(step))

    def step_filter_grad(gy, x, step, n_taps):
        return _step_filter_grad_nb(_c(gy), _c(x), int(step), int(n_taps))

    def circular_unfold(x, ksize):
        return _circular_unfold_nb(_c(x), int(ksize))

    def circular_fold(u):
        return _circular_fold_nb(_c(u))
else:
    gelu_backward = gelu_backward_numpy
    step_filter = step_filter_numpy
    step_filter_grad = step_filter_grad_numpy
    circular_unfold = circular_unfold_numpy
    circular_fold = circular_fold_numpy
