"""Sequential state-space scan kernels.

The recurrence is strictly left-to-right along the scan axis:

    h_t = exp(delta_t * a) * h_{t-1} + (delta_t * b_t) * x_t
    y_t = <c_t, h_t> + d * x_t

per channel, with a diagonal state of size N.  Shapes (K directions
batched together):

    x, delta : (K, L, C)      b, c : (K, L, N)
    a        : (K, C, N)      d    : (K, C)

The numba kernels are plain loop nests so the float operation order is
identical to the naive oracle; the numpy fallback (used when numba is
unavailable) matches it per time step.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _fwd_kernel(x, delta, b, c, a, d, y, h):
    K, L, C = x.shape
    N = b.shape[2]
    for k in range(K):
        for t in range(L):
            for ch in range(C):
                dt = delta[k, t, ch]
                xv = x[k, t, ch]
                acc = 0.0
                for n in range(N):
                    prev = h[k, t - 1, ch, n] if t > 0 else 0.0
                    hv = np.exp(dt * a[k, ch, n]) * prev + dt * xv * b[k, t, n]
                    h[k, t, ch, n] = hv
                    acc += c[k, t, n] * hv
                y[k, t, ch] = acc + d[k, ch] * xv


@njit(cache=True)
def _bwd_kernel(x, delta, b, c, a, d, h, gy, gx, gdelta, gb, gc, ga, gd, carry):
    K, L, C = x.shape
    N = b.shape[2]
    for k in range(K):
        carry[:] = 0.0
        for t in range(L - 1, -1, -1):
            for ch in range(C):
                dt = delta[k, t, ch]
                xv = x[k, t, ch]
                gyt = gy[k, t, ch]
                gd[k, ch] += gyt * xv
                gx_acc = gyt * d[k, ch]
                gdt_acc = 0.0
                for n in range(N):
                    gh = carry[ch, n] + gyt * c[k, t, n]
                    gc[k, t, n] += gyt * h[k, t, ch, n]
                    prev = h[k, t - 1, ch, n] if t > 0 else 0.0
                    da = np.exp(dt * a[k, ch, n])
                    gdt_acc += gh * (xv * b[k, t, n] + prev * da * a[k, ch, n])
                    gx_acc += gh * dt * b[k, t, n]
                    gb[k, t, n] += gh * dt * xv
                    ga[k, ch, n] += gh * prev * da * dt
                    carry[ch, n] = gh * da
                gx[k, t, ch] = gx_acc
                gdelta[k, t, ch] = gdt_acc


def _fwd_numpy(x, delta, b, c, a, d, y, h):
    K, L, C = x.shape
    state = np.zeros((K, C, b.shape[2]), dtype=x.dtype)
    for t in range(L):
        da = np.exp(delta[:, t, :, None] * a)                      # (K,C,N)
        u = (delta[:, t] * x[:, t])[:, :, None] * b[:, t, None, :]  # (K,C,N)
        state = da * state + u
        h[:, t] = state
        y[:, t] = np.einsum("kcn,kn->kc", state, c[:, t]) + d * x[:, t]


def _bwd_numpy(x, delta, b, c, a, d, h, gy, gx, gdelta, gb, gc, ga, gd, carry):
    K, L, C = x.shape
    N = b.shape[2]
    carry3 = np.zeros((K, C, N), dtype=x.dtype)
    np.einsum("klc,klc->kc", gy, x, out=gd)
    for t in range(L - 1, -1, -1):
        gh = carry3 + gy[:, t, :, None] * c[:, t, None, :]          # (K,C,N)
        gc[:, t] = np.einsum("kcn,kc->kn", h[:, t], gy[:, t])
        prev = h[:, t - 1] if t > 0 else np.zeros_like(gh)
        da = np.exp(delta[:, t, :, None] * a)
        gdelta[:, t] = np.einsum("kcn,kcn->kc", gh, x[:, t, :, None] * b[:, t, None, :] + prev * da * a)
        gx[:, t] = gy[:, t] * d + np.einsum("kcn,kn->kc", gh, b[:, t]) * delta[:, t]
        gb[:, t] = np.einsum("kcn,kc->kn", gh, delta[:, t] * x[:, t])
        ga += gh * prev * da * delta[:, t, :, None]
        carry3 = gh * da


def scan_forward(x, delta, b, c, a, d):
    """Run the recurrence; returns (y, h) with h kept for the backward pass."""
    K, L, C = x.shape
    N = b.shape[2]
    y = np.empty((K, L, C), dtype=x.dtype)
    h = np.empty((K, L, C, N), dtype=x.dtype)
    if _HAVE_NUMBA:
        _fwd_kernel(x, delta, b, c, a, d, y, h)
    else:
        _fwd_numpy(x, delta, b, c, a, d, y, h)
    return y, h


def scan_backward(x, delta, b, c, a, d, h, gy):
    K, L, C = x.shape
    N = b.shape[2]
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    ga = np.zeros_like(a)
    gd = np.zeros_like(d)
    carry = np.zeros((C, N), dtype=x.dtype)
    if _HAVE_NUMBA:
        _bwd_kernel(x, delta, b, c, a, d, h, gy, gx, gdelta, gb, gc, ga, gd, carry)
    else:
        _bwd_numpy(x, delta, b, c, a, d, h, gy, gx, gdelta, gb, gc, ga, gd, carry)
    return gx, gdelta, gb, gc, ga, gd
