"""Hot loops for the depthwise convolution, in two interchangeable flavours.

Both backends take an already zero-padded ``(H + k - 1, W + k - 1, C)`` input,
accumulate in float64 and hand results back in the caller's dtype. Tap order
is identical (row-major over the kernel, bias added last), so the forward
pass is bit-identical across backends; the weight-gradient reductions only
differ in summation order.

The numba path is used when numba imports cleanly and the environment does
not set ``RETINA_RESTORE_DISABLE_NUMBA`` to a truthy value.
"""

import os
from contextlib import contextmanager

import numpy as np

_DISABLE_ENV = "RETINA_RESTORE_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_DISABLE_ENV, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


# --------------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------------


def conv_forward_numpy(xp, w, b):
    c, k, _ = w.shape
    h = xp.shape[0] - k + 1
    wd = xp.shape[1] - k + 1
    acc = np.zeros((h, wd, c), dtype=np.float64)
    w64 = w.astype(np.float64)
    for dy in range(k):
        for dx in range(k):
            acc += xp[dy:dy + h, dx:dx + wd, :].astype(np.float64) * w64[:, dy, dx]
    acc += b.astype(np.float64)
    return acc.astype(xp.dtype)


def conv_backward_numpy(xp, w, go, need_input=True):
    c, k, _ = w.shape
    h, wd = go.shape[0], go.shape[1]
    go64 = go.astype(np.float64)
    xp64 = xp.astype(np.float64)
    w64 = w.astype(np.float64)
    gb = go64.sum(axis=(0, 1))
    gw = np.empty((c, k, k), dtype=np.float64)
    gxp = np.zeros(xp.shape, dtype=np.float64) if need_input else None
    for dy in range(k):
        for dx in range(k):
            window = xp64[dy:dy + h, dx:dx + wd, :]
            gw[:, dy, dx] = np.einsum("yxc,yxc->c", go64, window)
            if need_input:
                gxp[dy:dy + h, dx:dx + wd, :] += go64 * w64[:, dy, dx]
    return gxp, gw, gb


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _conv_forward_jit(xp, w, b):
        c_n, k, _ = w.shape
        h = xp.shape[0] - k + 1
        wd = xp.shape[1] - k + 1
        out = np.empty((h, wd, c_n), dtype=np.float64)
        for y in range(h):
            for x in range(wd):
                for c in range(c_n):
                    acc = 0.0
                    for dy in range(k):
                        for dx in range(k):
                            acc += np.float64(xp[y + dy, x + dx, c]) * np.float64(w[c, dy, dx])
                    out[y, x, c] = acc + np.float64(b[c])
        return out

    @numba.njit(cache=True, nogil=True)
    def _conv_backward_jit(xp, w, go, need_input):
        c_n, k, _ = w.shape
        h, wd = go.shape[0], go.shape[1]
        gw = np.zeros((c_n, k, k), dtype=np.float64)
        gb = np.zeros(c_n, dtype=np.float64)
        if need_input:
            gxp = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=np.float64)
        else:
            gxp = np.zeros((0, 0, 0), dtype=np.float64)
        for y in range(h):
            for x in range(wd):
                for c in range(c_n):
                    g = np.float64(go[y, x, c])
                    if g == 0.0:
                        continue
                    gb[c] += g
                    for dy in range(k):
                        for dx in range(k):
                            gw[c, dy, dx] += g * np.float64(xp[y + dy, x + dx, c])
                            if need_input:
                                gxp[y + dy, x + dx, c] += g * np.float64(w[c, dy, dx])
        return gxp, gw, gb

    def conv_forward_numba(xp, w, b):
        return _conv_forward_jit(xp, w, b).astype(xp.dtype)

    def conv_backward_numba(xp, w, go, need_input=True):
        gxp, gw, gb = _conv_backward_jit(xp, w, go, need_input)
        return (gxp if need_input else None), gw, gb

else:  # pragma: no cover
    conv_forward_numba = conv_backward_numba = None


BACKENDS = {"numpy": (conv_forward_numpy, conv_backward_numpy)}
if HAVE_NUMBA:
    BACKENDS["numba"] = (conv_forward_numba, conv_backward_numba)

_active = "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def active_backend():
    return _active


def set_backend(name):
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}")
    _active = name


@contextmanager
def use_backend(name):
    """Temporarily switch backend (tests and the benchmark)."""
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def conv_forward(xp, w, b):
    return BACKENDS[_active][0](xp, w, b)


def conv_backward(xp, w, go, need_input=True):
    return BACKENDS[_active][1](xp, w, go, need_input)
