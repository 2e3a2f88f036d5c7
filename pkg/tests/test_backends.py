import os
import subprocess
import sys

import numpy as np
import pytest

from retina_restore import _kernels
from retina_restore.retina_model import init_params
from retina_restore.training import loss_and_grad

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_forward_bit_identical_across_backends(rng):
    xp = rng.uniform(size=(14, 17, 3)).astype(np.float32)
    w = rng.normal(size=(3, 5, 5)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    np.testing.assert_array_equal(_kernels.conv_forward_numpy(xp, w, b),
                                  _kernels.conv_forward_numba(xp, w, b))


@needs_numba
def test_backward_agrees_across_backends(rng):
    xp = rng.uniform(size=(12, 9, 3))
    w = rng.normal(size=(3, 3, 3))
    go = rng.normal(size=(10, 7, 3))
    for a, b in zip(_kernels.conv_backward_numpy(xp, w, go),
                    _kernels.conv_backward_numba(xp, w, go)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
def test_jit_matches_its_python_source(rng):
    xp = rng.uniform(size=(7, 7, 3))
    w = rng.normal(size=(3, 3, 3))
    b = rng.normal(size=3)
    go = rng.normal(size=(5, 5, 3))
    np.testing.assert_allclose(_kernels._conv_forward_jit(xp, w, b),
                               _kernels._conv_forward_jit.py_func(xp, w, b), rtol=1e-13)
    for a, c in zip(_kernels._conv_backward_jit(xp, w, go, True),
                    _kernels._conv_backward_jit.py_func(xp, w, go, True)):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-13)


@needs_numba
def test_training_step_agrees_across_backends(rng):
    low = rng.uniform(0, 0.3, size=(16, 12, 3)).astype(np.float32)
    high = rng.uniform(size=(16, 12, 3)).astype(np.float32)
    p = init_params(0)
    with _kernels.use_backend("numpy"):
        la, ga = loss_and_grad(p, low, high)
    with _kernels.use_backend("numba"):
        lb, gb = loss_and_grad(p, low, high)
    assert la == lb
    np.testing.assert_allclose(ga.flatten(), gb.flatten(), rtol=1e-5, atol=1e-9)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")


@pytest.mark.parametrize("value,expected", [("1", "numpy"), ("", None)])
def test_env_flag_selects_backend(value, expected):
    env = dict(os.environ, RETINA_RESTORE_DISABLE_NUMBA=value)
    out = subprocess.run(
        [sys.executable, "-c", "from retina_restore import _kernels; print(_kernels.active_backend())"],
        env=env, capture_output=True, text=True, check=True).stdout.strip()
    if expected is None:
        expected = "numba" if _kernels.HAVE_NUMBA else "numpy"
    assert out == expected
