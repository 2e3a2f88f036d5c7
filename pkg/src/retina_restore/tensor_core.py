"""Depthwise 2-D convolution, ReLU and addition with their backward passes.

Images and activation maps are plain ``(height, width, 3)`` numpy arrays in
row-major (row, column, channel) order. Every op is dtype-preserving: the
training path runs float32, the gradient checker reruns the same code in
float64.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeMismatchError

CHANNELS = 3


def check_map(arr, name="input"):
    """Validate an activation map: 3-D, 3 channels, finite."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != CHANNELS or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"{name} must be (height, width, {CHANNELS})",
                                 ("H", "W", CHANNELS), arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_image(arr, name="image"):
    """Like :func:`check_map`, and additionally require values in [0, 1]."""
    arr = check_map(arr, name)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]; got [{arr.min()}, {arr.max()}]")
    return arr


@dataclass(frozen=True)
class DepthwiseKernel:
    """One k x k filter plane and one bias per channel (depth multiplier 1)."""

    weights: np.ndarray  # (3, k, k)
    bias: np.ndarray  # (3,)

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 3 or w.shape[0] != CHANNELS or w.shape[1] != w.shape[2]:
            raise ShapeMismatchError("kernel weights", (CHANNELS, "k", "k"), w.shape)
        if w.shape[1] % 2 != 1:
            raise ShapeMismatchError("kernel size must be odd", (CHANNELS, "2m+1", "2m+1"), w.shape)
        if b.shape != (CHANNELS,):
            raise ShapeMismatchError("kernel bias", (CHANNELS,), b.shape)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("kernel contains non-finite values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def size(self):
        return self.weights.shape[1]

    @property
    def dtype(self):
        return self.weights.dtype

    @classmethod
    def from_plane(cls, plane, dtype=np.float32):
        """Replicate one k x k plane into every channel, zero bias."""
        plane = np.asarray(plane, dtype=dtype)
        return cls(np.repeat(plane[None], CHANNELS, axis=0), np.zeros(CHANNELS, dtype=dtype))

    @classmethod
    def delta(cls, size, dtype=np.float32):
        plane = np.zeros((size, size), dtype=dtype)
        plane[size // 2, size // 2] = 1
        return cls.from_plane(plane, dtype)

    @classmethod
    def zeros(cls, size, dtype=np.float32):
        return cls.from_plane(np.zeros((size, size)), dtype)

    def astype(self, dtype):
        return DepthwiseKernel(self.weights.astype(dtype), self.bias.astype(dtype))

    def num_params(self):
        return self.weights.size + self.bias.size


def _pad(arr, k):
    r = k // 2
    return np.pad(arr, ((r, r), (r, r), (0, 0)))


def _check_kernel_input(input, kernel):
    input = np.asarray(input)
    if input.ndim != 3 or input.shape[2] != kernel.weights.shape[0]:
        raise ShapeMismatchError(
            f"depthwise conv: input {input.shape} vs kernel {kernel.weights.shape}",
            ("H", "W", kernel.weights.shape[0]), input.shape)
    return input


def depthwise_conv2d(input, kernel):
    """Same-padded (zero fill), stride-1 depthwise correlation plus bias."""
    input = _check_kernel_input(input, kernel)
    w = kernel.weights.astype(input.dtype, copy=False)
    b = kernel.bias.astype(input.dtype, copy=False)
    return _kernels.conv_forward(_pad(input, kernel.size), w, b)


def depthwise_conv2d_backward(input, kernel, grad_output, need_input_grad=True):
    """Gradients of :func:`depthwise_conv2d` w.r.t. input, weights and bias.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false. All three come back in the input dtype.
    """
    input = _check_kernel_input(input, kernel)
    grad_output = np.asarray(grad_output)
    if grad_output.shape != input.shape:
        raise ShapeMismatchError("conv grad_output", input.shape, grad_output.shape)
    dtype = input.dtype
    k = kernel.size
    r = k // 2
    gxp, gw, gb = _kernels.conv_backward(
        _pad(input, k), kernel.weights.astype(dtype, copy=False), grad_output, need_input_grad)
    grad_input = None
    if need_input_grad:
        grad_input = gxp[r:r + input.shape[0], r:r + input.shape[1], :].astype(dtype)
    return grad_input, gw.astype(dtype), gb.astype(dtype)


def relu(input):
    return np.maximum(input, 0)


def relu_backward(input, grad_output):
    # subgradient at exactly 0 is 0
    input = np.asarray(input)
    grad_output = np.asarray(grad_output)
    if input.shape != grad_output.shape:
        raise ShapeMismatchError("relu grad_output", input.shape, grad_output.shape)
    return np.where(input > 0, grad_output, np.zeros((), dtype=grad_output.dtype))


def add(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("add", a.shape, b.shape)
    return a + b
