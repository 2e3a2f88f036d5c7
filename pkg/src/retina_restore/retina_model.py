"""Retina pipeline: horizontal-cell stage ``g`` and bipolar-cell stage ``f``.

Trained network (both convolutions followed by ReLU)::

    h = relu(conv(I, g))      horizontal-cell response
    b = I + h                 residual modulation
    u = relu(conv(b, f))      bipolar double-opponent response
    v = I + u                 direct photoreceptor path to ganglion cells

The classic variants skip the activations and replace the residual
modulation with a divisive ``I / (alpha + h)`` or affine
``alpha * I + beta * I * h`` form.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError, NumericalInstabilityError, ShapeMismatchError
from .tensor_core import DepthwiseKernel, add, check_image, depthwise_conv2d, relu

G_SIZE = 3
F_SIZE = 5
DOG_SIGMA_CENTER = 0.5
DOG_SIGMA_SURROUND = 5.0
DEFAULT_SIGMA_G = 1.0
EXPECTED_PARAM_COUNT = 108
DIVISIVE_GUARD = 1e-6


def _check_kernel_args(size, *sigmas):
    if int(size) != size or size < 1 or size % 2 != 1:
        raise KernelError(f"kernel size must be a positive odd integer, got {size!r}")
    for s in sigmas:
        if not (np.isfinite(s) and s > 0):
            raise KernelError(f"sigma must be positive and finite, got {s!r}")


def gaussian_kernel(size, sigma):
    """Sampled isotropic Gaussian on integer offsets, normalised to unit sum."""
    _check_kernel_args(size, sigma)
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    d2 = r[:, None] ** 2 + r[None, :] ** 2
    k = np.exp(-d2 / (2.0 * sigma * sigma))
    return k / k.sum()


def dog_kernel(size, sigma1, sigma2):
    """Difference of two unit-sum Gaussians (centre ``sigma1`` minus surround ``sigma2``).

    >>> np.round(dog_kernel(5, 0.5, 5)[2, 2], 4)
    0.5754
    """
    _check_kernel_args(size, sigma1, sigma2)
    return gaussian_kernel(size, sigma1) - gaussian_kernel(size, sigma2)


@dataclass(frozen=True)
class ModelParams:
    g: DepthwiseKernel
    f: DepthwiseKernel

    def __post_init__(self):
        if self.g.size != G_SIZE or self.f.size != F_SIZE:
            raise ShapeMismatchError("model kernels (g, f)", (G_SIZE, F_SIZE),
                                     (self.g.size, self.f.size))

    def astype(self, dtype):
        return ModelParams(self.g.astype(dtype), self.f.astype(dtype))

    def flatten(self):
        """All 108 scalars in canonical order: g.weights, g.bias, f.weights, f.bias."""
        return np.concatenate([self.g.weights.ravel(), self.g.bias.ravel(),
                               self.f.weights.ravel(), self.f.bias.ravel()])

    @classmethod
    def from_flat(cls, flat, dtype=np.float32):
        flat = np.asarray(flat, dtype=dtype)
        if flat.shape != (EXPECTED_PARAM_COUNT,):
            raise ShapeMismatchError("flat parameter vector", (EXPECTED_PARAM_COUNT,), flat.shape)
        ng = 3 * G_SIZE * G_SIZE
        nf = 3 * F_SIZE * F_SIZE
        g = DepthwiseKernel(flat[:ng].reshape(3, G_SIZE, G_SIZE).copy(), flat[ng:ng + 3].copy())
        o = ng + 3
        f = DepthwiseKernel(flat[o:o + nf].reshape(3, F_SIZE, F_SIZE).copy(),
                            flat[o + nf:o + nf + 3].copy())
        return cls(g, f)

    @staticmethod
    def names():
        """Human-readable name for each entry of :meth:`flatten`."""
        out = []
        for stage, k in (("g", G_SIZE), ("f", F_SIZE)):
            out += [f"{stage}.weights[{c},{i},{j}]"
                    for c in range(3) for i in range(k) for j in range(k)]
            out += [f"{stage}.bias[{c}]" for c in range(3)]
        return out


def param_count(params):
    return params.g.num_params() + params.f.num_params()


def init_params(seed=0, sigma_g=DEFAULT_SIGMA_G, dtype=np.float32):
    """DoG-initialised ``f`` and Gaussian-initialised ``g``, all biases zero.

    The seed is accepted for bookkeeping only; the default initialisation is
    deterministic.
    """
    del seed
    g = DepthwiseKernel.from_plane(gaussian_kernel(G_SIZE, sigma_g), dtype)
    f = DepthwiseKernel.from_plane(
        dog_kernel(F_SIZE, DOG_SIGMA_CENTER, DOG_SIGMA_SURROUND), dtype)
    return ModelParams(g, f)


def zero_params(dtype=np.float32):
    """All-zero parameters: the network becomes an exact identity."""
    return ModelParams(DepthwiseKernel.zeros(G_SIZE, dtype), DepthwiseKernel.zeros(F_SIZE, dtype))


@dataclass(frozen=True)
class ForwardCache:
    input: np.ndarray
    g_pre: np.ndarray
    h: np.ndarray
    b: np.ndarray
    f_pre: np.ndarray
    u: np.ndarray
    v: np.ndarray


def forward(params, input, validate=True):
    """Run the trained network. Returns the unclamped output and the cache."""
    if validate:
        input = check_image(input)
    g_pre = depthwise_conv2d(input, params.g)
    h = relu(g_pre)
    b = add(input, h)
    f_pre = depthwise_conv2d(b, params.f)
    u = relu(f_pre)
    v = add(input, u)
    return v, ForwardCache(input, g_pre, h, b, f_pre, u, v)


def restore(params, input):
    """Forward pass clamped to [0, 1], ready for encoding or scoring."""
    v, _ = forward(params, input)
    return np.clip(v, 0.0, 1.0)


# --------------------------------------------------------------------------
# classic (forward-only) variants
# --------------------------------------------------------------------------

MODULATIONS = ("divisive", "affine", "residual")
OUTPUT_FORMS = ("non_residual", "residual")


@dataclass(frozen=True)
class ClassicVariantConfig:
    """Forward-only retina variant.

    ``mode`` selects the horizontal-cell modulation (``divisive``,
    ``affine`` or plain ``residual``); ``output_form`` selects whether the
    bipolar stage adds the input back (``residual``) or not.
    """

    mode: str = "affine"
    alpha: float = 1.0
    beta: float = 1.0
    output_form: str = "non_residual"
    g_kernel: DepthwiseKernel = field(
        default_factory=lambda: DepthwiseKernel.from_plane(gaussian_kernel(G_SIZE, DEFAULT_SIGMA_G)))
    f_kernel: DepthwiseKernel = field(
        default_factory=lambda: DepthwiseKernel.from_plane(
            dog_kernel(F_SIZE, DOG_SIGMA_CENTER, DOG_SIGMA_SURROUND)))

    def __post_init__(self):
        if self.mode not in MODULATIONS:
            raise ValueError(f"mode must be one of {MODULATIONS}, got {self.mode!r}")
        if self.output_form not in OUTPUT_FORMS:
            raise ValueError(f"output_form must be one of {OUTPUT_FORMS}, got {self.output_form!r}")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")


def modulate(config, input, h):
    """Horizontal-cell modulation ``b`` from input and HC response ``h``."""
    if config.mode == "divisive":
        denom = config.alpha + h
        bad = np.abs(denom) < DIVISIVE_GUARD
        if bad.any():
            raise NumericalInstabilityError(np.count_nonzero(bad), DIVISIVE_GUARD)
        return input / denom
    if config.mode == "affine":
        return config.alpha * input + config.beta * input * h
    return input + h


def forward_classic(config, input):
    input = check_image(input)
    h = depthwise_conv2d(input, config.g_kernel)
    b = modulate(config, input, h)
    v = depthwise_conv2d(b, config.f_kernel)
    if config.output_form == "residual":
        v = add(input, v)
    return v
