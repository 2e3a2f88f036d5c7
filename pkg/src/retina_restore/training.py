"""Loss, backprop through both residual stages, optimizers, training loop, checkpoints."""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import (
    CheckpointVersionError,
    CorruptCheckpointError,
    DatasetError,
    NonFiniteError,
    ParamCountError,
    ShapeMismatchError,
)
from .retina_model import (
    EXPECTED_PARAM_COUNT,
    F_SIZE,
    G_SIZE,
    ForwardCache,
    ModelParams,
    forward,
)
from .tensor_core import DepthwiseKernel, depthwise_conv2d_backward, relu_backward

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "retina-restore-checkpoint"
CHECKPOINT_VERSION = 1

LOSSES = ("mse",)
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.001
    batch_size: int = 8
    seed: int = 0
    loss: str = "mse"
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_epsilon > 0):
            raise ValueError("adam betas must lie in [0, 1) and epsilon must be > 0")


# --------------------------------------------------------------------------
# loss and gradients
# --------------------------------------------------------------------------


def mse_loss(prediction, target):
    """Mean squared error over all H*W*C entries and its gradient w.r.t. prediction."""
    prediction = np.asarray(prediction)
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise ShapeMismatchError("mse_loss", target.shape, prediction.shape)
    diff = prediction.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(prediction.dtype)


@dataclass(frozen=True)
class GradientSet:
    g_weights: np.ndarray
    g_bias: np.ndarray
    f_weights: np.ndarray
    f_bias: np.ndarray

    def flatten(self):
        return np.concatenate([self.g_weights.ravel(), self.g_bias.ravel(),
                               self.f_weights.ravel(), self.f_bias.ravel()])

    @classmethod
    def from_flat(cls, flat):
        flat = np.asarray(flat)
        if flat.shape != (EXPECTED_PARAM_COUNT,):
            raise ShapeMismatchError("flat gradient vector", (EXPECTED_PARAM_COUNT,), flat.shape)
        ng, nf = 3 * G_SIZE * G_SIZE, 3 * F_SIZE * F_SIZE
        return cls(flat[:ng].reshape(3, G_SIZE, G_SIZE), flat[ng:ng + 3],
                   flat[ng + 3:ng + 3 + nf].reshape(3, F_SIZE, F_SIZE), flat[ng + 3 + nf:])


def backward(params, cache: ForwardCache, grad_v):
    """Chain rule from d(loss)/dv back to all 108 parameters."""
    grad_v = np.asarray(grad_v)
    if grad_v.shape != cache.v.shape:
        raise ShapeMismatchError("backward grad_v", cache.v.shape, grad_v.shape)
    # v = I + u: the identity branch feeds only the (constant) input.
    grad_f_pre = relu_backward(cache.f_pre, grad_v)
    grad_b, gw_f, gb_f = depthwise_conv2d_backward(cache.b, params.f, grad_f_pre)
    # b = I + h: again only h carries parameters.
    grad_g_pre = relu_backward(cache.g_pre, grad_b)
    _, gw_g, gb_g = depthwise_conv2d_backward(cache.input, params.g, grad_g_pre,
                                              need_input_grad=False)
    return GradientSet(gw_g, gb_g, gw_f, gb_f)


def loss_and_grad(params, low, high):
    v, cache = forward(params, low)
    loss, grad_v = mse_loss(v, high)
    return loss, backward(params, cache, grad_v)


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: np.ndarray = field(default_factory=lambda: np.zeros(EXPECTED_PARAM_COUNT))
    v: np.ndarray = field(default_factory=lambda: np.zeros(EXPECTED_PARAM_COUNT))
    step: int = 0


def _check_finite_grads(flat):
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        name = ModelParams.names()[bad[0]]
        raise NonFiniteError(f"non-finite gradient for {name} ({bad.size} entries affected)", name)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Moments live in float64; parameters keep their own dtype.
    """
    g = grads.flatten().astype(np.float64)
    _check_finite_grads(g)
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    p = params.flatten()
    new_p = p.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return ModelParams.from_flat(new_p, dtype=p.dtype), OptimizerState(m, v, t)


def sgd_step(params, grads, state, lr):
    g = grads.flatten().astype(np.float64)
    _check_finite_grads(g)
    p = params.flatten()
    new_p = p.astype(np.float64) - lr * g
    return ModelParams.from_flat(new_p, dtype=p.dtype), OptimizerState(state.m, state.v, state.step + 1)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    epochs_completed: int = 0
    final_loss: float = float("nan")
    epoch_losses: list = field(default_factory=list)
    dataset: str = ""
    init: str = "dog"
    wall_clock_seconds: float | None = None
    version: int = CHECKPOINT_VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        a, b = self.params.flatten(), other.params.flatten()
        return (a.dtype == b.dtype and np.array_equal(a.view(np.uint8), b.view(np.uint8))
                and self.config == other.config
                and self.epochs_completed == other.epochs_completed
                and _same_float(self.final_loss, other.final_loss)
                and len(self.epoch_losses) == len(other.epoch_losses)
                and all(_same_float(x, y) for x, y in zip(self.epoch_losses, other.epoch_losses))
                and self.dataset == other.dataset and self.init == other.init
                and _same_float(self.wall_clock_seconds, other.wall_clock_seconds)
                and self.version == other.version)


def _same_float(a, b):
    if a is None or b is None:
        return a is b
    return a == b or (math.isnan(a) and math.isnan(b))


def epoch_order(n, seed, epoch):
    """Shuffled pair order for one epoch; depends only on (seed, epoch)."""
    rng = np.random.default_rng([int(seed), int(epoch)])
    return rng.permutation(n)


def train(dataset, config, init, on_epoch=None, threads=1, record_wall_clock=False,
          init_name="dog"):
    """Mini-batch training. Returns a :class:`Checkpoint`.

    ``on_epoch(epoch, mean_loss)`` is called after every epoch (1-based).
    Per-image work may run on ``threads`` workers; the gradient reduction is
    always a fixed-order sum, so results do not depend on the thread count.
    """
    n = len(dataset)
    if n == 0:
        raise DatasetError("training dataset is empty")
    started = time.perf_counter()
    params = init
    state = OptimizerState()
    epoch_losses = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def work(i):
        low, high = dataset.pair(i)
        if low.shape != high.shape:
            raise ShapeMismatchError(f"pair {dataset.ids[i]!r} (low vs high)", high.shape, low.shape)
        return loss_and_grad(params, low, high)

    try:
        for epoch in range(1, config.epochs + 1):
            order = epoch_order(n, config.seed, epoch)
            losses = []
            for start in range(0, n, config.batch_size):
                batch = order[start:start + config.batch_size]
                results = list(pool.map(work, batch)) if pool else [work(i) for i in batch]
                total = np.zeros(EXPECTED_PARAM_COUNT)
                for i, (loss, grads) in zip(batch, results):
                    if not math.isfinite(loss):
                        raise NonFiniteError(f"non-finite loss on {dataset.ids[i]!r} in epoch {epoch}")
                    losses.append(loss)
                    total += grads.flatten().astype(np.float64)
                mean_grad = GradientSet.from_flat(total / len(batch))
                if config.optimizer == "adam":
                    params, state = adam_step(params, mean_grad, state, config.learning_rate,
                                              config.adam_beta1, config.adam_beta2,
                                              config.adam_epsilon)
                else:
                    params, state = sgd_step(params, mean_grad, state, config.learning_rate)
            epoch_loss = float(np.mean(losses))
            epoch_losses.append(epoch_loss)
            logger.debug("epoch %d loss %r", epoch, epoch_loss)
            if on_epoch is not None:
                on_epoch(epoch, epoch_loss)
    finally:
        if pool:
            pool.shutdown()

    return Checkpoint(
        params=params,
        config=config,
        epochs_completed=config.epochs,
        final_loss=epoch_losses[-1],
        epoch_losses=epoch_losses,
        dataset=getattr(dataset, "identifier", ""),
        init=init_name,
        wall_clock_seconds=(time.perf_counter() - started) if record_wall_clock else None,
    )


# --------------------------------------------------------------------------
# checkpoint file
# --------------------------------------------------------------------------


def _kernel_to_json(k):
    return {
        "size": int(k.size),
        "weights": k.weights.astype(np.float64).tolist(),
        "bias": k.bias.astype(np.float64).tolist(),
    }


def checkpoint_to_dict(ckpt):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": ckpt.version,
        "param_count": EXPECTED_PARAM_COUNT,
        "dtype": str(ckpt.params.g.weights.dtype),
        "config": asdict(ckpt.config),
        "metadata": {
            "init": ckpt.init,
            "dataset": ckpt.dataset,
            "epochs_completed": ckpt.epochs_completed,
            "final_loss": ckpt.final_loss,
            "epoch_losses": list(ckpt.epoch_losses),
            "wall_clock_seconds": ckpt.wall_clock_seconds,
        },
        "params": {"g": _kernel_to_json(ckpt.params.g), "f": _kernel_to_json(ckpt.params.f)},
    }


def save_checkpoint(ckpt, path):
    text = json.dumps(checkpoint_to_dict(ckpt), indent=2, allow_nan=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _count_scalars(node):
    if isinstance(node, list):
        return sum(_count_scalars(x) for x in node)
    return 1


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: not a valid checkpoint document ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: not a text file") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError(f"{path}: missing or wrong 'format' field")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported checkpoint version {doc.get('version')!r} "
            f"(this build reads version {CHECKPOINT_VERSION})")
    try:
        p = doc["params"]
        counted = sum(_count_scalars(p[s][key]) for s in ("g", "f") for key in ("weights", "bias"))
        if counted != EXPECTED_PARAM_COUNT:
            raise ParamCountError(EXPECTED_PARAM_COUNT, counted)
        dtype = np.dtype(doc.get("dtype", "float32"))
        kernels = {}
        for s in ("g", "f"):
            w = np.array(p[s]["weights"], dtype=np.float64)
            b = np.array(p[s]["bias"], dtype=np.float64)
            kernels[s] = DepthwiseKernel(w.astype(dtype), b.astype(dtype))
        params = ModelParams(kernels["g"], kernels["f"])
        cfg_doc = doc["config"]
        known = {f.name for f in fields(TrainConfig)}
        config = TrainConfig(**{k: v for k, v in cfg_doc.items() if k in known})
        meta = doc["metadata"]
        return Checkpoint(
            params=params,
            config=config,
            epochs_completed=int(meta["epochs_completed"]),
            final_loss=float(meta["final_loss"]),
            epoch_losses=[float(x) for x in meta["epoch_losses"]],
            dataset=str(meta["dataset"]),
            init=str(meta["init"]),
            wall_clock_seconds=(None if meta.get("wall_clock_seconds") is None
                                else float(meta["wall_clock_seconds"])),
            version=doc["version"],
        )
    except ParamCountError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
