"""Acceptance gate: one test per exit criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. Criterion 8 needs the
LOL dataset: point ``RETINA_RESTORE_LOL_ROOT`` at a directory holding
``our485/`` and ``eval15/`` (each with ``low/`` and ``high/``).
"""

import io
import os
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import central_difference, network_gradcheck_instances, relative_error
from retina_restore import cli
from retina_restore.dataset_io import (
    decode_image,
    encode_image,
    generate_synthetic_pairs,
    load_paired_dataset,
    write_dataset,
)
from retina_restore.errors import NumericalInstabilityError
from retina_restore.metrics import evaluate_set, ssim
from retina_restore.retina_model import (
    ClassicVariantConfig,
    ModelParams,
    dog_kernel,
    forward,
    forward_classic,
    init_params,
    param_count,
    restore,
    zero_params,
)
from retina_restore.tensor_core import DepthwiseKernel
from retina_restore.training import (
    Checkpoint,
    TrainConfig,
    loss_and_grad,
    mse_loss,
    save_checkpoint,
    train,
)

PRINTED_DOG = np.array([
    [-0.0369, -0.0391, -0.0397, -0.0391, -0.0369],
    [-0.0391, -0.0303, 0.0413, -0.0303, -0.0391],
    [-0.0397, 0.0413, 0.5754, 0.0413, -0.0397],
    [-0.0391, -0.0303, 0.0413, -0.0303, -0.0391],
    [-0.0369, -0.0391, -0.0397, -0.0391, -0.0369],
])
LOL_ENV = "RETINA_RESTORE_LOL_ROOT"


@pytest.fixture
def verdict(capsys):
    def record(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return record


def test_c01_parameter_count(verdict):
    n = param_count(init_params(0))
    verdict(1, "108 learnable scalars", n == 108, f"count={n}")


def test_c02_dog_golden(verdict):
    k = dog_kernel(5, 0.5, 5)
    err = np.max(np.abs(k - PRINTED_DOG))
    total = abs(k.sum())
    verdict(2, "DoG matches printed matrix", err < 5e-5 and total < 1e-9,
            f"max|diff|={err:.2e} (<5e-5), |sum|={total:.1e} (<1e-9)")


def test_c03_gradient_fidelity(verdict):
    start = time.perf_counter()
    params, instances = network_gradcheck_instances(5, step=1e-3, size=8, seed=2024)
    worst = 0.0
    for x, t in instances:
        _, grads = loss_and_grad(params, x, t)

        def f(flat):
            return mse_loss(forward(ModelParams.from_flat(flat, np.float64), x)[0], t)[0]

        numeric = central_difference(f, params.flatten(), step=1e-3)
        worst = max(worst, relative_error(grads.flatten(), numeric).max())
    elapsed = time.perf_counter() - start
    verdict(3, "analytic vs 64-bit central differences", worst < 1e-4 and elapsed < 60,
            f"5 instances x 108 params, max rel err={worst:.2e} (<1e-4), {elapsed:.1f}s (<60s)")


def test_c04_identity(verdict, tmp_path, rng):
    x = rng.uniform(size=(13, 11, 3)).astype(np.float32)
    v, _ = forward(zero_params(), x)
    exact = np.array_equal(v, x)

    (tmp_path / "in").mkdir()
    grid = rng.integers(0, 256, size=(3, 12, 10, 3)) / 255.0
    for i, img in enumerate(grid):
        encode_image(img, tmp_path / "in" / f"{i}.png")
    save_checkpoint(Checkpoint(zero_params(), TrainConfig()), tmp_path / "zero.json")
    code = cli.main(["infer", "--checkpoint", str(tmp_path / "zero.json"),
                     str(tmp_path / "in"), str(tmp_path / "out")], out=io.StringIO())
    same = all(np.array_equal(decode_image(tmp_path / "out" / f"{i}.png"),
                              decode_image(tmp_path / "in" / f"{i}.png")) for i in range(3))
    verdict(4, "zero params are the identity", exact and same and code == 0,
            f"forward exact={exact}, zero-checkpoint infer reproduces 8-bit inputs={same}")


def test_c05_monotone_brightening(verdict):
    rng = np.random.default_rng(55)
    param_sets = [init_params(0), zero_params()] + [
        ModelParams.from_flat(rng.normal(scale=s, size=108))
        for s in np.linspace(0.05, 2.0, 18)]
    worst = np.inf
    for p in param_sets:
        for _ in range(100):
            h, w = rng.integers(1, 17, size=2)
            x = rng.uniform(size=(h, w, 3)).astype(np.float32)
            v, _ = forward(p, x)
            worst = min(worst, float((v - x).min()))
    verdict(5, "forward output >= input", worst >= 0,
            f"20 param sets x 100 inputs, min(v - I)={worst:.3g}")


def test_c06_ssim(verdict, rng):
    x = rng.uniform(size=(32, 32, 3))
    self_score = ssim(x, x)
    const = ssim(np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.25))
    ok = abs(self_score - 1) <= 1e-6 and abs(const - 0.80007) <= 1e-4
    verdict(6, "SSIM identity and zero-variance closed form", ok,
            f"ssim(x,x)={self_score:.9f}, constant case={const:.6f} (0.80007 +- 1e-4)")


def _desk_run():
    train_set = generate_synthetic_pairs(50, 64, 64, seed=7)
    held_out = generate_synthetic_pairs(10, 64, 64, seed=8)
    start = time.perf_counter()
    ck = train(train_set, TrainConfig(seed=7), init_params(7))
    elapsed = time.perf_counter() - start
    pairs = [held_out.pair(i) for i in range(len(held_out))]
    restored = evaluate_set([(restore(ck.params, lo), hi) for lo, hi in pairs]).mean_ssim
    baseline = evaluate_set([(lo, hi) for lo, hi in pairs]).mean_ssim
    return ck, elapsed, restored, baseline


def test_c07_desk_training(verdict):
    ck, elapsed, restored, baseline = _desk_run()
    first, last = ck.epoch_losses[0], ck.epoch_losses[-1]
    ok = last < 0.5 * first and restored - baseline >= 0.05 and elapsed < 300
    verdict(7, "desk-scale training (50 synthetic 64x64 pairs, 20 epochs)", ok,
            f"loss {first:.4g} -> {last:.4g} (ratio {last / first:.3f} < 0.5); held-out SSIM "
            f"{baseline:.4f} -> {restored:.4f} (gain {restored - baseline:.4f} >= 0.05); "
            f"{elapsed:.1f}s (<300s)")


def lol_run(root, config=TrainConfig()):
    """Train on ``root/our485``, score on ``root/eval15``; also score the identity."""
    root = Path(root)
    train_set = load_paired_dataset(root / "our485")
    test_set = load_paired_dataset(root / "eval15")
    pairs = [test_set.pair(i) for i in range(len(test_set))]
    start = time.perf_counter()
    ck = train(train_set, config, init_params(config.seed))
    elapsed = time.perf_counter() - start
    trained = evaluate_set([(forward(ck.params, lo)[0], hi) for lo, hi in pairs]).mean_ssim
    identity = evaluate_set([(lo, hi) for lo, hi in pairs]).mean_ssim
    shapes = {lo.shape for lo, _ in pairs}
    return len(train_set), len(test_set), shapes, trained, identity, elapsed


@pytest.mark.lol
def test_c08_lol_reproduction(verdict, capsys):
    root = os.environ.get(LOL_ENV)
    if not root:
        with capsys.disabled():
            print(f"\n[SKIP] criterion 8: LOL reproduction -- dataset absent, set {LOL_ENV} to run")
        pytest.skip(f"LOL dataset not available; set {LOL_ENV}")
    n_train, n_test, shapes, trained, identity, elapsed = lol_run(root)
    ok = (n_train == 485 and n_test == 15 and shapes == {(400, 600, 3)}
          and 0.26 <= trained <= 0.46 and trained > identity and elapsed < 3600)
    verdict(8, "LOL reproduction", ok,
            f"pairs {n_train}/{n_test}, mean SSIM {trained:.4f} in [0.26, 0.46], "
            f"identity {identity:.4f}, train {elapsed / 60:.1f} min (<60)")


def test_c08_harness_on_mock_layout(tmp_path):
    # exercises the criterion-8 code path on a tiny LOL-shaped tree; no thresholds
    write_dataset(generate_synthetic_pairs(6, 20, 30, seed=1), tmp_path / "our485")
    write_dataset(generate_synthetic_pairs(3, 20, 30, seed=2), tmp_path / "eval15")
    n_train, n_test, shapes, trained, identity, _ = lol_run(tmp_path, TrainConfig(epochs=2))
    assert (n_train, n_test, shapes) == (6, 3, {(20, 30, 3)})
    assert -1 <= identity <= 1 and -1 <= trained <= 1


def test_c09_determinism(verdict, tmp_path):
    data = write_dataset(generate_synthetic_pairs(50, 64, 64, seed=7), tmp_path / "data")
    outputs = []
    for name in ("a.json", "b.json"):
        out = io.StringIO()
        code = cli.main(["train", str(data), str(tmp_path / name), "--seed", "7"], out=out)
        assert code == 0
        outputs.append([l for l in out.getvalue().splitlines() if l.startswith("epoch ")])
    same_bytes = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    same_lines = outputs[0] == outputs[1] and len(outputs[0]) == 20
    verdict(9, "seeded reruns are byte-identical", same_bytes and same_lines,
            f"checkpoints identical={same_bytes}, 20 loss lines identical={same_lines}")


def test_c10_classic_variants(verdict, rng):
    x = rng.uniform(size=(12, 12, 3)).astype(np.float32)
    cfg = ClassicVariantConfig("affine", 1.0, 0.0, "non_residual",
                               f_kernel=DepthwiseKernel.delta(5))
    identity = np.array_equal(forward_classic(cfg, x), x)
    dark = np.zeros((12, 12, 3), dtype=np.float32)
    dark[5:7, 5:7] = 0.01
    try:
        forward_classic(ClassicVariantConfig("divisive", alpha=0.0), dark)
        raised, count = False, 0
    except NumericalInstabilityError as exc:
        raised, count = True, exc.count
    verdict(10, "classic variants", identity and raised,
            f"affine(1,0)+delta identity={identity}, divisive alpha=0 on near-black raised="
            f"{raised} ({count} unstable values)")
