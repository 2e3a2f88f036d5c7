"""Command-line interface: ``retina-restore <subcommand> ...``.

Effective settings are resolved as built-in defaults < config file < flags.
The config file is flat ``key = value`` text; ``--config`` names it, else
the ``RETINA_RESTORE_CONFIG`` environment variable does. Every run prints
its resolved settings as ``config <key> = <value>`` lines first.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import _kernels
from .dataset_io import (
    IMAGE_SUFFIXES,
    decode_image,
    encode_image,
    generate_synthetic_pairs,
    load_paired_dataset,
    write_dataset,
)
from .errors import (
    CheckpointError,
    DatasetError,
    KernelError,
    NonFiniteError,
    NumericalInstabilityError,
    RetinaRestoreError,
    ShapeMismatchError,
)
from .metrics import SsimConfig, evaluate_set, format_report
from .retina_model import (
    F_SIZE,
    G_SIZE,
    ClassicVariantConfig,
    DepthwiseKernel,
    dog_kernel,
    forward,
    forward_classic,
    gaussian_kernel,
    init_params,
    param_count,
    zero_params,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

CONFIG_ENV = "RETINA_RESTORE_CONFIG"

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_DATASET = 3
EXIT_TRAINING = 4
EXIT_CHECKPOINT = 5
EXIT_INSTABILITY = 6


class UsageError(Exception):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in {"1", "true", "yes", "on"}:
        return True
    if v in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (type, default); the only keys a config file may set
SETTINGS = {
    "seed": (int, 0),
    "threads": (int, 1),
    "epochs": (int, 20),
    "learning_rate": (float, 0.001),
    "batch_size": (int, 8),
    "loss": (str, "mse"),
    "optimizer": (str, "adam"),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_epsilon": (float, 1e-8),
    "init": (str, "dog"),
    "sigma_g": (float, 1.0),
    "record_wall_clock": (_bool, False),
    "preload": (_bool, False),
    "ssim_window_size": (int, 11),
    "ssim_window_sigma": (float, 1.5),
    "ssim_k1": (float, 0.01),
    "ssim_k2": (float, 0.03),
    "ssim_dynamic_range": (float, 1.0),
    "mode": (str, "affine"),
    "alpha": (float, 1.0),
    "beta": (float, 1.0),
    "output_form": (str, "non_residual"),
    "f_kernel": (str, "dog"),
    "g_kernel": (str, "gaussian"),
    "size": (int, 5),
    "sigma1": (float, 0.5),
    "sigma2": (float, 5.0),
}

TRAIN_KEYS = ("seed", "threads", "epochs", "learning_rate", "batch_size", "loss", "optimizer",
              "adam_beta1", "adam_beta2", "adam_epsilon", "init", "sigma_g",
              "record_wall_clock", "preload")
SSIM_KEYS = ("ssim_window_size", "ssim_window_sigma", "ssim_k1", "ssim_k2", "ssim_dynamic_range")
COMMAND_KEYS = {
    "train": TRAIN_KEYS,
    "infer": ("seed", "threads"),
    "eval": ("seed", "threads") + SSIM_KEYS,
    "dump-dog": ("seed", "threads", "size", "sigma1", "sigma2"),
    "variant": ("seed", "threads", "mode", "alpha", "beta", "output_form", "f_kernel",
                "g_kernel", "sigma_g"),
    "synth": ("seed", "threads"),
}


def read_config_file(path):
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        if key in out:
            raise UsageError(f"{path}:{lineno}: setting {key!r} given twice")
        try:
            out[key] = SETTINGS[key][0](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def resolve_settings(command, flags):
    keys = COMMAND_KEYS[command]
    resolved = {k: SETTINGS[k][1] for k in keys}
    config_path = flags.pop("config", None) or os.environ.get(CONFIG_ENV) or None
    if config_path:
        from_file = read_config_file(config_path)
        for k, v in from_file.items():
            if k in resolved:
                resolved[k] = v
    for k, v in flags.items():
        if k in resolved:
            resolved[k] = v
    if resolved["threads"] < 1:
        raise UsageError("threads must be >= 1")
    return resolved, config_path


def echo_settings(settings, config_path, out):
    print(f"config config_file = {config_path or '-'}", file=out)
    print(f"config backend = {_kernels.active_backend()}", file=out)
    for k in sorted(settings):
        print(f"config {k} = {settings[k]}", file=out)


def ssim_config(s):
    return SsimConfig(s["ssim_window_size"], s["ssim_window_sigma"], s["ssim_k1"],
                      s["ssim_k2"], s["ssim_dynamic_range"])


def _ordered_map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _model_params(args):
    if args.identity:
        return zero_params()
    return load_checkpoint(args.checkpoint).params


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(args, s, out):
    config = TrainConfig(
        epochs=s["epochs"], learning_rate=s["learning_rate"], batch_size=s["batch_size"],
        seed=s["seed"], loss=s["loss"], optimizer=s["optimizer"], adam_beta1=s["adam_beta1"],
        adam_beta2=s["adam_beta2"], adam_epsilon=s["adam_epsilon"])
    if s["init"] == "dog":
        init = init_params(s["seed"], sigma_g=s["sigma_g"])
    elif s["init"] == "zero":
        init = zero_params()
    else:
        raise UsageError(f"init must be 'dog' or 'zero', got {s['init']!r}")
    ds = load_paired_dataset(args.data_dir, manifest=args.manifest, preload=s["preload"])
    print(f"dataset {ds.identifier} pairs {len(ds)}", file=out)
    print(f"params {param_count(init)}", file=out)

    def report(epoch, loss):
        print(f"epoch {epoch} loss {loss!r}", file=out, flush=True)

    ckpt = train(ds, config, init, on_epoch=report, threads=s["threads"],
                 record_wall_clock=s["record_wall_clock"], init_name=s["init"])
    save_checkpoint(ckpt, args.out)
    print(f"final_loss {ckpt.final_loss!r}", file=out)
    print(f"checkpoint {args.out}", file=out)
    return EXIT_OK


def _input_files(path):
    p = Path(path)
    if p.is_dir():
        return sorted(x for x in p.iterdir() if x.is_file() and x.suffix.lower() in IMAGE_SUFFIXES)
    return [p]


def cmd_infer(args, s, out):
    params = _model_params(args)
    files = _input_files(args.input)
    if not files:
        raise DatasetError(f"no input images under {args.input}")
    os.makedirs(args.output_dir, exist_ok=True)

    def one(path):
        try:
            v, _ = forward(params, decode_image(path))
            encode_image(np.clip(v, 0.0, 1.0), Path(args.output_dir) / path.name)
            return path, None
        except (RetinaRestoreError, OSError, ValueError) as exc:
            return path, exc

    failed = 0
    for path, exc in _ordered_map(one, files, s["threads"]):
        if exc is None:
            print(f"restored {path.name}", file=out)
        else:
            failed += 1
            print(f"failed {path.name}: {exc}", file=out)
    print(f"restored_count {len(files) - failed} failed_count {failed}", file=out)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_eval(args, s, out):
    params = _model_params(args)
    ds = load_paired_dataset(args.data_dir, manifest=args.manifest)
    cfg = ssim_config(s)

    def one(i):
        low, high = ds.pair(i)
        v, _ = forward(params, low)
        return v, high

    pairs = _ordered_map(one, range(len(ds)), s["threads"])
    report = evaluate_set(pairs, cfg, ids=list(ds.ids))
    text = format_report(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    for rec in report.records:
        print(f"image {rec.id} ssim {rec.ssim!r} psnr {rec.psnr!r}", file=out)
    for pid, reason in report.failures:
        print(f"failed {pid}: {reason}", file=out)
    print(f"count {report.count}", file=out)
    print(f"mean_psnr {report.mean_psnr!r}", file=out)
    print(f"mean_ssim {report.mean_ssim!r}", file=out)
    return EXIT_PARTIAL if report.failures else EXIT_OK


def format_matrix(k):
    # + 0.0 turns a rounded -0.0 into 0.0
    return "\n".join(" ".join(f"{round(float(v), 4) + 0.0:.4f}" for v in row) for row in k)


def cmd_dump_dog(args, s, out):
    print(format_matrix(dog_kernel(s["size"], s["sigma1"], s["sigma2"])), file=out)
    return EXIT_OK


def cmd_variant(args, s, out):
    if s["g_kernel"] == "gaussian":
        g = DepthwiseKernel.from_plane(gaussian_kernel(G_SIZE, s["sigma_g"]))
    elif s["g_kernel"] == "delta":
        g = DepthwiseKernel.delta(G_SIZE)
    else:
        raise UsageError(f"g_kernel must be 'gaussian' or 'delta', got {s['g_kernel']!r}")
    if s["f_kernel"] == "dog":
        f = DepthwiseKernel.from_plane(dog_kernel(F_SIZE, 0.5, 5.0))
    elif s["f_kernel"] == "delta":
        f = DepthwiseKernel.delta(F_SIZE)
    else:
        raise UsageError(f"f_kernel must be 'dog' or 'delta', got {s['f_kernel']!r}")
    try:
        config = ClassicVariantConfig(s["mode"], s["alpha"], s["beta"], s["output_form"], g, f)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    image = decode_image(args.input)
    try:
        v = forward_classic(config, image)
    except NumericalInstabilityError as exc:
        print(f"divisive_guard triggered offending_pixels {exc.count}", file=out)
        raise
    if config.mode == "divisive":
        print("divisive_guard not_triggered", file=out)
    encode_image(v, args.output)
    print(f"output {args.output} range [{float(v.min())!r}, {float(v.max())!r}]", file=out)
    return EXIT_OK


def cmd_synth(args, s, out):
    ds = generate_synthetic_pairs(args.n, args.height, args.width, seed=s["seed"])
    write_dataset(ds, args.out_dir)
    print(f"wrote {len(ds)} pairs to {args.out_dir}", file=out)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser():
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=S,
                        help="worker threads for per-image work (default 1)")
    common.add_argument("--config", default=S, metavar="FILE",
                        help=f"flat key = value settings file (default: ${CONFIG_ENV})")

    parser = argparse.ArgumentParser(
        prog="retina-restore",
        description="Retina-inspired low-light image restoration (108-parameter network).")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a checkpoint on a paired dataset",
                       description="Train on DATA_DIR (low/ + high/) and write a checkpoint.")
    p.add_argument("data_dir")
    p.add_argument("out", help="checkpoint path to write")
    p.add_argument("--manifest", default=None, help="low<TAB>high pair list instead of low/ high/")
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--loss", choices=["mse"], default=S)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=S)
    p.add_argument("--adam-beta1", dest="adam_beta1", type=float, default=S)
    p.add_argument("--adam-beta2", dest="adam_beta2", type=float, default=S)
    p.add_argument("--adam-epsilon", dest="adam_epsilon", type=float, default=S)
    p.add_argument("--init", choices=["dog", "zero"], default=S,
                   help="DoG/Gaussian initialisation or all-zero (identity) parameters")
    p.add_argument("--sigma-g", dest="sigma_g", type=float, default=S)
    p.add_argument("--record-wall-clock", dest="record_wall_clock", action="store_const",
                   const=True, default=S,
                   help="store training duration in the checkpoint (breaks byte-identical reruns)")
    p.add_argument("--preload", action="store_const", const=True, default=S,
                   help="decode every image up front instead of on demand")
    p.set_defaults(func=cmd_train)

    def model_source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--checkpoint", help="checkpoint file")
        g.add_argument("--identity", action="store_true",
                       help="use all-zero parameters (the network is then the identity)")

    p = sub.add_parser("infer", parents=[common], help="restore images with a checkpoint",
                       description="Restore an image or a directory of images.")
    model_source(p)
    p.add_argument("input", help="image file or directory")
    p.add_argument("output_dir")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a paired dataset",
                       description="Restore each low image and compare with its high image.")
    model_source(p)
    p.add_argument("data_dir")
    p.add_argument("--manifest", default=None)
    p.add_argument("--report", default=None, metavar="FILE", help="write the metric report here")
    p.add_argument("--ssim-window-size", dest="ssim_window_size", type=int, default=S)
    p.add_argument("--ssim-window-sigma", dest="ssim_window_sigma", type=float, default=S)
    p.add_argument("--ssim-k1", dest="ssim_k1", type=float, default=S)
    p.add_argument("--ssim-k2", dest="ssim_k2", type=float, default=S)
    p.add_argument("--ssim-dynamic-range", dest="ssim_dynamic_range", type=float, default=S)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-dog", parents=[common], help="print a DoG kernel",
                       description="Print a difference-of-Gaussians kernel at 4 decimals.")
    p.add_argument("--size", type=int, default=S)
    p.add_argument("--sigma1", type=float, default=S)
    p.add_argument("--sigma2", type=float, default=S)
    p.set_defaults(func=cmd_dump_dog)

    p = sub.add_parser("variant", parents=[common], help="run a classic (untrained) variant",
                       description="Forward-only divisive / affine / residual retina variant.")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["divisive", "affine", "residual"], default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--output-form", dest="output_form", choices=["non_residual", "residual"],
                   default=S)
    p.add_argument("--f-kernel", dest="f_kernel", choices=["dog", "delta"], default=S)
    p.add_argument("--g-kernel", dest="g_kernel", choices=["gaussian", "delta"], default=S)
    p.add_argument("--sigma-g", dest="sigma_g", type=float, default=S)
    p.set_defaults(func=cmd_variant)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic paired dataset",
                       description="Generate seeded synthetic low/high pairs as PNG files.")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items()
             if k in SETTINGS or k == "config"}
    try:
        settings, config_path = resolve_settings(args.command, flags)
        echo_settings(settings, config_path, out)
        return args.func(args, settings, out)
    except (UsageError, KernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ShapeMismatchError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NonFiniteError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except NumericalInstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
