"""Paired low/normal-light datasets, 8-bit RGB codec and a synthetic pair generator.

On-disk layout follows LOL: ``<root>/low/<name>`` pairs with
``<root>/high/<name>``. A manifest file (``low_path<TAB>high_path`` per line,
relative to the manifest's directory) overrides the layout.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError, ImageDecodeError, ShapeMismatchError, UnmatchedFileError

IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".ppm", ".jpg", ".jpeg"}


def decode_image(path):
    """Read an 8-bit RGB raster as float32 ``(H, W, 3)`` in [0, 1] (value / 255)."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                raise ImageDecodeError(
                    f"{path}: expected 8-bit RGB, got PIL mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def quantize(t):
    """Clamp to [0, 1] and map to uint8 with round-half-away-from-zero."""
    v = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def encode_image(t, path):
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[2] != 3:
        raise ShapeMismatchError("encode_image", ("H", "W", 3), t.shape)
    Image.fromarray(quantize(t)).save(path)


@dataclass
class PairedDataset:
    """Ordered low/high pairs, loaded lazily from disk or held in memory."""

    identifier: str
    ids: list
    low_paths: list = field(default_factory=list)
    high_paths: list = field(default_factory=list)
    _arrays: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.ids)

    def pair(self, i):
        """``(low, high)`` float32 arrays for pair ``i``."""
        if i in self._arrays:
            return self._arrays[i]
        low = decode_image(self.low_paths[i])
        high = decode_image(self.high_paths[i])
        if low.shape != high.shape:
            raise ShapeMismatchError(
                f"pair {self.ids[i]!r}: {self.low_paths[i]} vs {self.high_paths[i]}",
                high.shape, low.shape)
        return low, high

    def preload(self):
        for i in range(len(self)):
            self._arrays[i] = self.pair(i)
        return self

    def subset(self, indices):
        indices = list(indices)
        out = PairedDataset(
            f"{self.identifier}[{indices[0]}:{indices[-1] + 1}]" if indices else self.identifier,
            [self.ids[i] for i in indices],
            [self.low_paths[i] for i in indices] if self.low_paths else [],
            [self.high_paths[i] for i in indices] if self.high_paths else [],
        )
        for j, i in enumerate(indices):
            if i in self._arrays:
                out._arrays[j] = self._arrays[i]
        return out


def _list_images(d):
    return {p.name: p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def _read_manifest(manifest):
    manifest = Path(manifest)
    base = manifest.parent
    pairs = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{manifest}:{lineno}: expected 'low_path<TAB>high_path'")
        pairs.append((base / parts[0].strip(), base / parts[1].strip()))
    if not pairs:
        raise DatasetError(f"{manifest}: no pairs listed")
    pairs.sort(key=lambda p: str(p[0]))
    return pairs


def load_paired_dataset(root, manifest=None, preload=False, validate=True):
    """Match ``low/`` and ``high/`` files by name, in lexicographic order.

    With ``validate`` every image header is checked (8-bit RGB, equal size
    within a pair) without decoding the pixel data.
    """
    root = Path(root)
    if manifest is not None:
        pairs = _read_manifest(manifest)
        ids = [str(lp.relative_to(Path(manifest).parent)) for lp, _ in pairs]
    else:
        low_dir, high_dir = root / "low", root / "high"
        for d in (low_dir, high_dir):
            if not d.is_dir():
                raise DatasetError(f"missing subdirectory {d}")
        low, high = _list_images(low_dir), _list_images(high_dir)
        if set(low) - set(high):
            raise UnmatchedFileError(set(low) - set(high), "high")
        if set(high) - set(low):
            raise UnmatchedFileError(set(high) - set(low), "low")
        if not low:
            raise DatasetError(f"no images found under {low_dir}")
        ids = sorted(low)
        pairs = [(low[n], high[n]) for n in ids]
    for lp, hp in pairs:
        for p in (lp, hp):
            if not p.is_file():
                raise DatasetError(f"missing image file {p}")
    ds = PairedDataset(str(root), ids, [p[0] for p in pairs], [p[1] for p in pairs])
    if validate:
        for pid, (lp, hp) in zip(ids, pairs):
            sizes = []
            for p in (lp, hp):
                try:
                    with Image.open(p) as im:
                        if im.mode != "RGB":
                            raise ImageDecodeError(f"{p}: expected 8-bit RGB, got PIL mode {im.mode!r}")
                        sizes.append(im.size)
                except (UnidentifiedImageError, OSError) as exc:
                    raise ImageDecodeError(f"{p}: cannot decode image ({exc})") from exc
            if sizes[0] != sizes[1]:
                raise ShapeMismatchError(f"pair {pid!r}: {lp} vs {hp}", sizes[1], sizes[0])
    if preload:
        ds.preload()
    return ds


# --------------------------------------------------------------------------
# synthetic pairs
# --------------------------------------------------------------------------

SYNTH_GAIN = 0.3
SYNTH_GAMMA = 2.2
SYNTH_RANGE = (0.2, 1.0)


def darken(high):
    """Low-light counterpart of a normal-light image: gamma darkening then attenuation."""
    return np.clip(SYNTH_GAIN * np.asarray(high, dtype=np.float64) ** SYNTH_GAMMA, 0.0, 1.0)


def _smooth_field(rng, height, width, scale):
    noise = rng.standard_normal((height, width, 3))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    lowpass = np.exp(-2.0 * (np.pi * scale) ** 2 * (fy * fy + fx * fx))
    field_ = np.fft.ifft2(np.fft.fft2(noise, axes=(0, 1)) * lowpass[..., None], axes=(0, 1)).real
    lo, hi = field_.min(), field_.max()
    span = hi - lo if hi > lo else 1.0
    return SYNTH_RANGE[0] + (SYNTH_RANGE[1] - SYNTH_RANGE[0]) * (field_ - lo) / span


def generate_synthetic_pairs(n, height=64, width=64, seed=0, smoothness=None):
    """``n`` seeded smooth colour fields in [0.2, 1] and their darkened versions.

    ``smoothness`` is the Gaussian blur sigma in pixels (default: an eighth of
    the shorter side).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scale = smoothness if smoothness is not None else min(height, width) / 8.0
    ids, arrays = [], {}
    for i in range(n):
        rng = np.random.default_rng([int(seed), i])
        high = _smooth_field(rng, height, width, scale)
        arrays[i] = (darken(high).astype(np.float32), high.astype(np.float32))
        ids.append(f"synthetic_{i:04d}.png")
    ds = PairedDataset(f"synthetic(n={n},h={height},w={width},seed={seed})", ids)
    ds._arrays.update(arrays)
    return ds


def write_dataset(dataset, root):
    """Write a dataset to ``<root>/low`` and ``<root>/high`` as 8-bit PNG files."""
    root = Path(root)
    for sub in ("low", "high"):
        os.makedirs(root / sub, exist_ok=True)
    for i, pid in enumerate(dataset.ids):
        low, high = dataset.pair(i)
        name = Path(pid).name
        encode_image(low, root / "low" / name)
        encode_image(high, root / "high" / name)
    return root
