"""SSIM and PSNR for RGB images in [0, 1], plus set-level reports.

SSIM uses a Gaussian window evaluated only where it fits entirely inside the
image (no padding), one score per channel, averaged over the channels.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

EXACT = math.inf  # PSNR of identical images


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if int(self.window_size) != self.window_size or self.window_size < 3 or self.window_size % 2 != 1:
            raise ValueError(f"window_size must be an odd integer >= 3, got {self.window_size!r}")
        if not (self.window_sigma > 0 and self.k1 > 0 and self.k2 > 0 and self.dynamic_range > 0):
            raise ValueError("window_sigma, k1, k2 and dynamic_range must all be > 0")


def gaussian_window_1d(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img, w):
    """Separable 'valid' correlation of an (H, W, C) float64 array with outer(w, w)."""
    k = w.size
    h = img.shape[0] - k + 1
    wd = img.shape[1] - k + 1
    rows = np.zeros((h, img.shape[1], img.shape[2]))
    for i in range(k):
        rows += w[i] * img[i:i + h]
    out = np.zeros((h, wd, img.shape[2]))
    for j in range(k):
        out += w[j] * rows[:, j:j + wd]
    return out


def _check_pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(what, a.shape, b.shape)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def ssim_map(a, b, config=SsimConfig()):
    """Local SSIM at every valid window position, shape (H-w+1, W-w+1, C)."""
    a, b = _check_pair(a, b, "ssim")
    size = config.window_size
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image {a.shape[:2]} smaller than the {size}x{size} SSIM window")
    w = gaussian_window_1d(size, config.window_sigma)
    c1 = (config.k1 * config.dynamic_range) ** 2
    c2 = (config.k2 * config.dynamic_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, config=SsimConfig()):
    """Mean SSIM over valid windows, then over channels."""
    return float(ssim_map(a, b, config).mean(axis=(0, 1)).mean())


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical images give :data:`EXACT` (inf)."""
    a, b = _check_pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return EXACT
    return 10.0 * math.log10(peak * peak / mse)


@dataclass
class ImageScore:
    id: str
    ssim: float
    psnr: float


@dataclass
class MetricReport:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (id, reason)

    @property
    def count(self):
        return len(self.records)

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.records])) if self.records else math.nan

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr for r in self.records])) if self.records else math.nan

    def to_text(self):
        return format_report(self)


def evaluate_set(pairs, config=SsimConfig(), ids=None):
    """Score ``(restored, ground_truth)`` pairs after clamping both to [0, 1].

    A pair that fails (shape mismatch, too small for the window) is listed
    in ``report.failures`` and left out of the aggregates.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_set needs at least one pair")
    if ids is None:
        ids = [str(i) for i in range(len(pairs))]
    report = MetricReport()
    for pid, (restored, truth) in zip(ids, pairs):
        try:
            r = np.clip(np.asarray(restored, dtype=np.float64), 0.0, 1.0)
            t = np.clip(np.asarray(truth, dtype=np.float64), 0.0, 1.0)
            report.records.append(ImageScore(pid, ssim(r, t, config), psnr(r, t, 1.0)))
        except (ValueError, ShapeMismatchError) as exc:
            report.failures.append((pid, str(exc)))
    return report


def _fmt(x):
    return "exact" if x == EXACT else repr(float(x))


def format_report(report):
    """Line-oriented text form; the schema is documented in docs/FORMATS.md."""
    lines = [f"image\t{r.id}\tssim\t{_fmt(r.ssim)}\tpsnr\t{_fmt(r.psnr)}" for r in report.records]
    lines += [f"failed\t{pid}\t{reason}" for pid, reason in report.failures]
    lines += [
        f"count\t{report.count}",
        f"failed_count\t{len(report.failures)}",
        f"mean_ssim\t{_fmt(report.mean_ssim)}",
        f"mean_psnr\t{_fmt(report.mean_psnr)}",
    ]
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of :func:`format_report`."""
    def val(s):
        return EXACT if s == "exact" else float(s)

    report = MetricReport()
    for line in text.splitlines():
        parts = line.split("\t")
        if parts[0] == "image":
            report.records.append(ImageScore(parts[1], val(parts[3]), val(parts[5])))
        elif parts[0] == "failed":
            report.failures.append((parts[1], "\t".join(parts[2:])))
    return report
