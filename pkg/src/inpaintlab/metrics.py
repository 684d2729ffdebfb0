"""Image-quality metrics (PSNR, SSIM) and batch evaluation reports.

Both metrics operate in 8-bit space: callers denormalize first. MSE is
accumulated in int64 so it is exact and permutation-invariant; SSIM runs
on the luma plane with a Gaussian window, averaging only fully-supported
(valid) window positions.
"""

import math
import statistics
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rundir import atomic_write_csv, atomic_write_json

PSNR_CAP_DB = 99.0
REPORT_HEADER = ("id", "psnr_db", "ssim")


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class SsimParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    window_size: int = 11
    window_sigma: float = 1.5
    dynamic_range: float = 255.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SsimParams.{name} must be > 0")
        for name in ("k1", "k2", "window_sigma", "dynamic_range"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SsimParams.{name} must be > 0")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("SsimParams.window_size must be odd and >= 1")


def _require_u8(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != np.uint8:
        raise MetricsError(f"{name} must be uint8, got {a.dtype}")
    return a


def mse(f: np.ndarray, g: np.ndarray) -> float:
    """Mean squared difference over all samples, accumulated exactly in int64."""
    f = _require_u8(f, "f")
    g = _require_u8(g, "g")
    if f.shape != g.shape:
        raise MetricsError(f"shapes differ: {f.shape} vs {g.shape}")
    diff = f.astype(np.int64) - g.astype(np.int64)
    return int((diff * diff).sum()) / f.size


def psnr(f: np.ndarray, g: np.ndarray) -> float:
    """20*log10(255/sqrt(MSE)) in dB, capped at 99.0 when the images agree."""
    m = mse(f, g)
    if m == 0:
        return PSNR_CAP_DB
    return 20.0 * math.log10(255.0 / math.sqrt(m))


def luma(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (H, W, 3) uint8 image, float64 in [0, 255]."""
    image = _require_u8(image, "image")
    if image.ndim == 2:
        return image.astype(np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise MetricsError(f"expected (H, W, 3) image, got shape {image.shape}")
    planes = image.astype(np.float64)
    return 0.299 * planes[..., 0] + 0.587 * planes[..., 1] + 0.114 * planes[..., 2]


def gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    """2-D Gaussian weights normalized to sum to 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _local_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    r = window.shape[0] // 2
    full = ndimage.correlate(plane, window, mode="constant", cval=0.0)
    return full[r : plane.shape[0] - r, r : plane.shape[1] - r]


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Structural similarity on luma, mean over valid window positions.

    Per window: luminance^alpha * contrast^beta * structure^gamma with
    stabilizers C1=(k1*L)^2, C2=(k2*L)^2, C3=C2/2.
    """
    x = _require_u8(x, "x")
    y = _require_u8(y, "y")
    if x.shape != y.shape:
        raise MetricsError(f"shapes differ: {x.shape} vs {y.shape}")
    lx, ly = luma(x), luma(y)
    size = params.window_size
    if lx.shape[0] < size or lx.shape[1] < size:
        raise MetricsError(f"image {lx.shape} is smaller than the {size}x{size} window")
    w = gaussian_window(size, params.window_sigma)
    mu_x = _local_mean(lx, w)
    mu_y = _local_mean(ly, w)
    var_x = np.maximum(_local_mean(lx * lx, w) - mu_x * mu_x, 0.0)
    var_y = np.maximum(_local_mean(ly * ly, w) - mu_y * mu_y, 0.0)
    cov = _local_mean(lx * ly, w) - mu_x * mu_y
    sig_x, sig_y = np.sqrt(var_x), np.sqrt(var_y)

    L = params.dynamic_range
    c1 = (params.k1 * L) ** 2
    c2 = (params.k2 * L) ** 2
    c3 = c2 / 2.0
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    con = (2.0 * sig_x * sig_y + c2) / (var_x + var_y + c2)
    stru = (cov + c3) / (sig_x * sig_y + c3)
    value = lum**params.alpha * con**params.beta * stru**params.gamma
    return float(value.mean())


# ---------------------------------------------------------------------------
# batch reports


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)  # (id, psnr_db, ssim)
    errors: list = field(default_factory=list)  # (id, reason)
    aggregates: dict = field(default_factory=dict)
    params: SsimParams = field(default_factory=SsimParams)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [{"id": i, "psnr_db": p, "ssim": s} for i, p, s in self.rows],
            "errors": [{"id": i, "reason": r} for i, r in self.errors],
            "error_count": len(self.errors),
            "aggregates": self.aggregates,
            "psnr_cap_db": PSNR_CAP_DB,
            "ssim_params": {
                "alpha": self.params.alpha,
                "beta": self.params.beta,
                "gamma": self.params.gamma,
                "k1": self.params.k1,
                "k2": self.params.k2,
                "window_size": self.params.window_size,
                "window_sigma": self.params.window_sigma,
                "dynamic_range": self.params.dynamic_range,
            },
            "provenance": self.provenance,
        }

    def write(self, csv_path, json_path) -> None:
        atomic_write_csv(csv_path, REPORT_HEADER, self.rows)
        atomic_write_json(json_path, self.to_dict())


def _aggregate(values: list) -> dict:
    if not values:
        return {"mean": None, "median": None, "std": None}
    return {
        "mean": statistics.fmean(values),
        "median": float(np.median(values)),
        "std": float(np.std(values)),  # population std
    }


def evaluate_set(originals, completed, params: SsimParams = SsimParams(), ids=None,
                 provenance=None) -> MetricsReport:
    """Per-image PSNR/SSIM rows plus mean/median/std aggregates.

    A pair whose shapes disagree becomes an error entry and is excluded
    from aggregates; a length mismatch between the lists is fatal.
    """
    if len(originals) != len(completed):
        raise MetricsError(f"list lengths differ: {len(originals)} vs {len(completed)}")
    if ids is None:
        ids = [f"{i:04d}" for i in range(len(originals))]
    elif len(ids) != len(originals):
        raise MetricsError("ids length does not match images")
    report = MetricsReport(params=params, provenance=dict(provenance or {}))
    for img_id, f, g in zip(ids, originals, completed):
        try:
            report.rows.append((img_id, psnr(f, g), ssim(f, g, params)))
        except MetricsError as exc:
            report.errors.append((img_id, str(exc)))
    report.aggregates = {
        "psnr_db": _aggregate([r[1] for r in report.rows]),
        "ssim": _aggregate([r[2] for r in report.rows]),
    }
    return report
