"""Dataset preparation: loading, resizing, normalization, masking, degradation.

Images move through the pipeline in two representations:

* ``ImageU8``     -- uint8 array of shape (H, W, 3), values in [0, 255].
* ``ImageTensor`` -- float32 array of shape (H, W, 3), values in [-1, 1].

Binary masks are uint8 arrays of shape (H, W) with values in {0, 1};
0 marks corrupted pixels, 1 marks known pixels.
"""

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .seeding import derive_seed

MASK_KINDS = ("center-box", "random-box", "random-pixels")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DataError(Exception):
    """Unusable input data (unreadable directory, too few images, bad shapes)."""


# ---------------------------------------------------------------------------
# value range conversions


def normalize_u8(u8: np.ndarray) -> np.ndarray:
    """Map uint8 samples in [0, 255] to float32 in [-1, 1] via u/127.5 - 1."""
    return (np.asarray(u8, dtype=np.float32) / 127.5) - 1.0


def denormalize(t: np.ndarray) -> np.ndarray:
    """Map [-1, 1] samples back to uint8, rounding half up and clamping.

    Exact inverse of :func:`normalize_u8` on every value in [0, 255].
    """
    v = (np.asarray(t, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def require_image_tensor(a: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) shape and [-1, 1] range of an ImageTensor."""
    a = np.asarray(a)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got shape {a.shape}")
    if a.size and (a.min() < -1.0 or a.max() > 1.0):
        raise DataError("image values outside [-1, 1]")
    return a


def require_mask(m: np.ndarray, shape=None) -> np.ndarray:
    """Check that a mask is 2-D with values in {0, 1} (and optionally a given shape)."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise DataError(f"expected (H, W) mask, got shape {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise DataError("mask values must be exactly 0 or 1")
    if shape is not None and m.shape != tuple(shape):
        raise DataError(f"mask shape {m.shape} does not match expected {tuple(shape)}")
    return m


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class MaskSpec:
    """Recipe for a reproducible binary corruption mask.

    fraction is the corrupted area as a fraction of the image, strictly
    inside (0, 1). The same (spec, seed) always yields an identical mask.
    """

    kind: str = "center-box"
    fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise DataError(f"unknown mask kind {self.kind!r}, expected one of {MASK_KINDS}")
        if not (0.0 < self.fraction < 1.0):
            raise DataError(f"mask fraction must be in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class DegradationSpec:
    """Gaussian blur followed by additive Gaussian noise, in [-1, 1] units."""

    noise_sigma: float = 0.1
    blur_sigma: float = 1.0
    blur_kernel_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            raise DataError(f"blur_kernel_size must be odd and >= 1, got {self.blur_kernel_size}")
        for name in ("noise_sigma", "blur_sigma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DataError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LoadReport:
    """What happened while scanning a dataset directory."""

    found: int = 0
    loaded: int = 0
    skipped: list = field(default_factory=list)  # (filename, reason) pairs

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "loaded": self.loaded,
            "skipped": [{"file": f, "reason": r} for f, r in self.skipped],
        }


@dataclass
class DatasetSplit:
    """Train/test image stacks, each of shape (N, H, W, 3) float32 in [-1, 1]."""

    train: np.ndarray
    test: np.ndarray
    seed: int
    load_report: LoadReport | None = None


# ---------------------------------------------------------------------------
# loading real images


def load_image(path, target_size=None) -> np.ndarray:
    """Decode a PNG/JPEG to an ImageTensor, optionally resizing to (H, W)."""
    img = Image.open(path).convert("RGB")
    if target_size is not None:
        h, w = target_size
        # fixed bilinear filter so resizes are reproducible across runs
        img = img.resize((w, h), Image.BILINEAR)
    return normalize_u8(np.asarray(img, dtype=np.uint8))


def save_image_png(path, image: np.ndarray) -> None:
    """Write an ImageTensor as an 8-bit PNG (atomically, creating parents)."""
    from .rundir import atomic_save_image

    atomic_save_image(path, image)


def load_dataset(directory, target_size, split_fraction, seed) -> DatasetSplit:
    """Load every decodable PNG/JPEG under ``directory``, shuffle, and split.

    Contract (relied on by callers reproducing the split independently):
    candidate files are those with a .png/.jpg/.jpeg suffix, ordered by
    sorted filename; undecodable files are skipped with a warning; the
    surviving images are permuted by ``numpy.random.default_rng(seed)
    .permutation(n)`` and the first ``round(n * split_fraction)`` (half-up,
    clamped to [1, n-1]) become the train split.
    """
    if not (0.0 < split_fraction < 1.0):
        raise DataError(f"split_fraction must be in (0, 1), got {split_fraction}")
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not readable: {directory}")

    candidates = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    report = LoadReport(found=len(candidates))
    images = []
    for p in candidates:
        try:
            images.append(load_image(p, target_size))
        except Exception as exc:  # undecodable file: skip, keep going
            warnings.warn(f"skipping undecodable image {p.name}: {exc}")
            report.skipped.append((p.name, str(exc)))
    report.loaded = len(images)
    if len(images) < 2:
        raise DataError(
            f"need at least 2 usable images in {directory}, found {len(images)}"
        )

    stack = np.stack(images)
    perm = np.random.default_rng(seed).permutation(len(stack))
    stack = stack[perm]
    n_train = _split_count(len(stack), split_fraction)
    return DatasetSplit(
        train=stack[:n_train], test=stack[n_train:], seed=seed, load_report=report
    )


def _split_count(n: int, fraction: float) -> int:
    # round half up, but never empty either side
    return min(max(int(math.floor(n * fraction + 0.5)), 1), n - 1)


# ---------------------------------------------------------------------------
# synthetic data

# Shapes are soft-edged ellipses and rectangles composited over a linear
# color gradient; everything is drawn in [-1, 1] space.


def generate_synthetic_dataset(count, size, seed, split_fraction=0.9) -> DatasetSplit:
    """Deterministic procedural dataset: same (count, size, seed) is bit-identical."""
    if count < 2:
        raise DataError(f"synthetic dataset needs count >= 2, got {count}")
    h, w = size
    rng = np.random.default_rng(seed)
    images = np.stack([_synthetic_image(h, w, rng) for _ in range(count)])
    n_train = _split_count(count, split_fraction)
    return DatasetSplit(train=images[:n_train], test=images[n_train:], seed=seed)


def _synthetic_image(h, w, rng) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs /= max(w - 1, 1)
    ys /= max(h - 1, 1)

    # gradient background between two random colors along a random direction
    c0, c1 = rng.uniform(-1, 1, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    t = (xs - 0.5) * np.cos(angle) + (ys - 0.5) * np.sin(angle) + 0.5
    t = np.clip(t, 0.0, 1.0)[..., None]
    img = c0 * (1 - t) + c1 * t

    for _ in range(rng.integers(1, 4)):
        color = rng.uniform(-1, 1, size=3)
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        rx, ry = rng.uniform(0.12, 0.35, size=2)
        theta = rng.uniform(0, np.pi)
        u = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
        v = -(xs - cx) * np.sin(theta) + (ys - cy) * np.cos(theta)
        if rng.random() < 0.5:
            d = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        else:
            d = np.maximum(np.abs(u) / rx, np.abs(v) / ry)
        # ~1.5 px anti-aliased edge at the d == 1 boundary
        edge = 1.5 / (min(rx, ry) * min(h, w))
        alpha = np.clip((1.0 - d) / edge + 0.5, 0.0, 1.0)[..., None]
        img = img * (1 - alpha) + color * alpha

    return np.clip(img, -1.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# masks


def generate_mask(spec: MaskSpec, size) -> np.ndarray:
    """Build an (H, W) uint8 mask with 0 marking corrupted pixels.

    center-box / random-box zero out a box whose area is the largest
    aspect-preserving box not exceeding fraction * H * W; random-pixels
    zeros exactly round(fraction * H * W) pixels chosen without replacement.
    """
    h, w = size
    if h < 1 or w < 1:
        raise DataError(f"mask size must be positive, got {size}")
    mask = np.ones((h, w), dtype=np.uint8)
    rng = np.random.default_rng(spec.seed)

    if spec.kind in ("center-box", "random-box"):
        s = math.sqrt(spec.fraction)
        bh, bw = int(math.floor(s * h)), int(math.floor(s * w))
        if bh < 1 or bw < 1:
            raise DataError(
                f"mask fraction {spec.fraction} yields an empty box for size {size}"
            )
        if spec.kind == "center-box":
            top, left = (h - bh) // 2, (w - bw) // 2
        else:
            top = int(rng.integers(0, h - bh + 1))
            left = int(rng.integers(0, w - bw + 1))
        mask[top : top + bh, left : left + bw] = 0
    else:  # random-pixels
        n_zero = int(math.floor(spec.fraction * h * w + 0.5))
        if n_zero < 1:
            raise DataError(
                f"mask fraction {spec.fraction} yields zero corrupted pixels for size {size}"
            )
        flat = rng.choice(h * w, size=n_zero, replace=False)
        mask.reshape(-1)[flat] = 0
    return mask


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out corrupted pixels: returns mask * image with mask broadcast over channels."""
    image = np.asarray(image)
    mask = require_mask(mask)
    if image.shape[:2] != mask.shape:
        raise DataError(f"mask shape {mask.shape} does not match image {image.shape}")
    return (image * mask[..., None]).astype(image.dtype)


def save_mask_png(path, mask: np.ndarray) -> None:
    """Write a mask as a 1-bit PNG: black = corrupted, white = known."""
    import io

    from .rundir import atomic_write_bytes

    mask = require_mask(mask)
    buf = io.BytesIO()
    Image.fromarray((mask * 255).astype(np.uint8)).convert("1", dither=Image.NONE).save(
        buf, format="PNG"
    )
    atomic_write_bytes(path, buf.getvalue())


def load_mask_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("L"))
    return (img > 127).astype(np.uint8)


# ---------------------------------------------------------------------------
# degradation pairs for the enhancement network


def _gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    if size == 1 or sigma == 0.0:
        return np.ones(1)
    r = (size - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def synthesize_degraded_pair(clean: np.ndarray, spec: DegradationSpec):
    """Blur + noise a clean image; returns (degraded, residual) with
    degraded == clean + residual holding exactly.

    The residual comes back as float64: every difference of two float32
    values is exact there, so the additive decomposition survives."""
    clean = require_image_tensor(clean)
    k = _gaussian_kernel1d(spec.blur_kernel_size, spec.blur_sigma)
    blurred = clean.astype(np.float64)
    if len(k) > 1:
        blurred = ndimage.convolve1d(blurred, k, axis=0, mode="reflect")
        blurred = ndimage.convolve1d(blurred, k, axis=1, mode="reflect")
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        blurred = blurred + rng.normal(0.0, spec.noise_sigma, size=blurred.shape)
    degraded = np.clip(blurred, -1.0, 1.0).astype(np.float32)
    residual = degraded.astype(np.float64) - clean.astype(np.float64)
    return degraded, residual


def build_degraded_pairs(images: np.ndarray, spec: DegradationSpec, count, seed):
    """Make ``count`` (clean, degraded) pairs by cycling over ``images``
    with a per-pair noise stream derived from ``seed``."""
    if len(images) == 0:
        raise DataError("cannot build degraded pairs from an empty image set")
    clean = np.stack([images[i % len(images)] for i in range(count)])
    degraded = np.empty_like(clean)
    for i in range(count):
        pair_spec = DegradationSpec(
            noise_sigma=spec.noise_sigma,
            blur_sigma=spec.blur_sigma,
            blur_kernel_size=spec.blur_kernel_size,
            seed=derive_seed(seed, f"pair/{i}"),
        )
        degraded[i], _ = synthesize_degraded_pair(clean[i], pair_spec)
    return clean, degraded


def load_pair_directory(directory, target_size=None):
    """Load `<id>_clean.png` / `<id>_degraded.png` pairs from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"pair directory not readable: {directory}")
    clean_files = sorted(directory.glob("*_clean.png"))
    clean, degraded = [], []
    for cf in clean_files:
        df = cf.with_name(cf.name.replace("_clean.png", "_degraded.png"))
        if not df.exists():
            raise DataError(f"missing degraded image for {cf.name}")
        clean.append(load_image(cf, target_size))
        degraded.append(load_image(df, target_size))
    if len(clean) < 2:
        raise DataError(f"need at least 2 pairs in {directory}, found {len(clean)}")
    return np.stack(clean), np.stack(degraded)


# ---------------------------------------------------------------------------
# numpy <-> torch layout helpers


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) or (H, W, 3) numpy -> (N, 3, H, W) float32 torch tensor."""
    a = np.asarray(images, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def tensor_to_images(t: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) torch tensor -> (N, H, W, 3) float32 numpy array."""
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float32)


def mask_to_tensor(mask: np.ndarray) -> torch.Tensor:
    """(H, W) mask -> (1, 1, H, W) float32 torch tensor."""
    return torch.from_numpy(np.asarray(mask, dtype=np.float32))[None, None]
