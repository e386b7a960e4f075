"""Noise synthesis, grayscale conversion, spectra and texture measures.

Images are 2-D float32 grids with a nominal working range of [0, 1].
SNR follows the cryo-EM convention: signal variance / noise variance.
Gaussian-noised images are intentionally not clipped back into [0, 1],
since clipping would change the effective SNR.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "NoiseSpec",
    "to_grayscale",
    "add_gaussian_noise",
    "add_salt_pepper",
    "apply_noise",
    "measure_snr",
    "log_spectrum",
    "texture_score",
    "read_image",
    "write_png",
]

# standard luma weights for RGB -> grayscale
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

# intensity extremes used by salt-and-pepper corruption
_INTENSITY_MIN = 0.0
_INTENSITY_MAX = 1.0


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    """Noise model for synthetic data: none, gaussian (snr) or salt_pepper
    (per-polarity corruption proportion)."""

    kind: str = "none"
    snr: float | None = None
    proportion: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "salt_pepper"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.snr is None or not self.snr > 0:
                raise ValueError("gaussian noise requires snr > 0")
        if self.kind == "salt_pepper":
            if self.proportion is None or not (0.0 < self.proportion <= 0.5):
                raise ValueError("salt_pepper noise requires 0 < proportion <= 0.5")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls("none")

    @classmethod
    def gaussian(cls, snr: float) -> "NoiseSpec":
        return cls("gaussian", snr=snr)

    @classmethod
    def salt_pepper(cls, proportion: float) -> "NoiseSpec":
        return cls("salt_pepper", proportion=proportion)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.snr is not None:
            d["snr"] = self.snr
        if self.proportion is not None:
            d["proportion"] = self.proportion
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(d.get("kind", "none"), snr=d.get("snr"), proportion=d.get("proportion"))


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma-weighted (0.299/0.587/0.114) reduction of an (h, w, 3) image."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got shape {rgb.shape}")
    return (rgb.astype(np.float64) @ _LUMA).astype(np.float32)


def add_gaussian_noise(img: np.ndarray, snr: float, rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise with variance var(img)/snr.

    The result is not clipped.  Raises ValueError for snr <= 0 or a
    zero-variance (degenerate) image.
    """
    if not snr > 0:
        raise ValueError(f"snr must be positive, got {snr}")
    img = np.asarray(img)
    var = float(img.var())
    if var == 0.0:
        raise ValueError("image has zero variance; SNR is undefined for a constant signal")
    sigma = math.sqrt(var / snr)
    noise = rng.normal(0.0, sigma, size=img.shape)
    return (img + noise).astype(img.dtype, copy=False)


def add_salt_pepper(img: np.ndarray, proportion: float, rng: np.random.Generator) -> np.ndarray:
    """Corrupt an expected fraction ``proportion`` of pixels to 1.0 (salt) and,
    independently, ``proportion`` to 0.0 (pepper)."""
    if not (0.0 < proportion <= 0.5):
        raise ValueError(f"proportion must be in (0, 0.5], got {proportion}")
    img = np.asarray(img)
    out = img.copy()
    salt = rng.random(img.shape) < proportion
    pepper = rng.random(img.shape) < proportion
    out[salt] = _INTENSITY_MAX
    out[pepper] = _INTENSITY_MIN
    return out


def apply_noise(img: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "none":
        return img
    if spec.kind == "gaussian":
        return add_gaussian_noise(img, spec.snr, rng)
    return add_salt_pepper(img, spec.proportion, rng)


def measure_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """var(clean) / var(noisy - clean); +inf when the residual is zero."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {noisy.shape}")
    noise_var = float((noisy - clean).var())
    if noise_var == 0.0:
        return math.inf
    return float(clean.var()) / noise_var


def log_spectrum(img: np.ndarray) -> np.ndarray:
    """Centered log-magnitude Fourier spectrum, standardized per image.

    Computes log(1 + |F|) with the zero frequency moved to the grid center,
    then rescales to zero mean / unit variance.  The result is invariant to
    circular translation of the input and rotates with the input, which is
    what makes it a useful rotation-only network representation.
    """
    img = np.asarray(img)
    spec = np.fft.fftshift(np.abs(np.fft.fft2(img.astype(np.float64))))
    spec = np.log1p(spec)
    std = spec.std()
    if std == 0.0:
        return np.zeros_like(spec, dtype=np.float32)
    return ((spec - spec.mean()) / std).astype(np.float32)


def texture_score(patch: np.ndarray) -> float:
    """Standard deviation of intensities; low values mean little texture."""
    return float(np.asarray(patch, dtype=np.float64).std())


def read_image(path) -> np.ndarray:
    """Load an image file as a float32 grayscale array in [0, 1].

    RGB inputs are reduced with the same luma weights as
    :func:`to_grayscale`; alpha channels are dropped.
    """
    with PILImage.open(path) as im:
        if im.mode in ("RGBA", "P", "CMYK"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = to_grayscale(arr.astype(np.float64) / 255.0)
    else:
        arr = arr.astype(np.float32)
        if arr.max() > 1.0:
            arr = arr / 255.0
    return np.ascontiguousarray(arr, dtype=np.float32)


def write_png(path, img: np.ndarray) -> None:
    """Save an image as 8-bit grayscale PNG, clipping to [0, 1]."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    PILImage.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(path)
