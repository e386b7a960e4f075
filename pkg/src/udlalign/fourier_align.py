"""Translation recovery by phase correlation, and the full alignment
pipeline (network rotation estimate + Fourier translation estimate).

Rotation and translation are deliberately decoupled: the network predicts
only the relative angle, the source is re-rotated by that angle, and the
remaining pure translation is read off the phase-correlation peak, which
stays reliable under heavy noise.
"""

from __future__ import annotations

import numpy as np

from . import geometry, udl
from .geometry import RigidTransform

__all__ = ["phase_correlation", "align", "apply_alignment"]


def _wrap_shift(index: int, size: int) -> int:
    # map an FFT bin to the centered shift range (-size/2, size/2]
    return index if index <= size // 2 else index - size


def phase_correlation(
    a: np.ndarray,
    b: np.ndarray,
    subpixel: bool = False,
    window: bool = False,
):
    """Estimate the translation taking ``a`` onto ``b``.

    Returns ``(dx, dy, peak)`` such that ``b`` is approximately ``a``
    shifted by +dx along x and +dy along y, with shifts reported in
    (-w/2, w/2] x (-h/2, h/2].  ``peak`` is the normalized correlation
    peak height in [0, 1], a confidence proxy.  ``subpixel`` enables a
    three-point parabolic refinement of the integer peak; ``window``
    applies a raised-cosine taper first (useful for non-periodic real
    images).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2-D images, got shape {a.shape}")
    h, w = a.shape
    a = a - a.mean()
    b = b - b.mean()
    if window:
        taper = np.hanning(h)[:, None] * np.hanning(w)[None, :]
        a = a * taper
        b = b * taper

    cross = np.conj(np.fft.fft2(a)) * np.fft.fft2(b)
    mag = np.abs(cross)
    # unit-normalize the cross-power spectrum, softly down-weighting bins
    # far below the dominant magnitude (they carry noise, not phase)
    damp = 1e-6 * mag.max() + 1e-300
    surface = np.fft.ifft2(cross / (mag + damp)).real
    # |R| integrates to this bound, so the ratio is a [0, 1] confidence
    # that reaches 1 for identical inputs
    bound = float((mag / (mag + damp)).mean())
    if bound < 1e-12:
        return (0.0, 0.0, 0.0) if subpixel else (0, 0, 0.0)

    peak_idx = np.unravel_index(int(np.argmax(surface)), surface.shape)
    peak = float(min(max(surface[peak_idx] / bound, 0.0), 1.0))
    dy = _wrap_shift(int(peak_idx[0]), h)
    dx = _wrap_shift(int(peak_idx[1]), w)

    if not subpixel:
        return dx, dy, peak

    def _refine(center: float, minus: float, plus: float) -> float:
        denom = minus - 2.0 * center + plus
        if denom >= 0.0:
            return 0.0
        return 0.5 * (minus - plus) / denom

    r0, c0 = peak_idx
    off_y = _refine(
        surface[r0, c0], surface[(r0 - 1) % h, c0], surface[(r0 + 1) % h, c0]
    )
    off_x = _refine(
        surface[r0, c0], surface[r0, (c0 - 1) % w], surface[r0, (c0 + 1) % w]
    )
    return dx + off_x, dy + off_y, peak


def align(estimator, calib, source: np.ndarray, target: np.ndarray,
          subpixel: bool = False, window: bool = True) -> RigidTransform:
    """Full rigid alignment of ``source`` onto ``target``.

    The calibrated network supplies the rotation; the source is re-rotated
    by it and phase correlation supplies the remaining translation.  The
    re-rotated image has constant-filled borders (it is not circularly
    periodic), so the translation stage windows by default.
    """
    angle = udl.predict_rotation(estimator, calib, source, target)
    rerotated = geometry.warp(source, RigidTransform(angle, 0.0, 0.0))
    dx, dy, _ = phase_correlation(rerotated, target, subpixel=subpixel, window=window)
    return RigidTransform(angle, dx, dy)


def apply_alignment(img: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Warp ``img`` by an estimated transform (module-standard conventions)."""
    return geometry.warp(img, t)
