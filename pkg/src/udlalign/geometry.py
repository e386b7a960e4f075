"""Rigid 2-D transforms (rotation + translation) and image warping.

Conventions, fixed here once and inherited by every other module:

* Coordinates are (x, y) with +x pointing right (columns) and +y pointing
  down (rows).  Angles are degrees, normalized into [0, 360).
* A transform maps *source* pixel positions to *target* pixel positions.
  Its homogeneous matrix is::

      [[ cos a,  sin a,  dx],
       [-sin a,  cos a,  dy],
       [     0,      0,   1]]

  i.e. translation is applied after rotation.  With the y-down raster
  convention a positive angle appears counter-clockwise on screen.
* :func:`warp` rotates about the image center ((w-1)/2, (h-1)/2) and uses
  bilinear interpolation; the translation part is applied as-is.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import ndimage

__all__ = [
    "RigidTransform",
    "identity",
    "to_matrix",
    "from_matrix",
    "compose",
    "invert",
    "warp",
]


@dataclasses.dataclass(frozen=True)
class RigidTransform:
    """In-plane rotation (degrees) plus translation (pixels).

    The angle is normalized into [0, 360) on construction; dx is the
    translation along +x (right), dy along +y (down).
    """

    angle: float
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.angle) and math.isfinite(self.dx) and math.isfinite(self.dy)):
            raise ValueError(f"transform parameters must be finite, got {self}")
        object.__setattr__(self, "angle", float(self.angle) % 360.0)
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))


def identity() -> RigidTransform:
    return RigidTransform(0.0, 0.0, 0.0)


def to_matrix(t: RigidTransform) -> np.ndarray:
    """3x3 homogeneous matrix of ``t`` (see module docstring for layout)."""
    a = math.radians(t.angle)
    c, s = math.cos(a), math.sin(a)
    return np.array(
        [[c, s, t.dx], [-s, c, t.dy], [0.0, 0.0, 1.0]],
        dtype=np.float64,
    )


def from_matrix(m: np.ndarray, tol: float = 1e-6) -> RigidTransform:
    """Recover a :class:`RigidTransform` from a 3x3 homogeneous matrix.

    Raises ValueError if ``m`` is not (within ``tol``) a rigid transform in
    this module's layout.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not np.allclose(m[2], [0.0, 0.0, 1.0], atol=tol):
        raise ValueError("bottom row must be [0, 0, 1]")
    r = m[:2, :2]
    if not (
        np.allclose(r @ r.T, np.eye(2), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
        and abs(m[0, 0] - m[1, 1]) < tol
        and abs(m[0, 1] + m[1, 0]) < tol
    ):
        raise ValueError("upper-left block is not a rotation of the expected form")
    angle = math.degrees(math.atan2(m[0, 1], m[0, 0]))
    return RigidTransform(angle, m[0, 2], m[1, 2])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``.

    Matrix form is to_matrix(a) @ to_matrix(b); angles add mod 360.
    """
    m = to_matrix(a) @ to_matrix(b)
    return RigidTransform((a.angle + b.angle) % 360.0, m[0, 2], m[1, 2])


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform: compose(t, invert(t)) is the identity."""
    a = math.radians(t.angle)
    c, s = math.cos(a), math.sin(a)
    # R^-1 = R^T; translation maps to -R^T d
    dx = -(c * t.dx - s * t.dy)
    dy = -(s * t.dx + c * t.dy)
    return RigidTransform(-t.angle % 360.0, dx, dy)


def _center_matrix(t: RigidTransform, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-space mapping matrix of ``t`` with rotation about the image center."""
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    shift_in = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    shift_out = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    return shift_out @ to_matrix(t) @ shift_in


def warp(img: np.ndarray, t: RigidTransform, fill: float = 0.0) -> np.ndarray:
    """Warp ``img`` by ``t``: every source pixel is projected to the output.

    Rotation is about the image center; sampling is bilinear (inverse
    mapping); pixels with no source support take the value ``fill``.
    Output has the same shape and dtype as the input.  A pure integer
    translation with zero rotation moves pixels exactly.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    # closed-form inverse: conjugation by the center commutes with inversion,
    # and it keeps integer translations exact in floating point
    inv = _center_matrix(invert(t), img.shape)
    # scipy maps output (row, col) indices to input indices; our matrices
    # act on (x, y) = (col, row), so swap axes.
    mat_rc = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    offset_rc = np.array([inv[1, 2], inv[0, 2]])
    return ndimage.affine_transform(
        img, mat_rc, offset=offset_rc, order=1, mode="constant", cval=fill
    )
