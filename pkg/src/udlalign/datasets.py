"""Synthetic alignment-pair datasets and the on-disk record format.

A dataset directory holds ``manifest.json`` plus one or more ``data-*.bin``
shards.  Each record is::

    magic "UDLR" | u32 height | u32 width | source pixels | target pixels

with pixels stored row-major as little-endian float32, source first.  The
manifest carries the generation parameters, the seed and one entry per
record: ``{file, offset, angle_deg, dx, dy}`` (the ground-truth transform
maps source onto target; ``angle_deg`` is null for unlabeled data).

Generation is deterministic: sample ``i`` draws from its own RNG stream
keyed by ``(seed, i)``, so the written bytes depend only on (seed, config)
and samples could be produced in parallel without changing the output.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import RigidTransform
from . import imaging
from .imaging import NoiseSpec

__all__ = [
    "AlignmentPair",
    "TrainingQuadruplet",
    "GenerationError",
    "CorruptDatasetError",
    "PairDataset",
    "PairWriter",
    "generate_coco_pairs",
    "generate_cryoem",
    "make_quadruplet",
    "load_dataset",
]

MAGIC = b"UDLR"
MANIFEST_VERSION = 1
RECORDS_PER_SHARD = 256
_HEADER = struct.Struct("<4sII")


class GenerationError(RuntimeError):
    """Dataset synthesis failed (unreadable or unusable source images)."""


class CorruptDatasetError(RuntimeError):
    """A dataset directory does not match its manifest."""


@dataclasses.dataclass
class AlignmentPair:
    """Two same-size images plus (for synthetic data) the transform that
    maps source onto target."""

    source: np.ndarray
    target: np.ndarray
    gt: RigidTransform | None = None
    noise: NoiseSpec = dataclasses.field(default_factory=NoiseSpec.none)


@dataclasses.dataclass
class TrainingQuadruplet:
    """Original pair, its disturbed version and the difference pseudo-label."""

    i1: np.ndarray
    i2: np.ndarray
    i1d: np.ndarray
    i2d: np.ndarray
    alpha1: float
    alpha2: float

    @property
    def pseudo_label(self) -> float:
        return (self.alpha1 - self.alpha2) % 360.0


# ---------------------------------------------------------------------------
# record I/O


def _write_record(fh, source: np.ndarray, target: np.ndarray) -> int:
    """Append one record, returning its byte offset within the file."""
    offset = fh.tell()
    h, w = source.shape
    fh.write(_HEADER.pack(MAGIC, h, w))
    fh.write(np.ascontiguousarray(source, dtype="<f4").tobytes())
    fh.write(np.ascontiguousarray(target, dtype="<f4").tobytes())
    return offset


def _read_record(fh, offset: int, height: int, width: int, label: str):
    fh.seek(offset)
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise CorruptDatasetError(f"{label}: truncated record header")
    magic, h, w = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CorruptDatasetError(f"{label}: bad magic {magic!r}")
    if (h, w) != (height, width):
        raise CorruptDatasetError(
            f"{label}: record is {h}x{w}, manifest says {height}x{width}"
        )
    n = h * w
    raw = fh.read(2 * n * 4)
    if len(raw) < 2 * n * 4:
        raise CorruptDatasetError(f"{label}: truncated pixel data")
    flat = np.frombuffer(raw, dtype="<f4")
    source = flat[:n].reshape(h, w).copy()
    target = flat[n:].reshape(h, w).copy()
    return source, target


class PairWriter:
    """Streams alignment pairs into a dataset directory, sharding the
    binary records and collecting manifest entries."""

    def __init__(self, out_dir, height: int, width: int, noise: NoiseSpec,
                 seed: int, split: str = "train"):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.height = int(height)
        self.width = int(width)
        self.noise = noise
        self.seed = int(seed)
        self.split = split
        self.records: list[dict] = []
        self._fh = None
        self._shard = -1

    def _shard_for(self, index: int):
        shard = index // RECORDS_PER_SHARD
        if shard != self._shard:
            if self._fh is not None:
                self._fh.close()
            self._shard = shard
            self._fh = open(self.dir / f"data-{shard:05d}.bin", "wb")
        return self._fh

    def add(self, pair: AlignmentPair) -> None:
        if pair.source.shape != (self.height, self.width):
            raise ValueError(
                f"pair shape {pair.source.shape} does not match dataset "
                f"dims {(self.height, self.width)}"
            )
        fh = self._shard_for(len(self.records))
        offset = _write_record(fh, pair.source, pair.target)
        entry = {
            "file": f"data-{self._shard:05d}.bin",
            "offset": offset,
            "angle_deg": None if pair.gt is None else pair.gt.angle,
            "dx": None if pair.gt is None else pair.gt.dx,
            "dy": None if pair.gt is None else pair.gt.dy,
        }
        self.records.append(entry)

    def close(self) -> "DatasetManifest":
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        manifest = DatasetManifest(
            version=MANIFEST_VERSION,
            split=self.split,
            count=len(self.records),
            height=self.height,
            width=self.width,
            noise=self.noise,
            seed=self.seed,
            records=self.records,
        )
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=1)
            fh.write("\n")
        return manifest


@dataclasses.dataclass
class DatasetManifest:
    version: int
    split: str
    count: int
    height: int
    width: int
    noise: NoiseSpec
    seed: int
    records: list[dict]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "split": self.split,
            "count": self.count,
            "height": self.height,
            "width": self.width,
            "noise": self.noise.to_dict(),
            "seed": self.seed,
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            version=d["version"],
            split=d["split"],
            count=d["count"],
            height=d["height"],
            width=d["width"],
            noise=NoiseSpec.from_dict(d["noise"]),
            seed=d["seed"],
            records=d["records"],
        )


class PairDataset:
    """Random-access reader over a dataset directory."""

    def __init__(self, directory):
        self.dir = Path(directory)
        manifest_path = self.dir / "manifest.json"
        if not manifest_path.exists():
            raise CorruptDatasetError(f"no manifest.json in {self.dir}")
        with open(manifest_path) as fh:
            self.manifest = DatasetManifest.from_dict(json.load(fh))
        if len(self.manifest.records) != self.manifest.count:
            raise CorruptDatasetError(
                f"manifest count {self.manifest.count} != "
                f"{len(self.manifest.records)} records"
            )
        self._handles: dict[str, object] = {}

    def __len__(self) -> int:
        return self.manifest.count

    def _handle(self, name: str):
        fh = self._handles.get(name)
        if fh is None:
            path = self.dir / name
            if not path.exists():
                raise CorruptDatasetError(f"missing data file {name}")
            fh = open(path, "rb")
            self._handles[name] = fh
        return fh

    def __getitem__(self, index: int) -> AlignmentPair:
        if not 0 <= index < len(self):
            raise IndexError(f"pair index {index} out of range [0, {len(self)})")
        rec = self.manifest.records[index]
        fh = self._handle(rec["file"])
        source, target = _read_record(
            fh, rec["offset"], self.manifest.height, self.manifest.width,
            label=f"record {index} in {rec['file']}",
        )
        gt = None
        if rec["angle_deg"] is not None:
            gt = RigidTransform(rec["angle_deg"], rec["dx"], rec["dy"])
        return AlignmentPair(source, target, gt=gt, noise=self.manifest.noise)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def close(self) -> None:
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()


def load_dataset(directory) -> PairDataset:
    """Open a dataset directory for reading."""
    return PairDataset(directory)


# ---------------------------------------------------------------------------
# synthetic MS-COCO-style patch pairs


def _signed_shift(rng: np.random.Generator, max_shift: int) -> int:
    mag = int(rng.integers(0, max_shift + 1))
    sign = 1 if rng.random() < 0.5 else -1
    return sign * mag


def _patch_transform(alpha: float, dx: float, dy: float,
                     patch_center_xy: tuple[float, float],
                     img_shape: tuple[int, int]) -> RigidTransform:
    """Full-image transform that acts as (alpha, dx, dy) about the patch center.

    Rotating the full image about the chosen patch center (rather than the
    image center) is what keeps the recorded patch-level ground truth equal
    to the drawn parameters exactly.
    """
    h, w = img_shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    px, py = patch_center_xy
    t_in = np.array([[1, 0, cx - px], [0, 1, cy - py], [0, 0, 1]], dtype=np.float64)
    t_out = np.array([[1, 0, px - cx], [0, 1, py - cy], [0, 0, 1]], dtype=np.float64)
    m = t_out @ geometry.to_matrix(RigidTransform(alpha, dx, dy)) @ t_in
    return geometry.from_matrix(m)


def _required_margin(patch: int, max_shift: int) -> int:
    # rotated patch support (half diagonal) plus translation plus one
    # pixel of interpolation slack
    return int(math.ceil(patch * math.sqrt(2.0) / 2.0 + max_shift + 1.0))


def generate_coco_pairs(
    source_dir,
    out_dir,
    count: int,
    patch: int = 128,
    max_shift: int = 10,
    noise: NoiseSpec | None = None,
    texture_threshold: float = 0.02,
    seed: int = 0,
    max_rotation: float = 360.0,
    split: str = "train",
) -> DatasetManifest:
    """Build ``count`` patch pairs from the images under ``source_dir``.

    Per sample: a rotation angle is drawn from U[0, max_rotation), integer
    per-axis shifts of magnitude U{0..max_shift} with random sign, the full
    grayscale image is transformed, and same-position patches are cut from
    the original and the transformed image.  Noise (if any) is applied to
    each patch independently.  Patches whose clean texture score falls
    below ``texture_threshold`` are rejected and redrawn.
    """
    noise = noise or NoiseSpec.none()
    src = Path(source_dir)
    files = sorted(
        p for p in src.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
    )
    if not files:
        raise GenerationError(f"no readable images in {src}")

    margin = _required_margin(patch, max_shift)
    images = []
    for path in files:
        try:
            img = imaging.read_image(path)
        except Exception as exc:
            raise GenerationError(f"cannot read source image {path}: {exc}") from exc
        if min(img.shape) < 2 * margin + 1:
            raise GenerationError(
                f"source image {path} is {img.shape[0]}x{img.shape[1]}, too small "
                f"for {patch}px patches with a {margin}px transform margin"
            )
        images.append(img)

    # patch top-left corner range keeping the patch center >= margin from
    # every border
    half = (patch - 1) / 2.0
    def _corner_range(extent: int) -> tuple[int, int]:
        return math.ceil(margin - half), math.floor(extent - 1 - margin - half)

    writer = PairWriter(out_dir, patch, patch, noise, seed, split=split)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        pair = None
        for _ in range(200):
            img = images[int(rng.integers(len(images)))]
            h, w = img.shape
            alpha = float(rng.uniform(0.0, max_rotation)) if max_rotation > 0 else 0.0
            dx = _signed_shift(rng, max_shift)
            dy = _signed_shift(rng, max_shift)
            r_lo, r_hi = _corner_range(h)
            c_lo, c_hi = _corner_range(w)
            row = int(rng.integers(r_lo, r_hi + 1))
            col = int(rng.integers(c_lo, c_hi + 1))
            src_patch = img[row:row + patch, col:col + patch]
            center_xy = (col + (patch - 1) / 2.0, row + (patch - 1) / 2.0)
            t_full = _patch_transform(alpha, dx, dy, center_xy, img.shape)
            warped = geometry.warp(img, t_full)
            tgt_patch = warped[row:row + patch, col:col + patch]
            if (imaging.texture_score(src_patch) < texture_threshold
                    or imaging.texture_score(tgt_patch) < texture_threshold):
                continue
            gt = RigidTransform(alpha, dx, dy)
            pair = AlignmentPair(
                imaging.apply_noise(src_patch.copy(), noise, rng),
                imaging.apply_noise(tgt_patch.copy(), noise, rng),
                gt=gt,
                noise=noise,
            )
            break
        if pair is None:
            raise GenerationError(
                f"could not find a patch above texture threshold "
                f"{texture_threshold} after 200 draws (sample {i})"
            )
        writer.add(pair)
    return writer.close()


# ---------------------------------------------------------------------------
# synthetic cryo-EM-style particle images

CRYOEM_SIZE = 128
_PARTICLE_RADIUS_FRACTION = 0.42


def _disk_mask(size: int, radius: float) -> np.ndarray:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    return ((xx - c) ** 2 + (yy - c) ** 2 <= radius ** 2).astype(np.float32)


def _load_center(path) -> np.ndarray:
    from PIL import Image as PILImage

    try:
        img = imaging.read_image(path)
    except Exception as exc:
        raise GenerationError(f"cannot read center image {path}: {exc}") from exc
    if img.shape != (CRYOEM_SIZE, CRYOEM_SIZE):
        pil = PILImage.fromarray(img.astype(np.float32), mode="F")
        pil = pil.resize((CRYOEM_SIZE, CRYOEM_SIZE), PILImage.BILINEAR)
        img = np.asarray(pil, dtype=np.float32)
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        raise GenerationError(f"center image {path} is constant")
    return (img - lo) / (hi - lo)


def generate_cryoem(
    centers_dir,
    out_dir,
    count: int,
    snr: float | None = 0.1,
    max_shift: int = 10,
    seed: int = 0,
    split: str = "train",
) -> DatasetManifest:
    """Build ``count`` particle images per cluster center.

    Each sample warps the center's particle (a centered disk support) by a
    random rotation U[0, 360) and integer shifts of magnitude
    U{0..max_shift}, composites it over a background drawn from a Gaussian
    fit to the center's own non-particle statistics, then adds Gaussian
    noise to reach ``snr`` (``snr=None`` keeps samples clean).  Pairs are
    stored as (source=reference, target=sample) so the recorded ground
    truth is exactly the drawn transform.
    """
    centers = Path(centers_dir)
    files = sorted(
        p for p in centers.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
    )
    if not files:
        raise GenerationError(f"no readable center images in {centers}")

    noise = NoiseSpec.gaussian(snr) if snr is not None else NoiseSpec.none()
    writer = PairWriter(out_dir, CRYOEM_SIZE, CRYOEM_SIZE, noise, seed, split=split)
    disk = _disk_mask(CRYOEM_SIZE, _PARTICLE_RADIUS_FRACTION * CRYOEM_SIZE)

    for ci, path in enumerate(files):
        reference = _load_center(path)
        border = reference[disk == 0.0]
        bg_mean = float(border.mean()) if border.size else 0.0
        bg_std = float(border.std()) if border.size else 0.05
        if bg_std == 0.0:
            bg_std = 0.05
        for i in range(count):
            rng = np.random.default_rng([seed, ci, i])
            alpha = float(rng.uniform(0.0, 360.0))
            dx = _signed_shift(rng, max_shift)
            dy = _signed_shift(rng, max_shift)
            t = RigidTransform(alpha, dx, dy)
            particle = geometry.warp(reference, t)
            support = geometry.warp(disk, t)
            background = rng.normal(bg_mean, bg_std, reference.shape)
            clean = (support * particle + (1.0 - support) * background).astype(np.float32)
            sample = imaging.apply_noise(clean, noise, rng)
            writer.add(AlignmentPair(reference, sample, gt=t, noise=noise))
    return writer.close()


# ---------------------------------------------------------------------------
# difference-learning quadruplets


def make_quadruplet(
    pair: AlignmentPair,
    disturb_max_shift: int,
    rng: np.random.Generator,
    alpha1: float | None = None,
    alpha2: float | None = None,
) -> TrainingQuadruplet:
    """Disturb both images of a pair by fresh random rigid transforms.

    Rotations are U[0, 360) (overridable for controlled tests), shifts are
    integer per-axis magnitudes U{0..disturb_max_shift} with random sign.
    The pseudo-label is (alpha1 - alpha2) mod 360.
    """
    a1 = float(rng.uniform(0.0, 360.0)) if alpha1 is None else float(alpha1)
    a2 = float(rng.uniform(0.0, 360.0)) if alpha2 is None else float(alpha2)
    t1 = RigidTransform(a1, _signed_shift(rng, disturb_max_shift),
                        _signed_shift(rng, disturb_max_shift))
    t2 = RigidTransform(a2, _signed_shift(rng, disturb_max_shift),
                        _signed_shift(rng, disturb_max_shift))
    return TrainingQuadruplet(
        i1=pair.source,
        i2=pair.target,
        i1d=geometry.warp(pair.source, t1),
        i2d=geometry.warp(pair.target, t2),
        alpha1=a1,
        alpha2=a2,
    )
