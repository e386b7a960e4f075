"""Siamese rotation-regression network.

Pipeline: a mask module gates significant regions of each input, a
four-stage residual extractor produces 16x-downsampled descriptors, a
normalized cross-correlation layer matches every descriptor of one image
against every position of the other (both directions), and three fully
connected layers regress a single unconstrained angle in degrees.

Both images pass through the same weights (one stored copy).  The raw
output is deliberately unbounded; the training-time range penalty is what
pushes it into [0, period].
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np
import torch
from torch import nn

from . import imaging

__all__ = [
    "NetworkConfig",
    "RotationNet",
    "RotationEstimator",
    "match_features",
    "default_device",
]

DOWNSAMPLE = 16


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    Defaults follow the full-scale setup (final feature width 256, fc
    sizes 2000/2000/1); every width can be reduced for desk-scale runs.
    ``input_repr`` selects what the network consumes: raw spatial images
    or their standardized log-magnitude Fourier spectra.
    ``input_disk_mask`` additionally multiplies every input by the fixed
    inscribed disk, removing border/support cues introduced by warping.
    """

    height: int = 128
    width: int = 128
    mask_widths: tuple = (16, 16, 16, 1)
    extractor_widths: tuple = (32, 64, 128, 256)
    post_match_widths: tuple = (128, 64)
    fc_widths: tuple = (2000, 2000)
    input_repr: str = "spatial"
    input_disk_mask: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mask_widths", tuple(self.mask_widths))
        object.__setattr__(self, "extractor_widths", tuple(self.extractor_widths))
        object.__setattr__(self, "post_match_widths", tuple(self.post_match_widths))
        object.__setattr__(self, "fc_widths", tuple(self.fc_widths))
        if self.height % DOWNSAMPLE or self.width % DOWNSAMPLE:
            raise ValueError(
                f"input dims must be divisible by {DOWNSAMPLE}, "
                f"got {self.height}x{self.width}"
            )
        if self.height < 32 or self.width < 32:
            raise ValueError("input dims must be at least 32x32")
        if len(self.mask_widths) != 4 or self.mask_widths[-1] != 1:
            raise ValueError("mask_widths must be 4 conv widths ending in 1")
        if len(self.extractor_widths) != 4:
            raise ValueError("extractor_widths must give 4 residual-block widths")
        if len(self.post_match_widths) != 2:
            raise ValueError("post_match_widths must give 2 conv widths")
        if len(self.fc_widths) != 2:
            raise ValueError("fc_widths must give the 2 hidden fc sizes")
        if self.input_repr not in ("spatial", "spectrum"):
            raise ValueError(f"unknown input_repr {self.input_repr!r}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // DOWNSAMPLE, self.width // DOWNSAMPLE

    @property
    def feature_channels(self) -> int:
        return self.extractor_widths[-1]

    @property
    def correlation_channels(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("mask_widths", "extractor_widths", "post_match_widths", "fc_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


def _conv_block(cin: int, cout: int, final_sigmoid: bool = False) -> nn.Sequential:
    act = nn.Sigmoid() if final_sigmoid else nn.ReLU(inplace=True)
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, padding=1),
        nn.BatchNorm2d(cout),
        act,
    )


class ResidualBlock(nn.Module):
    """1x1 / 3x3 / 1x1 bottleneck; the first two convs carry BN+ReLU, the
    last only BN; a 1x1+BN shortcut is added before the output ReLU."""

    def __init__(self, cin: int, width: int):
        super().__init__()
        self.main = nn.Sequential(
            nn.Conv2d(cin, width, kernel_size=1),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, kernel_size=3, padding=1),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, kernel_size=1),
            nn.BatchNorm2d(width),
        )
        self.shortcut = nn.Sequential(
            nn.Conv2d(cin, width, kernel_size=1),
            nn.BatchNorm2d(width),
        )
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.main(x) + self.shortcut(x))


def match_features(f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
    """Normalized cross-correlation of every descriptor pair.

    Inputs are (c, h, w) or (b, c, h, w) feature volumes of equal shape.
    Output channel (i*w + j) at position (y, x) is the cosine similarity
    between f1's descriptor at (y, x) and f2's descriptor at (i, j), so
    every value lies in [-1, 1].
    """
    unbatched = f1.dim() == 3
    if unbatched:
        f1, f2 = f1.unsqueeze(0), f2.unsqueeze(0)
    if f1.shape != f2.shape:
        raise ValueError(f"feature shape mismatch: {tuple(f1.shape)} vs {tuple(f2.shape)}")
    u1 = f1 / (f1.norm(dim=1, keepdim=True) + 1e-8)
    u2 = f2 / (f2.norm(dim=1, keepdim=True) + 1e-8)
    b, _, h, w = u1.shape
    corr = torch.einsum("bcyx,bcij->bijyx", u1, u2).reshape(b, h * w, h, w)
    return corr[0] if unbatched else corr


class RotationNet(nn.Module):
    """Regresses the relative rotation angle (degrees) of an image pair."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        m = config.mask_widths
        e = config.extractor_widths
        p = config.post_match_widths
        fc = config.fc_widths

        self.mask = nn.Sequential(
            _conv_block(1, m[0]),
            _conv_block(m[0], m[1]),
            _conv_block(m[1], m[2]),
            _conv_block(m[2], m[3], final_sigmoid=True),
        )
        blocks = []
        cin = 1
        for width in e:
            blocks.append(ResidualBlock(cin, width))
            blocks.append(nn.MaxPool2d(2))
            cin = width
        self.extractor = nn.Sequential(*blocks)
        self.post_match = nn.Sequential(
            _conv_block(config.correlation_channels, p[0]),
            _conv_block(p[0], p[1]),
        )
        gh, gw = config.grid
        flat = 2 * p[1] * gh * gw
        self.regressor = nn.Sequential(
            nn.Linear(flat, fc[0]),
            nn.ReLU(inplace=True),
            nn.Linear(fc[0], fc[1]),
            nn.ReLU(inplace=True),
            nn.Linear(fc[1], 1),
        )

    def _as_batch(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() == 2:
            img = img.unsqueeze(0)
        if img.dim() == 3:
            img = img.unsqueeze(1) if img.shape[0] != 1 else img.unsqueeze(0)
        if img.dim() != 4 or img.shape[1] != 1:
            raise ValueError(f"expected single-channel images, got shape {tuple(img.shape)}")
        if img.shape[-2] % DOWNSAMPLE or img.shape[-1] % DOWNSAMPLE:
            raise ValueError(
                f"image dims {tuple(img.shape[-2:])} not divisible by {DOWNSAMPLE}"
            )
        return img

    def predict_mask(self, img: torch.Tensor) -> torch.Tensor:
        """Soft gate in [0, 1] with the same spatial dims as the input."""
        x = self._as_batch(img)
        out = self.mask(x)
        return out if img.dim() == 4 else out.squeeze(0)

    def extract_features(self, masked_img: torch.Tensor) -> torch.Tensor:
        """Descriptor volume of shape (C, h/16, w/16)."""
        x = self._as_batch(masked_img)
        out = self.extractor(x)
        return out if masked_img.dim() == 4 else out.squeeze(0)

    def forward(self, i1: torch.Tensor, i2: torch.Tensor) -> torch.Tensor:
        x1, x2 = self._as_batch(i1), self._as_batch(i2)
        if x1.shape != x2.shape:
            raise ValueError(f"pair shape mismatch: {tuple(x1.shape)} vs {tuple(x2.shape)}")
        b = x1.shape[0]
        # both images share one backbone pass (single weight storage)
        x = torch.cat([x1, x2], dim=0)
        gated = self.mask(x) * x
        feats = self.extractor(gated)
        f1, f2 = feats[:b], feats[b:]
        c12 = match_features(f1, f2)
        c21 = match_features(f2, f1)
        g = self.post_match(torch.cat([c12, c21], dim=0))
        g12, g21 = g[:b], g[b:]
        v = torch.cat([g12.flatten(1), g21.flatten(1)], dim=1)
        out = self.regressor(v).squeeze(-1)
        return out if i1.dim() == 4 or (i1.dim() == 3 and i1.shape[0] != 1) else out.squeeze(0)


def default_device() -> str:
    return os.environ.get("UDLALIGN_DEVICE", "cpu")


def _inscribed_disk(h: int, w: int) -> np.ndarray:
    c_y, c_x = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    r = min(h, w) / 2.0 - 0.5
    return (((yy - c_y) ** 2 + (xx - c_x) ** 2) <= r * r).astype(np.float32)


class RotationEstimator:
    """Numpy-facing inference wrapper applying the configured input
    representation (spatial or spectrum, optional disk mask)."""

    def __init__(self, net: RotationNet, device: str | None = None):
        self.net = net
        self.device = device or default_device()
        self.net.to(self.device)
        cfg = net.config
        self._disk = _inscribed_disk(cfg.height, cfg.width) if cfg.input_disk_mask else None

    @property
    def config(self) -> NetworkConfig:
        return self.net.config

    def preprocess(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float32)
        cfg = self.net.config
        if img.shape != (cfg.height, cfg.width):
            raise ValueError(
                f"image shape {img.shape} does not match network input "
                f"{(cfg.height, cfg.width)}"
            )
        if self._disk is not None:
            img = img * self._disk
        if cfg.input_repr == "spectrum":
            img = imaging.log_spectrum(img)
        return img

    def predict_raw_batch(self, sources, targets) -> np.ndarray:
        """Raw (uncalibrated, unconstrained) angles for stacked image pairs."""
        x1 = np.stack([self.preprocess(s) for s in sources])[:, None]
        x2 = np.stack([self.preprocess(t) for t in targets])[:, None]
        self.net.eval()
        with torch.no_grad():
            out = self.net(
                torch.from_numpy(x1).to(self.device),
                torch.from_numpy(x2).to(self.device),
            )
        return out.cpu().numpy().reshape(-1)

    def predict_raw(self, i1: np.ndarray, i2: np.ndarray) -> float:
        return float(self.predict_raw_batch([i1], [i2])[0])
