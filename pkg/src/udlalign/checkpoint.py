"""Model checkpoint persistence.

A checkpoint is a directory holding ``weights.pt`` (the serialized state
dict) and ``metadata.json`` (format version, network/train configs,
iteration count, bias calibration, dataset digest, seed).  The sidecar is
inspectable without touching the weights and is validated before any
weight loading.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from .network import NetworkConfig, RotationNet
from .udl import BiasCalibration, TrainConfig

__all__ = ["ModelCheckpoint", "save_checkpoint", "load_checkpoint", "dataset_digest"]

FORMAT_VERSION = 1
WEIGHTS_FILE = "weights.pt"
METADATA_FILE = "metadata.json"


@dataclasses.dataclass
class ModelCheckpoint:
    net: "RotationNet"
    net_config: NetworkConfig
    train_config: TrainConfig | None
    iteration: int
    calibration: BiasCalibration | None
    dataset_digest: str | None
    seed: int | None

    def estimator(self, device: str | None = None):
        from .network import RotationEstimator

        return RotationEstimator(self.net, device=device)


def dataset_digest(dataset_dir) -> str:
    """Short digest of a dataset's manifest, recorded for provenance."""
    manifest = Path(dataset_dir) / "manifest.json"
    return hashlib.sha256(manifest.read_bytes()).hexdigest()[:16]


def save_checkpoint(
    directory,
    net: RotationNet,
    train_config: TrainConfig | None = None,
    iteration: int = 0,
    calibration: BiasCalibration | None = None,
    dataset_digest: str | None = None,
    seed: int | None = None,
) -> Path:
    import torch

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    metadata = {
        "format_version": FORMAT_VERSION,
        "network": net.config.to_dict(),
        "train": None if train_config is None else train_config.to_dict(),
        "iteration": iteration,
        "calibration": None if calibration is None else calibration.to_dict(),
        "input_repr": net.config.input_repr,
        "dataset_digest": dataset_digest,
        "seed": seed,
    }
    with open(directory / METADATA_FILE, "w") as fh:
        json.dump(metadata, fh, indent=1)
        fh.write("\n")
    torch.save(net.state_dict(), directory / WEIGHTS_FILE)
    return directory


def load_metadata(directory) -> dict:
    path = Path(directory) / METADATA_FILE
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint metadata at {path}")
    with open(path) as fh:
        metadata = json.load(fh)
    version = metadata.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    return metadata


def load_checkpoint(directory, device: str = "cpu") -> ModelCheckpoint:
    """Load and validate a checkpoint (metadata first, then weights)."""
    import torch

    directory = Path(directory)
    metadata = load_metadata(directory)
    net_config = NetworkConfig.from_dict(metadata["network"])
    train_config = (
        TrainConfig.from_dict(metadata["train"]) if metadata.get("train") else None
    )
    calibration = (
        BiasCalibration.from_dict(metadata["calibration"])
        if metadata.get("calibration")
        else None
    )
    net = RotationNet(net_config)
    state = torch.load(directory / WEIGHTS_FILE, map_location=device, weights_only=True)
    net.load_state_dict(state)
    net.to(device)
    return ModelCheckpoint(
        net=net,
        net_config=net_config,
        train_config=train_config,
        iteration=int(metadata.get("iteration", 0)),
        calibration=calibration,
        dataset_digest=metadata.get("dataset_digest"),
        seed=metadata.get("seed"),
    )
