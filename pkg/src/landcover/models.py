"""Backbone profiles with a multi-label sigmoid head, plus checkpoint I/O."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from landcover._validation import check_image_batch
from landcover.exceptions import InputSizeError, SchemaError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class BackboneProfile:
    name: str
    min_input_size: int
    pretrained_available: bool
    default_input_size: int


_PROFILES = (
    BackboneProfile("resnet50", 224, True, 256),
    BackboneProfile("inception_v3", 299, True, 299),
    BackboneProfile("mobilenet_v3", 224, True, 256),
    BackboneProfile("densenet201", 224, True, 256),
    BackboneProfile("wide_resnet50", 224, True, 256),
    BackboneProfile("tiny_cnn", 32, False, 64),
)


def list_profiles() -> list[BackboneProfile]:
    return list(_PROFILES)


def get_profile(name) -> BackboneProfile:
    if isinstance(name, BackboneProfile):
        return name
    for p in _PROFILES:
        if p.name == name:
            return p
    raise ValueError(f"unknown profile {name!r}; choose from {[p.name for p in _PROFILES]}")


class TinyCNN(nn.Module):
    """Three conv blocks and global max pooling; about 25k parameters."""

    def __init__(self, widths=(16, 32, 64)):
        super().__init__()
        layers = []
        c_in = 3
        for c_out in widths:
            layers += [
                nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers, nn.AdaptiveMaxPool2d(1), nn.Flatten())
        self.out_features = c_in

    def forward(self, x):
        return self.features(x)


class MultiLabelNet(nn.Module):
    """Feature extractor followed by one linear layer and an element-wise sigmoid."""

    def __init__(self, backbone: nn.Module, in_features: int, num_labels: int):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Linear(in_features, num_labels)

    def forward(self, x):
        feats = self.backbone(x)
        if hasattr(feats, "logits"):  # inception in training mode
            feats = feats.logits
        return torch.sigmoid(self.head(feats))


def _load_weights(ctor, weights_enum, allow_download: bool, **kwargs):
    """Instantiate with pretrained weights, or return None if they are unavailable."""
    try:
        weights = weights_enum.DEFAULT
        if not allow_download:
            cache = Path(torch.hub.get_dir()) / "checkpoints" / Path(weights.url).name
            if not cache.exists():
                return None
        return ctor(weights=weights, **kwargs)
    except Exception as exc:  # network or cache failure
        logger.warning("pretrained weights unavailable (%s); using random initialisation", exc)
        return None


def _backbone(name: str, pretrained: bool, allow_download: bool) -> tuple[nn.Module, int, bool]:
    """Return (feature extractor, feature width, whether pretrained weights were loaded)."""
    if name == "tiny_cnn":
        net = TinyCNN()
        return net, net.out_features, False

    from torchvision import models as tvm

    table = {
        "resnet50": (tvm.resnet50, tvm.ResNet50_Weights, {}),
        "wide_resnet50": (tvm.wide_resnet50_2, tvm.Wide_ResNet50_2_Weights, {}),
        "densenet201": (tvm.densenet201, tvm.DenseNet201_Weights, {}),
        "mobilenet_v3": (tvm.mobilenet_v3_large, tvm.MobileNet_V3_Large_Weights, {}),
        "inception_v3": (tvm.inception_v3, tvm.Inception_V3_Weights, {}),
    }
    ctor, weights_enum, kwargs = table[name]
    net = _load_weights(ctor, weights_enum, allow_download, **kwargs) if pretrained else None
    loaded = net is not None
    if net is None:
        if name == "inception_v3":
            net = ctor(weights=None, aux_logits=False, init_weights=True)
        else:
            net = ctor(weights=None)

    if name in ("resnet50", "wide_resnet50", "inception_v3"):
        width = net.fc.in_features
        net.fc = nn.Identity()
        if name == "inception_v3":
            net.aux_logits = False
            net.AuxLogits = None
    elif name == "densenet201":
        width = net.classifier.in_features
        net.classifier = nn.Identity()
    else:
        width = net.classifier[-1].in_features
        net.classifier[-1] = nn.Identity()
    return net, width, loaded


@dataclass
class ModelHandle:
    profile: BackboneProfile
    num_labels: int
    network: MultiLabelNet
    seed: int = 0
    pretrained: bool = False
    class_names: Optional[tuple[str, ...]] = None
    input_size: Optional[int] = None
    threshold: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    @property
    def head_width(self) -> int:
        return self.network.head.out_features

    def set_backbone_trainable(self, trainable: bool) -> None:
        for p in self.network.backbone.parameters():
            p.requires_grad_(trainable)


def build_model(profile, num_labels: int, pretrained: bool = False, seed: int = 0,
                class_names=None, allow_download: bool = True) -> ModelHandle:
    """Build a backbone with an ``num_labels``-wide sigmoid head.

    Pretrained weights are the standard torchvision ImageNet weights. When they
    cannot be fetched the backbone is randomly initialised from ``seed`` and
    ``handle.pretrained`` is False.
    """
    profile = get_profile(profile)
    if int(num_labels) < 1:
        raise ValueError(f"num_labels must be >= 1, got {num_labels}")
    if pretrained and not profile.pretrained_available:
        raise ValueError(f"profile {profile.name!r} has no pretrained weights")
    if class_names is not None and len(class_names) != num_labels:
        raise ValueError(f"{len(class_names)} class names for {num_labels} labels")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        backbone, width, loaded = _backbone(profile.name, pretrained, allow_download)
        net = MultiLabelNet(backbone, width, int(num_labels))
    net.eval()
    return ModelHandle(
        profile=profile,
        num_labels=int(num_labels),
        network=net,
        seed=seed,
        pretrained=loaded,
        class_names=tuple(class_names) if class_names is not None else None,
    )


def to_tensor(batch: np.ndarray) -> torch.Tensor:
    """B x H x W x 3 pixel values in [0, 255] -> normalised B x 3 x H x W float tensor."""
    x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)) / 255.0
    x = x.permute(0, 3, 1, 2)
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


def check_input_size(profile: BackboneProfile, height: int, width: int) -> None:
    if min(height, width) < profile.min_input_size:
        raise InputSizeError(
            f"{profile.name} needs inputs of at least {profile.min_input_size}x{profile.min_input_size} "
            f"pixels, got {height}x{width}"
        )


def predict_probabilities(model: ModelHandle, batch, batch_size: int = 64) -> np.ndarray:
    """Forward pass in evaluation mode; returns a B x L float64 matrix in [0, 1]."""
    arr = check_image_batch(batch)
    check_input_size(model.profile, arr.shape[1], arr.shape[2])
    net = model.network
    was_training = net.training
    net.eval()
    out = []
    try:
        with torch.no_grad():
            for start in range(0, arr.shape[0], batch_size):
                out.append(net(to_tensor(arr[start:start + batch_size])).double().numpy())
    finally:
        net.train(was_training)
    return np.clip(np.concatenate(out, axis=0), 0.0, 1.0)


# --------------------------------------------------------------------------
# checkpoints


def manifest_path(checkpoint) -> Path:
    return Path(checkpoint).with_suffix(".json")


def resolve_checkpoint(path) -> Path:
    """Accept either a ``.pt`` file or a directory holding ``model.pt``."""
    path = Path(path)
    if path.is_dir():
        path = path / "model.pt"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if not manifest_path(path).is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path(path)}")
    return path


def read_manifest(checkpoint) -> dict:
    with open(manifest_path(checkpoint)) as fh:
        return json.load(fh)


def write_manifest(checkpoint, manifest: dict) -> None:
    tmp = manifest_path(checkpoint).with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    tmp.replace(manifest_path(checkpoint))


def save_checkpoint(model: ModelHandle, path, **extra) -> Path:
    """Write weights to ``path`` and a JSON manifest next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.network.state_dict(), path)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "profile": model.profile.name,
        "num_labels": model.num_labels,
        "class_names": list(model.class_names) if model.class_names else None,
        "seed": model.seed,
        "pretrained": model.pretrained,
        "input_size": model.input_size,
        "threshold": model.threshold,
        "weights_file": path.name,
    }
    manifest.update(model.extra)
    manifest.update(extra)
    write_manifest(path, manifest)
    return path


def load_checkpoint(path) -> tuple[ModelHandle, dict]:
    path = resolve_checkpoint(path)
    manifest = read_manifest(path)
    try:
        profile = get_profile(manifest["profile"])
        num_labels = int(manifest["num_labels"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"invalid checkpoint manifest {manifest_path(path)}: {exc}") from None
    handle = build_model(profile, num_labels, pretrained=False, seed=int(manifest.get("seed", 0)),
                         class_names=manifest.get("class_names"))
    state = torch.load(path, map_location="cpu", weights_only=True)
    handle.network.load_state_dict(state)
    handle.network.eval()
    handle.pretrained = bool(manifest.get("pretrained", False))
    handle.input_size = manifest.get("input_size")
    handle.threshold = manifest.get("threshold")
    return handle, manifest
