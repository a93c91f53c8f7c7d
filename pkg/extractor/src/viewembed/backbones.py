"""Pretrained-architecture backbones and their embedding tap points.

Five (backbone, tap) pairs are supported: alexnet and vgg19 each expose both
the final layer and the third-from-last parametric layer; resnet50 exposes
only the final layer. Tap module names are recorded in every embedding file
header so downstream consumers stay layer-agnostic.

Weights default to a deterministic seeded initialization of the genuine
architecture; pass a state-dict path to run real pretrained weights when they
are available locally.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torchvision import models

INPUT_SIZE = 224
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

TAP_LAST = "last"
TAP_THIRD = "third_from_last"

# (backbone, tap) -> the module whose output is exported, and its dimension
_TAP_POINTS: dict[tuple[str, str], tuple[str, int]] = {
    ("alexnet", TAP_LAST): ("classifier.6", 1000),
    ("alexnet", TAP_THIRD): ("classifier.1", 4096),
    ("vgg19", TAP_LAST): ("classifier.6", 1000),
    ("vgg19", TAP_THIRD): ("classifier.0", 4096),
    ("resnet50", TAP_LAST): ("fc", 1000),
}

_BUILDERS = {
    "alexnet": models.alexnet,
    "vgg19": models.vgg19,
    "resnet50": models.resnet50,
}


class UnsupportedTap(ValueError):
    pass


def supported_pairs() -> list[tuple[str, str]]:
    return sorted(_TAP_POINTS)


@dataclass
class Backbone:
    """A frozen vision network with one registered tap point."""

    name: str
    tap: str
    tap_module: str
    dim: int
    weights: str  # "seeded:<seed>" or the loaded state-dict path
    _model: torch.nn.Module
    _buffer: list

    @classmethod
    def create(cls, name: str, tap: str, weights_path: Path | None = None,
               seed: int = 0) -> "Backbone":
        key = (name, tap)
        if key not in _TAP_POINTS:
            raise UnsupportedTap(
                f"({name}, {tap}) is not one of the supported pairs: {supported_pairs()}")
        tap_module, dim = _TAP_POINTS[key]

        torch.manual_seed(seed)
        model = _BUILDERS[name](weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
            weights = str(weights_path)
        else:
            weights = f"seeded:{seed}"
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)

        buffer: list = []
        module = model.get_submodule(tap_module)
        module.register_forward_hook(lambda _m, _inp, out: buffer.append(out))
        return cls(name, tap, tap_module, dim, weights, model, buffer)

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Flattened tap-layer activation for one HxWx3 uint8 RGB image."""
        x = preprocess(image)
        self._buffer.clear()
        with torch.no_grad():
            self._model(torch.from_numpy(x).unsqueeze(0))
        out = self._buffer[-1]
        return out.reshape(-1).numpy().astype(np.float32)


def preprocess(image: np.ndarray) -> np.ndarray:
    """Letterbox to the square input size and normalize; returns CHW float32.

    Aspect ratio is preserved; padding is black. The policy is recorded in
    embedding-file headers.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    h, w = image.shape[:2]
    scale = INPUT_SIZE / max(h, w)
    new_h, new_w = max(1, round(h * scale)), max(1, round(w * scale))
    import cv2

    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_AREA)
    canvas = np.zeros((INPUT_SIZE, INPUT_SIZE, 3), dtype=np.uint8)
    top = (INPUT_SIZE - new_h) // 2
    left = (INPUT_SIZE - new_w) // 2
    canvas[top:top + new_h, left:left + new_w] = resized
    scaled = canvas.astype(np.float32) / 255.0
    normalized = (scaled - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(normalized.transpose(2, 0, 1))
