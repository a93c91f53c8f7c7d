"""Crop camera/screen views at sampled instants and export embedding files.

The output container is the shared embedding interchange format: magic
``LEMB``, version 1, a JSON header carrying backbone/tap/dim metadata, then
one record per (frame, view) with the frame id, a view byte (0 camera,
1 screen) and little-endian float32 activations. Every integer is
little-endian.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbones import Backbone
from .video import UndecodableFrame, VideoSource

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"LEMB"
EMBEDDING_VERSION = 1
VIEW_CAMERA = 0
VIEW_SCREEN = 1


class LayoutOutOfBounds(Exception):
    pass


@dataclass(frozen=True)
class Box:
    """Pixel rectangle: left, top, width, height."""

    x: int
    y: int
    w: int
    h: int

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[self.y:self.y + self.h, self.x:self.x + self.w]

    def fits(self, height: int, width: int) -> bool:
        return (0 <= self.x and 0 <= self.y and self.w > 0 and self.h > 0
                and self.x + self.w <= width and self.y + self.h <= height)


@dataclass(frozen=True)
class ViewLayout:
    """Static camera/screen regions for one lecture's recording."""

    camera: Box
    screen: Box


def load_layouts(path: Path) -> dict[str, ViewLayout]:
    """Sidecar JSON: {lecture_id: {"camera": [x,y,w,h], "screen": [x,y,w,h]}}."""
    data = json.loads(Path(path).read_text())
    return {
        lecture: ViewLayout(Box(*spec["camera"]), Box(*spec["screen"]))
        for lecture, spec in data.items()
    }


@dataclass(frozen=True)
class FrameSpec:
    lecture_id: str
    time_s: float

    @property
    def frame_id(self) -> str:
        # canonical frame identity shared with the training pipeline
        return f"{self.lecture_id}@{self.time_s:.3f}"


def load_frame_specs(path: Path) -> list[FrameSpec]:
    """Frame-spec JSON-lines from the labeling stage; labels are ignored here."""
    specs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                specs.append(FrameSpec(rec["lecture_id"], float(rec["time_s"])))
    return specs


@dataclass
class ExtractionResult:
    path: Path
    accepted: int
    skipped: list[dict]


def extract(
    video: VideoSource,
    layout: ViewLayout,
    backbone: Backbone,
    specs: Sequence[FrameSpec],
    out_path: Path,
) -> ExtractionResult:
    """Embed both views of every decodable spec and write one embedding file.

    Undecodable frames are recorded and skipped (the file stays valid and
    carries the skip count); a layout that does not fit inside the video
    frame aborts before any work.
    """
    import torch

    torch.set_num_threads(1)  # bit-deterministic reductions

    probe = video.frame_at(next(s.time_s for s in specs)) if specs else None
    if probe is not None:
        height, width = probe.shape[:2]
        for name, box in (("camera", layout.camera), ("screen", layout.screen)):
            if not box.fits(height, width):
                raise LayoutOutOfBounds(
                    f"{name} box {box} outside {width}x{height} frame")

    records: list[tuple[str, int, np.ndarray]] = []
    skipped: list[dict] = []
    for spec in specs:
        try:
            frame = video.frame_at(spec.time_s)
        except UndecodableFrame as exc:
            log.warning("skipping %s: %s", spec.frame_id, exc)
            skipped.append({"frame_id": spec.frame_id, "time_s": spec.time_s,
                            "reason": str(exc)})
            continue
        for view_id, box in ((VIEW_CAMERA, layout.camera), (VIEW_SCREEN, layout.screen)):
            records.append((spec.frame_id, view_id, backbone.embed(box.crop(frame))))

    header = {
        "backbone": backbone.name,
        "tap": backbone.tap,
        "dim": backbone.dim,
        "meta": {
            "tap_module": backbone.tap_module,
            "weights": backbone.weights,
            "input_size": 224,
            "resize_policy": "letterbox, aspect preserved, black padding",
            "accepted_frames": len(records) // 2,
            "skipped_frames": len(skipped),
        },
    }
    _write_embedding_file(out_path, header, records)
    return ExtractionResult(out_path, len(records) // 2, skipped)


def _write_embedding_file(path: Path, header: dict,
                          records: list[tuple[str, int, np.ndarray]]) -> None:
    dim = header["dim"]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", EMBEDDING_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for frame_id, view_id, vector in records:
            vector = np.ascontiguousarray(vector, dtype="<f4")
            if vector.shape != (dim,):
                raise ValueError(f"{frame_id}: vector dim {vector.shape} != header {dim}")
            encoded = frame_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", view_id))
            fh.write(vector.tobytes())
