"""Frame access for video files and frame directories."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


class UndecodableFrame(Exception):
    def __init__(self, time_s: float, detail: str):
        self.time_s = time_s
        super().__init__(f"frame at {time_s}s: {detail}")


class VideoSource:
    """Nearest-frame access to a video file, or to a directory of image
    frames (sorted by name) with a declared frame rate."""

    def __init__(self, path: Path, fps: float | None = None):
        self.path = Path(path)
        if self.path.is_dir():
            self._frames = sorted(
                p for p in self.path.iterdir()
                if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".ppm", ".bmp"))
            if not self._frames:
                raise FileNotFoundError(f"{path}: no image frames found")
            self.fps = fps or 1.0
            self.frame_count = len(self._frames)
            self._capture = None
        else:
            capture = cv2.VideoCapture(str(self.path))
            if not capture.isOpened():
                raise FileNotFoundError(f"{path}: cannot open video")
            self._capture = capture
            self.fps = fps or capture.get(cv2.CAP_PROP_FPS) or 1.0
            self.frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
            self._frames = None

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps

    def frame_at(self, time_s: float) -> np.ndarray:
        """Decode the frame nearest to time_s, as HxWx3 RGB uint8."""
        index = int(round(time_s * self.fps))
        if time_s < 0 or index >= self.frame_count:
            raise UndecodableFrame(time_s, f"outside [0, {self.duration_s:.3f}s)")
        if self._frames is not None:
            image = cv2.imread(str(self._frames[index]), cv2.IMREAD_COLOR)
            if image is None:
                raise UndecodableFrame(time_s, f"unreadable file {self._frames[index].name}")
        else:
            self._capture.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, image = self._capture.read()
            if not ok or image is None:
                raise UndecodableFrame(time_s, f"decoder failed at frame {index}")
        return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)

    def close(self) -> None:
        if self._capture is not None:
            self._capture.release()

    def __enter__(self) -> "VideoSource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
