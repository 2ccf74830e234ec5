"""Video clip container and the raw-clip (.vclip) file format.

A .vclip file is: magic b"VCLP", u32 version, u32 T, u32 H, u32 W,
u32 channels, f64 fps (little-endian), then T*H*W*channels float32
pixels in row-major order.  No video codec involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import VitTadError

CLIP_MAGIC = b"VCLP"
CLIP_VERSION = 1


@dataclass
class VideoClip:
    """Dense frame volume (T, H, W, 3) float with a frame rate."""

    frames: np.ndarray
    fps: float
    video_id: str = ""
    origin_s: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise VitTadError(
                f"clip frames must be (T, H, W, 3), got {self.frames.shape}"
            )
        if self.fps <= 0:
            raise VitTadError("clip fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.fps


def save_clip(path: str | Path, clip: VideoClip) -> None:
    t, h, w, c = clip.frames.shape
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<IIIII", CLIP_VERSION, t, h, w, c))
        fh.write(struct.pack("<d", clip.fps))
        fh.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())


def load_clip(path: str | Path, video_id: str = "") -> VideoClip:
    blob = Path(path).read_bytes()
    if blob[:4] != CLIP_MAGIC:
        raise VitTadError(f"{path}: bad clip magic {blob[:4]!r}")
    version, t, h, w, c = struct.unpack_from("<IIIII", blob, 4)
    if version != CLIP_VERSION:
        raise VitTadError(f"{path}: unsupported clip version {version}")
    (fps,) = struct.unpack_from("<d", blob, 24)
    n = t * h * w * c
    pixels = np.frombuffer(blob, dtype="<f4", count=n, offset=32)
    if pixels.size != n:
        raise VitTadError(f"{path}: truncated clip payload")
    frames = pixels.reshape(t, h, w, c).astype(np.float64)
    return VideoClip(frames=frames, fps=fps, video_id=video_id or Path(path).stem)


def load_split(dataset_dir: str | Path, split: str) -> list[VideoClip]:
    """Load every clip of a split, ordered by index."""
    clip_dir = Path(dataset_dir) / "clips" / split
    if not clip_dir.is_dir():
        raise VitTadError(f"no such split directory: {clip_dir}")
    clips = []
    for path in sorted(clip_dir.glob("*.vclip")):
        clips.append(load_clip(path, video_id=f"{split}_{path.stem}"))
    return clips
