"""Frame ingestion, channel separation, and near-duplicate removal."""

import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .formats import read_image, write_image

logger = logging.getLogger(__name__)

CHANNEL_TAGS = ("red", "green", "blue", "rgb")
DEFAULT_DEDUP_TAU = 2.0


@dataclass(frozen=True)
class FrameRecord:
    """One frame of a sequence.

    Attributes:
        index: Source frame index, strictly increasing within a sequence.
        image: (H, W) or (H, W, 3) uint8 raster.
        channel_tag: Which channel this raster holds.
        source_id: Identifier of the originating sequence.
    """

    index: int
    image: np.ndarray
    channel_tag: str = "rgb"
    source_id: str = ""

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInputError("frame index must be >= 0")
        if self.channel_tag not in CHANNEL_TAGS:
            raise InvalidInputError(f"unknown channel tag {self.channel_tag!r}")
        img = np.asarray(self.image)
        if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
            raise InvalidInputError("image must be (H, W) or (H, W, 3)")
        object.__setattr__(self, "image", img)


def split_channels(frame: FrameRecord) -> tuple[FrameRecord, FrameRecord, FrameRecord]:
    """Separate an RGB frame into three planar single-channel frames."""
    if frame.image.ndim != 3:
        raise InvalidInputError("split_channels needs a 3-channel frame")
    out = []
    for ci, tag in enumerate(("red", "green", "blue")):
        out.append(replace(frame, image=np.ascontiguousarray(frame.image[:, :, ci]), channel_tag=tag))
    return tuple(out)


def merge_channels(red: FrameRecord, green: FrameRecord, blue: FrameRecord) -> FrameRecord:
    """Inverse of :func:`split_channels` (used by round-trip tests)."""
    img = np.stack([red.image, green.image, blue.image], axis=2)
    return replace(red, image=img, channel_tag="rgb")


def _downsample4(image: np.ndarray) -> np.ndarray:
    """4x4 block mean of a single-channel plane (trailing remainder cropped)."""
    h, w = image.shape[:2]
    h4, w4 = (h // 4) * 4, (w // 4) * 4
    if h4 == 0 or w4 == 0:
        return image.astype(np.float64)
    block = image[:h4, :w4].astype(np.float64)
    return block.reshape(h4 // 4, 4, w4 // 4, 4).mean(axis=(1, 3))


def _as_plane(image: np.ndarray) -> np.ndarray:
    return image.mean(axis=2) if image.ndim == 3 else image


def dedup_frames(frames: list, tau: float = DEFAULT_DEDUP_TAU) -> list:
    """Drop frames whose mean absolute difference to the last kept frame is
    below ``tau`` (8-bit intensity units, measured on a 4x-downsampled plane).

    Frame 0 is always kept; a difference of exactly ``tau`` keeps the frame.
    """
    if not frames:
        raise InvalidInputError("dedup_frames needs a non-empty sequence")
    if tau < 0:
        raise InvalidInputError("tau must be >= 0")
    shape = frames[0].image.shape
    for f in frames:
        if f.image.shape != shape:
            raise InvalidInputError("all frames must share dimensions")
    kept = [frames[0]]
    last_plane = _downsample4(_as_plane(frames[0].image))
    for frame in frames[1:]:
        plane = _downsample4(_as_plane(frame.image))
        if np.mean(np.abs(plane - last_plane)) >= tau:
            kept.append(frame)
            last_plane = plane
    logger.debug("dedup kept %d/%d frames (tau=%.3g)", len(kept), len(frames), tau)
    return kept


def select_range(frames: list, begin: int, end: int) -> list:
    """Half-open slice [begin, end) with explicit bounds checking."""
    if not (0 <= begin <= end <= len(frames)):
        raise InvalidInputError(
            f"range [{begin}, {end}) invalid for sequence of length {len(frames)}"
        )
    return list(frames[begin:end])


_FRAME_RE = re.compile(r"frame_(\d{6})\.png$")


def load_frame_dir(directory, source_id: str = "") -> list:
    """Load frames named frame_%06d.png, sorted by their encoded index."""
    directory = Path(directory)
    records = []
    for path in sorted(directory.glob("frame_*.png")):
        m = _FRAME_RE.search(path.name)
        if not m:
            continue
        img = read_image(path)
        records.append(
            FrameRecord(
                index=int(m.group(1)),
                image=img,
                channel_tag="rgb" if img.ndim == 3 else "red",
                source_id=source_id or directory.name,
            )
        )
    if not records:
        raise InvalidInputError(f"no frame_%06d.png files found in {directory}")
    return records


def run_preprocess(
    input_dir,
    output_dir,
    channel: str = "red",
    tau: float = DEFAULT_DEDUP_TAU,
    begin: int = 0,
    end: int | None = None,
) -> dict:
    """Full preprocessing pass: load, slice, channel-select, dedup, save.

    Writes single-channel PNGs named like the inputs plus a manifest JSON
    listing the kept indices. Returns the manifest dictionary.
    """
    frames = load_frame_dir(input_dir)
    frames = select_range(frames, begin, end if end is not None else len(frames))
    if channel not in ("red", "green", "blue"):
        raise InvalidInputError(f"channel must be red/green/blue, got {channel!r}")
    plane_idx = ("red", "green", "blue").index(channel)
    planar = []
    for f in frames:
        if f.image.ndim == 3:
            planar.append(split_channels(f)[plane_idx])
        elif f.channel_tag == channel:
            planar.append(f)
        else:
            raise InvalidInputError(
                f"frame {f.index} holds channel {f.channel_tag!r}, wanted {channel!r}"
            )
    kept = dedup_frames(planar, tau)

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for f in kept:
        write_image(output_dir / f"frame_{f.index:06d}.png", f.image)
    manifest = {
        "channel": channel,
        "tau": tau,
        "input_count": len(frames),
        "kept_indices": [f.index for f in kept],
    }
    (output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    logger.info(
        "preprocess: %d -> %d frames (%s channel, tau=%.3g)",
        len(frames), len(kept), channel, tau,
    )
    return manifest
