"""Binary on-disk feature cache, keyed by image content hash.

File layout (little-endian): magic 'G3DF', u32 version, u32 keypoint
count, keypoint table (N, 5) float32 rows (x, y, scale, orientation,
response), descriptor block (N, 128) float32.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .sift import Keypoint

MAGIC = b"G3DF"
VERSION = 1


def image_cache_key(image: np.ndarray, params_tag: str = "") -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(image).tobytes())
    h.update(str(image.shape).encode())
    h.update(params_tag.encode())
    return h.hexdigest()


def save_features(path, keypoints: list, descriptors: np.ndarray) -> None:
    table = np.array(
        [[k.x, k.y, k.scale, k.orientation, k.response] for k in keypoints],
        dtype="<f4",
    ).reshape(len(keypoints), 5)
    desc = np.ascontiguousarray(descriptors, dtype="<f4").reshape(len(keypoints), 128)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(keypoints)))
        fh.write(table.tobytes())
        fh.write(desc.tobytes())


def load_features(path) -> tuple[list, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise InvalidInputError(f"{path}: not a feature cache file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise InvalidInputError(f"{path}: unsupported cache version {version}")
    offset = 12
    table = np.frombuffer(data, dtype="<f4", count=count * 5, offset=offset)
    table = table.reshape(count, 5).astype(np.float64)
    offset += count * 5 * 4
    desc = np.frombuffer(data, dtype="<f4", count=count * 128, offset=offset)
    desc = desc.reshape(count, 128).copy()
    keypoints = [
        Keypoint(x=row[0], y=row[1], scale=row[2], orientation=row[3], response=row[4])
        for row in table
    ]
    return keypoints, desc


class FeatureCache:
    """Directory-backed cache of detect_and_describe results."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, image: np.ndarray, params_tag: str = "") -> Path:
        return self.directory / f"{image_cache_key(image, params_tag)}.feat"

    def get(self, image: np.ndarray, params_tag: str = ""):
        path = self.path_for(image, params_tag)
        if path.exists():
            return load_features(path)
        return None

    def put(self, image: np.ndarray, keypoints, descriptors, params_tag: str = "") -> None:
        save_features(self.path_for(image, params_tag), keypoints, descriptors)
