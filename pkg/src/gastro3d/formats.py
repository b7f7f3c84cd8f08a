"""On-disk formats: images, binary PLY, OBJ/MTL, and the cameras manifest.

Every writer has a matching reader so exports can be round-trip tested.
All binary formats are little-endian.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExportError, InvalidInputError

# ---------------------------------------------------------------- images


def read_image(path) -> np.ndarray:
    """Read a PNG/JPEG into uint8 (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    mode = "L" if img.ndim == 2 else "RGB"
    Image.fromarray(img, mode=mode).save(Path(path))


def write_jpeg(path, image: np.ndarray, quality: int = 90) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    mode = "L" if img.ndim == 2 else "RGB"
    Image.fromarray(img, mode=mode).save(Path(path), format="JPEG", quality=quality)


def downscale_max_side(image: np.ndarray, max_side: int) -> np.ndarray:
    """Area-resample so the longer image side is at most ``max_side``."""
    h, w = image.shape[:2]
    scale = max(h, w) / max_side
    if scale <= 1.0:
        return image
    new_w, new_h = int(round(w / scale)), int(round(h / scale))
    im = Image.fromarray(image)
    return np.asarray(im.resize((new_w, new_h), Image.BILINEAR))


# ---------------------------------------------------------------- PLY

_PLY_POINT_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""

_PLY_MESH_HEADER = """ply
format binary_little_endian 1.0
element vertex {vcount}
property float x
property float y
property float z
element face {fcount}
property list uchar int vertex_indices
end_header
"""


def write_ply_points(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """Binary little-endian PLY point cloud with per-vertex RGB."""
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    if colors is None:
        colors = np.full((len(pts), 3), 200, dtype=np.uint8)
    cols = np.asarray(colors).reshape(-1, 3)
    if cols.dtype != np.uint8:
        cols = np.clip(np.rint(cols), 0, 255).astype(np.uint8)
    if len(cols) != len(pts):
        raise InvalidInputError("points/colors length mismatch")
    rec = np.zeros(
        len(pts),
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rec["red"], rec["green"], rec["blue"] = cols[:, 0], cols[:, 1], cols[:, 2]
    with open(path, "wb") as fh:
        fh.write(_PLY_POINT_HEADER.format(count=len(pts)).encode("ascii"))
        fh.write(rec.tobytes())


def read_ply_points(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a point PLY written by :func:`write_ply_points`."""
    header, payload = _split_ply(path)
    count = _ply_element_count(header, "vertex")
    rec = np.frombuffer(
        payload,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
        count=count,
    )
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return pts, cols


def write_ply_mesh(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Binary little-endian PLY triangle mesh."""
    verts = np.asarray(vertices, dtype="<f4").reshape(-1, 3)
    tris = np.asarray(faces, dtype="<i4").reshape(-1, 3)
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise InvalidInputError("face indices out of range")
    face_rec = np.zeros(len(tris), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face_rec["n"] = 3
    face_rec["idx"] = tris
    with open(path, "wb") as fh:
        fh.write(_PLY_MESH_HEADER.format(vcount=len(verts), fcount=len(tris)).encode("ascii"))
        fh.write(verts.tobytes())
        fh.write(face_rec.tobytes())


def read_ply_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    header, payload = _split_ply(path)
    vcount = _ply_element_count(header, "vertex")
    fcount = _ply_element_count(header, "face")
    verts = np.frombuffer(payload, dtype="<f4", count=vcount * 3).reshape(vcount, 3)
    face_rec = np.frombuffer(
        payload[vcount * 12 :], dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=fcount
    )
    if fcount and not np.all(face_rec["n"] == 3):
        raise InvalidInputError("non-triangular face in PLY")
    return verts.astype(np.float64), face_rec["idx"].astype(np.int64)


def _split_ply(path):
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    pos = data.find(marker)
    if pos < 0:
        raise InvalidInputError(f"{path}: not a PLY file")
    return data[: pos + len(marker)].decode("ascii"), data[pos + len(marker) :]


def _ply_element_count(header: str, element: str) -> int:
    for line in header.splitlines():
        parts = line.split()
        if len(parts) == 3 and parts[0] == "element" and parts[1] == element:
            return int(parts[2])
    raise InvalidInputError(f"PLY header lacks element {element!r}")


# ---------------------------------------------------------------- OBJ

def write_obj(
    path,
    vertices: np.ndarray,
    faces: np.ndarray,
    uvs: np.ndarray | None = None,
    mtl_name: str | None = None,
    texture_file: str | None = None,
) -> None:
    """OBJ writer; with ``uvs`` given, writes one vt per face corner.

    ``uvs`` has shape (F, 3, 2) in [0, 1]; a matching .mtl referencing
    ``texture_file`` is written next to the OBJ when ``mtl_name`` is set.
    """
    path = Path(path)
    lines = []
    if mtl_name:
        lines.append(f"mtllib {mtl_name}")
        lines.append("usemtl material0")
    for v in np.asarray(vertices, dtype=np.float64):
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    tris = np.asarray(faces, dtype=np.int64)
    if uvs is not None:
        uv = np.asarray(uvs, dtype=np.float64).reshape(-1, 2)
        for t in uv:
            lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
        for fi, f in enumerate(tris):
            c = 3 * fi
            lines.append(
                f"f {f[0] + 1}/{c + 1} {f[1] + 1}/{c + 2} {f[2] + 1}/{c + 3}"
            )
    else:
        for f in tris:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    path.write_text("\n".join(lines) + "\n")
    if mtl_name:
        mtl_lines = ["newmtl material0", "Ka 1.0 1.0 1.0", "Kd 1.0 1.0 1.0"]
        if texture_file:
            mtl_lines.append(f"map_Kd {texture_file}")
        (path.parent / mtl_name).write_text("\n".join(mtl_lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read vertices, faces, and per-corner UVs (or None) from an OBJ."""
    verts, uvs, faces, face_uvs = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            idx, tidx = [], []
            for token in parts[1:4]:
                sub = token.split("/")
                idx.append(int(sub[0]) - 1)
                if len(sub) > 1 and sub[1]:
                    tidx.append(int(sub[1]) - 1)
            faces.append(idx)
            if tidx:
                face_uvs.append(tidx)
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if face_uvs:
        uvs = np.asarray(uvs, dtype=np.float64)
        corner_uvs = uvs[np.asarray(face_uvs, dtype=np.int64)]
        return verts, faces, corner_uvs
    return verts, faces, None


# ------------------------------------------------------- cameras manifest

CAMERAS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gastro3d cameras manifest",
    "type": "object",
    "required": ["intrinsics", "frames"],
    "additionalProperties": False,
    "properties": {
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "k1", "k2", "k3", "k4", "width", "height"],
            "additionalProperties": False,
            "properties": {
                name: {"type": "number"}
                for name in ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "k4", "width", "height")
            },
        },
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "quaternion", "translation", "image"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "quaternion": {
                        "type": "array", "items": {"type": "number"},
                        "minItems": 4, "maxItems": 4,
                    },
                    "translation": {
                        "type": "array", "items": {"type": "number"},
                        "minItems": 3, "maxItems": 3,
                    },
                    "image": {"type": "string"},
                },
            },
        },
    },
}


def write_cameras_json(path, intrinsics, frames: list) -> None:
    """Write the cameras manifest.

    Args:
        intrinsics: CameraIntrinsics.
        frames: list of dicts with keys id, quaternion (w,x,y,z),
            translation, image (relative path of the frame file).
    """
    doc = {"intrinsics": intrinsics.to_dict(), "frames": frames}
    validate_cameras_manifest(doc)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_cameras_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    validate_cameras_manifest(doc)
    return doc


def validate_cameras_manifest(doc: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(doc, CAMERAS_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ExportError(f"cameras manifest invalid: {exc.message}") from exc
