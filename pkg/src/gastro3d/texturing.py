"""Best-view selection per triangle and texture atlas baking."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import bilinear_sample, project_many
from .errors import ExportError, InvalidInputError
from .formats import write_image, write_obj
from .mesh import TriangleMesh

logger = logging.getLogger(__name__)

NONE_VIEW = -1
MAGENTA = (255, 0, 255)
DEFAULT_TEXEL_BUDGET = 1024
_GUTTER = 2
_MIN_CHART = 4
_MAX_CHART = 192


@dataclass
class ViewAssignment:
    """Per-triangle source view (NONE_VIEW where no candidate exists)."""

    view_ids: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.view_ids)


@dataclass
class TexturedMesh:
    mesh: TriangleMesh
    uvs: np.ndarray        # (F, 3, 2) in [0, 1]^2
    atlas: np.ndarray      # (S, S, 3) uint8
    assignments: ViewAssignment


def view_score(cos_angle, distance, angle_exp: float = 1.0, dist_exp: float = 2.0):
    """Scoring rule: frontal and close wins; exponents configurable."""
    return cos_angle**angle_exp / np.maximum(distance, 1e-300) ** dist_exp


def select_views(
    mesh: TriangleMesh,
    recon,
    occlusion: bool = False,
    angle_exp: float = 1.0,
    dist_exp: float = 2.0,
) -> ViewAssignment:
    """Choose the best registered view for every triangle.

    A view is a candidate when all 3 vertices project inside its image
    with positive depth and the triangle faces the camera; the score is
    cos(triangle-to-camera angle) over squared distance. Ties break to the
    lowest image id. With ``occlusion`` on, the segment from the camera
    center to the triangle centroid must reach the triangle unobstructed.
    """
    if len(mesh) == 0:
        raise InvalidInputError("select_views needs a non-empty mesh")
    if not recon.frames:
        raise InvalidInputError("select_views needs registered frames")
    intr = recon.intrinsics
    centroids = mesh.face_centroids()
    normals = mesh.face_normals()
    f = len(mesh)
    best_scores = np.full(f, -np.inf)
    best_views = np.full(f, NONE_VIEW, dtype=np.int64)

    bvh = None
    if occlusion:
        from .raycast import TriangleBVH

        bvh = TriangleBVH(mesh.vertices, mesh.triangles)

    for image_id in sorted(recon.frames):
        pose = recon.frames[image_id]
        cam_verts = pose.transform(mesh.vertices)
        uv, valid = project_many(intr, cam_verts)
        inside = (
            valid
            & (uv[:, 0] >= 0) & (uv[:, 0] < intr.width)
            & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
            & (cam_verts[:, 2] > 0)
        )
        face_ok = inside[mesh.triangles].all(axis=1)
        center = pose.center
        to_cam = center - centroids
        dist = np.linalg.norm(to_cam, axis=1)
        cos_angle = np.sum(normals * to_cam, axis=1) / np.maximum(dist, 1e-300)
        face_ok &= cos_angle > 0
        if occlusion and face_ok.any():
            rows = np.nonzero(face_ok)[0]
            origins = np.broadcast_to(center, (len(rows), 3))
            dirs = centroids[rows] - center
            t_hit, tri_hit = bvh.nearest_hit(
                origins, dirs, t_max=np.full(len(rows), 1.0 - 1e-6),
                exclude=np.asarray(rows),
            )
            blocked = tri_hit >= 0
            face_ok[rows[blocked]] = False
        scores = view_score(cos_angle, dist, angle_exp, dist_exp)
        better = face_ok & (scores > best_scores)
        best_scores[better] = scores[better]
        best_views[better] = image_id

    best_scores[best_views == NONE_VIEW] = 0.0
    n_assigned = int(np.sum(best_views != NONE_VIEW))
    logger.info("view selection: %d/%d triangles assigned", n_assigned, f)
    return ViewAssignment(view_ids=best_views, scores=best_scores)


def _chart_sizes(mesh, assignments, recon) -> np.ndarray:
    """Chart inner edge (texels) per triangle, from projected area."""
    intr = recon.intrinsics
    edges = np.zeros(len(mesh), dtype=np.int64)
    for image_id in sorted(recon.frames):
        sel = np.nonzero(assignments.view_ids == image_id)[0]
        if len(sel) == 0:
            continue
        pose = recon.frames[image_id]
        tris = mesh.triangles[sel]
        cam = pose.transform(mesh.vertices)
        uv, _ = project_many(intr, cam)
        a = uv[tris[:, 0]]
        b = uv[tris[:, 1]]
        c = uv[tris[:, 2]]
        area = 0.5 * np.abs(
            (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
            - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
        )
        edges[sel] = np.clip(
            np.ceil(np.sqrt(2.0 * np.maximum(area, 1.0))), _MIN_CHART, _MAX_CHART
        ).astype(np.int64)
    return edges


def _shelf_pack(cell_sizes: np.ndarray, atlas_size: int):
    """Shelf packer; returns (x, y) per cell or raises with needed budget.

    Cells are placed in order of decreasing size (ties by index), each
    occupying cell_size x cell_size texels including gutters.
    """
    order = np.lexsort((np.arange(len(cell_sizes)), -cell_sizes))
    pos = np.zeros((len(cell_sizes), 2), dtype=np.int64)
    x = y = shelf_h = 0
    for idx in order:
        s = int(cell_sizes[idx])
        if s > atlas_size:
            raise ExportError(f"atlas overflow: a chart needs {s} texels per side")
        if x + s > atlas_size:
            y += shelf_h
            x = shelf_h = 0
        if y + s > atlas_size:
            used = y + s
            needed = 1 << int(np.ceil(np.log2(used)))
            # conservatively double until the remaining area plausibly fits
            raise ExportError(
                f"atlas overflow at {atlas_size} texels; retry with a budget of "
                f"at least {max(needed, atlas_size * 2)}"
            )
        pos[idx] = (x, y)
        x += s
        shelf_h = max(shelf_h, s)
    return pos


def bake_atlas(
    mesh: TriangleMesh,
    assignments: ViewAssignment,
    recon,
    images: dict,
    texel_budget: int = DEFAULT_TEXEL_BUDGET,
) -> TexturedMesh:
    """Bake per-triangle charts into one RGB atlas.

    Each assigned triangle receives a right-triangle chart sized by its
    projected area; texels are filled by mapping chart barycentrics onto
    the surface and sampling the assigned view bilinearly. Chart squares
    are filled wall-to-wall (clamped barycentrics), which doubles as
    gutter dilation. Unassigned triangles share a magenta marker chart.

    Raises:
        ExportError: charts do not fit the texel budget (message names a
            sufficient budget), or a source image is missing.
    """
    intr = recon.intrinsics
    f = len(mesh)
    if len(assignments) != f:
        raise InvalidInputError("assignment/mesh size mismatch")
    assigned = assignments.view_ids != NONE_VIEW
    for image_id in np.unique(assignments.view_ids[assigned]):
        if int(image_id) not in images:
            raise ExportError(f"missing source image for view {int(image_id)}")

    edges = _chart_sizes(mesh, assignments, recon)
    edges[~assigned] = 0
    cells = np.where(assigned, edges + 2 * _GUTTER, 0)

    # one shared marker chart for unassigned faces, packed first
    marker_cell = _MIN_CHART + 2 * _GUTTER
    sizes = np.concatenate([[marker_cell], cells])
    pos = _shelf_pack(sizes, texel_budget)
    marker_pos = pos[0]
    chart_pos = pos[1:]

    atlas = np.zeros((texel_budget, texel_budget, 3), dtype=np.uint8)
    atlas[:, :] = MAGENTA

    uvs = np.zeros((f, 3, 2))
    inv_size = 1.0 / texel_budget

    marker_inner = marker_pos + _GUTTER
    marker_uv = (marker_inner + np.array([1.0, 1.0])) * inv_size
    uvs[~assigned] = marker_uv  # all three corners at the marker texel

    for fi in np.nonzero(assigned)[0]:
        image_id = int(assignments.view_ids[fi])
        img = images[image_id]
        pose = recon.frames[image_id]
        edge = int(edges[fi])
        x0, y0 = chart_pos[fi] + _GUTTER

        # inner right triangle: v0 -> (x0, y0), v1 -> (x0+edge, y0),
        # v2 -> (x0, y0+edge); fill the full inner square with clamped
        # barycentrics so the gutter inherits edge colors
        tx, ty = np.meshgrid(np.arange(edge + 1), np.arange(edge + 1))
        bu = tx.ravel() / edge          # along v0 -> v1
        bv = ty.ravel() / edge          # along v0 -> v2
        scale = np.maximum(bu + bv, 1.0)
        bu = bu / scale
        bv = bv / scale
        w0 = 1.0 - bu - bv
        tri = mesh.triangles[fi]
        pts = (
            w0[:, None] * mesh.vertices[tri[0]]
            + bu[:, None] * mesh.vertices[tri[1]]
            + bv[:, None] * mesh.vertices[tri[2]]
        )
        uv_img, valid = project_many(intr, pose.transform(pts))
        uv_img[~valid] = -1e9
        colors = bilinear_sample(img.astype(np.float64), uv_img, fill=0.0)
        block = colors.reshape(edge + 1, edge + 1, 3)
        atlas[y0 : y0 + edge + 1, x0 : x0 + edge + 1] = np.clip(
            np.rint(block), 0, 255
        ).astype(np.uint8)

        uvs[fi, 0] = (x0, y0)
        uvs[fi, 1] = (x0 + edge, y0)
        uvs[fi, 2] = (x0, y0 + edge)
        uvs[fi] = (uvs[fi] + 0.5) * inv_size

    # OBJ texture space has v pointing up; flip here once
    uvs[:, :, 1] = 1.0 - uvs[:, :, 1]
    logger.info(
        "baked %d charts into %dx%d atlas", int(assigned.sum()), texel_budget, texel_budget
    )
    return TexturedMesh(mesh=mesh, uvs=uvs, atlas=atlas, assignments=assignments)


def export_textured_mesh(out_dir, textured: TexturedMesh, basename: str = "mesh") -> dict:
    """Write OBJ + MTL + PNG atlas + assignment table; returns file map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obj = out_dir / f"{basename}.obj"
    mtl_name = f"{basename}.mtl"
    atlas_name = f"{basename}_atlas.png"
    write_obj(
        obj,
        textured.mesh.vertices,
        textured.mesh.triangles,
        uvs=textured.uvs,
        mtl_name=mtl_name,
        texture_file=atlas_name,
    )
    write_image(out_dir / atlas_name, textured.atlas)
    table = {
        "view_ids": textured.assignments.view_ids.tolist(),
        "scores": textured.assignments.scores.tolist(),
    }
    (out_dir / f"{basename}_assignments.json").write_text(json.dumps(table) + "\n")
    return {
        "obj": str(obj),
        "mtl": str(out_dir / mtl_name),
        "atlas": str(out_dir / atlas_name),
        "assignments": str(out_dir / f"{basename}_assignments.json"),
    }
