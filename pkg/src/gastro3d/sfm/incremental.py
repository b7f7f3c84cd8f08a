"""Incremental structure-from-motion: initialization, registration,
triangulation, and the full reconstruction loop.

All randomness flows from one seed; per-stage generators are derived with
fixed tags so results do not depend on evaluation order.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..camera import project_many, unproject_many
from ..errors import (
    InitializationError,
    InsufficientDataError,
    InvalidInputError,
    RegistrationError,
)
from ..geometry import RigidPose
from ..parallel import ordered_map
from . import ba as ba_mod
from .epipolar import decompose_essential, estimate_essential_ransac
from .pnp import estimate_pose_ransac, refine_pose
from .triangulation import (
    TRIANGULATION_MIN_ANGLE_DEG,
    triangulate_rays,
    triangulation_angles_deg,
)
from .types import Reconstruction, Track, compute_stats

logger = logging.getLogger(__name__)

_STAGE_PAIR = 0xE55
_STAGE_PNP = 0x9A9


@dataclass
class SfmConfig:
    """Knobs of the incremental pipeline (defaults per the design)."""

    ransac_seed: int = 42
    max_reproj_px: float = 4.0
    epipolar_thresh_px: float = 2.0
    min_pair_matches: int = 100
    min_verify_matches: int = 30
    min_triangulation_angle_deg: float = TRIANGULATION_MIN_ANGLE_DEG
    min_pnp_correspondences: int = 15
    local_ba_iters: int = 15
    global_ba_iters: int = 40
    global_ba_every: int = 10
    init_top_candidates: int = 16
    huber_delta_px: float = 2.0
    ransac_confidence: float = 0.9999
    ransac_max_iterations: int = 10_000


@dataclass
class VerifiedPair:
    image_pair: tuple
    indices: np.ndarray          # (M, 2) inlier keypoint index pairs
    essential: np.ndarray
    n_inliers: int


def pair_rng(seed: int, a: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _STAGE_PAIR, a, b)))


def pnp_rng(seed: int, image_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _STAGE_PNP, image_id)))


def verify_pairs(match_sets, bearings: dict, intr, config: SfmConfig) -> dict:
    """Geometric verification of raw match sets via essential RANSAC.

    Returns:
        dict: image_pair -> VerifiedPair for every pair that kept at least
        8 inliers.
    """
    thresh = config.epipolar_thresh_px / (0.5 * (intr.fx + intr.fy))

    def run(ms):
        if len(ms) < config.min_verify_matches:
            return None
        a, b = ms.image_pair
        result = estimate_essential_ransac(
            bearings[a][ms.indices[:, 0]],
            bearings[b][ms.indices[:, 1]],
            pair_rng(config.ransac_seed, a, b),
            angular_threshold=thresh,
            confidence=config.ransac_confidence,
            max_iterations=config.ransac_max_iterations,
        )
        if result is None:
            return None
        e, mask = result
        if mask.sum() < 8:
            return None
        return VerifiedPair(
            image_pair=ms.image_pair,
            indices=ms.indices[mask],
            essential=e,
            n_inliers=int(mask.sum()),
        )

    results = ordered_map(run, match_sets)
    return {vp.image_pair: vp for vp in results if vp is not None}


def build_tracks(verified: dict, num_keypoints: dict) -> list:
    """Union-find track building over verified matches.

    Merges that would give a track two different keypoints in the same
    image are skipped (first-come wins, deterministic order).
    """
    offsets = {}
    total = 0
    for image_id in sorted(num_keypoints):
        offsets[image_id] = total
        total += num_keypoints[image_id]
    parent = np.arange(total, dtype=np.int64)
    members: dict[int, dict] = {}  # root -> {image_id: kp}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def node_images(root, x_img, x_kp):
        got = members.get(root)
        if got is None:
            return {x_img: x_kp}
        return got

    for pair in sorted(verified):
        vp = verified[pair]
        a, b = pair
        for ka, kb in vp.indices:
            na = offsets[a] + int(ka)
            nb = offsets[b] + int(kb)
            ra, rb = find(na), find(nb)
            if ra == rb:
                continue
            ma = members.get(ra, {a: int(ka)} if ra == na else {})
            mb = members.get(rb, {b: int(kb)} if rb == nb else {})
            if not ma:
                ma = {a: int(ka)}
            if not mb:
                mb = {b: int(kb)}
            conflict = False
            small, large = (ma, mb) if len(ma) <= len(mb) else (mb, ma)
            for img, kp in small.items():
                if large.get(img, kp) != kp:
                    conflict = True
                    break
            if conflict:
                continue
            merged = dict(large)
            merged.update(small)
            if len(ma) <= len(mb):
                parent[ra] = rb
                members[rb] = merged
                members.pop(ra, None)
            else:
                parent[rb] = ra
                members[ra] = merged
                members.pop(rb, None)

    tracks = []
    for root in sorted(members):
        obs_map = members[root]
        if len(obs_map) >= 2:
            tracks.append(Track(observations=sorted(obs_map.items())))
    return tracks


def initialize_pair(
    match_sets, features: dict, intr, config: SfmConfig | None = None, verified: dict | None = None
) -> Reconstruction:
    """Two-view initialization on the best-scoring verified pair.

    Score = inlier count x median triangulation angle (radians). The first
    camera sits at identity; the baseline has unit length.

    Args:
        match_sets: list of MatchSet (all pairs).
        features: image id -> (keypoints (N, 2), descriptors) or keypoints.
        intr: shared CameraIntrinsics.
        verified: optional precomputed verify_pairs output.

    Raises:
        InitializationError: no pair qualifies; carries the best pair seen.
    """
    config = config or SfmConfig()
    keypoints = {i: _kp_array(f) for i, f in features.items()}
    bearings = {i: unproject_many(intr, kp) if len(kp) else np.zeros((0, 3)) for i, kp in keypoints.items()}

    candidates = [ms for ms in match_sets if len(ms) >= config.min_pair_matches]
    if not candidates:
        best = max(match_sets, key=len, default=None)
        raise InitializationError(
            "no image pair has enough matches for initialization",
            best_pair=best.image_pair if best is not None else None,
        )
    if verified is None:
        thresh = config.epipolar_thresh_px / (0.5 * (intr.fx + intr.fy))
        verified = {}
        for ms in sorted(candidates, key=len, reverse=True)[: config.init_top_candidates]:
            a, b = ms.image_pair
            res = estimate_essential_ransac(
                bearings[a][ms.indices[:, 0]],
                bearings[b][ms.indices[:, 1]],
                pair_rng(config.ransac_seed, a, b),
                angular_threshold=thresh,
                confidence=config.ransac_confidence,
                max_iterations=config.ransac_max_iterations,
            )
            if res is not None:
                e, mask = res
                verified[ms.image_pair] = VerifiedPair(
                    image_pair=ms.image_pair,
                    indices=ms.indices[mask],
                    essential=e,
                    n_inliers=int(mask.sum()),
                )

    best_pair = None
    best_score = 0.0
    best_geom = None
    for pair in sorted(verified, key=lambda p: -verified[p].n_inliers)[: config.init_top_candidates]:
        vp = verified[pair]
        if vp.n_inliers < config.min_pair_matches:
            continue
        a, b = pair
        b1 = bearings[a][vp.indices[:, 0]]
        b2 = bearings[b][vp.indices[:, 1]]
        r, t, good = decompose_essential(vp.essential, b1, b2)
        if good.sum() < config.min_pair_matches:
            continue
        centers = np.stack([np.zeros(3), -(r.T @ t)])
        # triangulation angle per correspondence
        from .triangulation import triangulate_two_view

        pts, valid = triangulate_two_view(r, t, b1, b2)
        sel = good & valid
        if sel.sum() < 8:
            continue
        d1 = pts[sel]
        d2 = pts[sel] - centers[1]
        cosang = np.sum(d1 * d2, axis=1) / (
            np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1)
        )
        median_angle = float(np.median(np.arccos(np.clip(cosang, -1, 1))))
        if median_angle < np.deg2rad(config.min_triangulation_angle_deg):
            continue  # near-zero baseline (e.g. identical images)
        score = float(sel.sum()) * median_angle
        if score > best_score:
            best_score = score
            best_pair = pair
            best_geom = (r, t, vp)

    if best_pair is None:
        fallback = max(verified, key=lambda p: verified[p].n_inliers, default=None)
        raise InitializationError(
            "no pair passed two-view initialization", best_pair=fallback
        )

    a, b = best_pair
    r, t, vp = best_geom
    recon = Reconstruction(
        intrinsics=intr,
        frames={a: RigidPose.identity(), b: RigidPose(r, t)},
        tracks=[
            Track(observations=[(a, int(ka)), (b, int(kb))]) for ka, kb in vp.indices
        ],
        input_image_ids=sorted(features.keys()),
        keypoints=keypoints,
        bearings=bearings,
        gauge_pair=(a, b),
    )
    recon._max_reproj_px = config.max_reproj_px
    recon._min_tri_angle_deg = config.min_triangulation_angle_deg
    triangulate_tracks(recon)
    logger.info(
        "initialized with pair %s (%d inliers, score %.3f)", best_pair, vp.n_inliers, best_score
    )
    return recon


def _kp_array(f):
    if isinstance(f, tuple):
        f = f[0]
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 2)
    return arr


def register_next_image(
    recon: Reconstruction,
    image_id: int,
    tracks_by_image: dict,
    config: SfmConfig,
) -> RigidPose:
    """PnP registration of one image from its triangulated track overlap.

    Raises:
        RegistrationError / InsufficientDataError when support is too weak
        (caller may retry after more points appear).
    """
    corr_world, corr_bearing, corr_pixel = [], [], []
    for ti in sorted(tracks_by_image.get(image_id, ())):
        tr = recon.tracks[ti]
        if tr.point3d is None:
            continue
        for obs_img, kp in tr.observations:
            if obs_img == image_id:
                corr_world.append(tr.point3d)
                corr_bearing.append(recon.bearings[image_id][kp])
                corr_pixel.append(recon.keypoints[image_id][kp])
                break
    if len(corr_world) < config.min_pnp_correspondences:
        raise InsufficientDataError(
            f"image {image_id}: only {len(corr_world)} 2D-3D correspondences"
        )
    world = np.asarray(corr_world)
    bearing = np.asarray(corr_bearing)
    pixel = np.asarray(corr_pixel)
    angular_thresh = config.max_reproj_px / (0.5 * (recon.intrinsics.fx + recon.intrinsics.fy))
    pose, mask = estimate_pose_ransac(
        world, bearing,
        pnp_rng(config.ransac_seed, image_id),
        angular_threshold=angular_thresh,
        confidence=config.ransac_confidence,
        max_iterations=config.ransac_max_iterations,
    )
    pose = refine_pose(recon.intrinsics, pose, world[mask], pixel[mask])
    recon.frames[image_id] = pose
    logger.debug(
        "registered image %d with %d/%d inliers", image_id, int(mask.sum()), len(world)
    )
    return pose


def triangulate_tracks(recon: Reconstruction, images: dict | None = None) -> int:
    """Triangulate pending tracks with >= 2 registered observations.

    Acceptance: max pairwise ray angle >= 1.5 deg, reprojection error below
    the configured bound in every registered view, positive range in every
    view. Sets a gray color from the source image when ``images`` given.

    Returns:
        Number of newly triangulated tracks.
    """
    max_reproj = getattr(recon, "_max_reproj_px", ba_mod.MAX_REPROJ_PX)
    min_angle = getattr(recon, "_min_tri_angle_deg", TRIANGULATION_MIN_ANGLE_DEG)
    centers = {i: pose.center for i, pose in recon.frames.items()}
    rotations = {i: pose.rotation for i, pose in recon.frames.items()}

    new_count = 0
    for tr in recon.tracks:
        if tr.point3d is not None:
            continue
        obs = [(i, k) for i, k in tr.observations if i in recon.frames]
        if len(obs) < 2:
            continue
        dirs = np.stack([rotations[i].T @ recon.bearings[i][k] for i, k in obs])
        cents = np.stack([centers[i] for i in (i for i, _ in obs)])
        if triangulation_angles_deg(dirs[None, :12], np.array([len(obs)]))[0] < min_angle:
            continue
        point = triangulate_rays(cents, dirs)
        if point is None:
            continue
        ok = True
        for (i, k) in obs:
            cam_pt = recon.frames[i].transform(point)
            if float(cam_pt @ recon.bearings[i][k]) <= 0:
                ok = False
                break
            uv, valid = project_many(recon.intrinsics, cam_pt[None])
            if not valid[0] or np.linalg.norm(uv[0] - recon.keypoints[i][k]) >= max_reproj:
                ok = False
                break
        if not ok:
            continue
        tr.point3d = point
        if images is not None:
            src_img, src_kp = obs[0]
            img = images.get(src_img)
            if img is not None:
                x, y = recon.keypoints[src_img][src_kp]
                xi = int(np.clip(round(x), 0, img.shape[1] - 1))
                yi = int(np.clip(round(y), 0, img.shape[0] - 1))
                v = int(img[yi, xi]) if img.ndim == 2 else int(np.mean(img[yi, xi]))
                tr.color = (v, v, v)
        new_count += 1
    return new_count


def renormalize_scale(recon: Reconstruction) -> float:
    """Rescale the scene so the gauge pair's baseline has unit length.

    A pure gauge transform: reprojection errors are unchanged.
    """
    if recon.gauge_pair is None:
        return 1.0
    a, b = recon.gauge_pair
    if a not in recon.frames or b not in recon.frames:
        return 1.0
    baseline = np.linalg.norm(recon.frames[b].center - recon.frames[a].center)
    if baseline < 1e-12:
        return 1.0
    s = 1.0 / baseline
    for image_id, pose in list(recon.frames.items()):
        recon.frames[image_id] = RigidPose(pose.rotation, pose.translation * s)
    for tr in recon.tracks:
        if tr.point3d is not None:
            tr.point3d = tr.point3d * s
    return s


def bundle_adjust(recon, fixed=(), **kwargs):
    """Module-level alias running BA then restoring the gauge scale."""
    report = ba_mod.bundle_adjust(recon, fixed_frames=fixed, **kwargs)
    renormalize_scale(recon)
    return report


def reconstruct(images, intr, config: SfmConfig | None = None, features=None, match_sets=None):
    """Full incremental SfM over a set of single-channel images.

    Args:
        images: dict image id -> raster, or list (ids = positions).
        intr: shared CameraIntrinsics.
        config: SfmConfig; defaults used when omitted.
        features: optional precomputed {id: (keypoints, descriptors)}.
        match_sets: optional precomputed exhaustive match sets.

    Returns:
        (Reconstruction, ReconstructionStats).
    """
    from ..features import detect_and_describe, keypoint_coords, match_exhaustive

    config = config or SfmConfig()
    if isinstance(images, list):
        images = {i: img for i, img in enumerate(images)}
    image_ids = sorted(images)
    if len(image_ids) < 2:
        raise InvalidInputError("reconstruction needs at least 2 images")

    if features is None:
        detected = ordered_map(lambda i: detect_and_describe(images[i]), image_ids)
        features = {
            i: (keypoint_coords(kps), desc) for i, (kps, desc) in zip(image_ids, detected)
        }
    if match_sets is None:
        id_index = {i: pos for pos, i in enumerate(image_ids)}
        desc_list = [features[i][1] for i in image_ids]
        raw_sets = match_exhaustive(desc_list)
        # remap positional pair ids back to image ids
        for ms in raw_sets:
            ms.image_pair = (image_ids[ms.image_pair[0]], image_ids[ms.image_pair[1]])
        match_sets = raw_sets

    keypoints = {i: _kp_array(features[i]) for i in image_ids}
    bearings = {
        i: unproject_many(intr, kp) if len(kp) else np.zeros((0, 3))
        for i, kp in keypoints.items()
    }

    # geometric verification of every pair (also feeds initialization)
    verified = verify_pairs(match_sets, bearings, intr, config)
    logger.info("verified %d/%d pairs", len(verified), len(match_sets))

    recon = initialize_pair(match_sets, features, intr, config, verified=verified)
    # replace the two-view bootstrap tracks with the global track graph
    recon.tracks = build_tracks(verified, {i: len(keypoints[i]) for i in image_ids})

    tracks_by_image: dict[int, set] = {i: set() for i in image_ids}
    for ti, tr in enumerate(recon.tracks):
        for image_id, _ in tr.observations:
            tracks_by_image[image_id].add(ti)

    triangulate_tracks(recon, images)
    first_id = recon.gauge_pair[0]
    try:
        bundle_adjust(
            recon, fixed=(first_id,), max_iters=config.global_ba_iters,
            max_reproj=config.max_reproj_px, huber_delta=config.huber_delta_px,
        )
    except InsufficientDataError:
        pass

    failed: set = set()
    since_global = 0

    def correspondence_count(image_id):
        count = 0
        for ti in tracks_by_image.get(image_id, ()):
            if recon.tracks[ti].point3d is not None:
                count += 1
        return count

    while True:
        pending = [i for i in image_ids if i not in recon.frames and i not in failed]
        scored = sorted(
            ((correspondence_count(i), -i) for i in pending), reverse=True
        )
        scored = [(-neg_id, cnt) for cnt, neg_id in scored if cnt >= config.min_pnp_correspondences]
        if not scored:
            if failed and _run_global_ba(recon, config):
                failed.clear()
                since_global = 0
                triangulate_tracks(recon, images)
                # allow one more sweep; if still nothing registers we stop
                pending_retry = [i for i in image_ids if i not in recon.frames]
                if any(
                    correspondence_count(i) >= config.min_pnp_correspondences
                    for i in pending_retry
                ):
                    continue
            break

        image_id, _ = scored[0]
        try:
            register_next_image(recon, image_id, tracks_by_image, config)
        except (RegistrationError, InsufficientDataError) as exc:
            logger.debug("registration of %d failed: %s", image_id, exc)
            failed.add(image_id)
            continue

        triangulate_tracks(recon, images)
        try:
            bundle_adjust(
                recon,
                fixed=tuple(i for i in recon.frames if i != image_id),
                point_tracks=sorted(
                    ti for ti in tracks_by_image.get(image_id, ())
                    if recon.tracks[ti].point3d is not None
                ),
                max_iters=config.local_ba_iters,
                max_reproj=config.max_reproj_px,
                huber_delta=config.huber_delta_px,
            )
        except InsufficientDataError:
            pass
        since_global += 1
        if since_global >= config.global_ba_every:
            if _run_global_ba(recon, config):
                failed.clear()
                since_global = 0
                triangulate_tracks(recon, images)

    triangulate_tracks(recon, images)
    _run_global_ba(recon, config)
    stats = compute_stats(recon)
    logger.info(
        "reconstruction: %d/%d images, %d points, avg obs %.1f",
        stats.reconstructed_images, stats.input_images,
        stats.points3d, stats.average_observation,
    )
    return recon, stats


def _run_global_ba(recon, config: SfmConfig) -> bool:
    first_id = recon.gauge_pair[0] if recon.gauge_pair else recon.registered_ids()[0]
    try:
        bundle_adjust(
            recon, fixed=(first_id,), max_iters=config.global_ba_iters,
            max_reproj=config.max_reproj_px, huber_delta=config.huber_delta_px,
        )
        return True
    except InsufficientDataError:
        return False
