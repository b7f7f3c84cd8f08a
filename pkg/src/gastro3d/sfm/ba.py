"""Sparse bundle adjustment: robustified reprojection error, analytic
Jacobians, Levenberg-Marquardt with Schur-complement elimination of the
point blocks.

Pose updates are local: R <- exp(w) @ R, t <- t + dt. The normal-equation
camera system stays small (6 x #variable-cameras) and dense; the point
blocks are eliminated with batched 3x3 inverses and BSR sparse products.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..camera import project_jacobian_point, project_many
from ..errors import InsufficientDataError
from ..geometry import RigidPose, exp_so3, orthonormalize, skew_many

logger = logging.getLogger(__name__)

HUBER_DELTA_PX = 2.0
MAX_REPROJ_PX = 4.0
_INVALID_RESIDUAL = 1e3


@dataclass
class BAProblem:
    """Flattened view of the observations entering one adjustment."""

    cam_ids: list                 # registered frame ids, state order
    var_cam_local: np.ndarray     # per cam: index into variable cams or -1
    n_var: int
    track_indices: np.ndarray     # track index per point, state order
    obs_cam: np.ndarray           # (n_obs,) camera state index
    obs_pt: np.ndarray            # (n_obs,) point state index
    obs_uv: np.ndarray            # (n_obs, 2) observed pixels
    obs_track_obs: list           # (track_idx, obs position) per observation


@dataclass
class BAState:
    rotations: np.ndarray         # (C, 3, 3)
    translations: np.ndarray      # (C, 3)
    points: np.ndarray            # (P, 3)

    def copy(self) -> "BAState":
        return BAState(self.rotations.copy(), self.translations.copy(), self.points.copy())


@dataclass
class BAReport:
    initial_cost: float
    final_cost: float
    accepted_costs: list
    iterations: int
    pruned_observations: int
    converged: bool
    mean_reproj_px: float = 0.0
    warning: str | None = None


def collect_problem(recon, fixed_frames=(), point_tracks=None):
    """Assemble arrays for BA from a reconstruction.

    Args:
        recon: Reconstruction with triangulated tracks.
        fixed_frames: frame ids whose poses stay constant (gauge).
        point_tracks: optional iterable of track indices to optimize; all
            triangulated tracks otherwise.

    Returns:
        (BAProblem, BAState).

    Raises:
        InsufficientDataError: fewer than 2 registered frames or fewer
            than 10 usable tracks.
    """
    cam_ids = recon.registered_ids()
    if len(cam_ids) < 2:
        raise InsufficientDataError("bundle adjustment needs >= 2 registered frames")
    cam_index = {cid: i for i, cid in enumerate(cam_ids)}
    fixed = set(fixed_frames)
    var_cam_local = np.full(len(cam_ids), -1, dtype=np.int64)
    n_var = 0
    for i, cid in enumerate(cam_ids):
        if cid not in fixed:
            var_cam_local[i] = n_var
            n_var += 1

    if point_tracks is None:
        candidates = [ti for ti, tr in enumerate(recon.tracks) if tr.point3d is not None]
    else:
        candidates = [ti for ti in point_tracks if recon.tracks[ti].point3d is not None]

    track_indices, points = [], []
    obs_cam, obs_pt, obs_uv, obs_track_obs = [], [], [], []
    for ti in candidates:
        tr = recon.tracks[ti]
        regs = [
            (oi, image_id, kp)
            for oi, (image_id, kp) in enumerate(tr.observations)
            if image_id in cam_index
        ]
        if len(regs) < 2:
            continue
        pt_idx = len(points)
        points.append(tr.point3d)
        track_indices.append(ti)
        for oi, image_id, kp in regs:
            obs_cam.append(cam_index[image_id])
            obs_pt.append(pt_idx)
            obs_uv.append(recon.keypoints[image_id][kp])
            obs_track_obs.append((ti, oi))

    if len(points) < 10:
        raise InsufficientDataError(
            f"bundle adjustment needs >= 10 triangulated tracks, got {len(points)}"
        )

    problem = BAProblem(
        cam_ids=cam_ids,
        var_cam_local=var_cam_local,
        n_var=n_var,
        track_indices=np.asarray(track_indices, dtype=np.int64),
        obs_cam=np.asarray(obs_cam, dtype=np.int64),
        obs_pt=np.asarray(obs_pt, dtype=np.int64),
        obs_uv=np.asarray(obs_uv, dtype=np.float64),
        obs_track_obs=obs_track_obs,
    )
    state = BAState(
        rotations=np.stack([recon.frames[c].rotation for c in cam_ids]),
        translations=np.stack([recon.frames[c].translation for c in cam_ids]),
        points=np.asarray(points, dtype=np.float64),
    )
    return problem, state


def residuals(intr, problem: BAProblem, state: BAState) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation 2-vector residuals and validity mask.

    Invalid projections contribute a large constant residual so trial
    steps that push points outside the model get rejected.
    """
    cam_pts = (
        np.einsum(
            "oij,oj->oi", state.rotations[problem.obs_cam], state.points[problem.obs_pt]
        )
        + state.translations[problem.obs_cam]
    )
    uv, valid = project_many(intr, cam_pts)
    res = uv - problem.obs_uv
    res[~valid] = _INVALID_RESIDUAL
    return res, valid


def huber_weights(res: np.ndarray, delta: float = HUBER_DELTA_PX):
    """IRLS weights and robust cost for 2-vector residuals.

    rho(s) = s^2 for s <= delta, else 2*delta*s - delta^2.
    """
    s = np.linalg.norm(res, axis=1)
    w = np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-300))
    cost = np.where(s <= delta, s * s, 2.0 * delta * s - delta * delta)
    return w, float(cost.sum())


def jacobian_blocks(intr, problem: BAProblem, state: BAState):
    """Analytic per-observation Jacobians.

    Returns:
        (j_cam (n, 2, 6), j_pt (n, 2, 3), res (n, 2), valid):
        j_cam columns are (w, t) of the local pose update; invalid
        observations get zero Jacobian rows.
    """
    rot = state.rotations[problem.obs_cam]
    cam_pts = np.einsum("oij,oj->oi", rot, state.points[problem.obs_pt]) + state.translations[
        problem.obs_cam
    ]
    j_proj = project_jacobian_point(intr, cam_pts)
    uv, valid = project_many(intr, cam_pts)
    res = uv - problem.obs_uv
    res[~valid] = _INVALID_RESIDUAL
    rx = cam_pts - state.translations[problem.obs_cam]
    j_rot = -np.einsum("nij,njk->nik", j_proj, skew_many(rx))
    j_cam = np.concatenate([j_rot, j_proj], axis=2)
    j_pt = np.einsum("nij,njk->nik", j_proj, rot)
    j_cam[~valid] = 0.0
    j_pt[~valid] = 0.0
    return j_cam, j_pt, res, valid


def _solve_schur(problem, j_cam, j_pt, res, weights, lam):
    """One damped normal-equation solve; returns (delta_cam, delta_pt)."""
    n_cam = len(problem.cam_ids)
    n_pt = problem.obs_pt.max() + 1 if len(problem.obs_pt) else 0
    w = weights[:, None, None]

    var_of_obs = problem.var_cam_local[problem.obs_cam]
    has_var = var_of_obs >= 0

    # camera blocks
    u_blocks = np.zeros((problem.n_var, 6, 6))
    g_cam = np.zeros((problem.n_var, 6))
    if problem.n_var:
        jc = j_cam[has_var]
        wv = w[has_var]
        contrib = np.einsum("nij,nik->njk", jc * wv, jc)
        np.add.at(u_blocks, var_of_obs[has_var], contrib)
        gc = -np.einsum("nij,ni->nj", jc * wv, res[has_var])
        np.add.at(g_cam, var_of_obs[has_var], gc)

    # point blocks
    v_blocks = np.zeros((n_pt, 3, 3))
    g_pt = np.zeros((n_pt, 3))
    contrib_v = np.einsum("nij,nik->njk", j_pt * w, j_pt)
    np.add.at(v_blocks, problem.obs_pt, contrib_v)
    gp = -np.einsum("nij,ni->nj", j_pt * w, res)
    np.add.at(g_pt, problem.obs_pt, gp)

    # Marquardt damping on the block diagonals
    for blocks in (u_blocks, v_blocks):
        if len(blocks):
            idx = np.arange(blocks.shape[1])
            blocks[:, idx, idx] *= 1.0 + lam
            blocks[:, idx, idx] += 1e-12

    v_inv = np.linalg.inv(v_blocks) if n_pt else np.zeros((0, 3, 3))

    if problem.n_var == 0:
        delta_pt = np.einsum("pij,pj->pi", v_inv, g_pt)
        return np.zeros((0, 6)), delta_pt

    # W blocks (var cam x point), one per observation on a variable camera
    jc = j_cam[has_var]
    jp = j_pt[has_var]
    wv = w[has_var]
    w_blocks = np.einsum("nij,nik->njk", jc * wv, jp)  # (m, 6, 3)
    rows = var_of_obs[has_var]
    cols = problem.obs_pt[has_var]
    order = np.lexsort((cols, rows))
    w_blocks = w_blocks[order]
    rows_s, cols_s = rows[order], cols[order]
    indptr = np.searchsorted(rows_s, np.arange(problem.n_var + 1))
    w_bsr = sp.bsr_matrix(
        (w_blocks, cols_s, indptr), shape=(6 * problem.n_var, 3 * n_pt), blocksize=(6, 3)
    )
    vinv_bsr = sp.bsr_matrix(
        (v_inv, np.arange(n_pt), np.arange(n_pt + 1)),
        shape=(3 * n_pt, 3 * n_pt),
        blocksize=(3, 3),
    )
    w_vinv = w_bsr @ vinv_bsr
    schur = -np.asarray((w_vinv @ w_bsr.T).todense())
    for i in range(problem.n_var):
        schur[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] += u_blocks[i]
    rhs = g_cam.ravel() - w_vinv @ g_pt.ravel()

    try:
        delta_cam = np.linalg.solve(schur, rhs).reshape(problem.n_var, 6)
    except np.linalg.LinAlgError:
        delta_cam = np.linalg.lstsq(schur, rhs, rcond=None)[0].reshape(problem.n_var, 6)

    wt_dc = w_bsr.T @ delta_cam.ravel()
    delta_pt = np.einsum("pij,pj->pi", v_inv, g_pt - wt_dc.reshape(n_pt, 3))
    return delta_cam, delta_pt


def _apply_delta(problem, state: BAState, delta_cam, delta_pt) -> BAState:
    new = state.copy()
    for ci in range(len(problem.cam_ids)):
        vi = problem.var_cam_local[ci]
        if vi < 0:
            continue
        new.rotations[ci] = exp_so3(delta_cam[vi, :3]) @ state.rotations[ci]
        new.translations[ci] = state.translations[ci] + delta_cam[vi, 3:]
    new.points = state.points + delta_pt
    return new


def optimize(
    intr,
    problem: BAProblem,
    state: BAState,
    max_iters: int = 50,
    lambda0: float = 1e-4,
    cost_tol: float = 1e-10,
    huber_delta: float = HUBER_DELTA_PX,
):
    """LM loop over the BA problem; cost is the Huber-robust total.

    Returns:
        (final BAState, BAReport without pruning info).
    """
    res, _ = residuals(intr, problem, state)
    weights, cost = huber_weights(res, huber_delta)
    initial_cost = cost
    accepted = [cost]
    lam = lambda0
    converged = False
    warning = None
    it = 0
    for it in range(1, max_iters + 1):
        j_cam, j_pt, res, _ = jacobian_blocks(intr, problem, state)
        weights, cost = huber_weights(res, huber_delta)
        improved = False
        for _ in range(12):
            delta_cam, delta_pt = _solve_schur(problem, j_cam, j_pt, res, weights, lam)
            trial = _apply_delta(problem, state, delta_cam, delta_pt)
            res_t, _ = residuals(intr, problem, trial)
            _, cost_t = huber_weights(res_t, huber_delta)
            if np.isfinite(cost_t) and cost_t < cost:
                rel = (cost - cost_t) / max(cost, 1e-300)
                state = trial
                cost = cost_t
                accepted.append(cost)
                lam = max(lam / 10.0, 1e-12)
                improved = True
                if rel < cost_tol:
                    converged = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not improved:
            converged = len(accepted) > 1
            if not converged:
                warning = "no acceptable LM step from the initial state"
            break
        if converged:
            break

    report = BAReport(
        initial_cost=initial_cost,
        final_cost=cost,
        accepted_costs=accepted,
        iterations=it,
        pruned_observations=0,
        converged=converged,
        warning=warning,
    )
    return state, report


def bundle_adjust(
    recon,
    fixed_frames=(),
    point_tracks=None,
    max_iters: int = 50,
    max_reproj: float = MAX_REPROJ_PX,
    huber_delta: float = HUBER_DELTA_PX,
) -> BAReport:
    """Adjust poses and points in place, then prune bad observations.

    Gauge-fixed frames keep their poses; after convergence, observations
    whose reprojection error exceeds ``max_reproj`` (or that lost
    projection validity / positive range) are removed, and tracks left
    with fewer than 2 registered observations lose their 3D point.
    """
    problem, state = collect_problem(recon, fixed_frames, point_tracks)
    state, report = optimize(
        recon.intrinsics, problem, state, max_iters=max_iters, huber_delta=huber_delta
    )

    for ci, cid in enumerate(problem.cam_ids):
        if problem.var_cam_local[ci] >= 0:
            recon.frames[cid] = RigidPose(
                orthonormalize(state.rotations[ci]), state.translations[ci]
            )
    for pi, ti in enumerate(problem.track_indices):
        recon.tracks[ti].point3d = state.points[pi]

    # prune observations that no longer reproject acceptably
    res, valid = residuals(recon.intrinsics, problem, state)
    err = np.linalg.norm(res, axis=1)
    cam_pts = (
        np.einsum("oij,oj->oi", state.rotations[problem.obs_cam], state.points[problem.obs_pt])
        + state.translations[problem.obs_cam]
    )
    ranges = np.sum(cam_pts * _obs_bearings(recon, problem), axis=1)
    bad = (~valid) | (err > max_reproj) | (ranges <= 0)
    report.mean_reproj_px = float(err[~bad].mean()) if np.any(~bad) else 0.0

    to_remove = {}
    for oi in np.nonzero(bad)[0]:
        ti, obs_pos = problem.obs_track_obs[oi]
        to_remove.setdefault(ti, set()).add(obs_pos)
    pruned = 0
    for ti, positions in to_remove.items():
        tr = recon.tracks[ti]
        tr.observations = [o for i, o in enumerate(tr.observations) if i not in positions]
        pruned += len(positions)
        n_reg = sum(1 for image_id, _ in tr.observations if image_id in recon.frames)
        if n_reg < 2:
            tr.point3d = None
    report.pruned_observations = pruned
    logger.debug(
        "BA: cost %.4g -> %.4g (%d iters, %d pruned)",
        report.initial_cost, report.final_cost, report.iterations, pruned,
    )
    return report


def _obs_bearings(recon, problem: BAProblem) -> np.ndarray:
    out = np.empty((len(problem.obs_cam), 3))
    for oi, (ti, obs_pos) in enumerate(problem.obs_track_obs):
        image_id, kp = recon.tracks[ti].observations[obs_pos]
        out[oi] = recon.bearings[image_id][kp]
    return out
