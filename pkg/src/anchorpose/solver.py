"""Pose recovery from dense correspondences with classical solvers.

Three routes are provided and jointly exercised by the ablation harness:

* ``solve_3d3d`` — weighted closed-form least-squares alignment of
  object-frame and camera-frame point sets (SVD with determinant
  correction, so a proper rotation is always returned);
* ``solve_2d3d`` — Gauss-Newton on pixel reprojection residuals, with the
  rotation parameterized through its continuous 6D encoding and a
  step-halving line search that keeps the objective non-increasing;
* ``solve_fused`` — joint Gauss-Newton over both residual families,
  balanced by per-family noise scales.

``ransac`` wraps either route with seeded hypothesize-and-verify outlier
rejection. All solvers are pure functions of their inputs (and seed), and
reports carry the route used as ``mode`` metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import AnchorSet, decode_points
from .correspondence import DenseMaps
from .camera_crop import crop_affine
from .geom import (
    NEAR_EPS,
    DegenerateFrame,
    Intrinsics,
    Pose,
    Rot6D,
    matrix_to_rot6d,
    rot6d_to_matrix,
)


class NoForeground(ValueError):
    """No usable correspondence cell in the maps."""


class DegenerateConfiguration(ValueError):
    """Too few or collinear points for closed-form alignment."""


class Degenerate(ValueError):
    """Too few or collinear points for reprojection solving."""


class NoConsensus(RuntimeError):
    """RANSAC found no hypothesis with at least 10% inlier support."""


@dataclass
class CorrSet:
    """Dense correspondences: object points plus camera points and/or pixels.

    ``img_pts`` are in the crop (output-cell) frame, matching the crop
    intrinsics; ``weights`` are nonnegative per-correspondence confidences.
    """

    obj_pts: np.ndarray                 # (N, 3) object frame, meters
    cam_pts: np.ndarray | None = None   # (N, 3) camera frame, meters
    img_pts: np.ndarray | None = None   # (N, 2) pixels, crop frame
    weights: np.ndarray | None = None   # (N,) nonnegative

    def __post_init__(self):
        self.obj_pts = np.ascontiguousarray(np.asarray(self.obj_pts, dtype=np.float64))
        n = len(self.obj_pts)
        if self.obj_pts.ndim != 2 or self.obj_pts.shape[1] != 3:
            raise ValueError("obj_pts must be (N, 3)")
        if self.cam_pts is None and self.img_pts is None:
            raise ValueError("need cam_pts and/or img_pts")
        if self.cam_pts is not None:
            self.cam_pts = np.ascontiguousarray(np.asarray(self.cam_pts, dtype=np.float64))
            if self.cam_pts.shape != (n, 3):
                raise ValueError("cam_pts length/shape mismatch")
        if self.img_pts is not None:
            self.img_pts = np.ascontiguousarray(np.asarray(self.img_pts, dtype=np.float64))
            if self.img_pts.shape != (n, 2):
                raise ValueError("img_pts length/shape mismatch")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (n,):
                raise ValueError("weights length mismatch")
        if not np.all(np.isfinite(self.weights)) or self.weights.min() < 0:
            raise ValueError("weights must be finite and >= 0")
        if not self.weights.sum() > 0:
            raise ValueError("weights must not all be zero")

    def __len__(self) -> int:
        return len(self.obj_pts)

    def subset(self, indices) -> "CorrSet":
        idx = np.asarray(indices)
        return CorrSet(
            self.obj_pts[idx],
            None if self.cam_pts is None else self.cam_pts[idx],
            None if self.img_pts is None else self.img_pts[idx],
            self.weights[idx],
        )


@dataclass
class SolveReport:
    pose: Pose
    inlier_count: int
    rmse: float
    iterations: int
    mode: str
    trace: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "pose": self.pose.to_json(),
            "inlier_count": int(self.inlier_count),
            "rmse": float(self.rmse),
            "iterations": int(self.iterations),
            "mode": self.mode,
        }


def extract_correspondences(maps: DenseMaps, anchors: AnchorSet,
                            mask_threshold: float = 0.5) -> CorrSet:
    """One correspondence per foreground cell with valid geometry.

    Cells must clear the mask threshold, decode to a foreground region
    class (background-class cells are dropped), and carry a valid grid
    sample. Object points come from anchor + residual decoding, weights
    from the mask value.
    """
    if maps.anchors.object_id != anchors.object_id:
        raise ValueError(
            f"maps coded against {maps.anchors.object_id!r}, got {anchors.object_id!r}"
        )
    classes = maps.region_argmax
    sel = (maps.mask > mask_threshold) & (classes < anchors.k) & maps.grids.valid
    if not sel.any():
        raise NoForeground("no cell passes mask/class/validity selection")
    obj = decode_points(classes[sel], maps.residual[sel], anchors)
    img = crop_affine(maps.grids.roi).apply(maps.grids.uv[sel])
    return CorrSet(obj, maps.grids.cam_xyz[sel].copy(), img, maps.mask[sel].copy())


def _check_spread(pts: np.ndarray, minimum: int, exc) -> None:
    """Reject sets that are too small or (near-)collinear."""
    if len(pts) < minimum:
        raise exc(f"need >= {minimum} points, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if not s[1] > 1e-9 * max(s[0], 1e-12):
        raise exc("points are (near-)collinear")


def solve_3d3d(corr: CorrSet) -> SolveReport:
    """Weighted closed-form alignment minimizing sum w ||R a + t - b||^2."""
    if corr.cam_pts is None:
        raise DegenerateConfiguration("3d-3d solving requires cam_pts")
    _check_spread(corr.obj_pts, 3, DegenerateConfiguration)
    w = corr.weights / corr.weights.sum()
    o_bar = w @ corr.obj_pts
    c_bar = w @ corr.cam_pts
    do = corr.obj_pts - o_bar
    dc = corr.cam_pts - c_bar
    h = (do * w[:, None]).T @ dc
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_bar - rot @ o_bar
    pose = Pose(rot, t)
    resid = pose.apply(corr.obj_pts) - corr.cam_pts
    rmse = float(np.sqrt((w * (resid ** 2).sum(axis=1)).sum()))
    return SolveReport(pose, len(corr), rmse, 1, "3d3d")


# ---------------------------------------------------------------------------
# Gauss-Newton machinery (rotation via Rot6D updates)

def _pack(pose: Pose) -> np.ndarray:
    r6 = matrix_to_rot6d(pose.rotation)
    return np.concatenate([r6.a1, r6.a2, pose.translation])


def _unpack(x: np.ndarray):
    rot = rot6d_to_matrix(Rot6D(x[0:3], x[3:6]))
    return rot, x[6:9]


def _canonicalize(x: np.ndarray) -> np.ndarray:
    rot, t = _unpack(x)
    return np.concatenate([rot[:, 0], rot[:, 1], t])


def _gauss_newton(residual_fn, x0: np.ndarray, max_iters: int,
                  step_tol: float = 1e-10, canonicalize=None):
    """Gauss-Newton with a step-halving line search.

    ``residual_fn`` returns a flat residual vector, or None for an invalid
    state (treated as infinite objective). The lstsq step truncates
    singular values below 1e-7 of the largest: the 6D rotation encoding is
    redundant (vector scales do not change the rotation), and finite
    differencing fills those analytically-null directions with noise that
    must not be inverted. ``canonicalize`` renormalizes the state after an
    accepted step without changing the residual. The accepted-objective
    trace is strictly decreasing. Returns (x, iterations, trace).
    """

    def objective(x):
        r = residual_fn(x)
        return (np.inf if r is None else float(r @ r)), r

    x = x0.copy()
    phi, r = objective(x)
    if not np.isfinite(phi):
        raise Degenerate("initial state is invalid")
    trace = [phi]
    n = len(x)
    iters = 0
    for it in range(max_iters):
        iters = it + 1
        jac = np.empty((len(r), n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            rp = residual_fn(xp)
            rm = residual_fn(xm)
            if rp is not None and rm is not None:
                jac[:, j] = (rp - rm) / (2.0 * h)
            elif rp is not None:
                jac[:, j] = (rp - r) / h
            elif rm is not None:
                jac[:, j] = (r - rm) / h
            else:
                jac[:, j] = 0.0
        delta = np.linalg.lstsq(jac, -r, rcond=1e-7)[0]
        alpha = 1.0
        accepted = False
        while alpha >= 2.0 ** -20:
            phi_new, r_new = objective(x + alpha * delta)
            if phi_new < phi:
                x = x + alpha * delta
                phi, r = phi_new, r_new
                trace.append(phi)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        if canonicalize is not None:
            x = canonicalize(x)
        if float(np.linalg.norm(alpha * delta)) < step_tol:
            break
    return x, iters, trace


def _project_rt(pts: np.ndarray, rot: np.ndarray, t: np.ndarray, k: Intrinsics) -> np.ndarray:
    cam = pts @ rot.T + t
    z = np.maximum(cam[:, 2], NEAR_EPS)
    return np.column_stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy])


def solve_2d3d(corr: CorrSet, k: Intrinsics, init: Pose | None = None) -> SolveReport:
    """Gauss-Newton on weighted reprojection residuals.

    The initial pose defaults to the closed-form 3d-3d solution when camera
    points are available, otherwise to identity rotation at 1 m depth.
    Hitting the iteration limit flags non-convergence via
    ``iterations == 100``; a report is still returned.
    """
    if corr.img_pts is None:
        raise Degenerate("2d-3d solving requires img_pts")
    _check_spread(corr.obj_pts, 6, Degenerate)
    if init is None:
        if corr.cam_pts is not None:
            init = solve_3d3d(corr).pose
        else:
            init = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))

    sw = np.sqrt(corr.weights)
    obj = corr.obj_pts
    img = corr.img_pts

    def residuals(x):
        try:
            rot, t = _unpack(x)
        except DegenerateFrame:
            return None
        return ((_project_rt(obj, rot, t, k) - img) * sw[:, None]).ravel()

    x, iters, trace = _gauss_newton(residuals, _pack(init), max_iters=100,
                                    canonicalize=_canonicalize)
    rot, t = _unpack(x)
    pose = Pose(rot, t)
    err = _project_rt(obj, rot, t, k) - img
    w = corr.weights / corr.weights.sum()
    rmse = float(np.sqrt((w * (err ** 2).sum(axis=1)).sum()))
    return SolveReport(pose, len(corr), rmse, iters, "2d3d", trace)


def solve_fused(corr: CorrSet, k: Intrinsics, *, sigma_m: float = 0.005,
                sigma_px: float = 1.0, seed: int = 0, init: Pose | None = None,
                ransac_tol: float = 0.01, ransac_iters: int = 128) -> SolveReport:
    """Joint Gauss-Newton over metric and reprojection residuals.

    Each correspondence contributes its 3d-3d residual scaled by 1/sigma_m
    and its pixel residual scaled by 1/sigma_px. Initialization comes from
    robust 3d-3d RANSAC unless an explicit pose is given.
    """
    if corr.cam_pts is None or corr.img_pts is None:
        raise ValueError("fused solving requires both cam_pts and img_pts")
    _check_spread(corr.obj_pts, 3, DegenerateConfiguration)
    if init is None:
        init = ransac(corr, "3d3d", inlier_tol=ransac_tol,
                      max_iters=ransac_iters, seed=seed).pose

    sw = np.sqrt(corr.weights)
    obj, cam, img = corr.obj_pts, corr.cam_pts, corr.img_pts

    def residuals(x):
        try:
            rot, t = _unpack(x)
        except DegenerateFrame:
            return None
        r_m = ((obj @ rot.T + t - cam) * (sw[:, None] / sigma_m)).ravel()
        r_px = ((_project_rt(obj, rot, t, k) - img) * (sw[:, None] / sigma_px)).ravel()
        return np.concatenate([r_m, r_px])

    x, iters, trace = _gauss_newton(residuals, _pack(init), max_iters=100,
                                    canonicalize=_canonicalize)
    rot, t = _unpack(x)
    pose = Pose(rot, t)
    r = residuals(x)
    rmse = float(np.sqrt((r @ r) / (5.0 * corr.weights.sum())))
    return SolveReport(pose, len(corr), rmse, iters, "fused", trace)


def _residual_norms(corr: CorrSet, pose: Pose, mode: str, k: Intrinsics | None) -> np.ndarray:
    if mode == "3d3d":
        return np.linalg.norm(pose.apply(corr.obj_pts) - corr.cam_pts, axis=1)
    return np.linalg.norm(
        _project_rt(corr.obj_pts, pose.rotation, pose.translation, k) - corr.img_pts,
        axis=1,
    )


def ransac(corr: CorrSet, mode: str, inlier_tol: float, max_iters: int = 256,
           seed: int = 0, k: Intrinsics | None = None) -> SolveReport:
    """Seeded hypothesize-and-verify with a final refit on the inliers.

    ``mode`` is "3d3d" (minimal sample 3, tolerance in meters) or "2d3d"
    (minimal sample 6, tolerance in pixels; requires ``k``). The iteration
    count is fixed, and the best hypothesis is chosen by (inlier count,
    lower rmse, lower hypothesis index), so results are bit-reproducible.
    """
    if mode not in ("3d3d", "2d3d"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "3d3d" and corr.cam_pts is None:
        raise DegenerateConfiguration("3d3d RANSAC requires cam_pts")
    if mode == "2d3d":
        if corr.img_pts is None:
            raise Degenerate("2d3d RANSAC requires img_pts")
        if k is None:
            raise ValueError("2d3d RANSAC requires intrinsics")
    minimal = 3 if mode == "3d3d" else 6
    n = len(corr)
    if n < minimal:
        raise (DegenerateConfiguration if mode == "3d3d" else Degenerate)(
            f"need >= {minimal} correspondences, got {n}"
        )

    rng = np.random.default_rng(seed)
    best = None  # (count, rmse, hypothesis index, pose, inlier mask)
    for it in range(max_iters):
        sample = rng.choice(n, minimal, replace=False)
        try:
            sub = corr.subset(sample)
            if mode == "3d3d":
                hyp = solve_3d3d(sub).pose
            else:
                hyp = solve_2d3d(sub, k).pose
        except (DegenerateConfiguration, Degenerate):
            continue
        norms = _residual_norms(corr, hyp, mode, k)
        inliers = norms < inlier_tol
        count = int(inliers.sum())
        if count == 0:
            continue
        rmse = float(np.sqrt((norms[inliers] ** 2).mean()))
        if best is None or (count, -rmse, -it) > (best[0], -best[1], -best[2]):
            best = (count, rmse, it, hyp, inliers)

    if best is None or best[0] / n < 0.10:
        raise NoConsensus(
            f"best inlier ratio {0 if best is None else best[0] / n:.3f} below 0.10"
        )

    count, _, _, hyp, inliers = best
    sub = corr.subset(np.nonzero(inliers)[0])
    try:
        if mode == "3d3d":
            refit = solve_3d3d(sub)
        else:
            refit = solve_2d3d(sub, k, init=hyp)
        pose, rmse = refit.pose, refit.rmse
    except (DegenerateConfiguration, Degenerate):
        pose = hyp
        norms = _residual_norms(corr, pose, mode, k)
        rmse = float(np.sqrt((norms[inliers] ** 2).mean()))
    return SolveReport(pose, count, rmse, max_iters, mode)


def pose_error(pred: Pose, gt: Pose) -> tuple[float, float]:
    """(geodesic rotation error in degrees, translation error in meters).

    The angle is arccos((trace(R_p^T R_g) - 1) / 2); below ~60 degrees it is
    evaluated through the equivalent 2*arcsin(||R_p - R_g||_F / (2*sqrt(2))),
    which stays accurate for tiny angles where arccos loses half the
    significant digits.
    """
    fro = float(np.linalg.norm(pred.rotation - gt.rotation))
    half_sin = fro / (2.0 * math.sqrt(2.0))
    if half_sin < 0.5:
        rot_deg = float(np.degrees(2.0 * np.arcsin(half_sin)))
    else:
        cos = (np.trace(pred.rotation.T @ gt.rotation) - 1.0) / 2.0
        rot_deg = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return rot_deg, float(np.linalg.norm(pred.translation - gt.translation))
