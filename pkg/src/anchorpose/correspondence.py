"""Dense per-pixel correspondence maps and their supervision losses.

Ground-truth maps are built by backprojecting a scene's depth through the
crop grid, mapping camera points into the object frame with the inverse
ground-truth pose, and residual-coding the result. A seeded corruption
stage stands in for a learned predictor's error so solver and metric
behavior can be studied under controlled noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera_crop import GridMaps, cell_sample_grid, crop_affine, make_grid_maps, read_pfm, write_pfm, Roi
from .codec import AnchorSet, encode_points
from .synth import SceneSample


class ObjectMismatch(ValueError):
    """Scene and anchor set refer to different objects."""


class ShapeMismatch(ValueError):
    """Loss inputs have inconsistent shapes."""


class NonFinite(ValueError):
    """A loss component is NaN or infinite."""


@dataclass
class DenseMaps:
    """Per-cell mask, region probabilities, anchor coords, and residuals.

    Ground-truth maps have a binary mask and one-hot region rows; corrupted
    maps keep the same layout. ``anchors`` records the coding anchor set the
    maps were built against.
    """

    mask: np.ndarray          # (R, R) float64 in [0, 1]
    region_probs: np.ndarray  # (R, R, K+1) float64, rows on the simplex
    anchor_xyz: np.ndarray    # (R, R, 3) float64, zeros for background cells
    residual: np.ndarray      # (R, R, 3) float64
    grids: GridMaps
    anchors: AnchorSet

    def __post_init__(self):
        r = self.grids.out_res
        kp1 = self.anchors.k + 1
        if self.mask.shape != (r, r):
            raise ValueError("mask shape inconsistent with grids")
        if self.region_probs.shape != (r, r, kp1):
            raise ValueError("region_probs shape inconsistent with anchors/grids")
        if self.anchor_xyz.shape != (r, r, 3) or self.residual.shape != (r, r, 3):
            raise ValueError("anchor_xyz/residual must be (R, R, 3)")
        sums = self.region_probs.sum(axis=-1)
        if self.region_probs.min() < 0 or np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("region_probs rows must be a probability simplex")

    @property
    def k(self) -> int:
        return self.anchors.k

    @property
    def region_argmax(self) -> np.ndarray:
        return np.argmax(self.region_probs, axis=-1)


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded corruption model standing in for network prediction error.

    ``residual_sigma`` is i.i.d. per-cell Gaussian noise on the residual
    plane, ``residual_bias_sigma`` a per-map constant offset (correlated
    error); ``uv_sigma`` is pixel noise in output-cell units. Defaults are
    harness conventions.
    """

    residual_sigma: float = 0.005
    label_flip_prob: float = 0.02
    mask_flip_prob: float = 0.0
    depth_sigma: float = 0.0
    seed: int = 0
    residual_bias_sigma: float = 0.0
    uv_sigma: float = 0.0

    def __post_init__(self):
        for p in (self.label_flip_prob, self.mask_flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("flip probabilities must be in [0, 1]")
        for s in (self.residual_sigma, self.depth_sigma,
                  self.residual_bias_sigma, self.uv_sigma):
            if not s >= 0.0:
                raise ValueError("noise sigmas must be >= 0")


def ground_truth_maps(scene: SceneSample, anchors: AnchorSet, roi: Roi) -> DenseMaps:
    """Supervision targets for one scene crop.

    Cells whose sample pixel is a visible object pixel get mask 1, the
    region class and residual of the camera point mapped back into the
    object frame, and that class's anchor coordinate; everything else is
    background (class K).
    """
    if scene.object_id != anchors.object_id:
        raise ObjectMismatch(
            f"scene object {scene.object_id!r} != anchors object {anchors.object_id!r}"
        )
    grids = make_grid_maps(scene.depth, roi, scene.intrinsics)
    _, _, px, py, inside = cell_sample_grid(roi, scene.depth.width, scene.depth.height)
    vis = np.zeros_like(inside)
    vis[inside] = scene.vis_mask[py[inside], px[inside]]
    fg = grids.valid & vis

    r = roi.out_res
    kp1 = anchors.k + 1
    classes = np.full((r, r), anchors.k, dtype=np.intp)
    anchor_xyz = np.zeros((r, r, 3))
    residual = np.zeros((r, r, 3))
    if fg.any():
        pose = scene.gt_pose
        obj_pts = (grids.cam_xyz[fg] - pose.translation) @ pose.rotation
        idx, res = encode_points(obj_pts, anchors)
        classes[fg] = idx
        anchor_xyz[fg] = anchors.anchors[idx]
        residual[fg] = res

    return DenseMaps(
        mask=fg.astype(np.float64),
        region_probs=np.eye(kp1)[classes],
        anchor_xyz=anchor_xyz,
        residual=residual,
        grids=grids,
        anchors=anchors,
    )


def corrupt(maps: DenseMaps, noise: NoiseSpec) -> DenseMaps:
    """Apply the noise model; deterministic given ``noise.seed``.

    Draw order is fixed (residual, labels, mask, depth, uv) and every draw
    covers the full grid, so results depend only on the seed and shapes.
    """
    rng = np.random.default_rng(noise.seed)
    r = maps.grids.out_res
    k = maps.k
    masked = maps.mask > 0.5

    residual = maps.residual.copy()
    res_noise = rng.normal(0.0, 1.0, (r, r, 3))
    bias = rng.normal(0.0, 1.0, 3)
    if noise.residual_sigma > 0:
        residual[masked] += noise.residual_sigma * res_noise[masked]
    if noise.residual_bias_sigma > 0:
        residual[masked] += noise.residual_bias_sigma * bias

    classes = maps.region_argmax.copy()
    flip_draw = rng.random((r, r))
    resampled = rng.integers(0, k + 1, (r, r))
    if noise.label_flip_prob > 0:
        flip = masked & (flip_draw < noise.label_flip_prob)
        classes[flip] = resampled[flip]

    mask = maps.mask.copy()
    mask_draw = rng.random((r, r))
    if noise.mask_flip_prob > 0:
        flip = mask_draw < noise.mask_flip_prob
        mask[flip] = 1.0 - mask[flip]

    cam_xyz = maps.grids.cam_xyz.copy()
    depth_noise = rng.normal(0.0, 1.0, (r, r))
    if noise.depth_sigma > 0:
        valid = maps.grids.valid
        z = cam_xyz[..., 2]
        z_new = np.maximum(z + noise.depth_sigma * depth_noise, 1e-6)
        factor = np.where(valid, z_new / np.where(valid, z, 1.0), 1.0)
        cam_xyz *= factor[..., None]

    uv = maps.grids.uv.copy()
    uv_noise = rng.normal(0.0, 1.0, (r, r, 2))
    if noise.uv_sigma > 0:
        a = crop_affine(maps.grids.roi)
        uv[..., 0] += (noise.uv_sigma / a.scale_u) * uv_noise[..., 0]
        uv[..., 1] += (noise.uv_sigma / a.scale_v) * uv_noise[..., 1]

    anchor_xyz = np.zeros((r, r, 3))
    fg = classes < k
    anchor_xyz[fg] = maps.anchors.anchors[classes[fg]]

    return DenseMaps(
        mask=mask,
        region_probs=np.eye(k + 1)[classes],
        anchor_xyz=anchor_xyz,
        residual=residual,
        grids=GridMaps(uv, cam_xyz, maps.grids.valid.copy(), maps.grids.roi),
        anchors=maps.anchors,
    )


# ---------------------------------------------------------------------------
# Losses

def loss_mask(pred_mask, gt_mask) -> float:
    """Mean absolute difference over all cells."""
    pred = np.asarray(pred_mask, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    return float(np.abs(pred - gt).mean())


def loss_coarse(pred_probs, gt_classes, pred_mask) -> float:
    """Mask-gated cross-entropy of the region classification.

    Predicted probabilities are multiplied by the predicted mask value
    (no renormalization) and clamped to 1e-12 before the log; the mean runs
    over cells with nonzero mask so the loss is exactly 0 when prediction
    equals ground truth (zero-mask cells would otherwise each contribute
    -log of the clamp). Returns 0 when no cell is masked.
    """
    probs = np.asarray(pred_probs, dtype=np.float64)
    classes = np.asarray(gt_classes)
    mask = np.asarray(pred_mask, dtype=np.float64)
    if probs.shape[:-1] != classes.shape or mask.shape != classes.shape:
        raise ShapeMismatch(
            f"probs {probs.shape}, classes {classes.shape}, mask {mask.shape}"
        )
    sel = mask > 0
    if not sel.any():
        return 0.0
    p = np.take_along_axis(probs, classes[..., None].astype(np.intp), axis=-1)[..., 0]
    p = np.maximum(p[sel] * mask[sel], 1e-12)
    return float(-np.log(p).mean())


def loss_fine(pred_residual, gt_residual, mask) -> float:
    """Mean (mask-weighted) L1 residual error over masked cells; 0 if none."""
    pred = np.asarray(pred_residual, dtype=np.float64)
    gt = np.asarray(gt_residual, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if pred.shape != gt.shape or m.shape != pred.shape[:-1]:
        raise ShapeMismatch(f"pred {pred.shape}, gt {gt.shape}, mask {m.shape}")
    sel = m > 0
    if not sel.any():
        return 0.0
    l1 = np.abs(pred - gt).sum(axis=-1)
    return float((m[sel] * l1[sel]).mean())


def loss_total(l_coarse: float, l_fine: float, l_mask: float, l_pose: float) -> float:
    """Unweighted sum of the four supervision terms."""
    terms = (l_coarse, l_fine, l_mask, l_pose)
    for t in terms:
        if not math.isfinite(t):
            raise NonFinite(f"loss component {t!r} is not finite")
    return float(sum(terms))


def write_loss_csv(rows, path) -> None:
    """Rows of (scene_id, loss_mask, loss_coarse, loss_fine, loss_total)."""
    lines = ["scene_id,loss_mask,loss_coarse,loss_fine,loss_total"]
    for scene_id, lm, lc, lf, lt in rows:
        vals = ",".join("" if v is None else repr(float(v)) for v in (lm, lc, lf, lt))
        lines.append(f"{scene_id},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Directory serialization: PFM planes plus a JSON manifest

MAPS_FORMAT = "anchorpose-maps-v1"


def save_dense_maps(maps: DenseMaps, dirpath, extra: dict | None = None) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    planes = {
        "mask": "mask.pfm",
        "residual": "residual.pfm",
        "anchor_xyz": "anchor_xyz.pfm",
        "uv": "uv.pfm",
        "cam_xyz": "cam_xyz.pfm",
        "valid": "valid.pfm",
        "region": [f"region_{i:03d}.pfm" for i in range(maps.k + 1)],
    }
    write_pfm(d / planes["mask"], maps.mask)
    write_pfm(d / planes["residual"], maps.residual)
    write_pfm(d / planes["anchor_xyz"], maps.anchor_xyz)
    uv3 = np.concatenate([maps.grids.uv, np.zeros(maps.grids.uv.shape[:2] + (1,))], axis=-1)
    write_pfm(d / planes["uv"], uv3)
    write_pfm(d / planes["cam_xyz"], maps.grids.cam_xyz)
    write_pfm(d / planes["valid"], maps.grids.valid.astype(np.float64))
    for i, name in enumerate(planes["region"]):
        write_pfm(d / name, maps.region_probs[..., i])
    manifest = {
        "format": MAPS_FORMAT,
        "res": maps.grids.out_res,
        "k": maps.k,
        "anchors": maps.anchors.to_json(),
        "roi": maps.grids.roi.to_json(),
        "planes": planes,
    }
    if extra:
        manifest.update(extra)
    with open(d / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dense_maps(dirpath):
    """Returns (DenseMaps, manifest dict). Region rows are renormalized to
    absorb float32 storage quantization."""
    d = Path(dirpath)
    with open(d / "manifest.json") as f:
        manifest = json.load(f)
    if manifest.get("format") != MAPS_FORMAT:
        raise ValueError(f"unexpected maps format {manifest.get('format')!r}")
    planes = manifest["planes"]
    anchors = AnchorSet.from_json(manifest["anchors"])
    roi = Roi.from_json(manifest["roi"])
    mask = read_pfm(d / planes["mask"])
    residual = read_pfm(d / planes["residual"])
    anchor_xyz = read_pfm(d / planes["anchor_xyz"])
    uv = read_pfm(d / planes["uv"])[..., :2]
    cam_xyz = read_pfm(d / planes["cam_xyz"])
    valid = read_pfm(d / planes["valid"]) > 0.5
    region = np.stack([read_pfm(d / name) for name in planes["region"]], axis=-1)
    region = np.maximum(region, 0.0)
    region /= np.maximum(region.sum(axis=-1, keepdims=True), 1e-300)
    cam_xyz[~valid] = 0.0
    grids = GridMaps(uv, cam_xyz, valid, roi)
    return DenseMaps(mask, region, anchor_xyz, residual, grids, anchors), manifest
