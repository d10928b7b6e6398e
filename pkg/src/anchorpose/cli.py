"""Command-line front end: generate, code, corrupt, solve, evaluate, ablate.

Every subcommand is a pure function of its on-disk inputs, flags, and the
required --seed, so reruns produce byte-identical CSV/JSON outputs. The
ablation harnesses used by the subcommands are exposed as plain functions
(`ablate_anchors_rows` etc.) so they can also run on in-memory benchmarks.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import camera_crop, codec, correspondence, geom, mesh, metrics, solver, synth
from .camera_crop import adjust_intrinsics, crop_affine
from .codec import AnchorSet, build_anchor_set, load_anchor_set, save_anchor_set
from .correspondence import (
    NoiseSpec,
    corrupt,
    ground_truth_maps,
    load_dense_maps,
    loss_coarse,
    loss_fine,
    loss_mask,
    loss_total,
    save_dense_maps,
    write_loss_csv,
)
from .geom import Intrinsics, Pose
from .mesh import ObjectModel, load_registry, load_registry_model, save_registry, write_ply
from .metrics import (
    EvalRecord,
    add_metric,
    adds_metric,
    evaluate_batch,
    format_summary_table,
    write_summary_csv,
)
from .solver import (
    extract_correspondences,
    pose_error,
    ransac,
    solve_2d3d,
    solve_3d3d,
    solve_fused,
)
from .synth import SceneConfig, load_scene, make_benchmark, make_model, save_scene, tight_roi

DEFAULT_K_LIST = (1, 4, 8, 16, 32, 64, 128)


class IdMismatch(ValueError):
    """Predicted poses and ground-truth scenes disagree on ids."""


@dataclass
class RunConfig:
    """Bag of subcommand parameters filled from the parsed arguments."""

    seed: int
    out: Path
    jobs: int = 1
    params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)


# ---------------------------------------------------------------------------
# Small deterministic-output helpers

def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header: str, rows: list[list]) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _child_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Scene pipeline harness shared by solve/eval/ablate paths

def _cap_correspondences(corr: solver.CorrSet, max_n: int) -> solver.CorrSet:
    if len(corr) <= max_n:
        return corr
    idx = np.unique(np.round(np.linspace(0, len(corr) - 1, max_n)).astype(np.intp))
    return corr.subset(idx)


def _failure_record(model: ObjectModel) -> EvalRecord:
    d = model.diameter
    return EvalRecord(model.id, d, d, 180.0, d, d, model.symmetric)


def scene_eval_record(model: ObjectModel, anchors: AnchorSet, scene: synth.SceneSample,
                      *, res: int, noise: NoiseSpec, mode: str,
                      intrinsic: str = "crop", sigma_m: float = 0.005,
                      sigma_px: float = 1.0, solver_seed: int = 0,
                      max_corr: int = 800) -> EvalRecord:
    """Encode, corrupt, solve, and score one scene.

    Unsolvable scenes (no foreground after corruption, degenerate sets)
    yield a deterministic worst-case record instead of raising, so sweeps
    never die half way.
    """
    roi = tight_roi(scene, res)
    maps = ground_truth_maps(scene, anchors, roi)
    noisy = corrupt(maps, noise)
    k_crop = adjust_intrinsics(scene.intrinsics, crop_affine(roi))
    try:
        corr = _cap_correspondences(extract_correspondences(noisy, anchors), max_corr)
        if mode == "3d3d":
            report = solve_3d3d(corr)
        elif mode == "2d3d":
            k_use = k_crop if intrinsic == "crop" else scene.intrinsics
            report = solve_2d3d(corr, k_use)
        elif mode == "fused":
            report = solve_fused(corr, k_crop, sigma_m=sigma_m, sigma_px=sigma_px,
                                 seed=solver_seed)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    except (solver.NoForeground, solver.DegenerateConfiguration,
            solver.Degenerate, solver.NoConsensus):
        return _failure_record(model)
    rot, trans = pose_error(report.pose, scene.gt_pose)
    return EvalRecord(
        scene.object_id,
        add_metric(model, report.pose, scene.gt_pose),
        adds_metric(model, report.pose, scene.gt_pose),
        rot, trans, model.diameter, model.symmetric,
    )


def _anchor_sweep_task(args):
    model, anchors, scene, res, noise = args
    return scene_eval_record(model, anchors, scene, res=res, noise=noise, mode="3d3d")


def ablate_anchors_rows(model: ObjectModel, scenes, *, k_list=DEFAULT_K_LIST,
                        noise_rel: float = 0.08, absolute_sigma: float | None = None,
                        seed: int = 0, res: int = 64, jobs: int = 1) -> list[list]:
    """Anchor-count sweep rows: K, covering_radius, add01d_pct, auc, deg10cm10_pct.

    The corruption scales with each anchor set's covering radius (both the
    i.i.d. and the per-scene-bias residual components), modeling prediction
    error that shrinks with the coding's output range; ``absolute_sigma``
    switches to a fixed-sigma variant for contrast. The K=1 row is the
    direct-coordinate baseline (single anchor, residual = full coordinate
    offset).
    """
    rows = []
    for k in k_list:
        anchors = build_anchor_set(model, k)
        sigma = absolute_sigma if absolute_sigma is not None else noise_rel * anchors.covering_radius
        tasks = []
        for i, scene in enumerate(scenes):
            noise = NoiseSpec(residual_sigma=sigma, label_flip_prob=0.0,
                              residual_bias_sigma=sigma,
                              seed=_child_seed(seed, k, i))
            tasks.append((model, anchors, scene, res, noise))
        records = _pmap(_anchor_sweep_task, tasks, jobs)
        summary = evaluate_batch(records)[-1]
        rows.append([str(k), anchors.covering_radius, summary["add01d_pct"],
                     summary["adds_auc_mixed"], summary["deg10cm10_pct"]])
    return rows


def _corr_sweep_task(args):
    model, anchors, scene, res, noise, mode, sigma_m, sigma_px, solver_seed = args
    rec = scene_eval_record(model, anchors, scene, res=res, noise=noise, mode=mode,
                            sigma_m=sigma_m, sigma_px=sigma_px, solver_seed=solver_seed)
    return rec


def ablate_corr_rows(model: ObjectModel, anchors: AnchorSet, scenes, *,
                     residual_sigma: float = 0.001, depth_sigma: float = 0.001,
                     uv_sigma: float = 2.0, seed: int = 0, res: int = 64,
                     jobs: int = 1) -> tuple[list[list], dict]:
    """Correspondence-family sweep: rows 2d3d, 3d3d, fused under mixed noise.

    Returns (csv rows, per-mode mean rotation/translation errors). The
    fused solver is balanced with the actual noise scales.
    """
    sigma_m = max(1e-6, math.hypot(residual_sigma, depth_sigma))
    sigma_px = max(0.25, uv_sigma)
    rows = []
    stats = {}
    for mode in ("2d3d", "3d3d", "fused"):
        tasks = []
        for i, scene in enumerate(scenes):
            noise = NoiseSpec(residual_sigma=residual_sigma, label_flip_prob=0.0,
                              depth_sigma=depth_sigma, uv_sigma=uv_sigma,
                              seed=_child_seed(seed, 17, i))
            tasks.append((model, anchors, scene, res, noise, mode,
                          sigma_m, sigma_px, _child_seed(seed, 23, i)))
        records = _pmap(_corr_sweep_task, tasks, jobs)
        summary = evaluate_batch(records)[-1]
        mean_rot = float(np.mean([r.rot_deg for r in records]))
        mean_trans = float(np.mean([r.trans_m for r in records]))
        stats[mode] = {"mean_rot_deg": mean_rot, "mean_trans_m": mean_trans}
        rows.append([mode, summary["add01d_pct"], summary["adds_auc_mixed"],
                     summary["deg10cm10_pct"], mean_rot, mean_trans])
    return rows, stats


def _k_sweep_task(args):
    model, anchors, scene, res, noise, intrinsic = args
    return scene_eval_record(model, anchors, scene, res=res, noise=noise,
                             mode="2d3d", intrinsic=intrinsic)


def ablate_k_rows(model: ObjectModel, anchors: AnchorSet, scenes, *,
                  uv_sigma: float = 0.5, seed: int = 0, res: int = 64,
                  jobs: int = 1) -> list[list]:
    """Intrinsic-adjustment sweep: reprojection solving with the raw vs the
    crop-adjusted camera matrix. Rows: k_org then k_crop."""
    rows = []
    for intrinsic in ("org", "crop"):
        tasks = []
        for i, scene in enumerate(scenes):
            noise = NoiseSpec(residual_sigma=0.0, label_flip_prob=0.0,
                              uv_sigma=uv_sigma, seed=_child_seed(seed, 29, i))
            tasks.append((model, anchors, scene, res, noise, intrinsic))
        records = _pmap(_k_sweep_task, tasks, jobs)
        summary = evaluate_batch(records)[-1]
        rows.append([f"k_{intrinsic}", summary["add01d_pct"], summary["adds_auc_mixed"],
                     summary["deg10cm10_pct"],
                     float(np.mean([r.rot_deg for r in records]))])
    return rows


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg["shape"], cfg["points"], cfg["scale"], cfg.seed)
    write_ply(out / "model.ply", model.points)
    save_registry([{
        "id": model.id, "path": "model.ply",
        "symmetric": model.symmetric, "mm_to_m": False,
    }], out / "registry.json")

    levels = cfg["occlusion_levels"]
    config = SceneConfig(
        seed=cfg.seed,
        width=cfg["width"], height=cfg["height"],
        intrinsics=Intrinsics(cfg["fx"], cfg["fy"], cfg["width"] / 2.0, cfg["height"] / 2.0),
        depth_range=tuple(cfg["depth_range"]),
        depth_sigma=cfg["depth_sigma"],
    )
    scenes = make_benchmark(model, config, cfg["scenes"], levels)
    counts = [cfg["scenes"] // len(levels)] * len(levels)
    for i in range(cfg["scenes"] % len(levels)):
        counts[i] += 1
    level_of = [lv for lv, c in zip(levels, counts) for _ in range(c)]

    entries = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:04d}"
        save_scene(scene, out / name)
        entries.append({
            "id": name, "dir": name, "object_id": scene.object_id,
            "visible_fraction": scene.visible_fraction,
            "target_level": level_of[i],
        })
    _write_json(out / "manifest.json", {
        "config": {
            "shape": cfg["shape"], "points": cfg["points"], "scale": cfg["scale"],
            "seed": cfg.seed, "width": cfg["width"], "height": cfg["height"],
            "fx": cfg["fx"], "fy": cfg["fy"], "depth_range": list(cfg["depth_range"]),
            "depth_sigma": cfg["depth_sigma"], "occlusion_levels": list(levels),
        },
        "scenes": entries,
    })
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _registry_id_for(model_path: Path):
    reg_path = model_path.parent / "registry.json"
    if reg_path.exists():
        for entry in load_registry(reg_path):
            if Path(entry["path"]).name == model_path.name:
                return entry["id"], entry.get("symmetric", False), entry.get("mm_to_m", False)
    return None


def cmd_anchors(cfg: RunConfig) -> int:
    model_path = Path(cfg["model"])
    object_id = cfg.get("object_id")
    symmetric, mm_to_m = False, cfg.get("mm_to_m", False)
    if object_id is None:
        hit = _registry_id_for(model_path)
        if hit is not None:
            object_id, symmetric, mm_to_m = hit
    model = mesh.load_ply(model_path, mm_to_m=mm_to_m, model_id=object_id,
                          symmetric=symmetric)
    anchors = build_anchor_set(model, cfg["k"])
    save_anchor_set(anchors, cfg.out)
    print(f"{anchors.k} anchors for {model.id}: covering radius "
          f"{anchors.covering_radius:.6f} m -> {cfg.out}")
    return 0


def _load_benchmark_dir(scenes_dir: Path):
    with open(scenes_dir / "manifest.json") as f:
        manifest = json.load(f)
    scenes = [(e["id"], load_scene(scenes_dir / e["dir"])) for e in manifest["scenes"]]
    registry = load_registry(scenes_dir / "registry.json")
    models = {e["id"]: load_registry_model(scenes_dir / "registry.json", e)
              for e in registry}
    return manifest, scenes, models


def cmd_encode(cfg: RunConfig) -> int:
    scenes_dir = Path(cfg["scenes"])
    anchors = load_anchor_set(cfg["anchors"])
    _, scenes, _ = _load_benchmark_dir(scenes_dir)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene_id, scene in scenes:
        roi = tight_roi(scene, cfg["res"])
        maps = ground_truth_maps(scene, anchors, roi)
        save_dense_maps(maps, out / scene_id, extra={
            "scene_id": scene_id,
            "object_id": scene.object_id,
            "intrinsics": scene.intrinsics.to_json(),
            "gt_pose": scene.gt_pose.to_json(),
        })
        entries.append({"id": scene_id, "dir": scene_id})
    _write_json(out / "manifest.json", {"maps": entries, "res": cfg["res"]})
    print(f"encoded {len(entries)} scenes -> {out}")
    return 0


def _maps_dirs(root: Path):
    if (root / "manifest.json").exists():
        with open(root / "manifest.json") as f:
            manifest = json.load(f)
        if manifest.get("format") == correspondence.MAPS_FORMAT:
            return [root]
        return [root / e["dir"] for e in manifest["maps"]]
    raise FileNotFoundError(f"no manifest.json under {root}")


def cmd_corrupt(cfg: RunConfig) -> int:
    dirs = _maps_dirs(Path(cfg["maps"]))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries, loss_rows = [], []
    for i, d in enumerate(sorted(dirs)):
        maps, manifest = load_dense_maps(d)
        noise = NoiseSpec(
            residual_sigma=cfg["residual_sigma"],
            label_flip_prob=cfg["label_flip"],
            mask_flip_prob=cfg["mask_flip"],
            depth_sigma=cfg["depth_sigma"],
            uv_sigma=cfg["uv_sigma"],
            residual_bias_sigma=cfg["residual_bias_sigma"],
            seed=_child_seed(cfg.seed, i),
        )
        noisy = corrupt(maps, noise)
        scene_id = manifest.get("scene_id", d.name)
        extra = {k: manifest[k] for k in ("scene_id", "object_id", "intrinsics", "gt_pose")
                 if k in manifest}
        save_dense_maps(noisy, out / d.name, extra=extra)
        entries.append({"id": scene_id, "dir": d.name})

        lm = loss_mask(noisy.mask, maps.mask)
        lc = loss_coarse(noisy.region_probs, maps.region_argmax, noisy.mask)
        lf = loss_fine(noisy.residual, maps.residual, maps.mask)
        lt = None
        if "gt_pose" in manifest:
            try:
                corr = extract_correspondences(noisy, maps.anchors)
                rot, trans = pose_error(solve_3d3d(corr).pose,
                                        Pose.from_json(manifest["gt_pose"]))
                lt = loss_total(lc, lf, lm, math.radians(rot) + trans)
            except (solver.NoForeground, solver.DegenerateConfiguration):
                lt = None
        loss_rows.append((scene_id, lm, lc, lf, lt))
    _write_json(out / "manifest.json", {"maps": entries})
    write_loss_csv(loss_rows, out / "losses.csv")
    print(f"corrupted {len(entries)} map sets -> {out}")
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    dirs = _maps_dirs(Path(cfg["maps"]))
    anchors = load_anchor_set(cfg["anchors"])
    results = []
    for i, d in enumerate(sorted(dirs)):
        maps, manifest = load_dense_maps(d)
        corr = extract_correspondences(maps, anchors)
        k_crop = None
        if "intrinsics" in manifest:
            k_org = Intrinsics.from_json(manifest["intrinsics"])
            k_crop = adjust_intrinsics(k_org, crop_affine(maps.grids.roi))
        mode = cfg["mode"]
        seed = _child_seed(cfg.seed, i)
        if mode == "3d3d":
            if cfg.get("ransac"):
                report = ransac(corr, "3d3d", cfg["inlier_tol"], cfg["max_iters"], seed)
            else:
                report = solve_3d3d(corr)
        elif mode == "2d3d":
            if k_crop is None:
                raise ValueError("2d3d solving needs intrinsics in the maps manifest")
            if cfg.get("ransac"):
                report = ransac(corr, "2d3d", cfg["inlier_tol"], cfg["max_iters"], seed,
                                k=k_crop)
            else:
                report = solve_2d3d(corr, k_crop)
        elif mode == "fused":
            if k_crop is None:
                raise ValueError("fused solving needs intrinsics in the maps manifest")
            report = solve_fused(corr, k_crop, sigma_m=cfg["sigma_m"],
                                 sigma_px=cfg["sigma_px"], seed=seed)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        entry = {"scene_id": manifest.get("scene_id", d.name)}
        if "object_id" in manifest:
            entry["object_id"] = manifest["object_id"]
        entry.update(report.to_json())
        results.append(entry)
    _write_json(cfg.out, results)
    print(f"solved {len(results)} map sets -> {cfg.out}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    with open(cfg["pred"]) as f:
        preds = json.load(f)
    scenes_dir = Path(cfg["scenes"])
    _, scenes, models = _load_benchmark_dir(scenes_dir)
    gt = dict(scenes)
    pred_ids = [p["scene_id"] for p in preds]
    if sorted(pred_ids) != sorted(gt):
        raise IdMismatch("prediction scene ids do not match the benchmark")
    records = []
    for p in preds:
        scene = gt[p["scene_id"]]
        if p.get("object_id", scene.object_id) != scene.object_id:
            raise IdMismatch(f"object id mismatch for scene {p['scene_id']}")
        model = models[scene.object_id]
        pose = Pose.from_json(p["pose"])
        rot, trans = pose_error(pose, scene.gt_pose)
        records.append(EvalRecord(
            scene.object_id,
            add_metric(model, pose, scene.gt_pose),
            adds_metric(model, pose, scene.gt_pose),
            rot, trans, model.diameter, model.symmetric,
        ))
    rows = evaluate_batch(records)
    write_summary_csv(rows, cfg.out)
    print(format_summary_table(rows))
    return 0


def _scenes_and_model(cfg: RunConfig):
    _, scenes, models = _load_benchmark_dir(Path(cfg["scenes"]))
    ids = {s.object_id for _, s in scenes}
    if len(ids) != 1:
        raise ValueError("ablation sweeps expect a single-object benchmark")
    model = models[ids.pop()]
    return [s for _, s in scenes], model


def cmd_ablate_anchors(cfg: RunConfig) -> int:
    scenes, model = _scenes_and_model(cfg)
    rows = ablate_anchors_rows(
        model, scenes, k_list=cfg["k_list"], noise_rel=cfg["noise_rel"],
        absolute_sigma=cfg.get("absolute_sigma"), seed=cfg.seed,
        res=cfg["res"], jobs=cfg.jobs,
    )
    _write_csv(cfg.out, "K,covering_radius,add01d_pct,auc,deg10cm10_pct", rows)
    print(f"anchor sweep ({len(rows)} rows) -> {cfg.out}")
    return 0


def cmd_ablate_corr(cfg: RunConfig) -> int:
    scenes, model = _scenes_and_model(cfg)
    anchors = build_anchor_set(model, cfg["k"])
    rows, _ = ablate_corr_rows(
        model, anchors, scenes, residual_sigma=cfg["residual_sigma"],
        depth_sigma=cfg["depth_sigma"], uv_sigma=cfg["uv_sigma"],
        seed=cfg.seed, res=cfg["res"], jobs=cfg.jobs,
    )
    _write_csv(cfg.out, "mode,add01d_pct,auc,deg10cm10_pct,mean_rot_deg,mean_trans_m", rows)
    print(f"correspondence sweep -> {cfg.out}")
    return 0


def cmd_ablate_k(cfg: RunConfig) -> int:
    scenes, model = _scenes_and_model(cfg)
    anchors = build_anchor_set(model, cfg["k"])
    rows = ablate_k_rows(model, anchors, scenes, uv_sigma=cfg["uv_sigma"],
                         seed=cfg.seed, res=cfg["res"], jobs=cfg.jobs)
    _write_csv(cfg.out, "intrinsic,add01d_pct,auc,deg10cm10_pct,mean_rot_deg", rows)
    print(f"intrinsic sweep -> {cfg.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch

_EXIT_CODES: list[tuple[tuple, int]] = [
    ((IdMismatch, correspondence.ObjectMismatch, correspondence.ShapeMismatch), 5),
    ((synth.BinUnfillable, synth.ObjectOutOfView, mesh.KTooLarge, mesh.EmptyModel,
      metrics.EmptyInput, metrics.ZeroDiameter), 6),
    ((solver.NoForeground, solver.DegenerateConfiguration, solver.Degenerate,
      solver.NoConsensus, geom.PointBehindCamera, geom.NonPositiveDepth,
      geom.DegenerateFrame, geom.NotARotation, camera_crop.EmptyIntersection,
      correspondence.NonFinite, codec.IndexOutOfRange), 4),
    ((mesh.ParseError, mesh.UnsupportedPlyVariant), 3),
    ((OSError, json.JSONDecodeError), 3),
    ((ValueError,), 2),
]


def exit_code_for(exc: BaseException) -> int:
    for classes, code in _EXIT_CODES:
        if isinstance(exc, classes):
            return code
    return 1


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="master RNG seed")
    common.add_argument("--out", type=Path, required=True, help="output path")
    common.add_argument("--jobs", type=int, default=1, help="parallel scene workers")

    p = argparse.ArgumentParser(prog="anchorpose", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic benchmark")
    g.add_argument("--shape", choices=synth.SHAPES, default="blob")
    g.add_argument("--scenes", type=int, default=50)
    g.add_argument("--points", type=int, default=2500)
    g.add_argument("--scale", type=float, default=0.12)
    g.add_argument("--width", type=int, default=640)
    g.add_argument("--height", type=int, default=480)
    g.add_argument("--fx", type=float, default=550.0)
    g.add_argument("--fy", type=float, default=550.0)
    g.add_argument("--depth-range", type=float, nargs=2, default=(0.5, 1.6))
    g.add_argument("--depth-sigma", type=float, default=0.0)
    g.add_argument("--occlusion-levels", type=float, nargs="+", default=[1.0])

    a = sub.add_parser("anchors", parents=[common], help="build an anchor set from a PLY model")
    a.add_argument("--model", type=Path, required=True)
    a.add_argument("--k", type=int, default=codec.DEFAULT_ANCHOR_COUNT)
    a.add_argument("--object-id", default=None)
    a.add_argument("--mm-to-m", action="store_true")

    e = sub.add_parser("encode", parents=[common], help="ground-truth maps for a benchmark")
    e.add_argument("--scenes", type=Path, required=True)
    e.add_argument("--anchors", type=Path, required=True)
    e.add_argument("--res", type=int, default=camera_crop.CORR_RES)

    c = sub.add_parser("corrupt", parents=[common], help="noise maps and emit losses.csv")
    c.add_argument("--maps", type=Path, required=True)
    c.add_argument("--residual-sigma", type=float, default=0.005)
    c.add_argument("--residual-bias-sigma", type=float, default=0.0)
    c.add_argument("--label-flip", type=float, default=0.02)
    c.add_argument("--mask-flip", type=float, default=0.0)
    c.add_argument("--depth-sigma", type=float, default=0.0)
    c.add_argument("--uv-sigma", type=float, default=0.0)

    s = sub.add_parser("solve", parents=[common], help="recover poses from maps")
    s.add_argument("--maps", type=Path, required=True)
    s.add_argument("--anchors", type=Path, required=True)
    s.add_argument("--mode", choices=("3d3d", "2d3d", "fused"), default="fused")
    s.add_argument("--ransac", action="store_true")
    s.add_argument("--inlier-tol", type=float, default=0.01)
    s.add_argument("--max-iters", type=int, default=256)
    s.add_argument("--sigma-m", type=float, default=0.005)
    s.add_argument("--sigma-px", type=float, default=1.0)

    v = sub.add_parser("eval", parents=[common], help="summarize predicted poses")
    v.add_argument("--pred", type=Path, required=True)
    v.add_argument("--scenes", type=Path, required=True)

    aa = sub.add_parser("ablate-anchors", parents=[common], help="anchor-count sweep CSV")
    aa.add_argument("--scenes", type=Path, required=True)
    aa.add_argument("--k-list", type=int, nargs="+", default=list(DEFAULT_K_LIST))
    aa.add_argument("--noise-rel", type=float, default=0.08)
    aa.add_argument("--absolute-sigma", type=float, default=None)
    aa.add_argument("--res", type=int, default=camera_crop.CORR_RES)

    ac = sub.add_parser("ablate-corr", parents=[common], help="correspondence-family sweep CSV")
    ac.add_argument("--scenes", type=Path, required=True)
    ac.add_argument("--k", type=int, default=codec.DEFAULT_ANCHOR_COUNT)
    ac.add_argument("--residual-sigma", type=float, default=0.001)
    ac.add_argument("--depth-sigma", type=float, default=0.001)
    ac.add_argument("--uv-sigma", type=float, default=2.0)
    ac.add_argument("--res", type=int, default=camera_crop.CORR_RES)

    ak = sub.add_parser("ablate-k", parents=[common], help="intrinsic-adjustment sweep CSV")
    ak.add_argument("--scenes", type=Path, required=True)
    ak.add_argument("--k", type=int, default=codec.DEFAULT_ANCHOR_COUNT)
    ak.add_argument("--uv-sigma", type=float, default=0.5)
    ak.add_argument("--res", type=int, default=camera_crop.CORR_RES)
    return p


_COMMANDS = {
    "gen": cmd_gen,
    "anchors": cmd_anchors,
    "encode": cmd_encode,
    "corrupt": cmd_corrupt,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "ablate-anchors": cmd_ablate_anchors,
    "ablate-corr": cmd_ablate_corr,
    "ablate-k": cmd_ablate_k,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    params = {k: v for k, v in vars(args).items()
              if k not in ("command", "seed", "out", "jobs")}
    cfg = RunConfig(seed=args.seed, out=args.out, jobs=args.jobs, params=params)
    try:
        return _COMMANDS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - map every failure to an exit code
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
