"""Command-line entry point: ``splatpose <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attention import (
    AttentionScorer,
    TrainConfig,
    load_checkpoint,
    load_feature_map,
    save_checkpoint,
    save_feature_map,
    train,
)
from .camera import load_camera, save_camera
from .coarse_solver import CoarseConfig, CoarsePose, build_pose, coarse_estimate
from .errors import SplatPoseError
from .harness import EvalManifest, evaluate, resolve_seed
from .matching import read_matches_csv
from .pnp import RansacConfig
from .rasterizer import load_image, render, save_depth, save_png
from .rays import cast_rays, read_rays_csv, write_rays_csv
from .refine import RefineConfig, refine_pose
from .scene import load_ply, save_ply, synth_scene
from .scoring import GammaConfig, gt_scores, write_scores
from .synthetic import planted_feature_dim, sample_views, synthetic_feature_map

log = logging.getLogger("splatpose")


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _gamma(scene, args):
    return GammaConfig.for_scene(scene, args.gamma_pos, args.gamma_ori)


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args):
    seed = resolve_seed(args.seed)
    scene = synth_scene(seed, args.n, args.extent)
    save_ply(scene, args.out)
    if args.views:
        out = Path(args.views_dir or Path(args.out).with_suffix(""))
        out.mkdir(parents=True, exist_ok=True)
        scorer = AttentionScorer.for_scene(scene, planted_feature_dim(args.bands), args.bands)
        views = []
        for i, cam in enumerate(sample_views(scene, args.views, seed + 1)):
            name = f"view_{i:03d}"
            save_camera(cam, out / f"{name}.json")
            save_png(render(scene, cam).color, out / f"{name}.png")
            save_feature_map(synthetic_feature_map(cam, scorer, seed=seed + 1000 + i), out / f"{name}.feat")
            views.append({"name": name, "image": f"{name}.png", "camera": f"{name}.json",
                          "features": f"{name}.feat"})
        manifest = {"scene": str(Path(args.out).resolve()), "views": views, "oracle": True,
                    "output": "eval_out", "seed": seed}
        _write_json(manifest, out / "manifest.json")
    return 0


def cmd_render(args):
    scene = load_ply(args.scene)
    out = render(scene, load_camera(args.camera))
    save_png(out.color, args.out)
    if args.depth:
        save_depth(out.depth, args.depth)
    return 0


def cmd_rays(args):
    bundle = cast_rays(load_ply(args.scene), args.level, args.k_sigma)
    write_rays_csv(bundle, args.out)
    return 0


def cmd_score(args):
    cam = load_camera(args.camera)
    scene = load_ply(args.scene)
    bundle = read_rays_csv(args.rays) if args.rays else cast_rays(scene, args.level, args.k_sigma)
    scores = gt_scores(bundle, cam, _gamma(scene, args), m_pixels=args.m_pixels)
    write_scores(scores, args.out)
    return 0


def cmd_train(args):
    scene = load_ply(args.scene)
    spec_path = Path(args.views)
    spec = json.loads(spec_path.read_text())
    views = [(load_camera(spec_path.parent / v["camera"]), load_feature_map(spec_path.parent / v["features"]))
             for v in spec["views"]]
    if not views:
        raise ValueError("training set is empty")
    seed = resolve_seed(args.seed)
    C = views[0][1].channels
    scorer = AttentionScorer.for_scene(scene, C, args.bands, args.hidden, seed=seed)
    cfg = TrainConfig(iterations=args.iters, learning_rate=args.lr, weight_decay=args.wd, seed=seed,
                      ellipsoid_subsample=args.subsample, squared=args.squared, subdivision_level=args.level)
    model, trace = train(scorer, scene, views, cfg, _gamma(scene, args))
    save_checkpoint(model, args.out)
    if args.trace:
        np.savetxt(args.trace, trace)
    log.info("loss %.6g -> %.6g", trace[0], trace[-1])
    return 0


def cmd_estimate(args):
    scene = load_ply(args.scene)
    cfg = CoarseConfig(k=args.k, subdivision_level=args.level, gamma_pos=args.gamma_pos,
                       gamma_ori=0.3 if args.gamma_ori is None else args.gamma_ori,
                       literal_position=args.literal)
    if args.oracle_camera:
        pose = coarse_estimate(scene, cfg, oracle_camera=load_camera(args.oracle_camera))
    else:
        if not args.features:
            raise ValueError("--checkpoint requires --features")
        pose = coarse_estimate(scene, cfg, scorer=load_checkpoint(args.checkpoint),
                               features=load_feature_map(args.features))
    _write_json(pose.to_dict(), args.out)
    return 0


def _load_pose(path):
    data = json.loads(Path(path).read_text())
    R = np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3)
    pose = build_pose(data["position"], -R[:, 2], condition_number=data.get("condition_number", np.nan))
    return CoarsePose(pose.position, pose.orientation, R, pose.condition_number)


def cmd_refine(args):
    scene = load_ply(args.scene)
    intr = load_camera(args.camera)
    coarse = _load_pose(args.coarse_pose)
    cfg = RefineConfig(ransac=RansacConfig(threshold=args.ransac_thresh, seed=resolve_seed(args.seed)))
    matches = read_matches_csv(args.matches) if args.matches else None
    result = refine_pose(scene, coarse, load_image(args.query), intr, cfg, matches=matches)
    _write_json(result.to_dict(), args.out)
    return 0


def cmd_eval(args):
    manifest = EvalManifest.load(args.manifest)
    if args.output:
        manifest = replace(manifest, output=Path(args.output))
    if args.plot:
        manifest = replace(manifest, plot=True)
    report = evaluate(manifest)
    _write_json(report.aggregate, None)
    return 1 if report.all_failed else 0


# -- parser ------------------------------------------------------------------------------


def _add_gamma(p):
    p.add_argument("--gamma-pos", type=float, default=None, help="position falloff (default 0.1 * scene extent)")
    p.add_argument("--gamma-ori", type=float, default=None, help="orientation falloff in radians (default 0.3)")


def build_parser():
    parser = argparse.ArgumentParser(prog="splatpose", description="Camera pose estimation over Gaussian scenes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a random Gaussian scene (and optional test views)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--views", type=int, default=0, help="also write this many rendered views and a manifest")
    p.add_argument("--views-dir", default=None)
    p.add_argument("--bands", type=int, default=2, help="Fourier bands of the planted feature maps")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render a scene from a camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True, help="PNG color output")
    p.add_argument("--depth", default=None, help="optional depth output (u32 H, u32 W, f32 data)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("rays", help="cast ellipsoid rays and write them as CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=int, default=1, help="icosphere subdivision level")
    p.add_argument("--k-sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_rays)

    p = sub.add_parser("score", help="ground-truth ray scores for a camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rays", default=None, help="ray CSV (default: cast from the scene)")
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--k-sigma", type=float, default=1.0)
    p.add_argument("--m-pixels", type=float, default=None, help="score total (default: image pixel count)")
    _add_gamma(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train the attention scorer")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", required=True, help="JSON with views: [{camera, features}]")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int, default=1500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--wd", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--subsample", type=int, default=2000, help="ellipsoids sampled per iteration")
    p.add_argument("--bands", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--squared", action="store_true", help="squared instead of absolute score deviation")
    p.add_argument("--trace", default=None, help="write the loss trace as text")
    _add_gamma(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="coarse pose from scored rays")
    p.add_argument("--scene", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--oracle-camera", help="camera JSON whose ground-truth scores replace the network")
    p.add_argument("--features", default=None)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--literal", action="store_true", help="plain weighted sum instead of the least-squares solve")
    p.add_argument("--out", default=None, help="pose JSON (default stdout)")
    _add_gamma(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("refine", help="render-match-PnP refinement of a coarse pose")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True, help="query image")
    p.add_argument("--coarse-pose", required=True, help="pose JSON from 'estimate'")
    p.add_argument("--camera", required=True, help="camera JSON supplying the query intrinsics")
    p.add_argument("--matches", default=None, help="correspondence CSV qu,qv,ru,rv,score")
    p.add_argument("--ransac-thresh", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="evaluate a manifest of test views")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", default=None, help="override the manifest's output directory")
    p.add_argument("--plot", action="store_true", help="also write an SVG error plot")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SplatPoseError, ValueError, OSError, KeyError) as exc:
        print(f"splatpose {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
