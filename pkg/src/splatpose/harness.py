"""Pose-error metrics, evaluation manifests and the end-to-end evaluation loop."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import load_checkpoint, load_feature_map
from .camera import Camera, load_camera
from .coarse_solver import CoarseConfig, coarse_estimate
from .matching import MatcherConfig
from .pnp import RansacConfig
from .rasterizer import load_image
from .rays import cast_rays
from .refine import RefineConfig, refine_pose
from .scene import load_ply

log = logging.getLogger(__name__)

SEED_ENV = "SPLATPOSE_SEED"

CSV_COLUMNS = (
    "view", "status", "coarse_angular_deg", "coarse_translation_u", "refined_angular_deg",
    "refined_translation_u", "refined_translation_native", "refined", "inlier_count", "error",
)
METRICS = ("coarse_angular_deg", "coarse_translation_u", "refined_angular_deg", "refined_translation_u",
           "refined_translation_native")


def resolve_seed(seed):
    """``SPLATPOSE_SEED`` in the environment overrides any seed passed in code or on the CLI."""
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# -- metrics ------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseError:
    angular_deg: float
    translation_u: float  # in units of the scene extent
    translation_native: float  # in scene units

    def __post_init__(self):
        if not 0.0 <= self.angular_deg <= 180.0:
            raise ValueError(f"angular error {self.angular_deg} outside [0, 180]")
        if not self.translation_u >= 0.0:
            raise ValueError("translation error must be non-negative")


def angular_error(R_est, R_gt):
    """Geodesic angle between two rotations, in degrees."""
    R_est, R_gt = np.asarray(R_est, dtype=np.float64), np.asarray(R_gt, dtype=np.float64)
    c = (np.trace(R_gt.T @ R_est) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error(t_est, t_gt, extent):
    if not extent > 0:
        raise ValueError("extent must be positive")
    return float(np.linalg.norm(np.asarray(t_est, dtype=np.float64) - np.asarray(t_gt, dtype=np.float64))) / extent


def pose_error(rotation, position, gt: Camera, extent) -> PoseError:
    native = float(np.linalg.norm(np.asarray(position) - gt.position))
    return PoseError(angular_error(rotation, gt.rotation), native / extent, native)


# -- manifest -------------------------------------------------------------------------


@dataclass(frozen=True)
class ViewSpec:
    image: Path
    camera: Path
    features: Path | None = None
    name: str = ""


@dataclass(frozen=True)
class EvalManifest:
    """Scene, test views and pipeline settings for one evaluation run.

    Scores come from ``checkpoint`` applied to each view's feature map, or,
    with ``oracle`` set, from the geometric ground truth of each view's camera.
    """

    scene: Path
    views: tuple
    output: Path
    checkpoint: Path | None = None
    oracle: bool = False
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    plot: bool = False

    @classmethod
    def from_dict(cls, data, base_dir="."):
        base = Path(base_dir)

        def path(p):
            return None if p is None else (base / p)

        views = []
        for i, v in enumerate(data.get("views", [])):
            views.append(ViewSpec(path(v["image"]), path(v["camera"]), path(v.get("features")),
                                  v.get("name", f"view_{i:03d}")))
        coarse_keys = {"k", "subdivision_level", "k_sigma", "gamma_pos", "gamma_ori", "literal_position"}
        coarse = CoarseConfig(**{k: v for k, v in data.get("coarse", {}).items() if k in coarse_keys})
        ransac = dict(data.get("ransac", {}))
        ransac["seed"] = resolve_seed(int(ransac.get("seed", data.get("seed", 0))))
        refine = RefineConfig(MatcherConfig(**data.get("matcher", {})), RansacConfig(**ransac))
        return cls(
            scene=path(data["scene"]),
            views=tuple(views),
            output=path(data.get("output", "eval_out")),
            checkpoint=path(data.get("checkpoint")),
            oracle=bool(data.get("oracle", False)),
            coarse=coarse,
            refine=refine,
            plot=bool(data.get("plot", False)),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as f:
            return cls.from_dict(json.load(f), base_dir=path.parent)

    def check_files(self):
        missing = [p for p in (self.scene, self.checkpoint) if p is not None and not p.exists()]
        for v in self.views:
            missing += [p for p in (v.image, v.camera, v.features) if p is not None and not p.exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {[str(p) for p in missing]}")


# -- evaluation -------------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list
    aggregate: dict

    @property
    def all_failed(self):
        return self.aggregate["views_ok"] == 0


def evaluate_view(scene, bundle, view: ViewSpec, manifest: EvalManifest, scorer=None):
    gt = load_camera(view.camera)
    query = load_image(view.image)
    if query.shape[:2] != (gt.height, gt.width):
        raise ValueError(f"image is {query.shape[1]}x{query.shape[0]}, camera expects {gt.width}x{gt.height}")
    if manifest.oracle:
        coarse = coarse_estimate(scene, manifest.coarse, oracle_camera=gt, bundle=bundle)
    else:
        if view.features is None:
            raise ValueError("view has no feature map and the manifest is not in oracle mode")
        coarse = coarse_estimate(scene, manifest.coarse, scorer=scorer,
                                 features=load_feature_map(view.features), bundle=bundle)
    refined = refine_pose(scene, coarse, query, gt, manifest.refine)
    ext = scene.bbox_extent
    ce = pose_error(coarse.rotation, coarse.position, gt, ext)
    re = pose_error(refined.rotation, refined.position, gt, ext)
    return {
        "view": view.name, "status": "ok",
        "coarse_angular_deg": ce.angular_deg, "coarse_translation_u": ce.translation_u,
        "refined_angular_deg": re.angular_deg, "refined_translation_u": re.translation_u,
        "refined_translation_native": re.translation_native,
        "refined": bool(refined.refined), "inlier_count": int(refined.inlier_count), "error": "",
    }


def aggregate_rows(rows):
    ok = [r for r in rows if r["status"] == "ok"]
    agg = {"views_total": len(rows), "views_ok": len(ok), "views_failed": len(rows) - len(ok)}
    for m in METRICS:
        vals = np.array([float(r[m]) for r in ok])
        agg[f"mean_{m}"] = float(vals.mean()) if len(vals) else None
        agg[f"median_{m}"] = float(np.median(vals)) if len(vals) else None
    if ok:
        better = [float(r["refined_angular_deg"]) < float(r["coarse_angular_deg"])
                  and float(r["refined_translation_u"]) < float(r["coarse_translation_u"]) for r in ok]
        agg["fraction_refinement_improved"] = float(np.mean(better))
    else:
        agg["fraction_refinement_improved"] = None
    return agg


def write_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_errors(rows, path):
    """Per-view coarse vs refined errors as an SVG (requires matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in rows if r["status"] == "ok"]
    x = np.arange(len(ok))
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for ax, key, label in ((axes[0], "angular_deg", "rotation error [deg]"),
                           (axes[1], "translation_u", "translation error [u]")):
        ax.semilogy(x, [r[f"coarse_{key}"] for r in ok], "o", label="coarse")
        ax.semilogy(x, [r[f"refined_{key}"] for r in ok], "s", label="refined")
        ax.set_xlabel("view")
        ax.set_ylabel(label)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def evaluate(manifest: EvalManifest) -> EvalReport:
    """Coarse estimate plus refinement for every view; writes CSV, JSON and optionally an SVG.

    A failing view is recorded with its error message and does not stop the run.
    """
    if not manifest.views:
        raise ValueError("manifest has no views")
    manifest.check_files()
    scene = load_ply(manifest.scene)
    bundle = cast_rays(scene, manifest.coarse.subdivision_level, manifest.coarse.k_sigma)
    scorer = None
    if not manifest.oracle:
        if manifest.checkpoint is None:
            raise ValueError("manifest needs either a checkpoint or oracle mode")
        scorer = load_checkpoint(manifest.checkpoint)

    rows = []
    for view in manifest.views:
        try:
            rows.append(evaluate_view(scene, bundle, view, manifest, scorer))
        except Exception as exc:  # per-view failures are part of the report
            log.warning("view %s failed: %s", view.name, exc)
            row = dict.fromkeys(CSV_COLUMNS, "")
            row.update(view=view.name, status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)

    aggregate = aggregate_rows(rows)
    out = Path(manifest.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "per_view.csv")
    with open(out / "aggregate.json", "w") as f:
        json.dump(aggregate, f, indent=2)
    if manifest.plot and aggregate["views_ok"]:
        plot_errors(rows, out / "errors.svg")
    return EvalReport(rows, aggregate)
