"""Dual-attention ray scorer with hand-written reverse-mode gradients.

Rays are Fourier-embedded and pushed through a two-hidden-layer tanh MLP to
get per-ray features R (N x C). Each of the two heads (position, orientation)
forms pixel-by-ray logits (F W_K)(R W_Q)^T / sqrt(C), applies a softmax over
the ray axis for every feature pixel, and sums the resulting M x N map over
pixels, so each predicted score vector sums to M.

Attention maps are processed in blocks of pixel rows; only N-length and
C-sized intermediates are ever held for the whole problem.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteLossError
from .rays import RayBundle, cast_rays, subsample_ellipsoids
from .scoring import GammaConfig, ScoreVector, gt_scores, score_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HEADS = ("pos", "ori")
PARAM_NAMES = ("mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "mlp.w3", "mlp.b3",
               "pos.wq", "pos.wk", "ori.wq", "ori.wk")


# -- data types -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # (M, C), row-major over the H_f x W_f grid
    width: int
    height: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != self.width * self.height:
            raise ValueError(f"feature data shape {data.shape} does not match grid {self.height}x{self.width}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map has non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def num_pixels(self):
        return self.width * self.height

    @property
    def channels(self):
        return self.data.shape[1]


@dataclass(eq=False)
class AttentionScorer:
    params: dict
    fourier_bands: int
    feature_dim: int
    hidden_dim: int
    input_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    input_scale: float = 1.0

    @classmethod
    def init(cls, feature_dim, fourier_bands=2, hidden_dim=64, seed=0,
             input_center=(0.0, 0.0, 0.0), input_scale=1.0):
        """Glorot-uniform weights, zero biases."""
        if feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        rng = np.random.default_rng(seed)
        d_in = embedding_dim(fourier_bands)
        C, H = feature_dim, hidden_dim

        def glorot(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, size=(a, b))

        params = {
            "mlp.w1": glorot(d_in, H), "mlp.b1": np.zeros(H),
            "mlp.w2": glorot(H, H), "mlp.b2": np.zeros(H),
            "mlp.w3": glorot(H, C), "mlp.b3": np.zeros(C),
        }
        for head in HEADS:
            params[f"{head}.wq"] = glorot(C, C)
            params[f"{head}.wk"] = glorot(C, C)
        return cls(params, fourier_bands, C, H, np.asarray(input_center, dtype=np.float64),
                   float(input_scale))

    @classmethod
    def for_scene(cls, scene, feature_dim=None, fourier_bands=2, hidden_dim=64, seed=0):
        """Scorer whose input normalization maps the scene into roughly [-0.5, 0.5]^3."""
        if feature_dim is None:
            feature_dim = embedding_dim(fourier_bands)
        return cls.init(feature_dim, fourier_bands, hidden_dim, seed,
                        scene.center, 4.0 * scene.bbox_extent)

    def copy(self):
        return replace(self, params={k: v.copy() for k, v in self.params.items()},
                       input_center=self.input_center.copy())

    def normalize(self, bundle: RayBundle):
        """Stack normalized origins and directions into (N, 6) network inputs."""
        o = (bundle.origins - self.input_center) / self.input_scale
        return np.concatenate([o, bundle.directions], axis=1)


def embedding_dim(bands):
    return 6 + 12 * bands


def fourier_embed(x, bands):
    """[x, sin(2^k pi x), cos(2^k pi x)] for k < bands, over every column of x."""
    x = np.asarray(x, dtype=np.float64)
    if bands == 0:
        return x.copy()
    freqs = (2.0 ** np.arange(bands)) * np.pi
    ang = (x[:, None, :] * freqs[None, :, None]).reshape(len(x), -1)
    return np.concatenate([x, np.sin(ang), np.cos(ang)], axis=1)


# -- forward ----------------------------------------------------------------------


def _mlp_forward(p, e):
    a1 = e @ p["mlp.w1"] + p["mlp.b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ p["mlp.w2"] + p["mlp.b2"]
    h2 = np.tanh(a2)
    R = h2 @ p["mlp.w3"] + p["mlp.b3"]
    return R, (e, h1, h2)


def embed_rays(bundle: RayBundle, scorer: AttentionScorer):
    if len(bundle) == 0:
        raise ValueError("empty ray bundle")
    e = fourier_embed(scorer.normalize(bundle), scorer.fourier_bands)
    return _mlp_forward(scorer.params, e)[0]


def _softmax_rows(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    np.exp(Z, out=Z)
    Z /= Z.sum(axis=1, keepdims=True)
    return Z


def _check_dims(R, F, wq, wk):
    C = R.shape[1]
    if F.shape[1] != wk.shape[0] or wq.shape[0] != C or wq.shape[1] != wk.shape[1]:
        raise ValueError(f"dimension mismatch: R {R.shape}, F {F.shape}, W_Q {wq.shape}, W_K {wk.shape}")


def attention_map(R, F, wq, wk):
    """Full M x N attention map for one head (rows are pixels, softmax over rays)."""
    R, F = np.asarray(R, dtype=np.float64), np.asarray(F, dtype=np.float64)
    _check_dims(R, F, wq, wk)
    scale = 1.0 / np.sqrt(wq.shape[1])
    return _softmax_rows((F @ wk) @ (R @ wq).T * scale)


def _head_column_sums(Qm, Km, scale, block):
    s = np.zeros(len(Qm))
    for i in range(0, len(Km), block):
        s += _softmax_rows(Km[i:i + block] @ Qm.T * scale).sum(axis=0)
    return s


def _rows_per_block(n_rays, budget=4_000_000):
    return max(1, budget // max(n_rays, 1))


def predict_scores(scorer: AttentionScorer, bundle: RayBundle, features) -> ScoreVector:
    F = features.data if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    R = embed_rays(bundle, scorer)
    p = scorer.params
    scale = 1.0 / np.sqrt(scorer.feature_dim)
    block = _rows_per_block(len(bundle))
    out = []
    for head in HEADS:
        _check_dims(R, F, p[f"{head}.wq"], p[f"{head}.wk"])
        out.append(_head_column_sums(R @ p[f"{head}.wq"], F @ p[f"{head}.wk"], scale, block))
    return ScoreVector(s_p=out[0], s_o=out[1], m_pixels=float(len(F)))


# -- backward ---------------------------------------------------------------------


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteLossError(name)


def loss_and_grad(scorer: AttentionScorer, bundle: RayBundle, features, gt: ScoreVector,
                  squared=False):
    """Loss (absolute or squared per-ray deviation, summed over both heads) and its gradients.

    Returns ``(loss, grads, (loss_pos, loss_ori))`` where ``grads`` maps every
    parameter name to an array of the parameter's shape.
    """
    F = features.data if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    p = scorer.params
    if len(gt.s_p) != len(bundle):
        raise ValueError(f"score length mismatch: {len(gt.s_p)} vs {len(bundle)}")
    e = fourier_embed(scorer.normalize(bundle), scorer.fourier_bands)
    R, (e, h1, h2) = _mlp_forward(p, e)
    _check_finite("ray_features", R)
    N = len(R)
    scale = 1.0 / np.sqrt(scorer.feature_dim)
    block = _rows_per_block(N)

    heads = {}
    for head in HEADS:
        wq, wk = p[f"{head}.wq"], p[f"{head}.wk"]
        _check_dims(R, F, wq, wk)
        Qm, Km = R @ wq, F @ wk
        _check_finite(f"{head}.queries", Qm)
        _check_finite(f"{head}.keys", Km)
        s_hat = _head_column_sums(Qm, Km, scale, block)
        _check_finite(f"{head}.scores", s_hat)
        heads[head] = (Qm, Km, s_hat)

    pred = ScoreVector(heads["pos"][2], heads["ori"][2], float(len(F)))
    lp, lo, loss = score_loss(pred, gt, squared=squared)
    _check_finite("loss", np.array(loss))

    grads = {}
    dR = np.zeros_like(R)
    for head, target in (("pos", gt.s_p), ("ori", gt.s_o)):
        Qm, Km, s_hat = heads[head]
        diff = s_hat - target
        ds = (2.0 * diff if squared else np.sign(diff)) / N
        dQm = np.zeros_like(Qm)
        dKm = np.zeros_like(Km)
        for i in range(0, len(Km), block):
            A = _softmax_rows(Km[i:i + block] @ Qm.T * scale)
            dZ = A * (ds[None, :] - (A @ ds)[:, None])
            dKm[i:i + block] = dZ @ Qm * scale
            dQm += dZ.T @ Km[i:i + block] * scale
        wq = p[f"{head}.wq"]
        grads[f"{head}.wq"] = R.T @ dQm
        grads[f"{head}.wk"] = F.T @ dKm
        dR += dQm @ wq.T

    # MLP backward
    grads["mlp.w3"] = h2.T @ dR
    grads["mlp.b3"] = dR.sum(axis=0)
    da2 = (dR @ p["mlp.w3"].T) * (1.0 - h2 * h2)
    grads["mlp.w2"] = h1.T @ da2
    grads["mlp.b2"] = da2.sum(axis=0)
    da1 = (da2 @ p["mlp.w2"].T) * (1.0 - h1 * h1)
    grads["mlp.w1"] = e.T @ da1
    grads["mlp.b1"] = da1.sum(axis=0)
    for name, g in grads.items():
        _check_finite(f"grad[{name}]", g)
    return loss, grads, (lp, lo)


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1500
    learning_rate: float = 1.0
    weight_decay: float = 1e-3
    seed: int = 0
    ellipsoid_subsample: int = 2000
    squared: bool = False
    subdivision_level: int = 1  # used only when train() casts the rays itself

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.ellipsoid_subsample < 1:
            raise ValueError("ellipsoid_subsample must be >= 1")


def train(scorer: AttentionScorer, scene, views, cfg: TrainConfig = TrainConfig(), gamma: GammaConfig | None = None,
          bundle: RayBundle | None = None):
    """Fit the scorer to geometric ground truth over ``views``.

    ``views`` is a sequence of ``(Camera, FeatureMap)`` pairs. Rays are cast
    from ``scene`` unless a ``bundle`` is supplied. Each iteration draws a
    view, subsamples ellipsoids, and takes one gradient step followed by
    decoupled weight decay. Returns ``(trained scorer, loss trace)``.
    """
    views = list(views)
    if not views:
        raise ValueError("empty training set")
    for _, fmap in views:
        if fmap.channels != scorer.params["pos.wk"].shape[0]:
            raise ValueError(f"feature dim {fmap.channels} does not match scorer ({scorer.feature_dim})")
    if bundle is None:
        bundle = cast_rays(scene, cfg.subdivision_level)
    if gamma is None:
        gamma = GammaConfig.for_scene(scene)
    model = scorer.copy()
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for it in range(cfg.iterations):
        cam, fmap = views[rng.integers(len(views))]
        sub = subsample_ellipsoids(bundle, cfg.ellipsoid_subsample, int(rng.integers(2**31)))
        gt = gt_scores(sub, cam, gamma, m_pixels=fmap.num_pixels)
        loss, grads, _ = loss_and_grad(model, sub, fmap, gt, squared=cfg.squared)
        for name, g in grads.items():
            w = model.params[name]
            w -= cfg.learning_rate * g
            w -= cfg.learning_rate * cfg.weight_decay * w
        trace.append(loss)
        if it % 100 == 0:
            log.debug("iter %d loss %.6g", it, loss)
    return model, np.array(trace)


def oracle_scorer(bundle: RayBundle, cam, cfg: GammaConfig, m_pixels=None) -> ScoreVector:
    """Ground-truth scores standing in for a trained network."""
    return gt_scores(bundle, cam, cfg, m_pixels=m_pixels)


def uniform_scores(bundle: RayBundle, m_pixels=1.0) -> ScoreVector:
    n = len(bundle)
    s = np.full(n, m_pixels / n)
    return ScoreVector(s, s.copy(), float(m_pixels))


# -- file formats -------------------------------------------------------------------


def save_feature_map(fmap: FeatureMap, path):
    with open(path, "wb") as f:
        f.write(struct.pack("<III", fmap.height, fmap.width, fmap.channels))
        f.write(np.asarray(fmap.data, dtype="<f4").tobytes())


def load_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        H, W, C = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * H * W * C), dtype="<f4")
    if data.size != H * W * C:
        raise ValueError("truncated feature map")
    return FeatureMap(data.reshape(H * W, C).astype(np.float64), width=W, height=H)


def save_checkpoint(scorer: AttentionScorer, path):
    """Versioned npz archive with one named block per parameter."""
    meta = np.array([CHECKPOINT_VERSION, scorer.fourier_bands, scorer.feature_dim, scorer.hidden_dim],
                    dtype=np.int64)
    with open(path, "wb") as f:
        np.savez(f, __meta__=meta, __input_center__=scorer.input_center,
                 __input_scale__=np.array(scorer.input_scale), **scorer.params)


def load_checkpoint(path) -> AttentionScorer:
    with np.load(path) as z:
        version, bands, C, H = (int(v) for v in z["__meta__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        missing = [n for n in PARAM_NAMES if n not in z.files]
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {missing}")
        params = {n: z[n].astype(np.float64) for n in PARAM_NAMES}
        return AttentionScorer(params, bands, C, H, z["__input_center__"].astype(np.float64),
                               float(z["__input_scale__"]))
