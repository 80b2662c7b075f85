"""Forward-only attention map encoder.

Dataflow: a small CNN over the map heights gives local features, an MLP over
the (x, y) coordinates gives positional embeddings, and a pointwise MLP fuses
the two.  Another MLP plus max pooling over points yields global features.
The global features and the proprioception embedding form a query for
multi-head attention over the pointwise features.  The embedding is
``concat(global, weighted_local)``.

Parameters are randomly initialized (He normal for ReLU layers, Glorot
normal for the attention projections); there is no training here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictor.layers import conv2d
from .predictor.loss import ShapeMismatch


@dataclass(frozen=True)
class EncoderConfig:
    length: int = 36
    width: int = 14
    d_map: int = 4  # x, y, z and optionally u
    d_pe: int = 32  # proprioception embedding size
    features: int = 64
    heads: int = 4
    cnn_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.length < 1 or self.width < 1:
            raise ValueError("map must have at least one cell")
        if self.d_map not in (3, 4):
            raise ValueError("d_map must be 3 (x, y, z) or 4 (x, y, z, u)")
        if self.features < 2 or self.heads < 1 or self.features % self.heads:
            raise ValueError("need at least 2 features and heads dividing the feature width")
        if self.d_pe < 1 or self.cnn_channels < 1:
            raise ValueError("d_pe and cnn_channels must be positive")

    @property
    def points(self) -> int:
        return self.length * self.width

    @property
    def embedding_size(self) -> int:
        return 2 * self.features


@dataclass
class MapEmbedding:
    global_features: np.ndarray  # (F,)
    weighted_local: np.ndarray  # (F,)
    attention: np.ndarray  # (heads, L*W)
    pool_argmax: np.ndarray  # (F,) point index per global feature

    @property
    def embedding(self) -> np.ndarray:
        return np.concatenate([self.global_features, self.weighted_local])


def _dense(rng, n_in, n_out, gain=2.0):
    return rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in), np.zeros(n_out)


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    f, c = cfg.features, cfg.cnn_channels
    cin = cfg.d_map - 2
    p: dict[str, np.ndarray] = {}
    for name, (k, i, o) in {"cnn1": (3, cin, c), "cnn2": (3, c, c)}.items():
        p[f"{name}.w"] = rng.standard_normal((k, k, i, o)) * np.sqrt(2.0 / (k * k * i))
        p[f"{name}.b"] = np.zeros(o)
    layers = {
        "pos1": (2, f // 2), "pos2": (f // 2, f // 2),
        "point1": (c + f // 2, f), "point2": (f, f),
        "glob1": (f, f), "glob2": (f, f),
        "query1": (f + cfg.d_pe, f), "query2": (f, f),
    }
    for name, (i, o) in layers.items():
        p[f"{name}.w"], p[f"{name}.b"] = _dense(rng, i, o)
    for name in ("att_q", "att_k", "att_v", "att_o"):
        p[f"{name}.w"], p[f"{name}.b"] = _dense(rng, f, f, gain=1.0)
    return p


def _mlp(p, x, names, last_linear=True):
    for k, name in enumerate(names):
        x = x @ p[f"{name}.w"] + p[f"{name}.b"]
        if k < len(names) - 1 or not last_linear:
            x = np.maximum(x, 0)
    return x


def pointwise_features(map_points, cfg: EncoderConfig, params) -> np.ndarray:
    """(L, W, d_map) map -> (L*W, F) pointwise local features."""
    m = np.asarray(map_points, dtype=float)
    if m.shape != (cfg.length, cfg.width, cfg.d_map):
        raise ShapeMismatch(f"map points {m.shape} != {(cfg.length, cfg.width, cfg.d_map)}")
    h = m[None, :, :, 2:]
    h, _ = conv2d(h, params["cnn1.w"], params["cnn1.b"])
    h = np.maximum(h, 0)
    h, _ = conv2d(h, params["cnn2.w"], params["cnn2.b"])
    local = np.maximum(h, 0)[0].reshape(cfg.points, -1)
    pos = _mlp(params, m[..., :2].reshape(cfg.points, 2), ["pos1", "pos2"])
    return _mlp(params, np.concatenate([local, pos], axis=1), ["point1", "point2"], last_linear=False)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def encode_points(points, proprio, cfg: EncoderConfig, params) -> MapEmbedding:
    """Pooling, query and attention stages on (N, F) pointwise features.

    Every stage here treats the points as a set, so reordering the rows only
    reorders ``attention`` and ``pool_argmax`` accordingly.
    """
    points = np.asarray(points, dtype=float)
    proprio = np.asarray(proprio, dtype=float)
    f, nh = cfg.features, cfg.heads
    if points.ndim != 2 or points.shape[1] != f or len(points) < 1:
        raise ShapeMismatch(f"pointwise features must be (N, {f}), got {points.shape}")
    if proprio.shape != (cfg.d_pe,):
        raise ShapeMismatch(f"proprioception embedding must be ({cfg.d_pe},), got {proprio.shape}")
    g_pre = _mlp(params, points, ["glob1", "glob2"])
    arg = g_pre.argmax(axis=0)
    glob = g_pre[arg, np.arange(f)]
    query = _mlp(params, np.concatenate([glob, proprio]), ["query1", "query2"])

    dh = f // nh
    q = (query @ params["att_q.w"] + params["att_q.b"]).reshape(nh, dh)
    k = (points @ params["att_k.w"] + params["att_k.b"]).reshape(-1, nh, dh)
    v = (points @ params["att_v.w"] + params["att_v.b"]).reshape(-1, nh, dh)
    scores = np.einsum("nhd,hd->hn", k, q) / np.sqrt(dh)
    att = _softmax(scores)
    heads = np.einsum("hn,nhd->hd", att, v).reshape(f)
    weighted = heads @ params["att_o.w"] + params["att_o.b"]
    return MapEmbedding(glob, weighted, att, arg)


def encode(map_points, proprio, cfg: EncoderConfig, params=None) -> MapEmbedding:
    """Full encoder forward pass on one (L, W, d_map) map."""
    if params is None:
        params = init_params(cfg)
    return encode_points(pointwise_features(map_points, cfg, params), proprio, cfg, params)


def attention_heatmap(emb: MapEmbedding, cfg: EncoderConfig):
    """Head-averaged attention and the global-context mask, both (L, W).

    The mask counts, per point, how many global features pooled from it,
    divided by the feature count.
    """
    heat = emb.attention.mean(axis=0).reshape(cfg.length, cfg.width)
    counts = np.bincount(emb.pool_argmax, minlength=cfg.points)
    mask = (counts / len(emb.pool_argmax)).reshape(cfg.length, cfg.width)
    return heat, mask
