"""Hierarchical meta-path attention encoder for technique subgraphs.

A subgraph is mapped to one fixed-width vector in three stages: node-level
attention over meta-path neighbors, path-level attention across the four
meta-paths, and graph-level attention against a global context vector. All
three attention distributions are proper (nonnegative, sum to one), and the
whole composition is differentiable through the numerics layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nm
from .graph import EDGE_GROUPS, EntityType
from .sampling import TechniqueSubgraph

# Meta-path vocabulary: process-to-process hops through a launch edge or
# through a shared file / registry key / socket.
META_PATHS = ("MP1", "MP2", "MP3", "MP4")
_MP_OBJECT = {
    "MP2": EntityType.FILE,
    "MP3": EntityType.REGISTRY,
    "MP4": EntityType.SOCKET,
}

# Named meta-path subsets for ablation runs.
METAPATH_COMBOS = {
    "MPC1": ("MP1",),
    "MPC2": ("MP1", "MP2"),
    "MPC3": ("MP1", "MP2", "MP4"),
    "MPC4": ("MP1", "MP2", "MP3"),
    "MPC5": ("MP1", "MP3", "MP4"),
    "MPC6": ("MP1", "MP2", "MP3", "MP4"),
}


def metapath_neighbors(tsg: TechniqueSubgraph, node_id: str, mp: str) -> set[str]:
    """Processes reachable from ``node_id`` along one full meta-path instance.

    Always includes the node itself. Non-process nodes have no meta-path
    neighbors beyond themselves.
    """
    if mp not in META_PATHS:
        raise ValueError(f"unknown meta-path {mp!r}")
    g = tsg.graph
    if g.entity_type(node_id) != EntityType.PROCESS:
        return {node_id}
    out = {node_id}
    if mp == "MP1":
        group = EDGE_GROUPS[EntityType.PROCESS]
        for e in g.out_edges(node_id):
            if e.edge_type_id in group:
                out.add(e.dst)
        return out
    group = EDGE_GROUPS[_MP_OBJECT[mp]]
    for e in g.out_edges(node_id):
        if e.edge_type_id not in group:
            continue
        for back in g.in_edges(e.dst):
            if back.edge_type_id in group:
                out.add(back.src)
    return out


def metapath_pairs(tsg: TechniqueSubgraph, mp: str) -> tuple[np.ndarray, np.ndarray]:
    """(source_row, target_row) index arrays for all neighbor pairs of ``mp``.

    Pairs are ordered by target node then by source node; self pairs are
    always present. Cached on the subgraph.
    """
    cached = tsg._metapath_cache.get(mp)
    if cached is not None:
        return cached
    index = tsg.graph.node_index()
    src, dst = [], []
    for nid in tsg.graph.nodes:
        i = index[nid]
        neighbors = sorted(index[k] for k in metapath_neighbors(tsg, nid, mp))
        for k in neighbors:
            src.append(k)
            dst.append(i)
    pair = (np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp))
    tsg._metapath_cache[mp] = pair
    return pair


@dataclass
class HanConfig:
    """Shapes and switches for the attention encoder."""

    feature_dim: int = 42
    dim: int = 128  # hidden and output width
    slope: float = 0.01
    metapaths: tuple[str, ...] = META_PATHS
    log1p_features: bool = True
    seed: int = 0

    def __post_init__(self):
        unknown = [mp for mp in self.metapaths if mp not in META_PATHS]
        if unknown:
            raise ValueError(f"unknown meta-paths {unknown}")
        if not self.metapaths:
            raise ValueError("at least one meta-path is required")

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "dim": self.dim,
            "slope": self.slope,
            "metapaths": list(self.metapaths),
            "log1p_features": self.log1p_features,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "HanConfig":
        data = dict(payload)
        data["metapaths"] = tuple(data.get("metapaths", META_PATHS))
        return cls(**data)


def han_param_shapes(config: HanConfig) -> dict[str, tuple[int, int]]:
    d = config.dim
    shapes: dict[str, tuple[int, int]] = {"proj": (config.feature_dim, d)}
    for mp in config.metapaths:
        shapes[f"att_w_{mp}"] = (2 * d, d)
        shapes[f"att_a_{mp}"] = (1, d)
    shapes["path_w"] = (d, d)
    shapes["path_b"] = (1, d)
    shapes["path_q"] = (1, d)
    shapes["ctx_w"] = (d, d)
    return shapes


def init_han_params(config: HanConfig) -> dict[str, np.ndarray]:
    rng = nm.Rng(config.seed).split("han-init")
    params = {}
    for name, (r, c) in han_param_shapes(config).items():
        params[name] = rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, c))
    return params


class HanEncoder:
    """Trained attention parameters plus the config that shaped them."""

    def __init__(self, config: HanConfig, params: Mapping[str, np.ndarray]):
        self.config = config
        expected = han_param_shapes(config)
        self.params: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            if name not in params:
                raise ValueError(f"missing parameter {name!r}")
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(
                    f"parameter {name!r} has shape {arr.shape}, expected {shape}"
                )
            self.params[name] = arr

    @classmethod
    def create(cls, config: HanConfig) -> "HanEncoder":
        return cls(config, init_han_params(config))

    def embed(self, tsg: TechniqueSubgraph) -> np.ndarray:
        """Encode one subgraph; returns a (dim,) vector."""
        h = embed_subgraph(tsg, self.params, self.config)
        return h.value[0].copy()

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "params": {k: v.reshape(-1).tolist() for k, v in self.params.items()},
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "HanEncoder":
        config = HanConfig.from_dict(payload["config"])
        params = {
            k: np.array(flat, dtype=np.float64).reshape(payload["shapes"][k])
            for k, flat in payload["params"].items()
        }
        return cls(config, params)


@dataclass
class AttentionRecord:
    """The three attention distributions produced by one embedding pass."""

    alpha: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    beta: np.ndarray | None = None  # (n, |active metapaths|)
    gamma: np.ndarray | None = None  # (n,)


def _as_matrix(x) -> nm.Matrix:
    return x if isinstance(x, nm.Matrix) else nm.Matrix(x)


def node_level_embed(
    tsg: TechniqueSubgraph,
    projected: nm.Matrix,
    mp: str,
    att_w,
    att_a,
    *,
    slope: float = 0.01,
):
    """Per-node aggregation over meta-path neighbors with learned weights.

    ``projected`` holds the per-node input features (already projected to
    hidden width). Returns (h_mp, alpha_column, target_rows); attention
    weights sum to one within each target node's neighbor set.
    """
    att_w, att_a = _as_matrix(att_w), _as_matrix(att_a)
    src, dst = metapath_pairs(tsg, mp)
    n = tsg.n_nodes
    ek = nm.gather_rows(projected, src)
    ei = nm.gather_rows(projected, dst)
    pair_scores = nm.matmul(
        nm.leaky_relu(nm.matmul(nm.concat_cols(ek, ei), att_w), slope),
        nm.transpose(att_a),
    )
    alpha = nm.segment_softmax(pair_scores, dst, n)
    h = nm.leaky_relu(nm.segment_sum(nm.mul(alpha, ek), dst, n), slope)
    return h, alpha, dst


def path_level_fuse(per_path: Sequence[nm.Matrix], path_w, path_b, path_q):
    """Blend per-meta-path node vectors with softmax weights per node.

    Returns (fused, beta) where beta rows sum to one across the paths.
    """
    if not per_path:
        raise ValueError("need at least one meta-path vector set")
    path_w, path_b, path_q = map(_as_matrix, (path_w, path_b, path_q))
    score_cols = [
        nm.matmul(nm.tanh(nm.add(nm.matmul(h, path_w), path_b)), nm.transpose(path_q))
        for h in per_path
    ]
    scores = score_cols[0]
    for col in score_cols[1:]:
        scores = nm.concat_cols(scores, col)
    beta = nm.softmax_rows(scores)
    fused = nm.mul(nm.slice_cols(beta, 0, 1), per_path[0])
    for j in range(1, len(per_path)):
        fused = nm.add(fused, nm.mul(nm.slice_cols(beta, j, j + 1), per_path[j]))
    return fused, beta


def graph_level_embed(node_vectors: nm.Matrix, ctx_w):
    """Context-weighted sum of node vectors into one graph vector.

    Returns (h, gamma): gamma is the softmax of each node's inner product
    with the tanh-transformed mean context.
    """
    if node_vectors.rows == 0:
        raise ValueError("cannot embed an empty node set")
    ctx_w = _as_matrix(ctx_w)
    context = nm.tanh(nm.matmul(nm.mean_rows(node_vectors), ctx_w))
    scores = nm.matmul(node_vectors, nm.transpose(context))
    gamma = nm.softmax_rows(nm.transpose(scores))  # 1 x n
    h = nm.matmul(gamma, node_vectors)
    return h, gamma


def embed_subgraph(
    tsg: TechniqueSubgraph,
    params: Mapping[str, nm.Matrix | np.ndarray],
    config: HanConfig,
    attention: AttentionRecord | None = None,
) -> nm.Matrix:
    """Full three-stage composition; returns a (1, dim) matrix.

    ``params`` may hold plain arrays (inference) or tape-registered matrices
    (training); gradients flow through every stage.
    """
    feats = tsg.features()
    if feats.shape[1] != config.feature_dim:
        raise ValueError(
            f"subgraph features are {feats.shape[1]}-dim, "
            f"encoder expects {config.feature_dim}"
        )
    if config.log1p_features:
        feats = np.log1p(feats)
    projected = nm.matmul(nm.Matrix(feats), _as_matrix(params["proj"]))

    per_path = []
    for mp in config.metapaths:
        h_mp, alpha, dst = node_level_embed(
            tsg,
            projected,
            mp,
            params[f"att_w_{mp}"],
            params[f"att_a_{mp}"],
            slope=config.slope,
        )
        per_path.append(h_mp)
        if attention is not None:
            attention.alpha[mp] = (alpha.value[:, 0].copy(), dst.copy())

    fused, beta = path_level_fuse(
        per_path, params["path_w"], params["path_b"], params["path_q"]
    )
    h, gamma = graph_level_embed(fused, params["ctx_w"])
    if attention is not None:
        attention.beta = beta.value.copy()
        attention.gamma = gamma.value[0].copy()
    return h
