"""Chain-complex code embeddings via multi-view message passing.

A CSS code is presented as three small heterogeneous graphs: a decode
view over (checks, qubits, checks) wired by the parity-check matrices, a
homology view attaching logical Z representatives to the qubit layer,
and a dual view attaching logical X representatives.  Message-passing
rounds update per-part node features; mean readouts per part are
concatenated across parts and views and passed through a final
perceptron to a fixed-width vector, so codes of any (n, k) share one
parameter layout.

The same formula source runs on tape `Var`s for training and on bare
arrays for inference; graph wiring is expressed entirely as constant
selection and aggregation matrices entering matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector, Var
from .codes import CssCode

CHECKPOINT_FORMAT_VERSION = 1

Param = Union[Var, np.ndarray]
Getter = Callable[[str], Param]

VARIANTS = ("three-view", "one-view", "none")
AGGREGATIONS = ("sum", "mean")

# Part names are global: a part keeps one learnable type vector no
# matter which views it appears in.
PART_NAMES = ("c2", "c1", "c0", "h1", "h1d")


@dataclass(frozen=True)
class EmbeddingConfig:
    """Width, depth, aggregation, and view selection for the embedding.

    The default aggregation is "sum": with part-wise constant initial
    features, mean aggregation returns the same vector at every node of
    every code whose views have no isolated nodes, so regular code
    families would all collapse to one embedding.  Sum aggregation keeps
    node degrees, and with them the wiring, in the computation.
    """

    d_hidden: int = 32
    d_f: int = 16
    layers_per_view: int = 2
    aggregation: str = "sum"
    variant: str = "three-view"

    def __post_init__(self):
        if self.d_hidden < 1 or self.d_f < 1:
            raise ValueError("feature widths must be at least 1")
        if self.layers_per_view < 1:
            raise ValueError("layers_per_view must be at least 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class Relation:
    """A directed typed edge set with precomputed wiring constants.

    ``incidence`` is (dst nodes, src nodes); ``src_select``/``dst_select``
    pick edge endpoints as (edges, nodes) selection matrices; ``agg_sum``
    and ``agg_mean`` scatter edge messages back to destination nodes.
    """

    name: str
    src: str
    dst: str
    incidence: np.ndarray
    src_select: np.ndarray
    dst_select: np.ndarray
    agg_sum: np.ndarray
    agg_mean: np.ndarray


@dataclass(frozen=True)
class ViewGraph:
    name: str
    parts: tuple[tuple[str, int], ...]
    relations: tuple[Relation, ...]


@dataclass(frozen=True)
class MultiViewRep:
    views: tuple[ViewGraph, ...]


def _relation(name: str, src: str, dst: str, incidence: np.ndarray) -> Relation:
    incidence = np.asarray(incidence, dtype=float)
    n_dst, n_src = incidence.shape
    dst_idx, src_idx = np.nonzero(incidence)
    n_edges = dst_idx.size
    src_select = np.zeros((n_edges, n_src))
    src_select[np.arange(n_edges), src_idx] = 1.0
    dst_select = np.zeros((n_edges, n_dst))
    dst_select[np.arange(n_edges), dst_idx] = 1.0
    agg_sum = dst_select.T.copy()
    degree = agg_sum.sum(axis=1, keepdims=True)
    agg_mean = agg_sum / np.maximum(degree, 1.0)
    return Relation(name, src, dst, incidence, src_select, dst_select, agg_sum, agg_mean)


def _code_relations(code: CssCode) -> dict[str, Relation]:
    hx = code.hx.to_array().astype(float)
    hz = code.hz.to_array().astype(float)
    lx = code.lx.to_array().astype(float)
    lz = code.lz.to_array().astype(float)
    return {
        "d2": _relation("d2", "c2", "c1", hz.T),
        "d2T": _relation("d2T", "c1", "c2", hz),
        "d1": _relation("d1", "c1", "c0", hx),
        "d1T": _relation("d1T", "c0", "c1", hx.T),
        "iw": _relation("iw", "h1", "c1", lz.T),
        "iwT": _relation("iwT", "c1", "h1", lz),
        "iv": _relation("iv", "h1d", "c1", lx.T),
        "ivT": _relation("ivT", "c1", "h1d", lx),
    }


@lru_cache(maxsize=256)
def build_views(code: CssCode) -> MultiViewRep:
    """Assemble the decode, homology, and dual view graphs of a code."""
    rel = _code_relations(code)
    mz, mx, n, k = code.hz.rows, code.hx.rows, code.n, code.k
    decode = ViewGraph(
        "decode",
        (("c2", mz), ("c1", n), ("c0", mx)),
        (rel["d2"], rel["d2T"], rel["d1"], rel["d1T"]),
    )
    homology = ViewGraph(
        "homology",
        (("h1", k), ("c1", n), ("c2", mz)),
        (rel["iw"], rel["iwT"], rel["d2"], rel["d2T"]),
    )
    dual = ViewGraph(
        "dual",
        (("h1d", k), ("c1", n), ("c0", mx)),
        (rel["iv"], rel["ivT"], rel["d1"], rel["d1T"]),
    )
    return MultiViewRep((decode, homology, dual))


@lru_cache(maxsize=256)
def build_single_view(code: CssCode) -> ViewGraph:
    """All five parts and all eight relations as one graph."""
    rel = _code_relations(code)
    mz, mx, n, k = code.hz.rows, code.hx.rows, code.n, code.k
    parts = (("c2", mz), ("c1", n), ("c0", mx), ("h1", k), ("h1d", k))
    order = ("d2", "d2T", "d1", "d1T", "iw", "iwT", "iv", "ivT")
    return ViewGraph("all", parts, tuple(rel[o] for o in order))


# Relation name lists are fixed per view so the parameter layout never
# depends on a particular code.
VIEW_RELATION_NAMES = {
    "decode": ("d2", "d2T", "d1", "d1T"),
    "homology": ("iw", "iwT", "d2", "d2T"),
    "dual": ("iv", "ivT", "d1", "d1T"),
    "all": ("d2", "d2T", "d1", "d1T", "iw", "iwT", "iv", "ivT"),
}
VIEW_PART_COUNTS = {"decode": 3, "homology": 3, "dual": 3, "all": 5}


def _affine(x: Param, w: Param, b: Param) -> Param:
    rows = ad.value_of(x).shape[0]
    return ad.add(ad.matmul(x, w), ad.matmul(np.ones((rows, 1)), b))


def _mlp(x: Param, get: Getter, prefix: str) -> Param:
    hidden = ad.softplus(_affine(x, get(f"{prefix}.w1"), get(f"{prefix}.b1")))
    return _affine(hidden, get(f"{prefix}.w2"), get(f"{prefix}.b2"))


def mp_layer(
    view: ViewGraph,
    relation: Relation,
    features: Mapping[str, Param],
    params: Getter,
    aggregation: str = "mean",
) -> dict[str, Param]:
    """One message-passing update along a relation.

    Edge messages are the message perceptron applied to concatenated
    (destination, source) endpoint features; the aggregate over incident
    edges (zero for isolated nodes) is combined with the destination's
    current features by the combine perceptron.  Only the destination
    part's features change.
    """
    x_dst = features[relation.dst]
    x_src = features[relation.src]
    edge_dst = ad.matmul(relation.dst_select, x_dst)
    edge_src = ad.matmul(relation.src_select, x_src)
    messages = _mlp(ad.concat([edge_dst, edge_src], axis=1), params, "msg")
    agg_matrix = relation.agg_mean if aggregation == "mean" else relation.agg_sum
    aggregate = ad.matmul(agg_matrix, messages)
    combined = _mlp(ad.concat([x_dst, aggregate], axis=1), params, "cmb")
    out = dict(features)
    out[relation.dst] = combined
    return out


def _relation_getter(get: Getter, view_name: str, rel_name: str, layer: int) -> Getter:
    prefix = f"{view_name}.{rel_name}.r{layer}"
    return lambda name: get(f"{prefix}.{name}")


def _run_view(view: ViewGraph, get: Getter, cfg: EmbeddingConfig) -> Param:
    features: dict[str, Param] = {
        part: ad.matmul(np.ones((count, 1)), get(f"type.{part}"))
        for part, count in view.parts
    }
    for layer in range(cfg.layers_per_view):
        for relation in view.relations:
            rel_get = _relation_getter(get, view.name, relation.name, layer)
            features = mp_layer(view, relation, features, rel_get, cfg.aggregation)
    readouts = [
        ad.matmul(np.full((1, count), 1.0 / count), features[part])
        for part, count in view.parts
    ]
    return ad.concat(readouts, axis=1)


def fixed_projection(length: int, d_f: int) -> np.ndarray:
    """Deterministic non-learned projection for the flattened baseline."""
    rng = np.random.default_rng([0xC0DE, length, d_f])
    return rng.standard_normal((length, d_f)) / np.sqrt(length)


def embed_with(code: CssCode, get: Getter, cfg: EmbeddingConfig) -> Param:
    """Embedding as a (1, d_f) row; polymorphic over Vars and arrays."""
    if cfg.variant == "none":
        hx = code.hx.to_array().astype(float).ravel()
        hz = code.hz.to_array().astype(float).ravel()
        flat = np.concatenate([hx, hz])[np.newaxis, :]
        return flat @ fixed_projection(flat.size, cfg.d_f)
    if cfg.variant == "three-view":
        views = build_views(code).views
    else:
        views = (build_single_view(code),)
    pooled = ad.concat([_run_view(v, get, cfg) for v in views], axis=1)
    hidden = ad.softplus(_affine(pooled, get("head.w1"), get("head.b1")))
    return _affine(hidden, get("head.w2"), get("head.b2"))


def embed(code: CssCode, params: ParamVector, cfg: EmbeddingConfig) -> np.ndarray:
    """Numeric embedding vector of length d_f."""
    out = embed_with(code, params.segment, cfg)
    return np.asarray(out).ravel()


def _mlp_shapes(d_in: int, d_hidden: int, d_out: int, prefix: str):
    return [
        (f"{prefix}.w1", (d_in, d_hidden)),
        (f"{prefix}.b1", (1, d_hidden)),
        (f"{prefix}.w2", (d_hidden, d_out)),
        (f"{prefix}.b2", (1, d_out)),
    ]


def param_layout(cfg: EmbeddingConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named segment shapes; independent of any particular code."""
    if cfg.variant == "none":
        return []
    dh = cfg.d_hidden
    layout: list[tuple[str, tuple[int, ...]]] = [
        (f"type.{part}", (1, dh)) for part in PART_NAMES
    ]
    view_names = (
        ("decode", "homology", "dual") if cfg.variant == "three-view" else ("all",)
    )
    for view_name in view_names:
        for rel_name in VIEW_RELATION_NAMES[view_name]:
            for layer in range(cfg.layers_per_view):
                prefix = f"{view_name}.{rel_name}.r{layer}"
                layout += _mlp_shapes(2 * dh, dh, dh, f"{prefix}.msg")
                layout += _mlp_shapes(2 * dh, dh, dh, f"{prefix}.cmb")
    pooled_width = dh * sum(VIEW_PART_COUNTS[v] for v in view_names)
    layout += _mlp_shapes(pooled_width, dh, cfg.d_f, "head")
    return layout


def init_params(cfg: EmbeddingConfig, rng: np.random.Generator) -> ParamVector:
    """Uniform +-1/sqrt(fan-in) initialization, biases included."""
    segments = {}
    for name, shape in param_layout(cfg):
        if name.endswith(".b1") or name.endswith(".b2"):
            matching_w = name[:-3] + (".w1" if name.endswith(".b1") else ".w2")
            fan_in = dict(param_layout(cfg))[matching_w][0]
        else:
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        segments[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector.from_segments(segments)


def save_params(path, params: ParamVector) -> None:
    """Checkpoint: named double segments plus a format-version entry."""
    arrays = {name: params.segment(name) for name in params.names}
    arrays["__format_version__"] = np.asarray([CHECKPOINT_FORMAT_VERSION])
    arrays["__segment_order__"] = np.asarray(params.names, dtype=np.str_)
    np.savez(path, **arrays)


def load_params(path) -> ParamVector:
    with np.load(path) as data:
        version = int(data["__format_version__"][0])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        names = [str(n) for n in data["__segment_order__"]]
        return ParamVector.from_segments({n: data[n] for n in names})
