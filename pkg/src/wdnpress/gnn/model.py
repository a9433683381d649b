"""GATRes: encoder, residual multi-head attention blocks, MLP decoder.

Each block maps ``x -> x + act(GAT(x))``. A GAT layer projects node states
with ``W``, scores every arc ``u -> v`` (self-loops included) with
``LeakyReLU(a_src . z_u + a_dst . z_v [+ edge term])``, normalizes the scores
over each destination's in-arcs, and sums the weighted source projections.
Heads are concatenated back to the hidden width. All gradients are derived
by hand in :func:`backward`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import EmptyMaskSupport, NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from ..network import GraphTopology
from . import kernels

ACTIVATIONS = ("elu", "relu", "tanh")
ELEVATION_SCALES = ("range", "pressure")
EDGE_CHANNELS = 7  # length, diameter, roughness, pipe, pump, valve, self-loop


@dataclass
class ModelConfig:
    blocks: int = 4
    heads: int = 4
    hidden: int = 32
    negative_slope: float = 0.2
    use_edge_attr: bool = False
    decoder_width: int = 32
    activation: str = "elu"
    in_features: int = 3
    # "range": elevation min-max scaled to [0, 1]; "pressure": elevation offset by its
    # minimum and divided by the pressure range, so pressure + elevation is a head
    elevation_scale: str = "range"

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1 or self.hidden < 1 or self.decoder_width < 1:
            raise ValueError("blocks, heads, hidden and decoder_width must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.in_features < 1:
            raise ValueError("in_features must be >= 1")
        if self.elevation_scale not in ELEVATION_SCALES:
            raise ValueError(f"elevation_scale must be one of {ELEVATION_SCALES}")

    @property
    def head_width(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        return cls(**data)


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> ModelWeights:
        return ModelWeights(self.config, {k: v.copy() for k, v in self.params.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        shapes = {"enc.W": (c.in_features, c.hidden), "enc.b": (c.hidden,)}
        for l in range(c.blocks):
            shapes[f"blk{l}.W"] = (c.hidden, c.hidden)
            shapes[f"blk{l}.a_src"] = (c.heads, c.head_width)
            shapes[f"blk{l}.a_dst"] = (c.heads, c.head_width)
            shapes[f"blk{l}.b"] = (c.hidden,)
            if c.use_edge_attr:
                shapes[f"blk{l}.W_e"] = (EDGE_CHANNELS, c.heads)
        shapes.update({
            "dec.W1": (c.hidden, c.decoder_width),
            "dec.b1": (c.decoder_width,),
            "dec.W2": (c.decoder_width, 1),
            "dec.b2": (1,),
        })
        return shapes

    def check(self) -> None:
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise ShapeMismatch(f"parameter names differ: {sorted(set(expected) ^ set(self.params))}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeMismatch(f"{name} has shape {self.params[name].shape}, expected {shape}")


def init_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """Glorot-uniform matrices and attention vectors, zero biases."""
    rng = np.random.default_rng(seed)
    w = ModelWeights(config)
    for name, shape in w.expected_shapes().items():
        if len(shape) == 1:
            w.params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            w.params[name] = rng.uniform(-limit, limit, size=shape)
    return w


# --- graph preparation ---------------------------------------------------------


@dataclass(frozen=True)
class GraphPlan:
    """Arcs plus self-loops sorted by destination, ready for the kernels."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray
    edge_feat: np.ndarray  # (arcs, EDGE_CHANNELS)
    junction_mask: np.ndarray
    elevation: np.ndarray

    @property
    def n_arcs(self) -> int:
        return self.src.size

    @classmethod
    def from_topology(cls, topology: GraphTopology) -> GraphPlan:
        n = topology.n_nodes
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([topology.edge_index[0], loops])
        dst = np.concatenate([topology.edge_index[1], loops])
        attr = np.zeros((src.size, EDGE_CHANNELS))
        raw = topology.edge_attr
        if raw.size:
            scale = raw[:, :3].max(axis=0)
            scale[scale == 0] = 1.0
            attr[: raw.shape[0], :3] = raw[:, :3] / scale
            attr[: raw.shape[0], 3:6] = raw[:, 3:6]
        attr[raw.shape[0] :, 6] = 1.0
        order = np.lexsort((src, dst))
        src, dst, attr = src[order], dst[order], attr[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
        return cls(
            n_nodes=n,
            src=np.ascontiguousarray(src, dtype=np.int64),
            dst=np.ascontiguousarray(dst, dtype=np.int64),
            indptr=indptr,
            edge_feat=np.ascontiguousarray(attr),
            junction_mask=topology.junction_mask.copy(),
            elevation=topology.node_static[:, 0].copy(),
        )

    def permuted(self, perm: np.ndarray) -> GraphPlan:
        """The same graph with node ``i`` relabelled ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        src, dst = perm[self.src], perm[self.dst]
        order = np.lexsort((src, dst))
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=self.n_nodes), out=indptr[1:])
        return GraphPlan(
            n_nodes=self.n_nodes,
            src=np.ascontiguousarray(src[order]),
            dst=np.ascontiguousarray(dst[order]),
            indptr=indptr,
            edge_feat=np.ascontiguousarray(self.edge_feat[order]),
            junction_mask=self.junction_mask[inv],
            elevation=self.elevation[inv],
        )


# --- activations ---------------------------------------------------------------


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if name == "relu":
        return np.maximum(x, 0.0)
    return np.tanh(x)


def _act_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative of the activation given its input ``x`` and output ``y``."""
    if name == "elu":
        return np.where(x > 0, 1.0, y + 1.0)
    if name == "relu":
        return (x > 0).astype(np.float64)
    return 1.0 - y * y


# --- forward ---------------------------------------------------------------------


@dataclass
class AttentionTrace:
    """Attention coefficients per block, shaped (batch, arcs, heads), plus the arc list."""

    src: np.ndarray
    dst: np.ndarray
    alpha: list[np.ndarray]

    def row_sums(self, block: int) -> np.ndarray:
        """Sum of coefficients over every node's in-arcs: (batch, nodes, heads)."""
        a = self.alpha[block]
        n = int(self.dst.max()) + 1
        out = np.zeros((a.shape[0], n, a.shape[2]))
        np.add.at(out, (slice(None), self.dst), a)
        return out


def gat_layer_forward(h: np.ndarray, plan: GraphPlan, weights: ModelWeights, block: int, kern=kernels):
    """One attention layer (no residual, no activation).

    Returns the aggregated ``(batch, nodes, hidden)`` output and a cache used
    by the backward pass; ``cache["alpha"]`` is the attention trace.
    """
    c = weights.config
    p = weights.params
    if h.ndim != 3 or h.shape[1] != plan.n_nodes or h.shape[2] != c.hidden:
        raise ShapeMismatch(f"layer input has shape {h.shape}, expected (B, {plan.n_nodes}, {c.hidden})")
    bsz, n = h.shape[:2]
    z = np.ascontiguousarray((h @ p[f"blk{block}.W"]).reshape(bsz, n, c.heads, c.head_width))
    s_src = np.ascontiguousarray(np.einsum("bnkf,kf->bnk", z, p[f"blk{block}.a_src"]))
    s_dst = np.ascontiguousarray(np.einsum("bnkf,kf->bnk", z, p[f"blk{block}.a_dst"]))
    if c.use_edge_attr:
        bias = np.ascontiguousarray(plan.edge_feat @ p[f"blk{block}.W_e"])
    else:
        bias = np.zeros((plan.n_arcs, c.heads))
    alpha, pre = kern.attention_forward(s_src, s_dst, bias, plan.src, plan.indptr, c.negative_slope)
    agg = kern.aggregate(alpha, z, plan.src, plan.indptr).reshape(bsz, n, c.hidden) + p[f"blk{block}.b"]
    return agg, {"h": h, "z": z, "alpha": alpha, "pre": pre}


def forward(weights: ModelWeights, plan: GraphPlan, x: np.ndarray, kern=kernels) -> tuple[np.ndarray, dict]:
    """Batched forward pass: ``x`` is (batch, nodes, in_features); returns (batch, nodes)."""
    c = weights.config
    p = weights.params
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != plan.n_nodes or x.shape[2] != c.in_features:
        raise ShapeMismatch(f"features have shape {x.shape}, expected (B, {plan.n_nodes}, {c.in_features})")
    cache: dict = {"x": x, "blocks": []}
    a0 = x @ p["enc.W"] + p["enc.b"]
    h = _act(c.activation, a0)
    cache["enc"] = (a0, h)
    for l in range(c.blocks):
        agg, layer = gat_layer_forward(h, plan, weights, l, kern)
        y = _act(c.activation, agg)
        layer["agg"], layer["y"] = agg, y
        cache["blocks"].append(layer)
        h = h + y
    u = h @ p["dec.W1"] + p["dec.b1"]
    v = _act(c.activation, u)
    out = (v @ p["dec.W2"])[..., 0] + p["dec.b2"][0]
    cache["dec"] = (h, u, v)
    if not np.all(np.isfinite(out)):
        raise NonFiniteActivation("non-finite model output")
    return out, cache


def gatres_forward(weights: ModelWeights, plan: GraphPlan, x: np.ndarray, kern=kernels) -> tuple[np.ndarray, AttentionTrace]:
    out, cache = forward(weights, plan, x, kern)
    trace = AttentionTrace(plan.src, plan.dst, [b["alpha"] for b in cache["blocks"]])
    return out, trace


# --- loss and backward -------------------------------------------------------------


def masked_loss(pred: np.ndarray, target: np.ndarray, loss_mask: np.ndarray, kind: str = "mae") -> tuple[float, np.ndarray]:
    """Mean absolute (or squared) error over ``loss_mask`` entries and its gradient."""
    if pred.shape != target.shape or pred.shape != loss_mask.shape:
        raise ShapeMismatch(f"pred {pred.shape}, target {target.shape}, mask {loss_mask.shape} differ")
    count = int(np.count_nonzero(loss_mask))
    if count == 0:
        raise EmptyMaskSupport("no masked junctions to score")
    diff = np.where(loss_mask, pred - target, 0.0)
    if kind == "mae":
        return float(np.abs(diff).sum() / count), np.sign(diff) / count
    if kind == "mse":
        return float((diff * diff).sum() / count), 2.0 * diff / count
    raise ValueError(f"unknown loss {kind!r}")


def backward(weights: ModelWeights, plan: GraphPlan, cache: dict, dout: np.ndarray, kern=kernels) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter, given d loss / d output."""
    c = weights.config
    p = weights.params
    g: dict[str, np.ndarray] = {}
    bsz, n = dout.shape
    h_top, u, v = cache["dec"]

    g["dec.b2"] = np.array([dout.sum()])
    g["dec.W2"] = np.einsum("bnd,bn->d", v, dout)[:, None]
    dv = dout[..., None] * p["dec.W2"][:, 0]
    du = dv * _act_grad(c.activation, u, v)
    g["dec.b1"] = du.sum(axis=(0, 1))
    g["dec.W1"] = np.einsum("bnh,bnd->hd", h_top, du)
    dh = du @ p["dec.W1"].T

    for l in reversed(range(c.blocks)):
        layer = cache["blocks"][l]
        dagg = dh * _act_grad(c.activation, layer["agg"], layer["y"])
        g[f"blk{l}.b"] = dagg.sum(axis=(0, 1))
        dagg4 = np.ascontiguousarray(dagg.reshape(bsz, n, c.heads, c.head_width))
        z = layer["z"]
        dalpha, dz = kern.aggregate_backward(layer["alpha"], z, dagg4, plan.src, plan.indptr)
        dpre, ds_src, ds_dst = kern.attention_backward(
            layer["alpha"], layer["pre"], dalpha, plan.src, plan.indptr, n, c.negative_slope
        )
        if c.use_edge_attr:
            g[f"blk{l}.W_e"] = plan.edge_feat.T @ dpre.sum(axis=0)
        g[f"blk{l}.a_src"] = np.einsum("bnk,bnkf->kf", ds_src, z)
        g[f"blk{l}.a_dst"] = np.einsum("bnk,bnkf->kf", ds_dst, z)
        dz = dz + ds_src[..., None] * p[f"blk{l}.a_src"] + ds_dst[..., None] * p[f"blk{l}.a_dst"]
        dz2 = dz.reshape(bsz, n, c.hidden)
        h_in = layer["h"]
        g[f"blk{l}.W"] = np.einsum("bni,bnj->ij", h_in, dz2)
        dh = dh + dz2 @ p[f"blk{l}.W"].T

    a0, h0 = cache["enc"]
    da0 = dh * _act_grad(c.activation, a0, h0)
    g["enc.b"] = da0.sum(axis=(0, 1))
    g["enc.W"] = np.einsum("bni,bnj->ij", cache["x"], da0)
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    return g
