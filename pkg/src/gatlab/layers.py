"""GAT, GATv2 and dot-product (DPGAT) attention layers.

All three share one aggregation path: score every edge ``(j, i)``, softmax the
scores over each neighborhood, and average the transformed neighbor features
with those weights. Heads run independently and are concatenated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DegenerateNeighborhoodError, DimensionError, KindMismatchError
from .tensor import DEFAULT_SLOPE, Tensor

GAT = "gat"
GATV2 = "gatv2"
DPGAT = "dpgat"
KINDS = (GAT, GATV2, DPGAT)

ACTIVATIONS = {"identity": T.identity, "elu": T.elu, "relu": T.relu}


def glorot_uniform(rng, rows, cols):
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class AttentionLayer:
    """Variant-tagged parameter bundle.

    Per-head parameter shapes:

    * GAT: ``W`` (d' x d), ``a`` (2d' x 1)
    * GATv2: ``W`` (d' x 2d), or (d' x d) holding ``W'`` when ``shared_w`` is
      set so that the full matrix is ``[W' | W']``; ``a`` (d' x 1); bias
      ``b`` (1 x d')
    * DPGAT: ``Q``, ``K`` (d x d_k), ``V`` (d x d'); with ``shared_w`` the
      key projection reuses ``Q``
    """

    kind: str
    d_in: int
    d_out: int
    heads: int = 1
    shared_w: bool = False
    d_k: int | None = None
    activation: str = "identity"
    slope: float = DEFAULT_SLOPE
    residual: bool = False
    seed: int | None = None
    params: list = field(default_factory=list)
    residual_proj: Tensor | None = None

    @classmethod
    def init(
        cls,
        kind,
        d_in,
        d_out,
        heads=1,
        shared_w=None,
        d_k=None,
        activation="identity",
        slope=DEFAULT_SLOPE,
        residual=False,
        seed=0,
    ):
        """Glorot-uniform weights, zero biases.

        ``shared_w`` defaults to True for GATv2 (``W = [W' | W']``) and for
        DPGAT (``Q = K``, ``d_k = d'``), False for GAT where it has no meaning.
        """
        if kind not in KINDS:
            raise KindMismatchError(f"unknown layer kind {kind!r}; expected one of {KINDS}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if shared_w is None:
            shared_w = kind != GAT
        if kind == GAT:
            shared_w = False
        if kind == DPGAT:
            d_k = d_out if (shared_w or d_k is None) else d_k
        rng = np.random.default_rng(seed)
        layer = cls(kind, d_in, d_out, heads, bool(shared_w), d_k, activation, slope, residual, seed)
        d, dp = d_in, d_out
        for _ in range(heads):
            if kind == GAT:
                p = {"W": glorot_uniform(rng, dp, d), "a": glorot_uniform(rng, 2 * dp, 1)}
            elif kind == GATV2:
                w_cols = d if shared_w else 2 * d
                p = {
                    "W": glorot_uniform(rng, dp, w_cols),
                    "a": glorot_uniform(rng, dp, 1),
                    "b": np.zeros((1, dp)),
                }
            else:
                p = {"Q": glorot_uniform(rng, d, d_k)}
                if not shared_w:
                    p["K"] = glorot_uniform(rng, d, d_k)
                p["V"] = glorot_uniform(rng, d, dp)
            layer.params.append({k: Tensor(v, requires_grad=True) for k, v in p.items()})
        if residual and d_in != heads * d_out:
            layer.residual_proj = Tensor(glorot_uniform(rng, d_in, heads * d_out), requires_grad=True)
        return layer

    @property
    def out_width(self):
        return self.heads * self.d_out

    def parameters(self):
        out = [t for p in self.params for t in p.values()]
        if self.residual_proj is not None:
            out.append(self.residual_proj)
        return out

    def num_parameters(self):
        """Learned scalars actually held, excluding biases and residual projection."""
        return sum(t.data.size for p in self.params for name, t in p.items() if name != "b")

    def full_w(self, head=0):
        """GATv2's effective ``d' x 2d`` matrix (expands the shared form)."""
        self._require(GATV2)
        w = self.params[head]["W"].data
        return np.concatenate([w, w], axis=1) if self.shared_w else w

    def key_matrix(self, head=0):
        self._require(DPGAT)
        p = self.params[head]
        return p["Q"] if self.shared_w else p["K"]

    def _require(self, kind):
        if self.kind != kind:
            raise KindMismatchError(f"operation needs a {kind} layer, got {self.kind}")

    def to_dict(self):
        weights = {}
        for h, p in enumerate(self.params):
            for name, t in p.items():
                weights[f"head{h}.{name}"] = _encode(t)
        if self.residual_proj is not None:
            weights["residual"] = _encode(self.residual_proj)
        return {
            "kind": self.kind,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "heads": self.heads,
            "shared_w": self.shared_w,
            "d_k": self.d_k,
            "activation": self.activation,
            "slope": self.slope,
            "residual": self.residual,
            "weights": weights,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, rec):
        layer = cls(
            rec["kind"],
            rec["d_in"],
            rec["d_out"],
            rec["heads"],
            rec["shared_w"],
            rec.get("d_k"),
            rec.get("activation", "identity"),
            rec.get("slope", DEFAULT_SLOPE),
            rec.get("residual", False),
            rec.get("seed"),
        )
        weights = rec["weights"]
        for h in range(layer.heads):
            prefix = f"head{h}."
            layer.params.append(
                {
                    name[len(prefix):]: _decode(w)
                    for name, w in weights.items()
                    if name.startswith(prefix)
                }
            )
        if "residual" in weights:
            layer.residual_proj = _decode(weights["residual"])
        return layer

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _encode(t):
    # json writes floats with repr(), which round-trips float64 exactly
    return {"rows": t.rows, "cols": t.cols, "data": t.data.reshape(-1).tolist()}


def _decode(w):
    data = np.asarray(w["data"], dtype=np.float64).reshape(w["rows"], w["cols"])
    return Tensor(data, requires_grad=True)


def _vec(h):
    return np.asarray(h, dtype=np.float64).reshape(-1)


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def gat_score(layer, h_i, h_j, head=0):
    """``LeakyReLU(a . [W h_i | W h_j])`` for one query/key pair."""
    layer._require(GAT)
    p = layer.params[head]
    w, a = p["W"].data, p["a"].data[:, 0]
    return float(_leaky(a @ np.concatenate([w @ _vec(h_i), w @ _vec(h_j)]), layer.slope))


def gat_score_decomposed(layer, h_i, h_j, head=0):
    """The same score split as ``LeakyReLU(a1 . W h_i + a2 . W h_j)``."""
    layer._require(GAT)
    p = layer.params[head]
    w, a = p["W"].data, p["a"].data[:, 0]
    a1, a2 = a[: layer.d_out], a[layer.d_out:]
    return float(_leaky(a1 @ (w @ _vec(h_i)) + a2 @ (w @ _vec(h_j)), layer.slope))


def gatv2_score(layer, h_i, h_j, head=0):
    """``a . LeakyReLU(W [h_i | h_j] + b)`` for one query/key pair."""
    layer._require(GATV2)
    p = layer.params[head]
    z = layer.full_w(head) @ np.concatenate([_vec(h_i), _vec(h_j)]) + p["b"].data[0]
    return float(p["a"].data[:, 0] @ _leaky(z, layer.slope))


def dpgat_score(layer, h_i, h_j, head=0):
    """Scaled dot product ``(h_i Q) . (h_j K) / sqrt(d_k)``."""
    layer._require(DPGAT)
    q = _vec(h_i) @ layer.params[head]["Q"].data
    k = _vec(h_j) @ layer.key_matrix(head).data
    return float(q @ k / math.sqrt(layer.d_k))


def score(layer, h_i, h_j, head=0):
    fn = {GAT: gat_score, GATV2: gatv2_score, DPGAT: dpgat_score}[layer.kind]
    return fn(layer, h_i, h_j, head)


def head_scores(layer, head, h, src, dst):
    """Edge scores (``|E| x 1``) and the per-node value projection for one head.

    Node projections are computed once per node and then gathered per edge.
    """
    p = layer.params[head]
    if layer.kind == GAT:
        proj = h @ p["W"].T
        a = p["a"]
        s_dst = proj @ T.slice_rows(a, 0, layer.d_out)
        s_src = proj @ T.slice_rows(a, layer.d_out, 2 * layer.d_out)
        e = T.leaky_relu(T.gather_rows(s_dst, dst) + T.gather_rows(s_src, src), layer.slope)
        return e, proj
    if layer.kind == GATV2:
        w = p["W"]
        if layer.shared_w:
            left = right = h @ w.T
        else:
            left = h @ T.slice_cols(w, 0, layer.d_in).T
            right = h @ T.slice_cols(w, layer.d_in, 2 * layer.d_in).T
        e = T.gatv2_edge_scores(left, right, p["b"], p["a"], dst, src, layer.slope)
        return e, right
    q = h @ p["Q"]
    k = q if layer.shared_w else h @ p["K"]
    e = T.edge_inner(q, k, dst, src) * (1.0 / math.sqrt(layer.d_k))
    return e, h @ p["V"]


@dataclass
class Attention:
    """Attention coefficients of one head over the processed edges."""

    src: np.ndarray
    dst: np.ndarray
    alpha: np.ndarray


def layer_forward(layer, g, h, consumed=None, return_attention=False, node_rows=None):
    """Apply the layer to node features ``h`` (n x d) over graph ``g``.

    With ``consumed=None`` every node is computed and the result is
    ``n x (heads*d')``. Otherwise only edges into the listed nodes are
    processed and one output row per listed node is returned, in that order.

    ``node_rows`` lets many nodes share features: ``h`` is then a table and
    node ``v`` reads row ``h[node_rows[v]]``, so projections run once per
    table row instead of once per node.
    """
    h = T.tensor(h)
    if node_rows is None:
        if h.rows != g.num_nodes:
            raise DimensionError(f"layer expects {g.num_nodes} feature rows, got {h.rows}")
        row_of = np.arange(g.num_nodes)
    else:
        row_of = np.asarray(node_rows, dtype=np.int64)
        if row_of.shape != (g.num_nodes,) or row_of.min() < 0 or row_of.max() >= h.rows:
            raise DimensionError(
                f"node_rows must give one row of a {h.rows}-row table per node ({g.num_nodes})"
            )
    if h.cols != layer.d_in:
        raise DimensionError(f"layer expects {layer.d_in} feature columns, got {h.cols}")
    if consumed is None:
        nodes = np.arange(g.num_nodes)
        src, dst, seg = g.src, g.dst, g.dst
    else:
        nodes = np.asarray(consumed, dtype=np.int64)
        pos = np.full(g.num_nodes, -1, dtype=np.int64)
        pos[nodes] = np.arange(nodes.shape[0])
        keep = pos[g.dst] >= 0
        src, dst = g.src[keep], g.dst[keep]
        seg = pos[dst]
    deg = np.bincount(seg, minlength=nodes.shape[0])
    if np.any(deg == 0):
        bad = nodes[np.flatnonzero(deg == 0)[:5]].tolist()
        raise DegenerateNeighborhoodError(f"consumed node(s) {bad} have no neighbors")

    src_row, dst_row = row_of[src], row_of[dst]
    outs, attn = [], []
    for head in range(layer.heads):
        e, values = head_scores(layer, head, h, src_row, dst_row)
        alpha = T.segment_softmax(e, seg, nodes.shape[0])
        outs.append(T.weighted_aggregate(alpha, values, src_row, seg, nodes.shape[0]))
        if return_attention:
            attn.append(Attention(src, dst, alpha.data[:, 0].copy()))
    out = outs[0]
    for o in outs[1:]:
        out = T.concat_rows(out, o)
    out = ACTIVATIONS[layer.activation](out)
    if layer.residual:
        h_nodes = h if consumed is None and node_rows is None else T.gather_rows(h, row_of[nodes])
        out = out + (h_nodes if layer.residual_proj is None else h_nodes @ layer.residual_proj)
    return (out, attn) if return_attention else out


def score_table(layer, queries, keys, head=0):
    """``m x n`` table of scores for every (query, key) pair, via the edge path."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    m, n = queries.shape[0], keys.shape[0]
    dst = np.repeat(np.arange(m), n)
    src = m + np.tile(np.arange(n), m)
    with T.no_grad():
        e, _ = head_scores(layer, head, Tensor(np.vstack([queries, keys])), src, dst)
    return e.data.reshape(m, n)


def param_count(kind, d, d_out, d_k=None, heads=1, shared_w=False):
    """Learned scalars per layer, biases excluded.

    GAT ``2d' + dd'``; GATv2 ``d' + 2dd'`` (``d' + dd'`` with shared W);
    DPGAT ``2d d_k + dd'`` (``2dd'`` when Q = K and d_k = d').
    """
    if min(d, d_out, heads) < 1:
        raise ValueError("dimensions and head count must be positive")
    if kind == GAT:
        per_head = 2 * d_out + d * d_out
    elif kind == GATV2:
        per_head = d_out + (d * d_out if shared_w else 2 * d * d_out)
    elif kind == DPGAT:
        if shared_w:
            per_head = 2 * d * d_out
        else:
            if d_k is None:
                raise ValueError("DPGAT needs d_k unless shared_w is set")
            per_head = 2 * d * d_k + d * d_out
    else:
        raise KindMismatchError(f"unknown layer kind {kind!r}")
    return per_head * heads


def bias_count(kind, d_out, heads=1):
    """Bias scalars, reported apart from :func:`param_count`."""
    return d_out * heads if kind == GATV2 else 0
