"""The DictionaryLookup benchmark: generation, node encoding, model, accuracy.

Each instance is a complete bipartite graph over ``k`` query nodes (ids
``0..k-1``) and ``k`` key nodes (ids ``k..2k-1``). Keys carry an attribute
and a value, queries carry only an attribute, and every graph draws its own
attribute-to-value assignment. A query's label is the value of the key
sharing its attribute.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .graph import GraphRecord, bipartite_complete, read_jsonl, repeat_graph, write_jsonl
from .layers import AttentionLayer, _decode, _encode, layer_forward
from .tensor import Tensor

TRAIN_FRACTION = 0.8


@dataclass
class DictLookupInstance:
    k: int
    key_attrs: np.ndarray
    key_values: np.ndarray
    query_attrs: np.ndarray

    @cached_property
    def graph(self):
        return bipartite_complete(self.k)

    @property
    def labels(self):
        return lookup_labels(self.key_attrs, self.key_values, self.query_attrs)


def lookup_labels(key_attrs, key_values, query_attrs):
    """Vectorized label rule; accepts single instances or stacked ``G x k`` arrays."""
    key_attrs = np.asarray(key_attrs)
    value_of_attr = np.empty_like(key_attrs)
    np.put_along_axis(value_of_attr, key_attrs, np.asarray(key_values), axis=-1)
    return np.take_along_axis(value_of_attr, np.asarray(query_attrs), axis=-1)


@dataclass
class DictDataset:
    """Stacked ``G x k`` arrays plus an 80:20 train/test split of graph indices."""

    k: int
    key_attrs: np.ndarray
    key_values: np.ndarray
    query_attrs: np.ndarray
    train: np.ndarray
    test: np.ndarray

    def __len__(self):
        return self.key_attrs.shape[0]

    @property
    def labels(self):
        return lookup_labels(self.key_attrs, self.key_values, self.query_attrs)

    def instance(self, i):
        return DictLookupInstance(self.k, self.key_attrs[i], self.key_values[i], self.query_attrs[i])

    @property
    def instances(self):
        return [self.instance(i) for i in range(len(self))]

    def split_indices(self, split):
        if split == "train":
            return self.train
        if split == "test":
            return self.test
        if split == "all":
            return np.arange(len(self))
        raise ValueError(f"unknown split {split!r}")

    def to_records(self):
        split_of = np.empty(len(self), dtype=object)
        split_of[self.train] = "train"
        split_of[self.test] = "test"
        graph = bipartite_complete(self.k)
        labels = self.labels
        for i in range(len(self)):
            attrs = [[int(a), None] for a in self.query_attrs[i]]
            attrs += [[int(a), int(v)] for a, v in zip(self.key_attrs[i], self.key_values[i])]
            yield GraphRecord(graph, attrs, labels[i].tolist(), {"k": self.k, "split": split_of[i]})

    def save_jsonl(self, path):
        write_jsonl(path, self.to_records())

    @classmethod
    def load_jsonl(cls, path):
        records = read_jsonl(path)
        if not records:
            raise ContractError(f"{path}: no graph records")
        k = int(records[0].extra.get("k", records[0].graph.num_nodes // 2))
        ka, kv, qa, train, test = [], [], [], [], []
        for i, rec in enumerate(records):
            attrs = rec.node_attrs
            if len(attrs) != 2 * k or rec.graph.num_nodes != 2 * k:
                raise ContractError(f"{path}: record {i} does not have 2k={2 * k} nodes")
            qa.append([a for a, _ in attrs[:k]])
            ka.append([a for a, _ in attrs[k:]])
            kv.append([v for _, v in attrs[k:]])
            (test if rec.extra.get("split") == "test" else train).append(i)
        ds = cls(k, np.array(ka), np.array(kv), np.array(qa), np.array(train, dtype=np.int64),
                 np.array(test, dtype=np.int64))
        for i, (rec, expect) in enumerate(zip(records, ds.labels.tolist())):
            if rec.labels != expect:
                raise ContractError(f"{path}: record {i} labels disagree with the attribute mapping")
        return ds


def gen_dataset(k, num_graphs, seed=0):
    """Independent uniform permutations per graph; deterministic in ``seed``."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if num_graphs < 5:
        raise ContractError(f"need at least 5 graphs for an 80:20 split, got {num_graphs}")
    rng = np.random.default_rng(seed)
    key_attrs = rng.permuted(np.tile(np.arange(k), (num_graphs, 1)), axis=1)
    key_values = rng.permuted(np.tile(np.arange(k), (num_graphs, 1)), axis=1)
    query_attrs = rng.permuted(np.tile(np.arange(k), (num_graphs, 1)), axis=1)
    order = rng.permutation(num_graphs)
    n_train = int(round(TRAIN_FRACTION * num_graphs))
    return DictDataset(k, key_attrs, key_values, query_attrs,
                       np.sort(order[:n_train]), np.sort(order[n_train:]))


def _node_rows(attr_emb, val_emb, empty_emb, key_attrs, key_values, query_attrs):
    """Row of the combination table used by every node, graph-major."""
    key_attrs = np.atleast_2d(key_attrs)
    g, k = key_attrs.shape
    if attr_emb.rows < k or val_emb.rows < k:
        raise DimensionError(f"embedding tables have {attr_emb.rows}/{val_emb.rows} rows, need {k}")
    if empty_emb.rows != 1 or empty_emb.cols != attr_emb.cols:
        raise DimensionError(f"empty embedding must be 1x{attr_emb.cols}, got {empty_emb.shape}")
    attr_idx = np.concatenate([np.atleast_2d(query_attrs), key_attrs], axis=1).reshape(-1)
    empty_slot = val_emb.rows
    val_idx = np.concatenate(
        [np.full((g, k), empty_slot), np.atleast_2d(key_values)], axis=1
    ).reshape(-1)
    for name, idx, hi in (("attribute", attr_idx, attr_emb.rows), ("value", val_idx, empty_slot + 1)):
        if idx.min() < 0 or idx.max() >= hi:
            raise IndexError(f"{name} index out of range [0, {hi})")
    return attr_idx * (empty_slot + 1) + val_idx


def _combination_table(attr_emb, val_emb, empty_emb):
    """Features of every (attribute, value-or-empty) pair; the empty slot is last."""
    value_table = T.vstack(val_emb, empty_emb)
    a, v = attr_emb.rows, value_table.rows
    return T.relu(T.gather_rows(attr_emb, np.repeat(np.arange(a), v))
                  + T.gather_rows(value_table, np.tile(np.arange(v), a)))


def _encode_stacked(attr_emb, val_emb, empty_emb, key_attrs, key_values, query_attrs):
    rows = _node_rows(attr_emb, val_emb, empty_emb, key_attrs, key_values, query_attrs)
    return T.gather_rows(_combination_table(attr_emb, val_emb, empty_emb), rows)


def encode_nodes(inst, attr_emb, val_emb, empty_emb):
    """``2k x d`` features: queries ``ReLU(attr + empty)``, keys ``ReLU(attr + value)``."""
    return _encode_stacked(
        T.tensor(attr_emb), T.tensor(val_emb), T.tensor(empty_emb),
        inst.key_attrs, inst.key_values, inst.query_attrs,
    )


class DictLookupModel:
    """Embeddings -> one attention layer -> linear readout on query nodes."""

    def __init__(self, layer, attr_emb, val_emb, empty_emb, w_out, b_out, k):
        self.layer = layer
        self.attr_emb = attr_emb
        self.val_emb = val_emb
        self.empty_emb = empty_emb
        self.w_out = w_out
        self.b_out = b_out
        self.k = k
        self._graphs = {}

    @classmethod
    def init(cls, kind, k, hidden=128, heads=1, shared_w=None, seed=0):
        rng = np.random.default_rng(seed)
        layer = AttentionLayer.init(kind, hidden, hidden, heads=heads, shared_w=shared_w,
                                    activation="identity", seed=int(rng.integers(2**31)))
        lim = np.sqrt(6.0 / (k + hidden))
        emb = lambda rows: Tensor(rng.uniform(-lim, lim, (rows, hidden)), requires_grad=True)
        lim_out = np.sqrt(6.0 / (heads * hidden + k))
        w_out = Tensor(rng.uniform(-lim_out, lim_out, (heads * hidden, k)), requires_grad=True)
        return cls(layer, emb(k), emb(k), emb(1), w_out, Tensor(np.zeros((1, k)), requires_grad=True), k)

    def parameters(self):
        return [self.attr_emb, self.val_emb, self.empty_emb, *self.layer.parameters(),
                self.w_out, self.b_out]

    def _batch_graph(self, copies):
        if copies not in self._graphs:
            g = repeat_graph(bipartite_complete(self.k), copies)
            queries = (np.arange(copies)[:, None] * 2 * self.k + np.arange(self.k)).reshape(-1)
            self._graphs[copies] = (g, queries)
        return self._graphs[copies]

    def logits(self, key_attrs, key_values, query_attrs, return_attention=False):
        """Query logits, ``(G*k) x k`` in graph-major order."""
        key_attrs = np.atleast_2d(key_attrs)
        g, queries = self._batch_graph(key_attrs.shape[0])
        rows = _node_rows(self.attr_emb, self.val_emb, self.empty_emb,
                          key_attrs, key_values, query_attrs)
        table = _combination_table(self.attr_emb, self.val_emb, self.empty_emb)
        out = layer_forward(self.layer, g, table, consumed=queries,
                            return_attention=return_attention, node_rows=rows)
        if return_attention:
            out, attn = out
            return out @ self.w_out + self.b_out, attn
        return out @ self.w_out + self.b_out

    def predict(self, key_attrs, key_values, query_attrs, chunk=512):
        key_attrs = np.atleast_2d(key_attrs)
        key_values, query_attrs = np.atleast_2d(key_values), np.atleast_2d(query_attrs)
        preds = []
        with T.no_grad():
            for s in range(0, key_attrs.shape[0], chunk):
                sl = slice(s, s + chunk)
                z = self.logits(key_attrs[sl], key_values[sl], query_attrs[sl]).data
                preds.append(z.argmax(axis=1).reshape(-1, self.k))
        return np.concatenate(preds, axis=0)

    def attention_matrix(self, inst, head=0):
        """``k x k`` coefficients; row q is query q's distribution over keys."""
        with T.no_grad():
            _, attn = self.logits(inst.key_attrs, inst.key_values, inst.query_attrs,
                                  return_attention=True)
        a = attn[head]
        alpha = np.zeros((self.k, self.k))
        alpha[a.dst, a.src - self.k] = a.alpha
        return alpha

    def node_features(self, inst):
        with T.no_grad():
            return encode_nodes(inst, self.attr_emb, self.val_emb, self.empty_emb).data

    def to_dict(self):
        rec = self.layer.to_dict()
        rec["k"] = self.k
        for name in ("attr_emb", "val_emb", "empty_emb", "w_out", "b_out"):
            rec["weights"][name] = _encode(getattr(self, name))
        return rec

    @classmethod
    def from_dict(cls, rec):
        weights = dict(rec["weights"])
        extra = {name: _decode(weights.pop(name))
                 for name in ("attr_emb", "val_emb", "empty_emb", "w_out", "b_out")}
        layer = AttentionLayer.from_dict({**rec, "weights": weights})
        return cls(layer, k=rec["k"], **extra)


def evaluate(model, dataset, split="test"):
    """Fraction of query nodes in ``split`` whose predicted value is correct."""
    idx = dataset.split_indices(split)
    if idx.size == 0:
        return float("nan")
    preds = model.predict(dataset.key_attrs[idx], dataset.key_values[idx], dataset.query_attrs[idx])
    return float(np.mean(preds == dataset.labels[idx]))
