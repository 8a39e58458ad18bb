import numpy as np
import pytest

from gatlab import tensor as T
from gatlab.dictlookup import (
    DictDataset,
    DictLookupModel,
    encode_nodes,
    evaluate,
    gen_dataset,
    lookup_labels,
)
from gatlab.errors import ContractError
from gatlab.graph import read_jsonl


class TestGeneration:
    def test_k1(self):
        ds = gen_dataset(1, 10, seed=0)
        np.testing.assert_array_equal(ds.labels, 0)

    def test_deterministic(self):
        a, b = gen_dataset(3, 1000, seed=4), gen_dataset(3, 1000, seed=4)
        for name in ("key_attrs", "key_values", "query_attrs", "train", "test"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_rows_are_permutations(self):
        ds = gen_dataset(6, 50, seed=1)
        for arr in (ds.key_attrs, ds.key_values, ds.query_attrs):
            np.testing.assert_array_equal(np.sort(arr, axis=1), np.tile(np.arange(6), (50, 1)))

    def test_split(self):
        ds = gen_dataset(4, 5000, seed=2)
        assert ds.train.size == 4000 and ds.test.size == 1000
        assert not set(ds.train) & set(ds.test)

    def test_labels_follow_the_mapping(self):
        ds = gen_dataset(5, 30, seed=3)
        for g in range(30):
            value_of = dict(zip(ds.key_attrs[g], ds.key_values[g]))
            assert ds.labels[g].tolist() == [value_of[a] for a in ds.query_attrs[g]]

    def test_single_instance_labels(self):
        assert lookup_labels([2, 0, 1], [10, 11, 12], [0, 1, 2]).tolist() == [11, 12, 10]

    @pytest.mark.parametrize("k,graphs", [(0, 10), (3, 4)])
    def test_invalid(self, k, graphs):
        with pytest.raises(ContractError):
            gen_dataset(k, graphs)


class TestJsonl:
    def test_round_trip(self, tmp_path):
        ds = gen_dataset(3, 20, seed=5)
        path = tmp_path / "d.jsonl"
        ds.save_jsonl(path)
        back = DictDataset.load_jsonl(path)
        for name in ("key_attrs", "key_values", "query_attrs", "train", "test"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))

    def test_record_format(self, tmp_path):
        ds = gen_dataset(2, 5, seed=6)
        path = tmp_path / "d.jsonl"
        ds.save_jsonl(path)
        rec = read_jsonl(path)[0]
        assert rec.graph.num_nodes == 4 and rec.graph.num_edges == 8
        assert [v for _, v in rec.node_attrs[:2]] == [None, None]
        assert rec.labels == ds.labels[0].tolist()

    def test_tampered_labels_rejected(self, tmp_path):
        ds = gen_dataset(3, 5, seed=7)
        path = tmp_path / "d.jsonl"
        ds.save_jsonl(path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"labels":[', '"labels":[9,', 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ContractError):
            DictDataset.load_jsonl(path)


class TestEncoding:
    def test_zero_embeddings(self):
        inst = gen_dataset(3, 5).instance(0)
        z = np.zeros((3, 4))
        np.testing.assert_array_equal(encode_nodes(inst, z, z, np.zeros((1, 4))).data, 0)

    def test_query_and_key_features(self):
        rng = np.random.default_rng(8)
        inst = gen_dataset(3, 5, seed=1).instance(2)
        attr, val, empty = rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), rng.standard_normal((1, 4))
        h = encode_nodes(inst, attr, val, empty).data
        relu = lambda x: np.maximum(x, 0)
        for q in range(3):
            np.testing.assert_allclose(h[q], relu(attr[inst.query_attrs[q]] + empty[0]))
        for j in range(3):
            np.testing.assert_allclose(h[3 + j], relu(attr[inst.key_attrs[j]] + val[inst.key_values[j]]))


class PerfectModel:
    def __init__(self, ds):
        self.ds = ds

    def predict(self, key_attrs, key_values, query_attrs):
        return lookup_labels(key_attrs, key_values, query_attrs)


class TestModel:
    def test_untrained_accuracy_near_chance(self):
        ds = gen_dataset(10, 1000, seed=9)
        model = DictLookupModel.init("gatv2", 10, hidden=16, seed=1)
        acc = evaluate(model, ds, "all")
        assert abs(acc - 0.1) <= 0.03

    def test_perfect_model(self):
        ds = gen_dataset(4, 20, seed=10)
        assert evaluate(PerfectModel(ds), ds, "test") == 1.0

    def test_logits_gradcheck(self):
        ds = gen_dataset(3, 6, seed=11)
        for kind in ("gat", "gatv2", "dpgat"):
            model = DictLookupModel.init(kind, 3, hidden=4, heads=2, seed=2)

            def loss():
                z = model.logits(ds.key_attrs, ds.key_values, ds.query_attrs)
                return T.cross_entropy(z, ds.labels.reshape(-1))

            assert T.grad_check(loss, model.parameters()) < 1e-6

    def test_attention_matrix_rows(self):
        ds = gen_dataset(5, 6, seed=12)
        model = DictLookupModel.init("gatv2", 5, hidden=8, seed=3)
        alpha = model.attention_matrix(ds.instance(0))
        assert alpha.shape == (5, 5)
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_batched_prediction_matches_per_graph(self):
        ds = gen_dataset(4, 9, seed=13)
        model = DictLookupModel.init("dpgat", 4, hidden=6, seed=4)
        batched = model.predict(ds.key_attrs, ds.key_values, ds.query_attrs, chunk=4)
        for g in range(9):
            single = model.predict(ds.key_attrs[g], ds.key_values[g], ds.query_attrs[g])
            np.testing.assert_array_equal(single[0], batched[g])

    def test_checkpoint_round_trip(self):
        ds = gen_dataset(3, 6, seed=14)
        model = DictLookupModel.init("gat", 3, hidden=5, seed=5)
        back = DictLookupModel.from_dict(model.to_dict())
        a = model.logits(ds.key_attrs, ds.key_values, ds.query_attrs).data
        b = back.logits(ds.key_attrs, ds.key_values, ds.query_attrs).data
        np.testing.assert_array_equal(a, b)
