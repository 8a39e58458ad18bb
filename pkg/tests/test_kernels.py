import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatlab import _pykernels, kernels

compiled = pytest.importorskip("gatlab._ckernels")


def edges(seed, n, e):
    rng = np.random.default_rng(seed)
    return rng, rng.integers(0, n, e).astype(np.int64), rng.integers(0, n, e).astype(np.int64)


class TestParity:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 20), st.integers(0, 80), st.integers(1, 6))
    def test_segment_and_edge_kernels(self, seed, n, e, width):
        rng, src, dst = edges(seed, n, e)
        x = rng.standard_normal((n, width))
        y = rng.standard_normal((n, width))
        vals = rng.standard_normal(e)
        w = rng.random(e)
        rows = rng.standard_normal((e, width))
        for name, args in [
            ("segment_max", (vals, dst, n)),
            ("segment_sum", (rows, dst, n)),
            ("weighted_gather_sum", (w, x, src, dst, n)),
            ("edge_dot", (x, y, dst, src)),
        ]:
            np.testing.assert_allclose(getattr(compiled, name)(*args), getattr(_pykernels, name)(*args),
                                       rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 10), st.integers(0, 40), st.integers(1, 5))
    def test_gatv2_kernels(self, seed, n, e, width):
        rng, src, dst = edges(seed, n, e)
        left, right = rng.standard_normal((n, width)), rng.standard_normal((n, width))
        bias, a = rng.standard_normal(width), rng.standard_normal(width)
        grad = rng.standard_normal(e)
        np.testing.assert_allclose(compiled.gatv2_scores(left, right, bias, a, dst, src, 0.2),
                                   _pykernels.gatv2_scores(left, right, bias, a, dst, src, 0.2),
                                   rtol=1e-12, atol=1e-12)
        for c, p in zip(compiled.gatv2_scores_backward(left, right, bias, a, dst, src, 0.2, grad),
                        _pykernels.gatv2_scores_backward(left, right, bias, a, dst, src, 0.2, grad)):
            np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-12)

    def test_jacobi(self):
        m = np.random.default_rng(3).standard_normal((6, 4))
        out = []
        for impl in (compiled, _pykernels):
            at, vt = np.ascontiguousarray(m.T), np.eye(4)
            sweeps = impl.jacobi_orthogonalize(at, vt, 1e-14, 60)
            assert sweeps > 0
            out.append((at, vt))
        np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
        np.testing.assert_allclose(out[0][1], out[1][1], atol=1e-12)

    def test_jacobi_reports_non_convergence(self):
        m = np.random.default_rng(4).standard_normal((8, 8))
        for impl in (compiled, _pykernels):
            assert impl.jacobi_orthogonalize(np.ascontiguousarray(m.T), np.eye(8), 1e-14, 1) == -1


class TestDispatch:
    def test_switch_backends(self):
        original = kernels.BACKEND
        try:
            kernels.use_backend("python")
            assert kernels.BACKEND == "python"
            a = kernels.segment_sum(np.ones(4), [0, 1, 1, 0], 2)
            kernels.use_backend("cython")
            b = kernels.segment_sum(np.ones(4), [0, 1, 1, 0], 2)
            np.testing.assert_array_equal(a, b)
        finally:
            kernels.use_backend(original)

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")

    def test_training_identical_across_backends(self):
        from gatlab.dictlookup import gen_dataset
        from gatlab.training import TrainConfig, train_model

        ds = gen_dataset(3, 30, seed=0)
        cfg = TrainConfig(kind="gatv2", hidden=6, max_epochs=2, batch_size=24)
        original = kernels.BACKEND
        curves = []
        try:
            for backend in ("python", "cython"):
                kernels.use_backend(backend)
                _, r = train_model(cfg, ds)
                curves.append(r.loss_curve)
        finally:
            kernels.use_backend(original)
        np.testing.assert_allclose(curves[0], curves[1], rtol=1e-10)
