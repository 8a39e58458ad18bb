"""Hot-loop kernels, dispatched to the compiled extension when it is available.

Set ``GATLAB_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the implementation that was selected at import.
"""

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("GATLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _ids(segment_ids):
    return np.ascontiguousarray(segment_ids, dtype=np.int64)


def segment_max(values, segment_ids, num_segments):
    """Per-segment maximum of a 1-D array; empty segments give ``-inf``."""
    values = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    return _impl.segment_max(values, _ids(segment_ids), int(num_segments))


def segment_sum(values, segment_ids, num_segments):
    """Scatter-add rows of a 2-D array into ``num_segments`` output rows."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    return _impl.segment_sum(values, _ids(segment_ids), int(num_segments))


def jacobi_orthogonalize(at, vt, tol, max_sweeps):
    return _impl.jacobi_orthogonalize(at, vt, float(tol), int(max_sweeps))


def use_backend(name):
    """Switch implementations at runtime (benchmarks and parity tests)."""
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def weighted_gather_sum(weights, table, gather_idx, scatter_idx, n_out):
    """Sparse-dense product: ``out[scatter[e]] += weights[e] * table[gather[e]]``."""
    return _impl.weighted_gather_sum(
        _f64(weights).reshape(-1), _f64(table), _ids(gather_idx), _ids(scatter_idx), int(n_out)
    )


def edge_dot(x, y, x_idx, y_idx):
    """Per-edge inner product ``x[x_idx[e]] . y[y_idx[e]]``."""
    return _impl.edge_dot(_f64(x), _f64(y), _ids(x_idx), _ids(y_idx))


def gatv2_scores(left, right, bias, a, dst, src, slope):
    return _impl.gatv2_scores(
        _f64(left), _f64(right), _f64(bias).reshape(-1), _f64(a).reshape(-1),
        _ids(dst), _ids(src), float(slope),
    )


def gatv2_scores_backward(left, right, bias, a, dst, src, slope, grad):
    return _impl.gatv2_scores_backward(
        _f64(left), _f64(right), _f64(bias).reshape(-1), _f64(a).reshape(-1),
        _ids(dst), _ids(src), float(slope), _f64(grad).reshape(-1),
    )
