"""Static vs. dynamic attention, checked numerically.

* :func:`check_static` builds the full query x key score table and decides
  whether one query-independent key ranking explains every row.
* :func:`fit_mapping` trains a single scoring head to make ``phi(i)`` the
  strict argmax key of every query ``i``.
* :func:`construct_dpgat` writes down dot-product weights that select any
  ``phi`` when the node representations are linearly independent, using the
  one-sided Jacobi SVD in :func:`svd_small`.
* :func:`counterexample_check` samples dot-product weights against three
  collinear keys, where the middle key can never win.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError, KindMismatchError, NumericError, SingularityError
from .layers import GAT, GATV2, DPGAT, AttentionLayer, head_scores, score_table
from .tensor import Tensor
from .training import Adam

RANK_TOL = 1e-10


def per_key_scores(layer, h, head=0):
    """Global per-key score ``a2 . W h_j`` of a GAT head, one per row of ``h``."""
    if layer.kind != GAT:
        raise KindMismatchError(f"per-key scores exist only for GAT, got {layer.kind}")
    p = layer.params[head]
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    a2 = p["a"].data[layer.d_out:]
    return ((h @ p["W"].data.T) @ a2)[:, 0]


@dataclass
class StaticReport:
    per_key_scores: np.ndarray
    argmax_table: np.ndarray
    is_globally_ranked: bool
    ranking: np.ndarray
    scores: np.ndarray
    rows_agree: bool = True
    order_consistent: bool = True

    def to_dict(self):
        return {
            "per_key_scores": self.per_key_scores.tolist(),
            "argmax_table": self.argmax_table.tolist(),
            "is_globally_ranked": bool(self.is_globally_ranked),
            "ranking": self.ranking.tolist(),
            "rows_agree": bool(self.rows_agree),
            "order_consistent": bool(self.order_consistent),
            "scores": self.scores.tolist(),
        }


def _pairwise_table(score_fn, queries, keys):
    return np.array([[float(score_fn(q, k)) for k in keys] for q in queries])


def check_static(score_fn, keys, queries, head=0):
    """Score every (query, key) pair and test for a single global ranking.

    ``score_fn`` is an :class:`AttentionLayer` or any ``f(q, k) -> float``.
    For GAT layers the reference ranking comes from the per-key scores; for
    anything else from the column means of the table. The verdict is global
    ranking iff all rows share an argmax (lowest index on ties), no row orders
    two keys against the reference, and no two rows order a key pair in
    opposite directions.
    """
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if keys.shape[0] < 2:
        raise ContractError("check_static needs at least two keys")
    if isinstance(score_fn, AttentionLayer):
        table = score_table(score_fn, queries, keys, head)
        if score_fn.kind == GAT:
            reference = per_key_scores(score_fn, keys, head)
        else:
            reference = table.mean(axis=0)
    else:
        table = _pairwise_table(score_fn, queries, keys)
        reference = table.mean(axis=0)

    argmax = table.argmax(axis=1)
    rows_agree = bool(np.all(argmax == argmax[0]))
    above = reference[:, None] > reference[None, :]
    against_reference = (table[:, :, None] < table[:, None, :]) & above[None]
    diff = np.sign(table[:, :, None] - table[:, None, :])
    crossing = (diff.max(axis=0) > 0) & (diff.min(axis=0) < 0)
    consistent = not against_reference.any() and not crossing.any()
    return StaticReport(
        per_key_scores=reference,
        argmax_table=argmax,
        is_globally_ranked=rows_agree and consistent,
        ranking=np.argsort(-reference, kind="stable"),
        scores=table,
        rows_agree=rows_agree,
        order_consistent=consistent,
    )


@dataclass
class MappingFit:
    phi: np.ndarray
    achieved: np.ndarray
    margin: float
    success: bool
    steps: int
    final_loss: float
    scores: np.ndarray = field(repr=False)

    def to_dict(self):
        d = asdict(self)
        for name in ("phi", "achieved", "scores"):
            d[name] = np.asarray(d[name]).tolist()
        return d


def _margin(table, phi):
    m = table.shape[0]
    target = table[np.arange(m), phi]
    rest = table.copy()
    rest[np.arange(m), phi] = -np.inf
    if table.shape[1] == 1:
        return np.inf
    return float(np.min(target - rest.max(axis=1)))


def fit_mapping(kind, keys, queries, phi, budget=5000, hidden=32, lr=0.01, target_margin=1.0,
                seed=0):
    """Train one scoring head so that ``phi[i]`` is the strict argmax key of query ``i``.

    Minimizes the summed multiclass hinge ``max(0, target_margin + s_ij - s_i,phi(i))``
    over ``j != phi(i)`` with Adam, stopping once every hinge term is zero or
    after ``budget`` steps. GATv2 is fitted with an unconstrained ``W``.
    Running out of budget is reported through ``success``, not raised.
    """
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    phi = np.asarray(phi, dtype=np.int64)
    n, m, d = keys.shape[0], queries.shape[0], keys.shape[1]
    if queries.shape[1] != d:
        raise ContractError("keys and queries must share a feature width")
    if phi.shape != (m,) or phi.min() < 0 or phi.max() >= n:
        raise ContractError(f"phi must map {m} queries into range({n})")
    if np.unique(keys, axis=0).shape[0] != n:
        raise ContractError("keys must be pairwise distinct")

    layer = AttentionLayer.init(kind, d, hidden, shared_w=False, d_k=hidden, seed=seed)
    h = Tensor(np.vstack([queries, keys]))
    dst = np.repeat(np.arange(m), n)
    src = m + np.tile(np.arange(n), m)
    target_edge = np.repeat(np.arange(m) * n + phi, n)
    off_target = np.ones((m * n, 1))
    off_target[np.arange(m) * n + phi] = 0.0

    opt = Adam(layer.parameters(), lr=lr)
    steps, loss_val = 0, np.inf
    for steps in range(1, budget + 1):
        opt.zero_grad()
        with T.Tape() as tape:
            e, _ = head_scores(layer, 0, h, src, dst)
            hinge = T.relu(e - T.gather_rows(e, target_edge) + target_margin) * off_target
            loss = hinge.sum() * (1.0 / m)
            loss_val = loss.item()
            if loss_val == 0.0:
                break
            tape.backward(loss)
        opt.step()

    table = score_table(layer, queries, keys)
    achieved = table.argmax(axis=1)
    margin = _margin(table, phi)
    success = bool(np.array_equal(achieved, phi) and margin > 0)
    return MappingFit(phi, achieved, margin, success, steps, loss_val, table)


@dataclass
class SvdResult:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    sweeps: int = 0

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


def _complete_columns(q, filled):
    """Replace columns ``~filled`` with orthonormal directions (Gram-Schmidt)."""
    rows = q.shape[0]
    basis = [q[:, j] for j in range(q.shape[1]) if filled[j]]
    candidates = iter(np.eye(rows))
    for j in np.flatnonzero(~filled):
        for cand in candidates:
            v = cand.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                q[:, j] = v / norm
                basis.append(q[:, j])
                break
    return q


def svd_small(M, tol=1e-14, max_sweeps=60):
    """Thin SVD ``M = U diag(sigma) V^T`` by one-sided (Hestenes) Jacobi.

    For ``M`` of shape ``n x d`` with ``r = min(n, d)``: ``U`` is ``n x r``,
    ``sigma`` has ``r`` descending entries, ``V`` is ``d x r``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n, d = M.shape
    transpose = n < d
    A = M.T if transpose else M
    rows, cols = A.shape
    at = np.array(A.T, dtype=np.float64, order="C", copy=True)
    vt = np.eye(cols)
    sweeps = kernels.jacobi_orthogonalize(at, vt, tol, max_sweeps)
    if sweeps < 0:
        raise NumericError(f"Jacobi SVD did not converge within {max_sweeps} sweeps")
    sigma = np.linalg.norm(at, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma, at, vt = sigma[order], at[order], vt[order]
    left = np.zeros((rows, cols))
    nonzero = sigma > 0
    left[:, nonzero] = (at[nonzero] / sigma[nonzero, None]).T
    left = _complete_columns(left, nonzero)
    right = vt.T
    if transpose:
        return SvdResult(right, sigma, left, sweeps)
    return SvdResult(left, sigma, right, sweeps)


def permutation_matrix(phi, n=None):
    """``P[i, j] = 1`` iff ``j == phi[i]``."""
    phi = np.asarray(phi, dtype=np.int64)
    n = phi.shape[0] if n is None else n
    P = np.zeros((phi.shape[0], n))
    P[np.arange(phi.shape[0]), phi] = 1.0
    return P


def construct_dpgat(X, phi, d_k=None):
    """Dot-product weights ``(Q, K)`` with ``(X Q)(X K)^T = P`` for the selection matrix of ``phi``.

    With ``X = U S V^T``: ``Q = V S^-1`` and ``K = V S^-1 U^T P^T U``, so
    ``X Q = U`` and ``X K = P^T U``. Both are ``d x n``; ``d_k > n`` pads them
    with zero columns.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    phi = np.asarray(phi, dtype=np.int64)
    if phi.shape != (n,) or phi.min() < 0 or phi.max() >= n:
        raise ContractError(f"phi must map each of the {n} rows to a row index")
    svd = svd_small(X)
    smallest = float(svd.sigma.min()) if n <= d else 0.0
    if n > d or smallest < RANK_TOL * float(svd.sigma.max()):
        raise SingularityError(
            f"rows of X are not linearly independent: smallest singular value {smallest:.3e}",
            smallest,
        )
    P = permutation_matrix(phi, n)
    U, V = svd.U, svd.V
    Q = V / svd.sigma
    K = Q @ U.T @ P.T @ U
    if d_k is not None:
        if d_k < n:
            raise ContractError(f"d_k={d_k} is smaller than the number of rows {n}")
        pad = np.zeros((d, d_k - n))
        Q, K = np.hstack([Q, pad]), np.hstack([K, pad])
    return Q, K


def dpgat_scores(X, Q, K, queries=None):
    """Scaled scores ``(x_i Q)(x_j K)^T / sqrt(d_k)``; rows are queries."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    queries = X if queries is None else np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return (queries @ Q) @ (X @ K).T / np.sqrt(Q.shape[1])


@dataclass
class DpgatCheck:
    residual: float
    argmax: np.ndarray
    phi: np.ndarray
    passed: bool

    def to_dict(self):
        return {
            "residual": self.residual,
            "argmax": self.argmax.tolist(),
            "phi": self.phi.tolist(),
            "passed": self.passed,
        }


def check_dpgat(X, Q, K, phi, tol=1e-6):
    """Max-abs residual of ``(X Q)(X K)^T`` against ``P`` and the per-query argmax."""
    X = np.asarray(X, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.int64)
    raw = (X @ Q) @ (X @ K).T
    residual = float(np.abs(raw - permutation_matrix(phi, X.shape[0])).max())
    argmax = dpgat_scores(X, Q, K).argmax(axis=1)
    return DpgatCheck(residual, argmax, phi, residual < tol and bool(np.array_equal(argmax, phi)))


COLLINEAR_KEYS = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])


@dataclass
class CounterexampleReport:
    draws: int
    violations: int
    max_midpoint_residual: float
    argmax_counts: list

    def to_dict(self):
        return asdict(self)


def counterexample_check(draws=10_000, seed=0, d_k=2, slack=1e-12):
    """Count random ``(Q, K)`` draws where the middle collinear key is the strict argmax.

    Keys ``x``, ``x + y`` and ``x + 2y`` double as the queries. By bilinearity
    the middle score is the mean of the outer two, so it can never be a strict
    maximum; a violation needs it to exceed both by more than ``slack``.
    """
    rng = np.random.default_rng(seed)
    h = COLLINEAR_KEYS
    violations, worst = 0, 0.0
    counts = np.zeros(3, dtype=np.int64)
    for _ in range(draws):
        Q = rng.standard_normal((2, d_k))
        K = rng.standard_normal((2, d_k))
        s = (h @ Q) @ (h @ K).T
        violations += int(np.sum(s[:, 1] > np.maximum(s[:, 0], s[:, 2]) + slack))
        worst = max(worst, float(np.abs(s[:, 1] - 0.5 * (s[:, 0] + s[:, 2])).max()))
        counts += np.bincount(s.argmax(axis=1), minlength=3)
    return CounterexampleReport(draws, violations, worst, counts.tolist())
