"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def segment_max(values, segment_ids, num_segments):
    out = np.full(num_segments, -np.inf)
    np.maximum.at(out, segment_ids, values)
    return out


def segment_sum(values, segment_ids, num_segments):
    out = np.zeros((num_segments, values.shape[1]))
    np.add.at(out, segment_ids, values)
    return out


def jacobi_orthogonalize(at, vt, tol, max_sweeps):
    """In-place one-sided Jacobi on the rows of ``at`` (the columns of A).

    Rotations are mirrored onto ``vt``. Returns the number of sweeps used, or
    -1 if ``max_sweeps`` passed without convergence.
    """
    ncols = at.shape[0]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(ncols - 1):
            for q in range(p + 1, ncols):
                ap, aq = at[p], at[q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                at[p], at[q] = c * ap - s * aq, s * ap + c * aq
                vp, vq = vt[p], vt[q]
                vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return sweep
    return -1


def weighted_gather_sum(weights, table, gather_idx, scatter_idx, n_out):
    return segment_sum(weights[:, None] * table[gather_idx], scatter_idx, n_out)


def edge_dot(x, y, x_idx, y_idx):
    return np.einsum("ec,ec->e", x[x_idx], y[y_idx])


def gatv2_scores(left, right, bias, a, dst, src, slope):
    z = left[dst] + right[src] + bias
    return np.where(z > 0, z, slope * z) @ a


def gatv2_scores_backward(left, right, bias, a, dst, src, slope, grad):
    z = left[dst] + right[src] + bias
    pos = z > 0
    d_a = grad @ np.where(pos, z, slope * z)
    dz = grad[:, None] * a[None, :] * np.where(pos, 1.0, slope)
    return (
        segment_sum(dz, dst, left.shape[0]),
        segment_sum(dz, src, right.shape[0]),
        dz.sum(axis=0),
        d_a,
    )
