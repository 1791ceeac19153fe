"""Pure-Python/NumPy implementations of the hot loops.

Mirrors ``_ckernels.pyx`` function for function; ``rbrm.kernels`` picks one
at import time.

Packed step layout (shared with the compiled kernels): step ``k`` has
``m[k]`` in-range sensors with probabilities ``p_flat[p_off[k]:p_off[k+1]]``
and subset coefficients ``c_flat/d_flat[cd_off[k]:cd_off[k+1]]`` indexed by
bitmask over those sensors (``2**m[k]`` entries, mask 0 is the empty set).
"""

import numpy as np

STOCHASTIC = 0
SIMPLIFIED = 1
UNIFORM = 2


def subset_weights(p):
    """Probability of each detection pattern, indexed by bitmask."""
    w = np.ones(1)
    for pj in p:
        w = np.concatenate((w * (1.0 - pj), w * pj))
    return w


def step_value(ell, a, b, p, c, d, variant):
    m = len(p)
    grow = a * ell + b
    if variant == STOCHASTIC:
        w = subset_weights(p)
        total = 0.0
        for s in range(1 << m):
            total += w[s] / (c[s] * ell + d[s])
        return grow * total
    miss = 1.0
    for pj in p:
        miss *= 1.0 - pj
    if variant == SIMPLIFIED:
        total = miss
        for j in range(m):
            k = 1 << j
            total += p[j] / (c[k] * ell + d[k])
        return grow * total
    if m == 0:
        return grow
    cbar = min(c[s] for s in range(1, 1 << m))
    dbar = b * cbar / a + 1.0
    return grow * (miss + (1.0 - miss) / (cbar * ell + dbar))


def fold_bound(ell0, a, b, m, p_flat, p_off, c_flat, d_flat, cd_off, variant, trace=None):
    """Fold the per-step bound map over a packed step sequence.

    When ``trace`` is an array of length ``len(a) + 1`` it receives every
    intermediate value (``trace[0] = ell0``).
    """
    ell = float(ell0)
    if trace is not None:
        trace[0] = ell
    for k in range(len(a)):
        p = p_flat[p_off[k]:p_off[k + 1]]
        c = c_flat[cd_off[k]:cd_off[k + 1]]
        d = d_flat[cd_off[k]:cd_off[k + 1]]
        ell = step_value(ell, a[k], b[k], p, c, d, variant)
        if trace is not None:
            trace[k + 1] = ell
    return ell


def fold_covariance(P, F, Q, M):
    """All-detect covariance recursion in information form.

    ``F, Q, M`` are stacks of shape ``(k, n, n)``; ``M[k]`` is the summed
    sensor information at step ``k``.
    """
    P = np.array(P, dtype=float)
    for k in range(len(F)):
        pred = F[k] @ P @ F[k].T + Q[k]
        info = np.linalg.inv(0.5 * (pred + pred.T)) + M[k]
        P = np.linalg.inv(0.5 * (info + info.T))
        P = 0.5 * (P + P.T)
    return P


def _batched_lmax(P):
    if P.shape[-1] == 1:
        return P[:, 0, 0].copy()
    if P.shape[-1] == 2:
        a, b, d = P[:, 0, 0], P[:, 0, 1], P[:, 1, 1]
        return 0.5 * (a + d) + np.hypot(0.5 * (a - d), b)
    return np.linalg.eigvalsh(P)[:, -1]


def exact_expectation(P0, F, Q, n_sub, W_flat, M_flat, sub_off, chunk=1 << 16):
    """Exact ``E[lambda_max(P_t)]`` by enumerating every detection pattern.

    Step ``k`` has ``n_sub[k]`` patterns with probabilities
    ``W_flat[sub_off[k]:sub_off[k+1]]`` and summed information matrices
    ``M_flat[sub_off[k]:sub_off[k+1]]``.
    """
    T = len(F)
    n = P0.shape[0]
    out = np.empty(T + 1)
    out[0] = _batched_lmax(P0[None])[0]
    Ps = P0[None].copy()
    ws = np.ones(1)
    for k in range(T):
        W = W_flat[sub_off[k]:sub_off[k + 1]]
        M = M_flat[sub_off[k]:sub_off[k + 1]]
        last = k == T - 1
        acc = 0.0
        new_P, new_w = [], []
        for start in range(0, len(ws), chunk):
            pc = Ps[start:start + chunk]
            wc = ws[start:start + chunk]
            pred = F[k] @ pc @ F[k].T + Q[k]
            pred_inv = np.linalg.inv(pred)
            # children ordered parent-major so pattern index varies fastest
            info = pred_inv[:, None] + M[None]
            post = np.linalg.inv(info.reshape(-1, n, n))
            post = 0.5 * (post + np.swapaxes(post, 1, 2))
            cw = (wc[:, None] * W[None]).reshape(-1)
            acc += float(np.dot(cw, _batched_lmax(post)))
            if not last:
                keep = cw > 0.0
                new_P.append(post[keep])
                new_w.append(cw[keep])
        out[k + 1] = acc
        if not last:
            Ps = np.concatenate(new_P)
            ws = np.concatenate(new_w)
    return out


def is_compiled():
    return False
