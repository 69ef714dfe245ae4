"""Forward-backward Gaussian message passing on scalar random-walk chains.

A chain r_2, ..., r_N (1-indexed, as in the usual presentation) carries a
unary Gaussian factor per node, given by an incoming backward message
(W_n, xi_n), and a pairwise factor N(r_n - r_{n-1}; 0, sigma_n^2) for
n = 3..N.  Arrays here are 0-indexed: position k holds node n = k + 2,
and ``sigma_d2[..., k]`` is the increment variance into node k (its entry
at k = 0 is ignored).

Predictions through an increment are written in weight form,
W' = W / (1 + W sigma^2), which stays exact for sigma^2 = 0 (hard tie)
and for W = 0 (no information yet).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .nup import GaussianMessage, update_sigma_delta


class UnanchoredChainError(ValueError):
    """Every incoming message of a chain has zero weight."""


def smooth_chain(incoming: GaussianMessage, sigma_d2) -> np.ndarray:
    """Posterior means of all nodes of one or many chains.

    Args:
        incoming: messages with arrays of shape (..., M), M = N - 1 >= 1.
        sigma_d2: increment variances, same shape; entry 0 is unused.

    Returns:
        Array of shape (..., M) with the exact posterior means.
    """
    w_in = np.asarray(incoming.weight, dtype=np.float64)
    xi_in = np.asarray(incoming.weighted_mean, dtype=np.float64)
    sigma_d2 = np.broadcast_to(np.asarray(sigma_d2, dtype=np.float64), w_in.shape)
    if w_in.shape[-1] < 1:
        raise ValueError("chain must contain at least one node")
    if np.any(w_in < 0) or np.any(sigma_d2 < 0):
        raise ValueError("message weights and increment variances must be nonnegative")
    if np.any(np.max(w_in, axis=-1) <= 0):
        raise UnanchoredChainError("all incoming message weights of a chain are zero")

    m = w_in.shape[-1]
    w_fwd = np.empty_like(w_in)
    xi_fwd = np.empty_like(xi_in)
    w_fwd[..., 0] = w_in[..., 0]
    xi_fwd[..., 0] = xi_in[..., 0]
    for k in range(1, m):
        shrink = 1.0 + w_fwd[..., k - 1] * sigma_d2[..., k]
        w_fwd[..., k] = w_fwd[..., k - 1] / shrink + w_in[..., k]
        xi_fwd[..., k] = xi_fwd[..., k - 1] / shrink + xi_in[..., k]

    w_bwd = np.zeros_like(w_in)
    xi_bwd = np.zeros_like(xi_in)
    for k in range(m - 1, 0, -1):
        w_node = w_bwd[..., k] + w_in[..., k]
        xi_node = xi_bwd[..., k] + xi_in[..., k]
        shrink = 1.0 + w_node * sigma_d2[..., k]
        w_bwd[..., k - 1] = w_node / shrink
        xi_bwd[..., k - 1] = xi_node / shrink

    return (xi_fwd + xi_bwd) / (w_fwd + w_bwd)


def smooth_chains(incoming: GaussianMessage, sigma_d2, workers: int = 1) -> np.ndarray:
    """:func:`smooth_chain` over a stack of chains (axis 0), optionally threaded.

    Chains are independent, so splitting them across workers yields
    bit-identical results.
    """
    w = np.asarray(incoming.weight)
    xi = np.asarray(incoming.weighted_mean)
    sigma_d2 = np.broadcast_to(np.asarray(sigma_d2, dtype=np.float64), w.shape)
    if workers <= 1 or w.shape[0] < 2:
        return smooth_chain(incoming, sigma_d2)
    blocks = np.array_split(np.arange(w.shape[0]), min(workers, w.shape[0]))
    out = np.empty(w.shape, dtype=np.float64)

    def run(idx):
        out[idx] = smooth_chain(GaussianMessage(w[idx], xi[idx]), sigma_d2[idx])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, blocks))
    return out


def refresh_sigma_delta(r, beta_delta: float, p: float) -> np.ndarray:
    """Increment variances for n = 3..N from smoothed scales r_2..r_N.

    Returns an array one shorter than ``r`` along the last axis.
    """
    r = np.asarray(r, dtype=np.float64)
    return update_sigma_delta(np.abs(np.diff(r, axis=-1)), beta_delta, p)
