"""Discrete p-variation, the control function w, and greedy partitions.

All variation quantities are taken over the grid node set (the continuum
supremum is out of numerical reach); they are reported as diagnostics, not
used for adaptive stepping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lift import window_level2

__all__ = ["GreedyPartition", "p_variation", "control_w", "greedy_partition"]


@dataclass(frozen=True)
class GreedyPartition:
    """Greedy node partition: w accumulates at least alpha on each interior
    step; n_alpha counts the interior breakpoints."""

    alpha: float
    taus: tuple
    n_alpha: int


def _max_partition_sum(pw):
    """DP over nodes: max over sub-partitions of sum pw[a, b] along blocks.

    pw[a, b] is the (already powered) block weight over [a, b]; returns the
    cumulative array cum with cum[b] = best value for the window [0, b].
    """
    L = pw.shape[0] - 1
    cum = np.zeros(L + 1)
    for b in range(1, L + 1):
        cum[b] = np.max(cum[:b] + pw[:b, b])
    return cum


def _pairwise_norms(values):
    diff = values[None, :, :] - values[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def p_variation(path, p, j, k):
    """Discrete p-variation of the node sequence over [t_j, t_k]:
    (max over sub-partitions of sum ||dX||^p)^(1/p), by O(L^2) DP."""
    if p < 1.0:
        raise ValueError("need p >= 1")
    if not (0 <= j < k <= path.grid.N):
        raise IndexError("need 0 <= j < k <= N")
    D = _pairwise_norms(path.values[j : k + 1])
    return float(_max_partition_sum(D**p)[-1] ** (1.0 / p))


def _window_weights(rp, j, k, p):
    """Powered pairwise block weights for the first and second level."""
    vals = rp.base.values[j : k + 1]
    D1 = _pairwise_norms(vals)
    W = window_level2(rp, j, k)
    D2 = np.sqrt(np.sum(W * W, axis=(-2, -1)))
    return D1**p, D2 ** (p / 2.0)


def control_w(rp, j, k, p):
    """w(j,k) = ||X||_{p,[j,k]}^p + ||XX||_{p/2,[j,k]}^{p/2}, both suprema over
    node sub-partitions with Chen-composed second-level increments."""
    if not (2.0 <= p < 3.0):
        raise ValueError("need 2 <= p < 3")
    if not (0 <= j <= k <= rp.grid.N):
        raise IndexError("need 0 <= j <= k <= N")
    if j == k:
        return 0.0
    pw1, pw2 = _window_weights(rp, j, k, p)
    return float(_max_partition_sum(pw1)[-1] + _max_partition_sum(pw2)[-1])


def greedy_partition(rp, alpha, p, j, k):
    """Greedy partition of [t_j, t_k]: each next node is the first grid node
    at which w since the previous breakpoint reaches alpha, capped at k.

    On a grid the crossing generally overshoots alpha, so interior steps have
    w(tau_i, tau_{i+1}) >= alpha, which is the direction the counting bound
    alpha * n_alpha <= w(j, k) needs.
    """
    if alpha <= 0.0:
        raise ValueError("need alpha > 0")
    if not (2.0 <= p < 3.0):
        raise ValueError("need 2 <= p < 3")
    if not (0 <= j <= k <= rp.grid.N):
        raise IndexError("need 0 <= j <= k <= N")
    if j == k:
        return GreedyPartition(alpha=float(alpha), taus=(j,), n_alpha=0)
    pw1, pw2 = _window_weights(rp, j, k, p)
    taus = [j]
    s = j - j  # window-relative index
    L = k - j
    while s < L:
        cum1 = np.zeros(L + 1)
        cum2 = np.zeros(L + 1)
        nxt = L
        for b in range(s + 1, L + 1):
            cum1[b] = np.max(cum1[s:b] + pw1[s:b, b])
            cum2[b] = np.max(cum2[s:b] + pw2[s:b, b])
            if cum1[b] + cum2[b] >= alpha:
                nxt = b
                break
        taus.append(nxt + j)
        s = nxt
    return GreedyPartition(alpha=float(alpha), taus=tuple(taus), n_alpha=len(taus) - 2)
