"""Grid-level Stratonovich rough-path lifts and Chen composition.

A grid rough path stores the first level at the nodes and one second-level
matrix per step. Values over larger windows are always derived by Chen's
relation, never cached, so the algebraic invariants have a single source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SampledPath

__all__ = ["GridRoughPath", "stratonovich_lift", "chen_compose", "check_geometric"]


@dataclass(frozen=True)
class GridRoughPath:
    """First level at nodes plus per-step second level XX_k, shape (N, d, d)."""

    base: SampledPath
    level2: np.ndarray

    def __post_init__(self):
        l2 = np.asarray(self.level2, dtype=float)
        N, d = self.base.grid.N, self.base.dim
        if l2.shape != (N, d, d):
            raise ValueError("level2 must have shape (N, d, d)")
        object.__setattr__(self, "level2", l2)

    @property
    def grid(self):
        return self.base.grid

    @property
    def dim(self):
        return self.base.dim


def stratonovich_lift(path):
    """Lift a sampled path with per-step second level XX_k = 0.5 dX_k (x) dX_k.

    The per-step Levy area is zero, so the lift is geometric by construction
    and its diagonal matches the Stratonovich values 0.5 (dX^i)^2 exactly.
    """
    dx = np.diff(path.values, axis=0)
    level2 = 0.5 * dx[:, :, None] * dx[:, None, :]
    return GridRoughPath(path, level2)


def chen_compose(rp, j, k):
    """Compose the rough increment over [t_j, t_k] by a left fold of Chen's
    relation: XX_{j,u+1} = XX_{j,u} + XX_u + X_{j,u} (x) dX_u.

    Returns (X_jk, XX_jk).
    """
    N = rp.grid.N
    if not (0 <= j <= k <= N):
        raise IndexError("need 0 <= j <= k <= N")
    vals = rp.base.values
    x_jk = vals[k] - vals[j]
    d = rp.dim
    xx = np.zeros((d, d))
    for u in range(j, k):
        x_ju = vals[u] - vals[j]
        dx = vals[u + 1] - vals[u]
        xx += rp.level2[u] + x_ju[:, None] * dx[None, :]
    return x_jk, xx


def prefix_level2(rp):
    """Prefix compositions P[u] = XX_{0,u}, shape (N+1, d, d).

    Any window follows from Chen's relation:
    XX_{a,b} = P[b] - P[a] - X_{0,a} (x) X_{a,b}.
    """
    vals = rp.base.values
    dx = np.diff(vals, axis=0)
    x0u = vals[:-1] - vals[0]
    terms = rp.level2 + x0u[:, :, None] * dx[:, None, :]
    P = np.zeros((rp.grid.N + 1, rp.dim, rp.dim))
    np.cumsum(terms, axis=0, out=P[1:])
    return P


def window_level2(rp, j, k):
    """All pairwise compositions XX_{a,b} for j <= a <= b <= k, via prefixes.

    Returns an array W of shape (L+1, L+1, d, d) with W[a-j, b-j] = XX_{a,b}
    (entries with a > b are meaningless). O(L^2 d^2) time and memory.
    """
    P = prefix_level2(rp)[j : k + 1]
    vals = rp.base.values[j : k + 1]
    x0a = vals - rp.base.values[0]
    xab = vals[None, :, :] - vals[:, None, :]
    return (
        P[None, :, :, :]
        - P[:, None, :, :]
        - x0a[:, None, :, None] * xab[:, :, None, :]
    )


def check_geometric(rp, tol):
    """True iff Sym(XX_{jk}) = 0.5 X_{jk} (x) X_{jk} entrywise within tol.

    Checks every composed window (j, k) when N <= 256, else all single steps
    plus a deterministic stride of longer windows.
    """
    N = rp.grid.N
    pairs_all = N <= 256
    if pairs_all:
        W = window_level2(rp, 0, N)
        vals = rp.base.values
        xab = vals[None, :, :] - vals[:, None, :]
        sym = 0.5 * (W + np.swapaxes(W, -1, -2))
        ref = 0.5 * xab[:, :, :, None] * xab[:, :, None, :]
        a, b = np.triu_indices(N + 1)
        err = np.abs(sym[a, b] - ref[a, b])
        bound = tol * (1.0 + np.abs(ref[a, b]))
        return bool(np.all(err <= bound))
    stride = max(1, N // 128)
    for j in range(0, N, stride):
        for k in range(j, N + 1, stride):
            x, xx = chen_compose(rp, j, k)
            ref = 0.5 * x[:, None] * x[None, :]
            sym = 0.5 * (xx + xx.T)
            if np.any(np.abs(sym - ref) > tol * (1.0 + np.abs(ref))):
                return False
    return True
