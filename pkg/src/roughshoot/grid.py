"""Uniform time grids, sampled paths, piecewise-constant controls, and
seeded Brownian ensembles.

Per-sample random streams are pure functions of (master_seed, stream tag,
sample index), so enlarging an ensemble or adding new stream tags never
perturbs previously generated samples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "TimeGrid",
    "SampledPath",
    "ControlSignal",
    "EnsembleSpec",
    "brownian_sample",
    "increment",
    "coarsen",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t0, T] into N steps (N+1 nodes t_k = t0 + k*dt)."""

    t0: float
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("TimeGrid needs N >= 1 steps")
        if not self.T > self.t0:
            raise ValueError("TimeGrid needs T > t0")

    @property
    def dt(self):
        return (self.T - self.t0) / self.N

    @property
    def nodes(self):
        return self.t0 + self.dt * np.arange(self.N + 1)


def _node_matrix(grid, values, rows):
    v = np.array(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] != rows:
        raise ValueError("values must have shape (%d, dim)" % rows)
    return v


@dataclass(frozen=True)
class SampledPath:
    """A path sampled at the grid nodes; values has shape (N+1, dim)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _node_matrix(self.grid, self.values, self.grid.N + 1)
        )

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: values[k] holds on [t_k, t_{k+1}), shape (N, m)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _node_matrix(self.grid, self.values, self.grid.N)
        )

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class EnsembleSpec:
    """Seeded ensemble description: M samples of d-dimensional noise.

    Sample i draws from a generator seeded by SHA-256 of
    "<master_seed>:<stream>:<i>", so each stream is a pure function of
    (master_seed, stream, i) and distinct tags give disjoint streams.
    """

    M: int
    d: int
    master_seed: int
    stream: str = "solve"

    def __post_init__(self):
        if self.M < 1 or self.d < 1:
            raise ValueError("EnsembleSpec needs M >= 1 and d >= 1")

    def seed_sequence(self, i):
        key = "%d:%s:%d" % (self.master_seed, self.stream, i)
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))

    def generator(self, i):
        return np.random.Generator(np.random.PCG64(self.seed_sequence(i)))


def _standard_normal(gen, shape):
    # inverse-transform sampling on uniforms kept strictly inside (0, 1)
    u = (gen.integers(0, 1 << 53, size=shape).astype(float) + 0.5) / float(1 << 53)
    return ndtri(u)


def brownian_sample(spec, grid):
    """Draw M Brownian paths on the grid; returns a list of SampledPath.

    Each increment is Normal(0, dt * I_d); paths start at zero. Sample i is
    bit-identical across runs for a fixed (master_seed, stream, i, grid).
    """
    dt = grid.dt
    paths = []
    for i in range(spec.M):
        gen = spec.generator(i)
        dW = np.sqrt(dt) * _standard_normal(gen, (grid.N, spec.d))
        values = np.vstack([np.zeros((1, spec.d)), np.cumsum(dW, axis=0)])
        paths.append(SampledPath(grid, values))
    return paths


def increment(path, j, k):
    """X_{t_k} - X_{t_j} for node indices 0 <= j <= k <= N."""
    N = path.grid.N
    if not (0 <= j <= k <= N):
        raise IndexError("need 0 <= j <= k <= N")
    return path.values[k] - path.values[j]


def coarsen(path, factor):
    """Restrict a path to every factor-th node (N must divide evenly).

    The coarse path visits the same underlying trajectory, which makes
    two-resolution strong-error and drift comparisons consistent per sample.
    """
    if factor < 1 or path.grid.N % factor != 0:
        raise ValueError("factor must divide the step count")
    g = TimeGrid(path.grid.t0, path.grid.T, path.grid.N // factor)
    return SampledPath(g, path.values[::factor])
