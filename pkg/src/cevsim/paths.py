"""Deterministic Brownian increment generation, hierarchical coarsening, correlation.

Every random number is a pure function of a :class:`PathKey` (seed, batch,
path) plus a small stream index, realized with numpy's counter-based Philox
generator.  That makes path generation reproducible bit-for-bit regardless of
execution order, thread count, or how many other paths were generated first --
the property the benchmark harness leans on for its common-random-number
comparisons and byte-identical reruns.

Uniform variates are built from the top 53 bits of each 64-bit word as
``(k + 0.5) * 2**-53``: exactly representable, symmetric about 1/2, and never
0 or 1, so the inverse-CDF transform (``scipy.special.ndtri``) can never
produce an infinity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

#: Largest supported dyadic level; 2**30 doubles is an 8 GiB row and past the
#: point where a single path's increments can reasonably be materialized.
MAX_LEVEL = 30

_U64 = np.uint64
_TWO_POW_MINUS_53 = 2.0 ** -53


@dataclass(frozen=True)
class PathKey:
    """Identity of one simulated path inside a batched Monte Carlo run.

    The triple (seed, batch_index, path_index) uniquely determines every
    random number the path will ever consume, across all its streams.
    """

    seed: int
    batch_index: int = 0
    path_index: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 1 << 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if not 0 <= self.batch_index < 1 << 30:
            raise ValueError(f"batch_index out of range [0, 2**30): {self.batch_index}")
        if not 0 <= self.path_index < 1 << 32:
            raise ValueError(f"path_index out of range [0, 2**32): {self.path_index}")


@dataclass(frozen=True)
class BrownianLattice:
    """Brownian increments of one path on a dyadic grid over [0, horizon].

    ``increments[i]`` is W(t_{i+1}) - W(t_i) on the uniform grid with
    2**level steps, so each entry is N(0, horizon / 2**level).  The array is
    frozen after construction.
    """

    level: int
    horizon: float
    increments: np.ndarray

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 1 or inc.shape[0] != 1 << self.level:
            raise ValueError(
                f"increments must be a 1-D array of length 2**{self.level}, "
                f"got shape {inc.shape}"
            )
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return 1 << self.level

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def terminal_value(self) -> float:
        """W(horizon), summed with the same pairwise tree coarsening uses."""
        return float(coarsen_array(self.increments[np.newaxis, :], self.level)[0, 0])


def _generator(key: PathKey, stream: int) -> np.random.Generator:
    """Philox generator keyed by (seed, batch, path, stream)."""
    if not 0 <= stream < 4:
        raise ValueError(f"stream must lie in [0, 4), got {stream}")
    packed = (
        (_U64(key.batch_index) << _U64(34))
        | (_U64(key.path_index) << _U64(2))
        | _U64(stream)
    )
    philox_key = np.array([key.seed, packed], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=philox_key))


def standard_normals(key: PathKey, n: int, stream: int = 0) -> np.ndarray:
    """n i.i.d. N(0, 1) draws, a pure function of (key, stream).

    The draws are the first n of the stream: asking for fewer later returns a
    prefix of the same sequence.
    """
    gen = _generator(key, stream)
    words = gen.integers(0, (1 << 64) - 1, size=n, dtype=np.uint64, endpoint=True)
    u = ((words >> _U64(11)).astype(np.float64) + 0.5) * _TWO_POW_MINUS_53
    return ndtri(u)


def generate_increments(
    key: PathKey, n_steps: int, horizon: float, stream: int = 0
) -> np.ndarray:
    """Brownian increments on a uniform (not necessarily dyadic) n_steps grid.

    Returns a plain array of n_steps independent N(0, horizon/n_steps) draws.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    scale = np.sqrt(horizon / n_steps)
    return standard_normals(key, n_steps, stream) * scale


def generate_fine_increments(
    key: PathKey, level: int, horizon: float, stream: int = 0
) -> BrownianLattice:
    """Brownian increments on the dyadic grid with 2**level steps.

    Deterministic in (key, level, horizon, stream); bit-identical on repeat
    calls.  Raises on levels whose 2**level entries cannot reasonably be
    materialized.
    """
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if level > MAX_LEVEL:
        raise ValueError(
            f"level {level} exceeds capacity (max {MAX_LEVEL}: 2**level increments "
            "must be materialized per path)"
        )
    increments = generate_increments(key, 1 << level, horizon, stream)
    return BrownianLattice(level=level, horizon=horizon, increments=increments)


def coarsen_array(increments: np.ndarray, levels_down: int) -> np.ndarray:
    """Pairwise-sum coarsening along the last axis, one level at a time.

    Each level halves the last axis by summing adjacent pairs left-to-right.
    Repeating the pairwise step fixes the floating-point summation tree, so
    ``coarsen_array(x, a+b) == coarsen_array(coarsen_array(x, a), b)``
    bit-exactly: both sides evaluate the same balanced tree of additions.
    """
    if levels_down < 0:
        raise ValueError(f"levels_down must be >= 0, got {levels_down}")
    out = np.asarray(increments)
    for _ in range(levels_down):
        if out.shape[-1] % 2:
            raise ValueError(
                f"cannot halve odd increment count {out.shape[-1]}"
            )
        out = out.reshape(out.shape[:-1] + (-1, 2)).sum(axis=-1)
    return out


def subsample_array(increments: np.ndarray, levels_down: int) -> np.ndarray:
    """Strided subsampling along the last axis: keep every 2**levels_down-th entry.

    Unlike :func:`coarsen_array`, nothing is summed or rescaled: entry i of the
    result is the single fine-scale increment observed at the left endpoint of
    coarse cell i, still N(0, fine dt).  Feeding these to a scheme stepping at
    the coarse dt therefore drives it with noise whose variance is a factor
    2**levels_down smaller than a Brownian increment of that step size -- the
    construction behind the dispersion-style error tables this package
    reproduces, where the estimate measures each scheme's spread around the
    fine reference path rather than its pathwise discretization error.

    Strides compose: ``subsample_array(x, a+b) == subsample_array(
    subsample_array(x, a), b)`` exactly (both are views of the same entries).
    """
    if levels_down < 0:
        raise ValueError(f"levels_down must be >= 0, got {levels_down}")
    out = np.asarray(increments)
    if out.shape[-1] % (1 << levels_down):
        raise ValueError(
            f"cannot stride {out.shape[-1]} increments by 2**{levels_down}"
        )
    return out[..., :: 1 << levels_down]


def coarsen(lattice: BrownianLattice, levels_down: int) -> BrownianLattice:
    """Lattice at ``level - levels_down`` whose increments are pairwise sums.

    Increment i of the result is the sum of the 2**levels_down corresponding
    fine increments (ascending index, balanced pairwise tree), describing the
    same Brownian path observed on the coarser grid.
    """
    if levels_down > lattice.level:
        raise ValueError(
            f"levels_down={levels_down} exceeds lattice level {lattice.level}"
        )
    if levels_down == 0:
        return lattice
    coarse = coarsen_array(lattice.increments, levels_down)
    return BrownianLattice(
        level=lattice.level - levels_down, horizon=lattice.horizon, increments=coarse
    )


def correlate_arrays(w_tilde: np.ndarray, w_perp: np.ndarray, rho: float) -> np.ndarray:
    """Elementwise rho * w_tilde + sqrt(1 - rho**2) * w_perp."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    return rho * w_tilde + np.sqrt(1.0 - rho * rho) * w_perp


def correlate(
    w_tilde: BrownianLattice, w_perp: BrownianLattice, rho: float
) -> BrownianLattice:
    """Compose a Brownian motion with correlation rho to ``w_tilde``.

    ``w_tilde`` and ``w_perp`` must be independent (distinct streams) and live
    on the same grid.  At rho = 1 the output equals ``w_tilde`` elementwise;
    at rho = 0 it equals ``w_perp``.
    """
    if w_tilde.level != w_perp.level:
        raise ValueError(
            f"level mismatch: {w_tilde.level} vs {w_perp.level}"
        )
    if w_tilde.horizon != w_perp.horizon:
        raise ValueError(
            f"horizon mismatch: {w_tilde.horizon} vs {w_perp.horizon}"
        )
    mixed = correlate_arrays(w_tilde.increments, w_perp.increments, rho)
    return BrownianLattice(
        level=w_tilde.level, horizon=w_tilde.horizon, increments=mixed
    )
