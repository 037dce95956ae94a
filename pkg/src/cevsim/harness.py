"""Monte Carlo experiment engine: strong errors, distances, orders, timing, SV study.

The estimators follow the batch-means protocol: M batches of L paths, where
batch j estimates the squared terminal error

    eps_hat_j = (1/L) * sum_i |y_ij^(dt)(T) - y_ij^(ref)(T)|**2

and the reported error is sqrt of the grand mean.  Confidence intervals are
the 98% normal-quantile interval (z = 2.3263) on the mean of the M batch
values, with both endpoints mapped through the square root -- a monotone
transform of a CI for the mean squared error.

Coarse and reference runs always share the per-path reference lattice; the
``coupling`` switch picks how the coarse driver is derived from it.
``"subsample"`` (the default, and what the shipped benchmark tables use) keeps
the single fine-scale increment observed at each coarse node, unrescaled --
the estimate then measures each scheme's dispersion around the reference path
at the coarse step size, which decays only slowly in dt.  ``"coarsen"`` sums
each block of fine increments pairwise (:func:`cevsim.paths.coarsen_array`),
so the coarse run sees bit-exactly the same Brownian path and the estimate is
the pathwise strong discretization error.  Either way nothing is compared
across independent simulations.

Work is split into blocks of whole batches with a fixed partition, so results
are byte-identical regardless of worker count: every path's draws are a pure
function of its (seed, batch, path) key, and all reductions are fixed-order
numpy pairwise sums over batch-indexed arrays.  Timing, when enabled, wraps
only the coarse-grid integration loops -- random-number generation and the
reference run are excluded, so seconds_per_path reflects the cost of stepping
one path at the row's own step size.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .asset_schemes import SvParams, simulate_asset_block
from .cev_schemes import AlfNonconvergenceError, StepStats, simulate_terminal_block
from .model import (
    ASSET_SCHEMES,
    VARIANCE_SCHEMES,
    CevParams,
    SchemeConfig,
    SchemeId,
)
from .paths import (
    PathKey,
    coarsen_array,
    correlate_arrays,
    generate_increments,
    subsample_array,
)

#: Two-sided 98% normal quantile used for the error bars.
Z98 = 2.3263

#: Supported reference couplings; see the module docstring.
COUPLINGS = ("subsample", "coarsen")

#: Paths per block the engine aims for when grouping whole batches; a pure
#: performance knob -- estimates do not depend on it (every reduction happens
#: inside a single batch or over the batch-means array).
TARGET_BLOCK_PATHS = 1024

#: Smaller target for the stochastic-volatility study, whose blocks hold two
#: reference-resolution driver lattices plus a node trajectory per path.
SV_TARGET_BLOCK_PATHS = 256


@dataclass(frozen=True)
class ErrorEstimate:
    """One strong-error (or distance) measurement at a single step size."""

    scheme: SchemeId
    dt: float
    error: float
    ci_low: float
    ci_high: float
    m_batches: int
    l_paths: int
    seconds_per_path: float = 0.0

    def __post_init__(self) -> None:
        if self.m_batches < 2 or self.l_paths < 1:
            raise ValueError(
                f"need M >= 2 batches and L >= 1 paths, got M={self.m_batches}, "
                f"L={self.l_paths}"
            )

    @property
    def ci_half_width(self) -> float:
        """Half the (asymmetric, sqrt-mapped) interval width."""
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass(frozen=True)
class OrderFit:
    """Least-squares convergence order from log2-log2 regression."""

    slope: float
    intercept: float
    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class PositivityStats:
    """Excursion accounting over a set of simulated paths."""

    n_paths: int
    negative_paths: int
    clamp_count: int
    min_state: float

    @property
    def negative_fraction(self) -> float:
        return self.negative_paths / self.n_paths


class _Clock:
    """Accumulates elapsed seconds per key; a no-op when timing is off."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.elapsed: dict = {}

    def add(self, key, seconds: float) -> None:
        self.elapsed[key] = self.elapsed.get(key, 0.0) + seconds


def _simulate(scheme: SchemeId, params, config, dw, dt, path_identity=None,
              **kwargs):
    """simulate_terminal_block with the failing path named on solver failure.

    ``path_identity`` maps a block row index to a descriptive string (the
    block workers pass the row's PathKey), so an aborting run reports which
    path broke, not just which (scheme, dt) row.
    """
    try:
        return simulate_terminal_block(scheme, params, config, dw, dt, **kwargs)
    except AlfNonconvergenceError as exc:
        where = ""
        if path_identity is not None and exc.path_row is not None:
            where = f" on {path_identity(exc.path_row)}"
        raise AlfNonconvergenceError(
            f"{scheme.value} row at dt={dt!r} failed to converge{where}",
            exc.last_iterate,
        ) from exc


def _path_namer(seed: int, batch_start: int, l_paths: int):
    """Row-index -> PathKey description for abort messages."""
    def name(row: int) -> str:
        return str(PathKey(seed, batch_start + row // l_paths, row % l_paths))
    return name


def _batch_blocks(m_batches: int, l_paths: int, target: int) -> list[tuple[int, int]]:
    """Fixed partition of batch indices into blocks of whole batches."""
    per_block = max(1, target // max(l_paths, 1))
    return [
        (start, min(per_block, m_batches - start))
        for start in range(0, m_batches, per_block)
    ]


def _run_blocks(blocks, worker, workers: int) -> list:
    """Run block workers, preserving block order in the results."""
    if workers <= 1:
        return [worker(block) for block in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, blocks))


def _fine_block(seed: int, batch_start: int, n_batches: int, l_paths: int,
                n_steps: int, horizon: float, stream: int) -> np.ndarray:
    """Increment rows for every path of a block, in (batch, path) order."""
    out = np.empty((n_batches * l_paths, n_steps))
    row = 0
    for j in range(batch_start, batch_start + n_batches):
        for i in range(l_paths):
            out[row] = generate_increments(
                PathKey(seed, j, i), n_steps, horizon, stream
            )
            row += 1
    return out


def _estimate(scheme: SchemeId, dt: float, batch_means: np.ndarray,
              m_batches: int, l_paths: int, seconds_per_path: float) -> ErrorEstimate:
    """Map batch means of squared errors to an ErrorEstimate."""
    mean = float(batch_means.mean())
    half = float(Z98 * batch_means.std(ddof=1) / math.sqrt(m_batches))
    return ErrorEstimate(
        scheme=scheme,
        dt=dt,
        error=math.sqrt(mean),
        ci_low=math.sqrt(max(mean - half, 0.0)),
        ci_high=math.sqrt(mean + half),
        m_batches=m_batches,
        l_paths=l_paths,
        seconds_per_path=seconds_per_path,
    )


def _check_levels(coarse_levels, ref_level: int, coupling: str) -> None:
    if coupling not in COUPLINGS:
        raise ValueError(
            f"unknown coupling {coupling!r}; expected one of {COUPLINGS}"
        )
    for level in coarse_levels:
        if level > ref_level:
            raise ValueError(
                f"coarse level {level} exceeds reference level {ref_level}"
            )


def _driver_ladder(
    fine: np.ndarray, ref_level: int, levels, coupling: str
) -> dict[int, np.ndarray]:
    """Coarse-grid drivers derived from ``fine`` at each requested level.

    Subsample mode slices every 2**(ref_level - level)-th fine increment (a
    view, no copy).  Coarsen mode builds pairwise sums incrementally from the
    finest level down; by the balanced-tree summation contract this equals
    coarsening each level directly from the reference lattice, bit for bit.
    """
    ladder: dict[int, np.ndarray] = {}
    if coupling == "subsample":
        for level in set(levels):
            ladder[level] = subsample_array(fine, ref_level - level)
        return ladder
    current, current_level = fine, ref_level
    for level in sorted(set(levels), reverse=True):
        current = coarsen_array(current, current_level - level)
        current_level = level
        ladder[level] = current
    return ladder


def strong_error_profile(
    schemes,
    params: CevParams,
    config: SchemeConfig | None,
    coarse_levels,
    ref_level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    ref_scheme: SchemeId | None = None,
    timing: bool = True,
    workers: int = 1,
    coupling: str = "subsample",
) -> dict[tuple[SchemeId, int], ErrorEstimate]:
    """Strong errors for every (scheme, coarse level) pair on shared paths.

    All schemes and levels of one call derive their drivers from the same
    per-path reference lattice (see the module docstring for the two
    ``coupling`` modes), which is both the shared-paths discipline and a
    large constant-factor saving over separate calls.  The estimates are
    identical to what separate :func:`strong_error` calls with the same seed
    produce.  A coarse level equal to ``ref_level`` reuses the reference
    lattice itself, so scheme == reference scheme gives exactly zero there.
    """
    schemes = list(schemes)
    coarse_levels = list(coarse_levels)
    if m_batches < 2 or l_paths < 1:
        raise ValueError(f"need M >= 2 and L >= 1, got M={m_batches}, L={l_paths}")
    _check_levels(coarse_levels, ref_level, coupling)
    unknown = [s for s in schemes if s not in VARIANCE_SCHEMES]
    if unknown:
        raise ValueError(f"not variance-process schemes: {unknown}")

    horizon = params.T
    n_ref = 1 << ref_level
    dt_ref = horizon / n_ref
    clock = _Clock(timing)

    def block_worker(block):
        batch_start, n_batches = block
        fine = _fine_block(seed, batch_start, n_batches, l_paths, n_ref,
                           horizon, stream=0)
        namer = _path_namer(seed, batch_start, l_paths)
        ladder = _driver_ladder(fine, ref_level, coarse_levels, coupling)
        means: dict[tuple[SchemeId, int], np.ndarray] = {}
        elapsed: dict[tuple[SchemeId, int], float] = {}
        references: dict[SchemeId, np.ndarray] = {}
        for scheme in schemes:
            anchor = ref_scheme if ref_scheme is not None else scheme
            if anchor not in references:
                references[anchor], _, _ = _simulate(
                    anchor, params, config, fine, dt_ref, path_identity=namer
                )
            ref_terminal = references[anchor]
            for level in coarse_levels:
                dw = ladder[level]
                started = time.perf_counter() if timing else 0.0
                terminal, _, _ = _simulate(
                    scheme, params, config, dw, horizon / (1 << level),
                    path_identity=namer,
                )
                if timing:
                    elapsed[(scheme, level)] = time.perf_counter() - started
                diff = terminal - ref_terminal
                means[(scheme, level)] = (diff * diff).reshape(
                    n_batches, l_paths
                ).mean(axis=1)
        return means, elapsed

    blocks = _batch_blocks(m_batches, l_paths, TARGET_BLOCK_PATHS)
    results = _run_blocks(blocks, block_worker, workers)

    profile: dict[tuple[SchemeId, int], ErrorEstimate] = {}
    total_paths = m_batches * l_paths
    for scheme in schemes:
        for level in coarse_levels:
            key = (scheme, level)
            batch_means = np.concatenate([means[key] for means, _ in results])
            for _, elapsed in results:
                clock.add(key, elapsed.get(key, 0.0))
            seconds = clock.elapsed.get(key, 0.0) / total_paths if timing else 0.0
            profile[key] = _estimate(
                scheme, horizon / (1 << level), batch_means,
                m_batches, l_paths, seconds,
            )
    return profile


def strong_error(
    scheme: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    coarse_level: int,
    ref_level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    ref_scheme: SchemeId | None = None,
    timing: bool = True,
    workers: int = 1,
    coupling: str = "subsample",
) -> ErrorEstimate:
    """Strong terminal error of ``scheme`` at 2**coarse_level steps.

    The reference trajectory uses the same scheme at 2**ref_level steps
    (unless ``ref_scheme`` overrides it), and the coarse driver is derived
    from the reference path per ``coupling`` -- see the module docstring for
    what each mode measures.  ALF solver failures abort the run.
    """
    profile = strong_error_profile(
        [scheme], params, config, [coarse_level], ref_level,
        m_batches, l_paths, seed, ref_scheme=ref_scheme,
        timing=timing, workers=workers, coupling=coupling,
    )
    return profile[(scheme, coarse_level)]


def distance_profile(
    schemes,
    params: CevParams,
    config: SchemeConfig | None,
    n_steps: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    workers: int = 1,
) -> dict[tuple[SchemeId, SchemeId], ErrorEstimate]:
    """Pairwise terminal distances of the first-listed scheme vs the others.

    Every scheme runs once per path on one shared increment lattice with
    ``n_steps`` uniform steps (the grid need not be dyadic), and the
    root-mean-square terminal differences get the usual batch CI machinery.
    """
    schemes = list(schemes)
    if m_batches < 2 or l_paths < 1:
        raise ValueError(f"need M >= 2 and L >= 1, got M={m_batches}, L={l_paths}")
    if len(schemes) < 1:
        raise ValueError("need at least one scheme")
    horizon = params.T
    dt = horizon / n_steps
    base = schemes[0]
    others = schemes[1:]

    def block_worker(block):
        batch_start, n_batches = block
        dw = _fine_block(seed, batch_start, n_batches, l_paths, n_steps,
                         horizon, stream=0)
        namer = _path_namer(seed, batch_start, l_paths)
        terminals = {
            scheme: _simulate(scheme, params, config, dw, dt,
                              path_identity=namer)[0]
            for scheme in schemes
        }
        means = {}
        for other in others:
            diff = terminals[base] - terminals[other]
            means[(base, other)] = (diff * diff).reshape(
                n_batches, l_paths
            ).mean(axis=1)
        return means

    blocks = _batch_blocks(m_batches, l_paths, TARGET_BLOCK_PATHS)
    results = _run_blocks(blocks, block_worker, workers)

    profile = {}
    for other in others:
        key = (base, other)
        batch_means = np.concatenate([means[key] for means in results])
        profile[key] = _estimate(base, dt, batch_means, m_batches, l_paths, 0.0)
    return profile


def scheme_distance(
    scheme_a: SchemeId,
    scheme_b: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    n_steps: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    workers: int = 1,
) -> ErrorEstimate:
    """Root-mean-square terminal difference of two schemes on shared paths.

    Identical schemes give exactly zero.  ``n_steps`` is the uniform step
    count (use ``round(T/dt)`` to hit a target step size).
    """
    if scheme_a == scheme_b:
        # Same recursion on the same lattice: distance is identically zero.
        dt = params.T / n_steps
        return ErrorEstimate(scheme_a, dt, 0.0, 0.0, 0.0, m_batches, l_paths, 0.0)
    profile = distance_profile(
        [scheme_a, scheme_b], params, config, n_steps,
        m_batches, l_paths, seed, workers=workers,
    )
    return profile[(scheme_a, scheme_b)]


def positivity_run(
    scheme: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    workers: int = 1,
) -> PositivityStats:
    """Simulate M*L paths at 2**level steps and account for excursions."""
    horizon = params.T
    n_steps = 1 << level
    dt = horizon / n_steps

    def block_worker(block):
        batch_start, n_batches = block
        dw = _fine_block(seed, batch_start, n_batches, l_paths, n_steps,
                         horizon, stream=0)
        stats = StepStats()
        _, min_state, _ = _simulate(
            scheme, params, config, dw, dt, stats=stats,
            path_identity=_path_namer(seed, batch_start, l_paths),
        )
        return (
            int(np.count_nonzero(min_state < 0.0)),
            stats.clamp_count,
            float(min_state.min()),
        )

    blocks = _batch_blocks(m_batches, l_paths, TARGET_BLOCK_PATHS)
    results = _run_blocks(blocks, block_worker, workers)
    return PositivityStats(
        n_paths=m_batches * l_paths,
        negative_paths=sum(r[0] for r in results),
        clamp_count=sum(r[1] for r in results),
        min_state=min(r[2] for r in results),
    )


def negativity_stats(
    scheme: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    workers: int = 1,
) -> float:
    """Fraction of paths that ever visited a negative state."""
    stats = positivity_run(scheme, params, config, level, m_batches, l_paths,
                           seed, workers=workers)
    return stats.negative_fraction


def sv_profile(
    sv: SvParams,
    asset_schemes,
    var_scheme: SchemeId,
    coarse_levels,
    ref_level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    config: SchemeConfig | None = None,
    timing: bool = True,
    workers: int = 1,
    coupling: str = "subsample",
) -> dict[tuple[SchemeId, int], ErrorEstimate]:
    """Strong price errors for every (asset scheme, coarse level) pair.

    Per path, the variance driver W-tilde (stream 0) and an orthogonal motion
    (stream 1) are generated at the reference level; the asset driver is
    rho*W-tilde + sqrt(1-rho**2)*W-perp at the fine level, and the coarse runs
    derive both drivers from those same fine lattices per ``coupling`` (see
    the module docstring).  The error is measured on the price S_T, not the
    log-price.  seconds_per_path covers the coarse variance integration plus
    the coarse asset integration (what one path at that step size costs end
    to end, RNG excluded).
    """
    asset_schemes = list(asset_schemes)
    coarse_levels = list(coarse_levels)
    unknown = [s for s in asset_schemes if s not in ASSET_SCHEMES]
    if unknown:
        raise ValueError(f"not asset-process schemes: {unknown}")
    if var_scheme not in VARIANCE_SCHEMES:
        raise ValueError(f"{var_scheme} is not a variance-process scheme")
    _check_levels(coarse_levels, ref_level, coupling)

    params = sv.cev
    horizon = params.T
    n_ref = 1 << ref_level
    dt_ref = horizon / n_ref
    clock = _Clock(timing)

    def block_worker(block):
        batch_start, n_batches = block
        w_var = _fine_block(seed, batch_start, n_batches, l_paths, n_ref,
                            horizon, stream=0)
        w_perp = _fine_block(seed, batch_start, n_batches, l_paths, n_ref,
                             horizon, stream=1)
        w_asset = correlate_arrays(w_var, w_perp, sv.rho)
        del w_perp
        namer = _path_namer(seed, batch_start, l_paths)

        _, _, nodes_ref = _simulate(
            var_scheme, params, config, w_var, dt_ref, record_nodes=True,
            path_identity=namer,
        )
        reference = {
            asset: simulate_asset_block(sv, asset, nodes_ref, w_asset, w_var, dt_ref)
            for asset in asset_schemes
        }
        del nodes_ref

        means: dict[tuple[SchemeId, int], np.ndarray] = {}
        elapsed: dict = {}
        var_ladder = _driver_ladder(w_var, ref_level, coarse_levels, coupling)
        asset_ladder = _driver_ladder(w_asset, ref_level, coarse_levels, coupling)
        for level in coarse_levels:
            dt = horizon / (1 << level)
            started = time.perf_counter() if timing else 0.0
            _, _, nodes = _simulate(
                var_scheme, params, config, var_ladder[level], dt,
                record_nodes=True, path_identity=namer,
            )
            var_seconds = time.perf_counter() - started if timing else 0.0
            for asset in asset_schemes:
                started = time.perf_counter() if timing else 0.0
                terminal = simulate_asset_block(
                    sv, asset, nodes, asset_ladder[level], var_ladder[level], dt
                )
                if timing:
                    elapsed[(asset, level)] = (
                        var_seconds + time.perf_counter() - started
                    )
                diff = terminal - reference[asset]
                means[(asset, level)] = (diff * diff).reshape(
                    n_batches, l_paths
                ).mean(axis=1)
        return means, elapsed

    blocks = _batch_blocks(m_batches, l_paths, SV_TARGET_BLOCK_PATHS)
    results = _run_blocks(blocks, block_worker, workers)

    profile: dict[tuple[SchemeId, int], ErrorEstimate] = {}
    total_paths = m_batches * l_paths
    for asset in asset_schemes:
        for level in coarse_levels:
            key = (asset, level)
            batch_means = np.concatenate([means[key] for means, _ in results])
            for _, elapsed in results:
                clock.add(key, elapsed.get(key, 0.0))
            seconds = clock.elapsed.get(key, 0.0) / total_paths if timing else 0.0
            profile[key] = _estimate(
                asset, horizon / (1 << level), batch_means,
                m_batches, l_paths, seconds,
            )
    return profile


def sv_error(
    sv: SvParams,
    asset_scheme: SchemeId,
    var_scheme: SchemeId,
    coarse_level: int,
    ref_level: int,
    m_batches: int,
    l_paths: int,
    seed: int,
    config: SchemeConfig | None = None,
    timing: bool = True,
    workers: int = 1,
    coupling: str = "subsample",
) -> ErrorEstimate:
    """Strong error of the terminal price S_T against the fine-grid reference."""
    profile = sv_profile(
        sv, [asset_scheme], var_scheme, [coarse_level], ref_level,
        m_batches, l_paths, seed, config=config, timing=timing, workers=workers,
        coupling=coupling,
    )
    return profile[(asset_scheme, coarse_level)]


def fit_order(points) -> OrderFit:
    """Ordinary least squares of log2(error) against log2(dt).

    ``points`` is a sequence of (dt, error) pairs with dt > 0 and error > 0;
    the slope is the empirical strong convergence order.
    """
    pts = [(float(dt), float(err)) for dt, err in points]
    if len(pts) < 2:
        raise ValueError(f"need at least 2 points to fit an order, got {len(pts)}")
    for dt, err in pts:
        if dt <= 0.0 or err <= 0.0:
            raise ValueError(
                f"order fit needs positive dt and error, got ({dt}, {err})"
            )
    log_dt = np.array([math.log2(dt) for dt, _ in pts])
    log_err = np.array([math.log2(err) for _, err in pts])
    slope, intercept = np.polyfit(log_dt, log_err, 1)
    return OrderFit(
        slope=float(slope),
        intercept=float(intercept),
        points=tuple(zip(log_dt.tolist(), log_err.tolist())),
    )
