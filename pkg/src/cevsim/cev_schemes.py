"""One-step maps and path simulation for the variance-process schemes.

Seven schemes advance the mean-reverting CEV state y >= 0 over a step of size
dt driven by a Brownian increment dw:

* ``sd_step``   -- semi-discrete scheme: a squared affine-in-noise expression
  with implicitness ``theta``; nonnegative by construction.
* ``hal_step``  -- semi-discrete variant acting on the (1-q)-th power of the
  state, closed with an absolute value; nonnegative by construction.
* ``alf_step``  -- drift-implicit Euler on the Lamperti transform Y = y**(1-q),
  solved per step with a safeguarded Newton iteration; strictly positive.
* ``bim_step``  -- balanced implicit method; strictly positive.
* ``bmm_step``  -- balanced Milstein method with relaxation ``big_theta``;
  strictly positive under the step restriction dt < (2q-1)/(2q*k2*(1-big_theta)).
* ``em_step``   -- explicit Euler-Maruyama; can go negative.
* ``milstein_step`` -- standard Milstein; can go negative.

All step maps except ``alf_step`` are ufunc-style: ``y`` and ``dw`` may be
scalars or equal-shaped arrays, which is how the Monte Carlo engine runs
thousands of paths per numpy call.  ``alf_step`` is scalar because each
evaluation is a root solve.

The maps are pure functions of their inputs.  The optional ``stats``
accumulator only counts clamp events (the SD/HAL inner expressions are
nonnegative in exact arithmetic under the schemes' parameter conditions, but
finite precision can produce tiny negatives; those are clamped to zero and
counted rather than silently ignored).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CevParams, SchemeConfig, SchemeId

_DEFAULT_CONFIG = SchemeConfig()


class AlfNonconvergenceError(RuntimeError):
    """Raised when the ALF implicit equation could not be solved to tolerance.

    Carries the last iterate so a failing path can be diagnosed; the block
    simulator additionally sets ``path_row`` (the row index within the block)
    so callers that know the block layout can name the offending path.
    """

    path_row: int | None = None

    def __init__(self, message: str, last_iterate: float):
        super().__init__(f"{message} (last iterate {last_iterate!r})")
        self.last_iterate = last_iterate


@dataclass
class StepStats:
    """Mutable counter for clamp events inside sd/hal inner expressions."""

    clamp_count: int = 0


def _pow(x, r: float):
    """x**r with exact fast paths for the dyadic exponents of the q=3/4 family.

    sqrt is correctly rounded, so routing 0.5/0.25/-0.5/... through sqrt (and
    small integers through repeated multiplication) is both faster and at
    least as accurate as the generic pow; every caller in this package uses
    this helper, so scalar and vectorized code paths agree bit-for-bit.
    """
    if r == 1.0:
        return x
    if r == 0.5:
        return np.sqrt(x)
    if r == 0.25:
        return np.sqrt(np.sqrt(x))
    if r == -0.5:
        return 1.0 / np.sqrt(x)
    if r == -0.25:
        return 1.0 / np.sqrt(np.sqrt(x))
    if r == 2.0:
        return x * x
    if r == 3.0:
        return x * x * x
    if r == 4.0:
        x2 = x * x
        return x2 * x2
    if r == -1.0:
        return 1.0 / x
    return np.power(x, r)


def _signed_pow(y, r: float):
    """sign(y) * |y|**r: odd continuation of the power map to negative states.

    Keeps the EM/Milstein iterations total after a negative excursion; the
    negativity itself is reported by the simulator, not repaired.
    """
    return np.sign(y) * _pow(np.abs(y), r)


def sd_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
            stats: StepStats | None = None):
    """Semi-discrete step: ( sqrt(ybar) + k3/(2(1+k2*theta*dt)) * y**(q-1/2) * dw )**2.

    with ybar = y*(1 - k2*dt/(1+k2*theta*dt)) + k1*dt/(1+k2*theta*dt)
                - k3**2*dt/(4*(1+k2*theta*dt)**2) * y**(2q-1),
    clamped at zero if negative.  The result is nonnegative for every real dw.
    """
    theta = (_DEFAULT_CONFIG if config is None else config).theta
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    denom = 1.0 + k2 * theta * dt
    ybar = (
        y * (1.0 - k2 * dt / denom)
        + k1 * dt / denom
        - (k3 * k3 * dt / (4.0 * denom * denom)) * _pow(y, 2.0 * q - 1.0)
    )
    if stats is not None:
        stats.clamp_count += int(np.count_nonzero(ybar < 0.0))
    ybar = np.maximum(ybar, 0.0)
    root = np.sqrt(ybar) + (k3 / (2.0 * denom)) * _pow(y, q - 0.5) * dw
    return root * root


def hal_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
             stats: StepStats | None = None):
    """Power-transformed semi-discrete step.

    | (y*(1-k2*dt) + k1*dt - q*k3**2*dt/2 * y**(2q-1))**(1-q) + k3*(1-q)*dw | ** (1/(1-q))

    The inner expression is clamped at zero before the (1-q) power; the
    absolute value keeps the result nonnegative for arbitrarily large negative
    noise.
    """
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    inner = (
        y * (1.0 - k2 * dt)
        + k1 * dt
        - (q * k3 * k3 * dt / 2.0) * _pow(y, 2.0 * q - 1.0)
    )
    if stats is not None:
        stats.clamp_count += int(np.count_nonzero(inner < 0.0))
    inner = np.maximum(inner, 0.0)
    base = _pow(inner, 1.0 - q) + k3 * (1.0 - q) * dw
    return _pow(np.abs(base), 1.0 / (1.0 - q))


def solve_alf_transformed(z: float, dt: float, dw: float,
                          k1: float, k2: float, k3: float, q: float,
                          tol: float = 1e-12, max_iter: int = 100,
                          guess: float | None = None) -> float:
    """Solve the drift-implicit equation of the Lamperti-transformed state.

    Finds Y > 0 with

        Y = z + (1-q)*(k1*Y**(-q/(1-q)) - k2*Y - q*k3**2/2 * Y**(-1))*dt
              + k3*(1-q)*dw

    to residual <= tol, where z is the current transformed state y**(1-q).
    Newton from ``guess`` (default z, the unperturbed previous state), with a
    positivity safeguard; falls back to bisection on an expanding bracket.
    Works for any q in (0, 1) given as a raw coefficient, including q = 1/2
    where the equation reduces to a quadratic.

    The residual G(Y) = Y - rhs(Y) tends to -inf as Y -> 0+ (the k1 term
    dominates for q > 1/2) and to +inf as Y -> inf, so a sign-changing bracket
    always exists.
    """
    one_m_q = 1.0 - q
    e = q / one_m_q
    a1 = one_m_q * dt * k1
    a2 = one_m_q * dt * k2
    a3 = one_m_q * dt * 0.5 * q * k3 * k3
    rhs = z + k3 * one_m_q * dw
    lin = 1.0 + a2

    def residual(yv: float) -> float:
        return yv * lin - a1 * math.pow(yv, -e) + a3 / yv - rhs

    y = guess if guess is not None and guess > 0.0 else max(z, tol)
    if y <= 0.0:
        y = tol
    for _ in range(max_iter):
        g = residual(y)
        if abs(g) <= tol:
            return y
        deriv = lin + a1 * e * math.pow(y, -e - 1.0) - a3 / (y * y)
        if deriv <= 0.0 or not math.isfinite(deriv):
            break
        y_next = y - g / deriv
        if y_next <= 0.0 or not math.isfinite(y_next):
            y_next = 0.5 * y
        y = y_next

    # Bisection fallback on [lo, hi] with G(lo) < 0 < G(hi).
    lo = 1e-12
    hi = max(2.0 * (guess if guess and guess > 0.0 else z), 1.0)
    expansions = 0
    while residual(hi) < 0.0:
        hi *= 2.0
        expansions += 1
        if expansions > 128:
            raise AlfNonconvergenceError(
                "no sign change found while expanding the bisection bracket", y
            )
    if residual(lo) >= 0.0:
        raise AlfNonconvergenceError(
            "residual not negative at the lower bracket end", y
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = residual(mid)
        if abs(g) <= tol:
            return mid
        if g < 0.0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(residual(mid)) <= tol:
        return mid
    raise AlfNonconvergenceError("bisection failed to reach tolerance", mid)


def alf_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
             stats: StepStats | None = None) -> float:
    """Drift-implicit Lamperti step: solve for Y, return Y**(1/(1-q)) > 0.

    Scalar only -- each evaluation is a Newton solve.  The transformed
    equation's constant term is the current transformed state z = y**(1-q)
    (z = (k1*dt)**(1-q) serves as the Newton guess when y = 0).
    Raises :class:`AlfNonconvergenceError` if the solve fails.
    """
    cfg = _DEFAULT_CONFIG if config is None else config
    y = float(y)
    one_m_q = 1.0 - params.q
    z = math.pow(y, one_m_q)
    guess = z if y > 0.0 else math.pow(params.k1 * dt, one_m_q)
    root = solve_alf_transformed(
        z, float(dt), float(dw), params.k1, params.k2, params.k3, params.q,
        tol=cfg.newton_tol, max_iter=cfg.newton_max_iter, guess=guess,
    )
    return math.pow(root, 1.0 / one_m_q)


def bim_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
             stats: StepStats | None = None):
    """Balanced implicit step.

    (y + k1*dt + k3*y**q*(dw + |dw|)) / (1 + k2*dt + k3*y**(q-1)*|dw|)

    The denominator weight y**(q-1) diverges at zero; at exactly y = 0 it is
    defined as 0 (the matching numerator noise term vanishes there too), so
    the zero state maps to k1*dt/(1+k2*dt) > 0.
    """
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    positive = np.asarray(y) > 0.0
    y_safe = np.where(positive, y, 1.0)
    weight = np.where(positive, _pow(y_safe, q - 1.0), 0.0)
    abs_dw = np.abs(dw)
    num = y + k1 * dt + k3 * _pow(y, q) * (dw + abs_dw)
    den = 1.0 + k2 * dt + k3 * weight * abs_dw
    return num / den


def bmm_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
             stats: StepStats | None = None):
    """Balanced Milstein step with relaxation big_theta.

    ( y + (k1 + (big_theta-1)*k2*y)*dt + k3*y**q*dw + q*k3**2/2 * y**(2q-1)*dw**2 )
    / ( 1 + big_theta*k2*dt + q*k3**2/2 * |y|**(2q-2)*dt )

    As for BIM, the divergent weight |y|**(2q-2) is defined as 0 at exactly
    y = 0, giving k1*dt/(1+big_theta*k2*dt) > 0 there.  The output is strictly
    positive for every dw when dt < (2q-1)/(2q*k2*(1-big_theta)).
    """
    big_theta = (_DEFAULT_CONFIG if config is None else config).big_theta
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    half_qk3sq = 0.5 * q * k3 * k3
    positive = np.asarray(y) > 0.0
    y_safe = np.where(positive, np.abs(y), 1.0)
    weight = np.where(positive, _pow(y_safe, 2.0 * q - 2.0), 0.0)
    num = (
        y
        + (k1 + (big_theta - 1.0) * k2 * y) * dt
        + k3 * _pow(y, q) * dw
        + half_qk3sq * _pow(y, 2.0 * q - 1.0) * (dw * dw)
    )
    den = 1.0 + big_theta * k2 * dt + half_qk3sq * weight * dt
    return num / den


def em_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
            stats: StepStats | None = None):
    """Explicit Euler-Maruyama step: y + (k1 - k2*y)*dt + k3*y**q*dw.

    Accepts any real y; for y < 0 the power is continued as sign(y)*|y|**q so
    the iteration stays total after a negative excursion.
    """
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    return y + (k1 - k2 * y) * dt + k3 * _signed_pow(y, q) * dw


def milstein_step(y, dt, dw, params: CevParams, config: SchemeConfig | None = None,
                  stats: StepStats | None = None):
    """Milstein step: EM plus the correction k3**2*q/2 * y**(2q-1) * (dw**2 - dt)."""
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    em = y + (k1 - k2 * y) * dt + k3 * _signed_pow(y, q) * dw
    return em + 0.5 * k3 * k3 * q * _signed_pow(y, 2.0 * q - 1.0) * (dw * dw - dt)


#: Vectorizable step maps by scheme (ALF dispatches to the scalar solver).
_VECTOR_STEPS = {
    SchemeId.SD: sd_step,
    SchemeId.HAL: hal_step,
    SchemeId.BIM: bim_step,
    SchemeId.BMM: bmm_step,
    SchemeId.EM: em_step,
    SchemeId.MIL: milstein_step,
}


@dataclass(frozen=True)
class PathResult:
    """Terminal value and excursion statistics of one simulated path."""

    terminal: float
    min_state: float
    clamp_count: int = 0

    @property
    def negative_encountered(self) -> bool:
        """True iff some node (including the initial one) was negative."""
        return self.min_state < 0.0


def simulate_terminal_block(
    scheme: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    dw: np.ndarray,
    dt: float,
    record_nodes: bool = False,
    stats: StepStats | None = None,
):
    """Advance a block of paths from x0 through all increments of ``dw``.

    ``dw`` has shape (n_paths, n_steps).  Returns ``(terminal, min_state,
    nodes)`` where the first two are (n_paths,) arrays and ``nodes`` is the
    full (n_paths, n_steps + 1) trajectory when requested, else None.

    The recursion is literally the scheme's one-step map applied columnwise,
    so a block of size one reproduces a scalar fold of the step function
    bit-for-bit.  ALF paths run one at a time (each step is a root solve).
    """
    dw = np.atleast_2d(np.asarray(dw, dtype=np.float64))
    n_paths, n_steps = dw.shape
    dt = float(dt)
    x0 = float(params.x0)

    nodes = np.empty((n_paths, n_steps + 1)) if record_nodes else None

    if scheme is SchemeId.ALF:
        terminal = np.empty(n_paths)
        min_state = np.empty(n_paths)
        rows = dw.tolist()
        for i in range(n_paths):
            y = x0
            low = y
            row = rows[i]
            if record_nodes:
                nodes[i, 0] = y
            for n in range(n_steps):
                try:
                    y = alf_step(y, dt, row[n], params, config, stats)
                except AlfNonconvergenceError as exc:
                    exc.path_row = i
                    raise
                if y < low:
                    low = y
                if record_nodes:
                    nodes[i, n + 1] = y
            terminal[i] = y
            min_state[i] = low
        return terminal, min_state, nodes

    try:
        step = _VECTOR_STEPS[scheme]
    except KeyError:
        raise ValueError(f"{scheme} is not a variance-process scheme") from None

    y = np.full(n_paths, x0)
    min_state = y.copy()
    if record_nodes:
        nodes[:, 0] = y
    for n in range(n_steps):
        y = step(y, dt, dw[:, n], params, config, stats)
        np.minimum(min_state, y, out=min_state)
        if record_nodes:
            nodes[:, n + 1] = y
    return y, min_state, nodes


def simulate_path(
    scheme: SchemeId,
    params: CevParams,
    config: SchemeConfig | None,
    increments,
    record_nodes: bool = False,
):
    """Simulate one path over a :class:`~cevsim.paths.BrownianLattice`.

    Returns a :class:`PathResult`, or ``(PathResult, nodes)`` with the full
    node sequence when ``record_nodes`` is set (the stochastic-volatility
    coupling needs the whole variance trajectory).  ALF solver failures
    propagate as :class:`AlfNonconvergenceError`.
    """
    stats = StepStats()
    terminal, min_state, nodes = simulate_terminal_block(
        scheme, params, config, increments.increments[np.newaxis, :],
        increments.dt, record_nodes=record_nodes, stats=stats,
    )
    result = PathResult(
        terminal=float(terminal[0]),
        min_state=float(min_state[0]),
        clamp_count=stats.clamp_count,
    )
    if record_nodes:
        return result, nodes[0]
    return result
