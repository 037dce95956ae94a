"""Parameter containers and applicability conditions for the mean-reverting CEV model.

The object of study is the scalar SDE

    dx_t = (k1 - k2 * x_t) dt + k3 * x_t**q dW_t,     x_0 = x0 >= 0,

with k1, k2, k3 > 0 and 1/2 < q < 1.  The drift pulls the state toward the
steady level k1/k2, and the sub-linear diffusion vanishes at the origin --
which is what makes positivity-preserving discretizations possible at all.

Everything in this module is an immutable value object.  Construction raises
``ValueError`` on invalid parameters; :func:`validate` itself never throws, it
just reports which scheme applicability conditions hold on a given grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class SchemeId(str, Enum):
    """Closed enumeration of the implemented time-stepping schemes.

    ``SD`` .. ``MIL`` integrate the variance process; ``LOGEULER`` and ``IJK``
    integrate the log-price of the two-dimensional stochastic volatility model.
    """

    SD = "SD"            # semi-discrete; implicitness theta, squared affine-in-noise
    HAL = "HAL"          # semi-discrete on the (1-q) power, absolute-value closure
    ALF = "ALF"          # drift-implicit on the Lamperti transform; Newton solve
    BIM = "BIM"          # balanced implicit method
    BMM = "BMM"          # balanced Milstein method; relaxation big_theta
    EM = "EM"            # explicit Euler-Maruyama (not positivity preserving)
    MIL = "MIL"          # standard Milstein (not positivity preserving)
    LOGEULER = "LOGEULER"  # log-price Euler
    IJK = "IJK"          # trapezoidal/decorrelated log-price scheme

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


#: Schemes that integrate the variance process.
VARIANCE_SCHEMES = frozenset(
    {SchemeId.SD, SchemeId.HAL, SchemeId.ALF, SchemeId.BIM, SchemeId.BMM,
     SchemeId.EM, SchemeId.MIL}
)

#: Schemes that integrate the log-price process.
ASSET_SCHEMES = frozenset({SchemeId.LOGEULER, SchemeId.IJK})

#: Variance schemes that map nonnegative states to nonnegative states a.s.
POSITIVITY_PRESERVING = frozenset(
    {SchemeId.SD, SchemeId.HAL, SchemeId.ALF, SchemeId.BIM, SchemeId.BMM}
)


@dataclass(frozen=True)
class CevParams:
    """Coefficients and initial data of the mean-reverting CEV SDE.

    Attributes
    ----------
    k1, k2, k3 : float
        Drift level, mean-reversion rate and vol-of-vol; all strictly positive.
    q : float
        Diffusion exponent, strictly between 1/2 and 1.
    x0 : float
        Deterministic initial value, >= 0.
    T : float
        Time horizon, > 0.
    """

    k1: float
    k2: float
    k3: float
    q: float
    x0: float
    T: float

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k3"):
            value = getattr(self, name)
            if not value > 0.0 or not math.isfinite(value):
                raise ValueError(f"{name} must be a positive finite real, got {value}")
        if not 0.5 < self.q < 1.0:
            raise ValueError(f"q must lie strictly in (1/2, 1), got {self.q}")
        if not self.x0 >= 0.0 or not math.isfinite(self.x0):
            raise ValueError(f"x0 must be a nonnegative finite real, got {self.x0}")
        if not self.T > 0.0 or not math.isfinite(self.T):
            raise ValueError(f"T must be a positive finite real, got {self.T}")

    @property
    def steady_state(self) -> float:
        """Mean-reversion level k1/k2 of the drift."""
        return self.k1 / self.k2


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme selector plus implicitness/relaxation/solver controls.

    ``theta`` is the implicitness level of the SD scheme (0 explicit, 1 fully
    implicit); ``big_theta`` is the relaxation parameter of the balanced
    Milstein method.  The Newton controls only matter for the ALF scheme.
    The selector may be left as ``None`` when the config is used purely as a
    bundle of knobs (the simulators take the scheme as a separate argument).
    """

    scheme: SchemeId | None = None
    theta: float = 1.0
    big_theta: float = 0.5
    newton_tol: float = 1e-12
    newton_max_iter: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 <= self.big_theta <= 1.0:
            raise ValueError(f"big_theta must lie in [0, 1], got {self.big_theta}")
        if not self.newton_tol > 0.0:
            raise ValueError(f"newton_tol must be positive, got {self.newton_tol}")
        if self.newton_max_iter < 1:
            raise ValueError(
                f"newton_max_iter must be a positive integer, got {self.newton_max_iter}"
            )


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid 0 = t_0 < t_1 < ... < t_N = T with t_n = n * dt."""

    n_steps: int
    dt: float

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.dt > 0.0 or not math.isfinite(self.dt):
            raise ValueError(f"dt must be a positive finite real, got {self.dt}")

    @classmethod
    def from_level(cls, level: int, horizon: float) -> "GridSpec":
        """Dyadic grid with 2**level uniform steps over [0, horizon]."""
        if level < 0:
            raise ValueError(f"level must be >= 0, got {level}")
        n = 1 << level
        return cls(n_steps=n, dt=horizon / n)

    @classmethod
    def from_steps(cls, n_steps: int, horizon: float) -> "GridSpec":
        """Uniform grid with n_steps steps over [0, horizon]."""
        return cls(n_steps=n_steps, dt=horizon / n_steps)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt


# Conditions whose conjunction forms a scheme's overall applicability verdict.
# BIM needs no parameter restriction; ALF needs "dt small enough" for which no
# closed form exists; EM/MIL are unconditionally defined (they just may go
# negative) -- all three conjunctions are empty, i.e. vacuously true.
_REQUIRED_CONDITIONS: dict[SchemeId, tuple[str, ...]] = {
    SchemeId.SD: ("assumption_a_coeff", "assumption_a_step"),
    SchemeId.HAL: ("hal_coeff", "hal_step"),
    SchemeId.ALF: (),
    SchemeId.BIM: (),
    SchemeId.BMM: ("bmm_step",),
    SchemeId.EM: (),
    SchemeId.MIL: (),
    SchemeId.LOGEULER: (),
    SchemeId.IJK: (),
}


@dataclass(frozen=True)
class ValidityReport:
    """Per-condition applicability flags for one (params, config, grid) triple.

    ``overall`` is the conjunction of the conditions relevant to the queried
    scheme (``config.scheme``), or of all five flags when no scheme was named.
    """

    assumption_a_coeff: bool
    assumption_a_step: bool
    hal_coeff: bool
    hal_step: bool
    bmm_step: bool
    scheme: SchemeId | None = None
    overall: bool = field(default=True)

    CONDITION_NAMES = (
        "assumption_a_coeff",
        "assumption_a_step",
        "hal_coeff",
        "hal_step",
        "bmm_step",
    )

    def overall_for(self, scheme: SchemeId) -> bool:
        """Conjunction of the conditions relevant to ``scheme``."""
        return all(getattr(self, name) for name in _REQUIRED_CONDITIONS[scheme])

    def as_dict(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in self.CONDITION_NAMES}


def validate(params: CevParams, config: SchemeConfig, grid: GridSpec) -> ValidityReport:
    """Evaluate every scheme applicability condition on the given grid.

    Pure function; never raises.  The conditions are:

    * ``assumption_a_coeff``:  k3**2 / (1 + k2*theta*dt) <= 4 * min(k1, k2)
    * ``assumption_a_step``:   dt * (2 - theta) < 1 / k2
    * ``hal_coeff``:           k3**2 <= (2/q) * k1
    * ``hal_step``:            dt <= 2 / (2*k2 + q*k3**2)
    * ``bmm_step``:            dt < (2q - 1) / (2*q*k2*(1 - big_theta)),
      vacuously true at big_theta = 1 (the restriction disappears).

    The coefficient conditions are non-strict and the step conditions on
    dt*(2-theta) and the BMM bound are strict, exactly as stated above.
    """
    dt = grid.dt
    k1, k2, k3, q = params.k1, params.k2, params.k3, params.q
    theta = config.theta
    big_theta = config.big_theta

    assumption_a_coeff = k3 * k3 / (1.0 + k2 * theta * dt) <= 4.0 * min(k1, k2)
    assumption_a_step = dt * (2.0 - theta) < 1.0 / k2
    hal_coeff = k3 * k3 <= (2.0 / q) * k1
    hal_step = dt <= 2.0 / (2.0 * k2 + q * k3 * k3)
    if big_theta == 1.0:
        bmm_step = True
    else:
        bmm_step = dt < (2.0 * q - 1.0) / (2.0 * q * k2 * (1.0 - big_theta))

    flags = {
        "assumption_a_coeff": assumption_a_coeff,
        "assumption_a_step": assumption_a_step,
        "hal_coeff": hal_coeff,
        "hal_step": hal_step,
        "bmm_step": bmm_step,
    }
    if config.scheme is None:
        overall = all(flags.values())
    else:
        overall = all(flags[name] for name in _REQUIRED_CONDITIONS[config.scheme])
    return ValidityReport(scheme=config.scheme, overall=overall, **flags)
