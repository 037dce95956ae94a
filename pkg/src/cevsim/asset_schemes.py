"""Log-price integrators for the two-dimensional stochastic volatility model.

The asset S follows dS = mu*S dt + S*V**p dW with V the mean-reverting CEV
variance (p = 1/2) or volatility (p = 1) process, and corr(W, W_tilde) = rho
where W_tilde drives V.  Prices are propagated in log space,

    d ln S = (mu - V**(2p)/2) dt + V**p dW,

and exponentiated only at readout, so S_T > 0 by construction.

Two one-step maps are provided: a plain Euler discretization of the log-price
(``log_euler_step``) and a higher-order scheme (``ijk_step``) that uses
trapezoidal variance interpolation, decorrelation of the driver, and a
Milstein correction for the correlated part -- it needs the already-advanced
variance v_next and both driver increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cev_schemes import _pow
from .model import ASSET_SCHEMES, CevParams, SchemeId


@dataclass(frozen=True)
class SvParams:
    """Parameters of the two-dimensional stochastic volatility model.

    ``cev`` holds the variance-process coefficients (including the horizon T);
    ``mu`` is the asset drift, ``rho`` the driver correlation, ``s0`` the
    initial price and ``p`` the exponent with which the variance enters the
    asset diffusion (1/2 for variance models, 1 for volatility models).
    """

    cev: CevParams
    mu: float
    rho: float
    s0: float
    p: float = 0.5

    def __post_init__(self) -> None:
        if not self.s0 > 0.0 or not math.isfinite(self.s0):
            raise ValueError(f"s0 must be a positive finite real, got {self.s0}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.p not in (0.5, 1.0):
            raise ValueError(f"p must be 1/2 or 1, got {self.p}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")


def log_euler_step(lnS, v, dt, dw_asset, sv: SvParams):
    """Euler step of the log-price: lnS + mu*dt - v**(2p)*dt/2 + v**p*dw."""
    p = sv.p
    return lnS + sv.mu * dt - 0.5 * _pow(v, 2.0 * p) * dt + _pow(v, p) * dw_asset


def ijk_step(lnS, v, v_next, dt, dw_asset, dw_var, sv: SvParams):
    """Trapezoidal/decorrelated log-price step with Milstein correction.

    lnS + mu*dt - (v**(2p) + v_next**(2p))*dt/4 + rho*v**p*dw_var
        + (v**p + v_next**p)/2 * (dw_asset - rho*dw_var)
        + rho*p*k3/2 * v**(q+p-1) * (dw_var**2 - dt)

    ``v_next`` is the variance already advanced to the end of the step and
    ``dw_var`` is the increment of the variance driver (the one carrying rho).
    At rho = 0 and v_next = v this reduces exactly to :func:`log_euler_step`.
    """
    p = sv.p
    rho = sv.rho
    k3 = sv.cev.k3
    q = sv.cev.q
    vp = _pow(v, p)
    vnp = _pow(v_next, p)
    return (
        lnS
        + sv.mu * dt
        - 0.25 * (_pow(v, 2.0 * p) + _pow(v_next, 2.0 * p)) * dt
        + rho * vp * dw_var
        + 0.5 * (vp + vnp) * (dw_asset - rho * dw_var)
        + 0.5 * rho * p * k3 * _pow(v, q + p - 1.0) * (dw_var * dw_var - dt)
    )


def simulate_asset_block(
    sv: SvParams,
    asset_scheme: SchemeId,
    variance_nodes: np.ndarray,
    dw_asset: np.ndarray,
    dw_var: np.ndarray | None,
    dt: float,
) -> np.ndarray:
    """Terminal prices S_T for a block of paths.

    ``variance_nodes`` has shape (n_paths, n_steps + 1) -- one variance value
    per grid node, from any variance scheme's recorded trajectory.  The
    increments have shape (n_paths, n_steps).
    """
    if asset_scheme not in ASSET_SCHEMES:
        raise ValueError(f"{asset_scheme} is not an asset-process scheme")
    variance_nodes = np.atleast_2d(variance_nodes)
    dw_asset = np.atleast_2d(dw_asset)
    n_paths, n_steps = dw_asset.shape
    if variance_nodes.shape != (n_paths, n_steps + 1):
        raise ValueError(
            f"variance_nodes shape {variance_nodes.shape} does not match "
            f"{n_steps} increments (need one value per grid node)"
        )
    if asset_scheme is SchemeId.IJK:
        if dw_var is None:
            raise ValueError("IJK needs the variance-driver increments")
        dw_var = np.atleast_2d(dw_var)
        if dw_var.shape != dw_asset.shape:
            raise ValueError(
                f"driver increment shapes differ: {dw_var.shape} vs {dw_asset.shape}"
            )

    dt = float(dt)
    lnS = np.full(n_paths, math.log(sv.s0))
    if asset_scheme is SchemeId.LOGEULER:
        for n in range(n_steps):
            lnS = log_euler_step(lnS, variance_nodes[:, n], dt, dw_asset[:, n], sv)
    else:
        for n in range(n_steps):
            lnS = ijk_step(
                lnS, variance_nodes[:, n], variance_nodes[:, n + 1], dt,
                dw_asset[:, n], dw_var[:, n], sv,
            )
    return np.exp(lnS)


def simulate_asset(
    sv: SvParams,
    variance_nodes,
    w_asset,
    w_var,
    scheme: SchemeId,
) -> float:
    """Terminal price of one path given its variance trajectory and drivers.

    ``variance_nodes`` must hold one value per grid node of ``w_asset``
    (length n_steps + 1); ``w_asset``/``w_var`` are Brownian lattices on the
    same grid.  Strictly positive by construction.
    """
    if w_var is not None and w_asset.level != w_var.level:
        raise ValueError(
            f"driver level mismatch: {w_asset.level} vs {w_var.level}"
        )
    nodes = np.asarray(variance_nodes, dtype=np.float64)
    if nodes.ndim != 1 or nodes.shape[0] != w_asset.n_steps + 1:
        raise ValueError(
            f"variance_nodes must have length {w_asset.n_steps + 1}, "
            f"got shape {nodes.shape}"
        )
    terminal = simulate_asset_block(
        sv, scheme, nodes[np.newaxis, :], w_asset.increments[np.newaxis, :],
        None if w_var is None else w_var.increments[np.newaxis, :], w_asset.dt,
    )
    return float(terminal[0])
