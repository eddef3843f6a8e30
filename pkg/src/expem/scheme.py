"""Time-stepping engines.

The exponential Euler-Maruyama (Exp-EM) step freezes the coefficients of
the log-dynamics at the left node::

    X' = X * exp( sigma(X)/X * dW + ((b(X) - b0)/X - sigma(X)^2/(2 X^2)) h ) + b0 * h

which keeps every value strictly positive (and ``>= b0 * h``).  Classical
and drift-tamed Euler-Maruyama are provided as comparators, together with
the closed-form geometric Brownian motion and stochastic Lotka-Volterra
solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import DomainError, UnsupportedModelError
from .model import ModelSpec
from .paths import BrownianPath, TimeGrid

__all__ = [
    "SCHEMES",
    "Trajectory",
    "TrajectoryBatch",
    "exp_em_step",
    "interpolate_exp_em",
    "stopping_threshold",
    "simulate",
    "simulate_batch",
    "exact_gbm",
    "exact_lotka_volterra",
    "exact_gbm_values",
    "exact_lotka_volterra_values",
    "write_trajectory_csv",
]

SCHEMES = ("exp-em", "euler", "tamed", "exact-gbm", "exact-lv")


def stopping_threshold(dt: float, beta: float) -> float:
    """Exit level ``dt**(-1/(beta-1))`` of the stopped scheme."""
    if not beta > 1:
        raise DomainError(f"beta must exceed 1, got {beta}")
    if not 0 < dt <= 1:
        raise DomainError(f"dt must lie in (0, 1], got {dt}")
    return dt ** (-1.0 / (beta - 1.0))


def exp_em_step(model: ModelSpec, x: float, h: float, dW: float) -> float:
    """One Exp-EM step of length ``h`` from ``x > 0``.

    Exponents above the overflow cap are clamped (see :func:`exp_em_step_flagged`).
    """
    return exp_em_step_flagged(model, x, h, dW)[0]


def exp_em_step_flagged(model: ModelSpec, x: float, h: float, dW: float) -> tuple[float, bool]:
    if not x > 0:
        raise DomainError(f"the exponential scheme needs a positive state, got {x}")
    if not h > 0:
        raise DomainError(f"step must be positive, got {h}")
    value, capped = _kernels.exp_em_increment(float(x), float(h), float(dW), model.kernel_params)
    return value, bool(capped)


def interpolate_exp_em(model: ModelSpec, x_eta: float, s: float, dW_partial: float) -> float:
    """Continuous-time scheme ``s`` after the node, given ``W_t - W_eta``.

    At ``s = h`` this is the grid step itself (same compiled expression).
    """
    if not s > 0:
        raise DomainError(f"elapsed time must be positive, got {s}")
    return exp_em_step(model, x_eta, s, dW_partial)


@dataclass(frozen=True)
class Trajectory:
    """One simulated path on ``grid``.

    ``stop_index`` is the first node whose value exceeds the stopping
    threshold (``None`` if never); ``breach_index`` the first non-positive
    node of an Euler-type path.  The arrays are read-only.
    """

    grid: TimeGrid
    values: np.ndarray
    scheme_tag: str
    stop_index: int | None = None
    overflow_flag: bool = False
    breach_index: int | None = None

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


@dataclass
class TrajectoryBatch:
    """Many paths on one grid; ``stop_index == -1`` means "never stopped"."""

    grid: TimeGrid
    values: np.ndarray
    scheme_tag: str
    stop_index: np.ndarray
    overflow: np.ndarray
    breach_index: np.ndarray = field(default=None)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> Trajectory:
        stop = int(self.stop_index[i])
        breach = None if self.breach_index is None else int(self.breach_index[i])
        return Trajectory(
            self.grid,
            self.values[i].copy(),
            self.scheme_tag,
            None if stop < 0 else stop,
            bool(self.overflow[i]),
            None if breach is None or breach < 0 else breach,
        )

    @classmethod
    def from_trajectories(cls, trajectories) -> "TrajectoryBatch":
        trajectories = list(trajectories)
        if not trajectories:
            raise DomainError("need at least one trajectory")
        grid = trajectories[0].grid
        return cls(
            grid,
            np.vstack([t.values for t in trajectories]),
            trajectories[0].scheme_tag,
            np.array([-1 if t.stop_index is None else t.stop_index for t in trajectories]),
            np.array([t.overflow_flag for t in trajectories]),
        )


def _stop_from_values(values: np.ndarray, threshold: float) -> np.ndarray:
    above = values > threshold
    first = np.argmax(above, axis=1)
    return np.where(above.any(axis=1), first, -1)


def simulate_batch(
    model: ModelSpec,
    grid: TimeGrid,
    increments: np.ndarray,
    scheme_tag: str = "exp-em",
    stride: int = 1,
) -> TrajectoryBatch:
    """Simulate one path per row of ``increments`` (shape ``(n_paths, n_steps)``).

    With ``stride > 1`` only every ``stride``-th node is stored (the stop
    index is still resolved on the full grid, in units of the full grid).
    """
    dW = np.ascontiguousarray(increments, dtype=np.float64)
    if dW.ndim != 2 or dW.shape[1] != grid.n_steps:
        raise DomainError(f"increments must have shape (n, {grid.n_steps})")
    if grid.n_steps % stride:
        raise DomainError("stride must divide the number of steps")
    n = dW.shape[0]
    h = grid.dt
    thr = stopping_threshold(min(h, 1.0), model.beta)
    stored_grid = grid if stride == 1 else TimeGrid(grid.T, grid.n_steps // stride,
                                                   None if grid.q is None else grid.q - int(math.log2(stride)))
    if scheme_tag == "exp-em":
        out = np.empty((n, grid.n_steps // stride + 1))
        stop = np.empty(n, dtype=np.int64)
        failed = np.empty(n, dtype=np.bool_)
        _kernels.exp_em_paths(model.x0, dW, h, thr, stride, model.kernel_params, out, stop, failed)
        return TrajectoryBatch(stored_grid, out, scheme_tag, stop, failed)
    if scheme_tag in ("euler", "tamed"):
        out = np.empty((n, grid.n_steps + 1))
        breach = np.empty(n, dtype=np.int64)
        failed = np.empty(n, dtype=np.bool_)
        _kernels.euler_paths(model.x0, dW, h, scheme_tag == "tamed", model.kernel_params,
                             out, breach, failed)
        stop = _stop_from_values(np.nan_to_num(out, nan=-np.inf), thr)
        return TrajectoryBatch(grid, out[:, ::stride].copy(), scheme_tag, stop, failed, breach)
    W = np.zeros((n, grid.n_steps + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    if scheme_tag == "exact-gbm":
        if model.kind != "gbm":
            raise UnsupportedModelError("exact-gbm needs a gbm model")
        out = exact_gbm_values(model.x0, model.B1, model.Sigma, grid.times, W)
    elif scheme_tag == "exact-lv":
        if model.kind != "lotka-volterra" or model.x0 != 1:
            raise UnsupportedModelError("exact-lv needs a lotka-volterra model started at 1")
        out = exact_lotka_volterra_values(model.B1, model.B2, model.Sigma, grid.times, W)
    else:
        raise DomainError(f"unknown scheme {scheme_tag!r}; expected one of {SCHEMES}")
    stop = _stop_from_values(out, thr)
    failed = ~np.all(np.isfinite(out), axis=1)
    return TrajectoryBatch(stored_grid, out[:, ::stride].copy(), scheme_tag, stop, failed)


def simulate(model: ModelSpec, grid: TimeGrid, path: BrownianPath, scheme_tag: str = "exp-em") -> Trajectory:
    """Simulate ``model`` along one Brownian path with the named scheme."""
    if path.grid != grid:
        raise DomainError("Brownian path lives on a different grid")
    return simulate_batch(model, grid, path.increments[None, :], scheme_tag)[0]


def exact_gbm_values(x0, B1, Sigma, times, W):
    return x0 * np.exp((B1 - 0.5 * Sigma**2) * times + Sigma * W)


def exact_lotka_volterra_values(B1, B2, Sigma, times, W):
    """Closed-form stochastic logistic path from ``X_0 = 1``; time integral by trapezoid rule."""
    G = np.exp((B1 - 0.5 * Sigma**2) * times + Sigma * W)
    dt = np.diff(times)
    integral = np.zeros_like(G)
    np.cumsum(0.5 * (G[..., 1:] + G[..., :-1]) * dt, axis=-1, out=integral[..., 1:])
    return G / (1.0 + B2 * integral)


def exact_gbm(model: ModelSpec, path: BrownianPath) -> Trajectory:
    return simulate(model, path.grid, path, "exact-gbm")


def exact_lotka_volterra(B1: float, B2: float, Sigma: float, path: BrownianPath) -> Trajectory:
    if B2 < 0:
        raise DomainError(f"B2 must be non-negative, got {B2}")
    values = exact_lotka_volterra_values(B1, B2, Sigma, path.grid.times, path.W)
    return Trajectory(path.grid, values, "exact-lv")


def write_trajectory_csv(trajectory: Trajectory, target) -> None:
    """Two-column ``t,x`` text dump."""
    lines = ["t,x"]
    lines += [f"{t!r},{x!r}" for t, x in zip(trajectory.times.tolist(), trajectory.values.tolist())]
    Path(target).write_text("\n".join(lines) + "\n")
