"""Stationary level of the prototype SDE and the scheme's stability band.

For ``dX = (b0 + B1 X - B2 X^beta) dt + Sigma X^alpha dW`` with
``beta = 2 alpha - 1`` the log-drift

    phi(x) = b0/x + B1 - (B2 + Sigma^2/2) x^(2(alpha-1))

has a unique positive root ``xi*``; paths keep returning to it.  The
scheme's own equilibrium band is bracketed by the roots of

    phi^dt(x) = phi(x) - (b0/x) B1 dt          (lower root, <= xi*)
    phi_dt(x) = phi(x) + b0 (Sigma^2 + B2) x^(2 alpha - 3) dt   (upper root, >= xi*)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .exceptions import DomainError, PreconditionError, UnsupportedModelError
from .model import ModelSpec
from .paths import sample_increments, uniform_grid
from .scheme import Trajectory, simulate_batch, write_trajectory_csv

__all__ = [
    "StabilityReport",
    "phi",
    "stationary_point",
    "scheme_stationary_bounds",
    "count_crossings",
    "band_occupancy",
    "stability_report",
]

XTOL = 1e-12


def _require_prototype(model: ModelSpec) -> None:
    if not model.is_prototype:
        raise UnsupportedModelError(
            f"stability analysis needs a polynomial model with beta = 2 alpha - 1, got {model.kind}"
        )
    if not model.B2 > 0:
        raise UnsupportedModelError(f"stability analysis needs B2 > 0, got {model.B2}")


def phi(model: ModelSpec, x, dt: float = 0.0, branch: str = "exact"):
    """Log-drift ``phi`` (``branch="exact"``) or its scheme variants ``"lower"`` / ``"upper"``."""
    x = np.asarray(x, dtype=float)
    a = model.alpha
    base = model.b0 / x + model.B1 - (model.B2 + 0.5 * model.Sigma**2) * x ** (2 * (a - 1))
    if branch == "exact":
        return base
    if branch == "lower":
        return base - model.b0 / x * model.B1 * dt
    if branch == "upper":
        return base + model.b0 * (model.Sigma**2 + model.B2) * x ** (2 * a - 3) * dt
    raise DomainError(f"unknown branch {branch!r}")


def _root(f, lo: float, hi: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return _bisect_root(f, lo, hi)


def _bisect_root(f, lo: float, hi: float) -> float:
    # grow the upper end until the sign flips (phi -> -inf at infinity)
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("no sign change found while bracketing the root")
    if f(lo) <= 0:
        raise DomainError("lower bracket end does not have a positive log-drift")
    return float(bisect(f, lo, hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=2000))


def stationary_point(model: ModelSpec) -> float:
    """Unique positive root ``xi*`` of ``phi`` (bisection, absolute tolerance 1e-12)."""
    _require_prototype(model)
    if model.b0 == 0 and not model.B1 > 0:
        raise DomainError("phi has no positive root when b0 = 0 and B1 <= 0")
    return _root(lambda x: float(phi(model, x)), 1e-8, 1.0)


def scheme_stationary_bounds(model: ModelSpec, dt: float) -> tuple[float, float]:
    """Roots ``(xi^dt, xi_dt)`` of the lower and upper scheme log-drifts.

    They bracket ``xi*`` and coincide with it when ``b0 = 0``.
    """
    _require_prototype(model)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if model.B1 > 0 and dt > 1.0 / model.B1:
        raise PreconditionError(f"dt={dt} exceeds 1/B1={1.0 / model.B1}")
    xi = stationary_point(model)
    if model.b0 == 0:
        return xi, xi
    lower = xi
    if model.B1 != 0:
        lower = _root(lambda x: float(phi(model, x, dt, "lower")), 1e-8, xi)
    upper = _root(lambda x: float(phi(model, x, dt, "upper")), xi, max(2.0 * xi, 1.0))
    # both roots are within the bisection tolerance of the true ordering
    return min(lower, xi), max(upper, xi)


def count_crossings(trajectory, level: float) -> int:
    """Number of steps whose endpoints lie strictly on opposite sides of ``level``."""
    if not level > 0:
        raise DomainError(f"level must be positive, got {level}")
    v = np.asarray(getattr(trajectory, "values", trajectory), dtype=float) - level
    return int(np.count_nonzero(v[:-1] * v[1:] < 0))


def band_occupancy(trajectory, center: float, half_width: float, t_start: float = 0.0) -> float:
    """Fraction of grid nodes with ``t >= t_start`` lying within ``center +- half_width``."""
    if not half_width > 0:
        raise DomainError(f"half_width must be positive, got {half_width}")
    times = trajectory.grid.times
    v = np.asarray(trajectory.values, dtype=float)[times >= t_start]
    if v.size == 0:
        raise DomainError(f"no grid nodes at or after t={t_start}")
    return float(np.count_nonzero(np.abs(v - center) <= half_width)) / v.size


@dataclass(frozen=True)
class StabilityReport:
    xi_star: float
    xi_lower_root: float
    xi_upper_root: float
    crossings: int
    band_occupancy: float
    T_long: float
    dt: float
    band: float = 0.15
    window_start: float = 0.0
    seed: int = 0
    empty_run: bool = False

    def to_text(self) -> str:
        """Flat ``key = value`` block, one field per line."""
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "StabilityReport":
        fields = {}
        for line in text.splitlines():
            if line.strip():
                k, v = (s.strip() for s in line.split("=", 1))
                if k in ("crossings", "seed"):
                    fields[k] = int(v)
                elif k == "empty_run":
                    fields[k] = v == "True"
                else:
                    fields[k] = float(v)
        return cls(**fields)


def stability_report(
    model: ModelSpec,
    T: float = 50.0,
    dt: float = 1e-3,
    band: float = 0.15,
    window_start: float | None = None,
    seed: int = 0,
    trajectory_csv=None,
) -> tuple[StabilityReport, Trajectory]:
    """Run one long scheme path and summarise how it settles around ``xi*``.

    ``window_start`` (default ``T / 2``) is where the band-occupancy window
    opens.  ``T = 0`` yields an empty run: no crossings, occupancy 0 and
    ``empty_run`` set; the returned trajectory is then ``None``.
    """
    xi = stationary_point(model)
    lower, upper = scheme_stationary_bounds(model, dt)
    if T == 0:
        return StabilityReport(xi, lower, upper, 0, 0.0, 0.0, float(dt), float(band), 0.0,
                               int(seed), empty_run=True), None
    if T < 0:
        raise DomainError(f"T must be non-negative, got {T}")
    grid = uniform_grid(T, dt)
    dW = sample_increments(seed, [0], grid.n_steps, grid.dt)
    traj = simulate_batch(model, grid, dW)[0]
    start = 0.5 * T if window_start is None else float(window_start)
    report = StabilityReport(
        xi_star=xi, xi_lower_root=lower, xi_upper_root=upper,
        crossings=count_crossings(traj, xi),
        band_occupancy=band_occupancy(traj, xi, band, start),
        T_long=float(T), dt=float(dt), band=float(band), window_start=start, seed=int(seed),
    )
    if trajectory_csv is not None:
        write_trajectory_csv(traj, Path(trajectory_csv))
    return report, traj
