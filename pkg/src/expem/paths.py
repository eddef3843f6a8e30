"""Dyadic time grids and reproducible, coarsenable Brownian paths.

Every trajectory owns an independent random stream keyed by
``(master_seed, trajectory_index)``.  The key feeds numpy's Philox
counter-based bit generator, so trajectory ``i`` can be regenerated on its
own, on any thread, without drawing trajectories ``0 .. i-1`` first.

Uniforms are converted to standard normals with Wichura's AS241 rational
approximation (``PPND16``) rather than numpy's ziggurat, which keeps the
normal transform a fixed, inspectable formula.

Coarsening sums neighbouring increments pairwise, one level at a time.
That fixed summation tree makes ``coarsen(coarsen(p, 1), 1)`` and
``coarsen(p, 2)`` bit-identical, and makes the terminal value ``W_T``
(taken as the full pairwise reduction) independent of the level.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .exceptions import DomainError

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "make_grid",
    "uniform_grid",
    "normal_ppf",
    "sample_increments",
    "sample_brownian",
    "coarsen",
    "coarsen_increments",
    "pairwise_sum",
    "dump_increments",
    "load_increments",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n * dt`` on ``[0, T]`` with ``n_steps`` steps.

    Dyadic grids (built by :func:`make_grid`) carry their level ``q`` with
    ``n_steps = 2**q``; grids built from an arbitrary step (used for long
    stability runs) have ``q = None`` and cannot be coarsened.
    """

    T: float
    n_steps: int
    q: int | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon T must be positive, got {self.T}")
        if self.n_steps < 1:
            raise DomainError(f"need at least one step, got {self.n_steps}")

    @property
    def dt(self) -> float:
        if self.q is not None:
            return math.ldexp(self.T, -self.q)
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # multiplication, not accumulation: times[-1] == T exactly on dyadic grids
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.dt

    def eta(self, t):
        """Last grid node at or before ``t``."""
        return self.dt * np.floor(np.asarray(t, dtype=float) / self.dt)

    def delta(self, t):
        """Time elapsed since the last grid node."""
        t = np.asarray(t, dtype=float)
        return t - self.eta(t)


def make_grid(T: float, q: int) -> TimeGrid:
    """Dyadic grid on ``[0, T]`` with ``2**q`` steps of length ``T * 2**-q``."""
    if q < 0 or int(q) != q:
        raise DomainError(f"grid level must be a non-negative integer, got {q}")
    return TimeGrid(float(T), 2 ** int(q), int(q))


def uniform_grid(T: float, dt: float) -> TimeGrid:
    """Grid with step ``dt``; ``T / dt`` must be (close to) an integer."""
    n = int(round(T / dt))
    if n < 1 or not math.isclose(n * dt, T, rel_tol=1e-9):
        raise DomainError(f"T={T} is not an integer multiple of dt={dt}")
    return TimeGrid(float(T), n, None)


@dataclass(frozen=True)
class BrownianPath:
    """Brownian increments ``W_{t_{n+1}} - W_{t_n}`` on a grid (``W_0 = 0``)."""

    grid: TimeGrid
    increments: np.ndarray
    stream_id: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        if self.increments.shape != (self.grid.n_steps,):
            raise DomainError(
                f"expected {self.grid.n_steps} increments, got shape {self.increments.shape}"
            )

    @property
    def W(self) -> np.ndarray:
        """Path values at the grid nodes (left-to-right cumulative sum)."""
        out = np.empty(self.grid.n_steps + 1)
        out[0] = 0.0
        np.cumsum(self.increments, out=out[1:])
        return out

    @property
    def terminal(self) -> float:
        """``W_T`` by pairwise reduction; invariant under :func:`coarsen`."""
        return float(pairwise_sum(self.increments))


# --- inverse normal CDF (Wichura 1988, AS241 PPND16) -------------------------

_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


@numba.njit(cache=True, nogil=True)
def _horner(c, r):
    acc = c[7]
    for k in range(6, -1, -1):
        acc = acc * r + c[k]
    return acc


@numba.njit(cache=True, nogil=True)
def _ppnd16(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        x = _horner(_C, r) / _horner(_D, r)
    else:
        r -= 5.0
        x = _horner(_E, r) / _horner(_F, r)
    return -x if q < 0.0 else x


@numba.njit(cache=True, nogil=True)
def _ppnd16_array(u, out):
    flat_u = u.ravel()
    flat_o = out.ravel()
    for i in range(flat_u.size):
        flat_o[i] = _ppnd16(flat_u[i])


@numba.njit(cache=True, nogil=True)
def _raw_to_normal(raw, scale, out):
    # 53 high bits, shifted by half an ulp: u lies strictly inside (0, 1)
    flat_r = raw.ravel()
    flat_o = out.ravel()
    for i in range(flat_r.size):
        u = ((flat_r[i] >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16
        flat_o[i] = _ppnd16(u) * scale


def normal_ppf(p) -> np.ndarray:
    """Standard normal quantile function, vectorised over ``p`` in (0, 1)."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    out = np.empty_like(p)
    _ppnd16_array(p, out)
    return out


def sample_increments(seed: int, indices, n_steps: int, dt: float) -> np.ndarray:
    """Increments for several trajectories, shape ``(len(indices), n_steps)``.

    Row ``k`` depends only on ``(seed, indices[k])``.
    """
    indices = np.asarray(indices, dtype=np.uint64).ravel()
    raw = np.empty((indices.size, n_steps), dtype=np.uint64)
    for k, idx in enumerate(indices):
        bitgen = np.random.Philox(key=np.array([seed, idx], dtype=np.uint64))
        raw[k] = bitgen.random_raw(n_steps)
    out = np.empty(raw.shape, dtype=np.float64)
    _raw_to_normal(raw, math.sqrt(dt), out)
    return out


def sample_brownian(grid: TimeGrid, stream_id: tuple[int, int]) -> BrownianPath:
    """Draw the Brownian increments of one trajectory on ``grid``."""
    seed, index = (int(v) for v in stream_id)
    if seed < 0 or index < 0:
        raise DomainError("stream identifiers must be non-negative 64-bit integers")
    inc = sample_increments(seed, [index], grid.n_steps, grid.dt)[0]
    return BrownianPath(grid, inc, (seed, index))


def coarsen_increments(increments: np.ndarray, levels: int) -> np.ndarray:
    """Sum blocks of ``2**levels`` consecutive increments along the last axis.

    The sum is built as ``levels`` rounds of neighbour-pair additions.
    """
    out = np.asarray(increments, dtype=np.float64)
    if levels < 0:
        raise DomainError(f"levels must be non-negative, got {levels}")
    n = out.shape[-1]
    if n % (1 << levels):
        raise DomainError(f"{n} increments cannot be coarsened by {levels} levels")
    for _ in range(levels):
        out = out[..., 0::2] + out[..., 1::2]
    return out


def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Fixed-shape pairwise reduction along the last axis.

    Odd lengths carry the trailing element up one level unchanged, so the
    result depends only on the array length, never on scheduling.
    """
    out = np.asarray(values, dtype=np.float64)
    if out.shape[-1] == 0:
        return np.zeros(out.shape[:-1])
    while out.shape[-1] > 1:
        n = out.shape[-1]
        head = out[..., 0 : n - (n % 2) : 2] + out[..., 1 : n - (n % 2) : 2]
        if n % 2:
            head = np.concatenate([head, out[..., -1:]], axis=-1)
        out = head
    return out[..., 0]


def coarsen(path: BrownianPath, levels: int) -> BrownianPath:
    """Brownian path on the grid ``levels`` dyadic levels coarser."""
    q = path.grid.q
    if q is None:
        raise DomainError("only dyadic grids can be coarsened")
    if levels < 0 or levels > q:
        raise DomainError(f"cannot coarsen a level-{q} path by {levels} levels")
    if levels == 0:
        return path
    grid = make_grid(path.grid.T, q - levels)
    return BrownianPath(grid, coarsen_increments(path.increments, levels), path.stream_id)


# --- binary dump ---------------------------------------------------------------

_MAGIC = b"EXPW"
_HEADER = struct.Struct("<4sIdqQQQ")  # magic, version, T, q (-1: none), n, seed, index


def dump_increments(path: BrownianPath, target) -> None:
    """Write increments as little-endian float64 after a fixed header."""
    q = -1 if path.grid.q is None else path.grid.q
    seed, index = path.stream_id
    header = _HEADER.pack(_MAGIC, 1, path.grid.T, q, path.grid.n_steps, seed, index)
    payload = np.ascontiguousarray(path.increments, dtype="<f8").tobytes()
    Path(target).write_bytes(header + payload)


def load_increments(source) -> BrownianPath:
    blob = Path(source).read_bytes()
    magic, version, T, q, n, seed, index = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != 1:
        raise DomainError("not an increment dump")
    inc = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=n).astype(np.float64)
    grid = make_grid(T, q) if q >= 0 else TimeGrid(T, n, None)
    return BrownianPath(grid, inc, (seed, index))
