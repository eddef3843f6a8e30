"""Monte Carlo estimators: strong errors, convergence rates, moments, sojourn times.

Strong errors follow the coupled fine/coarse protocol: every trajectory
draws its Brownian increments at the reference level ``q_ref``, the
reference path is run on that grid, and the same increments are summed
down to each coarse level ``q``.  Errors are measured at the coarse grid
nodes.  The stopped variant restricts the supremum to nodes up to the
coarse path's threshold exit.

All per-trajectory statistics are stored by trajectory index and reduced
with :func:`expem.paths.pairwise_sum`, so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import json
import math
import warnings as _warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import DomainError, UnsupportedModelError
from .model import ModelSpec
from .paths import coarsen_increments, make_grid, pairwise_sum, sample_increments
from .scheme import Trajectory, TrajectoryBatch, simulate_batch

__all__ = [
    "ErrorEstimate",
    "ConvergenceTable",
    "CSV_COLUMNS",
    "convergence_table",
    "strong_error",
    "fit_rate",
    "empirical_moment",
    "exponential_moment",
    "sojourn_time",
    "mean_sojourn_time",
    "MomentRow",
    "moment_sweep",
    "local_error",
    "pathwise_relative_error",
    "jackknife",
]

CSV_COLUMNS = ("q", "dt", "l2_sup", "l2_terminal", "l2_sup_stopped", "variance",
               "n_traj", "n_overflow", "n_stopped")

N_JACKKNIFE_GROUPS = 20
OVERFLOW_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class ErrorEstimate:
    """Strong-error statistics at one coarse level.

    ``l2_*`` fields hold ``(mean |Y|^{2p})^{1/(2p)}`` for the sup over coarse
    nodes, the terminal node, and the sup up to the stopping node.
    ``variance`` / ``variance_stopped`` are sample variances of the
    per-trajectory squared sup error.  ``*_se`` are jackknife standard
    errors over contiguous trajectory groups.
    """

    q: int
    dt: float
    l2_sup: float
    l2_terminal: float
    l2_sup_stopped: float
    variance: float
    n_traj: int
    n_overflow: int
    n_stopped: int
    variance_stopped: float = 0.0
    l2_sup_se: float = math.nan
    l2_terminal_se: float = math.nan
    l2_sup_stopped_se: float = math.nan
    p: int = 1
    warnings: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.warnings

    def as_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = list(self.warnings)
        return d


@dataclass
class ConvergenceTable:
    """Error rows over a range of levels plus the fitted log-log rate."""

    rows: list[ErrorEstimate]
    fitted_rate: float = math.nan
    fitted_intercept: float = math.nan
    meta: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.q)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        """Table-style CSV: integers verbatim, reals as ``%.2e`` (full precision lives in JSON)."""
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            cells = []
            for c in CSV_COLUMNS:
                v = getattr(r, c)
                cells.append(str(v) if isinstance(v, int) else "%.2e" % v)
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write_csv(self, target) -> None:
        Path(target).write_text(self.to_csv())

    def as_dict(self) -> dict:
        return {
            "rows": [r.as_dict() for r in self.rows],
            "fitted_rate": self.fitted_rate,
            "fitted_intercept": self.fitted_intercept,
            "meta": self.meta,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceTable":
        d = json.loads(text)
        rows = []
        for r in d["rows"]:
            r = dict(r)
            r["warnings"] = tuple(r.get("warnings", ()))
            rows.append(ErrorEstimate(**r))
        return cls(rows, d["fitted_rate"], d["fitted_intercept"], d.get("meta", {}),
                   list(d.get("warnings", [])))


# --- deterministic reductions ------------------------------------------------------


def _group_bounds(n: int, n_groups: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, n_groups + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def jackknife(values: np.ndarray, mask: np.ndarray, transform, n_groups: int = N_JACKKNIFE_GROUPS):
    """Point estimate ``transform(mean)`` and its delete-one-group jackknife s.e.

    Groups are contiguous blocks of trajectory indices; sums are pairwise.
    Returns ``(estimate, se)``; ``se`` is NaN with fewer than ``n_groups`` samples.
    """
    v = np.where(mask, values, 0.0)
    total = float(pairwise_sum(v))
    count = int(mask.sum())
    est = transform(total / count) if count else math.nan
    if values.size < n_groups:
        return est, math.nan
    sums, counts = [], []
    for a, b in _group_bounds(values.size, n_groups):
        sums.append(float(pairwise_sum(v[a:b])))
        counts.append(int(mask[a:b].sum()))
    loo = []
    for s, c in zip(sums, counts):
        rest = count - c
        if rest <= 0:
            return est, math.nan
        loo.append(transform((total - s) / rest))
    loo = np.array(loo)
    se = math.sqrt((n_groups - 1) / n_groups * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se


def _sample_variance(values: np.ndarray, mask: np.ndarray) -> float:
    k = int(mask.sum())
    if k < 2:
        return 0.0
    v = np.where(mask, values, 0.0)
    m = float(pairwise_sum(v)) / k
    return float(pairwise_sum(np.where(mask, (values - m) ** 2, 0.0))) / (k - 1)


# --- coupled simulation -------------------------------------------------------------


_EXACT_TAGS = {"gbm": "exact-gbm", "lotka-volterra": "exact-lv"}


def _batch_errors(model, q_list, q_ref, T, seed, start, stop, reference):
    """Per-trajectory squared-free errors for trajectories ``start..stop-1``.

    Returns arrays of shape ``(len(q_list), stop - start)``: sup, terminal,
    stopped sup of ``|X_ref - X_q|``, a failure mask and a stopped mask.
    """
    fine = make_grid(T, q_ref)
    idx = np.arange(start, stop, dtype=np.uint64)
    dW = sample_increments(seed, idx, fine.n_steps, fine.dt)
    q_hi = max(q_list)
    stride = 1 << (q_ref - q_hi)
    tag = "exp-em" if reference == "scheme" else _EXACT_TAGS[model.kind]
    ref = simulate_batch(model, fine, dW, tag, stride)
    n = stop - start
    shape = (len(q_list), n)
    sup, term, sup_st = np.empty(shape), np.empty(shape), np.empty(shape)
    bad = np.empty(shape, dtype=bool)
    stopped = np.empty(shape, dtype=bool)
    # descend one level at a time: pairwise coarsening makes this identical
    # to coarsening straight from q_ref
    level_dW = coarsen_increments(dW, q_ref - q_hi)
    del dW
    level = q_hi
    for k in sorted(range(len(q_list)), key=lambda j: -q_list[j]):
        q = q_list[k]
        level_dW = coarsen_increments(level_dW, level - q)
        level = q
        coarse = simulate_batch(model, make_grid(T, q), level_dW)
        diff = np.abs(ref.values[:, :: 1 << (q_hi - q)] - coarse.values)
        sup[k] = diff.max(axis=1)
        term[k] = diff[:, -1]
        st = coarse.stop_index
        nodes = np.arange(diff.shape[1])
        window = (st[:, None] < 0) | (nodes[None, :] <= st[:, None])
        sup_st[k] = np.where(window, diff, 0.0).max(axis=1)
        bad[k] = ref.overflow | coarse.overflow | ~np.isfinite(sup[k])
        stopped[k] = st >= 0
    return sup, term, sup_st, bad, stopped


def _run_batches(worker, n_traj, batch_size, threads):
    bounds = [(a, min(a + batch_size, n_traj)) for a in range(0, n_traj, batch_size)]
    if threads <= 1 or len(bounds) == 1:
        return [worker(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: worker(*ab), bounds))


def _estimate(q, dt, p, sup, term, sup_st, bad, stopped) -> ErrorEstimate:
    n = sup.size
    ok = ~bad
    power = 2 * p
    root = lambda m: m ** (1.0 / power)  # noqa: E731
    l2_sup, se_sup = jackknife(np.where(ok, sup, 0.0) ** power, ok, root)
    l2_term, se_term = jackknife(np.where(ok, term, 0.0) ** power, ok, root)
    l2_st, se_st = jackknife(np.where(ok, sup_st, 0.0) ** power, ok, root)
    n_over = int(bad.sum())
    warn = []
    if n_over > OVERFLOW_WARN_FRACTION * n:
        warn.append(f"{n_over} of {n} trajectory pairs overflowed (> 1%)")
    if n_over == n:
        warn.append("no usable trajectory pairs")
    return ErrorEstimate(
        q=int(q), dt=float(dt), l2_sup=l2_sup, l2_terminal=l2_term, l2_sup_stopped=l2_st,
        variance=_sample_variance(np.where(ok, sup, 0.0) ** 2, ok), n_traj=int(n),
        n_overflow=n_over, n_stopped=int(stopped.sum()),
        variance_stopped=_sample_variance(np.where(ok, sup_st, 0.0) ** 2, ok),
        l2_sup_se=se_sup, l2_terminal_se=se_term, l2_sup_stopped_se=se_st, p=int(p),
        warnings=tuple(warn),
    )


def convergence_table(
    model: ModelSpec,
    q_list,
    q_ref: int,
    n_traj: int,
    p: int = 1,
    seed: int = 0,
    threads: int = 1,
    T: float = 1.0,
    reference: str = "scheme",
    batch_size: int = 128,
    fit: bool = True,
) -> ConvergenceTable:
    """Strong errors of the exponential scheme at every level in ``q_list``.

    Parameters
    ----------
    model : ModelSpec
    q_list : iterable of int
        Coarse levels (``dt = T * 2**-q``).
    q_ref : int
        Reference level; must be at least ``max(q_list)``.
    n_traj : int
        Number of coupled trajectory pairs.
    p : int
        Error norm ``L^{2p}``.
    seed : int
        Master seed; trajectory ``i`` uses stream ``(seed, i)``.
    threads : int
        Worker threads.  The result is bit-identical for any value.
    reference : {"scheme", "exact"}
        ``"scheme"`` uses the exponential scheme on the reference grid;
        ``"exact"`` the closed-form solution (gbm and lotka-volterra only).
    batch_size : int
        Trajectories per work unit (bounds memory use).
    fit : bool
        Fit the log-log rate of ``l2_sup``.
    """
    q_list = sorted({int(q) for q in q_list})
    if n_traj <= 0:
        raise DomainError(f"n_traj must be positive, got {n_traj}")
    if not q_list or q_list[0] < 0:
        raise DomainError("q_list must hold non-negative levels")
    if q_ref < q_list[-1]:
        raise DomainError(f"q_ref={q_ref} is below the finest coarse level {q_list[-1]}")
    if p < 1 or int(p) != p:
        raise DomainError(f"p must be a positive integer, got {p}")
    if reference not in ("scheme", "exact"):
        raise DomainError(f"reference must be 'scheme' or 'exact', got {reference!r}")
    if reference == "exact" and model.kind not in _EXACT_TAGS:
        raise UnsupportedModelError(f"no closed-form solution for kind {model.kind!r}")
    if threads < 1:
        raise DomainError(f"threads must be at least 1, got {threads}")

    def worker(a, b):
        return _batch_errors(model, q_list, q_ref, T, seed, a, b, reference)

    parts = _run_batches(worker, n_traj, batch_size, threads)
    sup, term, sup_st, bad, stopped = (np.concatenate([pt[j] for pt in parts], axis=1)
                                       for j in range(5))
    rows = [
        _estimate(q, math.ldexp(T, -q), p, sup[k], term[k], sup_st[k], bad[k], stopped[k])
        for k, q in enumerate(q_list)
    ]
    table = ConvergenceTable(
        rows,
        meta={"model": model.name or model.kind, "q_ref": int(q_ref), "seed": int(seed),
              "T": float(T), "p": int(p), "reference": reference},
    )
    for r in rows:
        table.warnings.extend(f"q={r.q}: {w}" for w in r.warnings)
    if fit and len(rows) >= 2:
        try:
            table.fitted_rate, table.fitted_intercept = fit_rate(table)
        except DomainError as exc:
            table.warnings.append(str(exc))
    return table


def strong_error(model: ModelSpec, q: int, q_ref: int, n_traj: int, p: int = 1, seed: int = 0,
                 threads: int = 1, T: float = 1.0) -> ErrorEstimate:
    """Coupled strong error at a single level (see :func:`convergence_table`)."""
    if q_ref < q:
        raise DomainError(f"q_ref={q_ref} must not be below q={q}")
    return convergence_table(model, [q], q_ref, n_traj, p, seed, threads, T, fit=False).rows[0]


def fit_rate(table, column: str = "l2_sup") -> tuple[float, float]:
    """Least-squares line through ``(-q, log2 error)``: returns ``(slope, intercept)``.

    Rows with a zero or non-finite error are dropped with a warning.
    """
    rows = table.rows if isinstance(table, ConvergenceTable) else list(table)
    q = np.array([r.q for r in rows], dtype=float)
    err = np.array([getattr(r, column) for r in rows], dtype=float)
    usable = np.isfinite(err) & (err > 0)
    if not usable.all():
        _warnings.warn(f"fit_rate: dropping {int((~usable).sum())} row(s) with zero or "
                       "non-finite error", RuntimeWarning, stacklevel=2)
    if usable.sum() < 2:
        raise DomainError("need at least two rows with positive errors to fit a rate")
    slope, intercept = np.polyfit(-q[usable], np.log2(err[usable]), 1)
    return float(slope), float(intercept)


# --- moments ------------------------------------------------------------------------


def _as_batch(trajectories) -> TrajectoryBatch:
    if isinstance(trajectories, TrajectoryBatch):
        return trajectories
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    return TrajectoryBatch.from_trajectories(trajectories)


def _frozen_after_stop(values: np.ndarray, stop: np.ndarray) -> np.ndarray:
    out = values.copy()
    for i, s in enumerate(stop):
        if s >= 0:
            out[i, s + 1:] = out[i, s]
    return out


def _selected_powers(batch: TrajectoryBatch, power: float, stopped: bool) -> np.ndarray:
    values = np.asarray(batch.values, dtype=float)
    if stopped:
        values = _frozen_after_stop(values, batch.stop_index)
    if power < 0 and np.any(values <= 0):
        raise DomainError("negative moments need strictly positive values")
    return values**power


def empirical_moment(trajectories, power: float, at: str = "terminal", stopped: bool = False) -> float:
    """Monte Carlo mean of ``X**power``.

    ``at`` selects ``"terminal"`` (``X_T``), ``"sup"`` (``sup_n X_n**power``
    per path) or ``"per-node-max"`` (``max_n mean_i X_{i,n}**power``).
    With ``stopped=True`` each path is frozen at its stopping node.
    """
    batch = _as_batch(trajectories)
    if at not in ("terminal", "sup", "per-node-max"):
        raise DomainError(f"unknown selector {at!r}; expected terminal, sup or per-node-max")
    powered = _selected_powers(batch, power, stopped)
    n = len(powered)
    if at == "terminal":
        return float(pairwise_sum(powered[:, -1]) / n)
    if at == "sup":
        return float(pairwise_sum(powered.max(axis=1)) / n)
    return float(np.max(pairwise_sum(powered.T) / n))


def _log_exponential_integrals(batch: TrajectoryBatch, mu: float, exponent: float) -> np.ndarray:
    values = np.asarray(batch.values, dtype=float)
    n_nodes = values.shape[1]
    last = np.where(batch.stop_index < 0, n_nodes - 1, np.minimum(batch.stop_index, n_nodes - 1))
    used = np.arange(n_nodes - 1)[None, :] < last[:, None]
    integrand = np.where(used, values[:, :-1] ** exponent, 0.0)
    return mu * batch.grid.dt * pairwise_sum(integrand)


def _mean_exp(logs: np.ndarray) -> float:
    top = float(np.max(logs))
    log_mean = top + math.log(float(pairwise_sum(np.exp(logs - top))) / len(logs))
    return math.exp(log_mean) if log_mean < 709.0 else math.inf


def exponential_moment(trajectories, mu: float, exponent: float) -> float:
    """Mean of ``exp(mu * sum_{n < S} X_n**exponent * dt)`` with ``S = min(N, stop)``.

    The integrand is the value frozen at the left node, so the Riemann sum is
    the exact integral of the scheme's frozen coefficient.  The mean is
    formed in log space to delay overflow.
    """
    batch = _as_batch(trajectories)
    if batch.stop_index is None:
        raise DomainError("trajectories carry no stopping metadata")
    if mu == 0:
        return 1.0
    return _mean_exp(_log_exponential_integrals(batch, mu, exponent))


@dataclass(frozen=True)
class MomentRow:
    """Moment estimates at one level, with Monte Carlo standard errors."""

    q: int
    dt: float
    moment: float
    moment_se: float
    neg_moment_stopped: float
    neg_moment_stopped_se: float
    exp_moment_stopped: float
    n_traj: int
    n_stopped: int
    power: float
    neg_power: float
    mu: float


def moment_sweep(model: ModelSpec, q: int, n_traj: int, seed: int = 0, p: float = 1,
                 kappa: float = 2.0, mu: float = 0.5, exponent: float | None = None,
                 T: float = 1.0, batch_size: int = 256) -> MomentRow:
    """Terminal ``E[X_T^{2p}]``, stopped ``E[X_T^{-kappa}]`` and stopped exponential moment.

    Paths are simulated in batches at level ``q``; per-path values are
    reduced pairwise in trajectory order.  ``exponent`` defaults to ``beta - 1``.
    """
    if n_traj <= 0:
        raise DomainError(f"n_traj must be positive, got {n_traj}")
    exponent = model.beta - 1 if exponent is None else exponent
    grid = make_grid(T, q)
    pos, neg, logs, stops = [], [], [], 0
    for a in range(0, n_traj, batch_size):
        b = min(a + batch_size, n_traj)
        dW = sample_increments(seed, np.arange(a, b), grid.n_steps, grid.dt)
        batch = simulate_batch(model, grid, dW)
        pos.append(batch.values[:, -1] ** (2 * p))
        neg.append(_selected_powers(batch, -kappa, stopped=True)[:, -1])
        logs.append(_log_exponential_integrals(batch, mu, exponent))
        stops += int(np.count_nonzero(batch.stop_index >= 0))
    pos, neg, logs = np.concatenate(pos), np.concatenate(neg), np.concatenate(logs)
    ones = np.ones(n_traj, dtype=bool)

    def se(v):
        return math.sqrt(_sample_variance(v, ones) / n_traj) if n_traj > 1 else math.nan

    return MomentRow(
        q=int(q), dt=grid.dt,
        moment=float(pairwise_sum(pos)) / n_traj, moment_se=se(pos),
        neg_moment_stopped=float(pairwise_sum(neg)) / n_traj, neg_moment_stopped_se=se(neg),
        exp_moment_stopped=1.0 if mu == 0 else _mean_exp(logs),
        n_traj=int(n_traj), n_stopped=stops, power=float(2 * p), neg_power=float(-kappa),
        mu=float(mu),
    )


def sojourn_time(trajectory, center: float, radius: float) -> float:
    """Grid time spent in the open ball ``|x - center| < radius``.

    A step counts its full length when both of its endpoint values lie in
    the ball.
    """
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    values = np.asarray(trajectory.values, dtype=float)
    inside = np.abs(values - center) < radius
    both = inside[..., :-1] & inside[..., 1:]
    return float(np.count_nonzero(both)) * trajectory.grid.dt


def mean_sojourn_time(batch: TrajectoryBatch, center: float, radius: float) -> float:
    """Average of :func:`sojourn_time` over the rows of a batch."""
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    inside = np.abs(batch.values - center) < radius
    counts = np.count_nonzero(inside[:, :-1] & inside[:, 1:], axis=1).astype(float)
    return float(pairwise_sum(counts)) * batch.grid.dt / len(counts)


# --- local error and oracles --------------------------------------------------------


def local_error(model: ModelSpec, q: int, n_traj: int, seed: int = 0, T: float = 1.0,
                p: int = 1, batch_size: int = 512) -> float:
    """``max_n (mean |X_{t_n + dt/2} - X_{t_n}|^{2p})^{1/(2p)}`` for the scheme at level ``q``.

    Mid-step values come from the continuous-time interpolation driven by
    the first half of each step's Brownian increment (sampled at ``q + 1``).
    """
    if n_traj <= 0:
        raise DomainError(f"n_traj must be positive, got {n_traj}")
    grid = make_grid(T, q)
    fine = make_grid(T, q + 1)
    power = 2 * p
    sums = []
    for a in range(0, n_traj, batch_size):
        b = min(a + batch_size, n_traj)
        dW = sample_increments(seed, np.arange(a, b), fine.n_steps, fine.dt)
        batch = simulate_batch(model, grid, coarsen_increments(dW, 1))
        nodes = np.ascontiguousarray(batch.values[:, :-1])
        mid = np.empty_like(nodes)
        _kernels.exp_em_midpoints(nodes, np.ascontiguousarray(dW[:, 0::2]), 0.5 * grid.dt,
                                  model.kernel_params, mid)
        sums.append(pairwise_sum((np.abs(mid - nodes) ** power).T))
    per_node = np.sum(np.vstack(sums), axis=0) / n_traj
    return float(np.max(per_node) ** (1.0 / power))


def pathwise_relative_error(model: ModelSpec, q: int, n_traj: int, seed: int = 0,
                            T: float = 1.0) -> float:
    """Max relative gap between the scheme and the closed-form GBM on shared paths."""
    if model.kind != "gbm":
        raise UnsupportedModelError("pathwise oracle needs a gbm model")
    grid = make_grid(T, q)
    dW = sample_increments(seed, np.arange(n_traj), grid.n_steps, grid.dt)
    scheme = simulate_batch(model, grid, dW, "exp-em").values
    exact = simulate_batch(model, grid, dW, "exact-gbm").values
    return float(np.max(np.abs(scheme - exact) / exact))
