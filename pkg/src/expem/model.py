"""Coefficient families for positive SDEs ``dX = b(X) dt + sigma(X) dW``.

All families share the power-law diffusion ``sigma(x) = Sigma * x**alpha``
and a drift of the form ``b0 + B1*x - B2*x**beta`` (possibly modulated or
switching coefficients across discontinuity points).  Besides evaluating
``b`` and ``sigma``, this module checks the structural parameter conditions
under which the exponential Euler scheme has bounded moments and a strong
convergence rate, and computes the associated margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import DomainError

__all__ = [
    "KINDS",
    "ModelSpec",
    "HypothesisReport",
    "eval_coefficients",
    "kappa_strong",
    "kappa_weak",
    "check_moment_condition",
    "moment_bound_max_p",
    "delta_epsilon",
    "delta_epsilon_terms",
    "feller_nonexplosion",
    "check_hypotheses",
]

KINDS = (
    "polynomial",
    "piecewise-polynomial",
    "modulated-polynomial",
    "gbm",
    "lotka-volterra",
)


def _power(x, a):
    """``x**a`` for ``x >= 0`` with ``0**a = 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.power(np.where(x > 0, x, 1.0), a), 0.0)


@dataclass(frozen=True)
class ModelSpec:
    """Parametric drift/diffusion pair.

    ``b0, B1, B2`` are the control constants of the upper bound
    ``b(x) <= b0 + B1*x - B2*x**beta``.  For ``polynomial`` models they are
    also the exact drift coefficients.  ``piecewise-polynomial`` models
    instead read ``(B1, B2)`` from ``piece_B1[k], piece_B2[k]`` on the
    interval ``[chi_k, chi_{k+1})`` (with ``chi_0 = 0``).
    ``modulated-polynomial`` multiplies the superlinear term by
    ``(cos x + 2)**2``.  ``gbm`` is ``b = B1*x`` and ``lotka-volterra`` is
    ``b = x*(B1 - B2*x)``; both use linear diffusion (``alpha = 1``).
    """

    kind: str = "polynomial"
    b0: float = 0.0
    B1: float = 0.0
    B2: float = 0.0
    beta: float = 3.0
    alpha: float = 2.0
    Sigma: float = 1.0
    SigmaPrime: float | None = None
    growth_const: float | None = None
    onesided_const: float | None = None
    lipschitz_const: float | None = None
    discontinuities: tuple[float, ...] = ()
    piece_B1: tuple[float, ...] = ()
    piece_B2: tuple[float, ...] = ()
    zeta: float | None = None
    B1prime: float | None = None
    x0: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not self.beta > 1:
            raise DomainError(f"drift power beta must exceed 1, got {self.beta}")
        if not self.alpha >= 1:
            raise DomainError(f"diffusion power alpha must be >= 1, got {self.alpha}")
        if not self.Sigma > 0:
            raise DomainError(f"Sigma must be positive, got {self.Sigma}")
        if not self.b0 >= 0:
            raise DomainError(f"b(0) must be non-negative, got {self.b0}")
        if not self.x0 > 0:
            raise DomainError(f"initial condition must be positive, got {self.x0}")
        chi = tuple(float(c) for c in self.discontinuities)
        object.__setattr__(self, "discontinuities", chi)
        object.__setattr__(self, "piece_B1", tuple(float(v) for v in self.piece_B1))
        object.__setattr__(self, "piece_B2", tuple(float(v) for v in self.piece_B2))
        if any(c <= 0 for c in chi) or any(b <= a for a, b in zip(chi, chi[1:])):
            raise DomainError("discontinuities must be positive and strictly increasing")
        if self.kind == "piecewise-polynomial":
            if len(self.piece_B1) != len(chi) + 1 or len(self.piece_B2) != len(chi) + 1:
                raise DomainError("piecewise models need one (B1, B2) pair per interval")
        elif chi:
            raise DomainError(f"{self.kind} models cannot have discontinuities")
        if self.kind in ("gbm", "lotka-volterra"):
            if self.alpha != 1 or self.b0 != 0:
                raise DomainError(f"{self.kind} models need alpha = 1 and b0 = 0")
            if self.kind == "lotka-volterra" and self.beta != 2:
                raise DomainError("lotka-volterra models need beta = 2")

    # -- coefficients ----------------------------------------------------------

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gbm":
            return self.B1 * x
        if self.kind == "lotka-volterra":
            return x * (self.B1 - self.B2 * x)
        if self.kind == "piecewise-polynomial":
            k = np.searchsorted(np.asarray(self.discontinuities), x, side="right")
            B1 = np.asarray(self.piece_B1)[k]
            B2 = np.asarray(self.piece_B2)[k]
            return self.b0 + B1 * x - B2 * _power(x, self.beta)
        if self.kind == "modulated-polynomial":
            m = (np.cos(x) + 2.0) ** 2
            return self.b0 + self.B1 * x - self.B2 * m * _power(x, self.beta)
        return self.b0 + self.B1 * x - self.B2 * _power(x, self.beta)

    def diffusion(self, x):
        return self.Sigma * _power(x, self.alpha)

    # -- derived constants -----------------------------------------------------

    @property
    def sigma_prime(self) -> float:
        return self.Sigma if self.SigmaPrime is None else self.SigmaPrime

    @property
    def L_G(self) -> float:
        """Growth constant of ``|b(x) - b0| <= L_G (x**beta v x)``."""
        if self.growth_const is not None:
            return self.growth_const
        xs = _sample_points(self)
        ratio = np.abs(self.drift(xs) - self.b0) / np.maximum(_power(xs, self.beta), xs)
        return float(np.max(ratio))

    @property
    def min_gap(self) -> float:
        """Smallest gap between consecutive discontinuities, counting ``chi_0 = 0``."""
        if not self.discontinuities:
            return math.inf
        pts = (0.0,) + self.discontinuities
        return min(b - a for a, b in zip(pts, pts[1:]))

    @property
    def is_prototype(self) -> bool:
        """Polynomial drift with ``beta = 2*alpha - 1`` and power diffusion."""
        return self.kind == "polynomial" and math.isclose(self.beta, 2 * self.alpha - 1)

    @property
    def kernel_params(self):
        """Arguments describing this model to the compiled step kernels."""
        from ._kernels import KIND_MODULATED, KIND_PIECEWISE, KIND_POLY

        if self.kind == "piecewise-polynomial":
            code, B1, B2 = KIND_PIECEWISE, 0.0, 0.0
        elif self.kind == "modulated-polynomial":
            code, B1, B2 = KIND_MODULATED, self.B1, self.B2
        elif self.kind == "gbm":
            code, B1, B2 = KIND_POLY, self.B1, 0.0
        else:
            code, B1, B2 = KIND_POLY, self.B1, self.B2
        return (
            code, float(self.b0), float(B1), float(B2), float(self.beta),
            float(self.alpha), float(self.Sigma),
            np.asarray(self.discontinuities, dtype=np.float64),
            np.asarray(self.piece_B1 or (0.0,), dtype=np.float64),
            np.asarray(self.piece_B2 or (0.0,), dtype=np.float64),
        )

    def replace(self, **changes) -> "ModelSpec":
        fields_ = asdict(self)
        fields_.update(changes)
        return ModelSpec(**fields_)


def eval_coefficients(model: ModelSpec, x: float) -> tuple[float, float]:
    """Return ``(b(x), sigma(x))``; raises :class:`DomainError` for ``x < 0``."""
    if not x >= 0:
        raise DomainError(f"coefficients are defined on [0, inf), got x={x}")
    return float(model.drift(x)), float(model.diffusion(x))


# --- parameter margins --------------------------------------------------------

def kappa_strong(p: int, alpha: float, B2: float) -> float:
    """Margin of the sufficient condition for the order-1/2 unstopped rate.

    ``2*B2 + 1 - max(2p * max(4a - 3, 2a), 4(2p - 3/4))``; equals
    ``2*B2 - 9`` for ``p = 1, alpha = 2``.
    """
    penalty = max(2 * p * max(4 * alpha - 3, 2 * alpha), 4 * (2 * p - 0.75))
    return 2 * B2 + 1 - penalty


def kappa_weak(alpha: float, B2: float) -> float:
    """Margin of the (older) weak-convergence condition, ``2*B2 - 56/3`` at ``alpha = 2``."""
    penalty = max(alpha**2, 12 * alpha - 19, 8 * alpha - 10, 5 * alpha**2 / (2 * alpha - 1))
    return 2 * B2 - 6 * alpha - penalty


def _critical_power(model: ModelSpec) -> bool:
    return math.isclose(model.beta, 2 * model.alpha - 1, rel_tol=0, abs_tol=1e-12)


def moment_bound_max_p(model: ModelSpec) -> float:
    """Largest ``p`` for which ``E[X^{2p}]`` stays bounded (``inf`` if unrestricted)."""
    if not _critical_power(model):
        return math.inf
    return max(0.5 + model.B2 / model.Sigma**2, 0.0)


def check_moment_condition(p: float, model: ModelSpec) -> bool:
    if not p > 0:
        raise DomainError(f"moment order must be positive, got {p}")
    return (not _critical_power(model)) or p <= 0.5 + model.B2 / model.Sigma**2


def feller_nonexplosion(model: ModelSpec) -> bool:
    """Non-explosion at infinity for the prototype: ``2*B2 >= -(2a - 1) Sigma^2``."""
    return 2 * model.B2 >= -(2 * model.alpha - 1) * model.Sigma**2


def delta_epsilon_terms(eps: float, model: ModelSpec) -> tuple[float, float, float, float]:
    """The four candidate step bounds whose minimum is :func:`delta_epsilon`.

    Terms that would need a discontinuity gap are ``inf`` for continuous
    drifts; the last term is ``inf`` when ``b0 = 0``.
    """
    if not 0 < eps < 0.5:
        raise DomainError(f"eps must lie in (0, 1/2), got {eps}")
    first = math.exp(-math.log(math.log(1 / (2 * eps))) / (2 * eps))
    if not model.discontinuities:
        return first, math.inf, math.inf, math.inf
    gap, a, S = model.min_gap, model.alpha, model.Sigma
    second = ((2 / 3) ** a * gap ** (1 - a) / (16 * S)) ** (2 / (1 - 2 * eps))
    L_G = model.L_G
    third = (
        (8 / 3 * S / L_G * (1.5 * gap) ** (a - model.beta)) ** (2 / (1 + 2 * eps))
        if L_G > 0 else math.inf
    )
    fourth = gap / (4 * model.b0) if model.b0 > 0 else math.inf
    return first, second, third, fourth


def delta_epsilon(eps: float, model: ModelSpec) -> float:
    """Largest time step for which the ``1/2 - eps`` rate is guaranteed.

    Continuous drifts need no penalty and return ``1``.
    """
    terms = delta_epsilon_terms(eps, model)
    if not model.discontinuities:
        return 1.0
    return min(terms)


# --- sampled hypothesis checks ------------------------------------------------

def _sample_points(model: ModelSpec, n: int = 4001) -> np.ndarray:
    xs = np.logspace(-4, 2.5, n)
    for c in model.discontinuities:
        xs = np.concatenate([xs, c * (1 + np.array([-1e-7, 1e-7, -1e-3, 1e-3]))])
    return np.unique(xs)


def _one_sided_ok(model: ModelSpec, xs: np.ndarray, const: float) -> bool:
    b = model.drift(xs)
    quot = np.diff(b) / np.diff(xs)
    bound = const * (1 + np.maximum(_power(xs[1:], model.beta - 1), _power(xs[:-1], model.beta - 1)))
    return bool(np.all(quot <= bound + 1e-9 * np.abs(bound)))


@dataclass
class HypothesisReport:
    """Outcome of :func:`check_hypotheses`.

    All function-valued conditions are checked on a log-spaced sample of
    ``(0, 10**2.5]`` plus points straddling each discontinuity; they are
    sampled checks, not proofs.
    """

    poly_growth: bool
    piecewise_loclip: bool
    control: bool
    control_b_prime: bool
    control_sigma_prime: bool
    moment_bound_max_p: float
    kappa_strong: float
    kappa_weak: float
    delta_eps: float
    eps: float
    p: int
    feller_nonexplosion: bool
    min_gap: float
    sampled: bool = True
    notes: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def check_hypotheses(model: ModelSpec, p: int = 1, eps: float = 0.1) -> HypothesisReport:
    """Evaluate every structural condition and margin for ``model``."""
    xs = _sample_points(model)
    notes: list[str] = []
    warnings: list[str] = []
    rel = 1e-9
    b = model.drift(xs)
    beta, alpha = model.beta, model.alpha

    growth_bound = model.L_G * np.maximum(_power(xs, beta), xs)
    sig2 = model.diffusion(xs) ** 2
    inv = model.diffusion(1.0 / xs[xs < 1]) ** 2 * sig2[xs < 1]
    poly_growth = bool(
        model.b0 >= 0
        and beta >= 2 * alpha - 1 - 1e-12
        and np.all(np.abs(b - model.b0) <= growth_bound * (1 + rel))
        and np.all(sig2 <= model.Sigma**2 * _power(xs, 2 * alpha) * (1 + rel))
        and np.all(np.isfinite(inv)) and np.all(inv > 0)
    )

    jumps_ok = True
    for c in model.discontinuities:
        left = float(model.drift(c * (1 - 1e-12)))
        right = float(model.drift(c))
        if not right - left < 0:
            jumps_ok = False
            notes.append(f"drift jump at {c:g} is {right - left:+.4g}, not decreasing")
    loclip = jumps_ok
    if model.lipschitz_const is not None:
        pts = np.concatenate([[0.0], model.discontinuities, [np.inf]])
        for lo, hi in zip(pts, pts[1:]):
            seg = xs[(xs > lo) & (xs < hi)]
            if seg.size > 1:
                d = np.abs(np.diff(model.drift(seg))) / np.diff(seg)
                lim = model.lipschitz_const * (1 + _power(seg[1:], beta - 1))
                loclip &= bool(np.all(d <= lim * (1 + rel)))
    else:
        notes.append("no piecewise Lipschitz constant given; only jump signs checked")

    upper = model.b0 + model.B1 * xs - model.B2 * _power(xs, beta)
    control = bool(
        min(model.b0, model.B1, model.B2) >= 0
        and np.all(b <= upper + rel * np.maximum(np.abs(upper), 1.0))
    )
    if model.onesided_const is not None:
        control &= _one_sided_ok(model, xs, model.onesided_const)
    else:
        notes.append("no one-sided Lipschitz constant given; one-sided bound not checked")

    h = 1e-6 * xs
    sig_der = (model.diffusion(xs + h) - model.diffusion(xs - h)) / (2 * h)
    sigma_prime_bound = alpha * model.sigma_prime * _power(xs, alpha - 1)
    control_sigma_prime = bool(np.all(np.abs(sig_der) <= sigma_prime_bound * (1 + 1e-6) + 1e-12))

    if model.zeta is None or model.B1prime is None:
        control_b_prime = False
        notes.append("zeta / B1' not given; derivative control not checked")
    else:
        far = xs[xs >= max(model.zeta, model.discontinuities[-1] if model.discontinuities else 0)]
        hf = 1e-6 * far
        b_der = (model.drift(far + hf) - model.drift(far - hf)) / (2 * hf)
        lim = model.B1prime - beta * model.L_G * _power(far, beta - 1)
        control_b_prime = bool(
            (not model.discontinuities or model.zeta > model.discontinuities[-1])
            and np.all(b_der <= lim + 1e-6 * np.maximum(np.abs(lim), 1.0))
        )

    ks = kappa_strong(p, alpha, model.B2)
    kw = kappa_weak(alpha, model.B2)
    if ks < 0:
        warnings.append(
            f"kappa_strong = {ks:g} < 0: the order-1/2 rate of the unstopped error "
            "is not covered by the sufficient parameter condition"
        )
    if kw < 0:
        warnings.append(f"kappa_weak = {kw:g} < 0: weak-rate condition not met")

    return HypothesisReport(
        poly_growth=poly_growth,
        piecewise_loclip=bool(loclip),
        control=control,
        control_b_prime=control_b_prime,
        control_sigma_prime=control_sigma_prime,
        moment_bound_max_p=moment_bound_max_p(model),
        kappa_strong=ks,
        kappa_weak=kw,
        delta_eps=delta_epsilon(eps, model),
        eps=eps,
        p=p,
        feller_nonexplosion=feller_nonexplosion(model),
        min_gap=model.min_gap,
        notes=notes,
        warnings=warnings,
    )
