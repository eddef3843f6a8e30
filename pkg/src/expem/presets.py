"""Named benchmark models.

``case1`` .. ``case5``: ``dX = (1 + X - B2 X^3) dt + X^2 dW`` with
``B2 = 6.5, 5.5, 4.5, 3.5, 2.5``; ``case6``: the same with ``B2 = 1``;
``case7``: superlinear term modulated by ``(cos X + 2)^2``; ``case8``:
coefficient of ``X^3`` switching between ``6`` and ``-0.6`` at ``1.5``
and ``6``, started at ``3``; ``case9``: stochastic logistic equation
``dX = X (1 - 2X) dt + X dW``.  ``stability``: ``dX = (X - 6 X^3) dt + X^2 dW``.
``gbm``: geometric Brownian motion, on which the scheme is exact.
"""

from __future__ import annotations

from .exceptions import ConfigError
from .model import ModelSpec

__all__ = ["PRESETS", "preset"]


def _prototype(B2: float, name: str) -> ModelSpec:
    return ModelSpec(
        kind="polynomial", b0=1.0, B1=1.0, B2=B2, beta=3.0, alpha=2.0, Sigma=1.0,
        growth_const=max(1.0, B2), onesided_const=1.0, lipschitz_const=3 * B2,
        zeta=1.0, B1prime=1.0, x0=1.0, name=name,
    )


PRESETS: dict[str, ModelSpec] = {
    "case1": _prototype(6.5, "case1"),
    "case2": _prototype(5.5, "case2"),
    "case3": _prototype(4.5, "case3"),
    "case4": _prototype(3.5, "case4"),
    "case5": _prototype(2.5, "case5"),
    "case6": _prototype(1.0, "case6"),
    "case7": ModelSpec(
        kind="modulated-polynomial", b0=1.0, B1=1.0, B2=1.0, beta=3.0, alpha=2.0,
        Sigma=1.0, growth_const=9.0, x0=1.0, name="case7",
    ),
    # control constants: on [1.5, 6) the drift 1 + x + 0.6 x^3 stays below
    # 1 + B1 x - 6 x^3 once B1 >= 1 + 6.6 * 36
    "case8": ModelSpec(
        kind="piecewise-polynomial", b0=1.0, B1=1.0 + 6.6 * 36.0, B2=6.0, beta=3.0,
        alpha=2.0, Sigma=1.0, growth_const=6.0, discontinuities=(1.5, 6.0),
        piece_B1=(1.0, 1.0, 1.0), piece_B2=(6.0, -0.6, 6.0), zeta=7.0, B1prime=1.0,
        x0=3.0, name="case8",
    ),
    "case9": ModelSpec(
        kind="lotka-volterra", b0=0.0, B1=1.0, B2=2.0, beta=2.0, alpha=1.0, Sigma=1.0,
        growth_const=2.0, onesided_const=1.0, zeta=1.0, B1prime=1.0, x0=1.0, name="case9",
    ),
    "stability": ModelSpec(
        kind="polynomial", b0=0.0, B1=1.0, B2=6.0, beta=3.0, alpha=2.0, Sigma=1.0,
        growth_const=6.0, onesided_const=1.0, lipschitz_const=18.0, zeta=1.0,
        B1prime=1.0, x0=1.0, name="stability",
    ),
    "gbm": ModelSpec(
        kind="gbm", b0=0.0, B1=0.5, B2=0.0, beta=2.0, alpha=1.0, Sigma=0.5,
        growth_const=0.5, x0=1.0, name="gbm",
    ),
}


def preset(name: str) -> ModelSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
