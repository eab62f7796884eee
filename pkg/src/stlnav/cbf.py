"""Time-varying barrier functions for eventually / always tasks on the disk.

Conventions
-----------
``sigma_step(tau, delta, t)`` is the smooth 1 -> 0 switch that completes at
``tau``.  ``sigma_window(t0, t1, delta, t)`` is the bump that rises over
``[t0 - delta, t0]`` and falls over ``[t1 - delta, t1]``.

* eventually:  b = sigma_window(t0, t1) * (h_T - margin)
* always:      b = sigma_step(t1) * (h_T - margin + gamma(t))

``gamma`` is the shrinking funnel that starts at ``-(h_T(z) - margin)`` so the
barrier is exactly zero at the anchor point ``z`` at t = 0 and reaches zero
at ``t0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stl import ScenarioError

# exp(-x) underflows to 0.0 a little past 745; keep the derivative finite
_EXP_FLOOR = -700.0


def sigma_step(tau: float, delta: float, t: float) -> float:
    if t <= tau - delta:
        return 1.0
    if t >= tau:
        return 0.0
    x = (t - (tau - delta)) / (t - tau)
    return math.exp(max(-x * x, _EXP_FLOOR))


def dsigma_step(tau: float, delta: float, t: float) -> float:
    """Time derivative of :func:`sigma_step` (zero on both flat pieces)."""
    if t <= tau - delta or t >= tau:
        return 0.0
    x = (t - (tau - delta)) / (t - tau)
    ex = -x * x
    if ex < _EXP_FLOOR:
        return 0.0
    return 2.0 * x * delta / (t - tau) ** 2 * math.exp(ex)


def sigma_window(t0: float, t1: float, delta: float, t: float) -> float:
    return sigma_step(t1, delta, t) * (1.0 - sigma_step(t0, delta, t))


def dsigma_window(t0: float, t1: float, delta: float, t: float) -> float:
    s1, s0 = sigma_step(t1, delta, t), sigma_step(t0, delta, t)
    return dsigma_step(t1, delta, t) * (1.0 - s0) - s1 * dsigma_step(t0, delta, t)


def _check_gamma(z_value: float, a: float, t0: float) -> None:
    if not t0 > 0:
        raise ScenarioError(f"always funnel needs t0 > 0, got {t0}")
    ratio = 1.0 + z_value / a if a != 0 else float("nan")
    if not (0.0 < ratio < 1.0):
        raise ScenarioError(f"funnel parameters violate 0 < 1 + h_T(z)/a < 1 (h_T(z)={z_value}, a={a})")


def gamma_always(z_value: float, a: float, t0: float, t: float) -> float:
    _check_gamma(z_value, a, t0)
    rate = math.log(1.0 + z_value / a) / t0
    return a * math.exp(max(t * rate, _EXP_FLOOR)) - (a + z_value)


def dgamma_always(z_value: float, a: float, t0: float, t: float) -> float:
    _check_gamma(z_value, a, t0)
    rate = math.log(1.0 + z_value / a) / t0
    return a * rate * math.exp(max(t * rate, _EXP_FLOOR))


def default_delta(t0: float, t1: float) -> float:
    return min(1.0, 0.1 * (t1 - t0))


@dataclass(frozen=True)
class CbfSpec:
    """One barrier row.  ``kind`` is "F" or "G"; until tasks produce one of each.

    For "G" rows ``z_value`` is the margin-shifted h_T at the anchor point and
    ``a`` the funnel shape; ``funnel=False`` means gamma is identically zero.
    """

    kind: str
    t0: float
    t1: float
    delta: float
    margin: float = 0.0
    z_value: float = 0.0
    a: float = 0.0
    funnel: bool = False

    def __post_init__(self):
        if self.kind not in ("F", "G"):
            raise ScenarioError(f"unknown barrier kind {self.kind!r}")
        if not (0.0 < self.delta < self.t1 - self.t0):
            raise ScenarioError(f"delta={self.delta} must lie in (0, t1 - t0) for window [{self.t0}, {self.t1}]")
        if self.funnel:
            _check_gamma(self.z_value, self.a, self.t0)

    def gamma(self, t: float) -> float:
        return gamma_always(self.z_value, self.a, self.t0, t) if self.funnel else 0.0

    def dgamma(self, t: float) -> float:
        return dgamma_always(self.z_value, self.a, self.t0, t) if self.funnel else 0.0

    def switch(self, t: float) -> float:
        if self.kind == "F":
            return sigma_window(self.t0, self.t1, self.delta, t)
        return sigma_step(self.t1, self.delta, t)

    def dswitch(self, t: float) -> float:
        if self.kind == "F":
            return dsigma_window(self.t0, self.t1, self.delta, t)
        return dsigma_step(self.t1, self.delta, t)


def always_spec(t0: float, t1: float, z_hT: float, delta: float | None = None,
                margin: float = 0.0, a_factor: float = 2.0, a: float | None = None) -> CbfSpec:
    """Always-row with anchor value ``z_hT = h_T(z)``; ``a = a_factor * |h_T(z) - margin|``.

    An explicit ``a`` overrides the factor.  The funnel settles at
    ``h_T >= margin + a + (h_T(z) - margin)``, so ``a`` just above ``|z|``
    keeps that limit shallow.  Starting inside the (margin-shrunk) region, or
    with t0 = 0, needs no funnel.
    """
    delta = default_delta(t0, t1) if delta is None else delta
    z = z_hT - margin
    if z >= 0 or t0 <= 0:
        return CbfSpec("G", t0, t1, delta, margin)
    a = -a_factor * z if a is None else a
    return CbfSpec("G", t0, t1, delta, margin, z_value=z, a=a, funnel=True)


def eventually_spec(t0: float, t1: float, delta: float | None = None, margin: float = 0.0) -> CbfSpec:
    delta = default_delta(t0, t1) if delta is None else delta
    return CbfSpec("F", t0, t1, delta, margin)


def eval_cbf(spec: CbfSpec, hT_value: float, t: float) -> float:
    return spec.switch(t) * (hT_value - spec.margin + spec.gamma(t))


def cbf_value_and_partials(spec: CbfSpec, hT_value: float, hT_grad: np.ndarray, t: float):
    """Barrier value, spatial gradient and time partial at one (q, t)."""
    s = spec.switch(t)
    ds = spec.dswitch(t)
    inner = hT_value - spec.margin + spec.gamma(t)
    b = s * inner
    dt = ds * inner + s * spec.dgamma(t)
    return b, s * np.asarray(hT_grad, dtype=float), dt


def cbf_partials(spec: CbfSpec, tp, q, t: float):
    """``(grad_q b, db/dt)`` for a transformed predicate ``tp`` at disk point ``q``."""
    h, g = tp.value_and_gradient(np.asarray(q, dtype=float))
    _, grad, dt = cbf_value_and_partials(spec, h, g, t)
    return grad, dt
