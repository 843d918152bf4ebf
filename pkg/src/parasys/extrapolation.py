"""Quantitative Sneiberg windows and the two-stage (time, then space) interval estimate.

All interpolation arithmetic is done in reciprocal exponents 1/r, 1/q,
where complex interpolation between Lebesgue-type scales is affine.  The
intervals produced here are *estimates* built from explicit constants;
each window application is recorded in ``provenance``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ValidationError
from .parabolic import lions_constant


@dataclass(frozen=True)
class SneibergWindow:
    theta_center: float
    radius: float
    inverse_bound: float
    beta: float
    gamma_op: float

    @property
    def window(self):
        return (max(0.0, self.theta_center - self.radius), min(1.0, self.theta_center + self.radius))


def sneiberg_window(theta, beta, gamma_op):
    """Radius ``(1/6) min(theta, 1-theta) / (1 + 2 beta gamma)``; inverse bound ``8 beta``."""
    if not 0 < theta < 1:
        raise ValidationError("theta must lie in (0, 1)", reason="theta_range")
    if not (beta > 0 and gamma_op > 0):
        raise ValidationError("beta and gamma must be positive")
    radius = min(theta, 1.0 - theta) / (6.0 * (1.0 + 2.0 * beta * gamma_op))
    return SneibergWindow(float(theta), radius, 8.0 * beta, float(beta), float(gamma_op))


def _exponent_interval(center_recip, radius):
    """Map a window in reciprocal exponents back to an exponent interval."""
    lo, hi = center_recip - radius, center_recip + radius
    return (1.0 / hi, 1.0 / lo)


@dataclass
class ExtrapolationEstimate:
    I_t: tuple
    I_x: tuple
    lam: float
    gamma: float
    M: float
    Lambda: float
    beta0: float
    gamma0: float
    delta: float | None = None
    provenance: list = field(default_factory=list)

    def to_dict(self):
        return {
            "I_t": list(self.I_t), "I_x": list(self.I_x),
            "inputs": {"lambda": self.lam, "gamma": self.gamma, "M": self.M, "Lambda": self.Lambda,
                       "delta": self.delta},
            "beta0": self.beta0, "gamma0": self.gamma0,
            "provenance": self.provenance,
            "note": "estimate from explicit window arithmetic, not a proven isomorphism interval",
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def estimate_intervals(lam, gamma, M, Lambda, delta=None):
    """Two-stage extrapolation windows around (r, q) = (2, 2).

    Stage 1 windows in 1/r with the Lions constant as inverse bound and
    ``1 + M + |Lambda|`` as operator bound.  Stage 2 windows in 1/q from
    every stage-1 endpoint with the post-extrapolation inverse bound
    ``8 * beta0``; the q-windows are intersected.  With ``delta`` the
    spatial scale is anchored at q = 2 -/+ delta instead of (1, inf).
    """
    if not Lambda > lam:
        raise ValidationError("Lambda must exceed lambda", reason="lambda_order")
    if not gamma > 0 or M < 0:
        raise ValidationError("need gamma > 0 and M >= 0")
    beta0 = lions_constant(lam, gamma, M, Lambda)
    gamma0 = 1.0 + M + abs(Lambda)
    prov = []

    w1 = sneiberg_window(0.5, beta0, gamma0)
    prov.append({"stage": 1, "axis": "1/r", **asdict(w1)})
    I_t = _exponent_interval(0.5, w1.radius)

    if delta is None:
        lo_recip, hi_recip = 0.0, 1.0
    else:
        if not 0 < delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        lo_recip, hi_recip = 1.0 / (2.0 + delta), 1.0 / (2.0 - delta)
    span = hi_recip - lo_recip
    theta_q = (0.5 - lo_recip) / span

    lo, hi = 0.0, 1.0
    for r_anchor in (I_t[0], 2.0, I_t[1]):
        w2 = sneiberg_window(theta_q, w1.inverse_bound, gamma0)
        a = lo_recip + span * (theta_q - w2.radius)
        b = lo_recip + span * (theta_q + w2.radius)
        prov.append({"stage": 2, "axis": "1/q", "r_anchor": r_anchor, **asdict(w2),
                     "recip_window": [a, b]})
        lo, hi = max(lo, a), min(hi, b)
    I_x = (1.0 / hi, 1.0 / lo)
    return ExtrapolationEstimate(I_t, I_x, lam, gamma, M, Lambda, beta0, gamma0, delta, prov)
