"""Closed-form performance metrics for the Geo/Geo/1 approximation.

Two approximations of the per-slot service probability are supported:

* ``mu_simple``:  q1*p1 + q2*p2/2, the duration-weighted success mass with
  the two-slot term halved because it spreads over two slots.
* ``mu_refined``: (p2 + q1*(p1 - p2)) / (2 - q1), the reciprocal of the
  exact mean transmission delay; this one matches simulation closely.

Given an arrival probability ``lam`` and a service probability ``mu``, the
queue behaves as a Geo/Geo/1 chain whose stationary law, mean size and
Little's-law delay have elementary closed forms.  Unstable inputs raise
typed errors rather than returning infinities so that sweep and optimizer
code can tell "infeasible" from "large".
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoStableQ1Error, ParameterError, UnstableQueueError, ZeroServiceError
from .model import ModelParams

# Tolerance band for sign tests (e.g. p1 vs p2/2); ties are taken inside it.
SIGN_TOL = 1e-12

_FORM_TOL = 1e-12


def mu_simple(params: ModelParams) -> float:
    """Duration-averaged service probability per slot: q1*p1 + q2*p2/2."""
    return params.q1 * params.p1 + params.q2 * params.p2 / 2.0


def transmission_delay(params: ModelParams) -> float:
    """Mean slots from a packet's first transmission attempt to its delivery.

    Computed as (q1 + 2*q2) / (1 - q1*(1-p1) - q2*(1-p2)) and cross-checked
    against the equivalent form (2 - q1) / (p2 + q1*(p1 - p2)); the two must
    agree to 1e-12 relative.  Raises ZeroServiceError when no transmission
    can succeed.
    """
    s = params.p2 + params.q1 * (params.p1 - params.p2)
    if s <= 0.0:
        raise ZeroServiceError(
            "duration-weighted success probability is zero "
            f"(q1={params.q1}, p1={params.p1}, p2={params.p2})"
        )
    via_renewal = (params.q1 + 2.0 * params.q2) / (
        1.0 - params.q1 * (1.0 - params.p1) - params.q2 * (1.0 - params.p2)
    )
    via_mix = (2.0 - params.q1) / s
    # Both expressions are algebraically identical; for s >~ 1e-9 each is
    # well-conditioned, so a disagreement means a construction bug.
    if s > 1e-9 and not math.isclose(via_renewal, via_mix,
                                     rel_tol=_FORM_TOL, abs_tol=_FORM_TOL):
        raise AssertionError(
            f"transmission-delay forms disagree: {via_renewal!r} vs {via_mix!r}"
        )
    return via_mix


def mu_refined(params: ModelParams) -> float:
    """Service probability as the reciprocal of the mean transmission delay:
    (p2 + q1*(p1 - p2)) / (2 - q1)."""
    return (params.p2 + params.q1 * (params.p1 - params.p2)) / (2.0 - params.q1)


def _require_stable(lam: float, mu: float) -> None:
    if not (0.0 <= lam <= 1.0):
        raise ParameterError(f"lam must lie in [0, 1], got {lam!r}")
    if not (0.0 < mu <= 1.0):
        raise ParameterError(f"mu must lie in (0, 1], got {mu!r}")
    if lam >= mu:
        raise UnstableQueueError(
            f"queue is unstable: arrival probability {lam} >= service probability {mu}"
        )


def stationary_geo(lam: float, mu: float, i: int) -> float:
    """Stationary probability of i packets in a stable Geo/Geo/1 queue.

    pi(0) = 1 - lam/mu and, for i >= 1,
    pi(i) = lam^i * (1-mu)^(i-1) / ((1-lam)^i * mu^i) * pi(0).
    """
    _require_stable(lam, mu)
    if i < 0:
        raise ParameterError(f"level index must be >= 0, got {i!r}")
    pi0 = 1.0 - lam / mu
    if i == 0:
        return pi0
    ratio = lam * (1.0 - mu) / ((1.0 - lam) * mu)
    return pi0 * (lam / ((1.0 - lam) * mu)) * ratio ** (i - 1)


def queueing_delay(lam: float, mu: float) -> float:
    """Little's-law queueing delay (1 - lam) / (mu - lam) in slots."""
    _require_stable(lam, mu)
    return (1.0 - lam) / (mu - lam)


def mean_queue(lam: float, mu: float) -> float:
    """Mean number of packets in system, lam*(1-lam)/(mu-lam).

    Implemented as lam * queueing_delay so that Little's law holds exactly
    in floating point.
    """
    return lam * queueing_delay(lam, mu)


class StabilityKind(enum.Enum):
    ALL_Q1 = "all-q1"
    NONE = "none"
    ABOVE = "q1-above-threshold"
    BELOW = "q1-below-threshold"


@dataclass(frozen=True)
class StabilityRegion:
    """The set of duration-mix values q1 for which the queue is stable.

    ``threshold`` is present exactly when ``kind`` is one of the threshold
    kinds, and always lies in [0, 1].
    """

    kind: StabilityKind
    threshold: float | None = None

    def __post_init__(self) -> None:
        threshold_kind = self.kind in (StabilityKind.ABOVE, StabilityKind.BELOW)
        if threshold_kind != (self.threshold is not None):
            raise ParameterError("threshold present iff kind is a threshold kind")

    def contains(self, q1: float) -> bool:
        if self.kind is StabilityKind.ALL_Q1:
            return True
        if self.kind is StabilityKind.NONE:
            return False
        if self.kind is StabilityKind.ABOVE:
            return q1 > self.threshold
        return q1 < self.threshold


def _region_from_halfplane(coeff: float, rhs: float) -> StabilityRegion:
    # Stable iff q1 * coeff > rhs on the domain q1 in [0, 1].
    if abs(coeff) <= SIGN_TOL:
        kind = StabilityKind.ALL_Q1 if rhs < 0.0 else StabilityKind.NONE
        return StabilityRegion(kind)
    t = rhs / coeff
    if coeff > 0.0:
        if t < 0.0:
            return StabilityRegion(StabilityKind.ALL_Q1)
        if t >= 1.0:
            return StabilityRegion(StabilityKind.NONE)
        return StabilityRegion(StabilityKind.ABOVE, t)
    if t > 1.0:
        return StabilityRegion(StabilityKind.ALL_Q1)
    if t <= 0.0:
        return StabilityRegion(StabilityKind.NONE)
    return StabilityRegion(StabilityKind.BELOW, t)


def stability_region(lam: float, p1: float, p2: float,
                     mu_variant: str = "refined") -> StabilityRegion:
    """Values of q1 yielding a stable queue under the chosen service model.

    simple variant:  lam < q1*p1 + (1-q1)*p2/2, i.e. q1*(2*p1 - p2) > 2*lam - p2.
    refined variant: lam*(2-q1) < p2 + q1*(p1-p2), i.e.
                     q1*(lam + p1 - p2) > 2*lam - p2.
    """
    rhs = 2.0 * lam - p2
    if mu_variant == "simple":
        return _region_from_halfplane(2.0 * p1 - p2, rhs)
    if mu_variant == "refined":
        return _region_from_halfplane(lam + p1 - p2, rhs)
    raise ParameterError(f"mu_variant must be 'simple' or 'refined', got {mu_variant!r}")


@dataclass(frozen=True)
class GeoMetrics:
    """Closed-form outputs for one scenario under one service-probability model.

    For unstable scenarios ``stable`` is False and the queue-dependent fields
    (empty_prob, mean_queue, d_q, total_delay) are None; ``mu`` and ``d_t``
    are always reported since they do not depend on the arrival rate.
    """

    mu: float
    d_t: float
    stable: bool
    empty_prob: float | None = None
    mean_queue: float | None = None
    d_q: float | None = None
    total_delay: float | None = None


def geo_metrics(params: ModelParams, mu_variant: str = "refined") -> GeoMetrics:
    """Assemble all closed-form metrics for a scenario.

    ``mu_variant`` selects which service-probability model drives the queue
    formulas; the transmission delay is the same under both.
    """
    if mu_variant == "simple":
        mu = mu_simple(params)
    elif mu_variant == "refined":
        mu = mu_refined(params)
    else:
        raise ParameterError(f"mu_variant must be 'simple' or 'refined', got {mu_variant!r}")
    d_t = transmission_delay(params)
    if params.lam >= mu:
        return GeoMetrics(mu=mu, d_t=d_t, stable=False)
    d_q = queueing_delay(params.lam, mu)
    return GeoMetrics(
        mu=mu,
        d_t=d_t,
        stable=True,
        empty_prob=1.0 - params.lam / mu,
        mean_queue=params.lam * d_q,
        d_q=d_q,
        total_delay=d_q + d_t,
    )


def optimal_q1_transmission(p1: float, p2: float) -> tuple[float, float, bool]:
    """Duration mix minimizing the transmission delay.

    Returns (q1*, D_T*, tie).  D_T is monotone in q1 with slope sign
    (p2 - 2*p1), so the minimum sits at an endpoint: q1*=1 with D_T*=1/p1
    when p1 > p2/2, q1*=0 with D_T*=2/p2 when p1 < p2/2.  When p1 = p2/2
    (within 1e-12) the delay is constant 2/p2 in q1; 0.5 is reported as a
    representative with the tie flag set.
    """
    if p2 <= 0.0:
        raise ParameterError(f"p2 must be positive, got {p2!r}")
    diff = p1 - p2 / 2.0
    if abs(diff) <= SIGN_TOL:
        return 0.5, 2.0 / p2, True
    if diff > 0.0:
        return 1.0, 1.0 / p1, False
    return 0.0, 2.0 / p2, False


_GRID_STEP = 1e-4
_GOLDEN_TOL = 1e-8
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _total_delay_at(lam: float, p1: float, p2: float, q1: float) -> float:
    # math.inf marks infeasible points so they are never selected.
    mu = (p2 + q1 * (p1 - p2)) / (2.0 - q1)
    if mu <= lam or mu <= 0.0:
        return math.inf
    return (1.0 - lam) / (mu - lam) + (2.0 - q1) / (p2 + q1 * (p1 - p2))


def optimize_total_delay(lam: float, p1: float, p2: float) -> tuple[float, float]:
    """Minimize queueing plus transmission delay over the stable q1 in [0, 1].

    Dense grid (step 1e-4) restricted to refined-stability points, then
    golden-section refinement of the best bracket to 1e-8.  Raises
    NoStableQ1Error when no q1 is stable.
    """
    grid = np.linspace(0.0, 1.0, int(round(1.0 / _GRID_STEP)) + 1)
    mu = (p2 + grid * (p1 - p2)) / (2.0 - grid)
    feasible = mu > lam
    if not np.any(feasible):
        raise NoStableQ1Error(
            f"no q1 in [0, 1] stabilizes the queue for lam={lam}, p1={p1}, p2={p2}"
        )
    totals = np.full(grid.shape, np.inf)
    f_idx = np.flatnonzero(feasible)
    totals[f_idx] = (1.0 - lam) / (mu[f_idx] - lam) + (2.0 - grid[f_idx]) / (
        p2 + grid[f_idx] * (p1 - p2)
    )
    best = int(np.argmin(totals))

    lo = max(0.0, grid[best] - _GRID_STEP)
    hi = min(1.0, grid[best] + _GRID_STEP)
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = _total_delay_at(lam, p1, p2, c)
    fd = _total_delay_at(lam, p1, p2, d)
    while b - a > _GOLDEN_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = _total_delay_at(lam, p1, p2, c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = _total_delay_at(lam, p1, p2, d)

    candidates = [0.5 * (a + b), grid[best], lo, hi]
    q_star = min(candidates, key=lambda q: _total_delay_at(lam, p1, p2, q))
    # Snap to an exact endpoint when refinement landed within tolerance of one.
    for endpoint in (0.0, 1.0):
        if abs(q_star - endpoint) <= _GOLDEN_TOL and math.isfinite(
            _total_delay_at(lam, p1, p2, endpoint)
        ):
            q_star = endpoint
            break
    return float(q_star), _total_delay_at(lam, p1, p2, q_star)
