"""Scenario parameters and the finite-blocklength channel mapping.

A scenario is five probabilities: packet arrival probability per slot
(``lam``), the duration mix (``q1``/``q2``: one- vs two-slot transmission),
and the per-duration success probabilities (``p1``/``p2``).  Success
probabilities can alternatively be derived from physical-layer inputs
(channel uses, payload bits, SNR) through the short-packet error
approximation, in which a j-slot transmission spends j*n channel uses on
the same payload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from scipy.special import erfc

from .errors import ParameterError

_Q_TOL = 1e-12

LOG2_E = math.log2(math.e)


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0.0 or value > 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class ModelParams:
    """The five probabilities defining a transmitter scenario.

    ``q2`` may be omitted, in which case it is derived as ``1 - q1``.
    Invariants: every field in [0, 1], q1 + q2 = 1 (tolerance 1e-12),
    and p1 <= p2 (a longer transmission cannot be less reliable).
    Instances are immutable and safe to share between threads.
    """

    lam: float
    q1: float
    p1: float
    p2: float
    q2: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", _check_prob("lam", self.lam))
        object.__setattr__(self, "q1", _check_prob("q1", self.q1))
        object.__setattr__(self, "p1", _check_prob("p1", self.p1))
        object.__setattr__(self, "p2", _check_prob("p2", self.p2))
        if self.q2 is None:
            object.__setattr__(self, "q2", 1.0 - self.q1)
        else:
            object.__setattr__(self, "q2", _check_prob("q2", self.q2))
            if abs(self.q1 + self.q2 - 1.0) > _Q_TOL:
                raise ParameterError(
                    f"q1 + q2 must equal 1 within {_Q_TOL:g}, "
                    f"got q1={self.q1!r}, q2={self.q2!r}"
                )
        if self.p1 > self.p2:
            raise ParameterError(
                f"p1 must not exceed p2, got p1={self.p1!r}, p2={self.p2!r}"
            )

    def to_dict(self) -> dict[str, float]:
        return {"lambda": self.lam, "q1": self.q1, "q2": self.q2,
                "p1": self.p1, "p2": self.p2}

    @classmethod
    def from_dict(cls, data: dict[str, float]) -> "ModelParams":
        return cls(lam=data["lambda"], q1=data["q1"], q2=data.get("q2"),
                   p1=data["p1"], p2=data["p2"])


def validate_params(lam: float, q1: float, q2: float, p1: float, p2: float) -> ModelParams:
    """Validate five raw reals into a ModelParams, naming any violated invariant."""
    return ModelParams(lam=lam, q1=q1, q2=q2, p1=p1, p2=p2)


@dataclass(frozen=True)
class ChannelSpec:
    """Physical-layer inputs for deriving success probabilities.

    ``n``: channel uses available per slot, ``b``: payload size in bits,
    ``gamma``: signal-to-noise ratio in linear scale.
    """

    n: int
    b: int
    gamma: float

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n!r}")
        if not isinstance(self.b, int) or self.b < 1:
            raise ParameterError(f"b must be a positive integer, got {self.b!r}")
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma)
                and self.gamma > 0):
            raise ParameterError(f"gamma must be a positive real, got {self.gamma!r}")


def gamma_from_db(gamma_db: float) -> float:
    """Convert an SNR in dB to linear scale."""
    return 10.0 ** (float(gamma_db) / 10.0)


def gaussian_q(x: float) -> float:
    """Gaussian tail function Q(x) = P(N(0,1) > x), via the complementary
    error function (relative accuracy well below 1e-12 for |x| <= 8)."""
    return 0.5 * float(erfc(x / math.sqrt(2.0)))


def awgn_dispersion(gamma: float) -> float:
    """Channel dispersion of the AWGN channel in bits^2 per channel use:
    (1 - (1+gamma)^-2) * log2(e)^2."""
    return (1.0 - (1.0 + gamma) ** -2) * LOG2_E**2


def finite_blocklength_error(spec: ChannelSpec,
                             dispersion: Callable[[float], float] = awgn_dispersion,
                             ) -> float:
    """Short-packet error probability for b bits over n channel uses at SNR gamma.

    Evaluates Q((n*log2(1+gamma) - b + log2(n)/2) / sqrt(V(gamma)*n)) where V
    is the channel dispersion.  ``dispersion`` is injectable so channels other
    than AWGN can be plugged in; the default is the AWGN dispersion.
    """
    v = dispersion(spec.gamma)
    num = spec.n * math.log2(1.0 + spec.gamma) - spec.b + 0.5 * math.log2(spec.n)
    return gaussian_q(num / math.sqrt(v * spec.n))


def derive_success_probs(spec: ChannelSpec,
                         dispersion: Callable[[float], float] = awgn_dispersion,
                         ) -> tuple[float, float]:
    """Success probabilities (p1, p2) for one- and two-slot transmissions.

    A j-slot transmission spends j*n channel uses on the same b bits, so
    p_j = 1 - finite_blocklength_error with n replaced by j*n.  For SNR
    gamma >= 0.01 the normal approximation is monotone in the blocklength
    and p1 <= p2 is guaranteed; at far lower SNR with very small b the
    approximation itself can invert the ordering, which downstream
    ModelParams validation rejects with an explicit error.
    """
    probs = []
    for j in (1, 2):
        stretched = ChannelSpec(n=j * spec.n, b=spec.b, gamma=spec.gamma)
        probs.append(1.0 - finite_blocklength_error(stretched, dispersion))
    return probs[0], probs[1]
