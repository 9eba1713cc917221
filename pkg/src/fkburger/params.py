"""Model parameters: symbol probability p, loop weight q and the cone angle."""
from __future__ import annotations

import math
from dataclasses import dataclass


class ParameterError(ValueError):
    """Raised when p or q lies outside the supported domain."""


def p_from_q(q: float) -> float:
    """Invert sqrt(q) = 2p / (1 - p)."""
    if not (0.0 <= q < 4.0) or math.isnan(q):
        raise ParameterError(f"q must lie in [0, 4), got {q!r}")
    s = math.sqrt(q)
    return s / (2.0 + s)


def q_from_p(p: float) -> float:
    _check_p(p)
    return (2.0 * p / (1.0 - p)) ** 2


def theta0_from_p(p: float) -> float:
    _check_p(p)
    return 2.0 * math.atan(1.0 / math.sqrt(1.0 - 2.0 * p))


def p0_from_q(q: float) -> float:
    """Closed form of the exponent p0 as a function of the loop weight q."""
    if not (0.0 <= q < 4.0):
        raise ParameterError(f"q must lie in [0, 4), got {q!r}")
    return math.pi / (4.0 * math.acos(math.sqrt(2.0 - math.sqrt(q)) / 2.0))


def _check_p(p):
    if not (0.0 <= p < 0.5) or math.isnan(p):
        raise ParameterError(f"p must lie in [0, 1/2), got {p!r}")


@dataclass(frozen=True)
class ModelParams:
    """Symbol law P(h)=P(c)=1/4, P(H)=P(C)=(1-p)/4, P(F)=p/2 and derived constants."""

    p: float

    def __post_init__(self):
        _check_p(self.p)

    @classmethod
    def from_q(cls, q: float) -> "ModelParams":
        return cls(p_from_q(q))

    @property
    def q(self) -> float:
        return q_from_p(self.p)

    @property
    def theta0(self) -> float:
        return theta0_from_p(self.p)

    @property
    def p0(self) -> float:
        return math.pi / (2.0 * self.theta0)

    @property
    def kappa_prime(self) -> float:
        return 8.0 * self.p0

    @property
    def sigma2(self) -> float:
        return (1.0 - self.p) / 2.0

    def probabilities(self):
        """Probabilities of (h, c, H, C, F) in symbol-code order."""
        p = self.p
        return (0.25, 0.25, (1.0 - p) / 4.0, (1.0 - p) / 4.0, p / 2.0)

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "theta0": self.theta0,
            "p0": self.p0,
            "kappa_prime": self.kappa_prime,
        }


def resolve_params(p=None, q=None) -> ModelParams:
    """Build parameters from exactly one of p or q."""
    if (p is None) == (q is None):
        raise ParameterError("exactly one of p or q must be given")
    if p is not None:
        return ModelParams(float(p))
    return ModelParams.from_q(float(q))
