"""LASSO, SCAD and MCP penalties and their exact coordinate-wise minimizers.

``lam`` is always the per-sample regularization level; nothing here scales
it by the sample size.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

from .errors import ConfigError, NonPositiveTheta

DEFAULT_SCAD_A = 3.5
DEFAULT_MCP_B = 3.0


class Family(IntEnum):
    LASSO = 0
    SCAD = 1
    MCP = 2

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigError(f"unknown penalty family {name!r}") from None


@dataclass(frozen=True)
class PenaltySpec:
    family: Family = Family.SCAD
    lam: float = 0.0
    a: float = DEFAULT_SCAD_A
    b: float = DEFAULT_MCP_B

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.family is Family.SCAD and not self.a > 2:
            raise ConfigError(f"SCAD requires a > 2, got {self.a}")
        if self.family is Family.MCP and not self.b > 0:
            raise ConfigError(f"MCP requires b > 0, got {self.b}")

    @property
    def shape(self) -> float:
        """The family's shape parameter (``a`` for SCAD, ``b`` for MCP)."""
        return self.b if self.family is Family.MCP else self.a

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.family, lam, self.a, self.b)


@njit(cache=True)
def _value(family, lam, shape, theta):
    t = abs(theta)
    if family == 0:
        return lam * t
    if family == 1:
        a = shape
        if t <= lam:
            return lam * t
        if t <= a * lam:
            return -(t * t - 2.0 * a * lam * t + lam * lam) / (2.0 * (a - 1.0))
        return (a + 1.0) * lam * lam / 2.0
    b = shape
    if t < b * lam:
        return lam * t - t * t / (2.0 * b)
    return b * lam * lam / 2.0


@njit(cache=True)
def _derivative(family, lam, shape, t):
    # t >= 0; at t == 0 this is the right derivative
    if family == 0:
        return lam
    if family == 1:
        if t <= lam:
            return lam
        return max(shape * lam - t, 0.0) / (shape - 1.0)
    return max(shape * lam - t, 0.0) / shape


@njit(cache=True)
def _minimize(family, lam, shape, z, w):
    """argmin over theta of 0.5*w*(theta - z)**2 + pen(|theta|)."""
    if z == 0.0 or lam == 0.0:
        return z
    az = abs(z)
    sgn = 1.0 if z > 0 else -1.0
    if family == 0:
        return sgn * max(az - lam / w, 0.0)

    if family == 1:
        k1 = lam
        k2 = shape * lam
        inner_slope = 1.0 / (shape - 1.0)
        inner_num = w * az - shape * lam / (shape - 1.0)
    else:
        k1 = 0.0
        k2 = shape * lam
        inner_slope = 1.0 / shape
        inner_num = w * az - lam

    # candidates in increasing magnitude; each convex piece contributes its
    # clipped stationary point, concave pieces contribute their endpoints
    cands = np.empty(6)
    cands[0] = 0.0
    cands[1] = min(max(az - lam / w, 0.0), k1)
    cands[2] = k1
    curv = w - inner_slope
    if curv > 0.0:
        cands[3] = min(max(inner_num / curv, k1), k2)
    else:
        cands[3] = k1
    cands[4] = k2
    cands[5] = max(az, k2)

    best = 0.0
    best_f = 0.5 * w * az * az
    for c in cands:
        f = 0.5 * w * (c - az) ** 2 + _value(family, lam, shape, c)
        if f < best_f or (f == best_f and c < best):
            best_f = f
            best = c
    return sgn * best


def penalty_value(spec: PenaltySpec, theta: float) -> float:
    return float(_value(int(spec.family), spec.lam, spec.shape, float(theta)))


def penalty_derivative(spec: PenaltySpec, theta: float) -> float:
    """Derivative of the penalty in ``|theta|`` for ``theta > 0``."""
    if not theta > 0:
        raise NonPositiveTheta(f"derivative requires theta > 0, got {theta}")
    return float(_derivative(int(spec.family), spec.lam, spec.shape, float(theta)))


def univariate_minimizer(spec: PenaltySpec, z: float, w: float = 1.0) -> float:
    """Global minimizer of ``0.5*w*(theta - z)**2 + pen(|theta|)``.

    When two local minima attain the same objective the one closer to zero is
    returned.
    """
    if not w > 0:
        raise ConfigError(f"curvature w must be positive, got {w}")
    return float(_minimize(int(spec.family), spec.lam, spec.shape, float(z), float(w)))


def penalty_sum(spec: PenaltySpec, coefs: np.ndarray) -> float:
    return float(_penalty_sum(int(spec.family), spec.lam, spec.shape, np.ravel(coefs)))


@njit(cache=True)
def _penalty_sum(family, lam, shape, coefs):
    s = 0.0
    for c in coefs:
        if c != 0.0:
            s += _value(family, lam, shape, c)
    return s
