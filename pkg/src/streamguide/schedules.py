"""Scalar time schedules shared by training, sampling, and guidance scaling.

The interpolant noise schedule is ``gamma(t) = gamma_scale * sqrt(t(1-t))``,
the tube variance contracts as ``sigma(t) = sigma0 * exp(-k t)``, and the
sampler diffusivity ``epsilon(t)`` is user-configurable (zero for ODE mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EPSILON_KINDS = ("zero", "constant", "gamma2")


@dataclass(frozen=True)
class ScheduleSet:
    gamma_scale: float = 0.1
    sigma0: float = 0.05
    k_gain: float = 5.0
    epsilon_kind: str = "zero"
    epsilon_value: float = 0.0
    gamma_floor: float = 1e-3

    def __post_init__(self):
        if self.epsilon_kind not in EPSILON_KINDS:
            raise ValueError(f"epsilon_kind must be one of {EPSILON_KINDS}")
        if self.gamma_floor <= 0:
            raise ValueError("gamma_floor must be positive")
        if self.gamma_scale < 0 or self.sigma0 < 0 or self.epsilon_value < 0:
            raise ValueError("gamma_scale, sigma0 and epsilon_value must be non-negative")

    def _check_t(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0, 1]")
        return t

    def gamma(self, t: float) -> float:
        t = self._check_t(t)
        return self.gamma_scale * math.sqrt(t * (1.0 - t))

    def gamma_floored(self, t: float) -> float:
        """gamma(t) clamped below; used only where a score division occurs."""
        return max(self.gamma(t), self.gamma_floor)

    def gamma_gamma_dot(self, t: float) -> float:
        """The product gamma(t) * d gamma/dt in closed form, finite on [0, 1]."""
        t = self._check_t(t)
        return self.gamma_scale**2 * (1.0 - 2.0 * t) / 2.0

    def sigma(self, t: float) -> float:
        t = self._check_t(t)
        return self.sigma0 * math.exp(-self.k_gain * t)

    def epsilon(self, t: float) -> float:
        t = self._check_t(t)
        if self.epsilon_kind == "zero":
            return 0.0
        if self.epsilon_kind == "constant":
            return self.epsilon_value
        return self.epsilon_value * self.gamma(t) ** 2

    def diffusivity_correction(self, t: float) -> float:
        """epsilon(t) - gamma(t)*gamma_dot(t); finite on all of [0, 1]."""
        return self.epsilon(t) - self.gamma_gamma_dot(t)
