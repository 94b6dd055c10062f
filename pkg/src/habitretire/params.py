"""Model constants and the deterministic time functions used by every solver.

All quantities are annualized.  The market is Black-Scholes with a single
stock, the wage is a geometric Brownian motion perfectly correlated with the
stock, and the habit level accumulates past consumption at weight ``alpha``
and decays at rate ``beta``.  The retiree's leisure preference is the smooth
multiplier K(t) = exp(eps0 * gamma_tilde * (T - t)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad


class AssumptionViolation(ValueError):
    """A model assumption (negative wage-growth spread, leisure-gain sign) fails."""


class DegenerateDiffusion(ValueError):
    """The reduced dual state has zero volatility; the solvers cannot run."""


def _annuity(rate: float, dt):
    """integral of exp(rate*u) over [0, dt], stable for rate near 0."""
    dt = np.asarray(dt, dtype=float)
    if abs(rate) < 1e-12:
        return dt * (1.0 + 0.5 * rate * dt)
    return np.expm1(rate * dt) / rate


@dataclass(frozen=True)
class ModelParams:
    """Market, preference, habit and wage constants.

    The constructor validates the standing assumptions unless ``validate``
    is False (useful for intentionally degenerate configurations such as the
    no-habit Merton limit, where only the post-retirement formulas apply).
    """

    r: float = 0.01
    mu: float = 0.05
    sigma: float = 0.22
    rho: float = 0.01
    gamma: float = 1.5
    alpha: float = 0.3
    beta: float = 0.5
    mu_w: float = 0.01
    sigma_w: float = 0.1
    T: float = 21.0
    T1: float = 20.0
    eps0: float = 0.06
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.gamma <= 0 or self.gamma == 1.0:
            raise ValueError("gamma must be positive and != 1")
        if self.beta <= 0 or self.alpha < 0:
            raise ValueError("need beta > 0 and alpha >= 0")
        if not (0.0 < self.T1 < self.T):
            raise ValueError(f"need 0 < T1 < T, got T1={self.T1}, T={self.T}")
        if self.validate:
            if self.vartheta >= 0:
                raise AssumptionViolation(
                    f"wage growth too strong: vartheta={self.vartheta:.6g} >= 0"
                )
            ts = np.linspace(0.0, self.T1, 201)
            dmax = float(np.max(self.leisure_Delta(ts)))
            if dmax >= 0.0:
                raise AssumptionViolation(
                    f"leisure gap Delta(t) must stay negative on [0,T1]; max={dmax:.6g}"
                )

    # -- derived constants ------------------------------------------------

    @property
    def kappa(self) -> float:
        """Market price of risk."""
        return (self.mu - self.r) / self.sigma

    @property
    def vartheta(self) -> float:
        """Effective discount of the wage annuity, -r + mu_w - kappa*sigma_w."""
        return -self.r + self.mu_w - self.kappa * self.sigma_w

    @property
    def gamma_tilde(self) -> float:
        return (1.0 - self.gamma) / self.gamma

    def derived(self) -> "DerivedParams":
        return DerivedParams.from_model(self)

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    # -- deterministic time functions -------------------------------------

    def wage_annuity(self, t):
        """q(t): present value of one unit of wage income until T1."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T1 + 1e-12):
            raise ValueError(f"t outside [0, T1={self.T1}]")
        return _annuity(self.vartheta, np.clip(self.T1 - t, 0.0, None))

    def habit_cost(self, t):
        """p^T(t): cost of subsistence consumption per unit of habit."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T + 1e-12):
            raise ValueError(f"t outside [0, T={self.T}]")
        rate = self.alpha - self.beta - self.r
        return _annuity(rate, np.clip(self.T - t, 0.0, None))

    def mu_T(self, t):
        """Effective price multiplier 1 + alpha * p^T(t) on excess consumption."""
        return 1.0 + self.alpha * self.habit_cost(t)

    def leisure_K(self, t):
        """Leisure multiplier of post-retirement utility (defined on [0, T])."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T + 1e-12):
            raise ValueError(f"t outside [0, T={self.T}]")
        return np.exp(self.eps0 * self.gamma_tilde * (self.T - t))

    def leisure_Delta(self, t):
        """Delta(t) = (1 - K(t)^(1/gamma)) / gamma_tilde; negative iff leisure gains."""
        return (1.0 - self.leisure_K(t) ** (1.0 / self.gamma)) / self.gamma_tilde

    def _H_exponent_rate(self) -> float:
        gt = self.gamma_tilde
        k2 = 0.5 * self.kappa**2
        return -self.rho * (1.0 + gt) + gt * (k2 + self.r) + gt**2 * k2

    def _H_integrand(self, u, t):
        gt = self.gamma_tilde
        ku = np.exp(self.eps0 * gt * (self.T - u) / self.gamma)  # K(u)^(1/gamma)
        return ku / gt * self.mu_T(u) ** (-gt) * np.exp(self._H_exponent_rate() * (u - t))

    def post_value_H(self, t):
        """H(t): coefficient of the post-retirement dual value H(t) z^(-gamma_tilde)."""
        scalar = np.isscalar(t) or np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(ts < -1e-12) or np.any(ts > self.T + 1e-12):
            raise ValueError(f"t outside [0, T={self.T}]")
        out = np.empty_like(ts)
        for i, ti in enumerate(ts):
            out[i], _ = quad(self._H_integrand, ti, self.T, args=(ti,),
                             epsabs=1e-12, epsrel=1e-11, limit=200)
        return float(out[0]) if scalar else out

    def z_coeffs(self):
        """Drift and volatility (mu_z, sigma_z) of the reduced dual state Z
        under the tilted measure, so that dZ/Z = mu_z dt + sigma_z dB~.

        Derived by Ito's formula on
        ln Z = ln Y / (1-gamma) + gamma ln W / (1-gamma) with the Girsanov
        shift B~ = B - (sigma_w - kappa) t.
        """
        g = self.gamma
        sigma_z = (g * self.sigma_w - self.kappa) / (1.0 - g)
        if abs(sigma_z) < 1e-14:
            raise DegenerateDiffusion("sigma_z = 0 (kappa == gamma*sigma_w)")
        drift_log_p = ((self.rho - self.r - 0.5 * self.kappa**2)
                       + g * (self.mu_w - 0.5 * self.sigma_w**2)) / (1.0 - g)
        mu_z = drift_log_p + sigma_z * (self.sigma_w - self.kappa) + 0.5 * sigma_z**2
        return mu_z, sigma_z


@dataclass(frozen=True)
class DerivedParams:
    """Constants computed once from ModelParams and shared by the solvers."""

    kappa: float
    vartheta: float
    gamma_tilde: float
    mu_z: float
    sigma_z: float

    @classmethod
    def from_model(cls, p: ModelParams) -> "DerivedParams":
        mu_z, sigma_z = p.z_coeffs()
        return cls(kappa=p.kappa, vartheta=p.vartheta, gamma_tilde=p.gamma_tilde,
                   mu_z=mu_z, sigma_z=sigma_z)


# Table presets.  The source table lists T=20, T1=21, which contradicts the
# model requirement T1 < T; the shipped defaults swap them.  The *_bench
# variants carry the (alpha, beta) = (0.2, 0.4) benchmark used in the habit
# sensitivity plots.
PRESETS = {
    "gamma15": ModelParams(gamma=1.5),
    "gamma05": ModelParams(gamma=0.5),
    "gamma15_bench": ModelParams(gamma=1.5, alpha=0.2, beta=0.4),
    "gamma05_bench": ModelParams(gamma=0.5, alpha=0.2, beta=0.4),
}


def preset(name: str) -> ModelParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
