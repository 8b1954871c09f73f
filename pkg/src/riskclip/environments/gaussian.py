"""A one-dimensional Gaussian pair with a tail-exceedance loss.

The safe policy is a standard normal; the optimized policy shifts its mean
toward a risky tail region. The loss is the indicator of crossing a fixed
threshold, so the safe risk is a normal tail probability and the clipped
policy's exact risk is available by quadrature for oracle checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..policies import DiagonalGaussian

__all__ = ["GaussianPairEnv"]


@dataclass(frozen=True)
class GaussianPairEnv:
    """Safe N(mu0, s0), optimized N(mu1, s1), loss = 1{x > threshold}."""

    mu_safe: float = 0.0
    sigma_safe: float = 1.0
    mu_opt: float = 1.5
    sigma_opt: float = 1.0
    threshold: float = 1.2816
    bound: float = 1.0

    def safe_policy(self) -> DiagonalGaussian:
        return DiagonalGaussian(self.mu_safe, self.sigma_safe)

    def optimized_policy(self) -> DiagonalGaussian:
        return DiagonalGaussian(self.mu_opt, self.sigma_opt)

    def reward(self, actions) -> np.ndarray:
        return np.asarray(actions, dtype=np.float64)

    def loss(self, actions) -> np.ndarray:
        return (np.asarray(actions, dtype=np.float64) > self.threshold).astype(np.float64)

    def improve(self, reference, actions, rewards, losses, rng) -> DiagonalGaussian:
        # Improvement stand-in: the optimized policy is fixed for this
        # environment, so the feedback loop isolates the calibration step.
        return self.optimized_policy()

    @property
    def safe_risk(self) -> float:
        return float(norm.sf(self.threshold, loc=self.mu_safe, scale=self.sigma_safe))

    @property
    def optimized_risk(self) -> float:
        return float(norm.sf(self.threshold, loc=self.mu_opt, scale=self.sigma_opt))

    def expected_clipped_loss(self, beta: float, grid_size: int = 20001,
                              half_width: float = 10.0) -> float:
        """Exact risk of the clipped policy by quadrature on a dense grid."""
        lo = min(self.mu_safe, self.mu_opt) - half_width
        hi = max(self.mu_safe, self.mu_opt) + half_width
        x = np.linspace(lo, hi, grid_size)
        p0 = norm.pdf(x, loc=self.mu_safe, scale=self.sigma_safe)
        pt = norm.pdf(x, loc=self.mu_opt, scale=self.sigma_opt)
        tilde = pt if math.isinf(beta) else np.minimum(pt, beta * p0)
        psi = np.trapezoid(tilde, x)
        mass_above = np.trapezoid(tilde * (x > self.threshold), x)
        return float(mass_above / psi)
