"""Closed-form NUP updates and the backward message through a scale node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateMessageError(ArithmeticError):
    """The mlsp message has a non-positive precision for the current iterate."""


@dataclass(frozen=True)
class GaussianMessage:
    """Scalar Gaussian message(s) in weight / weighted-mean form.

    ``weight`` is the inverse variance W, ``weighted_mean`` is xi = W * m.
    Both may be arrays of matching shape.
    """

    weight: np.ndarray
    weighted_mean: np.ndarray

    @classmethod
    def from_moments(cls, mean, variance) -> "GaussianMessage":
        w = 1.0 / np.asarray(variance, dtype=np.float64)
        return cls(w, w * np.asarray(mean, dtype=np.float64))

    @property
    def variance(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(self.weight, dtype=np.float64)

    @property
    def mean(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(self.weighted_mean, dtype=np.float64) / self.weight


def nup_variance(norm, weight: float, p: float):
    """Maximizing variance ``|x|^(2-p) / (weight * p)`` of the NUP prior.

    Exactly zero where ``norm`` is zero when p < 2; constant at p = 2.
    """
    norm = np.asarray(norm, dtype=np.float64)
    return np.power(norm, 2.0 - p) / (weight * p)


def update_sigma_u(u_norm, beta: float, p: float):
    """Level-step variance for a step of size ``u_norm``."""
    return nup_variance(u_norm, beta, p)


def update_sigma_delta(delta_norm, beta_delta: float, p: float):
    """Scale-increment variance for an increment of size ``delta_norm``."""
    return nup_variance(delta_norm, beta_delta, p)


def r_backward_message(s_norm2, r_hat, variant: str = "lukaj", beta_n: float = 1.0,
                       m: int = 1, eps_floor: float = 1e-12) -> GaussianMessage:
    """Gaussian backward message through the slope-noise scale node.

    ``s_norm2`` is the squared norm of the input the scale acts on and
    ``r_hat`` the previous value of the scale.  ``m`` (the channel count)
    does not enter either message form.

    For ``variant="lukaj"`` the variance is ``1/|s|^2`` and the mean
    ``1/(|r_hat| |s|^2)``; ``"mlsp"`` uses the free parameter ``beta_n``
    and reduces to ``"lukaj"`` at ``beta_n = 1/|r_hat|``.
    """
    s_norm2 = np.asarray(s_norm2, dtype=np.float64)
    inv_r = 1.0 / np.abs(np.asarray(r_hat, dtype=np.float64))
    if variant == "lukaj":
        weight, xi = np.broadcast_arrays(np.maximum(s_norm2, eps_floor), inv_r)
        return GaussianMessage(weight.copy(), xi.copy())
    if variant == "mlsp":
        beta_n = np.asarray(beta_n, dtype=np.float64)
        # Grouped so that beta_n = 1/|r_hat| reproduces the lukaj weight exactly.
        weight = s_norm2 + inv_r * (beta_n - inv_r)
        if np.any(weight <= 0):
            raise DegenerateMessageError(
                "mlsp message precision is not positive; increase beta_n")
        weight, xi = np.broadcast_arrays(weight, beta_n)
        return GaussianMessage(weight.copy(), xi.copy())
    raise ValueError(f"unknown message variant {variant!r}")
