"""Locally adaptive L2 refinement around a basic estimate.

Given a background estimate ``y_hat``, the refined image ``y'`` is drawn
toward ``y_hat`` with a per-pixel precision ``r^2`` and toward the
observation with the data precision.  The field ``r`` is a 2-D
piecewise-constant field shared by the row and column increment chains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import refresh_sigma_delta
from .model import ContractError, HyperParams, ObservationField, as_grid, chain_view, channel_norm
from .nup import r_backward_message
from .solver import build_r_field_operator, cg_solve

log = logging.getLogger(__name__)


@dataclass
class AugmentedEstimate:
    y: np.ndarray
    r: np.ndarray
    sigma_d2_row: np.ndarray
    sigma_d2_col: np.ndarray
    cg_iterations: int = 0


def blend(y_hat: np.ndarray, y_obs: np.ndarray, r: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Pixelwise minimizer of r^2 (y' - y_hat)^2 / 2 + (y_obs - y')^2 / (2 variance)."""
    a = (r * r)[..., None]
    b = (1.0 / variance)[..., None]
    return (a * y_hat + b * y_obs) / (a + b)


def refine_augmented_full(obs: ObservationField, y_hat, params: HyperParams) -> AugmentedEstimate:
    """Run the refinement and return the final image together with its scale field."""
    y_hat = as_grid(y_hat, name="y_hat")
    if y_hat.shape != obs.shape:
        raise ContractError(f"y_hat shape {y_hat.shape} does not match observation {obs.shape}")
    ratio = params.sigma_z_aug / params.sigma_z
    variance = obs.variance * ratio * ratio
    shape2d = obs.shape[:2]
    r = np.full(shape2d, float(params.init_r_augmented))
    sd2 = {o: np.full(shape2d, float(params.init_sigma_delta) ** 2) for o in ("row", "col")}
    cg_total = 0
    y_prime = y_hat
    for cycle in range(1, params.iterations + 1):
        y_prime = blend(y_hat, obs.values, r, variance)
        s_norm2 = channel_norm(y_prime - y_hat) ** 2
        msg = r_backward_message(s_norm2, r, params.message_variant, params.beta_n,
                                 obs.shape[2], params.eps_floor)
        problem = build_r_field_operator(msg, sd2["row"], sd2["col"], r, params.cap_ratio)
        result = cg_solve(problem, params.cg_tol, params.cg_max_iters)
        cg_total += result.iterations
        r = np.maximum(result.x.reshape(shape2d), params.eps_floor)
        for o in ("row", "col"):
            chain_view(sd2[o], o)[:, 1:] = refresh_sigma_delta(chain_view(r, o), params.beta_delta, params.p)
        log.info("augmented cycle %d: %d CG iterations", cycle, result.iterations)
    y_prime = blend(y_hat, obs.values, r, variance)
    return AugmentedEstimate(y_prime, r, sd2["row"], sd2["col"], cg_total)


def refine_augmented(obs: ObservationField, y_hat, params: HyperParams) -> np.ndarray:
    """Refined image y' after ``params.iterations`` cycles."""
    return refine_augmented_full(obs, y_hat, params).y
