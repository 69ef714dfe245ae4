"""Cyclic MAP estimation for the basic piecewise-smooth model."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import refresh_sigma_delta, smooth_chains
from .model import (ChainScales, HyperParams, LatentField, ObservationField, chain_view,
                    channel_norm, extract_inputs)
from .nup import GaussianMessage, r_backward_message, update_sigma_u
from .solver import build_latent_operator, cg_solve

log = logging.getLogger(__name__)


@dataclass
class BasicEstimate:
    latent: LatentField
    scales: ChainScales
    u_row: np.ndarray
    u_col: np.ndarray
    cycles: int = 0
    cg_iterations: int = 0


def solve_latent(obs: ObservationField, scales: ChainScales, latent: LatentField,
                 params: HyperParams, targets=None, u_cap_ratio=None) -> tuple[LatentField, int]:
    """Step 1: joint MAP of the latent field for fixed scales."""
    problem = build_latent_operator(obs, scales, latent, params.eps_floor, targets, params.cap_ratio,
                                    u_cap_ratio)
    result = cg_solve(problem, params.cg_tol, params.cg_max_iters)
    log.debug("latent CG: %d iterations, residual %.2e", result.iterations, result.residual)
    return LatentField.unpack(result.x, obs.shape), result.iterations


def _refresh_scales(latent: LatentField, scales: ChainScales, params: HyperParams) -> ChainScales:
    """Steps 2-4: level-step variances, slope scales, increment variances."""
    out = {}
    for o in ("row", "col"):
        u, s = extract_inputs(latent, o)
        out[f"sigma_u2_{o}"] = update_sigma_u(channel_norm(u), params.beta, params.p)

        s_norm2 = channel_norm(s) ** 2
        r_hat = chain_view(scales.r(o), o)[:, 1:]
        msg = r_backward_message(chain_view(s_norm2, o)[:, 1:], r_hat, params.message_variant,
                                 params.beta_n, latent.y.shape[2], params.eps_floor)
        sigma_d2 = chain_view(scales.sigma_d2(o), o)[:, 1:]
        r_new = np.maximum(smooth_chains(msg, sigma_d2, params.workers), params.eps_floor)

        r_full = np.empty(s_norm2.shape)
        rc = chain_view(r_full, o)
        rc[:, 1:] = r_new
        rc[:, 0] = r_new[:, 0]
        out[f"r_{o}"] = r_full

        sd2 = scales.sigma_d2(o).copy()
        chain_view(sd2, o)[:, 2:] = refresh_sigma_delta(r_new, params.beta_delta, params.p)
        out[f"sigma_d2_{o}"] = sd2
    return ChainScales(**out)


def run_cycle(obs: ObservationField, latent: LatentField, scales: ChainScales,
              params: HyperParams) -> tuple[LatentField, ChainScales, int]:
    """One full pass of the four update steps."""
    latent, its = solve_latent(obs, scales, latent, params)
    return latent, _refresh_scales(latent, scales, params), its


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = np.linalg.norm(old)
    return float(np.linalg.norm(new - old) / (denom if denom > 0 else 1.0))


def estimate_basic(obs: ObservationField, params: HyperParams, max_cycles: int | None = None) -> BasicEstimate:
    """Run the cyclic estimator on ``obs``.

    Performs ``params.iterations`` cycles, or up to ``max_cycles`` when
    given.  With ``params.tol_change`` set, stops as soon as the relative
    change of y between consecutive cycles falls to or below it.
    """
    shape2d = obs.shape[:2]
    scales = ChainScales.initial(shape2d, params)
    latent = LatentField.from_image(obs.values)
    n_cycles = params.iterations if max_cycles is None else max_cycles
    cg_total = 0
    cycles = 0
    for cycles in range(1, n_cycles + 1):
        previous = latent.y
        latent, scales, its = run_cycle(obs, latent, scales, params)
        cg_total += its
        change = relative_change(latent.y, previous)
        log.info("basic cycle %d: %d CG iterations, relative change %.3e", cycles, its, change)
        if params.tol_change is not None and change <= params.tol_change:
            break
    u_row, _ = extract_inputs(latent, "row")
    u_col, _ = extract_inputs(latent, "col")
    return BasicEstimate(latent, scales, u_row, u_col, cycles, cg_total)


def edge_maps(u_row: np.ndarray, u_col: np.ndarray, normalize: bool = True):
    """Per-pixel level-step magnitudes: (row, col, combined).

    With ``normalize`` each map is divided by its maximum (when nonzero).
    """
    row = channel_norm(np.asarray(u_row, dtype=np.float64))
    col = channel_norm(np.asarray(u_col, dtype=np.float64))
    combined = np.sqrt(row * row + col * col)
    if normalize:
        scale = lambda a: a / a.max() if a.max() > 0 else a
        row, col, combined = scale(row), scale(col), scale(combined)
    return row, col, combined
