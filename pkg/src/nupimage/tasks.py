"""Noise synthesis, the denoising pipelines, contrast enhancement and inpainting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .augmented import refine_augmented
from .basic import BasicEstimate, estimate_basic, solve_latent
from .solver import UnanchoredFieldError
from .model import ChainScales, ContractError, HyperParams, ObservationField, as_grid, channel_norm

INPAINT_VARIANCE = 100.0
# Cap ratio for pinned level steps; the estimator's default leaves them visibly soft.
PIN_CAP_RATIO = 1e5


def _restore_shape(out: np.ndarray, like) -> np.ndarray:
    return out[:, :, 0] if np.ndim(like) == 2 else out


def add_noise_gaussian(image, sigma: float, seed=None) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise and clip to [0, 1]."""
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    x = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return np.clip(x + rng.normal(0.0, sigma, x.shape), 0.0, 1.0)


def add_noise_poisson_gaussian(image, alpha: float, sigma: float, seed=None) -> np.ndarray:
    """Poisson corruption at intensity scale ``alpha`` plus Gaussian noise, clipped to [0, 1]."""
    if alpha <= 0:
        raise ContractError("alpha must be positive")
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    x = np.asarray(image, dtype=np.float64)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ContractError("image samples must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(alpha * x)
    return np.clip(counts / alpha + rng.normal(0.0, sigma, x.shape), 0.0, 1.0)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def run_pipeline(obs: ObservationField, params: HyperParams, use_augmented: bool = False
                 ) -> tuple[np.ndarray, BasicEstimate]:
    """Basic estimate, optionally refined; returns the unclipped image and the basic result."""
    basic = estimate_basic(obs, params)
    y = basic.latent.y
    if use_augmented:
        y = refine_augmented(obs, y, params)
    return y, basic


def denoise(obs_image, params: HyperParams, use_augmented: bool = False,
            per_pixel_variance=None) -> np.ndarray:
    """Denoise with uniform variance sigma_z^2, or a given per-pixel variance field."""
    variance = params.sigma_z ** 2 if per_pixel_variance is None else per_pixel_variance
    obs = ObservationField(as_grid(obs_image), variance)
    y, _ = run_pipeline(obs, params, use_augmented)
    return _restore_shape(np.clip(y, 0.0, 1.0), obs_image)


def poisson_gaussian_variance(obs_image, alpha: float, sigma_z: float) -> np.ndarray:
    """Per-pixel variance alpha^-1 * clamp(channel mean, 0, 1) + sigma_z^2."""
    if alpha <= 0:
        raise ContractError("alpha must be positive")
    level = np.clip(as_grid(obs_image).mean(axis=2), 0.0, 1.0)
    return level / alpha + sigma_z ** 2


def denoise_poisson_gaussian(obs_image, alpha: float, params: HyperParams,
                             use_augmented: bool = False) -> np.ndarray:
    variance = poisson_gaussian_variance(obs_image, alpha, params.sigma_z)
    return denoise(obs_image, params, use_augmented, variance)


@dataclass(frozen=True)
class PhiSpec:
    """Odd, concave level-step map used for contrast enhancement.

    ``tanh``: phi(u) = alpha * tanh(beta * u).
    ``gamma``: phi(u) = sgn(u) lambda^(gamma-1) |u| below lambda, sgn(u) |u|^gamma above.
    """

    kind: Literal["tanh", "gamma"] = "gamma"
    alpha: float = 1.0
    beta: float = 2.0
    lam: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind == "tanh":
            if not self.alpha > 0:
                raise ContractError("tanh phi needs alpha > 0")
            if not self.beta > 1:
                raise ContractError("tanh phi needs beta > 1")
        elif self.kind == "gamma":
            if not 0 < self.lam <= 1:
                raise ContractError("lambda must lie in (0, 1]")
            if not 0 < self.gamma <= 1:
                raise ContractError("gamma must lie in (0, 1]")
        else:
            raise ContractError(f"unknown phi kind {self.kind!r}")
        problems = phi_violations(self)
        if problems:
            raise ContractError("phi is not admissible: " + ", ".join(problems))

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "tanh":
            return self.alpha * np.tanh(self.beta * u)
        a = np.abs(u)
        inner = self.lam ** (self.gamma - 1.0) * a
        outer = np.power(a, self.gamma)
        return np.sign(u) * np.where(a < self.lam, inner, outer)


def phi_violations(phi: PhiSpec, n_grid: int = 2001) -> list[str]:
    """Numeric checks for oddness, concavity on (0, 1] and slope above one at zero."""
    problems = []
    u = np.linspace(0.0, 1.0, n_grid)[1:]
    if not np.array_equal(phi(-u), -phi(u)) or phi(0.0) != 0.0:
        problems.append("not odd")
    slopes = np.diff(phi(u)) / np.diff(u)
    if np.any(np.diff(slopes) > 1e-9 * np.max(np.abs(slopes))):
        problems.append("not concave on u >= 0")
    h = 1e-6
    if not (phi(h) - phi(0.0)) / h > 1.0:
        problems.append("slope at zero is not above one")
    return problems


def apply_phi(u: np.ndarray, phi: PhiSpec) -> np.ndarray:
    """Map each level step to phi(|u|) u/|u|, keeping its direction; zero stays zero."""
    norm = channel_norm(u)[..., None]
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, phi(norm) * u / safe, 0.0)


def contrast_enhance(image, params: HyperParams, phi: PhiSpec,
                     basic: BasicEstimate | None = None) -> np.ndarray:
    """Re-estimate the image with its level steps pinned to phi of the estimated steps."""
    x = as_grid(image, name="image")
    obs = ObservationField.uniform(x, params.sigma_z)
    if basic is None:
        basic = estimate_basic(obs, params)
    targets = {"row": apply_phi(basic.u_row, phi), "col": apply_phi(basic.u_col, phi)}
    s = basic.scales
    pinned = ChainScales(np.zeros_like(s.sigma_u2_row), np.zeros_like(s.sigma_u2_col),
                         s.r_row, s.r_col, s.sigma_d2_row, s.sigma_d2_col)
    latent, _ = solve_latent(obs, pinned, basic.latent, params, targets, max(params.cap_ratio, PIN_CAP_RATIO))
    return _restore_shape(np.clip(latent.y, 0.0, 1.0), image)


def inpaint_variance(mask, sigma_z: float) -> np.ndarray:
    """Observation variance: INPAINT_VARIANCE where ``mask`` is set, sigma_z^2 elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ContractError("mask must be two-dimensional")
    return np.where(mask, INPAINT_VARIANCE, sigma_z ** 2)


def inpaint(image, mask, params: HyperParams, use_augmented: bool = False) -> np.ndarray:
    """Fill pixels where ``mask`` is nonzero from their surroundings."""
    x = as_grid(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:2]:
        raise ContractError(f"mask shape {mask.shape} does not match image {x.shape[:2]}")
    if mask.all():
        raise UnanchoredFieldError("every pixel is masked; nothing anchors the estimate")
    if mask.mean() > 0.5:
        raise ContractError("at least half of the pixels must be observed")
    return denoise(image, params, use_augmented, inpaint_variance(mask, params.sigma_z))
