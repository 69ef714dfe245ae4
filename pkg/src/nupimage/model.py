"""Grid types, hyperparameters and the latent-state to input mapping.

Every row and every column of the image carries a scalar (or RGB) state
space model whose state is (intensity, slope).  Along a chain with states
``(y_n, d_n)`` the model inputs are

    u_n = y_n - y_{n-1} - d_{n-1}      (level step)
    s_n = d_n - d_{n-1}                (slope noise)

for n >= 1 (0-indexed).  The first state of a chain has no input and no
prior cost.

All fields are stored as float64 arrays of shape (H, W, C); scale fields
are shared across channels and have shape (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Literal

import numpy as np

Orientation = Literal["row", "col"]
ORIENTATIONS: tuple[Orientation, Orientation] = ("row", "col")

# Precisions are capped at this multiple of the largest data precision;
# a capped term behaves as an equality constraint.
DEFAULT_CAP_RATIO = 1e3


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


def as_grid(image, *, name: str = "image", unit_range: bool = False) -> np.ndarray:
    """Return ``image`` as a float64 (H, W, C) array after validating it.

    Accepts (H, W) or (H, W, C) input with C in {1, 3}.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ContractError(f"{name} must have shape (H, W) or (H, W, C) with C in {{1, 3}}, got {a.shape}")
    if a.shape[0] < 3 or a.shape[1] < 3:
        raise ContractError(f"{name} must be at least 3x3, got {a.shape[0]}x{a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite samples")
    if unit_range and (a.min() < 0.0 or a.max() > 1.0):
        raise ContractError(f"{name} samples must lie in [0, 1]")
    return a


def chain_view(grid_field: np.ndarray, orientation: Orientation) -> np.ndarray:
    """View a field as a stack of 1-D chains along ``orientation``.

    Rows are returned top-to-bottom, columns left-to-right.  The chain
    index is axis 0 and the position along the chain is axis 1; any
    trailing channel axis is kept.  The result is a view, so writes go
    through to ``grid_field``.
    """
    if orientation == "row":
        return grid_field
    if orientation == "col":
        return np.swapaxes(grid_field, 0, 1)
    raise ContractError(f"unknown orientation {orientation!r}")


@dataclass(frozen=True)
class HyperParams:
    """Model and solver settings.

    ``sigma_z`` is the one parameter a user is expected to set.  ``beta``
    and ``beta_delta`` default to values calibrated on synthetic
    piecewise-linear images (see ``nupimage.calibrate``).
    """

    sigma_z: float
    p: float = 0.3
    beta: float = 6.0
    beta_delta: float = 1.0
    iterations: int = 5
    init_sigma_u: float = 0.1
    init_r_basic: float = 500.0
    init_r_augmented: float = 60.0
    init_sigma_delta: float = 10.0
    sigma_z_prime: float | None = None
    message_variant: Literal["lukaj", "mlsp"] = "lukaj"
    beta_n: float = 1.0
    cg_tol: float = 1e-8
    cg_max_iters: int = 2000
    eps_floor: float = 1e-12
    cap_ratio: float = DEFAULT_CAP_RATIO
    tol_change: float | None = None
    workers: int = 1

    def __post_init__(self):
        positive = ("sigma_z", "beta", "beta_delta", "init_sigma_u", "init_r_basic",
                    "init_r_augmented", "init_sigma_delta", "beta_n", "cg_tol", "eps_floor", "cap_ratio")
        for key in positive:
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ContractError(f"{key} must be positive and finite, got {value!r}")
        if not 0 < self.p <= 2:
            raise ContractError(f"p must lie in (0, 2], got {self.p!r}")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.cg_max_iters < 1:
            raise ContractError("cg_max_iters must be >= 1")
        if self.workers < 1:
            raise ContractError("workers must be >= 1")
        if self.sigma_z_prime is not None and self.sigma_z_prime <= 0:
            raise ContractError("sigma_z_prime must be positive")
        if self.message_variant not in ("lukaj", "mlsp"):
            raise ContractError(f"unknown message variant {self.message_variant!r}")

    @property
    def sigma_z_aug(self) -> float:
        return self.sigma_z if self.sigma_z_prime is None else self.sigma_z_prime

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class LatentField:
    """Pixel intensities plus the row-model and column-model slopes."""

    y: np.ndarray
    d_row: np.ndarray
    d_col: np.ndarray

    def __post_init__(self):
        if not (self.y.shape == self.d_row.shape == self.d_col.shape):
            raise ContractError("y, d_row and d_col must share one shape")

    @classmethod
    def from_image(cls, image) -> "LatentField":
        y = as_grid(image).copy()
        return cls(y, np.zeros_like(y), np.zeros_like(y))

    def slope(self, orientation: Orientation) -> np.ndarray:
        return self.d_row if orientation == "row" else self.d_col

    def pack(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.d_row.ravel(), self.d_col.ravel()])

    @classmethod
    def unpack(cls, x: np.ndarray, shape) -> "LatentField":
        n = int(np.prod(shape))
        return cls(x[:n].reshape(shape), x[n:2 * n].reshape(shape), x[2 * n:].reshape(shape))

    def transpose(self) -> "LatentField":
        t = lambda a: np.ascontiguousarray(np.swapaxes(a, 0, 1))
        return LatentField(t(self.y), t(self.d_col), t(self.d_row))


@dataclass(frozen=True)
class ChainScales:
    """Per-pixel NUP scale parameters of the row and column models.

    Index 0 along a chain carries no input; its entries are kept for shape
    uniformity.  ``r_*[.., 0]`` mirrors ``r_*[.., 1]``.
    """

    sigma_u2_row: np.ndarray
    sigma_u2_col: np.ndarray
    r_row: np.ndarray
    r_col: np.ndarray
    sigma_d2_row: np.ndarray
    sigma_d2_col: np.ndarray

    @classmethod
    def initial(cls, shape2d, params: HyperParams) -> "ChainScales":
        full = lambda v: np.full(shape2d, float(v))
        return cls(
            full(params.init_sigma_u ** 2), full(params.init_sigma_u ** 2),
            full(params.init_r_basic), full(params.init_r_basic),
            full(params.init_sigma_delta ** 2), full(params.init_sigma_delta ** 2),
        )

    def sigma_u2(self, orientation: Orientation) -> np.ndarray:
        return self.sigma_u2_row if orientation == "row" else self.sigma_u2_col

    def r(self, orientation: Orientation) -> np.ndarray:
        return self.r_row if orientation == "row" else self.r_col

    def sigma_d2(self, orientation: Orientation) -> np.ndarray:
        return self.sigma_d2_row if orientation == "row" else self.sigma_d2_col

    def transpose(self) -> "ChainScales":
        t = lambda a: np.ascontiguousarray(a.T)
        return ChainScales(t(self.sigma_u2_col), t(self.sigma_u2_row), t(self.r_col),
                           t(self.r_row), t(self.sigma_d2_col), t(self.sigma_d2_row))


@dataclass(frozen=True)
class ObservationField:
    """Observed image and its per-pixel noise variance (shared by channels)."""

    values: np.ndarray
    variance: np.ndarray = field(default=None)

    def __post_init__(self):
        values = as_grid(self.values, name="observation")
        object.__setattr__(self, "values", values)
        variance = np.broadcast_to(np.asarray(self.variance, dtype=np.float64), values.shape[:2])
        if not np.all(np.isfinite(variance)) or variance.min() <= 0:
            raise ContractError("observation variance must be finite and positive")
        object.__setattr__(self, "variance", np.array(variance))

    @classmethod
    def uniform(cls, values, sigma_z: float) -> "ObservationField":
        return cls(values, np.float64(sigma_z) ** 2)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def transpose(self) -> "ObservationField":
        return ObservationField(np.swapaxes(self.values, 0, 1), self.variance.T)


def extract_inputs(latent: LatentField, orientation: Orientation) -> tuple[np.ndarray, np.ndarray]:
    """Level-step and slope-noise inputs implied by ``latent``.

    Returns ``(u, s)`` with the shape of ``latent.y``; entries at chain
    position 0 are zero.
    """
    y = chain_view(latent.y, orientation)
    d = chain_view(latent.slope(orientation), orientation)
    if y.shape[1] < 2:
        raise ContractError("chains must have length >= 2")
    u = np.zeros_like(y)
    s = np.zeros_like(y)
    u[:, 1:] = y[:, 1:] - y[:, :-1] - d[:, :-1]
    s[:, 1:] = d[:, 1:] - d[:, :-1]
    back = lambda a: np.ascontiguousarray(chain_view(a, orientation))
    return back(u), back(s)


def roll_forward(u: np.ndarray, s: np.ndarray, y0: np.ndarray, d0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the state recursion along axis 1 from initial states ``(y0, d0)``.

    Inverse of :func:`extract_inputs` for the row orientation.
    """
    d = d0[:, None] + np.cumsum(np.concatenate([np.zeros_like(s[:, :1]), s[:, 1:]], axis=1), axis=1)
    y = np.empty_like(u)
    y[:, 0] = y0
    for n in range(1, u.shape[1]):
        y[:, n] = y[:, n - 1] + d[:, n - 1] + u[:, n]
    return y, d


def channel_norm(a: np.ndarray) -> np.ndarray:
    """Euclidean norm over the trailing channel axis."""
    if a.shape[-1] == 1:
        return np.abs(a[..., 0])
    return np.sqrt(np.sum(a * a, axis=-1))
