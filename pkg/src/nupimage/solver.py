"""Matrix-free conjugate gradients and the two quadratic subproblems.

The latent problem has unknowns (y, d_row, d_col) stacked into one vector.
For fixed scales its objective is

    J = sum_n |obs_n - y_n|^2 / (2 var_n)
        + sum_{row, col} sum_{n >= 1} w_u,n |u_n - t_n|^2 / 2 + r_n^2 |s_n|^2 / 2

with u, s from :func:`nupimage.model.extract_inputs`, w_u = 1/sigma_u^2
and targets t = 0 except during contrast enhancement.  Precisions are
capped at ``cap_ratio`` times the largest data precision; a capped term
acts as an equality constraint.

The scale-field problem of the augmented model has one unknown r per
pixel, unary Gaussian messages, and increment penalties along rows and
columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg.blas import daxpy

from .model import DEFAULT_CAP_RATIO, ChainScales, LatentField, ObservationField, chain_view, extract_inputs
from .nup import GaussianMessage


class CGDivergenceError(ArithmeticError):
    """Conjugate gradients produced a non-finite iterate."""


class UnanchoredFieldError(ValueError):
    """A scale field has no message with positive weight."""


def dot(a: np.ndarray, b: np.ndarray) -> float:
    # einsum reduces in a fixed order on one thread, unlike a threaded BLAS dot.
    return float(np.einsum("i,i->", a.ravel(), b.ravel()))


def _axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> None:
    """y += alpha * x in place."""
    out = daxpy(x, y, a=alpha)
    if out is not y:
        y[...] = out


@dataclass
class QuadraticProblem:
    """Minimize 0.5 x'Ax - b'x for a symmetric positive semidefinite A."""

    apply: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray
    x0: np.ndarray
    diagonal: np.ndarray | None = None
    operator: object | None = None

    @property
    def dimension(self) -> int:
        return self.rhs.size

    def energy(self, x: np.ndarray) -> float:
        return 0.5 * dot(x, self.apply(x)) - dot(self.rhs, x)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(problem: QuadraticProblem, tol: float = 1e-8, max_iters: int = 1000) -> CGResult:
    """Conjugate gradients, Jacobi-preconditioned when a diagonal is given.

    Stops once ``|Ax - b| <= tol * |b|`` or after ``max_iters`` iterations.
    The returned residual is the true relative residual of the result.
    """
    b = problem.rhs
    x = np.array(problem.x0, dtype=np.float64)
    b_norm = np.sqrt(dot(b, b))
    if not np.isfinite(b_norm):
        raise CGDivergenceError("right-hand side is not finite")
    if b_norm == 0.0:
        b_norm = 1.0
    if problem.diagonal is not None:
        diag = problem.diagonal
        inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    else:
        inv_diag = np.ones_like(b)

    r = b - problem.apply(x)
    it = 0
    res = np.sqrt(dot(r, r))
    if not np.isfinite(res):
        raise CGDivergenceError("initial residual is not finite")
    if res > tol * b_norm:
        z = r * inv_diag
        p = z.copy()
        rz = dot(r, z)
        while it < max_iters:
            ap = problem.apply(p)
            pap = dot(p, ap)
            if not np.isfinite(pap):
                raise CGDivergenceError("non-finite curvature in conjugate gradients")
            if pap <= 0.0:
                break
            alpha = rz / pap
            _axpy(alpha, p, x)
            _axpy(-alpha, ap, r)
            it += 1
            res = np.sqrt(dot(r, r))
            if not np.isfinite(res):
                raise CGDivergenceError("non-finite residual in conjugate gradients")
            if res <= tol * b_norm:
                break
            np.multiply(r, inv_diag, out=z)
            rz_new = dot(r, z)
            p *= rz_new / rz
            p += z
            rz = rz_new
    true_r = b - problem.apply(x)
    return CGResult(x, it, float(np.sqrt(dot(true_r, true_r)) / b_norm))


def capped_inverse(variance: np.ndarray, cap: float) -> np.ndarray:
    """1/variance limited to ``cap``; zero variance maps to ``cap``."""
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / np.asarray(variance, dtype=np.float64), cap)


class LatentOperator:
    """Hessian of the latent objective, applied without forming a matrix."""

    def __init__(self, obs: ObservationField, scales: ChainScales, eps_floor: float = 1e-12,
                 targets: dict | None = None, cap_ratio: float = DEFAULT_CAP_RATIO,
                 u_cap_ratio: float | None = None):
        self.shape = obs.shape
        self.obs = obs
        self.data_weight = 1.0 / obs.variance
        self.cap = cap_ratio * float(self.data_weight.max())
        u_cap = self.cap if u_cap_ratio is None else u_cap_ratio * float(self.data_weight.max())
        self.weights = {}
        for o in ("row", "col"):
            wu = capped_inverse(scales.sigma_u2(o), u_cap)
            r = np.maximum(scales.r(o), eps_floor)
            ws = np.minimum(r * r, self.cap)
            chain_view(wu, o)[:, 0] = 0.0
            chain_view(ws, o)[:, 0] = 0.0
            self.weights[o] = (wu, ws)
        self.targets = targets or {}
        # Flat index offsets between chain neighbors.  Weights are zero at
        # chain position 0, so differences taken across row (or image)
        # boundaries of the flattened arrays contribute nothing.
        n = int(np.prod(self.shape))
        channels = self.shape[2]
        self._shift = {"row": channels, "col": self.shape[1] * channels}
        self._flat = {}
        for o, (wu, ws) in self.weights.items():
            k = self._shift[o]
            full = lambda w: np.repeat(w.ravel(), channels)[k:]
            self._flat[o] = (full(wu), full(ws), np.empty(n - k), np.empty(n - k))
        self._data_weight_flat = np.repeat(self.data_weight.ravel(), channels)
        self._gy = (np.empty(n), np.empty(n))

    def split(self, x):
        n = int(np.prod(self.shape))
        return (x[:n].reshape(self.shape), x[n:2 * n].reshape(self.shape),
                x[2 * n:].reshape(self.shape))

    def _chain_part(self, y, d, orientation, gy, gd):
        """Write one orientation's gradient contributions into flat ``gy`` and ``gd``."""
        k = self._shift[orientation]
        wu, ws, a, b = self._flat[orientation]
        np.subtract(y[k:], y[:-k], out=a)
        a -= d[:-k]
        a *= wu
        np.subtract(d[k:], d[:-k], out=b)
        b *= ws
        gy[:k] = 0.0
        gy[k:] = a
        gy[:-k] -= a
        gd[:k] = 0.0
        gd[k:] = b
        gd[:-k] -= a
        gd[:-k] -= b

    def apply(self, x):
        n = self._data_weight_flat.size
        y, dr, dc = x[:n], x[n:2 * n], x[2 * n:]
        out = np.empty_like(x)
        gy, gd_r, gd_c = out[:n], out[n:2 * n], out[2 * n:]
        gy_r, gy_c = self._gy
        self._chain_part(y, dr, "row", gy_r, gd_r)
        self._chain_part(y, dc, "col", gy_c, gd_c)
        # Row and column parts are summed first so the result does not
        # depend on which orientation is evaluated first.
        gy_r += gy_c
        np.multiply(self._data_weight_flat, y, out=gy)
        gy += gy_r
        return out

    def diagonal(self):
        parts = {}
        for o in ("row", "col"):
            wu, ws = self.weights[o]
            dy = np.zeros(self.shape[:2])
            dd = np.zeros(self.shape[:2])
            dyc, ddc = chain_view(dy, o), chain_view(dd, o)
            wuc, wsc = chain_view(wu, o), chain_view(ws, o)
            dyc[:, 1:] += wuc[:, 1:]
            dyc[:, :-1] += wuc[:, 1:]
            ddc[:, :-1] += wuc[:, 1:] + wsc[:, 1:]
            ddc[:, 1:] += wsc[:, 1:]
            parts[o] = (dy, dd)
        full = lambda a: np.broadcast_to(a[:, :, None], self.shape).ravel()
        diag_y = self.data_weight + (parts["row"][0] + parts["col"][0])
        return np.concatenate([full(diag_y), full(parts["row"][1]), full(parts["col"][1])])

    def rhs(self):
        gy = self.data_weight[:, :, None] * self.obs.values
        gd = {"row": np.zeros(self.shape), "col": np.zeros(self.shape)}
        shift = {"row": np.zeros(self.shape), "col": np.zeros(self.shape)}
        for o, t in self.targets.items():
            wu, _ = self.weights[o]
            a = chain_view(wu, o)[:, 1:, None] * chain_view(t, o)[:, 1:]
            pyc, gdc = chain_view(shift[o], o), chain_view(gd[o], o)
            pyc[:, 1:] += a
            pyc[:, :-1] -= a
            gdc[:, :-1] -= a
        gy = gy + (shift["row"] + shift["col"])
        return np.concatenate([gy.ravel(), gd["row"].ravel(), gd["col"].ravel()])

    def objective(self, latent: LatentField) -> float:
        """The full objective J, constant terms included."""
        res = self.obs.values - latent.y
        j = 0.5 * float(np.sum(self.data_weight[:, :, None] * res * res))
        for o in ("row", "col"):
            wu, ws = self.weights[o]
            u, s = extract_inputs(latent, o)
            if o in self.targets:
                u = u - self.targets[o]
            j += 0.5 * float(np.sum(wu[:, :, None] * u * u) + np.sum(ws[:, :, None] * s * s))
        return j


def build_latent_operator(obs: ObservationField, scales: ChainScales, x0: LatentField | None = None,
                          eps_floor: float = 1e-12, targets: dict | None = None,
                          cap_ratio: float = DEFAULT_CAP_RATIO,
                          u_cap_ratio: float | None = None) -> QuadraticProblem:
    """Quadratic problem for step 1 of the basic estimator.

    ``targets`` optionally maps ``"row"``/``"col"`` to fixed level-step
    fields; the corresponding penalties become ``w_u |u - t|^2 / 2``.
    ``u_cap_ratio`` overrides the cap of the level-step precisions only.
    """
    op = LatentOperator(obs, scales, eps_floor, targets, cap_ratio, u_cap_ratio)
    if x0 is None:
        x0 = LatentField.from_image(obs.values)
    return QuadraticProblem(op.apply, op.rhs(), x0.pack(), op.diagonal(), op)


class ScaleFieldOperator:
    """Hessian of the 2-D scale-field objective (one scalar per pixel)."""

    def __init__(self, messages: GaussianMessage, sigma_d2_row, sigma_d2_col,
                 cap_ratio: float = DEFAULT_CAP_RATIO):
        self.w = np.asarray(messages.weight, dtype=np.float64)
        self.xi = np.asarray(messages.weighted_mean, dtype=np.float64)
        if not np.any(self.w > 0):
            raise UnanchoredFieldError("all scale messages have zero weight")
        self.shape = self.w.shape
        self.cap = cap_ratio * float(self.w.max())
        self.inc = {}
        for o, s2 in (("row", sigma_d2_row), ("col", sigma_d2_col)):
            wd = capped_inverse(s2, self.cap)
            chain_view(wd, o)[:, 0] = 0.0
            self.inc[o] = wd
        n = self.w.size
        self._shift = {"row": 1, "col": self.shape[1]}
        self._flat = {o: (self.inc[o].ravel()[k:], np.empty(n - k)) for o, k in self._shift.items()}
        self._w_flat = self.w.ravel()
        self._g = (np.empty(n), np.empty(n))

    def _part(self, r, o, g):
        k = self._shift[o]
        w, a = self._flat[o]
        np.subtract(r[k:], r[:-k], out=a)
        a *= w
        g[:k] = 0.0
        g[k:] = a
        g[:-k] -= a

    def apply(self, x):
        g_row, g_col = self._g
        self._part(x, "row", g_row)
        self._part(x, "col", g_col)
        g_row += g_col
        out = self._w_flat * x
        out += g_row
        return out

    def diagonal(self):
        parts = []
        for o in ("row", "col"):
            d = np.zeros(self.shape)
            dc, wc = chain_view(d, o), chain_view(self.inc[o], o)
            dc[:, 1:] += wc[:, 1:]
            dc[:, :-1] += wc[:, 1:]
            parts.append(d)
        return (self.w + (parts[0] + parts[1])).ravel()

    def objective(self, r) -> float:
        """0.5 sum W r^2 - sum xi r plus the increment penalties."""
        r = np.asarray(r, dtype=np.float64).reshape(self.shape)
        j = 0.5 * float(np.sum(self.w * r * r)) - float(np.sum(self.xi * r))
        for o in ("row", "col"):
            diff = np.diff(chain_view(r, o), axis=1)
            j += 0.5 * float(np.sum(chain_view(self.inc[o], o)[:, 1:] * diff * diff))
        return j


def build_r_field_operator(messages: GaussianMessage, sigma_d2_row, sigma_d2_col, x0=None,
                           cap_ratio: float = DEFAULT_CAP_RATIO) -> QuadraticProblem:
    """Quadratic problem for the joint MAP of the augmented model's scale field.

    ``sigma_d2_row[i, j]`` is the variance of r[i, j] - r[i, j-1] and
    ``sigma_d2_col[i, j]`` that of r[i, j] - r[i-1, j].  Increment
    precisions are capped at ``cap_ratio`` times the largest message weight.
    """
    op = ScaleFieldOperator(messages, sigma_d2_row, sigma_d2_col, cap_ratio)
    x0 = np.zeros(op.shape) if x0 is None else np.asarray(x0, dtype=np.float64)
    return QuadraticProblem(op.apply, op.xi.ravel().copy(), x0.ravel().copy(), op.diagonal(), op)
