"""Shared oracles: dense assemblies built directly from the factor lists."""

import numpy as np
import pytest

from nupimage.model import DEFAULT_CAP_RATIO

ACCEPTANCE_RESULTS = {}


def dense_chain_system(w, xi, sigma_d2):
    """Precision matrix and rhs of one scalar chain with unary and increment factors."""
    m = len(w)
    a = np.diag(np.asarray(w, dtype=float))
    for k in range(1, m):
        prec = 1.0 / sigma_d2[k]
        a[k, k] += prec
        a[k - 1, k - 1] += prec
        a[k, k - 1] -= prec
        a[k - 1, k] -= prec
    return a, np.asarray(xi, dtype=float)


def latent_factor_rows(shape, orientation):
    """Yield (kind, pixel, coefficient dict) for every u and s factor of one orientation.

    Unknowns are indexed as in the packed vector (y, d_row, d_col), each of
    shape (H, W, C); ``pixel`` is the (i, j) of the chain position n >= 1.
    """
    h, w, c = shape
    n = h * w * c
    block = {"y": 0, "row": n, "col": 2 * n}

    def idx(name, i, j, ch):
        return block[name] + (i * w + j) * c + ch

    for i in range(h):
        for j in range(w):
            if orientation == "row" and j == 0 or orientation == "col" and i == 0:
                continue
            pi, pj = (i, j - 1) if orientation == "row" else (i - 1, j)
            for ch in range(c):
                u = {idx("y", i, j, ch): 1.0, idx("y", pi, pj, ch): -1.0, idx(orientation, pi, pj, ch): -1.0}
                s = {idx(orientation, i, j, ch): 1.0, idx(orientation, pi, pj, ch): -1.0}
                yield "u", (i, j), ch, u
                yield "s", (i, j), ch, s


def dense_latent_system(obs, scales, cap_ratio=DEFAULT_CAP_RATIO, eps_floor=1e-12, targets=None, u_cap_ratio=None):
    """Hessian and rhs of the latent objective, assembled term by term."""
    h, w, c = obs.shape
    n = h * w * c
    data_w = 1.0 / obs.variance
    cap = cap_ratio * data_w.max()
    u_cap = cap if u_cap_ratio is None else u_cap_ratio * data_w.max()
    a = np.zeros((3 * n, 3 * n))
    b = np.zeros(3 * n)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                k = (i * w + j) * c + ch
                a[k, k] += data_w[i, j]
                b[k] += data_w[i, j] * obs.values[i, j, ch]
    for o in ("row", "col"):
        s2u = scales.sigma_u2(o)
        r = np.maximum(scales.r(o), eps_floor)
        for kind, (i, j), ch, coeffs in latent_factor_rows(obs.shape, o):
            if kind == "u":
                weight = u_cap if s2u[i, j] == 0 else min(1.0 / s2u[i, j], u_cap)
                target = 0.0 if targets is None else targets[o][i, j, ch]
            else:
                weight = min(r[i, j] ** 2, cap)
                target = 0.0
            for i1, v1 in coeffs.items():
                b[i1] += weight * target * v1
                for i2, v2 in coeffs.items():
                    a[i1, i2] += weight * v1 * v2
    return a, b


def dense_scale_system(w, xi, sd2_row, sd2_col, cap_ratio=DEFAULT_CAP_RATIO):
    """Hessian and rhs of the 2-D scale-field objective."""
    h, wd = w.shape
    cap = cap_ratio * w.max()
    a = np.diag(w.ravel().astype(float))
    for i in range(h):
        for j in range(wd):
            for (pi, pj), s2 in (((i, j - 1), sd2_row[i, j]), ((i - 1, j), sd2_col[i, j])):
                if pi < 0 or pj < 0:
                    continue
                prec = cap if s2 == 0 else min(1.0 / s2, cap)
                k, q = i * wd + j, pi * wd + pj
                a[k, k] += prec
                a[q, q] += prec
                a[k, q] -= prec
                a[q, k] -= prec
    return a, xi.ravel().astype(float)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
