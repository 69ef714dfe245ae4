"""Grid search for the prior weights beta and beta_delta.

Scores each pair by the mean PSNR gain of the basic denoiser over the
seeded piecewise-linear suite at noise levels 10/255 and 20/255, and
prints the best pair.  Run with ``python -m nupimage.calibrate``.
"""

from __future__ import annotations

import argparse
import itertools
import sys

import numpy as np

from .model import HyperParams
from .synthetic import SUITE_SEEDS, piecewise_linear
from .tasks import add_noise_gaussian, denoise, psnr

NOISE_LEVELS = (10 / 255, 20 / 255)
BETA_GRID = (1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 11.0, 16.0)
BETA_DELTA_GRID = (0.05, 0.2, 1.0, 5.0)


def noisy_suite(sigma: float, size: int = 128):
    """(clean, noisy) pairs of the fixed suite; noise seed is 100 + image seed."""
    for seed in SUITE_SEEDS:
        clean = piecewise_linear(size, seed)
        yield clean, add_noise_gaussian(clean, sigma, 100 + seed)


def suite_gain(params: HyperParams, sigma: float, size: int = 128) -> float:
    """Mean PSNR gain in dB of the basic denoiser on the suite at noise level ``sigma``."""
    gains = [psnr(denoise(noisy, params), clean) - psnr(noisy, clean)
             for clean, noisy in noisy_suite(sigma, size)]
    return float(np.mean(gains))


def score(beta: float, beta_delta: float, size: int = 128) -> dict[float, float]:
    return {s: suite_gain(HyperParams(sigma_z=s, beta=beta, beta_delta=beta_delta), s, size)
            for s in NOISE_LEVELS}


def grid_search(betas=BETA_GRID, beta_deltas=BETA_DELTA_GRID, size: int = 128, out=sys.stdout):
    """Return ((beta, beta_delta), gains) maximizing the mean gain over both noise levels."""
    best = None
    for beta, beta_delta in itertools.product(betas, beta_deltas):
        gains = score(beta, beta_delta, size)
        total = float(np.mean(list(gains.values())))
        print(f"beta={beta:<6g} beta_delta={beta_delta:<6g} "
              + " ".join(f"gain@{s * 255:.0f}={g:.3f}" for s, g in gains.items())
              + f" mean={total:.3f}", file=out, flush=True)
        if best is None or total > best[0]:
            best = (total, (beta, beta_delta), gains)
    return best[1], best[2]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--betas", type=float, nargs="+", default=list(BETA_GRID))
    parser.add_argument("--beta-deltas", type=float, nargs="+", default=list(BETA_DELTA_GRID))
    parser.add_argument("--size", type=int, default=128)
    args = parser.parse_args(argv)
    (beta, beta_delta), gains = grid_search(args.betas, args.beta_deltas, args.size)
    print(f"best: beta={beta:g} beta_delta={beta_delta:g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
