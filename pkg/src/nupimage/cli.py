"""Command-line interface: ``nupimage <command> ...``.

Exit status is 0 on success, 1 on usage errors and 2 when processing fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .augmented import refine_augmented_full
from .basic import edge_maps, estimate_basic
from .imagefile import ImageFormatError, load_image, save_image, to_bytes
from .model import ContractError, HyperParams, ObservationField, as_grid
from .tasks import (PhiSpec, add_noise_gaussian, add_noise_poisson_gaussian, contrast_enhance,
                    inpaint_variance, poisson_gaussian_variance, psnr)

log = logging.getLogger("nupimage")

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_help()}\n{self.prog}: error: {message}")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    sz = g.add_mutually_exclusive_group()
    sz.add_argument("--sigma-z", type=float, help="observation noise std in [0, 1] units")
    sz.add_argument("--sigma-z-inv", type=float, help="1/sigma_z, as quoted in figures")
    g.add_argument("--iters", type=int, help="cycles of each estimator (default 5)")
    g.add_argument("--p", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--beta-delta", type=float)
    g.add_argument("--variant", choices=("lukaj", "mlsp"))
    g.add_argument("--beta-n", type=float, help="free parameter of the mlsp message")
    g.add_argument("--sigma-z-prime", type=float, help="noise std of the refinement stage")
    g.add_argument("--cg-tol", type=float)
    g.add_argument("--cg-max-iters", type=int)
    g.add_argument("--workers", type=int, help="threads for chain smoothing")


def _denoise_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--augmented", action="store_true", help="run the texture-restoring refinement")
    p.add_argument("--reference", type=Path, help="clean image for PSNR reporting")
    p.add_argument("--metrics-json", type=Path, help="write metrics here (needs --reference)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nupimage", description="Piecewise-smooth image estimation with NUP priors.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("denoise", "denoise with white Gaussian noise"),
                           ("denoise-pg", "denoise with Poisson-Gaussian noise"),
                           ("inpaint", "fill masked pixels")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("input", type=Path)
        p.add_argument("--out", type=Path, required=True)
        _model_flags(p)
        _denoise_flags(p)
        if name == "denoise-pg":
            p.add_argument("--alpha", type=float, required=True, help="photon scale")
        if name == "inpaint":
            p.add_argument("--mask", type=Path, required=True, help="image; nonzero marks missing pixels")

    p = sub.add_parser("enhance", help="contrast enhancement by remapping level steps")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--phi", choices=("tanh", "gamma"), default="gamma")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--phi-alpha", type=float, default=1.0)
    p.add_argument("--phi-beta", type=float, default=2.0)
    _model_flags(p)

    p = sub.add_parser("edges", help="write level-step (edge) maps")
    p.add_argument("input", type=Path)
    p.add_argument("--out-row", type=Path)
    p.add_argument("--out-col", type=Path)
    p.add_argument("--out-combined", type=Path)
    _model_flags(p)

    p = sub.add_parser("add-noise", help="synthesize noisy observations")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--alpha", type=float, help="photon scale; adds Poisson noise when given")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("psnr", help="print PSNR in dB between two images")
    p.add_argument("first", type=Path)
    p.add_argument("second", type=Path)

    p = sub.add_parser("run-config", help="run a command described by a key = value file")
    p.add_argument("--config", type=Path, required=True)
    return parser


def _params(args) -> HyperParams:
    if args.sigma_z is None and args.sigma_z_inv is None:
        raise UsageError("one of --sigma-z or --sigma-z-inv is required")
    if args.sigma_z_inv is not None and args.sigma_z_inv <= 0:
        raise UsageError("--sigma-z-inv must be positive")
    sigma_z = args.sigma_z if args.sigma_z is not None else 1.0 / args.sigma_z_inv
    mapping = {"iters": "iterations", "p": "p", "beta": "beta", "beta_delta": "beta_delta",
               "variant": "message_variant", "beta_n": "beta_n", "sigma_z_prime": "sigma_z_prime",
               "cg_tol": "cg_tol", "cg_max_iters": "cg_max_iters", "workers": "workers"}
    extra = {field: getattr(args, flag) for flag, field in mapping.items() if getattr(args, flag) is not None}
    return HyperParams(sigma_z=sigma_z, **extra)


def _restore(y: np.ndarray, like: np.ndarray) -> np.ndarray:
    return y[:, :, 0] if like.ndim == 2 else y


def _run_denoise(args) -> int:
    if args.metrics_json is not None and args.reference is None:
        raise UsageError("--metrics-json needs --reference")
    params = _params(args)
    image = load_image(args.input)
    if args.command == "denoise":
        variance = params.sigma_z ** 2
    elif args.command == "denoise-pg":
        variance = poisson_gaussian_variance(image, args.alpha, params.sigma_z)
    else:
        mask = np.asarray(load_image(args.mask))
        mask = (mask.max(axis=2) if mask.ndim == 3 else mask) > 0
        if mask.shape != image.shape[:2]:
            raise ContractError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
        if mask.all():
            raise ContractError("every pixel is masked")
        variance = inpaint_variance(mask, params.sigma_z)

    start = time.perf_counter()
    obs = ObservationField(as_grid(image), variance)
    basic = estimate_basic(obs, params)
    y, cg_total = basic.latent.y, basic.cg_iterations
    if args.augmented:
        refined = refine_augmented_full(obs, y, params)
        y, cg_total = refined.y, cg_total + refined.cg_iterations
    out = _restore(np.clip(y, 0.0, 1.0), image)
    wall_ms = (time.perf_counter() - start) * 1e3
    save_image(out, args.out)

    if args.reference is not None:
        ref = load_image(args.reference)
        written = to_bytes(out) / 255.0
        metrics = {"psnr_in": psnr(image, ref), "psnr_out": psnr(written, ref), "iterations": basic.cycles,
                   "cg_iterations_total": int(cg_total), "wall_ms": wall_ms}
        log.info("metrics: %s", metrics)
        if args.metrics_json is not None:
            args.metrics_json.write_text(json.dumps(metrics) + "\n")
    return 0


def _run_enhance(args) -> int:
    params = _params(args)
    phi = PhiSpec(args.phi, alpha=args.phi_alpha, beta=args.phi_beta, lam=args.lam, gamma=args.gamma)
    save_image(contrast_enhance(load_image(args.input), params, phi), args.out)
    return 0


def _run_edges(args) -> int:
    params = _params(args)
    outputs = (args.out_row, args.out_col, args.out_combined)
    if all(o is None for o in outputs):
        raise UsageError("give at least one of --out-row, --out-col, --out-combined")
    est = estimate_basic(ObservationField.uniform(load_image(args.input), params.sigma_z), params)
    for path, edge_map in zip(outputs, edge_maps(est.u_row, est.u_col)):
        if path is not None:
            save_image(edge_map, path)
    return 0


def _run_add_noise(args) -> int:
    image = load_image(args.input)
    if args.alpha is None:
        noisy = add_noise_gaussian(image, args.sigma, args.seed)
    else:
        noisy = add_noise_poisson_gaussian(image, args.alpha, args.sigma, args.seed)
    save_image(noisy, args.out)
    return 0


def _run_psnr(args) -> int:
    value = psnr(load_image(args.first), load_image(args.second))
    print("inf" if np.isinf(value) else f"{value:.1f}")
    return 0


def read_config(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        entries[key.strip().replace("_", "-")] = value.strip()
    return entries


def config_to_argv(entries: dict[str, str]) -> list[str]:
    """Turn config entries into an argument list.

    ``command`` names the subcommand and ``input`` (or ``first``/``second``
    for psnr) the positional paths; every other key is a long flag.  Flags
    that take no value are written as ``true`` or ``false``.
    """
    entries = dict(entries)
    command = entries.pop("command", None)
    if command is None:
        raise UsageError("config needs a 'command' entry")
    argv = [command]
    for key in ("input", "first", "second"):
        if key in entries:
            argv.append(entries.pop(key))
    for key, value in entries.items():
        if key in ("augmented",):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(f"--{key}")
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config key {key!r} expects true or false")
        else:
            argv += [f"--{key}", value]
    return argv


def argv_to_config(argv: list[str]) -> str:
    """Render a flag-only invocation as config text that :func:`config_to_argv` reverses."""
    args = build_parser().parse_args(argv)
    lines = [f"command = {args.command}"]
    positional = {"psnr": ("first", "second")}.get(args.command, ("input",))
    lines += [f"{key} = {getattr(args, key)}" for key in positional]
    rest = argv[argv.index(args.command) + 1:]
    i = 0
    while i < len(rest):
        token = rest[i]
        if token.startswith("--"):
            key = token[2:]
            if i + 1 < len(rest) and not rest[i + 1].startswith("--") and key != "augmented":
                lines.append(f"{key} = {rest[i + 1]}")
                i += 2
                continue
            lines.append(f"{key} = true")
        i += 1
    return "\n".join(lines) + "\n"


HANDLERS = {"denoise": _run_denoise, "denoise-pg": _run_denoise, "inpaint": _run_denoise,
            "enhance": _run_enhance, "edges": _run_edges, "add-noise": _run_add_noise, "psnr": _run_psnr}


def _dispatch(parser, argv) -> int:
    args, overrides = parser.parse_known_args(argv)
    if overrides and args.command != "run-config":
        parser.parse_args(argv)  # reports the unknown arguments
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run-config":
        # Flags given after the config path override the file's values.
        args = parser.parse_args(config_to_argv(read_config(args.config)) + overrides)
        if args.command == "run-config":
            raise UsageError("a config file cannot invoke run-config")
    return HANDLERS[args.command](args)


def run_cli(argv=None) -> int:
    """Run one command; returns the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        return _dispatch(parser, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except (ContractError, ImageFormatError, OSError, ArithmeticError, ValueError) as exc:
        print(f"nupimage: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
