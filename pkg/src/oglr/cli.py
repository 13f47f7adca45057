"""Command-line entry point.

Subcommands: ``denoise``, ``synth``, ``metrics``, ``lab gamma-sweep``,
``lab convergence`` and ``bench``.  Denoiser parameters come from the
built-in defaults, then an optional ``key = value`` config file, then
command-line flags (``--gamma``, ``--workers`` and repeated
``--set key=value``).  Exit status is 0 on success, 1 on a runtime
failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diffusion_lab, image_io
from .denoiser import OglrParams, default_workers, denoise_image

log = logging.getLogger("oglr")

WORKERS_ENV = "OGLR_WORKERS"


class UsageError(Exception):
    pass


def _parse_schedule(text):
    rows = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 4:
            raise UsageError(f"bad schedule row {item!r}; expected bound:side:K:stride")
        bound = math.inf if parts[0].strip() in ("inf", "Inf") else float(parts[0])
        rows.append((bound, int(parts[1]), int(parts[2]), int(parts[3])))
    return tuple(rows)


def _param_types():
    types = {}
    for f in dataclasses.fields(OglrParams):
        default = f.default
        if f.name == "schedule":
            types[f.name] = _parse_schedule
        elif f.name == "search_radius":
            types[f.name] = lambda v: None if v.strip().lower() == "none" else int(v)
        elif isinstance(default, bool):
            types[f.name] = lambda v: v.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            types[f.name] = int
        else:
            types[f.name] = float
    return types


PARAM_TYPES = _param_types()


def parse_assignments(lines, source):
    """``key = value`` pairs; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARAM_TYPES:
            raise UsageError(f"{source}:{n}: unknown key {key!r}")
        try:
            out[key] = PARAM_TYPES[key](value)
        except ValueError as exc:
            raise UsageError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return out


def build_params(args) -> OglrParams:
    """Defaults < config file < flags."""
    values = {"workers": default_workers()}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(parse_assignments(fh, args.config))
    values.update(parse_assignments(getattr(args, "set", None) or [], "--set"))
    if getattr(args, "gamma", None) is not None:
        values["gamma"] = args.gamma
    if getattr(args, "workers", None) is not None:
        values["workers"] = args.workers
    try:
        return OglrParams(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def read_input(path) -> np.ndarray:
    """Image file, or a ``.npy`` array for unclamped data."""
    if str(path).endswith(".npy"):
        return image_io.as_image(np.load(path))
    return image_io.load_image(path)


def _write_report(report, path):
    if str(path).endswith(".csv"):
        report.write_csv(path)
    else:
        report.write_json(path)


def cmd_denoise(args) -> int:
    params = build_params(args)
    inputs = args.inputs
    ref = read_input(args.ref) if args.ref else None
    if len(inputs) > 1:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for path in inputs:
            t0 = time.perf_counter()
            out, report = denoise_image(read_input(path), args.sigma, params)
            dest = out_dir / (Path(path).stem + ".png")
            image_io.save_image(out, dest)
            rows.append({"image": path, "output": str(dest), "sigma": args.sigma,
                         "gamma": params.gamma, "iterations": len(report.iterations),
                         "sigma_final": report.iterations[-1].sigma,
                         "seconds": round(time.perf_counter() - t0, 3)})
            log.info("%s -> %s", path, dest)
        report_path = args.report or out_dir / "report.csv"
        with open(report_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        return 0

    out, report = denoise_image(read_input(inputs[0]), args.sigma, params, reference=ref)
    image_io.save_image(out, args.out)
    if args.raw_out:
        np.save(args.raw_out, out)
    report_path = args.report or str(Path(args.out).with_suffix(".json"))
    _write_report(report, report_path)
    if report.psnr is not None:
        print(f"psnr {report.psnr:.4f} dB  ssim {report.ssim:.4f}")
    return 0


def cmd_synth(args) -> int:
    clean = read_input(args.inputs)
    noisy = image_io.add_awgn(clean, image_io.NoiseSpec(args.sigma, args.seed))
    image_io.save_image(noisy, args.out)
    raw = args.raw_out or str(Path(args.out).with_suffix(".npy"))
    np.save(raw, noisy)
    stored = image_io.load_image(args.out)
    print(f"psnr {image_io.psnr(clean, noisy):.4f} dB (unclamped)")
    print(f"psnr {image_io.psnr(clean, stored):.4f} dB (8-bit file)")
    return 0


def cmd_metrics(args) -> int:
    a = read_input(args.reference)
    b = read_input(args.test)
    print(f"psnr {image_io.psnr(a, b):.4f}")
    print(f"ssim {image_io.ssim(a, b):.4f}")
    return 0


def cmd_gamma_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = {"glow": diffusion_lab.make_glow(), "disk": diffusion_lab.make_disk()}
    rows = []
    for name, img in images.items():
        initial = diffusion_lab.boundary_sharpness(img)
        for gamma in args.gammas:
            out = diffusion_lab.filter_synthetic(img, gamma, args.iters, epsilon=args.epsilon,
                                                 r=args.radius)
            image_io.save_image(out, out_dir / f"{name}_gamma{gamma:g}.png")
            sharp = diffusion_lab.boundary_sharpness(out)
            rows.append([name, gamma, args.iters, initial, sharp, sharp / initial])
            log.info("%s gamma=%g sharpness %.3f (initial %.3f)", name, gamma, sharp, initial)
    with open(out_dir / "sharpness.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "gamma", "iters", "initial_sharpness", "sharpness", "ratio"])
        writer.writerows(rows)
    return 0


def cmd_convergence(args) -> int:
    trials = diffusion_lab.convergence_experiment(args.exemplar, sorted(args.m), args.gamma,
                                                  args.c_r, args.candidate, args.seed)
    if args.out:
        diffusion_lab.write_trials_csv(trials, args.out)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow([f.name for f in dataclasses.fields(diffusion_lab.ConvergenceTrial)])
        writer.writerows(dataclasses.astuple(t) for t in trials)
    return 0


def cmd_bench(args) -> int:
    params = build_params(args)
    rows = []
    for path in args.images:
        clean = read_input(path)
        for sigma in args.sigmas:
            for seed in args.seeds:
                noisy = image_io.add_awgn(clean, image_io.NoiseSpec(sigma, seed))
                t0 = time.perf_counter()
                _, report = denoise_image(noisy, sigma, params, reference=clean)
                rows.append([Path(path).stem, sigma, seed, params.gamma,
                             round(report.psnr, 4), round(report.ssim, 4),
                             round(time.perf_counter() - t0, 2)])
                log.info("%s sigma=%g seed=%d psnr %.3f", path, sigma, seed, report.psnr)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "sigma", "seed", "gamma", "psnr", "ssim", "seconds"])
        writer.writerows(rows)
        # Mean rows per (image, sigma).
        keys = sorted({(r[0], r[1]) for r in rows})
        for name, sigma in keys:
            sel = [r for r in rows if r[0] == name and r[1] == sigma]
            writer.writerow([name, sigma, "mean", params.gamma,
                             round(float(np.mean([r[4] for r in sel])), 4),
                             round(float(np.mean([r[5] for r in sel])), 4),
                             round(float(np.sum([r[6] for r in sel])), 2)])
    return 0


def _add_param_flags(p):
    p.add_argument("--config", help="key = value file of denoiser parameters")
    p.add_argument("--gamma", type=float,
                   help="normalization exponent (0.6 natural, 0 piecewise smooth)")
    p.add_argument("--workers", type=int,
                   help=f"patch worker threads (default ${WORKERS_ENV} or CPU count)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any denoiser parameter; repeatable")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oglr",
        description="Graph Laplacian regularization denoiser and diffusion experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="per-iteration log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise one image or a batch")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="noisy image(s); .npy for unclamped data")
    p.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p.add_argument("--out", required=True, help="output image, or directory for a batch")
    p.add_argument("--ref", help="clean reference for PSNR/SSIM")
    p.add_argument("--report", help="report path (.json or .csv)")
    p.add_argument("--raw-out", help="also save the unquantized result as .npy")
    _add_param_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("synth", help="add seeded white Gaussian noise")
    p.add_argument("--in", dest="inputs", required=True, help="clean image")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="clamped 8-bit noisy image")
    p.add_argument("--raw-out", help="unclamped .npy sidecar (default: next to --out)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    p.add_argument("reference")
    p.add_argument("test")
    p.set_defaults(func=cmd_metrics)

    lab = sub.add_parser("lab", help="diffusion experiments")
    lab_sub = lab.add_subparsers(dest="lab_command", required=True)
    p = lab_sub.add_parser("gamma-sweep", help="filter Glow and Disk for several gammas")
    p.add_argument("--iters", type=int, default=40)
    p.add_argument("--gammas", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    p.add_argument("--epsilon", type=float,
                   help="kernel bandwidth (default 0.04 * (1 + intensity range))")
    p.add_argument("--radius", type=float,
                   help="feature-space edge threshold (default: min-degree rule; inf keeps all)")
    p.add_argument("--out-dir", default="gamma_sweep")
    p.set_defaults(func=cmd_gamma_sweep)

    p = lab_sub.add_parser("convergence", help="graph regularizer convergence ratios")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--m", type=int, nargs="+", default=[500, 1000, 2000, 4000, 8000])
    p.add_argument("--c-r", type=float, default=diffusion_lab.DEFAULT_C_R)
    p.add_argument("--exemplar", choices=["identity", "curved"], default="identity")
    p.add_argument("--candidate", choices=["ramp", "sinusoid", "constant"], default="ramp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("bench", help="seeded PSNR/SSIM table over a corpus")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--sigmas", type=float, nargs="+", default=[20.0, 40.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="bench.csv")
    _add_param_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"oglr: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"oglr: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
