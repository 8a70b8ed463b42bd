"""Command-line interface.

Subcommands::

    narmsr degrade  HR_DIR LR_DIR --mode direct --scale 2
    narmsr sr       LR_DIR SR_DIR --degradation direct --scale 2 [--config FILE] [--plus]
    narmsr eval     SR_DIR GT_DIR [--crop N] [--out metrics.csv]
    narmsr kernels  gen|pca|stretch ...
    narmsr report   SR_DIR [--out DIR]

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA, ConfigError, apply_settings, config_to_dict, load_config
from .degradation import (
    DEFAULT_KERNEL_SIZE,
    MODES,
    PCA_DIMS,
    ConfigurationError,
    DegradationOp,
    add_gaussian_noise,
    kernel_stretch,
    make_gaussian_kernel,
    pca_fit,
    read_codebook,
    read_kernel,
    sample_kernel_widths,
    write_codebook,
    write_kernel,
)
from .imagecore import (
    InvalidInputError,
    list_images,
    read_image,
    rgb_to_ycbcr,
    to_luminance,
    to_uint8,
    write_image,
    ycbcr_to_rgb,
)
from .metrics import evaluate_dataset, write_report_csv
from .solver import SolverConfig, self_ensemble, solve

log = logging.getLogger("narmsr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _io(fn, *args):
    """Run a file operation, mapping failures to the I/O exit code."""
    try:
        return fn(*args)
    except (OSError, InvalidInputError) as exc:
        raise CliError(str(exc), EXIT_IO) from None


def _input_dir(path) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise CliError(f"not a directory: {path}", EXIT_IO)
    return path


def _output_dir(path) -> Path:
    path = Path(path)
    _io(lambda: path.mkdir(parents=True, exist_ok=True))
    return path


def _images(directory) -> list[Path]:
    files = _io(list_images, _input_dir(directory))
    if not files:
        raise CliError(f"no images in {directory}", EXIT_IO)
    return files


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_image(img: np.ndarray) -> str:
    """Hash of the 8-bit samples as they would be written."""
    return hashlib.sha256(to_uint8(img).tobytes()).hexdigest()


# -- degrade ----------------------------------------------------------------

def cmd_degrade(args) -> int:
    if args.noise_sigma and args.seed is None:
        raise CliError("--seed is required when --noise-sigma > 0", EXIT_USAGE)
    if args.mode == "blur_direct":
        if args.kernel_width is None:
            raise CliError("--kernel-width is required for --mode blur_direct", EXIT_USAGE)
        kernel = make_gaussian_kernel(args.kernel_width, args.kernel_size)
    elif args.kernel_width is not None:
        raise CliError(f"--kernel-width only applies to blur_direct, not {args.mode}", EXIT_USAGE)
    else:
        kernel = None
    op = DegradationOp(args.mode, args.scale, kernel)
    files = _images(args.hr_dir)
    out = _output_dir(args.lr_dir)
    if kernel is not None:
        _io(write_kernel, out / "kernel.txt", kernel)
    for k, path in enumerate(files):
        lr = op.apply(_io(read_image, path))
        if args.noise_sigma:
            # one stream per file, derived from the seed and the file position
            lr = add_gaussian_noise(lr, args.noise_sigma, args.seed + k)
        _io(write_image, out / f"{path.stem}.png", np.clip(lr, 0.0, 1.0))
        log.info("%s -> %dx%d", path.name, lr.shape[1], lr.shape[0])
    return EXIT_OK


# -- sr ---------------------------------------------------------------------

def _config_from_args(args) -> SolverConfig:
    cfg = load_config(args.config) if args.config else SolverConfig()
    overrides = {key: getattr(args, key) for key in SCHEMA if getattr(args, key, None) is not None}
    return apply_settings(cfg, overrides) if overrides else cfg


def _operator_from_args(args) -> DegradationOp:
    kernel = _io(read_kernel, args.kernel) if args.kernel else None
    return DegradationOp(args.degradation, args.scale, kernel)


def _superresolve_image(lr, op, cfg, plus: bool, workers: int, reference=None) -> tuple[np.ndarray, dict]:
    """Solve on luminance; colour images get their chroma by interpolation."""
    color = lr.ndim == 3 and lr.shape[2] == 3
    planes = rgb_to_ycbcr(lr) if color else None
    y = planes[..., 0] if color else to_luminance(lr)
    ref = to_luminance(reference) if reference is not None else None
    info = {}
    if plus:
        sr, branches = self_ensemble(y, op, cfg, workers=workers, return_branches=True)
        info["branch_sha256"] = [sha256_image(b) for b in branches]
        info["history"] = None
    else:
        result = solve(y, op, cfg, reference=ref)
        sr = result.x
        info["history"] = result.history
    if color:
        chroma = [np.clip(op.interpolate(planes[..., c]), 0.0, 1.0) for c in (1, 2)]
        sr = np.clip(ycbcr_to_rgb(np.stack([sr, *chroma], axis=-1)), 0.0, 1.0)
    return sr, info


def cmd_sr(args) -> int:
    cfg = _config_from_args(args)
    op = _operator_from_args(args)
    files = _images(args.lr_dir)
    out = _output_dir(args.sr_dir)
    gt = {p.stem: p for p in _io(list_images, _input_dir(args.gt_dir))} if args.gt_dir else {}

    def run(path):
        t0 = time.perf_counter()
        lr = _io(read_image, path)
        reference = _io(read_image, gt[path.stem]) if path.stem in gt else None
        if reference is not None and reference.shape[:2] != op.hr_shape(lr.shape[:2]):
            raise CliError(f"ground truth {gt[path.stem].name} does not match the output size", EXIT_IO)
        sr, info = _superresolve_image(lr, op, cfg, args.plus, args.branch_workers, reference)
        target = out / f"{path.stem}.png"
        _io(write_image, target, sr)
        manifest = {
            "command": ["narmsr", *args.argv],
            "version": __version__,
            "config": config_to_dict(cfg),
            "degradation": {"mode": op.mode, "scale": op.scale,
                            "kernel": str(args.kernel) if args.kernel else None},
            "plus": args.plus,
            "input": {"path": str(path), "sha256": sha256_file(path)},
            "ground_truth": str(gt[path.stem]) if reference is not None else None,
            "output": {"path": str(target), "sha256": sha256_file(target)},
            "seconds": time.perf_counter() - t0,
            **info,
        }
        _io((out / f"{path.stem}.json").write_text, json.dumps(manifest, indent=2) + "\n")
        log.info("%s done in %.2fs", path.name, manifest["seconds"])

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            list(pool.map(run, files))
    else:
        for path in files:
            run(path)
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    crop = args.scale if args.crop is None else args.crop
    report = evaluate_dataset(_input_dir(args.sr_dir), _input_dir(args.gt_dir), crop)
    for name in report.missing:
        print(f"missing pair: {name}", file=sys.stderr)
    if not report.per_image:
        print("no matching image pairs", file=sys.stderr)
        return EXIT_IO
    sys.stdout.write(report.to_csv())
    if args.out:
        _io(write_report_csv, args.out, report)
    return EXIT_OK if report.complete else EXIT_IO


# -- kernels ----------------------------------------------------------------

def cmd_kernels_gen(args) -> int:
    widths = sample_kernel_widths(args.count, args.low, args.high, args.seed)
    out = _output_dir(args.out_dir)
    for k, width in enumerate(widths):
        _io(write_kernel, out / f"kernel_{k:04d}.txt", make_gaussian_kernel(float(width), args.size))
    return EXIT_OK


def cmd_kernels_pca(args) -> int:
    d = args.dims if args.dims is not None else PCA_DIMS.get(args.scale)
    if d is None:
        raise CliError(f"no default codebook size for scale {args.scale}; pass --dims", EXIT_USAGE)
    files = sorted(_input_dir(args.kernel_dir).glob("*.txt"))
    if not files:
        raise CliError(f"no kernel files in {args.kernel_dir}", EXIT_IO)
    kernels = [_io(read_kernel, f) for f in files]
    codebook = pca_fit(kernels, d)
    _io(write_codebook, args.out, codebook)
    return EXIT_OK


def cmd_kernels_stretch(args) -> int:
    kernel = _io(read_kernel, args.kernel)
    codebook = _io(read_codebook, args.codebook)
    stretched = kernel_stretch(kernel, codebook, args.height, args.width)
    _io(np.save, args.out, stretched)
    return EXIT_OK


# -- report -----------------------------------------------------------------

def _load_manifests(directory) -> dict[str, dict]:
    manifests = {}
    for path in sorted(_input_dir(directory).glob("*.json")):
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read manifest {path}: {exc}", EXIT_IO) from None
        if data.get("history"):
            manifests[path.stem] = data
    return manifests


def cmd_report(args) -> int:
    from .plotting import plot_gain_bars, plot_stage_curves

    manifests = _load_manifests(args.sr_dir)
    if not manifests:
        raise CliError(f"no run manifests with per-stage history in {args.sr_dir}", EXIT_IO)
    out = _output_dir(args.out or args.sr_dir)
    histories = {name: m["history"] for name, m in manifests.items()}

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "stage", "objective", "psnr_db", "seconds"])
    for name, hist in histories.items():
        for h in hist:
            writer.writerow([
                name, h["stage"],
                "" if h.get("objective") is None else f"{h['objective']:.6f}",
                "" if h.get("psnr_db") is None else f"{h['psnr_db']:.6f}",
                f"{h['seconds']:.6f}",
            ])
    text = buf.getvalue()
    sys.stdout.write(text)
    _io((out / "stages.csv").write_text, text)

    figures = [plot_stage_curves(histories, "objective", "objective", out / "stage_objective.png")]
    with_psnr = {n: h for n, h in histories.items() if all("psnr_db" in e for e in h)}
    if with_psnr:
        figures.append(plot_stage_curves(with_psnr, "psnr_db", "PSNR (dB)", out / "stage_psnr.png"))
        names = sorted(with_psnr)
        gains = [with_psnr[n][-1]["psnr_db"] - with_psnr[n][0]["psnr_db"] for n in names]
        figures.append(plot_gain_bars(names, gains, out / "psnr_gain.png", args.threshold))
        print(f"# mean PSNR gain over init: {np.mean(gains):+.4f} dB over {len(names)} images", file=sys.stderr)
    for fig in figures:
        print(f"# figure: {fig}", file=sys.stderr)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("solver settings (override the config file)")
    for key, (_, help_text) in SCHEMA.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="V", help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="narmsr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"narmsr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("degrade", help="synthesize low-resolution images")
    p.add_argument("hr_dir")
    p.add_argument("lr_dir")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--kernel-width", type=float, help="Gaussian blur width (blur_direct only)")
    p.add_argument("--kernel-size", type=int, default=DEFAULT_KERNEL_SIZE)
    p.add_argument("--noise-sigma", type=float, default=0.0, help="noise std in [0,1] intensity units")
    p.add_argument("--seed", type=int, help="noise seed (required with --noise-sigma)")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("sr", help="super-resolve a directory of images")
    p.add_argument("lr_dir")
    p.add_argument("sr_dir")
    p.add_argument("--degradation", choices=MODES, required=True, help="degradation model of the inputs")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--kernel", help="kernel file for blur_direct")
    p.add_argument("--config", help="key = value solver configuration file")
    p.add_argument("--plus", action="store_true", help="8-branch dihedral self-ensemble")
    p.add_argument("--gt-dir", help="ground truth for per-stage PSNR in the manifests")
    p.add_argument("--workers", type=int, default=1, help="images processed concurrently")
    p.add_argument("--branch-workers", type=int, default=1, help="ensemble branches run concurrently")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM of SR outputs against ground truth")
    p.add_argument("sr_dir")
    p.add_argument("gt_dir")
    p.add_argument("--scale", type=int, default=2, help="default border crop")
    p.add_argument("--crop", type=int, help="border crop in pixels (default: scale)")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("kernels", help="blur kernel tooling")
    ksub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ksub.add_parser("gen", help="sample kernel widths uniformly")
    g.add_argument("out_dir")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--low", type=float, default=0.2)
    g.add_argument("--high", type=float, default=3.0)
    g.add_argument("--size", type=int, default=DEFAULT_KERNEL_SIZE)
    g.add_argument("--seed", type=int, required=True)
    g.set_defaults(func=cmd_kernels_gen)
    g = ksub.add_parser("pca", help="fit a PCA codebook to kernel files")
    g.add_argument("kernel_dir")
    g.add_argument("out")
    g.add_argument("--scale", type=int, default=2, help="selects the codebook size")
    g.add_argument("--dims", type=int, help="explicit codebook size")
    g.set_defaults(func=cmd_kernels_pca)
    g = ksub.add_parser("stretch", help="project a kernel and broadcast to a d x H x W .npy map")
    g.add_argument("kernel")
    g.add_argument("codebook")
    g.add_argument("out")
    g.add_argument("--height", type=int, required=True)
    g.add_argument("--width", type=int, required=True)
    g.set_defaults(func=cmd_kernels_stretch)

    p = sub.add_parser("report", help="per-stage CSV and figures from sr manifests")
    p.add_argument("sr_dir")
    p.add_argument("--out", help="directory for stages.csv and figures (default: sr_dir)")
    p.add_argument("--threshold", type=float, default=None, help="reference line on the gain plot (dB)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"narmsr: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ConfigurationError, InvalidInputError) as exc:
        print(f"narmsr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"narmsr: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"narmsr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
