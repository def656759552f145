"""Command-line interface: ``nlrspirit <subcommand> ...``.

Exit codes are 0 on success, 1 for usage errors (bad flags or parameter
values) and 2 for runtime errors (missing or malformed files, solver
failures). Errors are reported on stderr as one JSON line.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .calibration import calibrate, calibrate_from_mask
from .fourier import fft2c, ifft2c, sos_combine
from .io import (
    atomic_write_bytes,
    build_manifest,
    file_digest,
    read_container,
    read_roi,
    write_container,
    write_log_csv,
    write_manifest,
)
from .metrics import evaluate
from .sampling import PATTERNS, MaskSpec, PhantomSpec, make_mask, make_phantom
from .solvers import ReconConfig, default_stopping, reconstruct

__all__ = ["main", "build_parser", "parse_range", "UsageError"]

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Invalid command line or parameter value."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_range(text):
    """Parse ``start:stop:step`` (inclusive of ``stop``) or a comma list into floats."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _default_threads():
    try:
        return max(1, int(os.environ.get("NLRSPIRIT_THREADS", "1")))
    except ValueError:
        return 1


def _add_recon_flags(p):
    d = ReconConfig()
    p.add_argument("--solver", choices=("ne", "admm"), default=d.solver)
    p.add_argument("--mode", choices=("weighted", "nuclear"), default=d.mode)
    p.add_argument("--mu1", type=float, default=d.mu1)
    p.add_argument("--mu2", type=float, default=d.mu2)
    p.add_argument("--delta", type=float, default=d.delta)
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--b0", type=float, default=d.b0)
    p.add_argument("--patch", type=int, default=d.patch_side, dest="patch_side")
    p.add_argument("--m", type=int, default=d.m)
    p.add_argument("--window", type=int, default=d.window)
    p.add_argument("--stride", type=int, default=d.stride)
    p.add_argument("--T", type=int, default=d.T, dest="T", help="block-matching period")
    p.add_argument("--max-iter", type=int, default=None, help="default: 30 for 2D masks, 80 for 1D")
    p.add_argument("--tol", type=float, default=None, help="default: 1e-4 for 2D masks, 5e-5 for 1D")
    for name in ("beta1", "beta2", "beta3", "eta1", "eta2", "eta3"):
        p.add_argument(f"--{name}", type=float, default=None, help="ADMM variant only")
    p.add_argument("--ks", type=int, default=5, help="kernel size when calibrating")
    p.add_argument("--lambda", type=float, default=None, dest="tikhonov_lambda")


def build_parser():
    parser = _Parser(prog="nlrspirit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads (default: $NLRSPIRIT_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the shared flags are also accepted after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="synthetic multicoil phantom (k-space + reference)")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0, help="complex noise standard deviation")
    p.add_argument("--amplitude", type=float, default=PhantomSpec.amplitude)
    p.add_argument("--edge-sigma", type=float, default=PhantomSpec.edge_sigma)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-kspace", required=True)
    p.add_argument("--out-reference", required=True)

    p = sub.add_parser("mask", parents=[common], help="undersampling mask")
    p.add_argument("--pattern", choices=PATTERNS, default="poisson2d")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--af", type=float, default=5.0)
    p.add_argument("--acs", type=_int_list, default=None,
                   help="ACS size: 'rows,cols' for poisson2d, column count for 1D patterns")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="estimate a SPIRiT kernel from the ACS block")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--acs", type=_int_list, default=None, help="central ACS sub-block 'rows,cols'")
    p.add_argument("--ks", type=int, default=5)
    p.add_argument("--lambda", type=float, default=None, dest="tikhonov_lambda")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", parents=[common], help="run the reconstruction")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--kernel", default=None, help="kernel container (default: calibrate from the ACS)")
    p.add_argument("--reference", default=None, help="log SNR/HFEN/SSIM every iteration")
    p.add_argument("--roi", default=None)
    _add_recon_flags(p)
    p.add_argument("--out", required=True, help="SOS magnitude image container")
    p.add_argument("--out-coils", default=None, help="optional coil image container")
    p.add_argument("--log", default=None, help="CSV iteration log")
    p.add_argument("--manifest", default=None, help="JSON run manifest")

    p = sub.add_parser("metrics", parents=[common], help="SNR, HFEN and SSIM of a reconstruction")
    p.add_argument("--reference", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--roi", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")

    p = sub.add_parser("sweep", parents=[common], help="metric surface over delta/beta and ACS/kernel sizes")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--roi", default=None)
    p.add_argument("--delta-grid", "--deltas", dest="delta_grid", type=parse_range, default=None,
                   help="delta values, e.g. 1:6:1 (inclusive) or 1,2,3")
    p.add_argument("--beta-grid", "--betas", dest="beta_grid", type=parse_range, default=None,
                   help="beta values, e.g. 0.1:1:0.1")
    p.add_argument("--acs-sizes", dest="acs_sizes", type=_int_list, default=None,
                   help="square central ACS sizes used for calibration, e.g. 12,16,20")
    p.add_argument("--ks-sizes", dest="ks_sizes", type=_int_list, default=None, help="kernel sizes, e.g. 3,5,7")
    _add_recon_flags(p)
    p.add_argument("--out", required=True, help="CSV with one row per grid point")
    return parser


def _fix_sweep_aliases(argv):
    # ``--delta 1:6:1`` on the sweep subcommand is a grid, not a scalar
    if "sweep" not in argv:
        return argv
    i = argv.index("sweep")
    head, tail = argv[: i + 1], argv[i + 1 :]
    alias = {"--delta": "--delta-grid", "--beta": "--beta-grid", "--acs": "--acs-sizes", "--ks": "--ks-sizes"}
    return head + [alias.get(a, a) for a in tail]


def _config_from(args, mask):
    K, tol = default_stopping(mask)
    try:
        return ReconConfig(
            mu1=args.mu1, mu2=args.mu2, delta=args.delta, beta=args.beta, eta=args.eta, b0=args.b0,
            patch_side=args.patch_side, m=args.m, window=args.window, stride=args.stride, T=args.T,
            K=args.max_iter if args.max_iter is not None else K,
            tol=args.tol if args.tol is not None else tol,
            mode=args.mode, solver=args.solver,
            beta1=args.beta1, beta2=args.beta2, beta3=args.beta3,
            eta1=args.eta1, eta2=args.eta2, eta3=args.eta3,
            threads=args.threads,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _expect(obj, kind, path):
    if kind == "complex" and isinstance(obj, np.ndarray) and np.iscomplexobj(obj):
        return obj
    if kind == "real" and isinstance(obj, np.ndarray) and not np.iscomplexobj(obj):
        return obj
    if kind == "mask" and type(obj).__name__ == "SamplingMask":
        return obj
    if kind == "kernel" and type(obj).__name__ == "CalibKernel":
        return obj
    raise ValueError(f"{path}: expected a {kind} container, found {type(obj).__name__}")


def _load(path, kind):
    return _expect(read_container(path), kind, path)


def _central_acs(mask, size):
    """Central ``rows x cols`` sub-block of the mask's ACS region."""
    rows, cols = (size * 2)[:2] if len(size) == 1 else size[:2]
    (r0, r1), (c0, c1) = mask.acs_rows, mask.acs_cols
    if rows > r1 - r0 or cols > c1 - c0 or rows < 1 or cols < 1:
        raise UsageError(f"ACS size {rows}x{cols} does not fit in the mask's {r1 - r0}x{c1 - c0} ACS block")
    ra = r0 + (r1 - r0 - rows) // 2
    ca = c0 + (c1 - c0 - cols) // 2
    return (ra, ra + rows), (ca, ca + cols)


def _calibrate(Y, mask, ks, lam, acs=None):
    if acs is None:
        return calibrate_from_mask(Y, mask, ks, lam)
    (r0, r1), (c0, c1) = _central_acs(mask, acs)
    return calibrate(np.asarray(Y)[:, r0:r1, c0:c1], None, ks, lam)


def cmd_phantom(args):
    try:
        spec = PhantomSpec(args.nx, args.ny, args.coils, args.noise, args.seed, args.amplitude, args.edge_sigma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    coils, ref = make_phantom(spec)
    write_container(args.out_kspace, fft2c(coils))
    write_container(args.out_reference, ref)


def cmd_mask(args):
    acs = args.acs
    if acs is None:
        acs = (24, 24) if args.pattern == "poisson2d" else (20,)
    elif len(acs) == 1 and args.pattern == "poisson2d":
        acs = acs * 2
    try:
        mask = make_mask(MaskSpec(args.pattern, args.af, tuple(acs), args.seed), args.nx, args.ny)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_container(args.out, mask)


def cmd_calibrate(args):
    Y = _load(args.kspace, "complex")
    mask = _load(args.mask, "mask")
    write_container(args.out, _calibrate(Y, mask, args.ks, args.tikhonov_lambda, args.acs))


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_reconstruct(args, argv):
    started = _now()
    t0 = time.perf_counter()
    Y = _load(args.kspace, "complex").astype(np.complex128)
    mask = _load(args.mask, "mask")
    config = _config_from(args, mask)
    if args.kernel:
        kernel = _load(args.kernel, "kernel")
    else:
        kernel = calibrate_from_mask(Y, mask, args.ks, args.tikhonov_lambda)
    reference = None if args.reference is None else _load(args.reference, "real").astype(float)
    roi = None if args.roi is None else read_roi(args.roi)
    result = reconstruct(Y, mask, kernel, config, reference, roi)

    write_container(args.out, result.image)
    outputs = {"image": args.out}
    if args.out_coils:
        write_container(args.out_coils, result.coils)
        outputs["coils"] = args.out_coils
    if args.log:
        write_log_csv(args.log, result.log)
    if args.manifest:
        inputs = {"kspace": args.kspace, "mask": args.mask}
        for role in ("kernel", "reference", "roi"):
            if getattr(args, role):
                inputs[role] = getattr(args, role)
        cfg = config.to_dict()
        cfg.update(ks=args.ks, tikhonov_lambda=args.tikhonov_lambda, auto_calibrated=args.kernel is None)
        runtime = {
            "started": started,
            "finished": _now(),
            "elapsed_s": time.perf_counter() - t0,
            "threads": args.threads,
            "argv": list(argv),
        }
        if args.log:
            # the log carries wall-clock columns, so it is recorded with the runtime facts
            runtime["log"] = {"path": str(args.log), "sha256": file_digest(args.log)}
        manifest = build_manifest(
            ["reconstruct"], cfg, inputs, outputs, seed=None, runtime=runtime
        )
        manifest["result"] = {"iterations": result.log.n_iter, "converged": result.log.converged}
        write_manifest(args.manifest, manifest)


def _emit(text, out):
    if out:
        atomic_write_bytes(out, text.encode())
    else:
        sys.stdout.write(text)


def cmd_metrics(args):
    ref = _load(args.reference, "real").astype(float)
    rec = read_container(args.recon)
    if isinstance(rec, np.ndarray) and np.iscomplexobj(rec):
        rec = sos_combine(rec)
    rec = _expect(np.asarray(rec, dtype=np.float64), "real", args.recon)
    roi = None if args.roi is None else read_roi(args.roi)
    report = evaluate(ref, rec, roi).as_dict()
    if args.format == "json":
        _emit(json.dumps(report, sort_keys=True) + "\n", args.out)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(report), lineterminator="\n")
        w.writeheader()
        w.writerow(report)
        _emit(buf.getvalue(), args.out)


def cmd_sweep(args):
    Y = _load(args.kspace, "complex").astype(np.complex128)
    mask = _load(args.mask, "mask")
    ref = _load(args.reference, "real").astype(float)
    roi = None if args.roi is None else read_roi(args.roi)
    base = _config_from(args, mask)
    deltas = args.delta_grid or [base.delta]
    betas = args.beta_grid or [base.beta]
    acs_sizes = args.acs_sizes or [None]
    ks_sizes = args.ks_sizes or [args.ks]
    for v in deltas + betas:
        if not v > 0:
            raise UsageError(f"grid values must be > 0, got {v}")
    if any(a is not None and a < 1 for a in acs_sizes) or any(k < 1 or k % 2 == 0 for k in ks_sizes):
        raise UsageError("ACS sizes must be >= 1 and kernel sizes odd and >= 1")

    fields = ["acs", "ks", "delta", "beta", "snr_db", "hfen", "ssim", "iterations", "converged"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    zero_fill = sos_combine(ifft2c(Y * mask.keep))
    log.info("zero-filled SNR %.3f dB", evaluate(ref, zero_fill, roi).snr_db)
    for acs in acs_sizes:
        for ks in ks_sizes:
            kernel = _calibrate(Y, mask, ks, args.tikhonov_lambda, None if acs is None else [acs])
            for delta in deltas:
                for beta in betas:
                    cfg = replace(base, delta=delta, beta=beta)
                    res = reconstruct(Y, mask, kernel, cfg)
                    rep = evaluate(ref, res.image, roi)
                    writer.writerow({
                        "acs": "" if acs is None else acs, "ks": ks,
                        "delta": repr(delta), "beta": repr(beta),
                        "snr_db": repr(rep.snr_db), "hfen": repr(rep.hfen), "ssim": repr(rep.ssim),
                        "iterations": res.log.n_iter, "converged": int(res.log.converged),
                    })
    atomic_write_bytes(args.out, buf.getvalue().encode())


log = logging.getLogger("nlrspirit")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_fix_sweep_aliases(argv))
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        handler = {
            "phantom": cmd_phantom,
            "mask": cmd_mask,
            "calibrate": cmd_calibrate,
            "metrics": cmd_metrics,
            "sweep": cmd_sweep,
        }
        if args.command == "reconstruct":
            cmd_reconstruct(args, argv)
        else:
            handler[args.command](args)
    except UsageError as exc:
        _report("usage", exc)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        _report(type(exc).__name__, exc)
        return EXIT_RUNTIME
    return EXIT_OK


def _report(kind, exc):
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
