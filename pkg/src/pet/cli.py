"""``pet`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 non-finite result.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as pio
from .analysis import (
    compare_report,
    format_table,
    metrics,
    power_spectrum,
    radial_average,
    tiled_spectrum,
)
from .horizontal import (
    Dissimilarity,
    apriori_optimize,
    horizontal_minimize,
    permutation_baseline,
    shaped_noise,
)
from .imagecore import BOUNDARY_MODES, Kernel, binomial_kernel, gaussian_kernel, luminance
from .masks import void_and_cluster
from .model import TONEMAPS, PerceptualModel, perceptual_energy, pmse
from .synth import SceneSpec, generate
from .vertical import (
    ORDERS,
    EstimateStack,
    dither,
    error_diffusion,
    expand_power_set,
    histogram_baseline,
    iterative_minimize,
)

log = logging.getLogger("pet")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

OPT_METHODS = ("vertical-iterative", "error-diffusion", "dither", "histogram",
               "horizontal-iterative", "permutation", "shaped-noise", "apriori")
ANALYZE_MODES = ("spectrum", "tiled-spectrum", "metrics", "compare")


class ConfigError(Exception):
    pass


class NumericError(Exception):
    pass


def parse_kernel(spec: str) -> Kernel:
    """``binomial | delta | gaussian:SIGMA[:K] | file:PATH.pfm | highpass:SPEC``."""
    if spec == "binomial":
        return binomial_kernel()
    if spec == "delta":
        return Kernel.delta()
    kind, _, rest = spec.partition(":")
    if kind == "gaussian":
        parts = rest.split(":")
        try:
            sigma = float(parts[0])
            radius = int(parts[1]) if len(parts) > 1 else None
        except (ValueError, IndexError):
            raise ConfigError(f"bad gaussian kernel spec {spec!r}") from None
        if len(parts) > 2:
            raise ConfigError(f"bad gaussian kernel spec {spec!r}")
        try:
            return gaussian_kernel(sigma, radius)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if kind == "file":
        w = pio.read_pfm(rest).astype(np.float64)
        try:
            return Kernel(w)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if kind == "highpass":
        base = parse_kernel(rest)
        if base.varying:
            raise ConfigError("highpass needs a uniform base kernel")
        w = -base.weights.copy()
        w[base.radius, base.radius] += 1.0
        return Kernel(w)
    raise ConfigError(f"unknown kernel spec {spec!r}")


def _float_list(s: str | None):
    if s is None:
        return None
    try:
        return [float(v) for v in s.split(",")]
    except ValueError:
        raise ConfigError(f"bad number list {s!r}") from None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", default="binomial", help="estimate kernel g")
    p.add_argument("--ref-kernel", default="delta", help="reference kernel h")
    p.add_argument("--boundary", default="leaky", choices=BOUNDARY_MODES)
    p.add_argument("--tonemap", default="identity", choices=TONEMAPS)
    p.add_argument("--channel-mode", default="rgb", choices=("rgb", "luminance"))
    p.add_argument("--channel-weights", default=None, help="comma-separated per-channel weights")
    p.add_argument("--confidence", type=float, default=1.0)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-timings", action="store_true",
                   help="store wall-clock timings in the report (makes it non-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pet", description="Perceptual error redistribution for Monte Carlo images.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (env PET_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    op = sub.add_parser("optimize", help="run an optimizer or baseline")
    op.add_argument("method", choices=OPT_METHODS)
    op.add_argument("--stack", help="PES1 estimate stack")
    op.add_argument("--image", help="single estimate image (PFM)")
    op.add_argument("--surrogate", help="surrogate image (PFM)")
    op.add_argument("--mask", help="dither mask (16-bit PGM of ranks)")
    op.add_argument("--mask-size", type=int, default=64)
    op.add_argument("--mask-sigma", type=float, default=1.5)
    op.add_argument("--T", type=int, default=10, help="sweeps")
    op.add_argument("--R", type=int, default=1, help="swap search radius")
    op.add_argument("--r", type=float, default=None, help="travel radius (default R)")
    op.add_argument("--metric", default="chebyshev", choices=("chebyshev", "euclidean"),
                    help="distance used for the travel radius")
    op.add_argument("--tile", type=int, default=8)
    op.add_argument("--order", default="serpentine", choices=ORDERS)
    op.add_argument("--power-set", type=int, default=None, metavar="LIMIT",
                    help="expand estimates to subset averages (at most LIMIT per pixel)")
    op.add_argument("--target", default="gaussian:1.0", help="kernel for shaped-noise")
    op.add_argument("--scene", help="scene spec JSON for apriori")
    op.add_argument("--weights", default="final", choices=("final", "uniform"),
                    help="apriori weights over sample counts")
    op.add_argument("--demodulate", action="store_true", help="use the stack's aux planes")
    _add_model_flags(op)
    _add_run_flags(op)

    an = sub.add_parser("analyze", help="spectra and metrics")
    an.add_argument("mode", choices=ANALYZE_MODES)
    an.add_argument("--image", help="image (or error image) to analyze")
    an.add_argument("--ref", help="reference image; analyze image - ref where relevant")
    an.add_argument("--inputs", nargs="*", default=[], help="images to compare")
    an.add_argument("--tile", type=int, default=32)
    an.add_argument("--bins", type=int, default=32)
    _add_model_flags(an)
    _add_run_flags(an)

    sy = sub.add_parser("synth", help="generate a procedural scene")
    sy.add_argument("--spec", help="scene spec JSON file")
    sy.add_argument("--kind")
    sy.add_argument("--width", type=int)
    sy.add_argument("--height", type=int)
    sy.add_argument("--M", type=int)
    sy.add_argument("--noise")
    sy.add_argument("--amplitude", type=float)
    sy.add_argument("--value", type=float)
    sy.add_argument("--density", type=float)
    sy.add_argument("--freq", type=float)
    sy.add_argument("--count", type=int)
    _add_run_flags(sy)
    return ap


# ---------------------------------------------------------------------------


def _model(args) -> PerceptualModel:
    if not 0.0 <= args.confidence <= 1.0:
        raise ConfigError("confidence must lie in [0, 1]")
    try:
        return PerceptualModel(
            g=parse_kernel(args.kernel),
            h=parse_kernel(args.ref_kernel),
            tonemap=args.tonemap,
            channel_weights=_float_list(args.channel_weights),
            confidence=args.confidence,
            boundary=args.boundary,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _to_mode(img: np.ndarray, mode: str) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if mode == "luminance" and a.ndim == 3 and a.shape[2] == 3:
        return luminance(a)
    return a


def _stack_mode(stack: EstimateStack, mode: str) -> EstimateStack:
    if mode != "luminance" or stack.channels != 3:
        return stack
    return EstimateStack(np.stack([luminance(v) for v in stack.values]), stack.counts, None)


def _need(args, name: str) -> str:
    v = getattr(args, name)
    if not v:
        raise ConfigError(f"--{name.replace('_', '-')} is required here")
    return v


def _mask(args):
    if args.mask:
        return pio.read_mask(args.mask)
    return void_and_cluster(args.mask_size, args.mask_size, args.mask_sigma, args.seed)


def _config(args) -> dict:
    skip = {"out", "threads", "verbose", "report_timings"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _inputs(args) -> dict:
    paths = {}
    for k in ("stack", "image", "surrogate", "mask", "scene", "ref", "spec"):
        v = getattr(args, k, None)
        if v:
            paths[k] = v
    for i, v in enumerate(getattr(args, "inputs", []) or []):
        paths[f"inputs[{i}]"] = v
    if getattr(args, "kernel", "").startswith("file:"):
        paths["kernel"] = args.kernel[5:]
    return {k: {"path": v, "sha256": pio.sha256_file(v)} for k, v in paths.items()}


def _check_finite(**vals) -> None:
    for k, v in vals.items():
        if v is not None and not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite {k}")


def _write_image(path: Path, img: np.ndarray) -> None:
    a = np.asarray(img)
    if a.ndim == 3 and a.shape[2] not in (1, 3):
        # multi-channel results go into a single-estimate stack
        pio.write_stack(path.with_suffix(".pes"), EstimateStack(a[None]))
    else:
        pio.write_pfm(path, a)


def cmd_optimize(args, out: Path) -> dict:
    m = _model(args)
    meth = args.method
    rep: dict = {}
    if meth in ("vertical-iterative", "error-diffusion", "dither", "histogram"):
        stack = _stack_mode(pio.read_stack(_need(args, "stack")), args.channel_mode)
        subsets = None
        if args.power_set is not None:
            try:
                stack, subsets = expand_power_set(stack, args.power_set)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        sur = None
        if meth != "histogram":
            sur = _to_mode(pio.read_pfm(_need(args, "surrogate")), args.channel_mode)
            if sur.shape != stack.shape:
                raise ConfigError(f"surrogate shape {sur.shape} does not match stack {stack.shape}")
        if meth == "vertical-iterative":
            res = iterative_minimize(stack, sur, m, T=args.T, order=args.order, seed=args.seed)
        elif meth == "error-diffusion":
            if args.order == "random":
                raise ConfigError("error diffusion needs serpentine or raster order")
            res = error_diffusion(stack, sur, m, order=args.order)
        elif meth == "dither":
            res = dither(stack, sur, m, _mask(args))
        else:
            res = histogram_baseline(stack, _mask(args))
        pio.write_pgm16_raw(out / "selection.pgm", res.indices)
        if res.trace:
            pio.write_trace_csv(out / "trace.csv", res.trace)
        _check_finite(image=res.image, trace=np.asarray(res.trace, dtype=float))
        _write_image(out / "image.pfm", res.image)
        if subsets is not None:
            rep["subsets"] = {str(k): [list(s) for s in v] for k, v in subsets.items()}
        rep["accepted"] = res.accepted
        rep["trace"] = res.trace
        image = res.image
    elif meth in ("horizontal-iterative", "permutation", "shaped-noise"):
        aux = None
        if args.stack:
            st = pio.read_stack(args.stack)
            est = st.values[0]
            aux = st.aux if args.demodulate else None
            if args.demodulate and aux is None:
                raise ConfigError("--demodulate needs a stack with aux planes")
        else:
            est = pio.read_pfm(_need(args, "image")).astype(np.float64)
        if args.channel_mode == "luminance" and est.ndim == 3 and est.shape[2] == 3:
            if aux is not None:
                raise ConfigError("luminance mode cannot be combined with demodulation")
            est = luminance(est)
        if meth == "horizontal-iterative":
            sur = _to_mode(pio.read_pfm(_need(args, "surrogate")), args.channel_mode)
            if sur.shape != est.shape:
                raise ConfigError("surrogate does not match the estimate image")
            r = args.R if args.r is None else args.r
            try:
                res = horizontal_minimize(est, sur, m, Dissimilarity.disk(r, args.metric), R=args.R, T=args.T,
                                          order=args.order, aux=aux, seed=args.seed)
            except ValueError as e:
                raise ConfigError(str(e)) from None
            perm, image, trace, acc = res.permutation, res.image, res.trace, res.accepted
        elif meth == "permutation":
            perm, image = permutation_baseline(est, _mask(args), args.tile, aux=aux)
            trace, acc = [], []
        else:
            res = shaped_noise(est, parse_kernel(args.target), T=args.T, seed=args.seed)
            perm, image, trace, acc = res.permutation, res.image, res.trace, res.accepted
        pio.write_permutation_csv(out / "permutation.csv", perm)
        pio.write_displacement_pgm(out / "displacement.pgm", perm)
        if trace:
            pio.write_trace_csv(out / "trace.csv", trace)
        _check_finite(image=image, trace=np.asarray(trace, dtype=float))
        _write_image(out / "image.pfm", image)
        rep["accepted"] = acc
        rep["trace"] = trace
    else:  # apriori
        import json

        with open(_need(args, "scene")) as f:
            try:
                spec = SceneSpec.from_dict(json.load(f))
            except (ValueError, TypeError) as e:
                raise ConfigError(f"bad scene spec: {e}") from None
        if spec.kind not in ("heaviside_bank", "linear_integrand"):
            raise ConfigError("apriori needs a heaviside_bank or linear_integrand scene")
        sc = generate(spec)
        nt, S = len(sc.integrands), sc.samples.shape[2]
        w = np.zeros((nt, S))
        if args.weights == "final":
            w[:, -1] = 1.0
        else:
            w[:] = 1.0
        res = apriori_optimize(sc.integrands, [f.reference for f in sc.integrands], sc.samples,
                               m, w, T=args.T, seed=args.seed)
        perm = res.permutation
        image = perm.apply(sc.stack.mean())
        pio.write_permutation_csv(out / "permutation.csv", perm)
        pio.write_displacement_pgm(out / "displacement.pgm", perm)
        pio.write_trace_csv(out / "trace.csv", res.trace)
        _check_finite(image=image, trace=np.asarray(res.trace, dtype=float))
        _write_image(out / "image.pfm", image)
        rep["accepted"] = res.accepted
        rep["trace"] = res.trace
        return rep
    ref = args.surrogate if meth not in ("permutation", "shaped-noise", "histogram") else None
    if ref is not None:
        sur = _to_mode(pio.read_pfm(ref), args.channel_mode)
        e = perceptual_energy(image, sur, m)
        if not math.isfinite(e):
            raise NumericError("non-finite energy")
        rep["energy"] = e
        rep["pmse"] = pmse(image, sur, m)
    return rep


def cmd_analyze(args, out: Path) -> dict:
    m = _model(args)
    mode = args.mode
    if mode == "compare":
        if not args.inputs:
            raise ConfigError("compare needs --inputs")
        ref = _to_mode(pio.read_pfm(_need(args, "ref")), args.channel_mode)
        entries = []
        for p in args.inputs:
            img = _to_mode(pio.read_pfm(p), args.channel_mode)
            if img.shape != ref.shape:
                raise ConfigError(f"{p} does not match the reference shape")
            entries.append((p, img))
        rows = compare_report(entries, ref, m)
        table = format_table(rows)
        pio.write_json(out / "compare.json", rows)
        (out / "compare.txt").write_text(table)
        sys.stdout.write(table)
        return {"rows": rows}
    img = pio.read_pfm(_need(args, "image")).astype(np.float64)
    ref = None
    if args.ref:
        ref = pio.read_pfm(args.ref).astype(np.float64)
        if ref.shape != img.shape:
            raise ConfigError("image and reference shapes differ")
    if mode == "metrics":
        if ref is None:
            raise ConfigError("metrics needs --ref")
        rep = metrics(_to_mode(img, args.channel_mode), _to_mode(ref, args.channel_mode), m)
        for k, v in rep.items():
            if not math.isfinite(v):
                raise NumericError(f"non-finite {k}")
        pio.write_json(out / "metrics.json", rep)
        return rep
    err = img - ref if ref is not None else img
    if mode == "spectrum":
        s = power_spectrum(err)
        v = np.log1p(s.power)
        pio.write_pgm16(out / "spectrum.pgm", v / v.max() if v.max() > 0 else v)
        radius, power, count = radial_average(s, args.bins)
        with open(out / "radial.csv", "w") as f:
            f.write("radius,power,count\n")
            for r_, p_, c_ in zip(radius, power, count):
                f.write(f"{r_!r},{p_!r},{int(c_)}\n")
        return {"bins": args.bins}
    try:
        t = tiled_spectrum(err, args.tile)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    pio.write_pgm16(out / "tiled_spectrum.pgm", t)
    return {"tile": args.tile}


def cmd_synth(args, out: Path) -> dict:
    import json

    d = {}
    if args.spec:
        with open(args.spec) as f:
            d = json.load(f)
        if not isinstance(d, dict):
            raise ConfigError("scene spec must be a JSON object")
    for k in ("kind", "width", "height", "M", "noise", "amplitude", "value", "density", "freq", "count"):
        v = getattr(args, k)
        if v is not None:
            d[k] = v
    if args.seed or "seed" not in d:
        d["seed"] = args.seed
    try:
        spec = SceneSpec.from_dict(d)
        sc = generate(spec)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad scene spec: {e}") from None
    pio.write_stack(out / "stack.pes", sc.stack)
    ref = sc.reference
    if ref.ndim == 3 and ref.shape[2] not in (1, 3):
        pio.write_stack(out / "reference.pes", EstimateStack(ref[None]))
    else:
        pio.write_pfm(out / "reference.pfm", ref)
    return {"scene": spec.to_dict()}


def _set_threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get("PET_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError("PET_THREADS must be an integer") from None
    if n is None:
        return 1
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import warnings

    import numba

    # numba probes TBB and warns when the installed version is too old
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _set_threads(args.threads)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            log.error("cannot create output directory: %s", e)
            return EXIT_IO
        t0 = time.perf_counter()
        inputs = _inputs(args)
        cmd = {"optimize": cmd_optimize, "analyze": cmd_analyze, "synth": cmd_synth}[args.command]
        result = cmd(args, out)
        elapsed = time.perf_counter() - t0
        log.info("%s finished in %.3f s", args.command, elapsed)
        report = {"version": __version__, "config": _config(args), "inputs": inputs, "result": result}
        if args.report_timings:
            report["timings"] = {"total_seconds": elapsed}
        pio.write_json(out / "report.json", report)
        return 0
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except NumericError as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
