"""``pcapri`` command line.

Every subcommand is a thin wrapper over one library call.  Machine output
(JSON/CSV) goes to standard output or to ``--out``; progress goes to
standard error.  Exit codes: 0 success, 1 usage error, 2 data or format
error, 3 numerical failure.  Errors are printed to standard error as one
JSON line.

All randomness derives from ``--seed`` (default 0).  ``--config FILE``
takes a JSON object whose keys are flag names (``tau-beta`` or
``tau_beta``); explicit flags win over the file.  ``$PCAPRI_THREADS``
sets the default worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import experiments, metrics, nlpca, noise, phantom, pipeline, prinlm, tuner
from .io import VolumeFormatError, load_volume, store_volume
from .volume import Volume3D

log = logging.getLogger("pcapri")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _levels(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None


def _add_nlpca_flags(p):
    g = p.add_argument_group("NL-PCA")
    g.add_argument("--d", type=int, default=4, help="patch edge")
    g.add_argument("--M", type=int, default=64, help="patches per group")
    g.add_argument("--w", type=int, default=3, help="search window half-width")
    g.add_argument("--tau-beta", type=float, default=2.46)
    g.add_argument("--T", type=float, default=2.46)
    g.add_argument("--step", type=int, default=3, help="window stride")
    g.add_argument("--grouping", choices=["all-in-window", "similar-to-center", "similar-to-each"], default="all-in-window")
    g.add_argument("--median-prefilter", action="store_true")


def _add_prinlm_flags(p):
    g = p.add_argument_group("PRI-NLM")
    g.add_argument("--search-radius", type=int, default=5)
    g.add_argument("--patch-radius", type=int, default=1)
    g.add_argument("--h-scale", type=float, default=1.0)
    g.add_argument("--weight-mode", choices=["isotropic", "anisotropic"], default="isotropic")


def _nlpca_params(a) -> nlpca.NlpcaParams:
    return nlpca.NlpcaParams(
        d=a.d, M=a.M, w=a.w, tau_beta=a.tau_beta, T=a.T, step=a.step,
        median_prefilter=a.median_prefilter, grouping=a.grouping,
    )


def _prinlm_params(a) -> prinlm.PrinlmParams:
    return prinlm.PrinlmParams(a.search_radius, a.patch_radius, a.h_scale, a.weight_mode)


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default $PCAPRI_THREADS or 1)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--config", help="JSON file of flag defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pcapri", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="render a synthetic phantom")
    p.add_argument("output")
    p.add_argument("--dims", type=int, nargs=3, default=(64, 64, 64))
    p.add_argument("--profile", choices=["t1", "t2"], default="t1")
    p.add_argument("--texture", type=float, default=None, help="relative texture amplitude")
    p.add_argument("--spec", help="phantom spec JSON file (overrides the default layout)")

    p = sub.add_parser("addnoise", parents=[common], help="add Rician or Gaussian noise")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--level", type=float, help="noise std as a percentage of the peak")
    p.add_argument("--sigma", type=float, help="noise std in intensity units")
    p.add_argument("--kind", choices=["rician", "gaussian"], default="rician")

    p = sub.add_parser("denoise", parents=[common], help="run a filter chain")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--pipeline", default="dgpd", help="token string (d, g, p, c) or JSON spec")
    p.add_argument("--noise", choices=list(pipeline.NOISE_SOURCES), default="background")
    p.add_argument("--sigma", type=float, help="noise level for --noise exact")
    p.add_argument("--truth", help="ground truth for per-stage metrics and the 'c' token")
    p.add_argument("--mask", help="background mask volume (nonzero = background)")
    p.add_argument("--guide", help="external prefiltered guide; runs the PD tool (--pipeline pd)")
    p.add_argument("--surrogate-rmse", type=float, help="noise std of the 'c' surrogate")
    p.add_argument("--report", help="write the stage report (.json or .csv)")
    _add_nlpca_flags(p)
    _add_prinlm_flags(p)

    p = sub.add_parser("estimate-noise", parents=[common], help="estimate the noise level")
    p.add_argument("input")
    p.add_argument("--method", choices=["background", "mad", "nlpca"], default="background")
    p.add_argument("--mask", help="background mask volume (nonzero = background)")
    p.add_argument("--map-out", help="write the NL-PCA noise map here")
    _add_nlpca_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM over the ROI")
    p.add_argument("--truth", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")

    p = sub.add_parser("tune", parents=[common], help="tune NL-PCA parameters")
    p.add_argument("--truth", default="phantom", help="clean volume, or 'phantom'")
    p.add_argument("--noisy", help="noisy volume (default: truth + 1%% Gaussian noise)")
    p.add_argument("--dims", type=int, nargs=3, default=(32, 32, 32), help="phantom size")
    p.add_argument("--mode", choices=["pso", "grid"], default="pso")
    p.add_argument("--swarm-size", type=int, default=50)
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--function-tolerance", type=float, default=1e-3)
    p.add_argument("--grid", type=_levels, default=(1.5, 2.0, 2.46, 3.0), help="tau_beta values")
    p.add_argument("--grid-T", type=_levels, default=None, help="T values (default: tau_beta = T)")
    p.add_argument("--step", type=int, default=None, help="window stride (default 2w+1)")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("limit", parents=[common], help="PRI-NLM guided by the clean volume")
    p.add_argument("truth")
    p.add_argument("noisy")
    p.add_argument("output")
    p.add_argument("--sigma", type=float, help="exact noise std (intensity units)")
    p.add_argument("--level", type=float, help="exact noise std as a percentage of the peak")
    _add_prinlm_flags(p)

    p = sub.add_parser("reproduce", parents=[common], help="regenerate a result table as CSV")
    p.add_argument("table", choices=sorted(experiments.TABLES))
    p.add_argument("--data", default="phantom", help="'phantom' or a reference volume path")
    p.add_argument("--levels", type=_levels, default=None, help="comma-separated noise levels (%%)")
    p.add_argument("--dims", type=int, nargs=3, default=(64, 64, 64), help="phantom size")
    p.add_argument("--out", help="CSV file (default stdout)")
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"bad config JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    seen = set()
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            seen |= dests
            sp.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
    unknown = sorted(set(cfg) - seen)
    if unknown:
        raise UsageError(f"unknown config keys {unknown}")


def _emit(text, out=None):
    if out:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _mask(path):
    return None if path is None else load_volume(path).data != 0


def _sigma_from(a, vol: Volume3D):
    if a.sigma is not None and getattr(a, "level", None) is not None:
        raise UsageError("give either --sigma or --level, not both")
    if a.sigma is not None:
        return a.sigma
    if getattr(a, "level", None) is not None:
        return a.level / 100.0 * vol.intensity_peak
    raise UsageError("a noise level is required (--sigma or --level)")


def cmd_phantom(a):
    if a.spec:
        with open(a.spec) as fh:
            spec = phantom.PhantomSpec.from_json(fh.read())
    else:
        kw = {} if a.texture is None else {"texture": a.texture}
        spec = phantom.default_spec(tuple(a.dims), a.profile, **kw)
    vol = phantom.generate(spec, seed=a.seed)
    store_volume(vol, a.output, kind="phantom")
    log.info("phantom %s peak %.3f", vol.dims, vol.intensity_peak)


def cmd_addnoise(a):
    vol = load_volume(a.input)
    sigma = _sigma_from(a, vol)
    sim = noise.simulate_gaussian if a.kind == "gaussian" else noise.simulate_rician
    out = sim(vol.data, sigma, np.random.SeedSequence(a.seed))
    store_volume(Volume3D(out, vol.spacing, vol.intensity_peak), a.output, kind="noisy")
    log.info("added %s noise sigma=%.4f", a.kind, sigma)


def cmd_denoise(a):
    vol = load_volume(a.input)
    truth = load_volume(a.truth) if a.truth else None
    background = _mask(a.mask)
    peak = vol.intensity_peak
    if a.guide:
        text = a.pipeline.strip()
        if text != "pd":
            raise UsageError("--guide runs the PD tool; use --pipeline pd")
        guide = load_volume(a.guide)
        if a.noise == "exact":
            sigma = _sigma_from(a, vol)
        elif a.noise == "mad":
            sigma = noise.estimate_mad_wavelet(vol.data)
        elif a.noise == "background":
            sigma = noise.estimate_background_median(vol.data, background, peak)
        else:
            sigma = nlpca.estimate_noise_map(guide.data, _nlpca_params(a), a.threads)
        out = pipeline.pd_tool(vol, guide, sigma, _nlpca_params(a), _prinlm_params(a), a.threads)
        report = None
    else:
        spec = pipeline.PipelineSpec.parse(
            a.pipeline,
            nlpca=_nlpca_params(a),
            prinlm=_prinlm_params(a),
            noise_source=a.noise,
            sigma=a.sigma,
            surrogate_rmse=a.surrogate_rmse,
            seed=a.seed,
        )
        out, report = pipeline.run(vol, spec, truth, background, peak, a.threads)
        for s in report.stages:
            log.info("stage %s %.2fs", s.chain, s.seconds)
    store_volume(Volume3D(out, vol.spacing, vol.intensity_peak), a.output, kind="denoised")
    if a.report and report is not None:
        _emit(report.to_csv() if a.report.endswith(".csv") else report.to_json(), a.report)


def cmd_estimate_noise(a):
    vol = load_volume(a.input)
    res = {"method": a.method}
    if a.method == "background":
        res["sigma"] = noise.estimate_background_median(vol.data, _mask(a.mask), vol.intensity_peak)
    elif a.method == "mad":
        res["sigma"] = noise.estimate_mad_wavelet(vol.data)
    else:
        nmap = nlpca.estimate_noise_map(vol.data, _nlpca_params(a), a.threads)
        res["sigma"] = float(np.median(nmap))
        if a.map_out:
            store_volume(Volume3D(nmap, vol.spacing, vol.intensity_peak), a.map_out, kind="noise_map")
    _emit(json.dumps(res))


def cmd_evaluate(a):
    truth, test = load_volume(a.truth), load_volume(a.test)
    if truth.dims != test.dims:
        raise ValueError(f"shape mismatch {truth.dims} vs {test.dims}")
    q = metrics.evaluate(test.data, truth.data, peak=truth.intensity_peak)
    _emit(q.to_json() if a.format == "json" else q.csv_row(a.test))


def cmd_tune(a):
    if a.truth == "phantom":
        ref = phantom.generate(phantom.default_spec(tuple(a.dims)), seed=a.seed)
    else:
        ref = load_volume(a.truth)
    if a.noisy:
        u = load_volume(a.noisy).data
    else:
        u = noise.simulate_gaussian(ref.data, 0.01 * ref.intensity_peak, np.random.SeedSequence([a.seed, 100]))
    obj = tuner.make_nlpca_objective(ref.data, u, step=a.step, peak=ref.intensity_peak, threads=a.threads)
    if a.mode == "grid":
        rows = tuner.grid_search(obj, a.grid, a.grid_T)
        _emit(tuner.grid_to_csv(rows), a.out)
        return
    lower, upper = tuner.default_bounds()
    cfg = tuner.PsoConfig(
        lower, upper, swarm_size=a.swarm_size, max_iterations=a.max_iterations,
        function_tolerance=a.function_tolerance, seed=a.seed,
    )
    res = tuner.pso_optimize(obj, cfg, repair=tuner.repair)
    _emit(res.to_json(), a.out)


def cmd_limit(a):
    clean, noisy = load_volume(a.truth), load_volume(a.noisy)
    sigma = _sigma_from(a, clean)
    out = prinlm.theoretical_limit(clean.data, noisy.data, sigma, _prinlm_params(a), a.threads)
    store_volume(Volume3D(out, noisy.spacing, noisy.intensity_peak), a.output, kind="limit")


def cmd_reproduce(a):
    profile = "t2" if a.table == "table3" else "t1"
    ref = experiments.reference_volume(a.data, profile, tuple(a.dims), a.seed)
    t0 = time.perf_counter()
    tab = experiments.TABLES[a.table](ref, levels=a.levels, seed=a.seed, threads=a.threads)
    log.info("%s done in %.1fs", a.table, time.perf_counter() - t0)
    _emit(tab.to_csv(), a.out)


COMMANDS = {
    "phantom": cmd_phantom,
    "addnoise": cmd_addnoise,
    "denoise": cmd_denoise,
    "estimate-noise": cmd_estimate_noise,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
    "limit": cmd_limit,
    "reproduce": cmd_reproduce,
}


def _fail(code, exc):
    msg = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    offset = getattr(exc, "offset", None)
    if offset is not None:
        msg["offset"] = offset
    sys.stderr.write(json.dumps(msg) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (OSError, VolumeFormatError) as exc:
        return _fail(EXIT_DATA, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, pipeline.PipelineError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (noise.NoiseEstimationError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
