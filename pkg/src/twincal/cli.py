"""Command-line interface: moments, calibrate, scan, simulate, merge-dark.

Configuration precedence is CLI flag > config file (JSON) > built-in
default; the effective configuration is echoed into every report so a
result is reproducible from the report alone.  Exit codes: 0 success,
1 data or model errors, 2 usage errors.  Diagnostics go to stderr,
results to files or stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calibrator, histogram_io, simulator
from .calibrator import (CalibrationOptions, DetectorGeometry, bootstrap_uncertainty,
                         calibrate, infeasible_report, scan_surface, write_surface_csv)
from .detector_model import DetectorParams, detection_matrix
from .errors import NoFeasibleRegion, TwincalError
from .field_model import TwinBeamModel, jpnd
from .moments import klyshko_estimate, photocount_moments, subtract_dark
from .simulator import SimulationConfig, simulate_experiment

THREADS_ENV = "TWINCAL_THREADS"


@dataclass(frozen=True)
class CliConfig:
    """Every tunable knob accepted on the command line or in a config file."""

    grid_span: float = 0.5
    grid_step: float = 0.005
    np_rel_tol: float = 1e-4
    simplex_max_iter: int = 200
    simplex_fatol: float = 1e-10
    tail_tolerance: float = 1e-5
    max_grid: int = 512
    prob_floor: float = 1e-15
    c_max_margin: int = 10
    bootstrap_replicas: int = 0
    bootstrap_seed: int = 0
    chunk_shots: int = 16384
    threads: int = 0            # 0 = serial (or TWINCAL_THREADS when set)

    def __post_init__(self):
        if not 0.0 < self.grid_span < 1.0:
            raise ValueError("grid-span must be in (0, 1)")
        if self.grid_step <= 0:
            raise ValueError("grid-step must be positive")
        if not 0.0 < self.tail_tolerance <= 1e-3:
            raise ValueError("tail-tolerance must be in (0, 1e-3]")
        if self.max_grid < 2:
            raise ValueError("max-grid must be at least 2")
        if self.bootstrap_replicas < 0:
            raise ValueError("bootstrap-replicas must be >= 0")

    def calibration_options(self) -> CalibrationOptions:
        return CalibrationOptions(
            grid_span=self.grid_span,
            grid_step=self.grid_step,
            np_rel_tol=self.np_rel_tol,
            simplex_max_iter=self.simplex_max_iter,
            simplex_fatol=self.simplex_fatol,
            tail_tolerance=self.tail_tolerance,
            max_grid=self.max_grid,
            prob_floor=self.prob_floor,
            c_max_margin=self.c_max_margin,
            threads=self.threads or None,
        )


# knob -> (type, help text, subcommands it applies to)
_KNOBS: dict[str, tuple[type, str, tuple[str, ...]]] = {
    "grid_span": (float, "stage-1 grid half-width as a fraction of the baseline"
                  " efficiency (dimensionless, default 0.5)", ("calibrate", "scan")),
    "grid_step": (float, "stage-1 grid step in efficiency units (default 0.005)",
                  ("calibrate", "scan")),
    "np_rel_tol": (float, "relative tolerance of the mean-pair-number line search"
                   " (dimensionless, default 1e-4)", ("calibrate", "scan")),
    "simplex_max_iter": (int, "simplex refinement iteration cap (default 200)",
                         ("calibrate",)),
    "simplex_fatol": (float, "simplex absolute improvement tolerance on the"
                      " declination (default 1e-10)", ("calibrate",)),
    "tail_tolerance": (float, "truncation budget of the photon-number grid,"
                       " total missed mass (default 1e-5)", ("calibrate", "scan")),
    "max_grid": (int, "hard cap on the photon-number grid edge (default 512)",
                 ("calibrate", "scan")),
    "prob_floor": (float, "model-support floor in the declination sum"
                   " (default 1e-15)", ("calibrate", "scan")),
    "c_max_margin": (int, "photocount grid margin above the largest observed"
                     " count (default 10)", ("calibrate", "scan")),
    "bootstrap_replicas": (int, "bootstrap replica count, 0 disables"
                           " (default 0)", ("calibrate",)),
    "bootstrap_seed": (int, "root seed of the bootstrap resampler (default 0)",
                       ("calibrate",)),
    "chunk_shots": (int, "shots per RNG stream chunk; part of the realization"
                    " (default 16384)", ("simulate",)),
    "threads": (int, "worker cap, 0 = serial; results do not depend on it"
                " (default 0, env " + THREADS_ENV + ")",
                ("calibrate", "scan", "simulate")),
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twincal",
        description="Absolute detection-efficiency calibration from joint"
                    " twin-beam photocount histograms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_knobs(p: argparse.ArgumentParser, command: str) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file with knob defaults")
        for name, (typ, help_text, commands) in _KNOBS.items():
            if command in commands:
                p.add_argument(_flag(name), type=typ, default=None, help=help_text)

    p = sub.add_parser("moments", help="photoelectron moments and baseline estimates")
    p.add_argument("--hist", type=Path, required=True, help="photocount histogram CSV")
    p.add_argument("--dark", type=Path, required=True, help="dark-count record CSV")
    p.add_argument("--out", type=Path, default=None, help="write JSON here instead of stdout")
    add_knobs(p, "moments")

    p = sub.add_parser("calibrate", help="fit efficiencies and the field model")
    p.add_argument("--hist", type=Path, required=True, help="photocount histogram CSV")
    p.add_argument("--dark", type=Path, required=True, help="dark-count record CSV")
    p.add_argument("--pixels-s", type=int, required=True, help="signal-arm pixel count")
    p.add_argument("--pixels-i", type=int, required=True, help="idler-arm pixel count")
    p.add_argument("--out", type=Path, required=True, help="calibration report JSON")
    p.add_argument("--export-jpnd", type=Path, default=None,
                   help="write the fitted photon-number distribution as ns,ni,p CSV")
    p.add_argument("--export-response-s", type=Path, default=None,
                   help="write the fitted signal response as c,n,T CSV")
    p.add_argument("--export-response-i", type=Path, default=None,
                   help="write the fitted idler response as c,n,T CSV")
    add_knobs(p, "calibrate")

    p = sub.add_parser("scan", help="declination surface over an efficiency grid")
    p.add_argument("--hist", type=Path, required=True, help="photocount histogram CSV")
    p.add_argument("--dark", type=Path, required=True, help="dark-count record CSV")
    p.add_argument("--pixels-s", type=int, required=True, help="signal-arm pixel count")
    p.add_argument("--pixels-i", type=int, required=True, help="idler-arm pixel count")
    p.add_argument("--out", type=Path, required=True, help="surface CSV (eta_s,eta_i,D)")
    add_knobs(p, "scan")

    p = sub.add_parser("simulate", help="generate a synthetic experiment")
    p.add_argument("--params", type=Path, required=True,
                   help="ground-truth JSON: model (b/M per component) and detectors")
    p.add_argument("--shots", type=int, required=True, help="number of frames")
    p.add_argument("--seed", type=int, required=True, help="root RNG seed")
    p.add_argument("--out-hist", type=Path, required=True, help="histogram CSV to write")
    p.add_argument("--out-dark", type=Path, required=True, help="dark record CSV to write")
    p.add_argument("--out-truth", type=Path, default=None,
                   help="ground-truth sidecar JSON to write")
    p.add_argument("--label", type=str, default="", help="free-text label")
    add_knobs(p, "simulate")

    p = sub.add_parser("merge-dark", help="combine independently monitored dark records")
    p.add_argument("--signal", type=Path, required=True, help="signal-arm dark CSV")
    p.add_argument("--idler", type=Path, required=True, help="idler-arm dark CSV")
    p.add_argument("--out", type=Path, required=True, help="joint product record CSV")
    add_knobs(p, "merge-dark")

    return parser


def effective_config(args: argparse.Namespace) -> CliConfig:
    """CLI flag > config file > built-in default (> env for threads)."""
    values = {f.name: f.default for f in dataclasses.fields(CliConfig)}
    env_threads = os.environ.get(THREADS_ENV)
    if env_threads is not None:
        values["threads"] = int(env_threads)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(values)
        if unknown:
            raise TwincalError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for name in _KNOBS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    return CliConfig(**values)


def _moments_doc(hist, dark) -> dict:
    raw = photocount_moments(hist)
    drk = photocount_moments(dark)
    m = subtract_dark(raw, drk)
    doc = {
        "shots": hist.shots,
        "photoelectron": {
            "mean_s": m.mean_s, "mean_i": m.mean_i,
            "var_s": m.var_s, "var_i": m.var_i, "cov": m.cov,
            "stderr_mean_s": m.stderr_mean_s, "stderr_mean_i": m.stderr_mean_i,
            "stderr_var_s": m.stderr_var_s, "stderr_var_i": m.stderr_var_i,
            "stderr_cov": m.stderr_cov,
        },
        "dark": {"mean_s": drk.mean_s, "mean_i": drk.mean_i},
    }
    if m.mean_s > 0 and m.mean_i > 0:
        k = klyshko_estimate(m)
        doc["baseline"] = {
            "eta_s_klyshko": k.eta_s_cov, "eta_i_klyshko": k.eta_i_cov,
            "eta_s_klyshko_raw": k.eta_s_raw, "eta_i_klyshko_raw": k.eta_i_raw,
            "stderr_eta_s_klyshko": k.stderr_eta_s_cov,
            "stderr_eta_i_klyshko": k.stderr_eta_i_cov,
        }
    return doc


def _cmd_moments(args) -> int:
    hist = histogram_io.load_histogram(args.hist)
    dark = histogram_io.load_dark_record(args.dark)
    doc = _moments_doc(hist, dark)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out is None:
        print(text)
    else:
        args.out.write_text(text + "\n", encoding="utf-8")
    return 0


def _export_jpnd_csv(dist, path: Path) -> None:
    lines = ["ns,ni,p"]
    probs = dist.probabilities
    for ns in range(probs.shape[0]):
        for ni in range(probs.shape[1]):
            lines.append(f"{ns},{ni},{probs[ns, ni]!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _export_response_csv(matrix, path: Path) -> None:
    lines = ["c,n,T"]
    values = matrix.values
    for c in range(values.shape[0]):
        for n in range(values.shape[1]):
            lines.append(f"{c},{n},{values[c, n]!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_calibrate(args, config: CliConfig) -> int:
    hist = histogram_io.load_histogram(args.hist)
    dark = histogram_io.load_dark_record(args.dark)
    geometry = DetectorGeometry(args.pixels_s, args.pixels_i)
    options = config.calibration_options()
    inputs = {
        "histogram_sha256": histogram_io.sha256_of(args.hist),
        "dark_sha256": histogram_io.sha256_of(args.dark),
    }
    try:
        result = calibrate(hist, dark, geometry, options)
    except NoFeasibleRegion as exc:
        raw = photocount_moments(hist)
        drk = photocount_moments(dark)
        try:
            m = subtract_dark(raw, drk)
        except TwincalError:
            m = None
        report = infeasible_report(m, str(exc), inputs=inputs,
                                   config=dataclasses.asdict(config))
        histogram_io.write_report(report, args.out)
        print(f"error: feasibility: {exc}", file=sys.stderr)
        print(f"wrote infeasible report to {args.out}", file=sys.stderr)
        return 1

    if config.bootstrap_replicas > 0:
        boot = bootstrap_uncertainty(
            hist, dark, geometry, options,
            replicas=config.bootstrap_replicas, seed=config.bootstrap_seed,
            base=result, workers=config.threads or None)
        result.stderr = dict(boot.stderr)
        result.diagnostics["bootstrap"] = {
            "replicas": boot.replicas, "failures": boot.failures,
            "valid": boot.valid, "degenerate": boot.degenerate,
        }
    result.inputs = inputs
    result.config = dataclasses.asdict(config)
    histogram_io.write_report(result, args.out)

    if args.export_jpnd is not None:
        dist = jpnd(result.model, options.tail_tolerance, options.max_grid)
        _export_jpnd_csv(dist, args.export_jpnd)
    for arm, path in (("s", args.export_response_s), ("i", args.export_response_i)):
        if path is None:
            continue
        eta = result.point.eta_s if arm == "s" else result.point.eta_i
        pixels = geometry.pixels_s if arm == "s" else geometry.pixels_i
        rate = result.dark_rates[0] if arm == "s" else result.dark_rates[1]
        dist = jpnd(result.model, options.tail_tolerance, options.max_grid)
        n_max = dist.cutoff_s if arm == "s" else dist.cutoff_i
        c_max = min(pixels, hist.max_counts[0 if arm == "s" else 1] + config.c_max_margin)
        matrix = detection_matrix(DetectorParams(pixels, eta, rate), n_max, c_max)
        _export_response_csv(matrix, path)

    print(f"status={result.status} eta_s={result.point.eta_s:.6f} "
          f"eta_i={result.point.eta_i:.6f} mean_pairs={result.point.mean_pairs:.4f} "
          f"declination={result.declination:.3e}", file=sys.stderr)
    return 0


def _cmd_scan(args, config: CliConfig) -> int:
    hist = histogram_io.load_histogram(args.hist)
    dark = histogram_io.load_dark_record(args.dark)
    geometry = DetectorGeometry(args.pixels_s, args.pixels_i)
    options = config.calibration_options()
    raw = photocount_moments(hist)
    drk = photocount_moments(dark)
    m = subtract_dark(raw, drk)
    baseline = klyshko_estimate(m)
    etas_s = calibrator._eta_grid(baseline.eta_s_cov, config.grid_span, config.grid_step)
    etas_i = calibrator._eta_grid(baseline.eta_i_cov, config.grid_span, config.grid_step)
    dark_rates = (drk.mean_s / geometry.pixels_s, drk.mean_i / geometry.pixels_i)
    cells = scan_surface(m, hist, geometry, etas_s, etas_i, dark_rates, options)
    write_surface_csv(cells, args.out)
    feasible = sum(1 for c in cells if c.feasible)
    print(f"scanned {len(cells)} cells ({feasible} feasible) -> {args.out}",
          file=sys.stderr)
    return 0


def _load_truth(path: Path) -> tuple[TwinBeamModel, tuple[DetectorParams, DetectorParams]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model = TwinBeamModel.from_params_dict(doc["model"])
    dets = []
    for arm in ("signal", "idler"):
        d = doc["detectors"][arm]
        dets.append(DetectorParams(int(d["pixels"]), float(d["efficiency"]),
                                   float(d["dark_rate"])))
    return model, (dets[0], dets[1])


def _cmd_simulate(args, config: CliConfig) -> int:
    model, detectors = _load_truth(args.params)
    sim = SimulationConfig(model=model, detectors=detectors, shots=args.shots,
                           seed=args.seed, chunk_shots=config.chunk_shots,
                           label=args.label)
    hist, dark, _ = simulate_experiment(sim, threads=config.threads or None,
                                        sidecar_path=args.out_truth)
    histogram_io.write_histogram(hist, args.out_hist)
    histogram_io.write_dark_record(dark, args.out_dark)
    print(f"simulated {args.shots} shots (seed {args.seed}) -> "
          f"{args.out_hist}, {args.out_dark}", file=sys.stderr)
    return 0


def _cmd_merge_dark(args) -> int:
    signal = histogram_io.load_dark_record(args.signal)
    idler = histogram_io.load_dark_record(args.idler)
    merged = histogram_io.product_dark(signal, idler)
    histogram_io.write_dark_record(merged, args.out)
    print(f"merged product record ({merged.shots} shots) -> {args.out}",
          file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = effective_config(args)
        if args.command == "moments":
            return _cmd_moments(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args, config)
        if args.command == "scan":
            return _cmd_scan(args, config)
        if args.command == "simulate":
            return _cmd_simulate(args, config)
        if args.command == "merge-dark":
            return _cmd_merge_dark(args)
        parser.error(f"unknown command {args.command}")
    except FileNotFoundError as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return 1
    except TwincalError as exc:
        stage = _stage_name(exc)
        print(f"error: {stage}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _stage_name(exc: TwincalError) -> str:
    from . import errors
    stages = {
        errors.ParseError: "input parsing",
        errors.NegativeMeanAfterSubtraction: "dark-count elimination",
        errors.ZeroMeanArm: "baseline estimation",
        errors.SubPoissonianComponent: "field decomposition",
        errors.CutoffOverflow: "photon-number truncation",
        errors.NumericalInstability: "detector response",
        errors.DimensionMismatch: "photocount synthesis",
        errors.NonpositiveCovariance: "feasibility",
        errors.NoFeasibleRegion: "feasibility",
        errors.InfeasiblePoint: "field decomposition",
    }
    for cls, name in stages.items():
        if isinstance(exc, cls):
            return name
    return "pipeline"


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
