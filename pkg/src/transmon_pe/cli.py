"""
Command line interface: ``transmon-pe {passport,run,ensemble,analyze}``.

Configuration is a JSON file with the sections of :class:`RunConfig`; every
section is optional and falls back to the package defaults. Each command
writes its fully resolved configuration next to its outputs.

Exit codes: 0 success, 1 non-convergence, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    EnsembleResult,
    aggregated_resolution,
    estimator_from_spec,
    info_gain_curve,
    resolution_curve,
    run_ensemble,
    run_estimator,
    write_curve_csv,
    write_json,
)
from .estimators import TRACE_SCHEMA_VERSION, EstimationError, EstimationTrace
from .passport import (
    N_FLUX,
    N_PASS,
    N_TAU,
    TAU_STEP_NS,
    DistortionConfig,
    PassportFormatError,
    generate_passport,
    ideal_passport,
    load_passport,
    save_passport,
)
from .physics import SensorParams, passport_flux_axis
from .readout import SIGMA1_SQ, ReadoutModel, ReadoutOracle

log = logging.getLogger("transmon_pe")

EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2
CONFIG_NAME = "config.json"
PASSPORT_NAME = "passport.json"
ENSEMBLE_NAME = "ensemble.json"
# written into resolved configs, ignored on load
_METADATA_KEYS = ("trace_schema_version", "version")


class ConfigError(ValueError):
    pass


def _passport_defaults() -> dict:
    return {
        "ideal": False,
        "seed": 0,
        "phi1": None,
        "phi_step": None,
        "n_flux": N_FLUX,
        "tau_step_ns": TAU_STEP_NS,
        "n_tau": N_TAU,
        "n_pass": N_PASS,
        "distortion": None,
        "file": None,
    }


@dataclass
class RunConfig:
    """Resolved configuration shared by all subcommands.

    ``passport.file`` names an existing passport to use; otherwise commands
    other than ``passport`` look for ``passport.json`` in ``output_dir``.
    """

    sensor: SensorParams = field(default_factory=SensorParams)
    passport: dict = field(default_factory=_passport_defaults)
    readout: dict = field(
        default_factory=lambda: {"sigma1_sq": SIGMA1_SQ, "shots": 32, "include_projection_variance": True}
    )
    estimator: dict = field(default_factory=lambda: {"kind": "kitaev", "steps": 5, "tolerance": 0.05})
    ensemble: dict = field(default_factory=lambda: {"repeats": 25, "flux_indices": None, "workers": 1})
    run: dict = field(default_factory=lambda: {"flux_index": 80})
    seed: int = 0
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"sensor", "passport", "readout", "estimator", "ensemble", "run", "seed", "output_dir"}
        d = {k: v for k, v in d.items() if k not in _METADATA_KEYS}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        cfg = cls()
        try:
            if "sensor" in d:
                cfg.sensor = SensorParams.from_dict(d["sensor"])
            for name in ("passport", "readout", "ensemble", "run"):
                if name in d:
                    base = getattr(cfg, name)
                    unknown = set(d[name]) - set(base)
                    if unknown:
                        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
                    base.update(d[name])
            if "estimator" in d:
                cfg.estimator = dict(d["estimator"])
            if "seed" in d:
                cfg.seed = int(d["seed"])
            if "output_dir" in d:
                cfg.output_dir = str(d["output_dir"])
            cfg.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def validate(self) -> None:
        estimator_from_spec(self.estimator)
        ReadoutModel(**self.readout)
        p = self.passport
        if int(p["n_flux"]) < 2 or int(p["n_tau"]) < 1 or not float(p["tau_step_ns"]) > 0:
            raise ConfigError("passport axes need n_flux >= 2, n_tau >= 1, tau_step_ns > 0")
        if p["phi_step"] is not None and not float(p["phi_step"]) > 0:
            raise ConfigError("passport phi_step must be positive")
        if p["distortion"] is not None:
            DistortionConfig.from_dict(p["distortion"])
        if int(self.ensemble["repeats"]) < 1 or int(self.ensemble["workers"]) < 1:
            raise ConfigError("ensemble repeats and workers must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "sensor": self.sensor.to_dict(),
            "passport": dict(self.passport),
            "readout": dict(self.readout),
            "estimator": dict(self.estimator),
            "ensemble": dict(self.ensemble),
            "run": dict(self.run),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(doc)


def _write_config(cfg: RunConfig, out: Path) -> None:
    doc = cfg.to_dict()
    doc["trace_schema_version"] = TRACE_SCHEMA_VERSION
    doc["version"] = __version__
    write_json(doc, out / CONFIG_NAME)


def _check_target(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; use --force to overwrite")


def build_passport(cfg: RunConfig, ideal: bool = False):
    p = cfg.passport
    phi1, step = passport_flux_axis(cfg.sensor)
    axes = dict(
        phi1=phi1 if p["phi1"] is None else float(p["phi1"]),
        phi_step=step if p["phi_step"] is None else float(p["phi_step"]),
        n_flux=int(p["n_flux"]),
        tau_step_ns=float(p["tau_step_ns"]),
        n_tau=int(p["n_tau"]),
    )
    if ideal or p["ideal"]:
        return ideal_passport(cfg.sensor, **axes)
    distortion = None if p["distortion"] is None else DistortionConfig.from_dict(p["distortion"])
    return generate_passport(
        cfg.sensor, distortion, seed=int(p["seed"]), n_pass=p["n_pass"], **axes
    )


def _open_passport(cfg: RunConfig, out: Path):
    path = Path(cfg.passport["file"]) if cfg.passport["file"] else out / PASSPORT_NAME
    if not path.exists():
        raise ConfigError(f"passport file {path} not found; run 'transmon-pe passport' first")
    try:
        return load_passport(path)
    except PassportFormatError as exc:
        raise ConfigError(f"bad passport {path}: {exc}") from exc


def _readout_kwargs(cfg: RunConfig) -> dict:
    return {k: cfg.readout[k] for k in ("sigma1_sq", "shots", "include_projection_variance")}


def _sigma_n(cfg: RunConfig) -> float:
    return float(np.sqrt(SIGMA1_SQ / int(cfg.readout["shots"])))


# --------------------------------------------------------------------------
# commands


def cmd_passport(cfg: RunConfig, out: Path, force: bool, ideal: bool) -> int:
    target = out / PASSPORT_NAME
    _check_target(target, force)
    grid = build_passport(cfg, ideal=ideal)
    out.mkdir(parents=True, exist_ok=True)
    save_passport(grid, target)
    if ideal:
        cfg.passport["ideal"] = True
    _write_config(cfg, out)
    log.info("wrote %s (%d delays x %d fluxes)", target, grid.n_tau, grid.n_flux)
    return EXIT_OK


def cmd_run(cfg: RunConfig, out: Path, force: bool) -> int:
    target = out / "trace.json"
    _check_target(target, force)
    grid = _open_passport(cfg, out)
    kind, config = estimator_from_spec(cfg.estimator)
    i = int(cfg.run["flux_index"])
    if not 0 <= i < grid.n_flux:
        raise ConfigError(f"run.flux_index {i} outside 0..{grid.n_flux - 1}")
    model = ReadoutModel(seed=cfg.seed, **_readout_kwargs(cfg))
    oracle = ReadoutOracle(grid.flux_axis[i], grid.sensor_params(), model, grid.distortion, keep_log=True)
    trace = run_estimator(kind, config, oracle, grid, _sigma_n(cfg))
    trace.seed = cfg.seed
    out.mkdir(parents=True, exist_ok=True)
    trace.save(target)
    oracle.write_log(out / "outcomes.csv")
    write_posterior_evolution(trace, grid.flux_axis, out / "posterior_evolution.csv")
    _write_config(cfg, out)
    log.info(
        "%s: truth %d, estimate %d, status %s, %d calls",
        kind, i, trace.estimate, trace.status, oracle.ledger.calls,
    )
    return EXIT_OK if trace.converged else EXIT_NONCONVERGED


def cmd_ensemble(cfg: RunConfig, out: Path, force: bool) -> int:
    target = out / ENSEMBLE_NAME
    _check_target(target, force)
    grid = _open_passport(cfg, out)
    ens = cfg.ensemble
    indices = ens["flux_indices"]
    if indices is None:
        indices = list(range(grid.n_flux))
    result, traces = run_ensemble(
        grid,
        cfg.estimator,
        indices,
        repeats=int(ens["repeats"]),
        seed=cfg.seed,
        readout=_readout_kwargs(cfg),
        sigma_n=_sigma_n(cfg),
        workers=int(ens["workers"]),
        keep_traces=True,
    )
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for r, t in zip(result.runs, traces):
        t.save(tdir / f"flux{r.flux_index:03d}_rep{r.repeat:03d}.json")
    write_json(result.to_dict(), target)
    _write_config(cfg, out)
    log.info(
        "%d runs, success rate %.3f, final resolution %.3e",
        len(result.runs), result.success_rate,
        aggregated_resolution(result) if result.repeats > 1 else float("nan"),
    )
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def write_posterior_evolution(trace: EstimationTrace, flux_axis, path) -> None:
    """One row per (step, flux index): the posterior at the end of each step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "delay_ns", "flux_index", "phi", "probability", "survivor"])
        for s in trace.steps:
            alive = set(int(i) for i in s.survivors)
            for i, (phi, p) in enumerate(zip(flux_axis, s.posterior)):
                w.writerow([s.step, repr(s.delay_ns), i, repr(float(phi)), repr(float(p)), int(i in alive)])


def _collect(paths):
    ensembles, traces = [], []
    for p in map(Path, paths):
        if p.is_dir():
            if (p / ENSEMBLE_NAME).exists():
                ensembles.append((p, EnsembleResult.from_dict(json.loads((p / ENSEMBLE_NAME).read_text()))))
            found = sorted(p.glob("trace.json")) + sorted((p / "traces").glob("*.json"))
            traces.extend(found)
        elif p.suffix == ".json" and p.exists():
            traces.append(p)
        else:
            raise ConfigError(f"{p} is neither a run directory nor a trace file")
    return ensembles, traces


def cmd_analyze(paths, out: Path, force: bool, run_trace: str | None) -> int:
    if not paths:
        raise ConfigError("analyze needs at least one ensemble or run directory")
    ensembles, trace_paths = _collect(paths)
    if not ensembles and not trace_paths:
        raise ConfigError("no ensemble.json or trace files found")
    loaded = []
    for tp in trace_paths:
        try:
            loaded.append((tp, EstimationTrace.load(tp)))
        except EstimationError as exc:
            raise ConfigError(f"{tp}: {exc}") from exc
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{tp}: not a trace file") from exc
    report_path = out / "report.json"
    _check_target(report_path, force)
    out.mkdir(parents=True, exist_ok=True)
    report = {"ensembles": [], "traces": len(loaded)}
    for src, e in ensembles:
        name = src.name or "ensemble"
        entry = {
            "source": str(src),
            "estimator": e.estimator,
            "runs": len(e.runs),
            "success_rate": e.success_rate,
            "converged": e.converged,
        }
        if e.repeats > 1:
            res = resolution_curve(e, step="all")
            write_curve_csv(res, out / f"{name}_resolution.csv")
            entry["resolution"] = {"t_s": list(res.x), "dphi": list(res.y)}
        info = info_gain_curve(e, steps="default")
        if len(info.x) >= 1:
            write_curve_csv(info, out / f"{name}_info_gain.csv")
            entry["info_gain"] = {"tau_phi_s": list(info.x), "bits": list(np.log2(info.y))}
            if len(info.x) >= 3:
                fit = info.fit
                entry["info_gain"]["exponent"] = fit.exponent
                entry["info_gain"]["ci95"] = [fit.ci_low, fit.ci_high]
        report["ensembles"].append(entry)
    if loaded:
        chosen = loaded[0] if run_trace is None else _pick(loaded, run_trace)
        tp, trace = chosen
        axis = _axis_for(tp, trace)
        write_posterior_evolution(trace, axis, out / "posterior_evolution.csv")
        report["posterior_evolution_source"] = str(tp)
    write_json(report, report_path)
    log.info("wrote %s", report_path)
    return EXIT_OK


def _pick(loaded, name):
    for tp, t in loaded:
        if tp.name == name or str(tp) == name:
            return tp, t
    raise ConfigError(f"trace {name} not among the analyzed inputs")


def _axis_for(trace_path: Path, trace: EstimationTrace):
    """Flux axis of the passport next to a trace (or the default axis)."""
    for d in (trace_path.parent, trace_path.parent.parent):
        cfg = d / CONFIG_NAME
        if cfg.exists():
            rc = RunConfig.from_dict(json.loads(cfg.read_text()))
            phi1, step = passport_flux_axis(rc.sensor)
            phi1 = phi1 if rc.passport["phi1"] is None else rc.passport["phi1"]
            step = step if rc.passport["phi_step"] is None else rc.passport["phi_step"]
            return phi1 + step * np.arange(trace.n_flux)
    phi1, step = passport_flux_axis()
    return phi1 + step * np.arange(trace.n_flux)


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="overwrite outputs")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="transmon-pe",
        parents=[common],
        description="Passport synthesis, adaptive flux estimation and scaling analysis.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("passport", parents=[common], help="synthesize and save a passport")
    p.add_argument("--ideal", action="store_true", help="noise-free grid without distortion")
    sub.add_parser("run", parents=[common], help="one estimation at run.flux_index")
    sub.add_parser("ensemble", parents=[common], help="repeated runs over a flux subset")
    a = sub.add_parser("analyze", parents=[common], help="curves and fits from ensembles/traces")
    a.add_argument("paths", nargs="*", help="ensemble or run directories, or trace files")
    a.add_argument("--trace", default=None, help="trace file name for the posterior export")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    opts = vars(args)
    logging.basicConfig(
        level=logging.INFO if opts.get("verbose") else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = load_config(opts["config"]) if "config" in opts else RunConfig()
        if "seed" in opts:
            cfg.seed = int(opts["seed"])
            cfg.validate()
        if "out" in opts:
            cfg.output_dir = opts["out"]
        out = Path(cfg.output_dir)
        force = bool(opts.get("force", False))
        if args.command == "passport":
            return cmd_passport(cfg, out, force, args.ideal)
        if args.command == "run":
            return cmd_run(cfg, out, force)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, out, force)
        return cmd_analyze(args.paths, out, force, args.trace)
    except (ConfigError, AnalysisError) as exc:
        print(f"transmon-pe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"transmon-pe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
