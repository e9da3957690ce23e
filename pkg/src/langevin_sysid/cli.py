"""Command-line driver: simulate, fit, active, sweep and report.

Configuration is one JSON file with nested sections; unknown keys are
errors.  Every failure prints a single ``error code=N kind=...`` line on
stderr and exits with 2 (configuration), 3 (data or I/O) or 4 (chain).
"""

import argparse
import dataclasses
import inspect
import json
import logging
import sys
import time
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .active import AcquisitionConfig, ArrayOracle, Pool, active_learning_loop, burgers_pool
from .active import lotka_volterra_pool
from .evaluate import credible_band, evaluate_model, threshold_sweep
from .exceptions import (BandUnavailableError, ChainFailure, ConfigurationError, DataError,
                         InsufficientDataError, SysIdError)
from .experiments import DEFAULT_THRESHOLDS, SYSTEMS, make_problem
from .features import Dataset, build_library, dataset_from_field, dataset_from_trajectory
from .identify import fit
from .posterior import HorseshoePrior
from .samplers import ChainConfig

__version__ = "0.1.0"

log = logging.getLogger("langevin_sysid.cli")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHAIN = 0, 2, 3, 4

TOP_KEYS = {"system", "params", "data", "library", "sampler", "prior", "fit", "sweep",
            "active", "seed", "out"}
FIT_KEYS = {"threshold", "max_outer", "precondition", "band", "band_level", "ensemble_size"}
SWEEP_KEYS = {"thresholds"}
LIBRARY_KEYS = {"max_degree"}
POOL_KEYS = {"pool", "pool_params", "oracle"}
DEFAULT_SWEEP = [round(0.1 * k, 10) for k in range(1, 13)]


# -- configuration ----------------------------------------------------------

def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigurationError(f"{where} must be an object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _builder_params(system):
    from . import experiments
    fn = getattr(experiments, f"{system}_problem")
    return {p for p in inspect.signature(fn).parameters if p != "seed"}


def load_config(path=None, overrides=None):
    """Parse, validate and fill defaults.  A run manifest is accepted too."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if isinstance(raw, dict) and "config" in raw and "tool_version" in raw:
            raw = raw["config"]
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    _check_keys(raw, TOP_KEYS, "config")

    cfg = {"system": raw.get("system", "lotka_volterra"), "seed": int(raw.get("seed", 0)),
           "out": raw.get("out", "out"), "data": raw.get("data")}
    system = cfg["system"]
    if system not in SYSTEMS + ("csv",):
        raise ConfigurationError(f"unknown system {system!r}; choose from {SYSTEMS + ('csv',)}")

    params = dict(raw.get("params", {}))
    if system != "csv":
        _check_keys(params, _builder_params(system), "params")
    elif params:
        raise ConfigurationError("params are not used with system 'csv'")
    cfg["params"] = params

    lib = dict(raw.get("library", {}))
    _check_keys(lib, LIBRARY_KEYS, "library")
    cfg["library"] = {"max_degree": int(lib.get("max_degree", 2))}

    sampler = dict(raw.get("sampler", {}))
    _check_keys(sampler, _fields(ChainConfig) - {"seed"}, "sampler")
    if "temperatures" in sampler:
        sampler["temperatures"] = tuple(sampler["temperatures"])
    chain = ChainConfig(**sampler)
    cfg["sampler"] = {k: v for k, v in chain.to_dict().items() if k != "seed"}

    prior = dict(raw.get("prior", {}))
    _check_keys(prior, _fields(HorseshoePrior), "prior")
    try:
        cfg["prior"] = dataclasses.asdict(HorseshoePrior(**prior))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None

    fit_sec = dict(raw.get("fit", {}))
    _check_keys(fit_sec, FIT_KEYS, "fit")
    fit_cfg = {"threshold": float(fit_sec.get("threshold", DEFAULT_THRESHOLDS.get(system, 0.05))),
               "max_outer": int(fit_sec.get("max_outer", 10)),
               "precondition": bool(fit_sec.get("precondition", True)),
               "band": bool(fit_sec.get("band", False)),
               "band_level": float(fit_sec.get("band_level", 0.95)),
               "ensemble_size": int(fit_sec.get("ensemble_size", 200))}
    if fit_cfg["threshold"] < 0 or fit_cfg["max_outer"] < 1:
        raise ConfigurationError("fit.threshold must be >= 0 and fit.max_outer >= 1")
    cfg["fit"] = fit_cfg

    sweep = dict(raw.get("sweep", {}))
    _check_keys(sweep, SWEEP_KEYS, "sweep")
    cfg["sweep"] = {"thresholds": [float(c) for c in sweep.get("thresholds", DEFAULT_SWEEP)]}

    active = dict(raw.get("active", {}))
    _check_keys(active, _fields(AcquisitionConfig) - {"seed"} | POOL_KEYS, "active")
    pool_spec = {k: active.pop(k) for k in list(active) if k in POOL_KEYS}
    acq = AcquisitionConfig(**active)
    cfg["active"] = {**{k: v for k, v in dataclasses.asdict(acq).items() if k != "seed"},
                     "pool": pool_spec.get("pool", system if system in
                                           ("lotka_volterra", "burgers") else None),
                     "pool_params": pool_spec.get("pool_params", {}),
                     "oracle": pool_spec.get("oracle")}
    return cfg


def stage_seed(master, stage):
    """Independent seed for a named stage; adding stages leaves others unchanged."""
    ss = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def chain_config(cfg, seed):
    return ChainConfig(**{**cfg["sampler"], "seed": seed})


# -- manifest ---------------------------------------------------------------

class RunManifest:
    """Provenance record written next to every run's artifacts."""

    def __init__(self, command, cfg):
        self.command = command
        self.config = cfg
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._t0 = time.perf_counter()
        self.seeds = {}
        self.artifacts = []

    def seed(self, stage):
        s = stage_seed(self.config["seed"], stage)
        self.seeds[stage] = s
        return s

    def add(self, path):
        self.artifacts.append(str(path))
        return path

    def write(self, out):
        path = Path(out) / "manifest.json"
        io.write_json(path, {"command": self.command, "tool_version": __version__,
                             "config": self.config, "started": self.started,
                             "wall_clock_seconds": round(time.perf_counter() - self._t0, 3),
                             "seeds": self.seeds, "artifacts": self.artifacts})
        return path


def _out_dir(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


# -- data loading -----------------------------------------------------------

def _problem(cfg, manifest):
    try:
        return make_problem(cfg["system"], seed=manifest.seed("noise"), **cfg["params"])
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SysIdError) and not isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid {cfg['system']} parameters: {exc}") from None


def load_dataset(path):
    """Dataset (with derivatives), optional clean truth and metadata from a path.

    ``path`` is a directory written by ``simulate`` or a single CSV file,
    either a trajectory (``t,x1..``) or a long-format field (``t,x,u``).
    """
    path = Path(path)
    meta = {}
    if path.is_dir():
        meta_path = path / "dataset.json"
        meta = io.read_json(meta_path) if meta_path.exists() else {}
        data_file = path / "noisy.csv"
    else:
        data_file = path
    if not data_file.exists():
        raise DataError(f"{data_file}: no such file")
    with open(data_file) as fh:
        header = fh.readline().strip().split(",")
    clean = None
    if header[:3] == ["t", "x", "u"]:
        field = io.read_field(data_file, periodic=meta.get("periodic", False))
        data = dataset_from_field(field)
        if path.is_dir() and (path / "clean.csv").exists():
            clean = io.read_field(path / "clean.csv", periodic=meta.get("periodic", False))
        ic = (clean or field).values[0]
        return data, clean, ic, field.time, field.space, meta
    traj = io.read_trajectory(data_file)
    deriv = None
    if path.is_dir() and (path / "derivatives.csv").exists():
        _, d = io.read_csv(path / "derivatives.csv", expect=["t"])
        if d.shape[0] != len(traj.times):
            raise DataError(f"{path / 'derivatives.csv'}: row count does not match noisy.csv")
        deriv = d[:, 1:]
    if path.is_dir() and (path / "clean.csv").exists():
        clean = io.read_trajectory(path / "clean.csv")
    try:
        data = dataset_from_trajectory(traj, derivatives=deriv)
    except InsufficientDataError as exc:
        raise DataError(f"{data_file}: {exc}") from None
    ic = (clean or traj).states[0]
    return data, clean, ic, traj.grid, None, meta


# -- subcommands ------------------------------------------------------------

def cmd_simulate(cfg):
    if cfg["system"] == "csv":
        raise ConfigurationError("simulate needs a built-in system")
    out = _out_dir(cfg)
    man = RunManifest("simulate", cfg)
    prob = _problem(cfg, man)
    if prob.space is None:
        man.add(io.write_trajectory(out / "clean.csv", prob.truth))
        man.add(io.write_trajectory(out / "noisy.csv", prob.noisy))
        man.add(io.write_csv(out / "derivatives.csv",
                             ["t"] + [f"dx{i + 1}" for i in range(prob.dataset.dim)],
                             np.column_stack([prob.grid.times, prob.dataset.derivatives])))
    else:
        man.add(io.write_field(out / "clean.csv", prob.truth))
        man.add(io.write_field(out / "noisy.csv", prob.noisy))
    meta = {"system": prob.name, "kind": "trajectory" if prob.space is None else "field",
            "periodic": bool(prob.space.periodic) if prob.space is not None else False,
            "true_coefficients": {"basis": prob.library.names,
                                  "values": prob.true_coefficients}}
    man.add(io.write_json(out / "dataset.json", meta))
    man.write(out)
    log.info("wrote %s dataset to %s", prob.name, out)
    return out


def _source(cfg, data_path, man):
    """Dataset, clean truth, ic, grid, space for ``fit`` and ``sweep``."""
    if data_path is not None:
        return load_dataset(data_path)
    if cfg["system"] == "csv":
        raise ConfigurationError("system 'csv' needs a data path (--data or config 'data')")
    prob = _problem(cfg, man)
    return (prob.dataset, prob.truth, prob.ic, prob.grid, prob.space,
            {"system": prob.name, "periodic": bool(prob.space and prob.space.periodic)})


def _library(cfg, data):
    return build_library(data, cfg["library"]["max_degree"])


def cmd_fit(cfg, data_path=None):
    out = _out_dir(cfg)
    data_path = data_path or cfg["data"]
    cfg["data"] = None if data_path is None else str(data_path)
    man = RunManifest("fit", cfg)
    data, clean, ic, grid, space, meta = _source(cfg, data_path, man)
    lib = _library(cfg, data)
    chain = chain_config(cfg, man.seed("sampler"))
    f = cfg["fit"]
    model = fit(data, lib, chain, f["threshold"], f["max_outer"],
                HorseshoePrior(**cfg["prior"]), precondition=f["precondition"])
    if clean is not None and model.mask.k > 0:
        evaluate_model(model, clean, ic, grid, space)
    system = meta.get("system", cfg["system"])
    man.add(io.write_json(out / "model.json", io.model_report(model, system)))
    man.add(io.write_samples(out / "samples.csv", model))
    trace = man.add(io.write_energy_trace(out / "energy_trace.csv", model))
    man.add(io.write_json(out / "diagnostics.json", io.diagnostics_report(model, trace)))
    man.add(io.write_theta(out / "library.csv", lib))
    man.add(io.write_json(out / "library.json", io.library_manifest(lib)))
    if f["band"] and model.samples is not None:
        try:
            band = credible_band(model.samples, lib.descriptors, ic, grid, f["band_level"],
                                 f["ensemble_size"], man.seed("band"), space)
            man.add(io.write_band(out / "band.csv", band))
        except BandUnavailableError as exc:
            log.warning("no credible band: %s", exc)
    man.write(out)
    log.info("support %s; error bar %s", model.support(), model.metrics["error_bar"])
    return model


def cmd_sweep(cfg, data_path=None):
    out = _out_dir(cfg)
    data_path = data_path or cfg["data"]
    cfg["data"] = None if data_path is None else str(data_path)
    man = RunManifest("sweep", cfg)
    data, *_ = _source(cfg, data_path, man)
    lib = _library(cfg, data)
    chain = chain_config(cfg, man.seed("sampler"))
    points = threshold_sweep(data, lib, chain, sorted(cfg["sweep"]["thresholds"]),
                             cfg["fit"]["max_outer"], HorseshoePrior(**cfg["prior"]))
    man.add(io.write_sweep(out / "sweep.csv", points))
    man.write(out)
    for p in points:
        log.info("threshold %g: error bar %s (%d active)", p.threshold, p.error_bar, p.k_active)
    return points


def _csv_pool(pool_path, oracle_path, max_degree):
    """Pool rows ``t,x1..`` with an oracle file ``t,dx1..`` matched on ``t``."""
    _, pool = io.read_csv(pool_path, expect=["t"])
    _, fine = io.read_csv(oracle_path, expect=["t"])
    lookup = {float(t): i for i, t in enumerate(fine[:, 0])}
    rows = []
    for n, t in enumerate(pool[:, 0]):
        if float(t) not in lookup:
            raise DataError(f"{pool_path}: row {n + 2} (t={float(t)!r}) is absent from the "
                            "oracle grid", row=n + 2)
        rows.append(lookup[float(t)])
    data = Dataset(pool[:, 1:], coords=pool[:, :1], provenance=["pool"] * len(pool))
    return Pool(data, ArrayOracle(fine[rows, 1:]), max_degree=max_degree)


def _make_pool(cfg, man):
    a = cfg["active"]
    if isinstance(a["pool"], str) and a["pool"].endswith(".csv"):
        if a["oracle"] is None:
            raise ConfigurationError("a CSV pool needs active.oracle (fine-grid derivative file)")
        return _csv_pool(a["pool"], a["oracle"], cfg["library"]["max_degree"])
    builders = {"lotka_volterra": lotka_volterra_pool, "burgers": burgers_pool}
    if a["pool"] not in builders:
        raise ConfigurationError(f"active.pool must be one of {sorted(builders)} or a CSV path")
    fn = builders[a["pool"]]
    _check_keys(a["pool_params"], set(inspect.signature(fn).parameters) - {"seed"},
                "active.pool_params")
    return fn(seed=man.seed("pool"), **a["pool_params"])


def _pool_system(pool):
    return "csv" if pool is None or str(pool).endswith(".csv") else pool


def cmd_active(cfg, pool_path=None):
    out = _out_dir(cfg)
    a = cfg["active"]
    if pool_path is not None:
        a["pool"] = str(pool_path)
    man = RunManifest("active", cfg)
    acq = AcquisitionConfig(**{k: v for k, v in a.items() if k not in POOL_KEYS},
                            seed=man.seed("active"))
    pool = _make_pool(cfg, man)
    chain = chain_config(cfg, man.seed("sampler"))
    res = active_learning_loop(pool, chain, acq)
    for r in res.rounds:
        lo, hi = r.get("space_filling_min"), r.get("space_filling_max")
        if lo is not None:
            ratio = hi / lo if lo > 0 else float("inf")
            log.info("round %d: space-filling scores in [%.3g, %.3g]", r["round"], lo, hi)
            if ratio > 1e6 and acq.lam == 0:
                log.warning("round %d: space-filling spread %.3g exceeds 1e6; "
                            "consider lam > 0", r["round"], ratio)
    man.add(io.write_history(out / "history.csv", res.history))
    man.add(io.write_csv(out / "rounds.csv", ["round", "n_points", "error_bar", "k_active"],
                         [(r["round"], r["n_points"], r["error_bar"], r["k_active"])
                          for r in res.rounds]))
    man.add(io.write_json(out / "model.json",
                          {**io.model_report(res.model, _pool_system(a["pool"])),
                           "converged_active": res.converged,
                           "points_selected": len(res.selected)}))
    man.write(out)
    return res


def cmd_report(run_dir, out=None):
    """Merge every ``model.json`` under ``run_dir`` into per-system tables."""
    run_dir = Path(run_dir)
    reports = sorted(run_dir.rglob("model.json"))
    if not reports:
        raise DataError(f"no completed runs (model.json) under {run_dir}")
    groups = {}
    for path in reports:
        rep = io.read_json(path)
        groups.setdefault(rep.get("system") or "unknown", []).append((path, rep))
    out = Path(out) if out else run_dir
    written = []
    for system, runs in sorted(groups.items()):
        labels = []
        for path, rep in runs:
            label = rep.get("method") or "run"
            if label in labels or sum(r.get("method") == rep.get("method") for _, r in runs) > 1:
                label = f"{label}:{path.parent.relative_to(run_dir)}"
            labels.append(label)
        basis = runs[0][1]["basis"]
        states = runs[0][1]["states"]
        rows = []
        for s in states:
            for b in basis:
                row = [b, s]
                for _, rep in runs:
                    e = rep["coefficients"].get(b, {}).get(s)
                    row.append(e["mode"] if e and e["active"] else "")
                rows.append(row)
        for metric in ("error_bar", "mse", "aic", "k_active"):
            rows.append([metric, ""] + [rep["metrics"].get(metric) for _, rep in runs])
        path = io.write_csv(out / f"report_{system}.csv", ["term", "state"] + labels, rows)
        written.append(path)
        log.info("wrote %s (%d runs)", path, len(runs))
    return written


# -- entry point -----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or a previous run manifest")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    p = argparse.ArgumentParser(prog="sysid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write clean and noisy datasets")
    f = sub.add_parser("fit", parents=[common], help="identify a model from data")
    f.add_argument("--data", help="dataset directory from simulate, or a CSV file")
    f.add_argument("--method", choices=("sgld", "mala", "cyclical", "resgld"))
    a = sub.add_parser("active", parents=[common], help="active-learning loop over a pool")
    a.add_argument("--pool", help="pool CSV (t,x1..); needs active.oracle in the config")
    s = sub.add_parser("sweep", parents=[common], help="Error Bar across thresholds")
    s.add_argument("--data", help="dataset directory from simulate, or a CSV file")
    r = sub.add_parser("report", parents=[common], help="merge runs into comparison tables")
    r.add_argument("run_dir", help="directory searched recursively for model.json")
    return p


def _fail(code, exc):
    kind = type(exc).__name__
    msg = " ".join(str(exc).split())
    print(f"error code={code} kind={kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "report":
            cmd_report(args.run_dir, args.out)
            return EXIT_OK
        cfg = load_config(args.config, {"out": args.out, "seed": args.seed})
        if getattr(args, "method", None):
            cfg["sampler"]["method"] = args.method
            cfg["sampler"] = {k: v for k, v in chain_config(cfg, 0).to_dict().items()
                              if k != "seed"}
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg, args.data)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.data)
        elif args.command == "active":
            cmd_active(cfg, args.pool)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (TypeError, KeyError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except ChainFailure as exc:
        return _fail(EXIT_CHAIN, exc)
    except (DataError, InsufficientDataError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except SysIdError as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
