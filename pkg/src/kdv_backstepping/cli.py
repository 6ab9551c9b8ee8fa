"""Command-line runner.

    kdv-backstep run <config.yaml> -o <dir>
    kdv-backstep batch <config-dir> -o <dir>
    kdv-backstep compare <dir> <dir> [...]
    kdv-backstep kernels --lambda 8 --m 81 -o <dir>

Exit status: 0 success, 1 configuration or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .closed_loop import InitialCondition, Mode, ScenarioConfig, run_scenario
from .diagnostics import annotate, fit_decay_rate, norm_rows, summarize, default_window
from .errors import ConfigError, ConvergenceError, InvalidArgumentError, StepFailure
from .grid import TriGrid
from .kernels import (pde_residual, reciprocity_residual, solve_kernel_set, trace_residuals,
                      write_kernel_csv)
from .svg import log_plot

log = logging.getLogger("kdv_backstepping")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# schema: key -> (type, default); None default means "no default"
_SCHEMA = {
    "mode": (str, None),
    "plant_nonlinear": (bool, False),
    "observer_nonlinear": (bool, False),
    "lambda": (float, 8.0),
    "n": (int, 201),
    "m": (int, 201),
    "dt": (float, 1e-3),
    "t_end": (float, 4.0),
    "u0.family": (str, "bump"),
    "u0.amplitude": (float, 1.0),
    "uhat0.family": (str, None),
    "uhat0.amplitude": (float, 1.0),
    "record_every": (int, 10),
    "theta": (float, 0.5),
}
_REQUIRED = ("mode",)


def _flatten(doc, prefix=""):
    out = {}
    for key, value in doc.items():
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}", key=str(key))
        name = prefix + key
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            if name in out:
                raise ConfigError(f"duplicate key {name!r}", key=name)
            out[name] = value
    return out


_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


def _coerce(key, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", key=key)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
        return value
    if kind is float:
        if isinstance(value, str) and _NUMBER.fullmatch(value.strip()):
            value = float(value)   # YAML 1.1 reads "1.0e5" as a string
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite", key=key)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}", key=key)
    return value


def parse_config(text: str) -> ScenarioConfig:
    """Validate a YAML scenario document (nested or dotted keys).

    Only ``mode`` is required; ``uhat0.family`` is required as well in
    OutputFeedback mode. Unknown keys are rejected.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    flat = _flatten(doc)
    for key in flat:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key)
    for key in _REQUIRED:
        if key not in flat:
            raise ConfigError(f"missing required key {key!r}", key=key)
    vals = {k: _coerce(k, flat[k], _SCHEMA[k][0]) if k in flat else _SCHEMA[k][1]
            for k in _SCHEMA}
    try:
        mode = Mode(vals["mode"])
    except ValueError:
        raise ConfigError(f"unknown mode {vals['mode']!r}", key="mode") from None
    if vals["lambda"] < 0:
        raise ConfigError("lambda must be >= 0", key="lambda")
    uhat0 = None
    if vals["uhat0.family"] is not None:
        uhat0 = InitialCondition(vals["uhat0.family"], vals["uhat0.amplitude"])
    elif "uhat0.amplitude" in flat:
        raise ConfigError("uhat0.amplitude given without uhat0.family", key="uhat0.family")
    if mode is Mode.OUTPUT_FEEDBACK and uhat0 is None:
        raise ConfigError("OutputFeedback needs observer keys (uhat0.family)", key="uhat0.family")
    return ScenarioConfig(
        mode=mode, plant_nonlinear=vals["plant_nonlinear"],
        observer_nonlinear=vals["observer_nonlinear"], lam=vals["lambda"],
        n=vals["n"], m=vals["m"], dt=vals["dt"], t_end=vals["t_end"],
        u0=InitialCondition(vals["u0.family"], vals["u0.amplitude"]), uhat0=uhat0,
        record_every=vals["record_every"], theta=vals["theta"],
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Effective configuration in the document schema (re-parses to ``cfg``)."""
    doc = {
        "mode": cfg.mode.value,
        "plant_nonlinear": cfg.plant_nonlinear,
        "observer_nonlinear": cfg.observer_nonlinear,
        "lambda": cfg.lam, "n": cfg.n, "m": cfg.m, "dt": cfg.dt, "t_end": cfg.t_end,
        "u0": {"family": cfg.u0.family, "amplitude": cfg.u0.amplitude},
        "record_every": cfg.record_every, "theta": cfg.theta,
    }
    if cfg.uhat0 is not None:
        doc["uhat0"] = {"family": cfg.uhat0.family, "amplitude": cfg.uhat0.amplitude}
    return doc


# -------------------------------------------------------------------------
# output


def _g(v) -> str:
    return "nan" if v is None else "%.17g" % v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


@dataclass
class RunManifest:
    config_path: str | None
    outdir: str
    config: dict
    artifacts: dict = field(default_factory=dict)   # name -> sha256
    deterministic: bool = True

    def to_dict(self):
        return {"config_path": self.config_path, "outdir": self.outdir,
                "deterministic": self.deterministic, "config": self.config,
                "artifacts": self.artifacts}


def write_trajectory_csv(traj, path: Path):
    x = traj.grid.x
    has_obs = traj.observer is not None
    with open(path, "w", newline="\n") as fh:
        fh.write("t,x,u,u_hat,U,y_meas\n")
        for i, t in enumerate(traj.times):
            ts, U, y = _g(t), _g(traj.control[i]), _g(traj.measurement[i])
            u = traj.plant[i]
            uh = traj.observer[i] if has_obs else None
            for j in range(len(x)):
                fh.write(f"{ts},{_g(x[j])},{_g(u[j])},{_g(uh[j]) if has_obs else 'nan'},{U},{y}\n")


def write_norms_csv(traj, path: Path):
    with open(path, "w", newline="\n") as fh:
        fh.write("t,kind,plant,observer,error\n")
        for t, kind, p, o, e in norm_rows(traj):
            fh.write(f"{_g(t)},{kind},{_g(p)},{_g(o)},{_g(e)}\n")


def run(cfg: ScenarioConfig, outdir, config_path=None, plot: bool = True) -> RunManifest:
    """Simulate ``cfg`` and write its artifacts into ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s lambda=%g into %s", cfg.mode.value, cfg.lam, out)
    traj = run_scenario(cfg)
    annotate(traj)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_norms_csv(traj, out / "norms.csv")
    summary = summarize(traj)
    _write_json(out / "summary.json", summary)
    names = ["trajectory.csv", "norms.csv", "summary.json"]
    if plot:
        s = traj.series
        curves = [(f"{k[3:]} L2", traj.times, s[k]) for k in ("L2_plant", "L2_observer", "L2_error")
                  if k in s]
        (out / "plot.svg").write_text(log_plot(curves, title=f"{cfg.mode.value}, lambda={cfg.lam:g}"))
        names.append("plot.svg")
    manifest = RunManifest(None if config_path is None else str(config_path), str(out),
                           config_to_dict(cfg), {n: _sha256(out / n) for n in names})
    _write_json(out / "manifest.json", manifest.to_dict())
    return manifest


def _run_file(path, outdir, plot):
    cfg = parse_config(Path(path).read_text())
    return run(cfg, outdir, config_path=path, plot=plot)


def batch(config_dir, outdir, jobs: int = 1, plot: bool = True) -> list:
    """Run every ``*.yaml``/``*.yml`` in ``config_dir`` into ``outdir/<stem>``.

    Configs are parsed up front so a bad file stops the batch before any
    simulation. With both uncontrolled and controlled runs present a
    ``plot.svg`` comparing plant L2 norms is written to ``outdir``.
    """
    cdir, out = Path(config_dir), Path(outdir)
    paths = sorted(p for p in cdir.iterdir() if p.suffix in (".yaml", ".yml"))
    if not paths:
        raise ConfigError(f"no *.yaml configs in {cdir}")
    for p in paths:
        try:
            parse_config(p.read_text())
        except ConfigError as exc:
            raise ConfigError(f"{p.name}: {exc}", key=exc.key) from None
    out.mkdir(parents=True, exist_ok=True)
    targets = [(str(p), str(out / p.stem), plot) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            manifests = list(pool.map(_run_file, *zip(*targets)))
    else:
        manifests = [_run_file(*t) for t in targets]
    modes = {m.config["mode"] for m in manifests}
    if plot and Mode.UNCONTROLLED.value in modes and len(modes) > 1:
        curves = []
        for m in manifests:
            t, plant = _load_norm_series(Path(m.outdir), "L2")
            curves.append((f"{Path(m.outdir).name} ({m.config['mode']})", t, plant))
        (out / "plot.svg").write_text(log_plot(curves, title="plant L2 norm", ylabel="||u||"))
    _write_json(out / "batch.json", {"runs": [m.to_dict() for m in manifests]})
    return manifests


def _load_norm_series(rundir: Path, kind: str):
    t, plant = [], []
    with open(rundir / "norms.csv") as fh:
        next(fh)
        for line in fh:
            ts, k, p, _, _ = line.rstrip("\n").split(",")
            if k == kind:
                t.append(float(ts))
                plant.append(float(p))
    return np.array(t), np.array(plant)


def compare(dirs) -> dict:
    """Rate table and verdicts for two or more run directories.

    Runs must share grid size, time step and horizon. Rates are refitted
    from each ``norms.csv`` on a common window (the narrowest default
    window among the runs) so the comparison is like for like.
    """
    if len(dirs) < 2:
        raise InvalidArgumentError("compare needs at least two run directories")
    runs = []
    for d in dirs:
        d = Path(d)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
        except FileNotFoundError:
            raise InvalidArgumentError(f"{d} has no manifest.json") from None
        t, l2 = _load_norm_series(d, "L2")
        runs.append((d, manifest["config"], t, l2))
    ref = runs[0][1]
    for d, cfg, _, _ in runs[1:]:
        for key in ("n", "dt", "t_end"):
            if cfg[key] != ref[key]:
                raise InvalidArgumentError(
                    f"{d} differs in {key}: {cfg[key]} vs {ref[key]}")
    windows = [default_window(t, v) for _, _, t, v in runs]
    windows = [w for w in windows if w is not None]
    rows = []
    window = (max(w[0] for w in windows), min(w[1] for w in windows)) if windows else None
    for d, cfg, t, v in runs:
        rate, status = None, "undefined: zero series"
        if window is not None and np.any(v > 0):
            try:
                rate = fit_decay_rate(t, v, window)[1]
                status = "ok"
            except InvalidArgumentError as exc:
                status = f"undefined: {exc}"
        rows.append({"run": str(d), "mode": cfg["mode"], "lambda": cfg["lambda"],
                     "rate": rate, "status": status,
                     "initial": float(v[0]), "final": float(v[-1])})
    verdicts = []
    for a in range(len(rows)):
        for b in range(a + 1, len(rows)):
            ra, rb = rows[a], rows[b]
            if ra["rate"] is None or rb["rate"] is None:
                verdicts.append(f"{ra['run']} vs {rb['run']}: undefined")
                continue
            diff = ra["rate"] - rb["rate"]
            if diff == 0:
                verdicts.append(f"{ra['run']} and {rb['run']} decay at the same rate")
            else:
                fast, slow = (ra, rb) if diff > 0 else (rb, ra)
                verdicts.append(f"{fast['run']} decays faster than {slow['run']} "
                                f"(rate advantage {abs(diff):.6g})")
    return {"window": None if window is None else list(window), "runs": rows, "verdicts": verdicts}


def kernels_report(lam: float, m: int, outdir) -> dict:
    """Solve all four kernels, write CSV tables and a residual report."""
    if lam < 0 or not math.isfinite(lam):
        raise ConfigError("lambda must be finite and >= 0", key="lambda")
    if m < 7:
        raise ConfigError("m must be at least 7", key="m")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    ks = solve_kernel_set(lam, TriGrid(m))
    report = {"lambda": lam, "m": m, "kernels": {}}
    for name, kern in ks.items():
        write_kernel_csv(kern, out / f"{name}.csv")
        tr = trace_residuals(kern)
        report["kernels"][name] = {
            "solver": kern.solver_residual, "iterations": kern.iterations,
            "pde": pde_residual(kern), "diagonal": tr.diagonal,
            "derivative": tr.derivative, "edge": tr.edge,
        }
    report["reciprocity"] = {"k,l": reciprocity_residual(ks["k"], ks["l"]),
                             "p,r": reciprocity_residual(ks["p"], ks["r"])}
    _write_json(out / "residuals.json", report)
    return report


# -------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kdv-backstep",
        description="Backstepping output-feedback control of the KdV equation: "
                    "simulations, kernel tables and decay comparisons.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("config", help="YAML scenario file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--no-plot", action="store_true", help="skip plot.svg")

    p = sub.add_parser("batch", help="simulate every YAML file in a directory")
    p.add_argument("config_dir")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-j", "--jobs", type=int, default=1, help="parallel runs (default 1)")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("compare", help="compare decay of finished runs")
    p.add_argument("dirs", nargs="+", help="run directories")
    p.add_argument("-o", "--out", help="also write the report as JSON here")

    p = sub.add_parser("kernels", help="solve and tabulate the gain kernels")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True, help="lattice nodes per side")
    p.add_argument("-o", "--out", required=True)
    return parser


def _print_compare(report):
    print(f"{'run':40s} {'mode':15s} {'lambda':>7s} {'rate':>12s}")
    for r in report["runs"]:
        rate = "undefined" if r["rate"] is None else f"{r['rate']:.6g}"
        print(f"{r['run']:40s} {r['mode']:15s} {r['lambda']:7g} {rate:>12s}")
    for v in report["verdicts"]:
        print(v)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            path = Path(args.config)
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read {path}: {exc}") from None
            m = run(parse_config(text), args.out, config_path=str(path), plot=not args.no_plot)
            print(f"wrote {', '.join(m.artifacts)} to {m.outdir}")
        elif args.command == "batch":
            ms = batch(args.config_dir, args.out, jobs=args.jobs, plot=not args.no_plot)
            print(f"ran {len(ms)} scenarios into {args.out}")
        elif args.command == "compare":
            report = compare(args.dirs)
            _print_compare(report)
            if args.out:
                _write_json(Path(args.out), report)
        elif args.command == "kernels":
            rep = kernels_report(args.lam, args.m, args.out)
            for name, r in rep["kernels"].items():
                print(f"{name}: pde {r['pde']:.3g}  diagonal {r['diagonal']:.3g}  "
                      f"derivative {r['derivative']:.3g}  edge {r['edge']:.3g}")
            print(f"reciprocity k,l {rep['reciprocity']['k,l']:.3g}  "
                  f"p,r {rep['reciprocity']['p,r']:.3g}")
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
