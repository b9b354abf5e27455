"""Command-line front end: ``braggcomb {bloch,simulate,verify,quantum,report}``.

Configuration is a single JSON file; every field has a default, so
``braggcomb verify`` runs with no config at all. See ``DEFAULTS``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import BraggError, ConfigError

DEFAULTS = {
    "comb": {"alpha": 1.0},
    "kick": {"family": "laplace", "rate": 1.0, "scale": 1.0},
    "law": "exact",
    "k0": 20.3,
    "horizons": [50.0],
    "n_traj": 1000,
    "seed": 1,
    "flip_cap": 0,
    "lambda": [0.2, 0.1, 0.05],
    "quantum": {"t": 5.0, "n": 5000, "mode": "independent", "bin_width": 0.05},
    "bloch": {"k_min": 0.05, "k_max": 10.0, "step": 0.05, "gaps": [1, 2, 5, 10, 20, 50, 100]},
    "verify": {"criteria": list(range(1, 12))},
    "outputs": {"dir": "out", "formats": ["csv"], "plots": False},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"field '{where}': unknown key")
        if isinstance(base[key], dict) and not isinstance(val, dict):
            raise ConfigError(f"field '{where}': expected an object")
        out[key] = _merge(base[key], val, where) if isinstance(base[key], dict) else val
    return out


def _require(cond, field, msg):
    if not cond:
        raise ConfigError(f"field '{field}': {msg}")


def load_config(path=None, overrides=None):
    """Parse and validate a JSON config; errors name the offending field or line."""
    raw = {}
    if path:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
        _require(isinstance(raw, dict), "<root>", "config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    validate(cfg)
    return cfg


def validate(cfg):
    from .kicklaw import build_kick_law
    from .process import ProcessLaw

    a = cfg["comb"]["alpha"]
    _require(isinstance(a, (int, float)) and a > 0, "comb.alpha", "must be a positive number")
    try:
        build_kick_law(cfg["kick"])
    except (ValueError, KeyError) as e:
        raise ConfigError(f"field 'kick': {e}") from None
    try:
        ProcessLaw.parse(cfg["law"])
    except ValueError as e:
        raise ConfigError(f"field 'law': {e}") from None
    h = cfg["horizons"]
    _require(isinstance(h, list) and h and all(isinstance(x, (int, float)) and x > 0 for x in h),
             "horizons", "must be a nonempty list of positive times")
    _require(isinstance(cfg["n_traj"], int) and cfg["n_traj"] >= 1, "n_traj", "must be an integer >= 1")
    _require(isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 2 ** 64, "seed", "must be a 64-bit unsigned integer")
    lam = cfg["lambda"]
    _require(isinstance(lam, list) and lam and all(x > 0 for x in lam), "lambda", "must be positive values")
    _require(cfg["quantum"]["mode"] in ("independent", "coupled"), "quantum.mode",
             "must be 'independent' or 'coupled'")
    b = cfg["bloch"]
    _require(b["step"] > 0 and b["k_max"] > b["k_min"], "bloch", "need k_max > k_min and step > 0")
    crit = cfg["verify"]["criteria"]
    _require(all(isinstance(c, int) and 1 <= c <= 11 for c in crit), "verify.criteria", "entries must be 1..11")
    fm = cfg["outputs"]["formats"]
    _require(all(f in ("csv", "json") for f in fm), "outputs.formats", "entries must be csv or json")


def _objects(cfg):
    from .blochcore import CombParams
    from .kicklaw import build_kick_law

    return CombParams(float(cfg["comb"]["alpha"])), build_kick_law(cfg["kick"])


def g17(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([g17(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ---------------------------------------------------------------- commands

def cmd_bloch(cfg, out, fmt):
    from . import blochcore as bc

    comb, _ = _objects(cfg)
    b = cfg["bloch"]
    n = int(round((b["k_max"] - b["k_min"]) / b["step"]))
    ks = b["k_min"] + b["step"] * np.arange(n + 1)
    rows = []
    for k in ks:
        kk = float(bc.nudge(float(k)))
        q = bc.quasimomentum(kk, comb)
        rq = bc.reflection_quantities(kk, comb)
        c = bc.band_coords(kk)
        rows.append([float(k), q, q * q, c.nhalf, c.theta, rq.r_minus, rq.big_r_minus])
    gaps = [[int(m), bc.band_gap(int(m), comb)] for m in b["gaps"]]
    if "csv" in fmt:
        _write_csv(out / "spectrum.csv", ["k", "q", "energy", "n", "theta", "r_minus", "big_r_minus"], rows)
        _write_csv(out / "gaps.csv", ["n", "gap"], gaps)
    if "json" in fmt:
        _write_json(out / "spectrum.json", {"alpha": comb.alpha, "rows": rows, "gaps": gaps})
    return 0


def cmd_simulate(cfg, out, fmt, jobs):
    from .process import run_ensemble

    comb, kick = _objects(cfg)
    ens = run_ensemble(cfg["law"], cfg["k0"], cfg["horizons"], cfg["n_traj"], cfg["seed"],
                       comb, kick, jobs, flip_cap=int(cfg["flip_cap"]))
    snaps = [[i, float(t), float(ens.k[i, j]), float(ens.y[i, j]), float(ens.energy[i, j])]
             for i in range(ens.n_traj) for j, t in enumerate(ens.times)]
    flips = [[i, float(r[0]), float(r[1]), float(r[2])]
             for i, f in enumerate(ens.flips) if f is not None for r in f]
    if "csv" in fmt:
        _write_csv(out / "snapshots.csv", ["traj", "t", "k", "y", "energy"], snaps)
        if cfg["flip_cap"]:
            _write_csv(out / "flips.csv", ["traj", "tau", "k_before", "k_after"], flips)
    if "json" in fmt:
        _write_json(out / "snapshots.json", {"law": cfg["law"], "seed": cfg["seed"],
                                             "snapshots": snaps, "flips": flips})
    return 0


def cmd_verify(cfg, out, fmt, jobs, echo=print):
    from .acceptance import Context, run_suite

    comb, kick = _objects(cfg)
    ctx = Context(comb=comb, kick=kick, seed=cfg["seed"], jobs=jobs)
    results = []
    try:
        results = run_suite(cfg["verify"]["criteria"], ctx, echo=echo)
    finally:
        report = {"seed": cfg["seed"], "pass": bool(results) and all(r.passed for r in results),
                  "criteria": [r.to_dict() for r in results]}
        _write_json(out / "report.json", report)
    return 0 if report["pass"] else 1


def cmd_quantum(cfg, out, fmt, jobs):
    from .lindblad import semiclassical_compare

    comb, kick = _objects(cfg)
    q = cfg["quantum"]
    r = semiclassical_compare(cfg["lambda"], q["t"], cfg["k0"], q["n"], cfg["seed"], comb, kick,
                              q["mode"], q["bin_width"])
    h = r.histograms
    for i, lam in enumerate(r.lambdas):
        rows = [[c, m, cl] for c, m, cl in zip(h.centers, h.mass[i], h.mass[-1]) if m or cl]
        _write_csv(out / f"histogram_lambda_{lam:g}.csv", ["bin_center", "quantum_mass", "classical_mass"], rows)
    _write_json(out / "quantum.json", {"mode": r.mode, "n": r.n, "seed": r.seed,
                                       "lambda": r.lambdas, "l1": r.distances, "se": r.errors,
                                       "ratios": r.ratios(), "mean_deficit": r.mean_deficit})
    return 0


def cmd_report(cfg, out, fmt):
    path = out / "report.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'verify' first")
    rep = json.loads(path.read_text())
    lines = ["# Acceptance report", "", f"seed: {rep['seed']}, overall: {'PASS' if rep['pass'] else 'FAIL'}", "",
             "| criterion | title | result | runtime (s) |", "|---|---|---|---|"]
    for c in rep["criteria"]:
        lines.append(f"| {c['criterion']} | {c['title']} | {'PASS' if c['pass'] else 'FAIL'} | {c['runtime_s']:.1f} |")
    for c in rep["criteria"]:
        lines += ["", f"## {c['criterion']}. {c['title']}", ""]
        for ch in c["checks"]:
            tag = "info" if ch.get("informational") else ("pass" if ch["pass"] else "FAIL")
            lines.append(f"- [{tag}] {ch['name']}: {ch['statistic']} (target {ch['target']}, tol {ch['tolerance']})")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    if cfg["outputs"].get("plots"):
        _plots(out)
    return 0


def _plots(out):
    """SVG line charts of any histogram CSVs in the output directory."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    for f in sorted(out.glob("histogram_lambda_*.csv")):
        d = np.genfromtxt(f, delimiter=",", names=True)
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(d["bin_center"], d["quantum_mass"], label="quantum")
        ax.plot(d["bin_center"], d["classical_mass"], label="classical")
        ax.set_xlabel("k")
        ax.set_ylabel("mass per bin")
        ax.legend()
        fig.savefig(f.with_suffix(".svg"))
        plt.close(fig)


def build_parser():
    p = argparse.ArgumentParser(prog="braggcomb", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["bloch", "simulate", "verify", "quantum", "report"])
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--jobs", type=int, help="worker processes (default $BRAGG_JOBS or 1)")
    p.add_argument("--out", type=Path, help="output directory (default from config)")
    p.add_argument("--format", choices=["csv", "json"], help="output format override")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        jobs = args.jobs if args.jobs is not None else int(os.environ.get("BRAGG_JOBS", "1") or 1)
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = args.out or Path(cfg["outputs"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        fmt = [args.format] if args.format else cfg["outputs"]["formats"]
        if args.command == "bloch":
            return cmd_bloch(cfg, out, fmt)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, fmt, jobs)
        if args.command == "verify":
            return cmd_verify(cfg, out, fmt, jobs)
        if args.command == "quantum":
            return cmd_quantum(cfg, out, fmt, jobs)
        return cmd_report(cfg, out, fmt)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except BraggError as e:
        seed = args.seed
        print(f"error ({type(e).__name__}, seed={seed}): {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
