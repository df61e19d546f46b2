"""Command-line entry point: identify, tune, simulate, analyze.

Exit codes: 0 ok, 1 bad input, 2 missing prerequisite or identification
failure, 3 no feasible controller, 4 unstable closure or simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np
import yaml

from .config import ConfigError, ProjectConfig, controller_from_dict, controller_to_dict, load_config
from .freq import close_loop, spectral_abscissa, write_response_csv
from .plant import ParameterError
from .sim import SimulationError, simulate
from .synthesis import (ControllerParams, SynthesisError, build_controller, tune, weighted_loop,
                        worst_case_cost)
from .sysid import IdentificationError, RecordError, identify, read_record
from .uncertainty import nominal_sample, sample

EXIT_OK, EXIT_INPUT, EXIT_PREREQ, EXIT_INFEASIBLE, EXIT_UNSTABLE = 0, 1, 2, 3, 4

log = logging.getLogger("slosh")


def _write_yaml(path, data) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def _fmt(x):
    if x is None:
        return "absent"
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        if isinstance(v, list):
            v = [float(x) for x in v]
        out[k] = _fmt(v)
    return out


def _samples(cfg: ProjectConfig, n: int, seed: int, scale: float):
    spec = cfg.uncertainty
    if scale != 1.0:
        spec = spec.scaled(scale)
    return sample(spec, cfg.plant, n, seed)


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -- commands ----------------------------------------------------------------

def cmd_identify(args) -> int:
    try:
        rec = read_record(args.record)
    except (OSError, RecordError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        res = identify(rec)
    except IdentificationError as exc:
        print(f"identification failed: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    path = os.path.join(_out_dir(args), "ident.yaml")
    _write_yaml(path, {k: float(v) for k, v in res.as_dict().items()})
    print(f"m_r={res.m_r_hat:.6g} m_s={res.m_s_hat:.6g} k={res.k_hat:.6g} "
          f"omega={res.omega_hat:.6g} residual={res.residual:.4g}")
    return EXIT_OK


def cmd_tune(args, cfg: ProjectConfig) -> int:
    seed = cfg.data["tune"]["seed"] if args.seed is None else args.seed
    n = args.samples or cfg.data["tune"]["samples"]
    samples = _samples(cfg, n, seed, args.uncertainty_scale)
    spec = cfg.tune_spec(seed)
    nominal = nominal_sample(cfg.plant, cfg.actuation.delay_T)
    out = _out_dir(args)
    try:
        res = tune(cfg.tune_init, spec, samples, cfg.weights, cfg.actuation, nominal, cfg.plant.m_r)
    except SynthesisError as exc:
        print(f"no feasible controller: {exc}", file=sys.stderr)
        print(yaml.safe_dump(_jsonable(exc.diagnostics), sort_keys=True), file=sys.stderr)
        return EXIT_INFEASIBLE
    _write_yaml(os.path.join(out, "controller.yaml"),
                controller_to_dict(res.params, worst_case_cost=float(res.cost), objective=float(res.objective),
                                   samples=int(n), seed=int(seed), evaluations=int(res.evaluations)))
    with open(os.path.join(out, "history.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cost", "feasible"])
        for i, c, f in res.history_rows():
            w.writerow([i, f"{c:.9g}", int(f)])
    print(f"worst-case cost {res.cost:.5g} over {n} samples ({res.evaluations} evaluations)")
    return EXIT_OK


def _jsonable(d):
    if isinstance(d, dict):
        return {str(k): _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, (np.floating, float)):
        return float(d)
    return d


def _load_controller(args) -> ControllerParams | None:
    path = args.controller or os.path.join(args.out, "controller.yaml")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return controller_from_dict(yaml.safe_load(fh) or {})


def cmd_simulate(args, cfg: ProjectConfig) -> int:
    names = cfg.scenario_names if args.scenario == "all" else [args.scenario]
    params = None
    out = _out_dir(args)
    code = EXIT_OK
    for name in names:
        scn, open_loop = cfg.scenario(name)
        open_loop = open_loop or args.open_loop
        arch = None
        if not open_loop:
            if params is None:
                params = _load_controller(args)
            if params is None:
                print("error: no controller file; run tune first or pass --open-loop", file=sys.stderr)
                return EXIT_PREREQ
            arch = cfg.controller(params, scn.sample.params)
        try:
            res = simulate(scn, arch)
        except SimulationError as exc:
            print(f"{name}: simulation failed: {exc}", file=sys.stderr)
            code = EXIT_UNSTABLE
            continue
        res.write_csv(os.path.join(out, f"{name}.csv"))
        metrics = _clean(res.metrics)
        metrics["open_loop"] = open_loop
        metrics["t_engage"] = _fmt(res.t_engage)
        _write_yaml(os.path.join(out, f"{name}_metrics.yaml"), metrics)
        print(f"{name}: cycles_to_damp={metrics['cycles_to_damp']} max_stroke={metrics['max_stroke']} "
              f"terminal_tank_velocity={metrics['terminal_tank_velocity']:.3g}")
    return code


def cmd_analyze(args, cfg: ProjectConfig) -> int:
    params = _load_controller(args)
    if params is None:
        print("error: no controller file", file=sys.stderr)
        return EXIT_PREREQ
    out = _out_dir(args)
    act, W, mr = cfg.actuation, cfg.weights, cfg.plant.m_r
    an = cfg.data.get("analysis") or {}
    seed = an.get("seed", 1) if args.seed is None else args.seed
    n = args.samples or an.get("samples", 58)
    samples = _samples(cfg, n, seed, args.uncertainty_scale)
    K = build_controller(params)
    omegas = np.logspace(-1, 3, 400)

    write_response_csv(os.path.join(out, "controller.csv"), K, omegas)
    zero = build_controller(ControllerParams(V=0.0))
    n_resp = min(an.get("response_samples", 10), len(samples))
    rows_open, rows_closed = [], []
    for i, s in enumerate(samples[:n_resp]):
        loop = weighted_loop(s, act, W, mr)
        for ctrl, rows in ((zero, rows_open), (K, rows_closed)):
            cl = close_loop(loop, ctrl)
            rows.append((i, cl))
    _write_family(os.path.join(out, "disturbance_open.csv"), rows_open, "w_Fd", "p", omegas)
    _write_family(os.path.join(out, "disturbance_closed.csv"), rows_closed, "w_Fd", "p", omegas)
    _write_family(os.path.join(out, "noise_to_command.csv"), rows_closed, "w_n", "c", omegas)

    bad = []
    abscissae = []
    for i, s in enumerate(samples):
        a = spectral_abscissa(close_loop(weighted_loop(s, act, W, mr), K))
        abscissae.append(a)
        if not a < -0.05:
            bad.append(i)
    cost = worst_case_cost(params, samples, W, act, mr)
    report = {
        "worst_case_cost": _fmt(float(cost)),
        "samples": int(n),
        "seed": int(seed),
        "vertex_abscissae": [float(a) for a, s in zip(abscissae, samples) if s.is_vertex],
        "max_abscissa": float(max(abscissae)),
        "unstable_samples": bad,
    }
    _write_yaml(os.path.join(out, "analysis.yaml"), report)
    print(f"worst-case cost {report['worst_case_cost']}, max abscissa {report['max_abscissa']:.4g}")
    if bad:
        print(f"unstable or insufficiently damped closures: samples {bad}", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


def _write_family(path, systems, inp, outp, omegas) -> None:
    from .freq import freqresp

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "omega", "magnitude", "phase"])
        for i, sys_ in systems:
            h = freqresp(sys_.select([inp], [outp]), omegas)[:, 0, 0]
            for om, mag, ph in zip(omegas, np.abs(h), np.unwrap(np.angle(h))):
                w.writerow([i, f"{om:.6g}", f"{mag:.9g}", f"{ph:.9g}"])


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slosh", description="Active slosh damping design toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="project YAML (defaults to the bundled 600 L project)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--uncertainty-scale", type=float, default=1.0)

    sp = sub.add_parser("identify", help="fit m_r, m_s, k to a pulse record")
    sp.add_argument("record", help="CSV with columns t,F_s,a_cmd")
    common(sp, config=False)
    sp = sub.add_parser("tune", help="tune the fixed-structure controller")
    common(sp)
    sp = sub.add_parser("simulate", help="run a named scenario (or 'all')")
    common(sp)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--open-loop", action="store_true")
    sp.add_argument("--controller", help="controller YAML (default OUT/controller.yaml)")
    sp = sub.add_parser("analyze", help="frequency responses and robustness report")
    common(sp)
    sp.add_argument("--controller", help="controller YAML (default OUT/controller.yaml)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "identify":
        return cmd_identify(args)
    if args.samples is not None and args.samples < 1:
        print("error: --samples must be positive", file=sys.stderr)
        return EXIT_INPUT
    if not args.uncertainty_scale > 0:
        print("error: --uncertainty-scale must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config)
        handler = {"tune": cmd_tune, "simulate": cmd_simulate, "analyze": cmd_analyze}[args.command]
        return handler(args, cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
