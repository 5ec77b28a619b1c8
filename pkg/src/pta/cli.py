"""Command-line harness: runs, comparisons, sweeps, and oracle tables.

Outputs are CSV files (spreadsheet/gnuplot-ready) plus a run.json sidecar
with config echo, per-step diagnostics, and wall-clock timings. Results CSVs
contain nothing nondeterministic: two identical invocations produce
byte-identical files.

Exit codes: 0 success, 2 configuration errors, 3 numeric/step failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .core import ConfigurationError, NumericError, PtaError, StepFailed
from .driver import PtaConfig, run_fine_reference, run_pta
from .models import MODEL_BUILDERS, build_model
from .oracles import (rotating_planes_exact, springs_case2_averages,
                      tikhonov_limit, unforced_eigenmodes)
from .report import fit_cubic, speedup, write_csv, write_run_json

_CONFIG_KEYS_FLOAT = {"h", "delta", "dsigma", "t_end", "jump_factor",
                      "match_rtol", "match_floor", "jump_rel_floor"}
_CONFIG_KEYS_INT = {"max_retries", "burn_samples", "jump_history_cap",
                    "cp_budget_cap"}
_CONFIG_KEYS_STR = {"slow_value_rule", "on_jump"}
_CONFIG_KEYS_BOOL = {"frozen_load_in_bursts", "eps_zero_rates"}
_CRITERION_KEYS = {"tol1": float, "tol2": float, "k": int, "p": int,
                   "n_min": int, "n_max": int}
_MODEL_KEYS = {"epsilon": float, "desk_scale": bool}


def parse_config_file(path):
    """Flat key = value text, '#' comments, UTF-8."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _coerce_bool(val):
    low = str(val).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {val!r}")


def _apply_config(bundle, raw):
    """Layer file/flag overrides onto a model bundle's defaults."""
    cfg_kw = {}
    crit_kw = {}
    model_kw = {}
    x0 = l0 = None
    for key, val in raw.items():
        if key in _CONFIG_KEYS_FLOAT:
            cfg_kw[key] = float(val)
        elif key in _CONFIG_KEYS_INT:
            cfg_kw[key] = int(val)
        elif key in _CONFIG_KEYS_STR:
            cfg_kw[key] = str(val)
        elif key in _CONFIG_KEYS_BOOL:
            cfg_kw[key] = _coerce_bool(val)
        elif key in _CRITERION_KEYS:
            crit_kw[key] = _CRITERION_KEYS[key](val)
        elif key in _MODEL_KEYS:
            model_kw[key] = (_coerce_bool(val) if _MODEL_KEYS[key] is bool
                             else _MODEL_KEYS[key](val))
        elif key == "x0":
            x0 = [float(v) for v in str(val).split(",")]
        elif key == "l0":
            l0 = [float(v) for v in str(val).split(",")]
        else:
            raise ConfigurationError(f"unknown config key '{key}'")
    if model_kw or x0 is not None or l0 is not None:
        build_kw = dict(model_kw)
        if x0 is not None:
            build_kw["x0"] = x0
        if l0 is not None:
            build_kw["l0"] = l0
        bundle = build_model(bundle.name, **build_kw)
    if crit_kw:
        crit = dataclasses.replace(bundle.config.criterion, **crit_kw)
        cfg_kw["criterion"] = crit
    if cfg_kw:
        bundle = dataclasses.replace(
            bundle, config=dataclasses.replace(bundle.config, **cfg_kw))
    return bundle


def _load_bundle(args):
    raw = parse_config_file(args.config) if getattr(args, "config", None) else {}
    bundle = build_model(args.model)
    return _apply_config(bundle, raw)


def _outdir(args):
    out = Path(getattr(args, "out", None) or f"pta_out_{args.model}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def warm_kernels():
    """Trigger kernel compilation outside any timed region."""
    for name in ("rotating_planes", "springs_case1", "relaxation"):
        b = build_model(name)
        cfg = dataclasses.replace(
            b.config, t_end=b.config.h,
            criterion=dataclasses.replace(b.config.criterion, n_max=2000))
        try:
            run_pta(b.system, b.x0, b.l0, cfg, b.measurements)
        except PtaError:
            pass


def cmd_run_pta(args):
    bundle = _load_bundle(args)
    out = _outdir(args)
    report = run_pta(bundle.system, bundle.x0, bundle.l0, bundle.config,
                     bundle.measurements)
    write_csv(out / "results.csv", report)
    write_run_json(out / "run.json", report)
    print(f"wrote {out / 'results.csv'} ({len(report.grid)} grid points, "
          f"{sum(1 for s in report.steps if s['jump'])} jumps)")
    return 0


def cmd_run_fine(args):
    bundle = _load_bundle(args)
    out = _outdir(args)
    report = run_fine_reference(bundle.system, bundle.x0, bundle.l0,
                                bundle.config, bundle.measurements)
    write_csv(out / "fine.csv", report)
    write_run_json(out / "fine.json", report)
    print(f"wrote {out / 'fine.csv'}")
    return 0


def cmd_compare(args):
    bundle = _load_bundle(args)
    out = _outdir(args)
    pta_report = run_pta(bundle.system, bundle.x0, bundle.l0, bundle.config,
                         bundle.measurements)
    fine_report = run_fine_reference(bundle.system, bundle.x0, bundle.l0,
                                     bundle.config, bundle.measurements)
    write_csv(out / "compare.csv", pta_report, fine=fine_report)
    s = speedup(fine_report, pta_report)
    write_run_json(out / "run.json", pta_report, extra={
        "fine_timings": fine_report.timings,
        "speedup_exact": s.exact, "speedup_asymptotic": s.asymptotic})
    print(f"wrote {out / 'compare.csv'}; speedup exact={s.exact:.3g} "
          f"asymptotic={s.asymptotic:.3g}")
    return 0


def _sweep_bundle(name, eps):
    base = build_model(name, epsilon=eps)
    cfg = base.sweep_config or base.config
    return dataclasses.replace(base, config=cfg)


def cmd_sweep_eps(args):
    out = _outdir(args)
    base = build_model(args.model)
    eps_list = ([float(v) for v in args.eps.split(",")] if args.eps
                else list(base.sweep_eps))
    if not eps_list:
        raise ConfigurationError("no eps values given")
    warm_kernels()
    rows = []
    for eps in eps_list:
        bundle = _sweep_bundle(args.model, eps)
        t0 = time.perf_counter()
        rep = run_pta(bundle.system, bundle.x0, bundle.l0, bundle.config,
                      bundle.measurements)
        fine = run_fine_reference(bundle.system, bundle.x0, bundle.l0,
                                  bundle.config, bundle.measurements)
        s = speedup(fine, rep)
        rows.append((eps, s.exact, s.asymptotic, fine.total_wall_s,
                     rep.total_wall_s, time.perf_counter() - t0))
        print(f"eps={eps:.3g}: S_asym={s.asymptotic:.3g} S_exact={s.exact:.3g}")
    lines = ["eps,s_exact,s_asymptotic,fine_wall_s,pta_wall_s,sweep_wall_s"]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" for v in row))
    (out / "sweep_eps.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    fit = {}
    if len(set(eps_list)) >= 4:
        coeffs = fit_cubic(eps_list, [r[2] for r in rows])
        fit = {"cubic_coeffs_lowest_first": coeffs.tolist(),
               "intercept": coeffs[0]}
        print(f"cubic fit intercept (eps -> 0): {coeffs[0]:.4g}")
    (out / "sweep_eps.json").write_text(
        json.dumps({"model": args.model, "rows": rows, **fit}, indent=2),
        encoding="utf-8")
    return 0


def cmd_sweep_h(args):
    bundle = _load_bundle(args)
    out = _outdir(args)
    h_list = [float(v) for v in args.h.split(",")]
    warm_kernels()
    lines = ["h,max_abs_err,mean_abs_err,pta_wall_s"]
    for h in h_list:
        cfg = dataclasses.replace(bundle.config, h=h)
        rep = run_pta(bundle.system, bundle.x0, bundle.l0, cfg,
                      bundle.measurements)
        fine = run_fine_reference(bundle.system, bundle.x0, bundle.l0, cfg,
                                  bundle.measurements)
        err = np.abs(rep.values - fine.values)
        lines.append(f"{h:.17g},{err.max():.17g},{err.mean():.17g},"
                     f"{rep.total_wall_s:.17g}")
        print(f"h={h:g}: max err {err.max():.3g}")
    (out / "sweep_h.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_oracle(args):
    bundle = _load_bundle(args)
    out = _outdir(args)
    name = args.model
    lines = []
    if name == "rotating_planes":
        lines.append("sigma,x1,x2,x3,x4")
        x0 = bundle.x0 / np.linalg.norm(bundle.x0)
        for s in np.linspace(0.0, 2.0 * math.pi, 65):
            x = rotating_planes_exact(x0, s)
            lines.append(",".join(f"{v:.17g}" for v in [s, *x]))
    elif name.startswith("springs"):
        p = bundle.params
        grid = np.arange(0.0, bundle.config.t_end + 1e-12, bundle.config.h)
        if name.endswith("case2"):
            lines.append("t,K_cf,U_cf,R2_cf")
            for t in grid[1:]:
                k, u, r2 = springs_case2_averages(p, bundle.x0, t,
                                                  bundle.config.delta)
                lines.append(",".join(f"{v:.17g}" for v in [t, k, u, r2]))
        else:
            lines.append("t,x1,x2,y1,y2,w1,w2")
            for t in grid:
                row = tikhonov_limit(p, t)
                lines.append(",".join(f"{float(v):.17g}" for v in [t, *row]))
        em = unforced_eigenmodes(p)
        eig_lines = ["re,im"] + [f"{v.real:.17g},{v.imag:.17g}"
                                 for v in em.eigenvalues]
        (out / "eigenvalues.csv").write_text("\n".join(eig_lines) + "\n",
                                             encoding="utf-8")
    elif name == "relaxation":
        lines.append("x,y_upper,y_lower")
        for y in np.linspace(1.0 / math.sqrt(3.0), 1.5, 40):
            x = y - y ** 3
            lines.append(f"{x:.17g},{y:.17g},{-y:.17g}")
        fold = 2.0 / (3.0 * math.sqrt(3.0))
        lines.append(f"# folds at x = +-{fold:.17g}")
    (out / "oracle.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'oracle.csv'}")
    return 0


def cmd_power_balance(args):
    from .driver import _Runner
    from .models import power_balance_residual
    bundle = _load_bundle(args)
    if bundle.params is None:
        raise ConfigurationError("power balance applies to the springs models")
    out = _outdir(args)
    runner = _Runner(bundle.system, bundle.measurements, bundle.config)
    eps = bundle.system.epsilon
    p = bundle.params
    n_prime = bundle.config.n_prime(eps)
    state = bundle.system.state(bundle.x0, bundle.l0,
                                -bundle.config.delta / eps)
    lines = ["t,residual,dissipation,input_power,eta_c2_sq"]
    # settle, then sample windows along the run
    state = runner.advance(state, n_prime, coupled=True, frozen=False)
    for i in range(4):
        traj = runner.collect(state, n_prime, coupled=True, frozen=False)
        y1, y2 = traj.x[:, 1], traj.x[:, 3]
        diss = float(np.mean(p.eta * (y2 - y1) ** 2))
        r2 = -p.k2 * (traj.x[:, 2] - traj.l[:, 1])
        r1 = -p.k1 * (traj.x[:, 0] - traj.l[:, 0])
        pin = float(np.mean(r1 * p.c1 + r2 * p.c2))
        res = power_balance_residual(p, traj)
        t = (traj.sigmas[-1]) * eps
        lines.append(",".join(f"{v:.17g}" for v in
                              [t, res, diss, pin, p.eta * p.c2 ** 2]))
        state = traj.state(len(traj) - 1)
    (out / "power_balance.csv").write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")
    print(f"wrote {out / 'power_balance.csv'}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="pta",
        description="Coarse-grain slow-fast ODE systems by practical time "
                    "averaging; compare against full fine integration.")
    sub = ap.add_subparsers(dest="command", required=True)
    model_names = sorted(MODEL_BUILDERS)

    def add(name, fn, **extra):
        p = sub.add_parser(name)
        p.add_argument("model", choices=model_names)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory")
        for flag, kw in extra.items():
            p.add_argument(flag, **kw)
        p.set_defaults(fn=fn)
        return p

    add("run-pta", cmd_run_pta)
    add("run-fine", cmd_run_fine)
    add("compare", cmd_compare)
    add("sweep-eps", cmd_sweep_eps,
        **{"--eps": {"help": "comma-separated epsilon list"}})
    add("sweep-h", cmd_sweep_h,
        **{"--h": {"required": True, "help": "comma-separated h list"}})
    add("oracle", cmd_oracle)
    add("power-balance", cmd_power_balance)
    return ap


def run_cli(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as err:
        return 2 if err.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (StepFailed, NumericError) as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 3


def main():
    sys.exit(run_cli())
