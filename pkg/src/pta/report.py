"""Run reports, error/speedup accounting, cubic speedup fits, and CSV I/O.

Numbers are written with 17 significant digits so a parsed CSV reproduces
the doubles bit-for-bit, and nothing nondeterministic (wall times) goes into
the results CSV; timings live in the report's ``timings`` dict and the JSON
sidecar the CLI writes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import ConfigurationError, ContractError


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class RunReport:
    """Per-run record: coarse grid, observable series, step outcomes, timings."""

    model: str
    kind: str
    config: dict
    names: list
    grid: np.ndarray
    values: np.ndarray
    steps: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @classmethod
    def from_series(cls, model, config, names, grid, values, outcomes,
                    timings, kind="pta"):
        steps = [{
            "t": o.t, "status": o.status, "retries": o.retries,
            "jump": bool(o.jumps.any()), "n_rate": o.n_rate,
            "n_burst": o.n_burst,
            "wall_s": o.wall_burst + o.wall_overhead,
            "v_pred": np.asarray(o.v_pred).tolist(),
            "v_acc": np.asarray(o.v_acc).tolist(),
        } for o in outcomes]
        cfg = dataclasses.asdict(config) if dataclasses.is_dataclass(config) \
            else dict(config)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(len(grid), -1)
        if values.shape[0] != len(grid):
            raise ContractError("series length must equal grid length")
        return cls(model=model, kind=kind, config=cfg, names=list(names),
                   grid=np.asarray(grid, dtype=float), values=values,
                   steps=steps, timings=dict(timings))

    def series(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    @property
    def jump_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.grid), dtype=int)
        for s in self.steps:
            i = int(np.argmin(np.abs(self.grid - s["t"])))
            flags[i] = 1 if s["jump"] else flags[i]
        return flags

    @property
    def total_wall_s(self) -> float:
        t = self.timings
        if self.kind == "fine":
            return float(t.get("fine_total_s", 0.0))
        return float(t.get("init_s", 0.0)) + float(sum(t.get("step_s", [])))


def error_percent(v_pta: float, v_f: float, floor: float = 0.0):
    """Relative error in percent, (v_pta - v_f) / v_f * 100.

    When the reference is (near) zero the relative error is meaningless; the
    absolute deviation is returned instead, flagged True.
    """
    if abs(v_f) <= floor or v_f == 0.0:
        return abs(v_pta - v_f), True
    return (v_pta - v_f) / v_f * 100.0, False


class SpeedupResult(NamedTuple):
    exact: float
    asymptotic: float


def speedup(report_fine: RunReport, report_pta: RunReport) -> SpeedupResult:
    """Wall-clock ratio fine/PTA: exact (initialization overhead included)
    and asymptotic (per coarse step, the large-horizon limit)."""
    fine_total = report_fine.total_wall_s
    pta_total = report_pta.total_wall_s
    exact = fine_total / pta_total if pta_total > 0 else float("inf")
    steps = report_pta.timings.get("step_s", [])
    per_fine = report_fine.timings.get("fine_per_step_s", 0.0)
    per_pta = float(np.mean(steps)) if steps else float("nan")
    asym = per_fine / per_pta if per_pta and per_pta > 0 else float("inf")
    return SpeedupResult(exact, asym)


def fit_cubic(eps_values, s_values) -> np.ndarray:
    """Least-squares cubic fit S(eps); coefficients lowest degree first.

    The constant coefficient is the eps -> 0 intercept (the asymptotic
    speedup). Requires at least four distinct eps values.
    """
    eps = np.asarray(eps_values, dtype=float)
    s = np.asarray(s_values, dtype=float)
    if len(np.unique(eps)) < 4:
        raise ConfigurationError("cubic fit needs >= 4 distinct eps values")
    # scale for conditioning, then unscale the coefficients
    scale = np.max(np.abs(eps))
    v = np.vander(eps / scale, 4, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(v, s, rcond=None)
    if rank < 4:
        raise ConfigurationError("cubic fit is rank deficient")
    return coeffs / scale ** np.arange(4)


def write_csv(path, report: RunReport, fine: RunReport | None = None,
              err_floor: float = 1e-12):
    """Results CSV: t, per-observable values (and fine/error columns when a
    reference run is supplied), and the jump flag. Deterministic bytes."""
    cols = ["t"]
    suffix = "_pta" if report.kind == "pta" else "_fine"
    for n in report.names:
        cols.append(n + suffix)
        if fine is not None:
            cols += [n + "_fine", n + "_err_pct"]
    cols.append("jump_flag")
    if fine is not None and not np.array_equal(fine.grid, report.grid):
        raise ContractError("fine and PTA grids differ")
    flags = report.jump_flags
    lines = [",".join(cols)]
    for i, t in enumerate(report.grid):
        row = [_fmt(t)]
        for j, n in enumerate(report.names):
            row.append(_fmt(report.values[i, j]))
            if fine is not None:
                vf = fine.values[i, fine.names.index(n)]
                err, is_abs = error_percent(report.values[i, j], vf, err_floor)
                row.append(_fmt(vf))
                row.append("nan" if is_abs else _fmt(err))
        row.append(str(int(flags[i])))
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return text


def read_csv(path):
    """Parse a results CSV back into (column names, columns dict)."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    cols = {name: np.array([float(r[i]) for r in rows])
            for i, name in enumerate(header)}
    return header, cols


def write_run_json(path, report: RunReport, extra: dict | None = None):
    """JSON sidecar: config echo, step diagnostics, wall-clock timings."""
    payload = {
        "model": report.model,
        "kind": report.kind,
        "config": report.config,
        "names": report.names,
        "steps": report.steps,
        "timings": report.timings,
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=float)
