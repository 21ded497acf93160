"""Command-line front end: ``predict``, ``simulate``, ``verify`` and ``risk-curve``.

Exit codes are 0 on success, 1 for usage errors and 2 for data errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import DomainError, SpikeSlabPrior, constant_c, optimal_scale
from .prediction_sets import calibrate
from .predictive import fit
from .risk import (
    coord_risk_rho,
    lower_bound_block_prior,
    sup_estimation_risk,
    sup_risk,
)
from .simulation import MethodSpec, ScenarioSpec, resolve_scale, run_table
from .sparsity import estimate_by_method

EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_ETAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class PredictConfig:
    input: str
    output: Optional[str]
    r: Optional[float]
    r_column: Optional[str]
    kappa: float
    scale: str
    sparsity: str
    alpha: float
    seed: int

    def __post_init__(self):
        if (self.r is None) == (self.r_column is None):
            raise UsageError("give exactly one of --r and --r-column")
        if self.r is not None and not (self.r > 0 and math.isfinite(self.r)):
            raise UsageError("--r must be positive")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise UsageError("--kappa must be positive")
        if not (0 < self.alpha < 1):
            raise UsageError("--alpha must lie in (0, 1)")


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _write_text(path, text):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def read_counts_csv(path, r_column=None):
    """Parse ``id, x[, r]`` rows; returns ``(ids, x, r or None)``.

    ``id`` is optional (row numbers are used instead).  Raises
    :class:`DataError` with the offending line number.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    lines = [(i + 1, line) for i, line in enumerate(text.splitlines())
             if line.strip() and not line.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file, a header row is required")
    header_no, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    if "x" not in header:
        raise DataError(f"{path}:{header_no}: header must contain an 'x' column")
    if r_column is not None and r_column not in header:
        raise DataError(f"{path}:{header_no}: ratio column {r_column!r} not found")
    ids, xs, rs = [], [], []
    for (line_no, line), row in zip(lines[1:], csv.reader([ln for _, ln in lines[1:]])):
        if len(row) != len(header):
            raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, (c.strip() for c in row)))
        cell = rec["x"]
        if cell == "":
            raise DataError(f"{path}:{line_no}: missing count")
        try:
            x = int(cell)
        except ValueError:
            raise DataError(f"{path}:{line_no}: count {cell!r} is not an integer") from None
        if x < 0:
            raise DataError(f"{path}:{line_no}: count {x} is negative")
        if r_column is not None:
            try:
                r = float(rec[r_column])
            except ValueError:
                raise DataError(f"{path}:{line_no}: ratio {rec[r_column]!r} is not a number") from None
            if not (r > 0 and math.isfinite(r)):
                raise DataError(f"{path}:{line_no}: ratio must be positive, got {r}")
            rs.append(r)
        ids.append(rec.get("id", str(len(ids) + 1)))
        xs.append(x)
    if not xs:
        raise DataError(f"{path}: no data rows")
    return ids, np.array(xs, dtype=np.int64), (np.array(rs) if r_column is not None else None)


PREDICT_COLUMNS = ("id", "x", "r", "omega", "mean", "median", "q05", "q25", "q75", "q95",
                   "p_zero", "set_lo", "set_hi")


def cmd_predict(cfg: PredictConfig) -> int:
    ids, x, r_col = read_counts_csv(cfg.input, cfg.r_column)
    ratios = r_col if r_col is not None else np.full(x.size, cfg.r)
    try:
        est = estimate_by_method(x, cfg.sparsity)
        h = resolve_scale(cfg.scale, ratios, cfg.kappa, est.eta_hat)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    density = fit(x, SpikeSlabPrior.power(h, cfg.kappa), ratios)
    pred_set = calibrate(density, cfg.alpha, seed=cfg.seed)
    quant = {p: density.quantiles(p) for p in (0.05, 0.25, 0.5, 0.75, 0.95)}
    header = {
        "command": "predict",
        "config": cfg.__dict__,
        "s_hat": est.s_hat,
        "eta_hat": est.eta_hat,
        "h": h,
        "beta": pred_set.beta,
        "achieved_coverage": pred_set.achieved_coverage,
    }
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICT_COLUMNS)
    omega, mean, p0 = density.omega, density.mean(), density.p_zero()
    for i in range(x.size):
        writer.writerow([
            ids[i], int(x[i]), repr(float(ratios[i])), repr(float(omega[i])),
            repr(float(mean[i])), int(quant[0.5][i]), int(quant[0.05][i]), int(quant[0.25][i]),
            int(quant[0.75][i]), int(quant[0.95][i]), repr(float(p0[i])),
            int(pred_set.lo[i]), int(pred_set.hi[i]),
        ])
    _write_text(cfg.output, buf.getvalue())
    return 0


def load_simulation_config(path, trials=None, seed=None):
    """Read a JSON config ``{"scenario": {...}, "methods": [...], ...}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict) or "scenario" not in raw:
        raise UsageError("config must be an object with a 'scenario' entry")
    scenario = dict(raw["scenario"])
    if trials is not None:
        scenario["trials"] = trials
    if seed is not None:
        scenario["seed"] = seed
    known = {"scenario", "methods", "alpha", "m_cal", "set_kind", "external"}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        spec = ScenarioSpec.from_dict(scenario)
        methods = [MethodSpec.from_dict(m) for m in raw.get("methods", [{"kind": "proposed"}])]
    except (DomainError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    options = {
        "alpha": float(raw.get("alpha", 0.9)),
        "m_cal": int(raw.get("m_cal", 20_000)),
        "set_kind": raw.get("set_kind", "l1-ball"),
        "external": [(e["name"], e["path"]) for e in raw.get("external", [])],
    }
    return spec, methods, options


def cmd_simulate(config_path, output=None, trials=None, seed=None, workers=None) -> int:
    spec, methods, options = load_simulation_config(config_path, trials, seed)
    try:
        result = run_table(spec, methods, workers=workers, **options)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    header = {
        "command": "simulate",
        "scenario": spec.to_dict(),
        "methods": [m.__dict__ for m in methods],
        "alpha": options["alpha"],
        "m_cal": options["m_cal"],
        "set_kind": options["set_kind"],
        "seed": spec.seed,
    }
    _write_text(output, result.to_csv([json.dumps(header, sort_keys=True)]))
    return 0


def verify_report(r: float, kappa: float, etas=DEFAULT_ETAS) -> dict:
    """Finite-eta signatures of the minimax and estimation constants.

    Each eta uses the prior ``Pi[eta, kappa]`` and a single spike among
    ``n = round(1 / eta)`` coordinates for the block-prior lower bound.
    """
    etas = [float(e) for e in etas]
    if not etas or any(not (0 < e < 1) for e in etas):
        raise UsageError("eta values must lie in (0, 1)")
    c = float(constant_c(r))
    est_const = math.exp(-1.0) / r
    rows = []
    for eta in etas:
        prior = SpikeSlabPrior.power(eta, kappa)
        sup = sup_risk(prior, r)
        est = sup_estimation_risk(prior, r)
        rho0 = coord_risk_rho(0.0, prior, r)
        n = max(2, round(1.0 / eta))
        lower = lower_bound_block_prior(n, 1, r).bound
        upper = sup.sup_rho + (n - 1) * rho0
        log_inv = math.log(1.0 / eta)
        rows.append({
            "eta": eta,
            "sup_rho": sup.sup_rho,
            "argmax_lambda": sup.argmax_lambda,
            "ratio": sup.sup_rho / (c * log_inv),
            "rho0": rho0,
            "estimation_sup": est.sup_rho,
            "estimation_argmax_lambda": est.argmax_lambda,
            "estimation_ratio": est.sup_rho / (est_const * log_inv),
            "block_n": n,
            "lower_bound": lower,
            "implied_upper_bound": upper,
            "sandwich_ok": lower <= upper,
        })
    ordered = sorted(rows, key=lambda row: -row["eta"])

    def decreasing(key):
        vals = [row[key] for row in ordered]
        return all(b < a for a, b in zip(vals, vals[1:]))

    return {
        "r": r,
        "kappa": kappa,
        "c": c,
        "estimation_constant": est_const,
        "lambda_star": math.log((r + 1.0) / r),
        "optimal_scale": float(optimal_scale(r, kappa)),
        "per_eta": rows,
        "ratio_decreasing": decreasing("ratio"),
        "estimation_ratio_decreasing": decreasing("estimation_ratio"),
        "sandwich_ok": all(row["sandwich_ok"] for row in rows),
    }


def cmd_verify(r, kappa, etas, output=None) -> int:
    report = verify_report(r, kappa, etas)
    _write_text(output, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def parse_grid(spec: str) -> np.ndarray:
    """``log:a:b:k``, ``lin:a:b:k`` or a comma list of values."""
    try:
        if spec.startswith(("log:", "lin:")):
            kind, a, b, k = spec.split(":")
            a, b, k = float(a), float(b), int(k)
            grid = np.geomspace(a, b, k) if kind == "log" else np.linspace(a, b, k)
        else:
            grid = np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"bad grid {spec!r}") from None
    if grid.size == 0 or np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise UsageError("grid must be non-empty with finite non-negative values")
    return grid


def cmd_risk_curve(r, kappa, h, grid, output=None) -> int:
    prior = SpikeSlabPrior.power(h, kappa)
    buf = io.StringIO()
    buf.write("# " + json.dumps({"command": "risk-curve", "r": r, "kappa": kappa, "h": h},
                                sort_keys=True) + "\n")
    buf.write("lambda,rho\n")
    for lam in grid:
        buf.write(f"{float(lam)!r},{coord_risk_rho(float(lam), prior, r)!r}\n")
    _write_text(output, buf.getvalue())
    return 0


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-poisson", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("predict", help="fit the predictive density to a CSV of counts")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--r", type=_positive)
    p.add_argument("--r-column")
    p.add_argument("--kappa", type=_positive, default=0.1)
    p.add_argument("--scale", default="auto-lstar",
                   help="auto-lstar | auto-lbar | fixed:<h>")
    p.add_argument("--sparsity", default="count",
                   help="count | count-gt1 | kmeans2 | fixed:<s>")
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("simulate", help="run a simulation table from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)

    v = sub.add_parser("verify", help="finite-eta minimax constant report (JSON)")
    v.add_argument("--r", type=_positive, default=1.0)
    v.add_argument("--kappa", type=_positive, default=1.0)
    v.add_argument("--eta", default=",".join(f"{e:g}" for e in DEFAULT_ETAS),
                   help="comma-separated values in (0, 1)")
    v.add_argument("--output")

    c = sub.add_parser("risk-curve", help="coordinate risk rho(lambda) as CSV")
    c.add_argument("--r", type=_positive, default=1.0)
    c.add_argument("--kappa", type=_positive, default=1.0)
    c.add_argument("--h", type=_positive, required=True)
    c.add_argument("--grid", default="log:1e-4:50:100",
                   help="log:a:b:k | lin:a:b:k | comma list")
    c.add_argument("--output")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "predict":
            cfg = PredictConfig(
                input=args.input, output=args.output, r=args.r, r_column=args.r_column,
                kappa=args.kappa, scale=args.scale, sparsity=args.sparsity,
                alpha=args.alpha, seed=args.seed,
            )
            return cmd_predict(cfg)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.output, args.trials, args.seed, args.workers)
        if args.command == "verify":
            try:
                etas = [float(e) for e in args.eta.split(",") if e.strip()]
            except ValueError:
                raise UsageError(f"bad --eta {args.eta!r}") from None
            return cmd_verify(args.r, args.kappa, etas, args.output)
        return cmd_risk_curve(args.r, args.kappa, args.h, parse_grid(args.grid), args.output)
    except UsageError as exc:
        print(f"sparse-poisson: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"sparse-poisson: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
