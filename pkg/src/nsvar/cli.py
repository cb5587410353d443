"""Command-line interface: ``nsvar run`` and ``nsvar lab``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 zero plausibility.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bivariate_lab as lab
from .errors import ConfigError, DataError, NsvarError, SamplingError, ZeroPlausibilityError
from .restrictions import RestrictionSet, _load_mapping, parse_restrictions
from .robust import Target, compute_records, plausibility, posterior_bounds_probability
from .robust import robust_credible_region, set_of_posterior_means
from .sampling import PhiPosteriorSampler, draw_phi, hpd_interval, reweight_conditional
from .sampling import sample_unconditional
from .var_core import impulse_response, vma_coefficients

log = logging.getLogger("nsvar")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ZERO = 0, 2, 3, 4
MODES = ("robust", "standard_unconditional", "standard_conditional")
ALGORITHMS = ("mc", "chebyshev", "auto")


# --------------------------------------------------------------------------
# data ingestion

@dataclass(frozen=True)
class LoadedData:
    data: np.ndarray
    variables: list[str]
    dates: list[str] | None
    header: dict[str, int]


def load_csv(path, variables: Sequence[str] | None = None, date_column: str | None = None,
             log_columns: Sequence[str] = ()) -> LoadedData:
    """Read a rectangular numeric CSV with a header row.

    Columns are returned in the order of ``variables`` (all non-date columns by
    default); names listed in ``log_columns`` are replaced by their natural log.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    index = {h: k for k, h in enumerate(header)}
    if len(index) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    if date_column is not None and date_column not in index:
        raise DataError(f"{path}: date column {date_column!r} not found")
    if variables is None:
        variables = [h for h in header if h != date_column]
    missing = [v for v in variables if v not in index]
    if missing:
        raise DataError(f"{path}: variable column(s) {missing} not found in header {header}")
    bad_log = [v for v in log_columns if v not in variables]
    if bad_log:
        raise DataError(f"{path}: log-transform requested for unknown variable(s) {bad_log}")
    data = np.empty((len(rows) - 1, len(variables)))
    dates = [] if date_column is not None else None
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, name in enumerate(variables):
            cell = row[index[name]].strip()
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {name!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(data[r - 2, c]):
                raise DataError(f"{path}: row {r}, column {name!r}: non-finite value {cell!r}")
        if dates is not None:
            dates.append(row[index[date_column]].strip())
    for name in log_columns:
        c = list(variables).index(name)
        bad = np.flatnonzero(data[:, c] <= 0)
        if bad.size:
            raise DataError(f"{path}: row {int(bad[0]) + 2}, column {name!r}: cannot take log of "
                            f"{data[bad[0], c]}")
        data[:, c] = np.log(data[:, c])
    return LoadedData(data, list(variables), dates, index)


# --------------------------------------------------------------------------
# configuration

@dataclass
class TargetSpec:
    variable: str
    shock: str
    horizons: tuple[int, int]


@dataclass
class HypothesisSpec:
    variable: str
    shock: str
    horizon: int
    interval: tuple[float, float]


@dataclass
class RunConfig:
    data: str
    config: str
    targets: str
    out: str = "report"
    date_column: str | None = None
    variables: list[str] | None = None
    log_columns: list[str] = field(default_factory=list)
    lags: int = 1
    constant: bool = True
    phi_draws: int = 1000
    q_draws: int = 10_000
    max_q_attempts: int = 100_000
    r_draws: int = 10_000
    alphas: list[float] = field(default_factory=lambda: [0.68])
    seed: int = 0
    algorithm: str = "auto"
    mode: str = "robust"
    workers: int = 1

    def validate(self) -> None:
        if self.phi_draws < 1:
            raise ConfigError("phi-draws must be at least 1")
        if not 1 <= self.q_draws <= self.max_q_attempts:
            raise ConfigError("need 1 <= q-draws <= max-q-attempts")
        if self.r_draws < 1:
            raise ConfigError("r-draws must be at least 1")
        if self.lags < 0:
            raise ConfigError("lags must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("every alpha must lie in (0, 1)")


_MODEL_KEYS = {"variables", "lags", "constant", "date_column", "log"}


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def apply_model_table(cfg: RunConfig, restriction_text: str, overrides: set[str]) -> None:
    """Fill model settings from the ``[model]`` table unless given on the command line."""
    model = _load_mapping(restriction_text).get("model", {})
    extra = set(model) - _MODEL_KEYS
    if extra:
        raise ConfigError(f"model: unknown key(s) {sorted(extra)}")
    mapping = {"variables": "variables", "lags": "lags", "constant": "constant",
               "date_column": "date_column", "log": "log_columns"}
    for key, attr in mapping.items():
        if key in model and attr not in overrides:
            setattr(cfg, attr, model[key])


def parse_targets(text: str, variables: Sequence[str], shocks: Sequence[str] = ()):
    cfg = _load_mapping(text)
    extra = set(cfg) - {"target", "hypothesis"}
    if extra:
        raise ConfigError(f"targets config: unknown key(s) {sorted(extra)}")
    names = list(shocks) or list(variables)

    def resolve(value, pool, key, where):
        if isinstance(value, str) and value in pool:
            return pool.index(value)
        if isinstance(value, str) and value in variables:
            return list(variables).index(value)
        if isinstance(value, int) and not isinstance(value, bool) and 0 <= value < len(variables):
            return value
        raise ConfigError(f"{where}: unknown {key} {value!r}")

    targets, hyps = [], []
    for k, t in enumerate(cfg.get("target", [])):
        where = f"target[{k}]"
        extra = set(t) - {"variable", "shock", "horizons"}
        if extra:
            raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
        hz = t.get("horizons", [0, 0])
        if (not isinstance(hz, list) or len(hz) != 2
                or any(isinstance(h, bool) or not isinstance(h, int) for h in hz) or not 0 <= hz[0] <= hz[1]):
            raise ConfigError(f"{where}: horizons must be [first, last] non-negative integers")
        i = resolve(t.get("variable"), list(variables), "variable", where)
        j = resolve(t.get("shock"), names, "shock", where)
        targets.append((TargetSpec(str(t["variable"]), str(t["shock"]), (hz[0], hz[1])), i, j))
    for k, h in enumerate(cfg.get("hypothesis", [])):
        where = f"hypothesis[{k}]"
        extra = set(h) - {"variable", "shock", "horizon", "interval"}
        if extra:
            raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
        iv = h.get("interval")
        if not isinstance(iv, list) or len(iv) != 2 or not float(iv[0]) <= float(iv[1]):
            raise ConfigError(f"{where}: interval must be [low, high]")
        hor = h.get("horizon", 0)
        if isinstance(hor, bool) or not isinstance(hor, int) or hor < 0:
            raise ConfigError(f"{where}: horizon must be a non-negative integer")
        i = resolve(h.get("variable"), list(variables), "variable", where)
        j = resolve(h.get("shock"), names, "shock", where)
        hyps.append((HypothesisSpec(str(h["variable"]), str(h["shock"]), hor,
                                    (float(iv[0]), float(iv[1]))), i, j))
    if not targets:
        raise ConfigError("targets config defines no [[target]] entries")
    return targets, hyps


# --------------------------------------------------------------------------
# estimation

def choose_algorithm(requested: str, rset: RestrictionSet, shocks: set[int]) -> str:
    if requested != "auto":
        if requested == "chebyshev":
            col = rset.linear_column()
            ok = (col is None and not len(rset) and len(shocks) == 1) or (col is not None and shocks == {col})
            if not ok:
                raise ConfigError("algorithm=chebyshev needs restrictions linear in one column of Q "
                                  "and targets on that shock only")
        return requested
    col = rset.linear_column()
    return "chebyshev" if col is not None and shocks == {col} else "mc"


def _fmt(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def robust_estimate(sampler: PhiPosteriorSampler, rset: RestrictionSet, targets: Sequence[Target],
                    n_phi: int, rng: np.random.Generator, algorithm: str = "auto",
                    K: int = 10_000, L: int = 100_000, workers: int = 1):
    """Draw ``n_phi`` reduced-form parameters and compute bounds records for ``targets``."""
    algorithm = choose_algorithm(algorithm, rset, {t.shock for t in targets})
    draws = []
    for _ in range(n_phi):
        params = draw_phi(sampler, rng)
        draws.append((params, sampler.residuals(params)))
    records = compute_records(draws, rset, targets, algorithm, rng, K=K, L=L, workers=workers)
    return records, algorithm


def _robust_block(records, idx, horizons, alphas, hyps_here):
    block = {"horizon": list(horizons), "mean_l": [], "mean_u": [],
             "robust_region": {f"{a:g}": {"lo": [], "hi": []} for a in alphas}}
    nonempty = sum(not r.empty for r in records)
    for t in idx:
        if nonempty:
            ml, mu = set_of_posterior_means(records, t)
        else:
            ml = mu = None
        block["mean_l"].append(_fmt(ml))
        block["mean_u"].append(_fmt(mu))
        for a in alphas:
            key = f"{a:g}"
            if nonempty >= 100:
                cr = robust_credible_region(records, a, t)
                lo, hi = cr.lower, cr.upper
            else:
                lo = hi = None
            block["robust_region"][key]["lo"].append(_fmt(lo))
            block["robust_region"][key]["hi"].append(_fmt(hi))
    return block


def _standard_values(draws, targets: Sequence[Target]) -> np.ndarray:
    H = max(t.horizon for t in targets)
    out = np.empty((len(draws), len(targets)))
    for d, dr in enumerate(draws):
        vma = vma_coefficients(dr.params, H)
        for k, t in enumerate(targets):
            out[d, k] = impulse_response(dr.params, dr.Q, t.variable, t.shock, t.horizon, vma)
    return out


def run(cfg: RunConfig) -> tuple[dict, int, dict]:
    """Execute one configuration. Returns ``(report, exit_code, timing)``."""
    cfg.validate()
    t0 = time.perf_counter()
    restriction_text = _read_text(cfg.config)
    loaded = load_csv(cfg.data, cfg.variables, cfg.date_column, cfg.log_columns)
    variables = loaded.variables
    rset = parse_restrictions(restriction_text, variables, dates=loaded.dates, lags=cfg.lags,
                              n_obs=loaded.data.shape[0])
    shocks = list(_load_mapping(restriction_text).get("shocks", []))
    target_entries, hyps = parse_targets(_read_text(cfg.targets), variables, shocks)
    sampler = PhiPosteriorSampler.from_data(loaded.data, cfg.lags, cfg.constant)
    rng = np.random.default_rng(cfg.seed)

    flat: list[Target] = []
    layout = []
    for entry, i, j in target_entries:
        hs = list(range(entry.horizons[0], entry.horizons[1] + 1))
        layout.append((entry, list(range(len(flat), len(flat) + len(hs))), hs))
        flat.extend(Target(i, j, h) for h in hs)
    hyp_index = []
    for entry, i, j in hyps:
        tg = Target(i, j, entry.horizon)
        if tg not in flat:
            flat.append(tg)
        hyp_index.append((entry, flat.index(tg)))

    report: dict = {"config": _config_echo(cfg), "seed": cfg.seed, "mode": cfg.mode,
                    "n_restrictions": {"traditional": len(rset.traditional), "narrative": len(rset.narrative)},
                    "targets": [], "hypotheses": []}
    t1 = time.perf_counter()
    code = EXIT_OK
    if cfg.mode == "robust":
        records, algorithm = robust_estimate(sampler, rset, flat, cfg.phi_draws, rng, cfg.algorithm,
                                             cfg.q_draws, cfg.max_q_attempts, cfg.workers)
        report["algorithm"] = algorithm
        report["plausibility"] = plausibility(records)
        report["flagged_records"] = sum(r.flagged for r in records)
        if report["plausibility"] == 0.0:
            report["status"] = "zero_plausibility"
            code = EXIT_ZERO
        else:
            report["status"] = "ok"
        for entry, idx, hs in layout:
            block = {"variable": entry.variable, "shock": entry.shock}
            block.update(_robust_block(records, idx, hs, cfg.alphas, None))
            report["targets"].append(block)
        for entry, t in hyp_index:
            lo, hi = posterior_bounds_probability(records, entry.interval, t)
            report["hypotheses"].append({"variable": entry.variable, "shock": entry.shock,
                                         "horizon": entry.horizon,
                                         "interval": [_fmt(entry.interval[0]), _fmt(entry.interval[1])],
                                         "lower_prob": lo, "upper_prob": hi})
    else:
        try:
            draws = sample_unconditional(sampler, rset, cfg.phi_draws, rng,
                                         max_q_attempts=cfg.max_q_attempts)
        except SamplingError as exc:
            report["status"] = "zero_plausibility"
            report["message"] = str(exc)
            return report, EXIT_ZERO, {"total_seconds": time.perf_counter() - t0}
        if cfg.mode == "standard_conditional":
            draws = reweight_conditional(draws, rset, cfg.r_draws, rng)
        values = _standard_values(draws, flat)
        report["status"] = "ok"
        for entry, idx, hs in layout:
            block = {"variable": entry.variable, "shock": entry.shock, "horizon": hs,
                     "mean": [float(values[:, t].mean()) for t in idx],
                     "median": [float(np.median(values[:, t])) for t in idx],
                     "hpd": {f"{a:g}": {"lo": [], "hi": []} for a in cfg.alphas}}
            for a in cfg.alphas:
                for t in idx:
                    lo, hi = hpd_interval(values[:, t], a) if len(values) >= 100 else (None, None)
                    block["hpd"][f"{a:g}"]["lo"].append(_fmt(lo))
                    block["hpd"][f"{a:g}"]["hi"].append(_fmt(hi))
            report["targets"].append(block)
        for entry, t in hyp_index:
            a, b = entry.interval
            p = float(np.mean((values[:, t] >= a) & (values[:, t] <= b)))
            report["hypotheses"].append({"variable": entry.variable, "shock": entry.shock,
                                         "horizon": entry.horizon, "interval": [_fmt(a), _fmt(b)],
                                         "probability": p})
    timing = {"setup_seconds": t1 - t0, "estimation_seconds": time.perf_counter() - t1,
              "total_seconds": time.perf_counter() - t0}
    return report, code, timing


def _config_echo(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d.pop("workers")
    return d


def write_outputs(report: dict, timing: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=2) + "\n")
    for k, block in enumerate(report.get("targets", [])):
        name = f"target_{k}_{block['variable']}_{block['shock']}.csv"
        with (out / name).open("w", newline="") as fh:
            w = csv.writer(fh)
            if "mean_l" in block:
                a = sorted(block["robust_region"])[0]
                w.writerow(["horizon", "mean_l", "mean_u", "rcr_lo", "rcr_hi"])
                rr = block["robust_region"][a]
                for row in zip(block["horizon"], block["mean_l"], block["mean_u"], rr["lo"], rr["hi"]):
                    w.writerow(row)
            else:
                a = sorted(block["hpd"])[0]
                w.writerow(["horizon", "mean", "hpd_lo", "hpd_hi"])
                hp = block["hpd"][a]
                for row in zip(block["horizon"], block["mean"], hp["lo"], hp["hi"]):
                    w.writerow(row)


# --------------------------------------------------------------------------
# lab subcommands

def _write_curve(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def lab_likelihood(args) -> int:
    rng = np.random.default_rng(args.seed)
    phi = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    kind = args.kind.replace("-", "_")
    while True:
        Y, _ = lab.simulate_bivariate(lab.TRUE_A0, args.T, True, rng)
        if lab.restriction_holds(lab.true_theta(), phi, Y[0], kind):
            break
    grid = lab.theta_grid(phi, args.grid)
    prof = lab.likelihood_profile(grid, phi, Y, kind, args.mode, args.M, rng)
    _write_curve(args.out, ["theta", "value", "probability"],
                 zip(prof.theta, prof.value, prof.probability))
    return EXIT_OK


def lab_hellinger(args) -> int:
    rng = np.random.default_rng(args.seed)
    phi = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    theta0 = lab.true_theta()
    grid = lab.theta_grid(phi, args.grid)
    hd = lab.hellinger_profile(grid, phi, theta0, args.kind.replace("-", "_"), args.mode, args.M, rng)
    _write_curve(args.out, ["theta", "value"], zip(grid, hd))
    return EXIT_OK


def lab_consistency(args) -> int:
    rng = np.random.default_rng(args.seed)
    T_list = [int(t) for t in str(args.T).split(",") if t.strip()]
    if not T_list or min(T_list) < 1:
        raise ConfigError("--T must be a comma-separated list of positive integers")
    rows = lab.consistency_experiment(T_list, rng, args.replications)
    _write_curve(args.out, ["T", "width", "replication"],
                 ((int(T), w, int(r)) for T, w, r, _ in rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsvar", description="Robust Bayesian SVAR inference under narrative restrictions")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="estimate bounds and posterior summaries")
    r.add_argument("--data", required=True)
    r.add_argument("--config", required=True, help="restriction TOML (may contain a [model] table)")
    r.add_argument("--targets", required=True, help="targets/hypotheses TOML")
    r.add_argument("--out", default="report")
    r.add_argument("--variables", type=lambda s: [v.strip() for v in s.split(",")])
    r.add_argument("--date-column")
    r.add_argument("--log", dest="log_columns", type=lambda s: [v.strip() for v in s.split(",")])
    r.add_argument("--lags", type=int)
    r.add_argument("--constant", action=argparse.BooleanOptionalAction, default=None)
    r.add_argument("--phi-draws", type=int, default=1000)
    r.add_argument("--q-draws", type=int, default=10_000)
    r.add_argument("--max-q-attempts", type=int, default=100_000)
    r.add_argument("--r-draws", type=int, default=10_000)
    r.add_argument("--alpha", type=lambda s: [float(a) for a in s.split(",")], default=[0.68])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--algorithm", choices=ALGORITHMS, default="auto")
    r.add_argument("--mode", choices=MODES, default="robust")
    r.add_argument("--workers", type=int, default=1)

    lb = sub.add_parser("lab", help="bivariate reproductions")
    lsub = lb.add_subparsers(dest="lab_command", required=True)
    lk = lsub.add_parser("likelihood")
    lk.add_argument("--kind", choices=("shock-sign", "hist-decomp"), default="shock-sign")
    lk.add_argument("--mode", choices=("conditional", "unconditional"), default="conditional")
    lk.add_argument("--T", type=int, default=3)
    lk.add_argument("--M", type=int, default=1_000_000)
    lk.add_argument("--grid", type=int, default=1001)
    lk.add_argument("--seed", type=int, default=0)
    lk.add_argument("--out", default="likelihood.csv")
    lk.set_defaults(func=lab_likelihood)
    lh = lsub.add_parser("hellinger")
    lh.add_argument("--kind", choices=("shock-sign", "hist-decomp"), default="shock-sign")
    lh.add_argument("--mode", choices=("conditional", "unconditional"), default="unconditional")
    lh.add_argument("--M", type=int, default=200_000)
    lh.add_argument("--grid", type=int, default=1001)
    lh.add_argument("--seed", type=int, default=0)
    lh.add_argument("--out", default="hellinger.csv")
    lh.set_defaults(func=lab_hellinger)
    lc = lsub.add_parser("consistency")
    lc.add_argument("--T", default="10,100,1000")
    lc.add_argument("--replications", type=int, default=100)
    lc.add_argument("--seed", type=int, default=0)
    lc.add_argument("--out", default="consistency.csv")
    lc.set_defaults(func=lab_consistency)
    return p


def config_from_args(args) -> RunConfig:
    overrides = set()
    cfg = RunConfig(data=args.data, config=args.config, targets=args.targets, out=args.out,
                    phi_draws=args.phi_draws, q_draws=args.q_draws, max_q_attempts=args.max_q_attempts,
                    r_draws=args.r_draws, alphas=list(args.alpha), seed=args.seed,
                    algorithm=args.algorithm, mode=args.mode, workers=args.workers)
    for attr in ("variables", "date_column", "log_columns", "lags", "constant"):
        val = getattr(args, attr)
        if val is not None:
            setattr(cfg, attr, val)
            overrides.add(attr)
    apply_model_table(cfg, _read_text(cfg.config), overrides)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            report, code, timing = run(cfg)
            write_outputs(report, timing, cfg.out)
            if code == EXIT_ZERO:
                print("zero plausibility: no reduced-form draw admits the restrictions", file=sys.stderr)
            return code
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ZeroPlausibilityError as exc:
        print(f"zero plausibility: {exc}", file=sys.stderr)
        return EXIT_ZERO
    except NsvarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
