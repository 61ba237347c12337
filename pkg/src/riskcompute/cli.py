"""Command-line runner for the four experiment families.

Each subcommand reads an optional JSON config (``--config``), applies flag
overrides, validates everything up front and writes one result table.
Exit status is 0 on success, 2 for a bad configuration and 3 when the run
itself fails.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, expfam, matinv, normal, robust
from .montecarlo import run_replicates
from .results import ResultTable, csv_text, write_table

__all__ = ["ConfigError", "ExperimentConfig", "validate", "run", "build_table", "main", "DEFAULTS"]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DEFAULTS: dict[str, dict] = {
    "normal-frontier": {
        "mu": 0.0,
        "sigma2": 1.0,
        "n": 100,
        "budgets": None,
        "method": "exhaustive",
        "tie_break": "overlap",
        "s": None,
    },
    "expfam-frontier": {
        "family": "normal",
        "tau": [0.0, 1.0],
        "target": "natural",
        "n": 100,
        "budgets": None,
        "method": "auto",
        "unit_costs": None,
        "q_weights": None,
        "starts": 8,
    },
    "hl": {
        "n": 500,
        "alphas": [0.05, 0.1, 0.2],
        "budgets": [100, 200, 300, 400, 500],
        "variants": ["mean", "sequential", "sample", "subset"],
        "m": None,
    },
    "matinv": {
        "rhos": [0.01, 0.45, 0.88],
        "methods": ["ns-safe", "ns-naive", "power-constant-200", "power-decreasing-200"],
        "n_rows": 100,
        "p": 10,
        "ns_iters": 20,
    },
}

DEFAULT_REPLICATES = {"normal-frontier": 2000, "expfam-frontier": 2, "hl": 1000, "matinv": 200}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict = field(default_factory=dict)
    master_seed: int = 0
    replicates: int | None = None
    output_path: str | None = None
    format: str = "csv"
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - {"experiment", "parameters", "seed", "replicates", "out", "format", "jobs"}
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in sorted(unknown)])
        if "experiment" not in data:
            raise ConfigError(["config is missing the 'experiment' key"])
        return cls(
            experiment=data["experiment"],
            parameters=dict(data.get("parameters") or {}),
            master_seed=data.get("seed", 0),
            replicates=data.get("replicates"),
            output_path=data.get("out"),
            format=data.get("format", "csv"),
            n_jobs=data.get("jobs", 1),
        )

    def resolved(self) -> dict:
        """Defaults overlaid with the given parameters (unknown keys are kept for validation)."""
        params = copy.deepcopy(DEFAULTS.get(self.experiment, {}))
        params.update(self.parameters)
        return params

    @property
    def n_replicates(self) -> int:
        return DEFAULT_REPLICATES.get(self.experiment, 2) if self.replicates is None else self.replicates


def parse_budgets(value, default_hi: int, default_lo: int = 2) -> list[int]:
    """Accept a list, a single number, or ``"lo:hi[:step]"`` (inclusive)."""
    if value is None:
        return list(range(default_lo, default_hi + 1))
    if isinstance(value, str):
        parts = [int(p) for p in value.split(":")]
        if len(parts) == 1:
            return parts
        if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] < 1):
            raise ValueError(f"budget range must be lo:hi[:step] with step >= 1, got {value!r}")
        lo, hi = parts[:2]
        return list(range(lo, hi + 1, parts[2] if len(parts) == 3 else 1))
    if isinstance(value, (int, float)):
        return [int(value)]
    return [int(b) for b in value]


def _expfam_parts(p: dict):
    fam = expfam.FAMILIES[p["family"]]()
    if p["unit_costs"] is not None:
        fam = fam.with_costs(p["unit_costs"])
    targets = {
        "identity": lambda: expfam.identity_target(fam.p),
        "natural": lambda: expfam.natural_target(fam),
        "moments": expfam.normal_moments_target,
    }
    if p["target"] not in targets:
        raise ValueError(f"target must be one of {sorted(targets)}, got {p['target']!r}")
    target = targets[p["target"]]()
    if p["q_weights"] is not None:
        target = target.weighted(p["q_weights"])
    return fam, np.asarray(p["tau"], dtype=float), target


def _expfam_budgets(p: dict, fam) -> list[int]:
    lo = math.ceil(sum(fam.unit_costs))
    hi = math.floor(p["n"] * sum(fam.unit_costs))
    if p["budgets"] is None:
        step = max(1, (hi - lo) // 20)
        return list(range(lo, hi + 1, step))
    return parse_budgets(p["budgets"], hi, lo)


def validate(config: ExperimentConfig) -> list[str]:
    """Every configuration problem found, without running anything."""
    errors: list[str] = []
    exp = config.experiment
    if exp not in DEFAULTS:
        return [f"unknown experiment {exp!r}; choose from {sorted(DEFAULTS)}"]
    for key in sorted(set(config.parameters) - set(DEFAULTS[exp])):
        errors.append(f"unknown parameter {key!r} for experiment {exp}")
    if config.format not in ("csv", "json"):
        errors.append(f"format must be csv or json, got {config.format!r}")
    if not isinstance(config.master_seed, int) or config.master_seed < 0:
        errors.append(f"seed must be a non-negative integer, got {config.master_seed!r}")
    if not isinstance(config.n_jobs, int) or config.n_jobs < 1:
        errors.append(f"jobs must be a positive integer, got {config.n_jobs!r}")
    reps = config.n_replicates
    if not isinstance(reps, int) or reps < 2:
        errors.append(f"replicates must be an integer >= 2, got {reps!r}")
    p = config.resolved()
    check = {
        "normal-frontier": _validate_normal,
        "expfam-frontier": _validate_expfam,
        "hl": _validate_hl,
        "matinv": _validate_matinv,
    }[exp]
    try:
        errors.extend(check(p))
    except Exception as exc:  # validation must report, never crash
        errors.append(f"invalid parameters: {exc}")
    return errors


def _positive_int(p, key, errors, lo=1):
    v = p[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
        errors.append(f"{key} must be an integer >= {lo}, got {v!r}")
        return False
    return True


def _validate_normal(p) -> list[str]:
    errors = []
    try:
        normal.NormalParams(float(p["mu"]), float(p["sigma2"]))
    except (TypeError, ValueError) as exc:
        errors.append(str(exc))
    n_ok = _positive_int(p, "n", errors, lo=3)
    if p["method"] not in ("exhaustive", "relaxed"):
        errors.append(f"method must be exhaustive or relaxed, got {p['method']!r}")
    if p["tie_break"] not in ("overlap", "disjoint"):
        errors.append(f"tie_break must be overlap or disjoint, got {p['tie_break']!r}")
    if n_ok:
        n = p["n"]
        try:
            budgets = parse_budgets(p["budgets"], 2 * n)
            if not budgets:
                errors.append("budgets is empty")
            if any(b < 2 for b in budgets):
                errors.append("every budget must be >= 2")
            if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
                errors.append("budgets must be sorted ascending")
        except (TypeError, ValueError) as exc:
            errors.append(f"budgets: {exc}")
        s = p["s"]
        if s is not None and (not isinstance(s, int) or not 2 <= s <= n - 1):
            errors.append(f"s must be in [2, n-1] = [2, {n - 1}], got {s!r}")
    return errors


def _validate_expfam(p) -> list[str]:
    errors = []
    if p["family"] not in expfam.FAMILIES:
        return [f"family must be one of {sorted(expfam.FAMILIES)}, got {p['family']!r}"]
    try:
        fam, tau, target = _expfam_parts(p)
    except (TypeError, ValueError) as exc:
        return [str(exc)]
    if tau.shape != (fam.p,):
        return [f"tau must have {fam.p} entries for the {fam.name} family"]
    try:
        fam.theta_of_tau(tau)
    except ValueError as exc:
        errors.append(f"tau outside the {fam.name} domain: {exc}")
    if p["target"] == "moments" and fam.name != "normal":
        errors.append("the moments target is only defined for the normal family")
    if p["method"] not in ("auto", "exhaustive", "relaxed"):
        errors.append(f"method must be auto, exhaustive or relaxed, got {p['method']!r}")
    _positive_int(p, "starts", errors)
    if _positive_int(p, "n", errors):
        try:
            budgets = _expfam_budgets(p, fam)
            if not budgets:
                errors.append("budgets is empty")
            if budgets and min(budgets) < sum(fam.unit_costs):
                errors.append(f"every budget must be >= {sum(fam.unit_costs)}")
        except (TypeError, ValueError) as exc:
            errors.append(f"budgets: {exc}")
    return errors


def _validate_hl(p) -> list[str]:
    errors = []
    n_ok = _positive_int(p, "n", errors, lo=2)
    for a in p["alphas"]:
        if not isinstance(a, (int, float)) or not 0 <= a <= 1:
            errors.append(f"alpha must lie in [0, 1], got {a!r}")
    for v in p["variants"]:
        if v not in {k.value for k in robust.HlKind}:
            errors.append(f"unknown variant {v!r}")
    try:
        budgets = parse_budgets(p["budgets"], p["n"] if n_ok else 2)
        if any(b < 1 for b in budgets):
            errors.append("every budget must be >= 1")
    except (TypeError, ValueError) as exc:
        errors.append(f"budgets: {exc}")
    if p["m"] is not None and n_ok and (not isinstance(p["m"], int) or not 2 <= p["m"] <= p["n"]):
        errors.append(f"m must be in [2, n] = [2, {p['n']}], got {p['m']!r}")
    return errors


def _validate_matinv(p) -> list[str]:
    errors = []
    p_ok = _positive_int(p, "p", errors)
    _positive_int(p, "ns_iters", errors, lo=0)
    if _positive_int(p, "n_rows", errors) and p_ok and p["n_rows"] <= p["p"]:
        errors.append(f"n_rows must exceed p for a nonsingular Gram matrix, got n_rows={p['n_rows']}, p={p['p']}")
    for r in p["rhos"]:
        try:
            matinv.DesignConfig(rho=float(r))
        except (TypeError, ValueError) as exc:
            errors.append(str(exc))
    for m in p["methods"]:
        try:
            matinv.MethodSpec.parse(m)
        except (TypeError, ValueError) as exc:
            errors.append(str(exc))
    return errors


def _metadata(config: ExperimentConfig, params: dict, extra: dict | None = None) -> dict:
    # Worker count and output path are deliberately left out: they do not
    # change the numbers, and keeping them out keeps files byte-identical.
    meta = {
        "tool": "riskcompute",
        "version": __version__,
        "experiment": config.experiment,
        "seed": config.master_seed,
        "replicates": config.n_replicates,
        "parameters": params,
    }
    if extra:
        meta.update(extra)
    return meta


def _run_normal(config, p) -> ResultTable:
    params = normal.NormalParams(float(p["mu"]), float(p["sigma2"]))
    n = p["n"]
    budgets = parse_budgets(p["budgets"], 2 * n)
    curve = normal.frontier(params, n, budgets, method=p["method"], tie_break=p["tie_break"])
    extra = {}
    if p["s"] is not None:
        s = p["s"]
        exact_mu, exact_s2 = normal.streaming_risks(params, n, s)
        check = {"s": s, "risk_mu_exact": exact_mu, "risk_sigma2_exact": exact_s2}
        for i, key in enumerate(("mu", "sigma2")):
            w = [1.0, 0.0] if i == 0 else [0.0, 1.0]
            est = run_replicates(
                lambda x, rng, ledger: normal.streaming_estimate(x, s, ledger),
                params.truth,
                lambda rng: rng.normal(params.mu, params.sigma, n),
                config.n_replicates,
                config.master_seed,
                weights=w,
                n_jobs=config.n_jobs,
            )
            check[f"risk_{key}_mc"] = est.mean_loss
            check[f"risk_{key}_se"] = est.std_error
        extra["streaming_check"] = check
    return ResultTable.from_rows(curve.rows(), _metadata(config, p, extra))


def _run_expfam(config, p) -> ResultTable:
    fam, tau, target = _expfam_parts(p)
    patterns = expfam.block_patterns(fam.p) if fam.p <= 4 else None
    rows = []
    for b in _expfam_budgets(p, fam):
        res = expfam.optimize_allocation(fam, tau, target, b, p["n"], method=p["method"], starts=p["starts"],
                                         seed=config.master_seed)
        row = {"budget": b, "cost": float(res.cost), "risk": res.risk}
        for k, size in enumerate(res.allocation.sizes):
            row[f"size_{k}"] = int(size)
        if patterns is not None:
            blocks = {tuple(m): s for m, s in res.allocation.blocks}
            for pat in patterns:
                row["block_" + "".join(map(str, pat))] = int(blocks.get(pat, 0))
        rows.append(row)
    return ResultTable.from_rows(rows, _metadata(config, p))


def _run_hl(config, p) -> ResultTable:
    rows = robust.hl_experiment(
        p["n"],
        p["alphas"],
        parse_budgets(p["budgets"], p["n"]),
        config.n_replicates,
        config.master_seed,
        kinds=p["variants"],
        m=p["m"],
        n_jobs=config.n_jobs,
    )
    return ResultTable.from_rows(rows, _metadata(config, p))


def _run_matinv(config, p) -> ResultTable:
    trajectories = matinv.matinv_experiment(
        rhos=p["rhos"],
        methods=p["methods"],
        datasets=config.n_replicates,
        master_seed=config.master_seed,
        n_rows=p["n_rows"],
        p=p["p"],
        ns_iters=p["ns_iters"],
        n_jobs=config.n_jobs,
    )
    rows = [row for t in trajectories for row in t.rows()]
    return ResultTable.from_rows(rows, _metadata(config, p))


RUNNERS = {
    "normal-frontier": _run_normal,
    "expfam-frontier": _run_expfam,
    "hl": _run_hl,
    "matinv": _run_matinv,
}


def build_table(config: ExperimentConfig) -> ResultTable:
    errors = validate(config)
    if errors:
        raise ConfigError(errors)
    return RUNNERS[config.experiment](config, config.resolved())


def run(config: ExperimentConfig) -> ResultTable:
    """Validate, run and (if ``output_path`` is set) write the table."""
    table = build_table(config)
    if config.output_path:
        write_table(table, config.output_path, config.format)
    return table


# -- argument parsing ---------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _words(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _budgets_arg(text: str):
    return text if ":" in text else [int(v) for v in text.split(",") if v.strip()]


def _add_common(sub):
    sub.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--replicates", type=int, help="Monte Carlo replicates or datasets")
    sub.add_argument("--out", help="output file; without it the table is printed as CSV")
    sub.add_argument("--format", choices=("csv", "json"))
    sub.add_argument("--jobs", type=int, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskcompute", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    nf = subs.add_parser("normal-frontier", help="optimal (n1, n2, n12) allocation for each budget")
    _add_common(nf)
    nf.add_argument("--mu", type=float)
    nf.add_argument("--sigma2", type=float)
    nf.add_argument("--n", type=int)
    nf.add_argument("--budgets", type=_budgets_arg, help="comma list or lo:hi[:step]")
    nf.add_argument("--method", choices=("exhaustive", "relaxed"))
    nf.add_argument("--tie-break", dest="tie_break", choices=("overlap", "disjoint"))
    nf.add_argument("--s", type=int, help="also check the streaming split s by Monte Carlo")

    ef = subs.add_parser("expfam-frontier", help="subset allocation frontier for an exponential family")
    _add_common(ef)
    ef.add_argument("--family", choices=sorted(expfam.FAMILIES))
    ef.add_argument("--tau", type=_floats, help="mean-value parameter, comma separated")
    ef.add_argument("--target", choices=("identity", "natural", "moments"))
    ef.add_argument("--n", type=int)
    ef.add_argument("--budgets", type=_budgets_arg)
    ef.add_argument("--method", choices=("auto", "exhaustive", "relaxed"))
    ef.add_argument("--unit-costs", dest="unit_costs", type=_floats)
    ef.add_argument("--q-weights", dest="q_weights", type=_floats)
    ef.add_argument("--starts", type=int)

    hl = subs.add_parser("hl", help="Hodges-Lehmann variants under contamination")
    _add_common(hl)
    hl.add_argument("--n", type=int)
    hl.add_argument("--alphas", type=_floats)
    hl.add_argument("--budgets", type=_budgets_arg)
    hl.add_argument("--variants", type=_words)
    hl.add_argument("--m", type=int, help="subset size for the subset variant (default isqrt(n))")

    mi = subs.add_parser("matinv", help="regression risk against inversion cost")
    _add_common(mi)
    mi.add_argument("--rhos", type=_floats)
    mi.add_argument("--methods", type=_words, help="ns-safe, ns-naive, power-constant-K, power-decreasing-K")
    mi.add_argument("--n-rows", dest="n_rows", type=int)
    mi.add_argument("--p", type=int)
    mi.add_argument("--ns-iters", dest="ns_iters", type=int)

    va = subs.add_parser("validate", help="check a config file without running it")
    va.add_argument("config", type=Path)
    return parser


_COMMON = ("config", "seed", "replicates", "out", "format", "jobs", "command")


def _load_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config {path} is not valid JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"config {path} must hold a JSON object"])
    return data


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = _load_json(args.config) if args.config else {}
    if data.get("experiment", args.command) != args.command:
        raise ConfigError([f"config is for {data['experiment']!r}, not {args.command!r}"])
    data["experiment"] = args.command
    cfg = ExperimentConfig.from_dict(data)
    for key in ("seed", "replicates", "out", "format", "jobs"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, {"seed": "master_seed", "out": "output_path", "jobs": "n_jobs"}.get(key, key), value)
    for key, value in vars(args).items():
        if key not in _COMMON and value is not None:
            cfg.parameters[key] = value
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            errors = validate(ExperimentConfig.from_dict(_load_json(args.config)))
            if errors:
                raise ConfigError(errors)
            print("ok")
            return EXIT_OK
        cfg = config_from_args(args)
        table = build_table(cfg)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        if cfg.output_path:
            for path in write_table(table, cfg.output_path, cfg.format):
                print(path)
        else:
            write_table_stdout(table)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def write_table_stdout(table: ResultTable) -> None:
    sys.stdout.write(csv_text(table))


if __name__ == "__main__":
    sys.exit(main())
