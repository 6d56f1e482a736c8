"""Command line interface.

Subcommands: ``simulate`` (draw a dataset), ``filter`` (run one filter on a
dataset), ``bench`` (MSE-versus-cost sweep), ``rates`` (refit rates from a
records CSV).  Configuration comes from an optional JSON file plus flag
overrides; every unknown key is rejected.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.

The manifest written into every output hashes the resolved semantic
configuration (model, method, policy, data, bench, seed).  Execution
details such as ``--threads`` and the output directory are excluded, so
reruns with a different worker count produce byte-identical files.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (budget_ladder, default_fidelity, fit_rates,
                    mse_cost_sweep, read_dataset, read_records, simulate_data,
                    write_dataset, write_records, write_rates)
from .errors import AmlpfError, UsageError
from .filters import ResamplePolicy, pf_run
from .io import make_manifest
from .models import builtin_model
from .multilevel import MLConfig, allocate_levels, amlpf_run, mlpf_baseline_run
from .streams import DOMAIN_DATA, DOMAIN_LEVEL, derive_seed

DEFAULT_CONFIG = {
    "model": {"name": "gbm", "params": {}},
    "method": {
        "name": "amlpf",
        "levels": [3, 5],
        "level": 4,
        "particles": 1000,
        "eps": 0.1,
        "allocation_constants": [1.0, 1.0],
        "particle_counts": None,
    },
    "policy": {"mode": "adaptive", "threshold_fraction": 0.5},
    "data": {"horizon": 10, "path": None, "fidelity": "auto"},
    "bench": {
        "methods": ["pf", "mlpf", "amlpf"],
        "base_level": 3,
        "budget_points": 4,
        "repeats": 20,
        "pf_constant": 1.0,
        "reference_repeats": 20,
        "reference_particle_factor": 50,
    },
    "output": {"dir": "."},
    "seed": 1,
    "threads": 1,
}

# Top-level shorthand keys routed into their blocks before validation.
_SUGAR = {
    "levels": ("method", "levels"),
    "level": ("method", "level"),
    "eps": ("method", "eps"),
    "particles": ("method", "particles"),
    "horizon": ("data", "horizon"),
}

_EXECUTION_KEYS = ("threads", "output")


def _merge(base, override, path=""):
    """Deep-merge ``override`` into ``base``, rejecting unknown keys."""
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(value, dict):
                raise UsageError(f"config key {where} must be an object")
            _merge(base[key], value, where)
        else:
            base[key] = value


def _normalize_shorthand(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key in ("model", "method") and isinstance(value, str):
            out.setdefault(key, {})["name"] = value
        elif key in _SUGAR:
            block, inner = _SUGAR[key]
            out.setdefault(block, {})[inner] = value
        else:
            out[key] = value
    return out


def _validate(cfg: dict) -> None:
    method = cfg["method"]["name"]
    if method not in ("pf", "mlpf", "amlpf"):
        raise UsageError(f"unknown method {method!r}; choose pf, mlpf or amlpf")
    levels = cfg["method"]["levels"]
    if (not isinstance(levels, (list, tuple)) or len(levels) != 2
            or not all(isinstance(l, int) for l in levels)):
        raise UsageError("method.levels must be a pair of integers")
    if levels[0] >= levels[1]:
        raise UsageError(f"L_min < L_max required, got {list(levels)}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise UsageError("threads must be a positive integer")
    if cfg["data"]["horizon"] < 1:
        raise UsageError("data.horizon must be >= 1")
    fidelity = cfg["data"]["fidelity"]
    if fidelity not in ("auto", "exact") and not isinstance(fidelity, int):
        raise UsageError("data.fidelity must be 'auto', 'exact' or an integer level")
    if cfg["method"]["particles"] < 1:
        raise UsageError("method.particles must be >= 1")
    if not 0.0 < cfg["method"]["eps"] < 1.0:
        raise UsageError("method.eps must be in (0, 1)")
    counts = cfg["method"]["particle_counts"]
    if counts is not None:
        if (not isinstance(counts, (list, tuple))
                or len(counts) != levels[1] - levels[0] + 1
                or any(not isinstance(c, int) or c < 1 for c in counts)):
            raise UsageError(
                "method.particle_counts must list a positive count per level")
    bench = cfg["bench"]
    for m in bench["methods"]:
        if m not in ("pf", "mlpf", "amlpf"):
            raise UsageError(f"unknown bench method {m!r}")
    if bench["budget_points"] < 1 or bench["repeats"] < 2:
        raise UsageError("bench needs budget_points >= 1 and repeats >= 2")
    # Constructing the policy validates mode and threshold.
    _policy_from(cfg)


def _policy_from(cfg: dict) -> ResamplePolicy:
    try:
        return ResamplePolicy(cfg["policy"]["mode"],
                              cfg["policy"]["threshold_fraction"])
    except AmlpfError as exc:
        raise UsageError(str(exc)) from None


def resolve_config(config_path: str | None, overrides: dict) -> dict:
    """Load, merge and validate: defaults <- config file <- flag overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must contain a JSON object")
        _merge(cfg, _normalize_shorthand(raw))
    _merge(cfg, _normalize_shorthand(overrides))
    _validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    semantic = {k: v for k, v in cfg.items() if k not in _EXECUTION_KEYS}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _manifest(cfg: dict) -> dict:
    return make_manifest(cfg["seed"], config_hash(cfg))


def _build_model(cfg: dict):
    return builtin_model(cfg["model"]["name"], cfg["model"]["params"])


def _fidelity_for(cfg, ssm):
    fidelity = cfg["data"]["fidelity"]
    return default_fidelity(ssm) if fidelity == "auto" else fidelity


def _load_or_simulate(cfg, ssm):
    path = cfg["data"]["path"]
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"data.path does not exist: {path}")
        ys, _ = read_dataset(path)
        return ys
    ys, _ = simulate_data(ssm, cfg["data"]["horizon"],
                          fidelity=_fidelity_for(cfg, ssm),
                          seed=derive_seed(cfg["seed"], DOMAIN_DATA))
    return ys


def _out_dir(cfg) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(cfg) -> int:
    ssm = _build_model(cfg)
    ys, xs = simulate_data(ssm, cfg["data"]["horizon"],
                           fidelity=_fidelity_for(cfg, ssm),
                           seed=derive_seed(cfg["seed"], DOMAIN_DATA))
    path = _out_dir(cfg) / "dataset.csv"
    write_dataset(path, ys, xs, _manifest(cfg))
    print(f"wrote {path}")
    return 0


def _ml_config(cfg) -> MLConfig:
    levels = cfg["method"]["levels"]
    rule = "antithetic" if cfg["method"]["name"] == "amlpf" else "euler_pair"
    constants = tuple(cfg["method"]["allocation_constants"])
    counts = cfg["method"]["particle_counts"]
    if counts is None:
        counts = allocate_levels(cfg["method"]["eps"], levels[0], levels[1],
                                 constants, rule)
    return MLConfig(levels[0], levels[1], tuple(counts), constants)


def _cmd_filter(cfg) -> int:
    ssm = _build_model(cfg)
    ys = _load_or_simulate(cfg, ssm)
    policy = _policy_from(cfg)
    out = _out_dir(cfg)
    manifest = _manifest(cfg)
    method = cfg["method"]["name"]
    if method == "pf":
        result = pf_run(ssm, ys, cfg["method"]["level"],
                        cfg["method"]["particles"], policy=policy,
                        seed=derive_seed(cfg["seed"], DOMAIN_LEVEL,
                                         cfg["method"]["level"]),
                        threads=cfg["threads"])
        result.to_csv(out / "filter_output.csv", manifest)
        result.to_json(out / "filter_output.json", manifest)
        print(f"wrote {out / 'filter_output.csv'} and {out / 'filter_output.json'}")
    else:
        runner = amlpf_run if method == "amlpf" else mlpf_baseline_run
        result = runner(ssm, ys, _ml_config(cfg), policy=policy,
                        seed=cfg["seed"], threads=cfg["threads"])
        result.to_json(out / "ml_output.json", manifest)
        print(f"wrote {out / 'ml_output.json'}")
    return 0


def _cmd_bench(cfg) -> int:
    ssm = _build_model(cfg)
    ys = _load_or_simulate(cfg, ssm)
    policy = _policy_from(cfg)
    bench = cfg["bench"]
    budgets = budget_ladder(bench["base_level"], bench["budget_points"],
                            pf_constant=bench["pf_constant"])
    records, reference = mse_cost_sweep(
        ssm, ys, budgets, methods=tuple(bench["methods"]),
        repeats=bench["repeats"],
        policy=policy, seed=cfg["seed"], threads=cfg["threads"],
        reference_repeats=bench["reference_repeats"],
        reference_particle_factor=bench["reference_particle_factor"])
    out = _out_dir(cfg)
    manifest = _manifest(cfg)
    write_records(out / "bench_records.csv", records, manifest)
    write_rates(out / "rates.json", fit_rates(records), manifest, reference)
    print(f"wrote {out / 'bench_records.csv'} and {out / 'rates.json'}")
    return 0


def _cmd_rates(cfg, records_path: str) -> int:
    records = read_records(records_path)
    fits = fit_rates(records)
    if not fits:
        raise UsageError(
            f"no (method, target) group in {records_path} has >= 3 budget points")
    out = _out_dir(cfg)
    write_rates(out / "rates.json", fits, _manifest(cfg))
    print(f"wrote {out / 'rates.json'}")
    return 0


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _collect_overrides(args) -> dict:
    overrides: dict = {}

    def put(path, value):
        node = overrides
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    if args.model is not None:
        put(("model", "name"), args.model)
    for item in args.param or []:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        put(("model", "params", key), _parse_value(value))
    if args.method is not None:
        put(("method", "name"), args.method)
    if args.levels is not None:
        parts = args.levels.split(",")
        if len(parts) != 2:
            raise UsageError("--levels expects two comma-separated integers")
        try:
            put(("method", "levels"), [int(p) for p in parts])
        except ValueError:
            raise UsageError("--levels expects two comma-separated integers") \
                from None
    if args.level is not None:
        put(("method", "level"), args.level)
    if args.particles is not None:
        put(("method", "particles"), args.particles)
    if args.eps is not None:
        put(("method", "eps"), args.eps)
    if args.policy is not None:
        put(("policy", "mode"), args.policy)
    if args.threshold is not None:
        put(("policy", "threshold_fraction"), args.threshold)
    if args.horizon is not None:
        put(("data", "horizon"), args.horizon)
    if args.data is not None:
        put(("data", "path"), args.data)
    if args.fidelity is not None:
        put(("data", "fidelity"), _parse_value(args.fidelity))
    if getattr(args, "repeats", None) is not None:
        put(("bench", "repeats"), args.repeats)
    if getattr(args, "budget_points", None) is not None:
        put(("bench", "budget_points"), args.budget_points)
    if getattr(args, "methods", None) is not None:
        put(("bench", "methods"), args.methods.split(","))
    if args.seed is not None:
        put(("seed",), args.seed)
    if args.out is not None:
        put(("output", "dir"), args.out)

    threads = args.threads
    if threads is None:
        env = os.environ.get("AMLPF_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                raise UsageError(
                    f"AMLPF_THREADS must be an integer, got {env!r}") from None
    if threads is not None:
        put(("threads",), threads)
    return overrides


def _add_common(parser):
    parser.add_argument("--config", "-c", help="JSON configuration file")
    parser.add_argument("--model", help="builtin model name")
    parser.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="model parameter override (repeatable)")
    parser.add_argument("--method", help="pf, mlpf or amlpf")
    parser.add_argument("--levels", help="L_min,L_max for multilevel methods")
    parser.add_argument("--level", type=int, help="discretization level for pf")
    parser.add_argument("--particles", type=int, help="particle count for pf")
    parser.add_argument("--eps", type=float, help="target accuracy for multilevel")
    parser.add_argument("--policy", help="resampling mode: adaptive or every_step")
    parser.add_argument("--threshold", type=float,
                        help="ESS fraction triggering adaptive resampling")
    parser.add_argument("--horizon", type=int, help="number of observation times")
    parser.add_argument("--data", help="dataset CSV to filter instead of simulating")
    parser.add_argument("--fidelity", help="data simulation fidelity: exact or level")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--threads", type=int,
                        help="worker threads (outputs are thread-count invariant)")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amlpf",
        description="Antithetic multilevel particle filters for partially "
                    "observed diffusions")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a dataset")
    _add_common(p_sim)

    p_filter = sub.add_parser("filter", help="run a filter on a dataset")
    _add_common(p_filter)

    p_bench = sub.add_parser("bench", help="run an MSE-versus-cost sweep")
    _add_common(p_bench)
    p_bench.add_argument("--repeats", type=int, help="replicates per cell")
    p_bench.add_argument("--budget-points", type=int, dest="budget_points",
                         help="number of accuracy budgets")
    p_bench.add_argument("--methods", help="comma-separated method subset")

    p_rates = sub.add_parser("rates", help="refit rates from a records CSV")
    p_rates.add_argument("records", help="bench records CSV")
    _add_common(p_rates)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args.config, _collect_overrides(args))
        if args.command == "simulate":
            return _cmd_simulate(cfg)
        if args.command == "filter":
            return _cmd_filter(cfg)
        if args.command == "bench":
            return _cmd_bench(cfg)
        if args.command == "rates":
            return _cmd_rates(cfg, args.records)
        raise UsageError(f"unknown subcommand {args.command!r}")
    except UsageError as exc:
        print(f'error: code={exc.code} message="{_one_line(exc)}"',
              file=sys.stderr)
        return 2
    except AmlpfError as exc:
        print(f'error: code={exc.code} message="{_one_line(exc)}"',
              file=sys.stderr)
        return 1


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
