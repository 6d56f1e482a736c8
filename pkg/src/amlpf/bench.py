"""Benchmark harness: data simulation, references, MSE-versus-cost sweeps.

A sweep runs each method (single-level particle filter, Euler-pair
multilevel baseline, antithetic multilevel) at a ladder of accuracy
budgets, repeats each cell, and records the mean squared error of two
targets against a reference: the filter means (averaged over observation
times) and the normalizing constant (NC, final time, linear scale).  A log-log
regression of cost on MSE then summarizes each method's cost rate.

References are exact (Kalman) for the linear Gaussian model and a
high-resolution particle filter otherwise; a sweep refuses to report MSEs
that its reference cannot resolve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, ReferencePrecisionError, UsageError
from .filters import ResamplePolicy, default_test_functions, pf_run
from .io import format_float, write_csv, write_json
from .models import StateSpaceModel
from .multilevel import MLConfig, amlpf_run, mlpf_baseline_run
from .schemes import as_level, milstein_unit
from .streams import (DOMAIN_DATA, DOMAIN_REFERENCE, DOMAIN_SWEEP, derive_rng,
                      derive_seed)

METHODS = ("pf", "mlpf", "amlpf")
_METHOD_IDS = {name: i for i, name in enumerate(METHODS)}
TARGETS = ("filter", "nc")


def default_fidelity(ssm: StateSpaceModel):
    """Data-simulation fidelity: exact transition when available, else level 10."""
    return "exact" if ssm.exact_transition is not None else 10


def simulate_data(ssm: StateSpaceModel, horizon: int, *, fidelity=None,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Simulate latent states and observations at unit-spaced times 1..horizon.

    ``fidelity`` is "exact" for models with an exact unit-time transition,
    or an integer discretization level used to advance the latent path;
    by default models without an exact transition use a fine level.
    Returns (observations (n, q), latent states (n, d)).
    """
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    if fidelity is None:
        fidelity = default_fidelity(ssm)
    rng = derive_rng(seed, DOMAIN_DATA)
    if fidelity == "exact":
        if ssm.exact_transition is None:
            raise UsageError(
                f"model {ssm.name!r} has no exact transition; "
                "pass an integer fidelity level")
        advance = lambda x: ssm.exact_transition(x, rng)
    else:
        level = as_level(int(fidelity))
        advance = lambda x: milstein_unit(ssm.dynamics, level, x, rng)
    if ssm.observation.sample is None:
        raise UsageError(f"model {ssm.name!r} has no observation sampler")

    x = ssm.x0.copy()
    xs = np.empty((horizon, ssm.dynamics.dim))
    ys = np.empty((horizon, ssm.observation.obs_dim))
    for k in range(horizon):
        x = advance(x)
        xs[k] = x
        ys[k] = ssm.observation.sample(x, rng)
    return ys, xs


def write_dataset(path, ys: np.ndarray, xs: np.ndarray | None,
                  manifest=None) -> None:
    columns = ["k"] + [f"y_{j + 1}" for j in range(ys.shape[1])]
    if xs is not None:
        columns += [f"x_{j + 1}" for j in range(xs.shape[1])]
    rows = []
    for k in range(ys.shape[0]):
        row = [k + 1] + [format_float(v) for v in ys[k]]
        if xs is not None:
            row += [format_float(v) for v in xs[k]]
        rows.append(row)
    write_csv(path, columns, rows, manifest)


def read_dataset(path) -> tuple[np.ndarray, np.ndarray | None]:
    from .io import read_csv
    header, rows = read_csv(path)
    y_cols = [i for i, c in enumerate(header) if c.startswith("y_")]
    x_cols = [i for i, c in enumerate(header) if c.startswith("x_")]
    if not y_cols:
        raise UsageError(f"no observation columns (y_*) in {path}")
    ys = np.array([[float(r[i]) for i in y_cols] for r in rows])
    xs = np.array([[float(r[i]) for i in x_cols] for r in rows]) if x_cols else None
    return ys, xs


@dataclass
class ReferenceValue:
    """Reference filter means and NC, with provenance and resolution info."""

    estimates: dict[str, np.ndarray]
    log_nc: np.ndarray
    nc: np.ndarray
    provenance: str
    se_filter: float
    se_nc: float
    details: dict = field(default_factory=dict)


def kalman_reference(ssm: StateSpaceModel, observations) -> ReferenceValue:
    """Exact filter means, variances, and evidence for the linear Gaussian model.

    Unit-time transition x' = x + theta + sigma*xi with observation
    y = x' + tau*eta; the filter starts from the point mass at x0.
    """
    if ssm.name != "linear_gaussian":
        raise UsageError(
            f"kalman_reference requires the linear_gaussian model, got {ssm.name!r}")
    theta = ssm.params["theta"]
    sig2 = ssm.params["sigma"] ** 2
    tau2 = ssm.params["tau"] ** 2
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 2:
        obs = obs[:, 0]
    n = obs.shape[0]

    means = np.empty(n)
    variances = np.empty(n)
    log_nc = np.empty(n)
    m, v, acc = float(ssm.x0[0]), 0.0, 0.0
    for k in range(n):
        mp = m + theta
        vp = v + sig2
        s = vp + tau2
        acc += -0.5 * math.log(2.0 * math.pi * s) - 0.5 * (obs[k] - mp) ** 2 / s
        gain = vp / s
        m = mp + gain * (obs[k] - mp)
        v = (1.0 - gain) * vp
        means[k] = m
        variances[k] = v
        log_nc[k] = acc

    return ReferenceValue({"x1": means}, log_nc, np.exp(log_nc),
                          "kalman_exact", 0.0, 0.0,
                          details={"filter_variances": variances})


def ground_truth(ssm: StateSpaceModel, observations, *,
                 test_functions: dict[str, Callable] | None = None,
                 level: int = 8, n_particles: int = 10000, repeats: int = 20,
                 policy: ResamplePolicy | None = None, seed: int = 0,
                 threads: int = 1) -> ReferenceValue:
    """Reference values: exact Kalman filter, or a high-resolution particle filter.

    The particle reference averages ``repeats`` independent runs and
    reports the worst per-time standard error of the run mean.
    """
    if ssm.name == "linear_gaussian":
        return kalman_reference(ssm, observations)
    phis = test_functions if test_functions is not None else default_test_functions()
    runs = []
    for r in range(repeats):
        out = pf_run(ssm, observations, level, n_particles, policy=policy,
                     test_functions=phis,
                     seed=derive_seed(seed, DOMAIN_REFERENCE, r),
                     threads=threads)
        runs.append(out)
    estimates = {}
    se_filter = 0.0
    for name in phis:
        stacked = np.stack([run.estimates[name] for run in runs])
        estimates[name] = stacked.mean(axis=0)
        se_filter = max(se_filter,
                        float(np.max(stacked.std(axis=0, ddof=1)))
                        / math.sqrt(repeats))
    nc_runs = np.exp(np.stack([run.log_nc for run in runs]))
    nc = nc_runs.mean(axis=0)
    se_nc = float(nc_runs[:, -1].std(ddof=1)) / math.sqrt(repeats)
    if np.any(nc <= 0):
        raise ContractError("reference NC collapsed to zero")
    return ReferenceValue(estimates, np.log(nc), nc, "pf_high_resolution",
                          se_filter, se_nc,
                          details={"level": level, "n_particles": n_particles,
                                   "repeats": repeats})


@dataclass(frozen=True)
class Budget:
    """One accuracy budget: a target eps with level range for the multilevel
    methods, and a matched level/particle pair for the single-level filter."""

    eps: float
    L_min: int
    L_max: int
    pf_level: int
    pf_particles: int
    c0: float = 1.0
    c1_antithetic: float = 1.0
    c1_pair: float = 1.0


def budget_ladder(L_min: int = 3, points: int = 4, *,
                  pf_constant: float = 1.0,
                  antithetic_constant: float = 1.0) -> list[Budget]:
    """Dyadic budget ladder: eps_i = 2^-(L_min+i).

    The multilevel terminal level tracks ceil(log2(1/eps)) so the
    discretization bias keeps pace with the target accuracy; the
    single-level filter runs at that level with N = ceil(c * eps^-2).

    The antithetic allocation constant is scaled by 1/(number of levels):
    the antithetic level differences lose variance a full order faster
    than the worst case the allocation formula guards against, so without
    this normalization the realized cost would pick up an extra factor
    that grows with the ladder depth and mask the eps^-2 cost regime the
    method is built to deliver.  ``antithetic_constant`` multiplies the
    per-level counts on top of that normalization; values above 1 buy
    variance headroom on models whose couplings decorrelate quickly, at a
    proportional cost.
    """
    if points < 1:
        raise UsageError("need at least one budget point")
    if antithetic_constant <= 0:
        raise UsageError("antithetic_constant must be positive")
    budgets = []
    for i in range(points):
        eps = 2.0 ** -(L_min + i)
        L_max = max(L_min + 1, L_min + i)
        pf_n = math.ceil(pf_constant * (1.0 / eps) ** 2)
        n_levels = L_max - L_min + 1
        budgets.append(Budget(eps, L_min, L_max, L_min + i, pf_n,
                              c1_antithetic=antithetic_constant / n_levels))
    return budgets


@dataclass
class BenchRecord:
    """One (method, budget, target) cell of a sweep."""

    method: str
    model: str
    target: str
    budget_index: int
    mse: float
    cost: int
    repeats: int
    L_min: int
    L_max: int
    variance: float | None = None
    bias_sq: float | None = None


RECORD_COLUMNS = ["method", "model", "target", "budget_index", "mse", "cost",
                  "repeats", "L_min", "L_max"]


def _record_row(rec: BenchRecord):
    return [rec.method, rec.model, rec.target, rec.budget_index,
            format_float(rec.mse), rec.cost, rec.repeats, rec.L_min, rec.L_max]


def write_records(path, records: list[BenchRecord], manifest=None) -> None:
    ordered = sorted(records, key=lambda r: (r.model, r.method, r.target,
                                             r.budget_index))
    write_csv(path, RECORD_COLUMNS, [_record_row(r) for r in ordered], manifest)


def read_records(path) -> list[BenchRecord]:
    from .io import read_csv
    header, rows = read_csv(path)
    if header != RECORD_COLUMNS:
        raise UsageError(f"unexpected record columns in {path}: {header}")
    return [BenchRecord(r[0], r[1], r[2], int(r[3]), float(r[4]), int(r[5]),
                        int(r[6]), int(r[7]), int(r[8])) for r in rows]


def _ml_config(budget: Budget, method: str) -> MLConfig:
    rule = "antithetic" if method == "amlpf" else "euler_pair"
    c1 = budget.c1_antithetic if method == "amlpf" else budget.c1_pair
    return MLConfig.from_eps(budget.eps, budget.L_min, budget.L_max,
                             (budget.c0, c1), rule)


def _run_method(method, ssm, obs, budget, policy, phis, seed, threads):
    """One replicate of one method at one budget; returns (per-time filter
    estimates, linear NC estimate at the final time, cost)."""
    if method == "pf":
        out = pf_run(ssm, obs, budget.pf_level, budget.pf_particles,
                     policy=policy, test_functions=phis, seed=seed,
                     threads=threads)
        return out.estimates["x1"], float(np.exp(out.log_nc[-1])), out.cost
    config = _ml_config(budget, method)
    runner = amlpf_run if method == "amlpf" else mlpf_baseline_run
    out = runner(ssm, obs, config, policy=policy, test_functions=phis,
                 seed=seed, threads=threads)
    return out.combined_estimates["x1"], out.nc_value(), out.total_cost


def mse_cost_sweep(ssm: StateSpaceModel, observations, budgets: list[Budget], *,
                   methods=METHODS, repeats: int = 20,
                   policy: ResamplePolicy | None = None,
                   test_functions: dict[str, Callable] | None = None,
                   seed: int = 0, threads: int = 1,
                   reference: ReferenceValue | None = None,
                   reference_repeats: int = 20,
                   reference_particle_factor: int = 50,
                   se_ratio: float = 5.0,
                   ) -> tuple[list[BenchRecord], ReferenceValue]:
    """Run every method at every budget and record MSE and cost per target.

    The reference, unless supplied, is exact for the linear Gaussian model
    and otherwise a particle filter at level ``max L_max + 2`` with
    ``reference_particle_factor`` times the largest per-level particle
    count of the sweep.  The sweep aborts if the reference standard error
    exceeds 1/``se_ratio`` of the smallest method standard deviation;
    ``se_ratio <= 0`` disables that check.
    """
    if repeats < 2:
        raise UsageError("repeats must be >= 2 to estimate spread")
    unknown = [m for m in methods if m not in _METHOD_IDS]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}; choose from {METHODS}")
    phis = test_functions if test_functions is not None else default_test_functions()
    if "x1" not in phis:
        raise UsageError("sweep requires an 'x1' test function")
    policy = policy or ResamplePolicy()

    if reference is None:
        max_count = 0
        for b in budgets:
            for m in ("amlpf", "mlpf"):
                max_count = max(max_count, max(_ml_config(b, m).particle_counts))
            max_count = max(max_count, b.pf_particles)
        ref_level = max(b.L_max for b in budgets) + 2
        reference = ground_truth(
            ssm, observations, test_functions=phis, level=ref_level,
            n_particles=reference_particle_factor * max_count,
            repeats=reference_repeats, policy=policy, seed=seed,
            threads=threads)

    ref_est = reference.estimates["x1"]
    ref_nc = reference.nc[-1]

    records: list[BenchRecord] = []
    min_sd = {"filter": math.inf, "nc": math.inf}
    for method in methods:
        for b_idx, budget in enumerate(budgets):
            est_runs = []
            nc_runs = []
            costs = []
            for r in range(repeats):
                run_seed = derive_seed(seed, DOMAIN_SWEEP,
                                       _METHOD_IDS[method], b_idx, r)
                est, nc, cost = _run_method(method, ssm, observations, budget,
                                            policy, phis, run_seed, threads)
                est_runs.append(est)
                nc_runs.append(nc)
                costs.append(cost)
            est_arr = np.stack(est_runs)  # (repeats, n)
            nc_arr = np.array(nc_runs)
            cost = int(round(float(np.mean(costs))))

            var_f = float(np.mean(est_arr.var(axis=0)))
            bias_f = float(np.mean((est_arr.mean(axis=0) - ref_est) ** 2))
            mse_f = float(np.mean((est_arr - ref_est[None, :]) ** 2))
            var_n = float(nc_arr.var())
            bias_n = float((nc_arr.mean() - ref_nc) ** 2)
            mse_n = float(np.mean((nc_arr - ref_nc) ** 2))

            min_sd["filter"] = min(min_sd["filter"], math.sqrt(var_f))
            min_sd["nc"] = min(min_sd["nc"], math.sqrt(var_n))

            lo, hi = budget.L_min, budget.L_max
            if method == "pf":
                lo = hi = budget.pf_level
            records.append(BenchRecord(method, ssm.name, "filter", b_idx,
                                       mse_f, cost, repeats, lo, hi,
                                       variance=var_f, bias_sq=bias_f))
            records.append(BenchRecord(method, ssm.name, "nc", b_idx,
                                       mse_n, cost, repeats, lo, hi,
                                       variance=var_n, bias_sq=bias_n))

    checks = {"filter": reference.se_filter, "nc": reference.se_nc}
    for target, se in checks.items():
        if se_ratio > 0 and se > 0 and se >= min_sd[target] / se_ratio:
            raise ReferencePrecisionError(
                f"reference SE {se:.3g} for target {target!r} is not below "
                f"1/{se_ratio:g} of the smallest method sd {min_sd[target]:.3g}; "
                "increase reference repeats or particles")
    return records, reference


@dataclass(frozen=True)
class RateFit:
    """Fitted log10(cost) ~ log10(MSE) line for one method/target."""

    method: str
    model: str
    target: str
    slope: float
    stderr: float
    intercept: float
    points: int


def fit_rate(records: list[BenchRecord]) -> RateFit:
    """Cost rate of one method/target: OLS slope of log10(cost) on log10(MSE).

    A method with MSE ~ cost^(-r) fits a slope of -1/r; smaller magnitude
    is better.  Needs at least three budget points from a single
    (model, method, target) group.
    """
    if len(records) < 3:
        raise UsageError("rate fit needs at least 3 budget points")
    keys = {(r.model, r.method, r.target) for r in records}
    if len(keys) != 1:
        raise UsageError(f"rate fit needs one (model, method, target) group, got {sorted(keys)}")
    ordered = sorted(records, key=lambda r: r.budget_index)
    x = np.log10([r.mse for r in ordered])
    y = np.log10([r.cost for r in ordered])
    if np.unique(x).size < 2:
        raise ContractError("degenerate rate fit: all MSE values equal")
    xc = x - x.mean()
    slope = float((xc @ (y - y.mean())) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    stderr = math.sqrt(sigma2 / float(xc @ xc))
    (model, method, target), = keys
    return RateFit(method, model, target, slope, stderr, intercept, len(x))


def fit_rates(records: list[BenchRecord]) -> dict[tuple, RateFit]:
    """Fit every (model, method, target) group with >= 3 budget points."""
    groups: dict[tuple, list[BenchRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model, rec.method, rec.target), []).append(rec)
    fits = {}
    for key in sorted(groups):
        if len(groups[key]) >= 3:
            fits[key] = fit_rate(groups[key])
    return fits


def write_rates(path, fits: dict[tuple, RateFit], manifest=None,
                reference: ReferenceValue | None = None) -> None:
    models = {key[0] for key in fits}
    payload: dict = {"rates": {}}
    for (model, method, target), fit in sorted(fits.items()):
        key = f"{method}:{target}" if len(models) <= 1 else f"{model}/{method}:{target}"
        payload["rates"][key] = {"slope": fit.slope, "stderr": fit.stderr,
                                 "intercept": fit.intercept,
                                 "points": fit.points}
    if reference is not None:
        payload["reference"] = {"provenance": reference.provenance,
                                "se_filter": reference.se_filter,
                                "se_nc": reference.se_nc}
    write_json(path, payload, manifest)
