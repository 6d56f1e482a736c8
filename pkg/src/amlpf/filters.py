"""Particle filters: single-level, and coupled fine/coarse variants.

All filters share the same skeleton per observation time: propagate the
particles through one unit interval, fold the observation log-likelihood
into accumulated log-weights, record estimates and the running
normalizing-constant (NC) estimate, then resample if the policy asks for
it.  Estimates are always recorded after the weight update and before any
resampling.

The coupled filters carry two or three marginal particle systems moved by
shared increments and resampled jointly; their resampling trigger is the
effective sample size of the coarse marginal, so all marginals resample at
the same times and stay index-aligned.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError
from .io import format_float
from .models import StateSpaceModel
from .resampling import (WeightVector, ess, multinomial_resample,
                         pair_coupled_resample, triple_coupled_resample)
from .schemes import (CoupledPair, CoupledTriple, antithetic_triple_unit,
                      as_level, euler_pair_unit, euler_unit, milstein_unit)
from .streams import as_rng

_KERNELS = {"milstein": milstein_unit, "euler": euler_unit}


@dataclass(frozen=True)
class ResamplePolicy:
    """When to resample: every step, or when ESS drops below a fraction of N."""

    mode: str = "adaptive"
    threshold_fraction: float = 0.5

    def __post_init__(self):
        if self.mode not in ("adaptive", "every_step"):
            raise ContractError(f"unknown resample mode {self.mode!r}")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ContractError("threshold_fraction must be in (0, 1]")

    def should_resample(self, w: WeightVector) -> bool:
        if self.mode == "every_step":
            return True
        return ess(w) < self.threshold_fraction * len(w)


@dataclass(frozen=True)
class WeightedEnsemble:
    """Particle states with accumulated log-weights at one observation time."""

    states: np.ndarray
    log_weights: np.ndarray
    level: int
    time: int


@dataclass(frozen=True)
class CoupledEnsemble:
    """Fine/coarse/antithetic states with per-marginal accumulated log-weights."""

    triple: CoupledTriple
    log_weights_fine: np.ndarray
    log_weights_coarse: np.ndarray
    log_weights_anti: np.ndarray
    level: int
    time: int


def filter_estimate(ensemble: WeightedEnsemble, phi: Callable) -> float:
    """Self-normalized estimate sum_i w_i phi(x_i) from accumulated log-weights."""
    w = WeightVector.from_log(ensemble.log_weights, time=ensemble.time)
    return _estimate(w, ensemble.states, phi)


def _estimate(w: WeightVector, states: np.ndarray, phi: Callable) -> float:
    values = np.asarray(phi(states), dtype=float)
    if values.shape != (len(w),):
        raise ContractError(
            f"test function returned shape {values.shape}, expected ({len(w)},)"
        )
    return float(w.normalized @ values)


def log_mean_exp(log_values: np.ndarray) -> float:
    return float(logsumexp(log_values) - np.log(len(log_values)))


def nc_update(accumulator: float, log_weights: np.ndarray) -> float:
    """Fold one resampling epoch's mean weight into the running log-NC."""
    return accumulator + log_mean_exp(log_weights)


def default_test_functions() -> dict[str, Callable]:
    return {"x1": lambda x: x[..., 0]}


def _coerce_observations(observations) -> np.ndarray:
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise ContractError(f"observations must be (n, q), got shape {obs.shape}")
    return obs


@dataclass
class FilterOutput:
    """Results of a single-level particle filter run.

    ``estimates[name][k-1]`` is the filter estimate of test function
    ``name`` at time k, ``log_nc[k-1]`` the running log normalizing
    constant, ``ess[k-1]`` the pre-resampling effective sample size.
    ``cost`` counts fine-step equivalents: particles times substeps summed
    over observation times.
    """

    times: np.ndarray
    estimates: dict[str, np.ndarray]
    log_nc: np.ndarray
    ess: np.ndarray
    cost: int
    resample_times: list[int]
    level: int
    n_particles: int
    kernel: str = "milstein"

    @property
    def horizon(self) -> int:
        return len(self.times)

    def to_rows(self):
        n = self.horizon
        unit_cost = self.cost // n
        resampled = set(self.resample_times)
        rows = []
        for k in self.times:
            for name in sorted(self.estimates):
                rows.append([
                    int(k), name,
                    format_float(self.estimates[name][k - 1]),
                    format_float(self.log_nc[k - 1]),
                    unit_cost * int(k),
                    int(k in resampled),
                ])
        return rows

    def to_csv(self, path, manifest=None):
        from .io import write_csv
        write_csv(path,
                  ["k", "phi_name", "estimate", "log_nc", "cumulative_cost",
                   "resampled"],
                  self.to_rows(), manifest)

    def to_json_dict(self) -> dict:
        return {
            "times": self.times,
            "level": self.level,
            "n_particles": self.n_particles,
            "kernel": self.kernel,
            "estimates": self.estimates,
            "log_nc": self.log_nc,
            "ess": self.ess,
            "cost": self.cost,
            "resample_times": self.resample_times,
        }

    def to_json(self, path, manifest=None):
        from .io import write_json
        write_json(path, self.to_json_dict(), manifest)


@dataclass
class CoupledFilterOutput:
    """Results of a coupled antithetic filter run at one level pair (l, l-1).

    ``estimates_diff[name]`` is the per-time antithetic difference
    0.5*(fine + anti) - coarse, the level's contribution to a multilevel
    estimate.
    """

    times: np.ndarray
    estimates_fine: dict[str, np.ndarray]
    estimates_coarse: dict[str, np.ndarray]
    estimates_anti: dict[str, np.ndarray]
    estimates_diff: dict[str, np.ndarray]
    log_nc_fine: np.ndarray
    log_nc_coarse: np.ndarray
    log_nc_anti: np.ndarray
    coarse_ess: np.ndarray
    cost: int
    resample_times: list[int]
    level: int
    n_particles: int

    def nc_terms(self):
        """Signed log-NC contributions of this level to a multilevel product."""
        return [(0.5, self.log_nc_fine), (0.5, self.log_nc_anti),
                (-1.0, self.log_nc_coarse)]

    def to_json_dict(self) -> dict:
        return {
            "times": self.times,
            "level": self.level,
            "n_particles": self.n_particles,
            "coupling": "antithetic",
            "estimates_fine": self.estimates_fine,
            "estimates_coarse": self.estimates_coarse,
            "estimates_anti": self.estimates_anti,
            "estimates_diff": self.estimates_diff,
            "log_nc_fine": self.log_nc_fine,
            "log_nc_coarse": self.log_nc_coarse,
            "log_nc_anti": self.log_nc_anti,
            "coarse_ess": self.coarse_ess,
            "cost": self.cost,
            "resample_times": self.resample_times,
        }


@dataclass
class PairedFilterOutput:
    """Results of a coupled fine/coarse Euler filter run (baseline, no antithetic)."""

    times: np.ndarray
    estimates_fine: dict[str, np.ndarray]
    estimates_coarse: dict[str, np.ndarray]
    estimates_diff: dict[str, np.ndarray]
    log_nc_fine: np.ndarray
    log_nc_coarse: np.ndarray
    coarse_ess: np.ndarray
    cost: int
    resample_times: list[int]
    level: int
    n_particles: int

    def nc_terms(self):
        return [(1.0, self.log_nc_fine), (-1.0, self.log_nc_coarse)]

    def to_json_dict(self) -> dict:
        return {
            "times": self.times,
            "level": self.level,
            "n_particles": self.n_particles,
            "coupling": "euler_pair",
            "estimates_fine": self.estimates_fine,
            "estimates_coarse": self.estimates_coarse,
            "estimates_diff": self.estimates_diff,
            "log_nc_fine": self.log_nc_fine,
            "log_nc_coarse": self.log_nc_coarse,
            "coarse_ess": self.coarse_ess,
            "cost": self.cost,
            "resample_times": self.resample_times,
        }


def pf_run(ssm: StateSpaceModel, observations, level, n_particles: int, *,
           policy: ResamplePolicy | None = None,
           test_functions: dict[str, Callable] | None = None,
           seed=0, kernel: str = "milstein", threads: int = 1) -> FilterOutput:
    """Run a particle filter over unit-spaced observations.

    The normalizing-constant estimate at time k is the product over
    resampling epochs of the mean accumulated weight; with adaptive
    resampling the log-weights carry over between epochs.
    """
    if kernel not in _KERNELS:
        raise ContractError(f"unknown kernel {kernel!r}")
    if n_particles < 1:
        raise ContractError("need at least one particle")
    level = as_level(level)
    policy = policy or ResamplePolicy()
    phis = test_functions if test_functions is not None else default_test_functions()
    obs = _coerce_observations(observations)
    n = obs.shape[0]
    rng = as_rng(seed)
    unit = _KERNELS[kernel]

    states = np.tile(ssm.x0, (n_particles, 1))
    logw = np.zeros(n_particles)
    nc_base = 0.0

    estimates = {name: np.empty(n) for name in phis}
    log_nc = np.empty(n)
    ess_trace = np.empty(n)
    resample_times: list[int] = []
    cost = 0

    for k in range(1, n + 1):
        states = unit(ssm.dynamics, level, states, rng, threads=threads)
        cost += n_particles * level.steps
        logw = logw + ssm.observation.log_density(states, obs[k - 1])
        w = WeightVector.from_log(logw, time=k)
        for name, phi in phis.items():
            estimates[name][k - 1] = _estimate(w, states, phi)
        log_nc[k - 1] = nc_update(nc_base, logw)
        ess_trace[k - 1] = ess(w)
        if policy.should_resample(w):
            ancestors = multinomial_resample(n_particles, w, rng)
            states = states[ancestors]
            nc_base = log_nc[k - 1]
            logw = np.zeros(n_particles)
            resample_times.append(k)

    return FilterOutput(np.arange(1, n + 1), estimates, log_nc, ess_trace,
                        cost, resample_times, level.l, n_particles, kernel)


def _coupled_run(ssm, observations, level, n_particles, policy, phis, seed,
                 threads, antithetic: bool):
    level = as_level(level)
    if level.l < 1:
        raise ContractError("coupled filters need level >= 1")
    policy = policy or ResamplePolicy()
    phis = phis if phis is not None else default_test_functions()
    obs = _coerce_observations(observations)
    n = obs.shape[0]
    rng = as_rng(seed)

    start = np.tile(ssm.x0, (n_particles, 1))
    if antithetic:
        system = CoupledTriple.from_common(start)
        marginals = ("fine", "coarse", "anti")
        unit_cost = n_particles * (2 * level.steps + level.steps // 2)
    else:
        system = CoupledPair.from_common(start)
        marginals = ("fine", "coarse")
        unit_cost = n_particles * (level.steps + level.steps // 2)

    logw = {m: np.zeros(n_particles) for m in marginals}
    nc_base = {m: 0.0 for m in marginals}
    estimates = {m: {name: np.empty(n) for name in phis} for m in marginals}
    diffs = {name: np.empty(n) for name in phis}
    log_nc = {m: np.empty(n) for m in marginals}
    coarse_ess = np.empty(n)
    resample_times: list[int] = []
    cost = 0

    for k in range(1, n + 1):
        if antithetic:
            system = antithetic_triple_unit(ssm.dynamics, level, system, rng,
                                            threads=threads)
        else:
            system = euler_pair_unit(ssm.dynamics, level, system, rng,
                                     threads=threads)
        cost += unit_cost
        states = {m: getattr(system, m) for m in marginals}
        weights = {}
        for m in marginals:
            logw[m] = logw[m] + ssm.observation.log_density(states[m], obs[k - 1])
            weights[m] = WeightVector.from_log(logw[m], time=k, marginal=m)
            for name, phi in phis.items():
                estimates[m][name][k - 1] = _estimate(weights[m], states[m], phi)
            log_nc[m][k - 1] = nc_update(nc_base[m], logw[m])
        for name in phis:
            if antithetic:
                diffs[name][k - 1] = 0.5 * (estimates["fine"][name][k - 1]
                                            + estimates["anti"][name][k - 1]) \
                    - estimates["coarse"][name][k - 1]
            else:
                diffs[name][k - 1] = estimates["fine"][name][k - 1] \
                    - estimates["coarse"][name][k - 1]
        coarse_ess[k - 1] = ess(weights["coarse"])

        if policy.should_resample(weights["coarse"]):
            if antithetic:
                anc = triple_coupled_resample(weights["fine"], weights["coarse"],
                                              weights["anti"], rng)
                indices = {"fine": anc.a1, "coarse": anc.a2, "anti": anc.a3}
            else:
                anc = pair_coupled_resample(weights["fine"], weights["coarse"], rng)
                indices = {"fine": anc.a1, "coarse": anc.a2}
            resampled = {m: states[m][indices[m]] for m in marginals}
            if antithetic:
                system = CoupledTriple(resampled["fine"], resampled["coarse"],
                                       resampled["anti"])
            else:
                system = CoupledPair(resampled["fine"], resampled["coarse"])
            for m in marginals:
                nc_base[m] = log_nc[m][k - 1]
                logw[m] = np.zeros(n_particles)
            resample_times.append(k)

    times = np.arange(1, n + 1)
    if antithetic:
        return CoupledFilterOutput(
            times, estimates["fine"], estimates["coarse"], estimates["anti"],
            diffs, log_nc["fine"], log_nc["coarse"], log_nc["anti"],
            coarse_ess, cost, resample_times, level.l, n_particles)
    return PairedFilterOutput(
        times, estimates["fine"], estimates["coarse"], diffs,
        log_nc["fine"], log_nc["coarse"], coarse_ess, cost, resample_times,
        level.l, n_particles)


def cpf_run(ssm: StateSpaceModel, observations, level, n_particles: int, *,
            policy: ResamplePolicy | None = None,
            test_functions: dict[str, Callable] | None = None,
            seed=0, threads: int = 1) -> CoupledFilterOutput:
    """Run the coupled antithetic filter at level pair (l, l-1).

    Three marginal particle systems (fine, coarse, antithetic) share
    Brownian increments through the antithetic kernel and are resampled
    jointly; the adaptive trigger watches the coarse marginal's ESS.
    """
    return _coupled_run(ssm, observations, level, n_particles, policy,
                        test_functions, seed, threads, antithetic=True)


def pair_cpf_run(ssm: StateSpaceModel, observations, level, n_particles: int, *,
                 policy: ResamplePolicy | None = None,
                 test_functions: dict[str, Callable] | None = None,
                 seed=0, threads: int = 1) -> PairedFilterOutput:
    """Run the coupled fine/coarse Euler filter (multilevel baseline)."""
    return _coupled_run(ssm, observations, level, n_particles, policy,
                        test_functions, seed, threads, antithetic=False)
