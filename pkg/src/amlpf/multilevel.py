"""Multilevel combination of coupled filter runs.

The estimator telescopes: a plain filter at the coarsest level L_min plus,
for each level l in (L_min, L_max], the difference term of a coupled run at
(l, l-1).  Filter-mean differences add linearly; normalizing-constant (NC)
terms combine multiplicatively, so the combined NC is the signed sum
``NC_base + sum_l (0.5 NC_fine + 0.5 NC_anti - NC_coarse)`` kept in
(sign, log-magnitude) form because individual terms are fine-scale products
that can be tiny and the sum can in principle go negative.

Particle allocation follows the variance/cost balance of each coupling:
the antithetic estimator's per-level variance scales like Delta_l, the
plain Euler pair baseline's like sqrt(Delta_l).

Every per-level run draws from a stream derived by a stable hash of
(master seed, level index), so results do not depend on the order in which
levels are run and a level's run can be reproduced in isolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, UsageError
from .filters import (CoupledFilterOutput, FilterOutput, PairedFilterOutput,
                      ResamplePolicy, cpf_run, pair_cpf_run, pf_run)
from .streams import DOMAIN_LEVEL, derive_seed

_ALLOCATION_RULES = ("antithetic", "euler_pair")


def allocate_levels(eps: float, L_min: int, L_max: int,
                    constants: tuple[float, float] = (1.0, 1.0),
                    rule: str = "antithetic") -> tuple[int, ...]:
    """Particle counts per level for a target accuracy ``eps``.

    The coarsest level gets ``ceil(c0 / eps^2)`` particles.  Under the
    "antithetic" rule level l > L_min gets
    ``ceil(c1 * eps^-2 * Delta_l * (L_max - L_min + 1))`` particles, the
    balance for per-level variance Delta_l / N_l.  The "euler_pair" rule
    uses ``Delta_l^(3/4)`` weights normalized by the sum of
    ``Delta_q^(-1/4)``, the analogous balance when per-level variance
    scales like sqrt(Delta_l).
    """
    if not 0.0 < eps < 1.0:
        raise UsageError(f"eps must be in (0, 1), got {eps}")
    if L_min >= L_max:
        raise UsageError(f"L_min < L_max required, got [{L_min}, {L_max}]")
    if L_min < 0:
        raise UsageError("L_min must be non-negative")
    if rule not in _ALLOCATION_RULES:
        raise UsageError(f"unknown allocation rule {rule!r}")
    c0, c1 = constants
    inv2 = (1.0 / eps) ** 2
    counts = [math.ceil(c0 * inv2)]
    if rule == "antithetic":
        span = L_max - L_min + 1
        for l in range(L_min + 1, L_max + 1):
            counts.append(max(1, math.ceil(c1 * inv2 * 2.0**-l * span)))
    else:
        norm = sum(2.0 ** (0.25 * q) for q in range(L_min + 1, L_max + 1))
        for l in range(L_min + 1, L_max + 1):
            counts.append(max(1, math.ceil(c1 * inv2 * 2.0 ** (-0.75 * l) * norm)))
    return tuple(counts)


@dataclass(frozen=True)
class MLConfig:
    """Level range and per-level particle counts of a multilevel run."""

    L_min: int
    L_max: int
    particle_counts: tuple[int, ...]
    allocation_constants: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.L_min >= self.L_max:
            raise UsageError(
                f"L_min < L_max required, got [{self.L_min}, {self.L_max}]")
        if self.L_min < 0:
            raise UsageError("L_min must be non-negative")
        counts = tuple(int(n) for n in self.particle_counts)
        if len(counts) != self.L_max - self.L_min + 1:
            raise ContractError(
                f"expected {self.L_max - self.L_min + 1} particle counts, "
                f"got {len(counts)}")
        if any(n < 1 for n in counts):
            raise ContractError("particle counts must be >= 1")
        object.__setattr__(self, "particle_counts", counts)

    @classmethod
    def from_eps(cls, eps: float, L_min: int, L_max: int,
                 constants: tuple[float, float] = (1.0, 1.0),
                 rule: str = "antithetic") -> "MLConfig":
        return cls(L_min, L_max,
                   allocate_levels(eps, L_min, L_max, constants, rule),
                   tuple(constants))

    def count_at(self, level: int) -> int:
        return self.particle_counts[level - self.L_min]


@dataclass
class MLOutput:
    """Combined multilevel estimates plus the per-level runs behind them.

    ``nc_sign`` and ``nc_log_abs`` hold the combined NC estimate per time
    in signed log form; the per-level outputs keep their own log-NC
    streams so sign flips can be traced to a level.
    """

    method: str
    config: MLConfig
    base: FilterOutput
    level_outputs: dict[int, CoupledFilterOutput | PairedFilterOutput]
    combined_estimates: dict[str, np.ndarray]
    nc_sign: np.ndarray
    nc_log_abs: np.ndarray
    total_cost: int

    @property
    def horizon(self) -> int:
        return self.base.horizon

    def nc_value(self, k: int | None = None) -> float:
        """Combined NC estimate at time k (default: final time), linear scale."""
        idx = (self.horizon if k is None else k) - 1
        return float(self.nc_sign[idx] * np.exp(self.nc_log_abs[idx]))

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "L_min": self.config.L_min,
            "L_max": self.config.L_max,
            "particle_counts": list(self.config.particle_counts),
            "base": self.base.to_json_dict(),
            "levels": {str(l): out.to_json_dict()
                       for l, out in sorted(self.level_outputs.items())},
            "combined_estimates": self.combined_estimates,
            "nc_sign": self.nc_sign,
            "nc_log_abs": self.nc_log_abs,
            "total_cost": self.total_cost,
        }

    def to_json(self, path, manifest=None):
        from .io import write_json
        write_json(path, self.to_json_dict(), manifest)


def combine_nc(base_log_nc: np.ndarray, level_terms) -> tuple[np.ndarray, np.ndarray]:
    """Signed sum of NC products: base plus per-level signed log terms.

    ``level_terms`` is an iterable of (weight, log_nc_array) pairs.  Returns
    (sign, log|value|) arrays; a sign of 0 marks an exactly cancelled sum.
    The sum is evaluated after shifting by the largest term so that scale
    never under- or overflows.
    """
    logs = [np.asarray(base_log_nc, dtype=float)]
    weights = [1.0]
    for weight, log_vals in level_terms:
        logs.append(np.asarray(log_vals, dtype=float))
        weights.append(float(weight))
    stacked = np.stack(logs, axis=0)
    b = np.array(weights)[:, None]
    shift = stacked.max(axis=0)
    safe_shift = np.where(np.isfinite(shift), shift, 0.0)
    total = np.sum(b * np.exp(stacked - safe_shift), axis=0)
    sign = np.sign(total)
    with np.errstate(divide="ignore"):
        log_abs = np.where(total != 0.0,
                           safe_shift + np.log(np.abs(total)), -np.inf)
    return sign, log_abs


def _ml_run(ssm, observations, config, policy, phis, seed, threads, method):
    policy = policy or ResamplePolicy()
    base_seed = derive_seed(seed, DOMAIN_LEVEL, config.L_min)
    if method == "amlpf":
        base = pf_run(ssm, observations, config.L_min,
                      config.count_at(config.L_min), policy=policy,
                      test_functions=phis, seed=base_seed, kernel="milstein",
                      threads=threads)
    else:
        base = pf_run(ssm, observations, config.L_min,
                      config.count_at(config.L_min), policy=policy,
                      test_functions=phis, seed=base_seed, kernel="euler",
                      threads=threads)

    level_outputs: dict[int, CoupledFilterOutput | PairedFilterOutput] = {}
    for l in range(config.L_min + 1, config.L_max + 1):
        level_seed = derive_seed(seed, DOMAIN_LEVEL, l)
        if method == "amlpf":
            out = cpf_run(ssm, observations, l, config.count_at(l),
                          policy=policy, test_functions=phis, seed=level_seed,
                          threads=threads)
        else:
            out = pair_cpf_run(ssm, observations, l, config.count_at(l),
                               policy=policy, test_functions=phis,
                               seed=level_seed, threads=threads)
        level_outputs[l] = out

    combined = {}
    for name, values in base.estimates.items():
        total = values.copy()
        for l in sorted(level_outputs):
            total = total + level_outputs[l].estimates_diff[name]
        combined[name] = total

    terms = []
    for l in sorted(level_outputs):
        terms.extend(level_outputs[l].nc_terms())
    nc_sign, nc_log_abs = combine_nc(base.log_nc, terms)

    total_cost = base.cost + sum(out.cost for out in level_outputs.values())
    return MLOutput(method, config, base, level_outputs, combined,
                    nc_sign, nc_log_abs, total_cost)


def amlpf_run(ssm, observations, config: MLConfig, *,
              policy: ResamplePolicy | None = None,
              test_functions: dict[str, Callable] | None = None,
              seed: int = 0, threads: int = 1) -> MLOutput:
    """Antithetic multilevel particle filter.

    Truncated Milstein filter at the coarsest level plus antithetic coupled
    corrections at each finer level.
    """
    return _ml_run(ssm, observations, config, policy, test_functions, seed,
                   threads, "amlpf")


def mlpf_baseline_run(ssm, observations, config: MLConfig, *,
                      policy: ResamplePolicy | None = None,
                      test_functions: dict[str, Callable] | None = None,
                      seed: int = 0, threads: int = 1) -> MLOutput:
    """Multilevel particle filter baseline with plain Euler pair couplings."""
    return _ml_run(ssm, observations, config, policy, test_functions, seed,
                   threads, "mlpf")
