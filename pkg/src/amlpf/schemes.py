"""Time discretization kernels over one unit observation interval.

Level l partitions the interval into 2^l steps of size 2^-l.  The truncated
Milstein kernel propagates a batch of states through those steps.  The
antithetic kernel propagates three paths from shared Gaussian increments:

* fine: 2^l Milstein steps consuming increments in natural order,
* antithetic: the same increments with each consecutive pair swapped,
* coarse: 2^(l-1) steps of doubled size driven by pairwise increment sums.

Averaging fine and antithetic paths cancels the leading coarse-fine error
term, which is what gives the multilevel estimator its improved variance.

All kernels draw increments one substep at a time in a fixed order from the
supplied generator, so results are independent of batch layout and of the
optional worker-thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PropagationError
from .models import DiffusionModel, h_correction

MAX_LEVEL = 62  # 2^l must stay an exact integer and 2^-l a normal float


@dataclass(frozen=True)
class Level:
    """Dyadic discretization level: 2^l steps of size 2^-l per unit time."""

    l: int

    def __post_init__(self):
        if not 0 <= self.l <= MAX_LEVEL:
            raise ContractError(f"level must be in [0, {MAX_LEVEL}], got {self.l}")

    @property
    def delta(self) -> float:
        return 2.0 ** -self.l

    @property
    def steps(self) -> int:
        return 1 << self.l


def as_level(level) -> Level:
    return level if isinstance(level, Level) else Level(int(level))


@dataclass(frozen=True)
class CoupledTriple:
    """Fine, coarse and antithetic states sharing one batch shape."""

    fine: np.ndarray
    coarse: np.ndarray
    anti: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fine, dtype=float)
        c = np.asarray(self.coarse, dtype=float)
        a = np.asarray(self.anti, dtype=float)
        if not (f.shape == c.shape == a.shape):
            raise ContractError(
                f"triple shapes differ: {f.shape}, {c.shape}, {a.shape}"
            )
        object.__setattr__(self, "fine", f)
        object.__setattr__(self, "coarse", c)
        object.__setattr__(self, "anti", a)

    @classmethod
    def from_common(cls, x: np.ndarray) -> "CoupledTriple":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), x.copy(), x.copy())


@dataclass(frozen=True)
class GaussianDriver:
    """Pre-drawn Brownian increments for one unit interval.

    ``increments[k]`` is the batch of scaled increments for substep k, each
    entry distributed N(0, delta).  Sampling a driver consumes the generator
    in exactly the order the kernels would, so a kernel given the driver
    produces the same path as one given the generator directly.
    """

    level: Level
    increments: np.ndarray  # (steps, ..., d)

    @classmethod
    def sample(cls, rng: np.random.Generator, level, batch_shape: tuple, dim: int
               ) -> "GaussianDriver":
        level = as_level(level)
        scale = np.sqrt(level.delta)
        z = rng.standard_normal((level.steps,) + tuple(batch_shape) + (dim,)) * scale
        return cls(level, z)


def _prepare(model: DiffusionModel, x0) -> tuple[np.ndarray, bool]:
    x = np.asarray(x0, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[-1] != model.dim:
        raise ContractError(
            f"state batch must have shape (n, {model.dim}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ContractError("initial states must be finite")
    return x.copy(), single


def _milstein_step(model, x, z, dt):
    out = x + dt * np.asarray(model.drift(x))
    out += np.einsum("...ij,...j->...i", np.asarray(model.diffusion(x)), z)
    out += h_correction(model, x, z, dt)
    return out


def _euler_step(model, x, z, dt):
    out = x + dt * np.asarray(model.drift(x))
    out += np.einsum("...ij,...j->...i", np.asarray(model.diffusion(x)), z)
    return out


class _StepRunner:
    """Applies a step function to a batch, optionally split across threads.

    Increments are drawn for the whole batch before splitting, so the output
    is bitwise independent of the worker count.
    """

    def __init__(self, threads: int, batch: int):
        self.pool = None
        self.bounds = None
        threads = max(1, int(threads))
        if threads > 1 and batch >= 2 * threads:
            self.bounds = np.linspace(0, batch, threads + 1, dtype=int)
            self.pool = ThreadPoolExecutor(max_workers=threads)

    def apply(self, step, model, x, z, dt):
        if self.pool is None:
            return step(model, x, z, dt)
        futures = [
            self.pool.submit(step, model, x[a:b], z[a:b], dt)
            for a, b in zip(self.bounds[:-1], self.bounds[1:])
        ]
        return np.concatenate([f.result() for f in futures], axis=0)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _check_finite(x, step_index, path):
    if not np.all(np.isfinite(x)):
        raise PropagationError(step_index, path)


def _draw(rng, driver, k, shape, scale):
    if driver is not None:
        return driver.increments[k]
    return rng.standard_normal(shape) * scale


def milstein_unit(model: DiffusionModel, level, x0, rng=None, *,
                  driver: GaussianDriver | None = None, threads: int = 1
                  ) -> np.ndarray:
    """Propagate states through one unit interval with truncated Milstein steps."""
    level = as_level(level)
    x, single = _prepare(model, x0)
    dt = level.delta
    scale = np.sqrt(dt)
    runner = _StepRunner(threads, x.shape[0])
    try:
        for k in range(level.steps):
            z = _draw(rng, driver, k, x.shape, scale)
            x = runner.apply(_milstein_step, model, x, z, dt)
            _check_finite(x, k, "single")
    finally:
        runner.close()
    return x[0] if single else x


def euler_unit(model: DiffusionModel, level, x0, rng=None, *,
               driver: GaussianDriver | None = None, threads: int = 1
               ) -> np.ndarray:
    """Propagate states through one unit interval with Euler steps."""
    level = as_level(level)
    x, single = _prepare(model, x0)
    dt = level.delta
    scale = np.sqrt(dt)
    runner = _StepRunner(threads, x.shape[0])
    try:
        for k in range(level.steps):
            z = _draw(rng, driver, k, x.shape, scale)
            x = runner.apply(_euler_step, model, x, z, dt)
            _check_finite(x, k, "single")
    finally:
        runner.close()
    return x[0] if single else x


def _coupled_unit(model, level, start, rng, driver, threads, step):
    """Shared driver for the antithetic triple and the plain pair kernels."""
    level = as_level(level)
    if level.l < 1:
        raise ContractError("coupled kernels need level >= 1 (coarse level l-1 >= 0)")
    xf, single = _prepare(model, start.fine)
    xc, _ = _prepare(model, start.coarse)
    xa = None
    antithetic = start.anti is not None
    if antithetic:
        xa, _ = _prepare(model, start.anti)
    dt = level.delta
    scale = np.sqrt(dt)
    runner = _StepRunner(threads, xf.shape[0])
    try:
        for m in range(level.steps // 2):
            za = _draw(rng, driver, 2 * m, xf.shape, scale)
            zb = _draw(rng, driver, 2 * m + 1, xf.shape, scale)
            xf = runner.apply(step, model, xf, za, dt)
            xf = runner.apply(step, model, xf, zb, dt)
            _check_finite(xf, 2 * m + 1, "fine")
            if antithetic:
                xa = runner.apply(step, model, xa, zb, dt)
                xa = runner.apply(step, model, xa, za, dt)
                _check_finite(xa, 2 * m + 1, "antithetic")
            xc = runner.apply(step, model, xc, za + zb, 2.0 * dt)
            _check_finite(xc, m, "coarse")
    finally:
        runner.close()
    if single:
        xf, xc = xf[0], xc[0]
        if antithetic:
            xa = xa[0]
    return xf, xc, xa


def antithetic_triple_unit(model: DiffusionModel, level, start: CoupledTriple,
                           rng=None, *, driver: GaussianDriver | None = None,
                           threads: int = 1) -> CoupledTriple:
    """Propagate a coupled triple through one unit interval.

    Fine and antithetic paths take 2^l truncated Milstein steps; within each
    consecutive pair of increments the antithetic path consumes them in
    swapped order.  The coarse path takes 2^(l-1) steps of twice the size,
    driven by the pairwise sums.  Level l=1 gives a single unit coarse step.
    """
    xf, xc, xa = _coupled_unit(model, level, start, rng, driver, threads,
                               _milstein_step)
    return CoupledTriple(xf, xc, xa)


@dataclass(frozen=True)
class CoupledPair:
    """Fine and coarse states sharing one batch shape (no antithetic path)."""

    fine: np.ndarray
    coarse: np.ndarray
    anti = None  # so the coupled kernels can treat pairs and triples alike

    def __post_init__(self):
        f = np.asarray(self.fine, dtype=float)
        c = np.asarray(self.coarse, dtype=float)
        if f.shape != c.shape:
            raise ContractError(f"pair shapes differ: {f.shape}, {c.shape}")
        object.__setattr__(self, "fine", f)
        object.__setattr__(self, "coarse", c)

    @classmethod
    def from_common(cls, x: np.ndarray) -> "CoupledPair":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), x.copy())


def euler_pair_unit(model: DiffusionModel, level, start: CoupledPair, rng=None, *,
                    driver: GaussianDriver | None = None, threads: int = 1
                    ) -> CoupledPair:
    """Propagate a fine/coarse Euler pair sharing increments (no antithetic path)."""
    xf, xc, _ = _coupled_unit(model, level, start, rng, driver, threads,
                              _euler_step)
    return CoupledPair(xf, xc)
