"""Diffusion state-space models.

A model couples latent dynamics dX_t = a(X_t) dt + b(X_t) dW_t with a
conditional observation density g(y | x) at unit-spaced times.  The
discretization schemes need, besides the drift ``a`` and diffusion matrix
``b``, the rank-3 tensor of diffusion partial derivatives, from which the
second-order correction of the truncated Milstein step is assembled.

All callables are vectorized over a leading batch axis: states have shape
``(..., d)``, diffusion values ``(..., d, d)``, jacobians ``(..., d, d, m)``
with entry ``[i, j, m] = d b_ij / d x_m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, UsageError

Array = np.ndarray

_COMPENSATORS = ("diagonal", "all_pairs")


def finite_difference_jacobian(diffusion: Callable[[Array], Array], dim: int,
                               rel_step: float = 1e-6) -> Callable[[Array], Array]:
    """Central-difference approximation of the diffusion jacobian.

    Fallback for models without an analytic jacobian.  The step in
    coordinate m is ``rel_step * max(1, |x_m|)``.
    """

    def jacobian(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (dim, dim, dim))
        for m in range(dim):
            h = rel_step * np.maximum(1.0, np.abs(x[..., m]))
            xp = x.copy()
            xp[..., m] += h
            xm = x.copy()
            xm[..., m] -= h
            out[..., m] = (np.asarray(diffusion(xp)) - np.asarray(diffusion(xm))) \
                / (2.0 * h)[..., None, None]
        return out

    return jacobian


@dataclass(frozen=True)
class DiffusionModel:
    """Latent dynamics: drift, diffusion matrix, and diffusion jacobian.

    ``compensator`` selects how the Milstein correction removes the mean of
    the squared increments: "diagonal" subtracts the step size on diagonal
    index pairs only (the correct Ito compensator for independent Brownian
    coordinates), "all_pairs" subtracts it on every pair.
    """

    dim: int
    drift: Callable[[Array], Array]
    diffusion: Callable[[Array], Array]
    diffusion_jacobian: Callable[[Array], Array] | None = None
    compensator: str = "diagonal"

    def __post_init__(self):
        if self.dim < 1:
            raise ContractError(f"state dimension must be >= 1, got {self.dim}")
        if self.compensator not in _COMPENSATORS:
            raise UsageError(
                f"unknown compensator {self.compensator!r}; choose from {_COMPENSATORS}"
            )
        if self.diffusion_jacobian is None:
            object.__setattr__(
                self, "diffusion_jacobian",
                finite_difference_jacobian(self.diffusion, self.dim),
            )


@dataclass(frozen=True)
class ObservationModel:
    """Conditional observation density g(y | x), vectorized over states.

    ``log_density(x, y)`` takes states ``(..., d)`` and one observation
    ``(q,)`` and returns log g with shape ``(...)``.  A value of ``-inf``
    marks a state with zero likelihood (particle death).  ``sample`` draws
    y given a single state, used when simulating datasets.
    """

    obs_dim: int
    log_density: Callable[[Array, Array], Array]
    sample: Callable[[Array, np.random.Generator], Array] | None = None


@dataclass(frozen=True)
class StateSpaceModel:
    """A diffusion prior plus an observation density and a fixed start point."""

    dynamics: DiffusionModel
    observation: ObservationModel
    x0: Array
    name: str = ""
    params: dict = field(default_factory=dict)
    # Exact unit-time transition sampler, when one exists (used for data
    # simulation; the filters always discretize).
    exact_transition: Callable[[Array, np.random.Generator], Array] | None = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.dynamics.dim,):
            raise ContractError(
                f"x0 has shape {x0.shape}, expected ({self.dynamics.dim},)"
            )
        object.__setattr__(self, "x0", x0)


def milstein_tensor(model: DiffusionModel, x: Array) -> Array:
    """Second-order coefficient tensor h of the truncated Milstein step.

    ``h[..., i, j, k] = 0.5 * sum_m b_mk(x) * d b_ij / d x_m``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise ContractError(f"state has dim {x.shape[-1]}, model has dim {model.dim}")
    beta = np.asarray(model.diffusion(x))
    jac = np.asarray(model.diffusion_jacobian(x))
    return 0.5 * np.einsum("...mk,...ijm->...ijk", beta, jac)


def h_correction(model: DiffusionModel, x: Array, z: Array, delta: float,
                 compensator: str | None = None) -> Array:
    """Milstein correction H applied over one step of size ``delta``.

    ``H_i = sum_jk h_ijk(x) * (z_j z_k - delta * C_jk)`` where C is the
    identity (diagonal compensator) or the all-ones matrix.  ``z`` is the
    Brownian increment over the step, shape ``(..., d)``.
    """
    if not delta > 0:
        raise ContractError(f"step size must be positive, got {delta}")
    comp = compensator if compensator is not None else model.compensator
    if comp not in _COMPENSATORS:
        raise UsageError(f"unknown compensator {comp!r}; choose from {_COMPENSATORS}")
    z = np.asarray(z, dtype=float)
    h = milstein_tensor(model, x)
    zz = z[..., :, None] * z[..., None, :]
    if comp == "diagonal":
        c = np.eye(model.dim)
    else:
        c = np.ones((model.dim, model.dim))
    return np.einsum("...ijk,...jk->...i", h, zz - delta * c)


def _gaussian_loglik(y: float, mean: Array, var: float) -> Array:
    return -0.5 * math.log(2.0 * math.pi * var) - 0.5 * (y - mean) ** 2 / var


# ---------------------------------------------------------------------------
# Builtin models


def _gbm(params: dict) -> StateSpaceModel:
    mu = float(params.pop("mu", 0.02))
    sigma = float(params.pop("sigma", 0.2))
    tau2 = float(params.pop("tau2", 0.02))
    x0 = float(params.pop("x0", 1.0))
    if sigma < 0 or tau2 <= 0:
        raise UsageError("gbm requires sigma >= 0 and tau2 > 0")

    def drift(x):
        return mu * x

    def diffusion(x):
        return sigma * x[..., :, None]

    def jacobian(x):
        out = np.empty(x.shape[:-1] + (1, 1, 1))
        out.fill(sigma)
        return out

    def log_density(x, y):
        x1 = x[..., 0]
        safe = np.where(x1 > 0, x1, 1.0)
        ll = _gaussian_loglik(float(y[0]), np.log(safe), tau2)
        return np.where(x1 > 0, ll, -np.inf)

    def sample_obs(x, rng):
        if not x[0] > 0:
            raise ContractError("gbm observation requires a positive state")
        return np.array([rng.normal(math.log(x[0]), math.sqrt(tau2))])

    def exact_transition(x, rng):
        z = rng.standard_normal(x.shape[:-1] + (1,))
        return x * np.exp((mu - 0.5 * sigma**2) + sigma * z)

    dyn = DiffusionModel(1, drift, diffusion, jacobian)
    obs = ObservationModel(1, log_density, sample_obs)
    return StateSpaceModel(dyn, obs, np.array([x0]), name="gbm",
                           params={"mu": mu, "sigma": sigma, "tau2": tau2, "x0": x0},
                           exact_transition=exact_transition)


def _clark_cameron(params: dict) -> StateSpaceModel:
    tau2 = float(params.pop("tau2", 0.1))
    x0 = np.asarray(params.pop("x0", (0.0, 0.0)), dtype=float)
    if tau2 <= 0:
        raise UsageError("clark_cameron requires tau2 > 0")

    def drift(x):
        return np.zeros_like(x)

    def diffusion(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = x[..., 0]
        return out

    def jacobian(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = 1.0
        return out

    def log_density(x, y):
        mean = 0.5 * (x[..., 0] + x[..., 1])
        return _gaussian_loglik(float(y[0]), mean, tau2)

    def sample_obs(x, rng):
        return np.array([rng.normal(0.5 * (x[0] + x[1]), math.sqrt(tau2))])

    dyn = DiffusionModel(2, drift, diffusion, jacobian)
    obs = ObservationModel(1, log_density, sample_obs)
    return StateSpaceModel(dyn, obs, x0, name="clark_cameron",
                           params={"tau2": tau2, "x0": tuple(x0)})


def _nlm(params: dict) -> StateSpaceModel:
    theta = np.asarray(params.pop("theta", (1.0, 1.0)), dtype=float)
    mu = np.asarray(params.pop("mu", (0.0, 0.0)), dtype=float)
    sigma = np.asarray(params.pop("sigma", (1.0, 1.0)), dtype=float)
    scale = float(params.pop("s", math.sqrt(0.1)))
    x0 = np.asarray(params.pop("x0", (0.0, 0.0)), dtype=float)
    if scale <= 0:
        raise UsageError("nlm requires s > 0")

    # Both drift coordinates revert on x1, and the diffusion is diagonal
    # with a common 1/sqrt(1 + x1^2) damping, so the dynamics are genuinely
    # non-commutative and the Milstein correction is exercised.
    def drift(x):
        x1 = x[..., 0]
        return np.stack([theta[0] * (mu[0] - x1), theta[1] * (mu[1] - x1)], axis=-1)

    def diffusion(x):
        x1 = x[..., 0]
        damp = 1.0 / np.sqrt(1.0 + x1**2)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = sigma[0] * damp
        out[..., 1, 1] = sigma[1] * damp
        return out

    def jacobian(x):
        x1 = x[..., 0]
        ddamp = -x1 * (1.0 + x1**2) ** -1.5
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = sigma[0] * ddamp
        out[..., 1, 1, 0] = sigma[1] * ddamp
        return out

    def log_density(x, y):
        mean = 0.5 * (x[..., 0] + x[..., 1])
        return -math.log(2.0 * scale) - np.abs(float(y[0]) - mean) / scale

    def sample_obs(x, rng):
        return np.array([rng.laplace(0.5 * (x[0] + x[1]), scale)])

    dyn = DiffusionModel(2, drift, diffusion, jacobian)
    obs = ObservationModel(1, log_density, sample_obs)
    return StateSpaceModel(dyn, obs, x0, name="nlm",
                           params={"theta": tuple(theta), "mu": tuple(mu),
                                   "sigma": tuple(sigma), "s": scale,
                                   "x0": tuple(x0)})


def _linear_gaussian(params: dict) -> StateSpaceModel:
    theta = float(params.pop("theta", 0.0))
    sigma = float(params.pop("sigma", 1.0))
    tau = float(params.pop("tau", 1.0))
    x0 = float(params.pop("x0", 0.0))
    if sigma < 0 or tau <= 0:
        raise UsageError("linear_gaussian requires sigma >= 0 and tau > 0")
    tau2 = tau * tau

    def drift(x):
        return np.full_like(x, theta)

    def diffusion(x):
        out = np.empty(x.shape[:-1] + (1, 1))
        out.fill(sigma)
        return out

    def jacobian(x):
        return np.zeros(x.shape[:-1] + (1, 1, 1))

    def log_density(x, y):
        return _gaussian_loglik(float(y[0]), x[..., 0], tau2)

    def sample_obs(x, rng):
        return np.array([rng.normal(x[0], tau)])

    def exact_transition(x, rng):
        # Constant coefficients: the unit-time law is exactly Gaussian and
        # coincides with any dyadic discretization of the same increments.
        z = rng.standard_normal(x.shape[:-1] + (1,))
        return x + theta + sigma * z

    dyn = DiffusionModel(1, drift, diffusion, jacobian)
    obs = ObservationModel(1, log_density, sample_obs)
    return StateSpaceModel(dyn, obs, np.array([x0]), name="linear_gaussian",
                           params={"theta": theta, "sigma": sigma, "tau": tau,
                                   "x0": x0},
                           exact_transition=exact_transition)


_BUILTIN = {
    "gbm": _gbm,
    "clark_cameron": _clark_cameron,
    "nlm": _nlm,
    "linear_gaussian": _linear_gaussian,
}


def builtin_model(name: str, params: dict | None = None) -> StateSpaceModel:
    """Construct a builtin model by name with optional parameter overrides.

    Known names: gbm, clark_cameron, nlm, linear_gaussian.
    """
    if name not in _BUILTIN:
        raise UsageError(
            f"unknown model {name!r}; builtin models are {sorted(_BUILTIN)}"
        )
    remaining = dict(params or {})
    model = _BUILTIN[name](remaining)
    if remaining:
        raise UsageError(
            f"unknown parameter(s) for model {name!r}: {sorted(remaining)}"
        )
    return model
