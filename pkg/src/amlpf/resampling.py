"""Particle weights and resampling, including coupled variants.

The coupled resampler draws, per offspring slot, a single uniform that
decides between a common draw from the normalized overlap of the marginal
weight vectors and independent residual draws from what each marginal has
in excess of the overlap.  Each marginal is therefore resampled exactly
from its own weights, while slots agree across marginals with probability
equal to the total overlap mass, which keeps the coupled filters tight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FilterCollapseError

# When the residual mass of one marginal underflows to zero while the
# overlap mass is this close to one, the three weight vectors are equal up
# to rounding and the slot is filled from the overlap instead.
_RESIDUAL_EPS = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Normalized particle weights kept alongside their log form."""

    log_weights: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_log(cls, log_weights, time: int | None = None,
                 marginal: str = "single") -> "WeightVector":
        lw = np.asarray(log_weights, dtype=float)
        if lw.ndim != 1 or lw.size == 0:
            raise ContractError(f"log weights must be a non-empty vector, got shape {lw.shape}")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ContractError("log weights must be in [-inf, inf)")
        m = lw.max()
        if m == -np.inf:
            raise FilterCollapseError(time if time is not None else -1, marginal)
        w = np.exp(lw - m)
        return cls(lw, w / w.sum())

    def __len__(self) -> int:
        return self.normalized.size


def ess(w: WeightVector) -> float:
    """Effective sample size 1 / sum(w_i^2) of the normalized weights."""
    return float(1.0 / np.sum(w.normalized**2))


def multinomial_resample(n: int, w: WeightVector, rng: np.random.Generator
                         ) -> np.ndarray:
    """Draw ``n`` ancestor indices iid from the normalized weights."""
    if n < 1:
        raise ContractError(f"need at least one offspring, got {n}")
    return rng.choice(len(w), size=n, p=w.normalized)


@dataclass(frozen=True)
class AncestorTriple:
    """Ancestor indices for three marginals plus per-slot coupling flags."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    coupled: np.ndarray


@dataclass(frozen=True)
class AncestorPair:
    """Ancestor indices for two marginals plus per-slot coupling flags."""

    a1: np.ndarray
    a2: np.ndarray
    coupled: np.ndarray


def _coupled_ancestors(weights: tuple[np.ndarray, ...], rng) -> tuple:
    n = weights[0].size
    if any(w.size != n for w in weights):
        raise ContractError("coupled resampling requires equal-length weight vectors")
    overlap = weights[0]
    for w in weights[1:]:
        overlap = np.minimum(overlap, w)
    common = overlap.sum()

    u = rng.random(n)
    coupled = u < common
    ancestors = [np.empty(n, dtype=np.intp) for _ in weights]

    k = int(coupled.sum())
    if k:
        idx = rng.choice(n, size=k, p=overlap / common)
        for a in ancestors:
            a[coupled] = idx

    rest = ~coupled
    m = int(rest.sum())
    if m:
        for a, w in zip(ancestors, weights):
            residual = np.maximum(w - overlap, 0.0)
            total = residual.sum()
            if total <= 0.0:
                # Algebraically the residual mass is 1 - common > 0 here;
                # reaching zero means the marginals only differ by rounding.
                if common < 1.0 - _RESIDUAL_EPS:
                    raise ContractError(
                        "residual mass vanished while overlap mass is "
                        f"{common:.17g}; weight vectors are inconsistent"
                    )
                a[rest] = rng.choice(n, size=m, p=overlap / common)
            else:
                a[rest] = rng.choice(n, size=m, p=residual / total)
    return ancestors, coupled


def triple_coupled_resample(w1: WeightVector, w2: WeightVector, w3: WeightVector,
                            rng: np.random.Generator) -> AncestorTriple:
    """Resample three marginals jointly, maximizing per-slot agreement.

    Each slot is coupled (one shared ancestor index for all marginals) with
    probability equal to the overlap mass sum_i min(w1_i, w2_i, w3_i);
    otherwise the three indices are drawn independently from the residual
    distributions.  Marginally each output is multinomial in its own weights.
    """
    ancestors, coupled = _coupled_ancestors(
        (w1.normalized, w2.normalized, w3.normalized), rng)
    return AncestorTriple(ancestors[0], ancestors[1], ancestors[2], coupled)


def pair_coupled_resample(w1: WeightVector, w2: WeightVector,
                          rng: np.random.Generator) -> AncestorPair:
    """Two-marginal version of the coupled resampler."""
    ancestors, coupled = _coupled_ancestors((w1.normalized, w2.normalized), rng)
    return AncestorPair(ancestors[0], ancestors[1], coupled)
