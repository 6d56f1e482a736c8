"""Discretization kernels: single, pair, and antithetic-triple units."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from amlpf.errors import ContractError, PropagationError
from amlpf.models import builtin_model
from amlpf.schemes import (
    CoupledPair,
    CoupledTriple,
    GaussianDriver,
    Level,
    antithetic_triple_unit,
    as_level,
    euler_pair_unit,
    euler_unit,
    milstein_unit,
)


def test_level_basics():
    lev = Level(3)
    assert lev.delta == 0.125
    assert lev.steps == 8
    assert Level(0).steps == 1 and Level(0).delta == 1.0


@given(l=st.integers(0, 62))
def test_level_delta_times_steps_is_one(l):
    lev = Level(l)
    assert lev.delta * lev.steps == 1.0


def test_level_rejects_out_of_range():
    with pytest.raises(ContractError):
        Level(-1)
    with pytest.raises(ContractError):
        Level(63)


def test_as_level_passthrough_and_coercion():
    assert as_level(5) == Level(5)
    lev = Level(2)
    assert as_level(lev) is lev


def test_coupled_containers_validate_shapes():
    with pytest.raises(ContractError):
        CoupledTriple(np.zeros(2), np.zeros(3), np.zeros(2))
    with pytest.raises(ContractError):
        CoupledPair(np.zeros((4, 1)), np.zeros((5, 1)))
    t = CoupledTriple.from_common(np.array([1.0, 2.0]))
    t.fine[0] = 99.0
    assert t.coarse[0] == 1.0  # from_common copies


# --- closed forms at level 0 ---------------------------------------------


def test_milstein_unit_gbm_level0_closed_form():
    # One unit step: x1 = 1 + mu + sigma z + (sigma^2/2)(z^2 - 1).
    ssm = builtin_model("gbm")
    z = np.random.default_rng(42).standard_normal((1, 1))[0, 0]
    out = milstein_unit(ssm.dynamics, 0, np.array([1.0]),
                        np.random.default_rng(42))
    expected = 1.0 + 0.02 + 0.2 * z + 0.02 * (z * z - 1.0)
    assert out[0] == pytest.approx(expected, rel=1e-14)


def test_euler_unit_gbm_level0_closed_form():
    ssm = builtin_model("gbm")
    z = np.random.default_rng(43).standard_normal((1, 1))[0, 0]
    out = euler_unit(ssm.dynamics, 0, np.array([1.0]),
                     np.random.default_rng(43))
    assert out[0] == pytest.approx(1.0 + 0.02 + 0.2 * z, rel=1e-14)


def test_deterministic_drift_integrates_exactly():
    # sigma=0 and theta=1: every step adds exactly delta, and dyadic deltas
    # sum to exactly 1.0 in floating point.
    ssm = builtin_model("linear_gaussian", {"theta": 1.0, "sigma": 0.0})
    for level in (0, 2, 5):
        out = milstein_unit(ssm.dynamics, level, np.array([0.0]),
                            np.random.default_rng(0))
        assert out[0] == 1.0


def test_constant_diffusion_milstein_equals_euler():
    ssm = builtin_model("linear_gaussian")
    x0 = np.full((50, 1), 0.3)
    a = milstein_unit(ssm.dynamics, 4, x0, np.random.default_rng(9))
    b = euler_unit(ssm.dynamics, 4, x0, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


# --- stream discipline ----------------------------------------------------


def test_driver_consumes_generator_like_kernel():
    ssm = builtin_model("clark_cameron")
    x0 = np.zeros((7, 2))
    driver = GaussianDriver.sample(np.random.default_rng(5), 3, (7,), 2)
    a = milstein_unit(ssm.dynamics, 3, x0, driver=driver)
    b = milstein_unit(ssm.dynamics, 3, x0, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_driver_sample_draws_exactly_steps_times_batch():
    rng = np.random.default_rng(17)
    GaussianDriver.sample(rng, 3, (5,), 2)
    shadow = np.random.default_rng(17)
    shadow.standard_normal((8, 5, 2))
    assert rng.standard_normal() == shadow.standard_normal()


def test_triple_fine_path_matches_single_kernel_stream():
    # The coupled kernel consumes increments in fine order, so its fine leg
    # reproduces the plain kernel bit for bit under the same seed.
    ssm = builtin_model("clark_cameron")
    x0 = np.random.default_rng(1).normal(size=(20, 2))
    triple = antithetic_triple_unit(ssm.dynamics, 4, CoupledTriple.from_common(x0),
                                    np.random.default_rng(23))
    single = milstein_unit(ssm.dynamics, 4, x0, np.random.default_rng(23))
    np.testing.assert_array_equal(triple.fine, single)


def test_pair_fine_path_matches_single_euler_stream():
    ssm = builtin_model("gbm")
    x0 = np.full((10, 1), 1.0)
    pair = euler_pair_unit(ssm.dynamics, 3, CoupledPair.from_common(x0),
                           np.random.default_rng(31))
    single = euler_unit(ssm.dynamics, 3, x0, np.random.default_rng(31))
    np.testing.assert_array_equal(pair.fine, single)


def test_coupled_kernels_reject_level_zero():
    ssm = builtin_model("gbm")
    with pytest.raises(ContractError):
        antithetic_triple_unit(ssm.dynamics, 0,
                               CoupledTriple.from_common(np.array([1.0])),
                               np.random.default_rng(0))
    with pytest.raises(ContractError):
        euler_pair_unit(ssm.dynamics, 0,
                        CoupledPair.from_common(np.array([1.0])),
                        np.random.default_rng(0))


# --- independent step-by-step oracle for the triple -----------------------


def _oracle_milstein_step(dyn, x, z, dt):
    """Loop-form truncated Milstein step for a single state vector."""
    d = dyn.dim
    a = np.asarray(dyn.drift(x[None, :]))[0]
    b = np.asarray(dyn.diffusion(x[None, :]))[0]
    jac = np.asarray(dyn.diffusion_jacobian(x[None, :]))[0]
    out = x + a * dt
    for i in range(d):
        for j in range(d):
            out[i] += b[i, j] * z[j]
            for k in range(d):
                h = 0.5 * sum(b[m, k] * jac[i, j, m] for m in range(d))
                comp = dt if j == k else 0.0
                out[i] += h * (z[j] * z[k] - comp)
    return out


@pytest.mark.parametrize("model_name", ["clark_cameron", "nlm"])
def test_triple_matches_oracle_recursion(model_name):
    # Reference recursion: fine consumes z_1..z_{2^l} in order, antithetic
    # swaps each consecutive pair, coarse uses pairwise sums at twice the
    # step.  The kernel under test gets the same pre-drawn increments.
    ssm = builtin_model(model_name)
    dyn = ssm.dynamics
    level = Level(3)
    rng = np.random.default_rng(77)
    x0 = rng.normal(size=(4, 2))
    driver = GaussianDriver.sample(np.random.default_rng(99), level, (4,), 2)
    got = antithetic_triple_unit(dyn, level, CoupledTriple.from_common(x0),
                                 driver=driver)

    z = driver.increments  # (8, 4, 2), already scaled by sqrt(delta)
    dt = level.delta
    for p in range(4):
        fine = x0[p].copy()
        anti = x0[p].copy()
        coarse = x0[p].copy()
        for k in range(level.steps):
            fine = _oracle_milstein_step(dyn, fine, z[k, p], dt)
        for m in range(level.steps // 2):
            anti = _oracle_milstein_step(dyn, anti, z[2 * m + 1, p], dt)
            anti = _oracle_milstein_step(dyn, anti, z[2 * m, p], dt)
            coarse = _oracle_milstein_step(dyn, coarse,
                                           z[2 * m, p] + z[2 * m + 1, p],
                                           2.0 * dt)
        np.testing.assert_allclose(got.fine[p], fine, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(got.anti[p], anti, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(got.coarse[p], coarse, rtol=1e-12, atol=1e-12)


def test_pair_matches_oracle_recursion():
    ssm = builtin_model("gbm")
    dyn = ssm.dynamics
    level = Level(2)
    x0 = np.full((3, 1), 1.0)
    driver = GaussianDriver.sample(np.random.default_rng(55), level, (3,), 1)
    got = euler_pair_unit(dyn, level, CoupledPair.from_common(x0), driver=driver)
    z = driver.increments
    dt = level.delta
    for p in range(3):
        fine = x0[p].copy()
        coarse = x0[p].copy()
        for k in range(level.steps):
            fine = fine + 0.02 * fine * dt + 0.2 * fine * z[k, p]
        for m in range(level.steps // 2):
            zsum = z[2 * m, p] + z[2 * m + 1, p]
            coarse = coarse + 0.02 * coarse * 2.0 * dt + 0.2 * coarse * zsum
        np.testing.assert_allclose(got.fine[p], fine, rtol=1e-12)
        np.testing.assert_allclose(got.coarse[p], coarse, rtol=1e-12)
    assert got.anti is None


def test_antithetic_marginal_means_match():
    # Swapping increments within pairs leaves the path law unchanged, so
    # fine and antithetic legs agree in expectation.
    ssm = builtin_model("clark_cameron")
    x0 = np.zeros((20000, 2))
    triple = antithetic_triple_unit(ssm.dynamics, 2,
                                    CoupledTriple.from_common(x0),
                                    np.random.default_rng(3))
    diff = triple.anti[:, 1] - triple.fine[:, 1]
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    assert abs(diff.mean()) < 4 * se


# --- strong coupling rates (the quantitative content) ---------------------


def _second_moment_slopes(model_name, levels, reps, seed):
    ssm = builtin_model(model_name)
    dim = ssm.dynamics.dim
    fc = []
    avg = []
    for i, l in enumerate(levels):
        x0 = np.tile(ssm.x0, (reps, 1))
        triple = antithetic_triple_unit(
            ssm.dynamics, l, CoupledTriple.from_common(x0),
            np.random.default_rng(seed + i))
        d_fc = ((triple.fine - triple.coarse) ** 2).sum(axis=1).mean()
        d_avg = (((0.5 * (triple.fine + triple.anti) - triple.coarse)) ** 2
                 ).sum(axis=1).mean()
        fc.append(d_fc)
        avg.append(d_avg)
    return np.array(fc), np.array(avg)


def test_clark_cameron_fine_coarse_rate_is_one():
    levels = [3, 4, 5, 6, 7]
    fc, _ = _second_moment_slopes("clark_cameron", levels, 30000, 100)
    slope = np.polyfit(levels, np.log2(fc), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.3)


def test_clark_cameron_antithetic_average_cancels_exactly():
    # The quadratic structure makes the antithetic average equal the coarse
    # path up to floating-point rounding.
    _, avg = _second_moment_slopes("clark_cameron", [4], 5000, 7)
    assert avg[0] < 1e-20


def test_nlm_antithetic_rate_is_two():
    levels = [3, 4, 5, 6, 7]
    _, avg = _second_moment_slopes("nlm", levels, 30000, 200)
    slope = np.polyfit(levels, np.log2(avg), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.4)


def test_gbm_euler_pair_rate_is_one():
    levels = [3, 4, 5, 6, 7]
    ssm = builtin_model("gbm")
    moments = []
    for i, l in enumerate(levels):
        x0 = np.tile(ssm.x0, (30000, 1))
        pair = euler_pair_unit(ssm.dynamics, l, CoupledPair.from_common(x0),
                               np.random.default_rng(300 + i))
        moments.append(((pair.fine - pair.coarse) ** 2).sum(axis=1).mean())
    slope = np.polyfit(levels, np.log2(moments), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.3)


# --- robustness -----------------------------------------------------------


def test_thread_count_does_not_change_results():
    ssm = builtin_model("nlm")
    x0 = np.random.default_rng(8).normal(size=(1000, 2))
    one = milstein_unit(ssm.dynamics, 3, x0, np.random.default_rng(4), threads=1)
    four = milstein_unit(ssm.dynamics, 3, x0, np.random.default_rng(4), threads=4)
    np.testing.assert_array_equal(one, four)
    t1 = antithetic_triple_unit(ssm.dynamics, 3, CoupledTriple.from_common(x0),
                                np.random.default_rng(5), threads=1)
    t4 = antithetic_triple_unit(ssm.dynamics, 3, CoupledTriple.from_common(x0),
                                np.random.default_rng(5), threads=4)
    np.testing.assert_array_equal(t1.anti, t4.anti)


def test_blowup_raises_propagation_error_with_location():
    from amlpf.models import DiffusionModel

    dyn = DiffusionModel(1, lambda x: x * 1e200, lambda x: x[..., :, None] * 0.0)
    with np.errstate(over="ignore"), pytest.raises(PropagationError) as err:
        milstein_unit(dyn, 2, np.array([1e200]), np.random.default_rng(0))
    assert err.value.path == "single"
    assert "step" in str(err.value)
