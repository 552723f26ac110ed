from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import poly1d_model
from ergostep.catalog import monomial1d, ou1d, ou_nd
from ergostep.empirical import WeightedEmpiricalMeasure
from ergostep.innovations import InnovationDist, assemble_w, joint_outcomes
from ergostep.model import generator_apply, generator_observable
from ergostep.schedules import StepSchedule, WeightSchedule
from ergostep.schemes import (
    DivergenceError,
    euler_step,
    simulate,
    simulate_batch,
    talay_increments,
    talay_step,
)

OU = ou1d(1.0, math.sqrt(2.0))
TP = InnovationDist("three_point", 1)


def x(v):
    return np.array([v])


# ---------------------------------------------------------------------------
# one-step kernels


def test_euler_step_deterministic():
    out = euler_step(OU, x(1.0), 0.1, np.zeros(1))
    assert out[0] == pytest.approx(0.9, abs=1e-16)


def test_euler_step_diffusion_only():
    out = euler_step(OU, x(0.0), 0.01, np.ones(1))
    assert out[0] == pytest.approx(0.1 * math.sqrt(2.0), rel=1e-15)


def test_euler_step_frozen_model(zero_model):
    out = euler_step(zero_model, x(0.7), 0.5, np.ones(1))
    assert out[0] == 0.7


def test_talay_step_ou_at_origin():
    # drift, surrogate, and drift-generator increments vanish at x = 0;
    # the gamma^{3/2} correction carries half the coupling field
    w = assemble_w(np.ones(1), None)
    out = talay_step(OU, x(0.0), 0.01, np.ones(1), w)
    expected = 0.1 * math.sqrt(2.0) + 0.01**1.5 * 0.5 * (-math.sqrt(2.0))
    assert out[0] == pytest.approx(expected, rel=1e-14)
    assert out[0] == pytest.approx(0.0995 * math.sqrt(2.0), rel=1e-12)


def test_talay_step_constant_coefficients_zero_noise():
    m = poly1d_model([0.8], [1.1])
    w = assemble_w(np.zeros(1), None)
    out = talay_step(m, x(2.0), 0.05, np.zeros(1), w)
    # Ab = 0 and D sigma = 0: only the drift increment survives
    assert out[0] == pytest.approx(2.0 + 0.05 * 0.8, rel=1e-15)


def test_talay_step_linear_diffusion():
    m = poly1d_model([0.0], [0.0, 1.0])  # b = 0, sigma(x) = x
    u = np.ones(1)
    w = assemble_w(u, None)  # u^2 - 1 = 0
    out = talay_step(m, x(1.0), 0.01, u, w)
    # W = 0 kills the coupling increment; sigma''=0 and b=0 kill the rest
    assert out[0] == pytest.approx(1.0 + 0.1, rel=1e-14)


def test_talay_increments_decompose_step():
    m = poly1d_model([0.3, -1.0, 0.1], [0.5, 0.2])
    u = np.array([math.sqrt(3.0)])
    w = assemble_w(u, None)
    pt = x(0.7)
    incs = talay_increments(m, pt, 0.02, u, w)
    assert len(incs) == 5
    assert talay_step(m, pt, 0.02, u, w)[0] == pytest.approx(
        0.7 + sum(float(i[0]) for i in incs), rel=1e-15)
    assert incs[0][0] == pytest.approx(math.sqrt(0.02) * m.sigma(pt)[0, 0] * u[0], rel=1e-15)
    assert incs[1][0] == pytest.approx(0.02 * m.b(pt)[0], rel=1e-15)


def test_step_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        euler_step(OU, x(0.0), 0.0, np.zeros(1))
    with pytest.raises(ValueError):
        talay_step(OU, x(0.0), -0.1, np.ones(1), assemble_w(np.ones(1), None))


# ---------------------------------------------------------------------------
# one-step weak order (the module's core numerical claim)


def _one_step_error(scheme: str, gamma: float) -> float:
    f = monomial1d(4)
    pt = x(1.0)
    af = generator_apply(OU, f, pt)
    target = f.fn(pt) + gamma * af
    if scheme == "talay2":
        target = target + 0.5 * gamma * gamma * generator_apply(OU, generator_observable(OU, f), pt)
    total = 0.0
    for u, kap, p in joint_outcomes(TP, with_kappa=(scheme == "talay2")):
        if scheme == "euler":
            y = euler_step(OU, pt, gamma, u)
        else:
            y = talay_step(OU, pt, gamma, u, assemble_w(u, kap if kap.size else None))
        total += p * float(f.fn(y))
    return float(total - target)


@pytest.mark.parametrize("scheme,window", [("euler", (3.2, 4.8)), ("talay2", (6.0, 10.0))])
def test_one_step_error_ratio(scheme, window):
    for gamma in (2.0**-6, 2.0**-7):
        ratio = _one_step_error(scheme, gamma) / _one_step_error(scheme, gamma / 2.0)
        assert window[0] <= ratio <= window[1]


# ---------------------------------------------------------------------------
# simulation driver


def test_simulate_zero_steps():
    calls = []

    class Spy:
        def observe_block(self, k0, states):
            calls.append(k0)

    st = StepSchedule("power_law", 1.0, 0.5)
    state = simulate("euler", OU, st, TP, 0, 0.25, rng_seed=1, sinks=[Spy()])
    assert state.x[0] == 0.25
    assert state.n == 0
    assert calls == []


def test_simulate_reproducible():
    st = StepSchedule("power_law", 1.0, 1.0 / 3.0)
    a = simulate("euler", OU, st, TP, 5000, 0.0, rng_seed=77)
    b = simulate("euler", OU, st, TP, 5000, 0.0, rng_seed=77)
    assert np.array_equal(a.x, b.x)
    c = simulate("euler", OU, st, TP, 5000, 0.0, rng_seed=78)
    assert not np.array_equal(a.x, c.x)


def test_simulate_long_run_mean_reverts():
    st = StepSchedule("constant", 0.05)
    states = []

    class Collect:
        def observe_block(self, k0, block):
            states.append(block[:, 0].copy())

    simulate("euler", OU, st, TP, 20000, 0.0, rng_seed=3, sinks=[Collect()])
    xs = np.concatenate(states)
    batches = xs[: 20 * (len(xs) // 20)].reshape(20, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(xs.mean()) <= 3 * se


@pytest.mark.parametrize("scheme", ["euler", "talay2"])
def test_batch_matches_serial_bitwise(scheme):
    st = StepSchedule("power_law", 0.5, 0.4)
    w = WeightSchedule("proportional", st, c=1.0)
    n, reps = 2500, 5  # crosses a block boundary
    serial_states = []
    serial_vals = []
    for r in range(reps):
        meas = WeightedEmpiricalMeasure(weights=w)
        meas.register("x^2", monomial1d(2).fn)
        s = simulate(scheme, OU, st, TP, n, 0.3, rng_seed=123, sinks=[meas], replication=r)
        serial_states.append(s.x)
        serial_vals.append(meas.value("x^2"))
    bmeas = WeightedEmpiricalMeasure(weights=w, batch_shape=(reps,))
    bmeas.register("x^2", monomial1d(2).fn)
    res = simulate_batch(scheme, OU, st, TP, n, 0.3, master_seed=123,
                         replications=reps, sinks=[bmeas])
    assert np.array_equal(res.final_states, np.stack(serial_states))
    assert np.array_equal(bmeas.value("x^2"), np.array(serial_vals))
    assert res.excluded == []


def test_simulate_nd_model_runs():
    theta = np.array([[1.0, 0.2], [0.0, 1.5]])
    sig = np.eye(2)
    m = ou_nd(theta, sig)
    st = StepSchedule("power_law", 0.5, 0.5)
    state = simulate("talay2", m, st, InnovationDist("three_point", 2), 500, [1.0, -1.0], rng_seed=5)
    assert state.x.shape == (2,)
    assert np.all(np.isfinite(state.x))


def test_divergence_raises_with_step_index():
    cubic = poly1d_model([0.0, 0.0, 0.0, 1.0], [0.0])  # b = x^3, no noise
    st = StepSchedule("constant", 1.0)
    with pytest.raises(DivergenceError) as err:
        simulate("euler", cubic, st, TP, 100, 2.0, rng_seed=0)
    assert err.value.step_index is not None
    assert err.value.step_index <= 10


def test_divergence_excluded_in_batch():
    cubic = poly1d_model([0.0, 0.0, 0.0, 1.0], [0.1])
    st = StepSchedule("constant", 1.0)
    res = simulate_batch("euler", cubic, st, TP, 50, 2.0, master_seed=0, replications=3)
    assert len(res.excluded) == 3
    assert all(np.all(np.isfinite(row)) for row in res.final_states)


def test_innovation_dimension_checked():
    st = StepSchedule("constant", 0.1)
    with pytest.raises(ValueError):
        simulate("euler", OU, st, InnovationDist("three_point", 2), 10, 0.0, rng_seed=0)


def test_double_well_drift_generator_and_weak_order():
    from ergostep.catalog import double_well
    from ergostep.diagnostics import weak_order_probe

    m = double_well(math.sqrt(2.0))
    # Ab = b'b + sigma^2/2 b'' with b = x - x^3
    for v in (-1.5, 0.3, 2.0):
        from ergostep.model import drift_generator

        expected = (1 - 3 * v * v) * (v - v**3) + 1.0 * (-6.0 * v)
        assert drift_generator(m, x(v))[0] == pytest.approx(expected, rel=1e-12)
    res = weak_order_probe("talay2", m, monomial1d(4), x(0.5), [2.0**-7, 2.0**-8], TP)
    assert 6.0 <= res.ratios[0] <= 10.0
    res_e = weak_order_probe("euler", m, monomial1d(4), x(0.5), [2.0**-7, 2.0**-8], TP)
    assert 3.2 <= res_e.ratios[0] <= 4.8


def test_double_well_trajectory_stays_bounded():
    from ergostep.catalog import double_well

    m = double_well(1.0)
    st = StepSchedule("power_law", 0.25, 1.0 / 3.0)
    s = simulate("euler", m, st, TP, 20_000, 0.0, rng_seed=8)
    assert abs(s.x[0]) < 3.0


def test_gaussian_innovation_simulation_reproducible():
    st = StepSchedule("power_law", 0.5, 0.4)
    g = InnovationDist("gaussian", 1)
    a = simulate("talay2", OU, st, g, 4000, 0.1, rng_seed=55)
    b = simulate("talay2", OU, st, g, 4000, 0.1, rng_seed=55)
    assert np.array_equal(a.x, b.x)
