from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergostep.catalog import monomial1d, normal_law, ou1d
from ergostep.empirical import (
    AnalyticLaw1D,
    WeightedEmpiricalMeasure,
    merge_statistics,
    wasserstein1_atoms,
    wasserstein1_to,
)
from ergostep.innovations import InnovationDist
from ergostep.schedules import StepSchedule, WeightSchedule
from ergostep.schemes import simulate, trajectory_generators


def atomic_law(xs, ws) -> AnalyticLaw1D:
    """Exact law object for a weighted atomic measure (test oracle)."""
    xs = np.asarray(xs, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.float64)
    order = np.argsort(xs, kind="stable")
    xs, ws = xs[order], ws[order] / ws.sum()
    cum = np.cumsum(ws)

    def cdf(v):
        return float(cum[bisect_right(xs.tolist(), v) - 1]) if v >= xs[0] else 0.0

    def quantile(p):
        idx = int(np.searchsorted(cum, p, side="left"))
        return float(xs[min(idx, xs.size - 1)])

    def partial_expectation(p1, p2):
        # integral of the step quantile over [p1, p2]
        total = 0.0
        lo = p1
        for xi, c in zip(xs, cum):
            if lo >= p2:
                break
            hi = min(float(c), p2)
            if hi > lo:
                total += xi * (hi - lo)
                lo = hi
        return total

    return AnalyticLaw1D(cdf=cdf, quantile=quantile, partial_expectation=partial_expectation)


# ---------------------------------------------------------------------------
# recording and readout


def test_single_atom_value():
    m = WeightedEmpiricalMeasure()
    m.register("x^2", monomial1d(2).fn)
    m.record(np.array([2.0]), 1.0)
    assert m.value("x^2") == 4.0


def test_zero_weight_leaves_values_unchanged():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    m.record(np.array([1.0]), 2.0)
    before = m.value("x")
    m.record(np.array([55.0]), 0.0)
    assert m.value("x") == before


def test_weighted_average_by_hand():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    m.record(np.array([0.0]), 1.0)
    m.record(np.array([2.0]), 3.0)
    assert m.value("x") == pytest.approx(1.5, rel=1e-15)


def test_negative_weight_rejected():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    with pytest.raises(ValueError):
        m.record(np.array([0.0]), -1.0)


def test_unknown_name_and_empty_measure():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    with pytest.raises(KeyError):
        m.value("y")
    with pytest.raises(ValueError):
        m.value("x")
    m.record(np.array([1.0]), 1.0)
    m.reset()
    with pytest.raises(ValueError):
        m.value("x")


def test_duplicate_registration_rejected():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    with pytest.raises(ValueError):
        m.register("x", monomial1d(1).fn)


def test_online_matches_offline_recomputation():
    ou = ou1d(1.0, math.sqrt(2.0))
    steps = StepSchedule("power_law", 1.0, 1.0 / 3.0)
    w = WeightSchedule("trapezoidal", steps, c=1.0)
    meas = WeightedEmpiricalMeasure(weights=w)
    meas.register("x^2", monomial1d(2).fn)
    logged = []

    class Log:
        def observe_block(self, k0, states):
            logged.append(states[:, 0].copy())

    simulate("euler", ou, steps, InnovationDist("three_point", 1), 30_000, 0.0,
             rng_seed=5, sinks=[meas, Log()])
    xs = np.concatenate(logged)
    etas = w.eta_block(1, len(xs) + 1)
    offline = math.fsum(e * v * v for e, v in zip(etas, xs)) / math.fsum(etas)
    assert meas.value("x^2") == pytest.approx(offline, rel=1e-10)


def test_weight_scale_invariance():
    rng, _ = trajectory_generators(8, 0)
    xs = rng.normal(size=200)
    etas = rng.random(200) + 0.1
    vals = {}
    for scale in (1.0, 3.7):
        m = WeightedEmpiricalMeasure()
        m.register("x^2", monomial1d(2).fn)
        for v, e in zip(xs, etas):
            m.record(np.array([v]), scale * e)
        vals[scale] = m.value("x^2")
    assert vals[3.7] == pytest.approx(vals[1.0], rel=1e-13)


def test_buffer_decimation_capacity_and_determinism():
    m = WeightedEmpiricalMeasure(buffer_capacity=16)
    m.register("x", monomial1d(1).fn)
    for k in range(1, 101):
        m.record(np.array([float(k)]), 1.0)
    states, weights = m.buffer()
    assert states.shape[0] <= 16
    # stride doubling keeps every 2^m-th pre-step state, zero-offset
    kept = states[:, 0].astype(int)
    assert kept[0] == 1
    assert set(np.diff(kept)) == {8}


def test_buffer_disabled_raises():
    m = WeightedEmpiricalMeasure()
    m.register("x", monomial1d(1).fn)
    m.record(np.array([0.0]), 1.0)
    with pytest.raises(ValueError):
        m.buffer()


def test_snapshot_csv(tmp_path):
    m = WeightedEmpiricalMeasure(buffer_capacity=4)
    m.register("x", monomial1d(1).fn)
    m.record(np.array([1.5]), 2.0)
    p = tmp_path / "snap.csv"
    m.snapshot_csv(p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "name,value,H_n,n"
    assert lines[1].startswith("x,1.5,2.0,1")
    b = tmp_path / "buf.csv"
    m.buffer_csv(b)
    assert b.read_text().splitlines()[0] == "state0,weight"


# ---------------------------------------------------------------------------
# Wasserstein distance


def test_w1_single_atom_against_standard_normal():
    law = normal_law()
    got = wasserstein1_atoms(np.array([0.0]), np.array([1.0]), law)
    assert got == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-12)


def test_w1_quantile_atoms_decrease():
    law = normal_law()
    prev = math.inf
    for m_atoms in (10, 100, 1000):
        ps = (np.arange(m_atoms) + 0.5) / m_atoms
        xs = np.array([law.quantile(p) for p in ps])
        got = wasserstein1_atoms(xs, np.ones(m_atoms), law)
        assert got < prev
        prev = got
    assert prev < 2e-3


def test_w1_atomic_law_self_distance_zero():
    xs = np.array([-1.0, 0.2, 0.5, 2.0])
    ws = np.array([1.0, 2.0, 0.5, 1.5])
    law = atomic_law(xs, ws)
    assert wasserstein1_atoms(xs, ws, law) <= 1e-12


def test_w1_lower_bound_mean_difference_and_triangle():
    rng, _ = trajectory_generators(21, 0)
    for _ in range(20):
        xa = rng.normal(size=4)
        xb = rng.normal(size=3)
        xc = rng.normal(size=5)
        wa = rng.random(4) + 0.1
        wb = rng.random(3) + 0.1
        wc = rng.random(5) + 0.1
        lb = atomic_law(xb, wb)
        lc = atomic_law(xc, wc)
        dab = wasserstein1_atoms(xa, wa, lb)
        dac = wasserstein1_atoms(xa, wa, lc)
        dbc = wasserstein1_atoms(xb, wb, lc)
        assert dac <= dab + dbc + 1e-12
        mean_a = np.average(xa, weights=wa)
        mean_c = np.average(xc, weights=wc)
        assert dac >= abs(mean_a - mean_c) - 1e-12


def test_w1_measure_api_and_dimension_guard():
    law = normal_law()
    m = WeightedEmpiricalMeasure(buffer_capacity=8)
    m.register("x", monomial1d(1).fn)
    m.record(np.array([0.0]), 1.0)
    assert wasserstein1_to(m, law) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-12)

    m2 = WeightedEmpiricalMeasure(buffer_capacity=8)
    m2.register("x", lambda s: s[..., 0])
    m2.record(np.array([0.0, 0.0]), 1.0)
    with pytest.raises(ValueError, match="dimension"):
        wasserstein1_to(m2, law)


def test_w1_generic_law_quadrature_fallback():
    dist = normal_law()
    bare = AnalyticLaw1D(cdf=dist.cdf, quantile=dist.quantile)
    got = wasserstein1_atoms(np.array([0.0]), np.array([1.0]), bare)
    assert got == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-8)


def test_normal_law_quantile_identity():
    law = normal_law(0.3, 2.0)
    for p in np.linspace(1e-6, 1 - 1e-6, 41):
        assert law.cdf(law.quantile(p)) == pytest.approx(p, abs=1e-8)


# ---------------------------------------------------------------------------
# summary statistics


def test_merge_statistics_degenerate():
    s = merge_statistics([1.0, 1.0, 1.0, 1.0])
    assert s.mean == 1.0
    assert s.variance == 0.0


def test_merge_statistics_two_values():
    s = merge_statistics([0.0, 2.0])
    assert s.mean == 1.0
    assert s.variance == 2.0


def test_merge_statistics_normal_shape():
    rng, _ = trajectory_generators(99, 0)
    s = merge_statistics(rng.standard_normal(10_000))
    assert abs(s.skewness) < 0.08
    assert abs(s.excess_kurtosis) < 0.15
    assert s.skewness_se == pytest.approx(math.sqrt(6.0 / 10_000))
    assert s.kurtosis_se == pytest.approx(math.sqrt(24.0 / 10_000))


def test_merge_statistics_needs_two():
    with pytest.raises(ValueError):
        merge_statistics([1.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.floats(0.1, 10.0))
def test_weight_scale_invariance_property(values, scale):
    a = WeightedEmpiricalMeasure()
    a.register("x", monomial1d(1).fn)
    b = WeightedEmpiricalMeasure()
    b.register("x", monomial1d(1).fn)
    for v in values:
        a.record(np.array([v]), 1.0)
        b.record(np.array([v]), scale)
    assert b.value("x") == pytest.approx(a.value("x"), rel=1e-12, abs=1e-12)


def test_w1_matches_scipy_on_quantile_discretization():
    from scipy import stats

    law = normal_law(0.4, 1.3)
    rng, _ = trajectory_generators(29, 0)
    xs = 0.4 + 1.3 * rng.standard_normal(300)
    ws = rng.random(300) + 0.2
    got = wasserstein1_atoms(xs, ws, law)
    # independent oracle: scipy sample-to-sample distance against a dense
    # quantile discretization of the law
    ps = (np.arange(200_000) + 0.5) / 200_000
    ref_atoms = np.array([law.quantile(p) for p in ps])
    ref = stats.wasserstein_distance(xs, ref_atoms, ws, None)
    assert got == pytest.approx(ref, abs=2e-4)
