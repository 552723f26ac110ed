"""Online weighted empirical measures and distances to analytic laws.

A ``WeightedEmpiricalMeasure`` accumulates, for each registered observable f,
the running weighted sum over pre-step states

    value(f) = sum_k eta_k f(x_{k-1}) / H_n,      H_n = sum_k eta_k,

with compensated summation so runs of 1e8 tiny weights keep the online value
within round-off of an offline recomputation.  Accumulation starts at k = 1;
burn-in, when wanted, is the caller's slicing concern.

States arrive either one at a time (``record``) or in fixed-size blocks
(``record_block``): the block path reduces each block with a single weighted
sum and folds the partial into the compensated accumulator, and it is the
path the simulation drivers use, so serial and batched execution perform an
identical sequence of float operations per replication.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .accum import Kahan, VectorKahan
from .schedules import WeightSchedule


@dataclass(frozen=True)
class AnalyticLaw1D:
    """A one-dimensional law given by its cdf and quantile function.

    ``partial_expectation(p1, p2)`` = integral of the quantile over
    probabilities [p1, p2]; supplied in closed form for catalog laws and
    approximated by quadrature otherwise.
    """

    cdf: Callable[[float], float]
    quantile: Callable[[float], float]
    partial_expectation: Callable[[float, float], float] | None = None
    moments: tuple[float, ...] | None = None
    name: str = ""

    def partial_mean(self, p1: float, p2: float) -> float:
        if p2 <= p1:
            return 0.0
        if self.partial_expectation is not None:
            return self.partial_expectation(p1, p2)
        from scipy.integrate import quad

        lo = max(p1, 1e-15)
        hi = min(p2, 1.0 - 1e-15)
        val, _ = quad(self.quantile, lo, hi, limit=200)
        return val


def _reduce_block(etas: np.ndarray, vals: np.ndarray, batch_shape: tuple[int, ...]) -> np.ndarray:
    """Weighted sum over the block axis as one contiguous pairwise reduction
    per batch element, so scalar and batched measures round identically."""
    weighted = etas.reshape((-1,) + (1,) * len(batch_shape)) * vals
    flat = weighted.reshape(weighted.shape[0], -1)
    per = np.ascontiguousarray(flat.T).sum(axis=-1)
    return per.reshape(batch_shape)


class WeightedEmpiricalMeasure:
    """Running nu_n(f) = (1/H_n) sum_k eta_k f(x_{k-1}) for registered f.

    ``batch_shape`` adds leading replication axes to every accumulator; a
    scalar measure is ``batch_shape=()``.  ``buffer_capacity > 0`` keeps a
    deterministically decimated store of (state, weight) atoms for distance
    diagnostics: the keep stride doubles whenever the buffer fills, so the
    retained atoms are every 2^m-th pre-step state.
    """

    def __init__(self, weights: WeightSchedule | None = None,
                 batch_shape: tuple[int, ...] = (),
                 buffer_capacity: int = 0):
        self.weights = weights
        self.batch_shape = tuple(batch_shape)
        self._obs: dict[str, Callable] = {}
        self._sums: dict[str, VectorKahan] = {}
        self._h = Kahan()
        self._n = 0
        self._cap = int(buffer_capacity)
        self._buf_states: list[np.ndarray] = []
        self._buf_weights: list[float] = []
        self._stride = 1

    # -- registration ---------------------------------------------------------

    def register(self, name: str, fn: Callable) -> None:
        """Register observable ``fn`` mapping states (..., d) to values (...)."""
        if name in self._obs:
            raise ValueError(f"observable {name!r} already registered")
        self._obs[name] = fn
        self._sums[name] = VectorKahan(self.batch_shape)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._obs)

    @property
    def n(self) -> int:
        return self._n

    @property
    def h(self) -> float:
        return self._h.value

    # -- accumulation -----------------------------------------------------------

    def record(self, x: np.ndarray, eta_k: float) -> None:
        """Fold in one pre-step state with weight eta_k (call order k = 1, 2, ...)."""
        if eta_k < 0:
            raise ValueError("weights must be non-negative")
        x = np.asarray(x, dtype=np.float64)
        self._n += 1
        self._h.add(eta_k)
        for name, fn in self._obs.items():
            self._sums[name].add(eta_k * np.asarray(fn(x), dtype=np.float64))
        self._buffer_push(x, eta_k)

    def record_block(self, k0: int, states: np.ndarray) -> None:
        """Fold in pre-step states for steps k0 .. k0+len-1 using the attached
        weight schedule.  ``states`` has shape (len, *batch_shape, d)."""
        if self.weights is None:
            raise ValueError("record_block requires a weight schedule")
        m = states.shape[0]
        etas = self.weights.eta_block(k0, k0 + m)
        self.record_block_weighted(states, etas)

    def record_block_weighted(self, states: np.ndarray, etas: np.ndarray) -> None:
        if np.any(etas < 0):
            raise ValueError("weights must be non-negative")
        m = states.shape[0]
        for name, fn in self._obs.items():
            vals = np.asarray(fn(states), dtype=np.float64)
            self._sums[name].add(_reduce_block(etas, vals, self.batch_shape))
        self._h.add(math.fsum(etas))
        for t in range(m):
            self._n += 1
            self._buffer_push(states[t], float(etas[t]))

    def observe_block(self, k0: int, states: np.ndarray) -> None:
        """StateSink entry point used by the simulation drivers."""
        self.record_block(k0, states)

    def reset(self) -> None:
        self._h = Kahan()
        self._n = 0
        for name in self._sums:
            self._sums[name] = VectorKahan(self.batch_shape)
        self._buf_states.clear()
        self._buf_weights.clear()
        self._stride = 1

    # -- readout ---------------------------------------------------------------

    def value(self, name: str):
        if name not in self._obs:
            raise KeyError(f"unknown observable {name!r}")
        if self._n == 0:
            raise ValueError("empty measure: no states recorded")
        h = self._h.value
        if not h > 0:
            raise ValueError("total weight is zero")
        out = self._sums[name].value / h
        return float(out) if out.shape == () else out

    def values(self) -> dict[str, np.ndarray]:
        return {name: self.value(name) for name in self._obs}

    # -- buffer ------------------------------------------------------------------

    def _buffer_push(self, x: np.ndarray, eta: float) -> None:
        if self._cap <= 0:
            return
        k = self._n - 1  # zero-based step offset of this pre-step state
        if k % self._stride:
            return
        if len(self._buf_states) == self._cap:
            self._buf_states = self._buf_states[::2]
            self._buf_weights = self._buf_weights[::2]
            self._stride *= 2
            if k % self._stride:
                return
        self._buf_states.append(np.array(x, dtype=np.float64))
        self._buf_weights.append(eta)

    def buffer(self) -> tuple[np.ndarray, np.ndarray]:
        """Decimated (states, weights): shapes (m, *batch, d) and (m,)."""
        if not self._buf_states:
            raise ValueError("sample buffer is empty or disabled")
        return np.stack(self._buf_states), np.array(self._buf_weights)

    # -- export ------------------------------------------------------------------

    def snapshot_csv(self, path) -> None:
        if self.batch_shape != ():
            raise ValueError("snapshot export is per-trajectory; measure is batched")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "value", "H_n", "n"])
            for name in self._obs:
                w.writerow([name, repr(float(self.value(name))), repr(self.h), self._n])

    def buffer_csv(self, path) -> None:
        states, weights = self.buffer()
        flat = states.reshape(states.shape[0], -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"state{i}" for i in range(flat.shape[1])] + ["weight"])
            for row, wt in zip(flat, weights):
                w.writerow([repr(float(v)) for v in row] + [repr(float(wt))])


# ---------------------------------------------------------------------------
# Wasserstein-1 distance to an analytic law


def wasserstein1_atoms(xs: np.ndarray, weights: np.ndarray, law: AnalyticLaw1D) -> float:
    """Exact W1 between a weighted atomic measure and ``law``.

    Integrates |empirical quantile - law quantile| over probability space;
    each cell of the empirical quantile step function is handled in closed
    form through the law's partial expectation, which equals the integral of
    |F_n - F| over states.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if xs.size == 0:
        raise ValueError("need at least one atom")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("atom weights must be non-negative with positive total")
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    ws = weights[order] / weights.sum()
    cum = np.concatenate([[0.0], np.cumsum(ws)])
    cum[-1] = 1.0
    total = 0.0
    for x, a, b in zip(xs, cum[:-1], cum[1:]):
        if b <= a:
            continue
        s = min(max(law.cdf(x), a), b)
        # int_a^s (x - Q) dp + int_s^b (Q - x) dp
        total += x * (s - a) - law.partial_mean(a, s)
        total += law.partial_mean(s, b) - x * (b - s)
    return total


def wasserstein1_to(measure: WeightedEmpiricalMeasure, law: AnalyticLaw1D):
    """W1 between the measure's buffered atoms and an analytic 1-d law.

    Returns a scalar for an unbatched measure, else one distance per
    replication.
    """
    states, weights = measure.buffer()
    if states.shape[-1] != 1:
        raise ValueError("unsupported dimension: Wasserstein distance needs d = 1")
    if len(measure.batch_shape) == 0:
        return wasserstein1_atoms(states[..., 0], weights, law)
    flat = states[..., 0].reshape(states.shape[0], -1)
    out = np.array([wasserstein1_atoms(flat[:, r], weights, law) for r in range(flat.shape[1])])
    return out.reshape(measure.batch_shape)


# ---------------------------------------------------------------------------
# cross-replication summary statistics


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    mean_se: float
    skewness_se: float
    kurtosis_se: float


def merge_statistics(per_replication_values) -> SummaryStats:
    """Moment summary of per-replication scalars (unbiased variance)."""
    vals = np.asarray(list(per_replication_values), dtype=np.float64)
    n = vals.size
    if n < 2:
        raise ValueError("need at least two replications")
    mean = float(vals.mean())
    var = float(vals.var(ddof=1))
    centered = vals - mean
    m2 = float(np.mean(centered**2))
    if m2 > 0:
        skew = float(np.mean(centered**3) / m2**1.5)
        kurt = float(np.mean(centered**4) / m2**2 - 3.0)
    else:
        skew = 0.0
        kurt = 0.0
    return SummaryStats(
        n=n,
        mean=mean,
        variance=var,
        skewness=skew,
        excess_kurtosis=kurt,
        mean_se=math.sqrt(var / n) if var > 0 else 0.0,
        skewness_se=math.sqrt(6.0 / n),
        kurtosis_se=math.sqrt(24.0 / n),
    )
