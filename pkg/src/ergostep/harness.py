"""Replication experiments for the central-limit regimes of weighted
empirical measures: regime classification, normalized statistics at
checkpoints, rate regression, and report emission.

Replications run as vectorized blocks with independent per-replication
streams; block partitioning (``threads``) never changes per-replication
results, and aggregation is a deterministic reduction in replication-index
order.  Checkpoint statistics reuse a single trajectory per replication
(nested checkpoints), so values at different checkpoints of one replication
are correlated; rate fits inherit that caveat.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import catalog
from .empirical import SummaryStats, WeightedEmpiricalMeasure, merge_statistics, wasserstein1_atoms
from .innovations import InnovationDist
from .model import DiffusionModel, Enumerate, Observable, generator_observable, m1_euler, m1_talay, m2_talay, vf_operator
from .schedules import StepSchedule, WeightSchedule, order_weights, variance_clock
from .schemes import simulate_batch


class ConfigError(ValueError):
    """Bad or unknown experiment configuration."""


class ExperimentError(RuntimeError):
    """An experiment failed its own validity conditions."""


class InternalInconsistencyError(RuntimeError):
    """Numeric trend conclusively contradicts the analytic regime rule."""


KS_CRITICAL_1PCT = 1.628

KNOWN_KEYS = {
    "model.id", "model.theta", "model.sigma", "model.dim",
    "scheme", "innovation", "f",
    "step.kind", "step.gamma1", "step.xi",
    "weight.kind", "weight.c", "weight.r",
    "n_steps", "replications", "seed", "checkpoints",
    "x0", "buffer_capacity", "threads", "burn_in",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; quotes optional."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value.strip("\"'")
    return out


def parse_config_file(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


@dataclass(frozen=True)
class ExperimentConfig:
    model_id: str = "ou1d"
    model_params: dict = field(default_factory=dict)
    scheme: str = "euler"
    innovation_kind: str = "three_point"
    observable_name: str = "x^2"
    step_kind: str = "power_law"
    gamma1: float = 1.0
    xi: float = 1.0 / 3.0
    weight_kind: str = "proportional"
    weight_c: float = 1.0
    weight_r: float = 1.0
    n_steps: int = 100_000
    replications: int = 2
    seed: int = 0
    checkpoints: tuple[int, ...] = ()
    x0: float = 0.0
    buffer_capacity: int = 0
    threads: int = 1
    burn_in: int = 0

    @classmethod
    def from_mapping(cls, cfg: dict[str, str], overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        merged = dict(cfg)
        if overrides:
            merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(merged) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
        try:
            params = {}
            for name in ("theta", "sigma", "dim"):
                key = f"model.{name}"
                if key in merged:
                    params[name] = float(merged[key])
            cps: tuple[int, ...] = ()
            if merged.get("checkpoints"):
                cps = tuple(int(tok) for tok in str(merged["checkpoints"]).split(",") if tok.strip())
            return cls(
                model_id=merged.get("model.id", "ou1d"),
                model_params=params,
                scheme=merged.get("scheme", "euler"),
                innovation_kind=merged.get("innovation", "three_point"),
                observable_name=merged.get("f", "x^2"),
                step_kind=merged.get("step.kind", "power_law"),
                gamma1=float(merged.get("step.gamma1", 1.0)),
                xi=float(merged.get("step.xi", 1.0 / 3.0)),
                weight_kind=merged.get("weight.kind", "proportional"),
                weight_c=float(merged.get("weight.c", 1.0)),
                weight_r=float(merged.get("weight.r", 1.0)),
                n_steps=int(float(merged.get("n_steps", 100_000))),
                replications=int(merged.get("replications", 2)),
                seed=int(merged.get("seed", 0)),
                checkpoints=cps,
                x0=float(merged.get("x0", 0.0)),
                buffer_capacity=int(merged.get("buffer_capacity", 0)),
                threads=int(merged.get("threads", 1)),
                burn_in=int(merged.get("burn_in", 0)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad config value: {err}") from err

    # -- builders -------------------------------------------------------------

    def model(self) -> DiffusionModel:
        mapping = {"model.id": self.model_id}
        mapping.update({f"model.{k}": v for k, v in self.model_params.items()})
        try:
            return catalog.model_from_config(mapping)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def invariant_law(self):
        if self.model_id == "ou1d":
            return catalog.ou_invariant_law(
                theta=self.model_params.get("theta", 1.0),
                sigma=self.model_params.get("sigma", math.sqrt(2.0)),
            )
        return None

    def steps(self) -> StepSchedule:
        return StepSchedule(kind=self.step_kind, gamma1=self.gamma1, xi=self.xi)

    def weights(self, steps: StepSchedule | None = None) -> WeightSchedule:
        return WeightSchedule(kind=self.weight_kind, reference=steps or self.steps(),
                              c=self.weight_c, r=self.weight_r)

    def innovation(self, model: DiffusionModel | None = None) -> InnovationDist:
        dim = (model or self.model()).noise_dim
        return InnovationDist(kind=self.innovation_kind, dimension=dim)

    def observable(self, model: DiffusionModel | None = None) -> Observable:
        dim = (model or self.model()).dim
        try:
            return catalog.observable_from_name(self.observable_name, dim=dim)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def scheme_order(self) -> int:
        if self.weight_kind == "proportional":
            return 1
        if self.weight_kind == "trapezoidal":
            return 2
        raise ConfigError("CLT experiments need proportional or trapezoidal weights")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# regime classification


@dataclass(frozen=True)
class RegimeDecision:
    regime: str            # A_centered | B_mixed | C_bias
    analytic: str
    numeric_trend: str     # diverges | decays | bounded
    ratio_span: float
    xi: float
    q: int
    threshold: float


def classify_regime(step: StepSchedule, weight_kind: str, q: int,
                    n_max: int = 10**7) -> RegimeDecision:
    """Regime of the normalized statistic: the analytic rule compares xi
    against 1/(2q+1); the numeric trend of sqrt(Gamma_n) / H_{gamma^{q+1},n}
    over a log grid corroborates it.  A conclusive numeric trend that
    contradicts the analytic rule raises (internal inconsistency); an
    inconclusive trend near the boundary defers to the analytic rule.
    """
    if step.kind != "power_law":
        raise ConfigError("regime classification needs power-law steps")
    if q not in (1, 2):
        raise ConfigError("scheme order q must be 1 or 2")
    threshold = 1.0 / (2 * q + 1)
    if abs(step.xi - threshold) <= 1e-9:
        analytic = "B_mixed"
    elif step.xi > threshold:
        analytic = "A_centered"
    else:
        analytic = "C_bias"

    aux = order_weights(step, q)
    grid = np.unique(np.logspace(3, math.log10(n_max), 9).astype(int))
    ratios = np.array([math.sqrt(step.big_gamma(int(n))) / aux.big_h(int(n)) for n in grid])
    span = float(ratios[-1] / ratios[0])
    if span > 10.0:
        trend = "diverges"
    elif span < 0.1:
        trend = "decays"
    else:
        trend = "bounded"

    if (trend == "diverges" and analytic == "C_bias") or (trend == "decays" and analytic == "A_centered"):
        raise InternalInconsistencyError(
            f"numeric trend {trend} contradicts analytic regime {analytic} (xi={step.xi}, q={q})"
        )
    if analytic == "B_mixed" and trend != "bounded":
        raise InternalInconsistencyError(
            f"boundary regime expected a bounded ratio, numeric trend is {trend}"
        )
    return RegimeDecision(regime=analytic, analytic=analytic, numeric_trend=trend,
                          ratio_span=span, xi=step.xi, q=q, threshold=threshold)


def _validated_checkpoints(config: ExperimentConfig) -> list[int]:
    checkpoints = list(config.checkpoints) or [config.n_steps]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ConfigError("checkpoints must be strictly increasing")
    if checkpoints[-1] != config.n_steps or any(c > config.n_steps for c in checkpoints):
        raise ConfigError("checkpoints must end at n_steps")
    if checkpoints[0] <= config.burn_in:
        raise ConfigError("checkpoints must lie beyond the burn-in")
    return checkpoints


# ---------------------------------------------------------------------------
# replication driver with checkpoints


class CheckpointRecorder:
    """Feeds pre-step state blocks into measures, snapshotting values at
    checkpoint step counts (splitting blocks exactly at checkpoints).
    Steps k <= burn_in are dropped before they reach the measures; the
    surviving steps keep their original weights eta_k."""

    def __init__(self, measures: dict[str, WeightedEmpiricalMeasure],
                 checkpoints, snapshot_buffer: str | None = None,
                 burn_in: int = 0):
        self.measures = measures
        self.checkpoints = sorted(int(c) for c in checkpoints)
        self.snapshots: dict[int, dict[str, dict[str, np.ndarray]]] = {}
        self.buffer_snaps: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.snapshot_buffer = snapshot_buffer
        self.burn_in = int(burn_in)

    def observe_block(self, k0: int, states: np.ndarray) -> None:
        m = states.shape[0]
        start = 0
        for c in self.checkpoints:
            if k0 <= c < k0 + m:
                self._feed(k0 + start, states[start: c - k0 + 1])
                start = c - k0 + 1
                self._snap(c)
        if start < m:
            self._feed(k0 + start, states[start:m])

    def _feed(self, k0: int, seg: np.ndarray) -> None:
        if k0 <= self.burn_in:
            drop = min(self.burn_in - k0 + 1, seg.shape[0])
            k0 += drop
            seg = seg[drop:]
        if seg.shape[0] == 0:
            return
        for meas in self.measures.values():
            meas.observe_block(k0, seg)

    def _snap(self, c: int) -> None:
        self.snapshots[c] = {
            key: {name: np.array(meas.value(name), ndmin=1) for name in meas.names}
            for key, meas in self.measures.items()
        }
        if self.snapshot_buffer is not None:
            states, wts = self.measures[self.snapshot_buffer].buffer()
            self.buffer_snaps[c] = (states.copy(), wts.copy())


def _observable_fn(obs: Observable):
    return obs.fn


def _run_blocks(config: ExperimentConfig, make_measures, checkpoints,
                snapshot_buffer: str | None = None):
    """Run all replications in thread-partitioned vectorized blocks.

    ``make_measures(block_size)`` builds the per-block measure dict.
    Returns (recorders in replication order, excluded pairs, final states).
    """
    model = config.model()
    steps = config.steps()
    innovation = config.innovation(model)
    r_total = config.replications
    threads = max(1, config.threads)
    block = math.ceil(r_total / threads)
    offsets = list(range(0, r_total, block))

    def run_one(offset: int):
        count = min(block, r_total - offset)
        recorder = CheckpointRecorder(make_measures(count), checkpoints,
                                      snapshot_buffer=snapshot_buffer,
                                      burn_in=config.burn_in)
        res = simulate_batch(config.scheme, model, steps, innovation,
                             config.n_steps, np.full(model.dim, config.x0),
                             master_seed=config.seed, replications=count,
                             sinks=[recorder], replication_offset=offset)
        return recorder, res

    if threads == 1 or len(offsets) == 1:
        results = [run_one(off) for off in offsets]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, offsets))

    excluded = []
    finals = []
    for _, res in results:
        excluded.extend(res.excluded)
        finals.append(res.final_states)
    return [rec for rec, _ in results], excluded, np.concatenate(finals, axis=0)


def _merge_snapshots(recorders, checkpoints):
    merged: dict[int, dict[str, dict[str, np.ndarray]]] = {}
    for c in checkpoints:
        merged[int(c)] = {}
        for key in recorders[0].snapshots[c]:
            names = recorders[0].snapshots[c][key]
            merged[int(c)][key] = {
                name: np.concatenate([rec.snapshots[c][key][name] for rec in recorders])
                for name in names
            }
    return merged


# ---------------------------------------------------------------------------
# the CLT experiment


@dataclass
class CltReport:
    regime: str
    scheme_order: int
    checkpoints: list[int]
    statistics: dict[int, np.ndarray]          # per checkpoint, per replication
    normalizers: dict[int, float]
    predicted_variance: float
    variance_source: str                       # analytic | ergodic
    ergodic_variance: float
    predicted_shift: dict[int, float]
    l_hat: dict[int, float]
    ergodic_correction_mean: float | None
    summaries: dict[int, SummaryStats]
    ks: dict[int, tuple[float, bool]]
    excluded: list
    config: dict
    replication_ids: list = field(default_factory=list)
    regime_decision: RegimeDecision | None = None

    def rows(self):
        for c in self.checkpoints:
            ids = self.replication_ids or range(len(self.statistics[c]))
            for r, s in zip(ids, self.statistics[c]):
                yield {"checkpoint_n": c, "replication": int(r), "statistic": float(s)}

    csv_fields = ("checkpoint_n", "replication", "statistic")


def run_clt_experiment(config: ExperimentConfig) -> CltReport:
    """R independent trajectories; at each checkpoint n the normalized
    statistic H_n / (C sqrt(Gamma_n)) * nu_n(Af) per replication, plus the
    variance/shift predictions of the matching limit law."""
    if config.replications < 2:
        raise ConfigError("CLT experiments need at least two replications")
    model = config.model()
    steps = config.steps()
    q = config.scheme_order()
    if config.scheme == "euler" and q != 1:
        raise ConfigError("weight family must match scheme order (euler is order one)")
    decision = classify_regime(steps, config.weight_kind, q, n_max=max(config.n_steps, 10**4))
    innovation = config.innovation(model)
    required = 2 * q + 1
    if innovation.matching_order is not None and innovation.matching_order < required:
        warnings.warn(
            f"innovation matches normal moments through order {innovation.matching_order}, "
            f"below the order-{q} scheme requirement {required}",
            stacklevel=2,
        )
    f = config.observable(model)
    af = generator_observable(model, f)
    checkpoints = _validated_checkpoints(config)

    def vf_fn(xs):
        return vf_operator(model, f, xs)

    m_operator = None
    if decision.regime == "B_mixed" or decision.regime == "C_bias":
        if config.scheme == "euler":
            m_operator = lambda xs: m1_euler(model, f, xs, innovation, Enumerate()).value
        elif q == 1:
            m_operator = lambda xs: m1_talay(model, f, xs, innovation, Enumerate()).value
        else:
            m_operator = lambda xs: m2_talay(model, f, xs, innovation, Enumerate(), af=af).value

    def make_measures(block_size):
        main = WeightedEmpiricalMeasure(weights=config.weights(steps), batch_shape=(block_size,),
                                        buffer_capacity=config.buffer_capacity)
        main.register("Af", _observable_fn(af))
        main.register("f", _observable_fn(f))
        if m_operator is not None:
            main.register("Mf", m_operator)
        clock = WeightedEmpiricalMeasure(weights=variance_clock(steps), batch_shape=(block_size,))
        clock.register("Vf", vf_fn)
        return {"main": main, "clock": clock}

    recorders, excluded, _finals = _run_blocks(config, make_measures, checkpoints)
    snaps = _merge_snapshots(recorders, checkpoints)
    if len(excluded) > 0.05 * config.replications:
        raise ExperimentError(
            f"{len(excluded)} of {config.replications} replications diverged: {excluded}"
        )
    keep = np.array([r for r in range(config.replications)
                     if r not in {rep for rep, _ in excluded}], dtype=int)

    aux = order_weights(steps, q)
    weights = config.weights(steps)
    law = config.invariant_law()

    statistics: dict[int, np.ndarray] = {}
    normalizers: dict[int, float] = {}
    shifts: dict[int, float] = {}
    l_hats: dict[int, float] = {}
    summaries: dict[int, SummaryStats] = {}
    ks: dict[int, tuple[float, bool]] = {}

    # invariant average of the correction operator (analytic when the law is known)
    nu_m = None
    if m_operator is not None and law is not None:
        nu_m = catalog.gauss_hermite_expectation(lambda xv: m_operator(xv[None, :])[0],
                                                 mean=0.0, std=math.sqrt(law.moments[2]))
    ergodic_m = None

    for c in checkpoints:
        h_n = weights.big_h(c)
        g_n = steps.big_gamma(c)
        if decision.regime == "C_bias":
            norm = h_n / (config.weight_c * aux.big_h(c))
        else:
            norm = h_n / (config.weight_c * math.sqrt(g_n))
        normalizers[c] = norm
        l_hats[c] = math.sqrt(g_n) / aux.big_h(c)
        vals = snaps[c]["main"]["Af"][keep]
        statistics[c] = norm * vals
        if decision.regime == "B_mixed":
            nm = nu_m if nu_m is not None else float(np.mean(snaps[c]["main"]["Mf"][keep]))
            shifts[c] = nm / l_hats[c]
        elif decision.regime == "C_bias":
            nm = nu_m if nu_m is not None else float(np.mean(snaps[c]["main"]["Mf"][keep]))
            shifts[c] = nm
        else:
            shifts[c] = 0.0

    final = checkpoints[-1]
    ergodic_variance = float(np.mean(snaps[final]["clock"]["Vf"][keep]))
    if law is not None:
        predicted_variance = catalog.gauss_hermite_expectation(
            lambda xv: float(vf_operator(model, f, xv)), mean=0.0, std=math.sqrt(law.moments[2]))
        variance_source = "analytic"
    else:
        predicted_variance = ergodic_variance
        variance_source = "ergodic"
    if m_operator is not None:
        ergodic_m = float(np.mean(snaps[final]["main"]["Mf"][keep]))

    for c in checkpoints:
        summaries[c] = merge_statistics(statistics[c])
        if predicted_variance > 0 and len(statistics[c]) >= 50:
            ks[c] = ks_normality(statistics[c], predicted_variance, shifts[c])

    return CltReport(
        regime=decision.regime,
        scheme_order=q,
        checkpoints=[int(c) for c in checkpoints],
        statistics=statistics,
        normalizers=normalizers,
        predicted_variance=predicted_variance,
        variance_source=variance_source,
        ergodic_variance=ergodic_variance,
        predicted_shift=shifts,
        l_hat=l_hats,
        ergodic_correction_mean=ergodic_m,
        summaries=summaries,
        ks=ks,
        excluded=excluded,
        config=config.to_dict(),
        replication_ids=[int(r) for r in keep],
        regime_decision=decision,
    )


# ---------------------------------------------------------------------------
# ergodic-average / Wasserstein experiment


@dataclass
class ErgodicReport:
    checkpoints: list[int]
    values: dict[int, np.ndarray]        # nu_n(f) per kept replication
    mean_values: dict[int, float]
    w1: dict[int, np.ndarray] | None     # per kept replication, when a law is known
    mean_w1: dict[int, float] | None
    excluded: list
    config: dict
    replication_ids: list = field(default_factory=list)

    def rows(self):
        for c in self.checkpoints:
            ids = self.replication_ids or range(len(self.values[c]))
            for i, (r, v) in enumerate(zip(ids, self.values[c])):
                row = {"checkpoint_n": c, "replication": int(r), "value": float(v)}
                if self.w1 is not None:
                    row["w1"] = float(self.w1[c][i])
                yield row

    @property
    def csv_fields(self):
        return ("checkpoint_n", "replication", "value") + (("w1",) if self.w1 is not None else ())


def run_ergodic_experiment(config: ExperimentConfig, want_w1: bool | None = None) -> ErgodicReport:
    """Per-replication ergodic averages nu_n(f) at checkpoints, with W1
    distances to the catalog invariant law when available."""
    model = config.model()
    f = config.observable(model)
    law = config.invariant_law()
    if want_w1 is None:
        want_w1 = law is not None and config.buffer_capacity > 0
    if want_w1 and law is None:
        raise ConfigError("Wasserstein trace needs a model with a catalog invariant law")
    if want_w1 and model.dim != 1:
        raise ConfigError("unsupported dimension: Wasserstein trace needs d = 1")
    if want_w1 and config.buffer_capacity <= 0:
        raise ConfigError("Wasserstein trace needs buffer_capacity > 0")
    checkpoints = _validated_checkpoints(config)
    steps = config.steps()

    def make_measures(block_size):
        main = WeightedEmpiricalMeasure(weights=config.weights(steps), batch_shape=(block_size,),
                                        buffer_capacity=config.buffer_capacity if want_w1 else 0)
        main.register("f", _observable_fn(f))
        return {"main": main}

    recorders, excluded, _ = _run_blocks(config, make_measures, checkpoints,
                                         snapshot_buffer="main" if want_w1 else None)
    snaps = _merge_snapshots(recorders, checkpoints)
    if len(excluded) > 0.05 * config.replications:
        raise ExperimentError(
            f"{len(excluded)} of {config.replications} replications diverged: {excluded}"
        )
    keep = np.array([r for r in range(config.replications)
                     if r not in {rep for rep, _ in excluded}], dtype=int)
    values = {int(c): snaps[c]["main"]["f"][keep] for c in checkpoints}
    w1 = None
    mean_w1 = None
    if want_w1:
        w1 = {}
        for c in checkpoints:
            per_rep = []
            for rec in recorders:
                states, wts = rec.buffer_snaps[c]
                for r in range(states.shape[1]):
                    per_rep.append(wasserstein1_atoms(states[:, r, 0], wts, law))
            w1[int(c)] = np.array(per_rep)[keep]
        mean_w1 = {c: float(np.mean(v)) for c, v in w1.items()}
    return ErgodicReport(
        checkpoints=[int(c) for c in checkpoints],
        values=values,
        mean_values={c: float(np.mean(v)) for c, v in values.items()},
        w1=w1,
        mean_w1=mean_w1,
        excluded=excluded,
        config=config.to_dict(),
        replication_ids=[int(r) for r in keep],
    )


# ---------------------------------------------------------------------------
# the rate experiment


@dataclass
class RateReport:
    points: list[tuple[int, float]]
    slope: float
    slope_ci: tuple[float, float]
    theoretical_exponent: float
    excluded: list
    config: dict

    def rows(self):
        for n, err in self.points:
            yield {"n": n, "rms_error": float(err)}

    csv_fields = ("n", "rms_error")


def fit_loglog(points) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of log(error) against log(n) with a 95% CI."""
    pts = [(float(n), float(e)) for n, e in points]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit a slope")
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    xbar = xs.mean()
    sxx = float(np.sum((xs - xbar) ** 2))
    slope = float(np.sum((xs - xbar) * (ys - ys.mean())) / sxx)
    intercept = float(ys.mean() - slope * xbar)
    resid = ys - (intercept + slope * xs)
    if len(pts) > 2:
        se = math.sqrt(float(np.sum(resid**2)) / (len(pts) - 2) / sxx)
    else:
        se = 0.0
    return slope, (slope - 1.96 * se, slope + 1.96 * se)


def run_rate_experiment(config: ExperimentConfig) -> RateReport:
    """RMS over replications of nu_n(Af) on an n-grid, with the fitted
    log-log slope against the theoretical exponent -(q xi ^ (1/2 - xi/2))."""
    if config.replications < 50:
        raise ConfigError("rate experiments need at least 50 replications")
    if len(config.checkpoints) < 3:
        raise ConfigError("rate experiments need at least 3 grid points")
    q = config.scheme_order()
    if config.scheme == "euler" and q != 1:
        raise ConfigError("weight family must match scheme order (euler is order one)")
    model = config.model()
    f = config.observable(model)
    af = generator_observable(model, f)
    steps = config.steps()
    checkpoints = _validated_checkpoints(config)

    def make_measures(block_size):
        main = WeightedEmpiricalMeasure(weights=config.weights(steps), batch_shape=(block_size,))
        main.register("Af", _observable_fn(af))
        return {"main": main}

    recorders, excluded, _ = _run_blocks(config, make_measures, checkpoints)
    snaps = _merge_snapshots(recorders, checkpoints)
    if len(excluded) > 0.05 * config.replications:
        raise ExperimentError(
            f"{len(excluded)} of {config.replications} replications diverged: {excluded}"
        )
    keep = np.array([r for r in range(config.replications)
                     if r not in {rep for rep, _ in excluded}], dtype=int)
    points = []
    for c in checkpoints:
        vals = snaps[c]["main"]["Af"][keep]
        points.append((int(c), float(np.sqrt(np.mean(vals**2)))))
    slope, ci = fit_loglog(points)
    theo = -min(q * config.xi, 0.5 - config.xi / 2.0)
    return RateReport(points=points, slope=slope, slope_ci=ci,
                      theoretical_exponent=theo, excluded=excluded,
                      config=config.to_dict())


# ---------------------------------------------------------------------------
# normality test


def ks_normality(samples, variance: float, mean: float = 0.0) -> tuple[float, bool]:
    """One-sample Kolmogorov-Smirnov distance against N(mean, variance);
    passes at the 1% level iff distance < 1.628 / sqrt(R)."""
    if variance <= 0:
        raise ValueError("variance hypothesis must be positive")
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = xs.size
    if n < 50:
        raise ValueError("need at least 50 samples")
    dist = NormalDist(mean, math.sqrt(variance))
    cdf = np.array([dist.cdf(v) for v in xs])
    hi = np.max(np.arange(1, n + 1) / n - cdf)
    lo = np.max(cdf - np.arange(0, n) / n)
    d = float(max(hi, lo))
    return d, d < KS_CRITICAL_1PCT / math.sqrt(n)


# ---------------------------------------------------------------------------
# emission


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _to_jsonable(dataclasses.asdict(obj))
    return obj


def emit(report, format: str = "csv", path=None) -> None:
    """Serialize a report deterministically; floats keep round-trip text."""
    if format not in ("csv", "json"):
        raise ValueError(f"unknown format {format!r}")
    try:
        if format == "json":
            payload = json.dumps(_to_jsonable(report), indent=2, allow_nan=True)
            with open(path, "w") as fh:
                fh.write(payload)
            return
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(report.csv_fields)
            for row in report.rows():
                writer.writerow([_csv_cell(row[k]) for k in report.csv_fields])
    except OSError as err:
        raise OSError(f"emit to {path} failed: {err}") from err


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v
