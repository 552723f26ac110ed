"""Step and weight sequences with cached partial sums.

A simulation advances n monotonically, so partial sums are cached
incrementally: ``gamma``/``big_gamma``/``eta``/``big_h`` are O(1) amortized
during a forward run, and random access past the cache extends it in blocks.
Caches are replaced atomically, so concurrent readers always see a complete
array; copies of a schedule produce identical values for identical
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accum import compensated_extend

_BLOCK = 1 << 16

STEP_KINDS = ("power_law", "constant")
WEIGHT_KINDS = ("proportional", "trapezoidal", "power")


@dataclass(frozen=True)
class StepSchedule:
    """Decreasing (or constant) step sequence gamma_n with partial sums Gamma_n.

    ``power_law``: gamma_n = gamma1 * n**(-xi), xi in (0, 1).
    ``constant``:  gamma_n = gamma1.

    ``gamma1`` doubles as the step cap: both families satisfy
    sup_n gamma_n = gamma1.
    """

    kind: str
    gamma1: float
    xi: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        if not self.gamma1 > 0:
            raise ValueError("gamma1 must be positive")
        if self.kind == "power_law" and not 0.0 < self.xi < 1.0:
            raise ValueError("power_law exponent xi must lie in (0, 1)")
        # big_gamma[k] = Gamma_k for k = 0..m; grown in blocks
        self._cache["big_gamma"] = np.zeros(1)
        self._cache["carry"] = (0.0, 0.0)

    def gamma(self, n: int) -> float:
        """gamma_n for n >= 1 (gamma_0 exists only as the trapezoidal convention)."""
        if n < 1:
            raise ValueError("step index n must be >= 1")
        if self.kind == "constant":
            return self.gamma1
        return self.gamma1 * float(n) ** (-self.xi)

    def gamma_block(self, start: int, stop: int) -> np.ndarray:
        """Vector of gamma_n for n in [start, stop)."""
        ns = np.arange(start, stop, dtype=np.float64)
        if self.kind == "constant":
            return np.full(stop - start, self.gamma1)
        return self.gamma1 * ns ** (-self.xi)

    def big_gamma(self, n: int) -> float:
        """Gamma_n = sum_{k<=n} gamma_k, with Gamma_0 = 0."""
        if n < 0:
            raise ValueError("n must be >= 0")
        self._ensure(n)
        return float(self._cache["big_gamma"][n])

    def _ensure(self, n: int) -> None:
        cached = self._cache["big_gamma"]
        m = len(cached) - 1
        if n <= m:
            return
        total, carry = self._cache["carry"]
        parts = [cached]
        while m < n:
            # block boundaries are fixed multiples of _BLOCK, so the cached
            # values are independent of the request pattern
            stop = (m // _BLOCK + 1) * _BLOCK
            block = self.gamma_block(m + 1, stop + 1)
            prefix, total, carry = compensated_extend(block, total, carry)
            parts.append(prefix)
            m = stop
        self._cache["big_gamma"] = np.concatenate(parts)
        self._cache["carry"] = (total, carry)

    def sup_gamma(self) -> float:
        return self.gamma1

    def to_config(self) -> dict[str, str]:
        out = {"step.kind": self.kind, "step.gamma1": repr(self.gamma1)}
        if self.kind == "power_law":
            out["step.xi"] = repr(self.xi)
        return out

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> "StepSchedule":
        return cls(
            kind=cfg.get("step.kind", "power_law"),
            gamma1=float(cfg.get("step.gamma1", 1.0)),
            xi=float(cfg.get("step.xi", 0.0)),
        )


@dataclass(frozen=True)
class WeightSchedule:
    """Weight sequence eta_n over a reference step schedule, with sums H_n.

    ``proportional``: eta_n = c * gamma_n, so H_n = c * Gamma_n exactly.
    ``trapezoidal``:  eta_n = c * (gamma_{n-1} + gamma_n) / 2 with gamma_0 = 0;
                      telescoping gives H_n = c * (Gamma_n + Gamma_{n-1}) / 2,
                      which is how H_n is evaluated (the identity is exact).
    ``power``:        eta_n = gamma_n ** r (no constant; houses the auxiliary
                      weights gamma^{q+1} and the variance clock gamma).
    """

    kind: str
    reference: StepSchedule
    c: float = 1.0
    r: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind != "power" and not self.c > 0:
            raise ValueError("weight constant c must be positive")
        self._cache["big_h"] = np.zeros(1)
        self._cache["carry"] = (0.0, 0.0)

    def eta(self, n: int) -> float:
        if n < 1:
            raise ValueError("weight index n must be >= 1")
        g = self.reference
        if self.kind == "proportional":
            return self.c * g.gamma(n)
        if self.kind == "trapezoidal":
            prev = 0.0 if n == 1 else g.gamma(n - 1)
            return self.c * (prev + g.gamma(n)) / 2.0
        return g.gamma(n) ** self.r

    def eta_block(self, start: int, stop: int) -> np.ndarray:
        g = self.reference
        if self.kind == "proportional":
            return self.c * g.gamma_block(start, stop)
        if self.kind == "trapezoidal":
            cur = g.gamma_block(start, stop)
            if start == 1:
                prev = np.concatenate([[0.0], g.gamma_block(1, stop - 1)])
            else:
                prev = g.gamma_block(start - 1, stop - 1)
            return self.c * (prev + cur) / 2.0
        return g.gamma_block(start, stop) ** self.r

    def big_h(self, n: int) -> float:
        """H_n = sum_{k<=n} eta_k (n >= 1; H_0 = 0 for convenience)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        g = self.reference
        if self.kind == "proportional":
            return self.c * g.big_gamma(n)
        if self.kind == "trapezoidal":
            if n == 0:
                return 0.0
            return self.c * (g.big_gamma(n) + g.big_gamma(n - 1)) / 2.0
        self._ensure(n)
        return float(self._cache["big_h"][n])

    def _ensure(self, n: int) -> None:
        cached = self._cache["big_h"]
        m = len(cached) - 1
        if n <= m:
            return
        total, carry = self._cache["carry"]
        parts = [cached]
        while m < n:
            stop = (m // _BLOCK + 1) * _BLOCK
            block = self.eta_block(m + 1, stop + 1)
            prefix, total, carry = compensated_extend(block, total, carry)
            parts.append(prefix)
            m = stop
        self._cache["big_h"] = np.concatenate(parts)
        self._cache["carry"] = (total, carry)

    def to_config(self) -> dict[str, str]:
        out = {"weight.kind": self.kind, "weight.c": repr(self.c)}
        if self.kind == "power":
            out["weight.r"] = repr(self.r)
        return out

    @classmethod
    def from_config(cls, cfg: dict[str, str], reference: StepSchedule) -> "WeightSchedule":
        return cls(
            kind=cfg.get("weight.kind", "proportional"),
            reference=reference,
            c=float(cfg.get("weight.c", 1.0)),
            r=float(cfg.get("weight.r", 1.0)),
        )


def variance_clock(step: StepSchedule) -> WeightSchedule:
    """The weight sequence epsilon(gamma_n) = gamma_n driving the CLT variance."""
    return WeightSchedule(kind="power", reference=step, r=1.0)


def order_weights(step: StepSchedule, q: int) -> WeightSchedule:
    """Auxiliary weights gamma_n^{q+1} that clock the order-q bias term."""
    return WeightSchedule(kind="power", reference=step, r=float(q + 1))
