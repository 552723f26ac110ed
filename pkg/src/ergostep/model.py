"""Diffusion models, smooth observables, and the operators built from them.

A ``DiffusionModel`` packages the drift b, diffusion matrix sigma, and their
derivative oracles for dX = b dt + sigma dW.  An ``Observable`` is a scalar
test function together with a directional-derivative callback

    dirderiv(x, k, (v_1, ..., v_k)) = (D^k f(x); v_1 x ... x v_k)

so tensor contractions never materialize d^k arrays and analytic test
functions stay exact.

On top of these the module evaluates:

  * the infinitesimal generator  Af = <b, grad f> + 1/2 (sigma sigma^T) : D^2 f
  * the asymptotic-variance density  Vf = |sigma^T grad f|^2
  * the columnwise drift-diffusion coupling field sigma_tilde and the
    generator applied to the drift, Ab (both consumed by the
    weak-order-two step)
  * the step-defect correction operators m1_euler, m1_talay, m2_talay whose
    invariant averages govern the bias terms of the central limit regimes.

Expectations over the innovation (and sign draws) are evaluated either by
exact enumeration of finite supports or by Monte Carlo with a reported
standard error.

All callbacks are vectorized over leading batch axes: states have shape
(..., d), drifts (..., d), diffusions (..., d, N).  Models and observables
are immutable; callbacks must be re-entrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .innovations import InnovationDist, assemble_w, joint_outcomes, sample_kappa

_EPS = np.finfo(np.float64).eps
FD_STEP_GRAD = _EPS ** (1.0 / 3.0)
FD_STEP_HESS = _EPS ** 0.25


def _pad_axes(arr: np.ndarray, k: int) -> np.ndarray:
    arr = np.asarray(arr)
    return arr.reshape(arr.shape + (1,) * k)


class InsufficientOrderError(ValueError):
    """Observable cannot supply derivatives of the required order."""


class InsufficientDerivativesError(ValueError):
    """Model lacks analytic derivative data required by the operation."""


class Quadrature:
    pass


@dataclass(frozen=True)
class Enumerate(Quadrature):
    """Exact expectation over the finite innovation (and sign) support."""


@dataclass(frozen=True)
class MonteCarlo(Quadrature):
    """Monte Carlo expectation with ``samples`` draws from a seeded stream."""

    samples: int
    seed: int = 0

    def __post_init__(self):
        if self.samples <= 0:
            raise ValueError("Monte Carlo quadrature needs at least one sample")


class OperatorValue(NamedTuple):
    value: float | np.ndarray
    stderr: float


@dataclass(frozen=True)
class Observable:
    """Scalar test function with directional derivatives up to ``max_order``."""

    fn: Callable[[np.ndarray], np.ndarray]
    dirderiv: Callable[[np.ndarray, int, tuple], np.ndarray]
    max_order: int = 6
    name: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)

    def d(self, x: np.ndarray, order: int, dirs: Sequence[np.ndarray]) -> np.ndarray:
        if order > self.max_order:
            raise InsufficientOrderError(
                f"insufficient observable order: need {order}, have {self.max_order}"
            )
        if len(dirs) != order:
            raise ValueError("number of directions must equal derivative order")
        return self.dirderiv(x, order, tuple(dirs))


def linear_combination(coeffs: Sequence[float], observables: Sequence[Observable]) -> Observable:
    """a_1 f_1 + ... + a_m f_m as an Observable (derivatives combine linearly)."""
    cs = [float(c) for c in coeffs]
    order = min(o.max_order for o in observables)

    def fn(x):
        return sum(c * o.fn(x) for c, o in zip(cs, observables))

    def dd(x, k, dirs):
        return sum(c * o.d(x, k, dirs) for c, o in zip(cs, observables))

    name = " + ".join(f"{c}*{o.name or 'f'}" for c, o in zip(cs, observables))
    return Observable(fn=fn, dirderiv=dd, max_order=order, name=name)


def directional_fd(f: Callable, x: np.ndarray, dirs: Sequence[np.ndarray], h: float) -> np.ndarray:
    """Central-difference directional derivative of plain callable ``f``.

    Supports order one and two; used to cross-check analytic ``dirderiv``
    callbacks.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(dirs) == 1:
        v = dirs[0]
        return (f(x + h * v) - f(x - h * v)) / (2.0 * h)
    if len(dirs) == 2:
        v, w = dirs
        return (
            f(x + h * v + h * w) - f(x + h * v - h * w)
            - f(x - h * v + h * w) + f(x - h * v - h * w)
        ) / (4.0 * h * h)
    raise ValueError("finite-difference check supports orders 1 and 2 only")


# ---------------------------------------------------------------------------
# diffusion model


@dataclass(frozen=True)
class DiffusionModel:
    """Coefficients and derivative oracles of dX = b dt + sigma dW.

    Derivative conventions (leading batch axes elided):
      db[i, j]          = d b_i / d x_j
      d2b[i, j, k]      = d^2 b_i / (d x_j d x_k)
      dsigma[i, a, j]   = d sigma_{i,a} / d x_j
      d2sigma[i, a, j, k] = d^2 sigma_{i,a} / (d x_j d x_k)

    Missing first/second derivatives fall back to central finite differences
    when ``fd_fallback`` is set; third and higher orders must be analytic
    (``db_higher(x, m)`` / ``dsigma_higher(x, m)``) and are required only by
    operations that differentiate the generator itself.
    """

    dim: int
    noise_dim: int
    b: Callable
    sigma: Callable
    db: Callable | None = None
    d2b: Callable | None = None
    dsigma: Callable | None = None
    d2sigma: Callable | None = None
    db_higher: Callable | None = None
    dsigma_higher: Callable | None = None
    fd_fallback: bool = True
    name: str = ""

    # -- derivative access ---------------------------------------------------

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.db is not None:
            return self.db(x)
        return self._fd_jacobian(self.b, x, 1)

    def drift_hessian(self, x: np.ndarray) -> np.ndarray:
        if self.d2b is not None:
            return self.d2b(x)
        return self._fd_hessian(self.b, x, 1)

    def diffusion_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.dsigma is not None:
            return self.dsigma(x)
        return self._fd_jacobian(self.sigma, x, 2)

    def diffusion_hessian(self, x: np.ndarray) -> np.ndarray:
        if self.d2sigma is not None:
            return self.d2sigma(x)
        return self._fd_hessian(self.sigma, x, 2)

    def has_analytic(self, order: int) -> bool:
        """True when drift and diffusion derivatives through ``order`` are analytic."""
        if order >= 1 and (self.db is None or self.dsigma is None):
            return False
        if order >= 2 and (self.d2b is None or self.d2sigma is None):
            return False
        if order >= 3 and (self.db_higher is None or self.dsigma_higher is None):
            return False
        return True

    def drift_tensor(self, x: np.ndarray, order: int) -> np.ndarray:
        if order == 0:
            return self.b(x)
        if order == 1:
            return self.drift_jacobian(x)
        if order == 2:
            return self.drift_hessian(x)
        if self.db_higher is None:
            raise InsufficientDerivativesError(
                f"order-{order} drift derivatives require analytic data"
            )
        return self.db_higher(x, order)

    def diffusion_tensor(self, x: np.ndarray, order: int) -> np.ndarray:
        if order == 0:
            return self.sigma(x)
        if order == 1:
            return self.diffusion_jacobian(x)
        if order == 2:
            return self.diffusion_hessian(x)
        if self.dsigma_higher is None:
            raise InsufficientDerivativesError(
                f"order-{order} diffusion derivatives require analytic data"
            )
        return self.dsigma_higher(x, order)

    def diffusion_matrix(self, x: np.ndarray) -> np.ndarray:
        """a = sigma sigma^T, shape (..., d, d)."""
        s = self.sigma(x)
        return np.einsum("...in,...jn->...ij", s, s)

    # -- finite-difference fallback -------------------------------------------

    def _require_fd(self):
        if not self.fd_fallback:
            raise InsufficientDerivativesError(
                "analytic derivatives absent and finite-difference fallback disabled"
            )

    def _fd_jacobian(self, fn, x, value_rank):
        self._require_fd()
        x = np.asarray(x, dtype=np.float64)
        h = FD_STEP_GRAD * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
        hv = _pad_axes(np.squeeze(h, -1), value_rank)
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            cols.append((fn(x + h * e) - fn(x - h * e)) / (2.0 * hv))
        return np.stack(cols, axis=-1)

    def _fd_hessian(self, fn, x, value_rank):
        self._require_fd()
        x = np.asarray(x, dtype=np.float64)
        h = FD_STEP_HESS * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
        hv = _pad_axes(np.squeeze(h, -1), value_rank)
        f0 = np.asarray(fn(x), dtype=np.float64)
        out = np.empty(np.broadcast_shapes(f0.shape, hv.shape) + (self.dim, self.dim))
        for j in range(self.dim):
            ej = np.zeros(self.dim)
            ej[j] = 1.0
            out[..., j, j] = (fn(x + h * ej) - 2.0 * f0 + fn(x - h * ej)) / (hv * hv)
            for k in range(j + 1, self.dim):
                ek = np.zeros(self.dim)
                ek[k] = 1.0
                mixed = (
                    fn(x + h * (ej + ek)) - fn(x + h * (ej - ek))
                    - fn(x - h * (ej - ek)) + fn(x - h * (ej + ek))
                ) / (4.0 * hv * hv)
                out[..., j, k] = mixed
                out[..., k, j] = mixed
        return out


@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov data V >= v_star with psi_p(y) = y**p and phi(y) = y**a."""

    v: Callable
    grad_v: Callable
    hess_v: Callable
    v_star: float
    alpha: float
    beta: float
    p: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if not self.v_star > 0:
            raise ValueError("v_star must be positive")
        if not 0.0 < self.a <= 1.0:
            raise ValueError("phi exponent a must lie in (0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def psi(self, y):
        return np.asarray(y) ** self.p

    def phi(self, y):
        return np.asarray(y) ** self.a


# ---------------------------------------------------------------------------
# first-order operators


def generator_apply(model: DiffusionModel, f: Observable, x: np.ndarray):
    """Af(x) = <b, grad f> + 1/2 sum_ij (sigma sigma^T)_ij d2_ij f,
    contracted through the observable's dirderiv with canonical basis
    directions."""
    if f.max_order < 2:
        raise InsufficientOrderError("insufficient observable order: generator needs order 2")
    x = np.asarray(x, dtype=np.float64)
    out = f.d(x, 1, (model.b(x),))
    a = model.diffusion_matrix(x)
    basis = np.eye(model.dim)
    for i in range(model.dim):
        for j in range(model.dim):
            out = out + 0.5 * a[..., i, j] * f.d(x, 2, (basis[i], basis[j]))
    return out


def vf_operator(model: DiffusionModel, f: Observable, x: np.ndarray):
    """|sigma(x)^T grad f(x)|^2, the asymptotic-variance density."""
    if f.max_order < 1:
        raise InsufficientOrderError("insufficient observable order: need order 1")
    x = np.asarray(x, dtype=np.float64)
    basis = np.eye(model.dim)
    grad = np.stack([f.d(x, 1, (basis[i],)) for i in range(model.dim)], axis=-1)
    st_grad = np.einsum("...in,...i->...n", model.sigma(x), grad)
    return np.einsum("...n,...n->...", st_grad, st_grad)


def sigma_tilde(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    """Columnwise coupling field, shape (..., d, N):

        sigma_tilde_i = (Db) sigma_i + (D sigma_i) b
                        + sum_{l,j} (sigma sigma^T)_{l,j} d2_{l,j} sigma_i
    """
    x = np.asarray(x, dtype=np.float64)
    s = model.sigma(x)
    db = model.drift_jacobian(x)
    ds = model.diffusion_jacobian(x)
    d2s = model.diffusion_hessian(x)
    a = np.einsum("...in,...jn->...ij", s, s)
    out = np.einsum("...ij,...jn->...in", db, s)
    out = out + np.einsum("...inj,...j->...in", ds, model.b(x))
    out = out + np.einsum("...inlj,...lj->...in", d2s, a)
    return out


def talay_coupling(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    """Coefficient matrix of the gamma^{3/2} U increment of the
    weak-order-two step:

        1/2 (Db) sigma_i + 1/2 (D sigma_i) b
        + 1/4 sum_{l,j} (sigma sigma^T)_{l,j} d2_{l,j} sigma_i

    One-step weak order two pins these weights (the Hessian contraction
    carries half the weight it has in ``sigma_tilde``).
    """
    x = np.asarray(x, dtype=np.float64)
    s = model.sigma(x)
    db = model.drift_jacobian(x)
    ds = model.diffusion_jacobian(x)
    d2s = model.diffusion_hessian(x)
    a = np.einsum("...in,...jn->...ij", s, s)
    out = 0.5 * np.einsum("...ij,...jn->...in", db, s)
    out = out + 0.5 * np.einsum("...inj,...j->...in", ds, model.b(x))
    out = out + 0.25 * np.einsum("...inlj,...lj->...in", d2s, a)
    return out


def drift_generator(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    """Ab(x) componentwise: (Ab)_k = <b, grad b_k> + 1/2 (sigma sigma^T) : D^2 b_k."""
    x = np.asarray(x, dtype=np.float64)
    b = model.b(x)
    db = model.drift_jacobian(x)
    d2b = model.drift_hessian(x)
    a = model.diffusion_matrix(x)
    return np.einsum("...kj,...j->...k", db, b) + 0.5 * np.einsum("...kij,...ij->...k", d2b, a)


def levy_weighted_coupling(model: DiffusionModel, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(D sigma; sigma W^T) = sum_{i,j,l} (d_l sigma_col_i) sigma_{l,j} W^{i,j},
    a d-vector; ``w`` has shape (..., N, N)."""
    ds = model.diffusion_jacobian(x)
    s = model.sigma(x)
    return np.einsum("...ail,...lj,...ij->...a", ds, s, w)


# ---------------------------------------------------------------------------
# correction operators


def _expect(fn, model: DiffusionModel, innovation: InnovationDist, quadrature: Quadrature,
            with_kappa: bool, x: np.ndarray):
    """E[fn(u, kappa)] by enumeration or Monte Carlo.

    ``fn`` maps one (u, kappa) draw to a value batched like ``x``; the Monte
    Carlo path instead feeds it a sample-batched state, so it needs ``x``
    unbatched and evaluates all draws in one vectorized pass.
    """
    if isinstance(quadrature, Enumerate):
        total = 0.0
        for u, kap, p in joint_outcomes(innovation, with_kappa=with_kappa):
            total = total + p * fn(u, kap)
        return total, 0.0
    if not isinstance(quadrature, MonteCarlo):
        raise TypeError(f"unknown quadrature {quadrature!r}")
    if np.asarray(x).ndim > 1:
        raise ValueError("Monte Carlo quadrature supports a single state at a time")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(quadrature.seed)))
    n = quadrature.samples
    us = innovation.sample(rng, size=n)
    kaps = sample_kappa(rng, innovation.dimension, size=n) if with_kappa else np.zeros((n, 0))
    vals = np.asarray(fn(us, kaps), dtype=np.float64)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return mean, stderr


def m1_euler(model: DiffusionModel, f: Observable, x: np.ndarray,
             innovation: InnovationDist, quadrature: Quadrature = Enumerate()) -> OperatorValue:
    """First-order step-defect operator of the Euler kernel:

        -1/2 (D^2 f; b x b)
        - E[ 1/2 (D^3 f; (sigma U)^x2 x b) + 1/4! (D^4 f; (sigma U)^x4) ]
    """
    if f.max_order < 4:
        raise InsufficientOrderError("insufficient observable order: need order 4")
    x = np.asarray(x, dtype=np.float64)
    b = model.b(x)
    s = model.sigma(x)
    det = -0.5 * f.d(x, 2, (b, b))

    def inner(u, _kap):
        su = np.einsum("...in,...n->...i", s, u)
        return 0.5 * f.d(x, 3, (su, su, b)) + f.d(x, 4, (su, su, su, su)) / 24.0

    exp, se = _expect(inner, model, innovation, quadrature, with_kappa=False, x=x)
    return OperatorValue(det - exp, se)


def m1_talay(model: DiffusionModel, f: Observable, x: np.ndarray,
             innovation: InnovationDist, quadrature: Quadrature = Enumerate()) -> OperatorValue:
    """First-order step-defect operator of the weak-order-two kernel:

        -(Df; Ab)
        - E[ 1/2 (D^2 f; (b + Theta)^x2)
             + 1/2 (D^3 f; (sigma U)^x2 x (b + Theta))
             + 1/2 (D^3 f; (sigma U) x (sigma_tilde U) x (sigma U))
             + 1/4! (D^4 f; (sigma U)^x4) ]

    with Theta = (D sigma; sigma W^T).  The (sigma U) x (sigma_tilde U)
    cross term is padded to the third-order bracket with the diffusion
    direction; its expectation vanishes for the symmetric innovation laws.
    """
    if f.max_order < 4:
        raise InsufficientOrderError("insufficient observable order: need order 4")
    x = np.asarray(x, dtype=np.float64)
    b = model.b(x)
    s = model.sigma(x)
    ab = drift_generator(model, x)
    st = sigma_tilde(model, x)
    det = -f.d(x, 1, (ab,))

    def inner(u, kap):
        su = np.einsum("...in,...n->...i", s, u)
        stu = np.einsum("...in,...n->...i", st, u)
        w = assemble_w(u, kap if kap.size else None)
        bt = b + levy_weighted_coupling(model, x, w)
        return (
            0.5 * f.d(x, 2, (bt, bt))
            + 0.5 * f.d(x, 3, (su, su, bt))
            + 0.5 * f.d(x, 3, (su, stu, su))
            + f.d(x, 4, (su, su, su, su)) / 24.0
        )

    exp, se = _expect(inner, model, innovation, quadrature, with_kappa=True, x=x)
    return OperatorValue(det - exp, se)


def m2_tilde(model: DiffusionModel, f: Observable, x: np.ndarray,
             innovation: InnovationDist, quadrature: Quadrature = Enumerate()) -> OperatorValue:
    """The eleven-term third-order defect bracket of the weak-order-two
    kernel (everything except the generator-composed part of m2_talay)."""
    if f.max_order < 6:
        raise InsufficientOrderError("insufficient observable order: need order 6")
    x = np.asarray(x, dtype=np.float64)
    b = model.b(x)
    s = model.sigma(x)
    ab = drift_generator(model, x)
    st = sigma_tilde(model, x)

    def inner(u, kap):
        su = np.einsum("...in,...n->...i", s, u)
        stu = np.einsum("...in,...n->...i", st, u)
        w = assemble_w(u, kap if kap.size else None)
        th = levy_weighted_coupling(model, x, w)
        bt = b + th
        t2 = 0.5 * f.d(x, 2, (stu, stu)) + f.d(x, 2, (b, ab))
        t3 = 0.5 * (
            f.d(x, 3, (th, th, th)) / 3.0
            + f.d(x, 3, (b, b, th))
            + f.d(x, 3, (su, su, ab))
            + f.d(x, 3, (su, bt, stu))
            + f.d(x, 3, (b, b, b)) / 3.0
        )
        t4 = 0.5 * (
            0.5 * f.d(x, 4, (su, su, bt, bt))
            + f.d(x, 4, (su, su, su, stu)) / 3.0
        )
        t5 = f.d(x, 5, (su, su, su, su, bt)) / 24.0
        t6 = f.d(x, 6, (su, su, su, su, su, su)) / 720.0
        return t2 + t3 + t4 + t5 + t6

    exp, se = _expect(inner, model, innovation, quadrature, with_kappa=True, x=x)
    return OperatorValue(exp, se)


def m2_talay(model: DiffusionModel, f: Observable, x: np.ndarray,
             innovation: InnovationDist, quadrature: Quadrature = Enumerate(),
             af: Observable | None = None) -> OperatorValue:
    """Second-order step-defect operator: m1_talay applied to Af plus the
    third-order bracket.  ``af`` may be supplied analytically; otherwise it
    is built from the model's analytic derivative oracles."""
    if f.max_order < 6:
        raise InsufficientOrderError("insufficient observable order: need order 6")
    if af is None:
        af = generator_observable(model, f)
    part1 = m1_talay(model, af, x, innovation, quadrature)
    part2 = m2_tilde(model, f, x, innovation, quadrature)
    return OperatorValue(part1.value + part2.value,
                         math.hypot(part1.stderr, part2.stderr))


# ---------------------------------------------------------------------------
# the generator as an observable


def _contract_dirs(tensor: np.ndarray, dirs: Sequence[np.ndarray], d: int,
                   value_rank: int) -> np.ndarray:
    """Contract the trailing ``len(dirs)`` axes of ``tensor`` against
    direction vectors (each possibly batch-shaped (..., d)).

    ``value_rank`` counts ALL trailing value axes of the tensor (component
    axes plus one coordinate axis per derivative order); directions are
    padded to broadcast across the surviving value axes and any batch axes.
    """
    out = np.asarray(tensor, dtype=np.float64)
    rank = value_rank
    for w in reversed(list(dirs)):
        w = np.asarray(w, dtype=np.float64)
        w = w.reshape(w.shape[:-1] + (1,) * (rank - 1) + (d,))
        out = (out * w).sum(-1)
        rank -= 1
    return out


def _subsets(k: int):
    idx = list(range(k))
    for mask in range(1 << k):
        yield [i for i in idx if mask >> i & 1], [i for i in idx if not mask >> i & 1]


def generator_observable(model: DiffusionModel, f: Observable) -> Observable:
    """Af as an Observable of order ``f.max_order - 2``.

    Derivatives are assembled by the Leibniz rule from f's dirderiv and the
    model's analytic derivative tensors; finite-difference derivative data
    is refused because nested differencing is too noisy for the defect
    operators built on top of this.
    """
    if f.max_order < 2:
        raise InsufficientOrderError("insufficient observable order: generator needs order 2")
    order = f.max_order - 2
    if not model.has_analytic(min(order, 2)) or (order >= 3 and not model.has_analytic(order)):
        raise InsufficientDerivativesError(
            "generator observable requires analytic drift/diffusion derivatives"
        )
    d = model.dim
    basis = np.eye(d)

    def fn(x):
        return generator_apply(model, f, x)

    def sigma_pair_tensor(x, order_t, dirs):
        """D^{order_t}(sigma sigma^T)_{ij}[dirs] as (..., d, d) via the product rule."""
        sig = {m: model.diffusion_tensor(x, m) for m in range(order_t + 1)}
        out = 0.0
        for left, right in _subsets(order_t):
            # diffusion tensors carry (d, N) plus one coordinate axis per derivative
            tl = _contract_dirs(sig[len(left)], [dirs[t] for t in left], d, len(left) + 2)
            tr = _contract_dirs(sig[len(right)], [dirs[t] for t in right], d, len(right) + 2)
            out = out + np.einsum("...in,...jn->...ij", tl, tr)
        return out

    def dd(x, k, dirs):
        if k > order:
            raise InsufficientOrderError(
                f"insufficient observable order: need {k}, have {order}"
            )
        x = np.asarray(x, dtype=np.float64)
        out = 0.0
        for left, right in _subsets(k):
            bt = _contract_dirs(model.drift_tensor(x, len(left)),
                                [dirs[t] for t in left], d, len(left) + 1)
            rest = [dirs[t] for t in right]
            for i in range(d):
                out = out + bt[..., i] * f.d(x, len(rest) + 1, (basis[i], *rest))
            at = sigma_pair_tensor(x, len(left), [dirs[t] for t in left])
            for i in range(d):
                for j in range(d):
                    out = out + 0.5 * at[..., i, j] * f.d(x, len(rest) + 2, (basis[i], basis[j], *rest))
        return out

    return Observable(fn=fn, dirderiv=dd, max_order=order,
                      name=f"A[{f.name or 'f'}]")
