"""Innovation distributions and the discrete Levy-area surrogate.

The innovations are i.i.d. R^N-valued with independent coordinates, chosen
to match standard-normal moments up to a stated order:

    rademacher   +-1 each w.p. 1/2             -> matches through order 3
    three_point  {-sqrt(3), 0, +sqrt(3)} w.p.
                 {1/6, 2/3, 1/6}               -> matches through order 5
    gaussian     N(0, I)                       -> matches every order

The weak-order-two step additionally consumes a symmetric N x N matrix W
built from one innovation vector u and independent signs kappa in {-1/2,+1/2}:

    W[i][i] = u_i^2 - 1,   W[i][j] = u_i u_j - kappa[min(i,j)][max(i,j)]

W is symmetric by construction and centered (E W = 0) whenever u has unit
second moments and independent coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

INNOVATION_KINDS = ("gaussian", "rademacher", "three_point")

ENUMERATION_CAP = 10**6

_SQRT3 = math.sqrt(3.0)

# per-coordinate moments E[X^k] as exact rationals (gaussian: (k-1)!! for even k)
_MOMENTS = {
    "rademacher": lambda k: Fraction(0) if k % 2 else Fraction(1),
    "three_point": lambda k: Fraction(0) if k % 2 else Fraction(3 ** (k // 2), 3) if k else Fraction(1),
    "gaussian": lambda k: Fraction(0) if k % 2 else Fraction(_double_factorial(k - 1)),
}


def _double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def gaussian_moment(k: int) -> Fraction:
    """E[Z^k] for Z standard normal, exact."""
    return _MOMENTS["gaussian"](k)


@dataclass(frozen=True)
class InnovationDist:
    """An i.i.d. innovation law on R^N with independent coordinates."""

    kind: str
    dimension: int

    def __post_init__(self):
        if self.kind not in INNOVATION_KINDS:
            raise ValueError(f"unknown innovation kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def matching_order(self) -> int | None:
        """Largest q with all moments through order q equal to the normal's
        (None for gaussian: all orders)."""
        return {"rademacher": 3, "three_point": 5, "gaussian": None}[self.kind]

    def moment(self, k: int) -> Fraction:
        """Per-coordinate E[X^k], exact."""
        if k < 0:
            raise ValueError("moment order must be >= 0")
        return _MOMENTS[self.kind](k)

    def sample(self, rng: np.random.Generator, size: int | tuple | None = None) -> np.ndarray:
        """Draw innovations; trailing axis is the coordinate axis."""
        shape = (self.dimension,) if size is None else (
            (size, self.dimension) if isinstance(size, int) else (*size, self.dimension)
        )
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
        u = rng.random(shape)
        return np.where(u < 1.0 / 6.0, -_SQRT3, np.where(u < 5.0 / 6.0, 0.0, _SQRT3))

    def support1d(self) -> list[tuple[float, float]] | None:
        """Per-coordinate (value, probability) pairs; None for gaussian."""
        if self.kind == "gaussian":
            return None
        if self.kind == "rademacher":
            return [(-1.0, 0.5), (1.0, 0.5)]
        return [(-_SQRT3, 1.0 / 6.0), (0.0, 2.0 / 3.0), (_SQRT3, 1.0 / 6.0)]

    def outcomes(self) -> list[tuple[np.ndarray, float]]:
        """All joint values of the innovation vector with probabilities."""
        sup = self.support1d()
        if sup is None:
            raise ValueError("gaussian innovations have no finite support")
        if len(sup) ** self.dimension > ENUMERATION_CAP:
            raise ValueError("enumeration blow-up: innovation support too large")
        out = []
        for combo in itertools.product(sup, repeat=self.dimension):
            u = np.array([v for v, _ in combo])
            p = math.prod(p for _, p in combo)
            out.append((u, p))
        return out


def assemble_w(u: np.ndarray, kappa: np.ndarray | None) -> np.ndarray:
    """Surrogate matrix for one or many draws: u (..., N) and kappa
    (..., N(N-1)/2) row-major over i < j give (..., N, N) with

        W[i][i] = u_i^2 - 1,   W[i][j] = W[j][i] = u_i u_j - kappa[i][j].
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[-1]
    w = np.einsum("...i,...j->...ij", u, u)
    idx = np.arange(n)
    w[..., idx, idx] -= 1.0
    if n > 1:
        if kappa is None or np.shape(kappa)[-1] != n * (n - 1) // 2:
            raise ValueError("kappa must hold N(N-1)/2 upper-triangular values")
        iu, ju = np.triu_indices(n, 1)
        w[..., iu, ju] -= kappa
        w[..., ju, iu] = w[..., iu, ju]
    return w


@dataclass(frozen=True)
class LevyAreaSurrogate:
    """Realization of the symmetric sign-compensated product matrix W."""

    w: np.ndarray

    @classmethod
    def from_draws(cls, u: np.ndarray, kappa: np.ndarray) -> "LevyAreaSurrogate":
        """Assemble W from an innovation vector and upper-triangular signs.

        ``kappa`` holds the N(N-1)/2 values kappa[i][j], i < j, row-major.
        """
        u = np.asarray(u, dtype=np.float64)
        if u.ndim != 1:
            raise ValueError("from_draws takes a single innovation vector")
        return cls(w=assemble_w(u, np.asarray(kappa, dtype=np.float64)))


def kappa_count(noise_dim: int) -> int:
    return noise_dim * (noise_dim - 1) // 2


def sample_kappa(rng: np.random.Generator, noise_dim: int, size: int | None = None) -> np.ndarray:
    """Draw the upper-triangular +-1/2 signs, row-major i < j."""
    k = kappa_count(noise_dim)
    shape = (k,) if size is None else (size, k)
    return rng.integers(0, 2, size=shape).astype(np.float64) - 0.5


def sample_levy_surrogate(u: np.ndarray, rng: np.random.Generator) -> LevyAreaSurrogate:
    """Draw kappa and assemble W for one innovation vector."""
    n = np.shape(u)[-1]
    return LevyAreaSurrogate.from_draws(u, sample_kappa(rng, n))


def kappa_outcomes(noise_dim: int) -> list[tuple[np.ndarray, float]]:
    """All sign patterns of the upper-triangular kappa with probabilities."""
    k = kappa_count(noise_dim)
    if k == 0:
        return [(np.zeros(0), 1.0)]
    if 2**k > ENUMERATION_CAP:
        raise ValueError("enumeration blow-up: too many kappa components")
    out = []
    for signs in itertools.product((-0.5, 0.5), repeat=k):
        out.append((np.array(signs), 0.5**k))
    return out


def joint_outcomes(dist: InnovationDist, with_kappa: bool = False) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Joint (u, kappa, probability) outcomes for exact expectations.

    Raises on gaussian innovations or when the outcome count would exceed
    the enumeration cap.
    """
    us = dist.outcomes()
    ks = kappa_outcomes(dist.dimension) if with_kappa else [(np.zeros(0), 1.0)]
    if len(us) * len(ks) > ENUMERATION_CAP:
        raise ValueError("enumeration blow-up: joint outcome count exceeds cap")
    return [(u, k, pu * pk) for u, pu in us for k, pk in ks]
