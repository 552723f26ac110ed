from __future__ import annotations

import numpy as np
import pytest

from ergostep.model import DiffusionModel


def poly1d_model(b_coeffs, s_coeffs, fd_only: bool = False) -> DiffusionModel:
    """1-d model with polynomial drift/diffusion and exact derivatives.

    Coefficients follow numpy's Polynomial convention (coeffs[k] * x^k).
    ``fd_only`` drops the analytic derivative callbacks to exercise the
    central-difference fallback.
    """
    P = np.polynomial.Polynomial
    bp, sp_ = P(list(b_coeffs)), P(list(s_coeffs))

    def shape(val, rank):
        out = np.asarray(val, dtype=np.float64)
        return out.reshape(out.shape + (1,) * rank)

    def b(x):
        return shape(bp(x[..., 0]), 1)

    def sigma(x):
        return shape(sp_(x[..., 0]), 2)

    if fd_only:
        return DiffusionModel(dim=1, noise_dim=1, b=b, sigma=sigma)
    return DiffusionModel(
        dim=1, noise_dim=1, b=b, sigma=sigma,
        db=lambda x: shape(bp.deriv(1)(x[..., 0]), 2),
        d2b=lambda x: shape(bp.deriv(2)(x[..., 0]), 3),
        dsigma=lambda x: shape(sp_.deriv(1)(x[..., 0]), 3),
        d2sigma=lambda x: shape(sp_.deriv(2)(x[..., 0]), 4),
        db_higher=lambda x, m: shape(bp.deriv(m)(x[..., 0]), m + 1),
        dsigma_higher=lambda x, m: shape(sp_.deriv(m)(x[..., 0]), m + 2),
    )


@pytest.fixture
def zero_model() -> DiffusionModel:
    return poly1d_model([0.0], [0.0])
