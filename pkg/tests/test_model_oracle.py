import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jrlab.fields import PlanePatch
from jrlab.model_oracle import (ModelProblem, alpha_row, bump, decay_rate_fit, dense_kernel_dim,
                                exact_mode_k1, expected_dims, fourier_derivative_1d, loglog_slope,
                                model_residual, overlap, real_line_overlap)


@pytest.mark.parametrize("p,q", [(1, 0), (1, 1), (2, 0), (0, 1)])
def test_dense_dims(p, q):
    prob = ModelProblem(4, p, q, R=4, n=32)
    plus, minus = dense_kernel_dim(prob, 1), dense_kernel_dim(prob, -1)
    assert (plus.kernel_dim, minus.kernel_dim) == expected_dims(p - q)
    assert plus.confident and minus.confident
    assert min(plus.separation_ratio, minus.separation_ratio) >= 10


def test_expected_dims():
    assert expected_dims(2) == (2, 0)
    assert expected_dims(-1) == (0, 1)
    assert expected_dims(0) == (0, 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        ModelProblem(4, -1, 0)
    with pytest.raises(ValueError):
        ModelProblem(0, 1, 0)
    with pytest.raises(ValueError):
        ModelProblem(4, 1, 0, n=80)
    with pytest.raises(ValueError):
        ModelProblem(1, 1, 0, perturbation={(0, 0): 2.0})
    with pytest.raises(ValueError):
        dense_kernel_dim(ModelProblem(4, 1, 0, n=16), sign=0)
    prob = ModelProblem(4, 1, 0, R=4, n=16, alpha=bump(3.0))
    with pytest.raises(ValueError):
        prob.alpha_samples()


def test_fourier_derivative_exact_on_modes():
    for n in (16, 17):
        D = fourier_derivative_1d(n, 2.0)
        x = np.arange(n) * 2.0 / n
        assert np.allclose(D @ np.sin(2 * np.pi * x), 2 * np.pi * np.cos(2 * np.pi * x), atol=1e-10)
        assert np.allclose(D, -D.T)


def test_exact_mode_residuals():
    g = PlanePatch(2.0, 32)
    t = 8.0
    f = exact_mode_k1(t, g)
    assert g.h ** 2 * np.sum(np.abs(f) ** 2) == pytest.approx(1.0)
    real = model_residual(f, g, t)
    imag = model_residual(1j * f, g, t)
    assert real < 10 * g.h * t
    assert imag >= 100 * real
    with pytest.raises(ValueError):
        exact_mode_k1(0.0, g)


def test_exact_mode_matches_oracle_basis():
    prob = ModelProblem(8, 1, 0, R=2, n=32)
    rep = dense_kernel_dim(prob, 1)
    f = exact_mode_k1(8.0, PlanePatch(2.0, 32))
    assert rep.kernel_dim == 1
    assert real_line_overlap(f, rep.basis[0]) >= 0.95
    assert overlap(f, 1j * f) == pytest.approx(1.0)
    assert real_line_overlap(f, 1j * f) == pytest.approx(0.0, abs=1e-12)


def test_gaussian_decay_is_superexponential():
    g = PlanePatch(4.0, 64)
    fits = [decay_rate_fit(exact_mode_k1(t, g), g.coords(), t, 1, 4.0) for t in (2.0, 4.0)]
    assert all(f.superexponential for f in fits)
    assert fits[0].curvature == pytest.approx(-2.0, rel=1e-6)
    # the fixed-annulus rate of a Gaussian grows like t, not sqrt(t)
    assert fits[1].rate / fits[0].rate == pytest.approx(2.0, rel=1e-6)
    assert fits[1].predicted == pytest.approx(2.0)


def test_exponential_decay_rate():
    g = PlanePatch(4.0, 64)
    r = np.abs(g.coords())
    fit = decay_rate_fit(np.exp(-3.0 * r), g.coords(), 9.0, 1, 4.0)
    assert fit.rate == pytest.approx(3.0, rel=1e-9)
    assert not fit.superexponential
    assert 0.5 <= fit.rate / fit.predicted <= 2


def test_decay_fit_floor_error():
    g = PlanePatch(4.0, 64)
    with pytest.raises(ValueError):
        decay_rate_fit(exact_mode_k1(32.0, g), g.coords(), 32.0, 1, 4.0)


def test_tiny_alpha_keeps_dims():
    prob = ModelProblem(4, 1, 0, R=4, n=32)
    base = alpha_row(prob, 0.0, bump(2.0))
    row = alpha_row(prob, 1e-3, bump(2.0))
    assert (base.dim_plus, base.dim_minus) == (row.dim_plus, row.dim_minus) == (1, 0)
    assert 0.9e-3 < row.alpha_norm <= 1e-3


def test_bump_support():
    z = np.array([0.0, 0.5, 1.0, 2.0]) + 0j
    b = bump(1.0)(z)
    assert b[0] == 1 and b[2] == 0 and b[3] == 0 and 0 < b[1].real < 1


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 5))
def test_loglog_slope_recovers_power(a, c):
    x = np.array([1.0, 2.0, 4.0, 8.0])
    s, err = loglog_slope(x, c * x ** a)
    assert s == pytest.approx(a, abs=1e-9)
    assert err < 1e-8
