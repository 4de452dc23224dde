import math
import warnings

import numpy as np
import pytest

from torus_sns.errors import DomainError, HypothesisWarning
from torus_sns.noise import (
    NoiseSpec,
    OUStep,
    apply_Q_half,
    apply_Q_inv_half,
    expected_norm_sq,
    fit_log_tail,
    ou_exact_step,
    ou_step_variance,
    sample_z_path,
    sigma_of,
    sup_norm_tail_mc,
    wilson_interval,
)
from torus_sns.rng import ReplicaStreams, generator, replica_generator
from torus_sns.spectral import SpectralField, divergence_residual, mode_set

from helpers import rand


def test_sigma_power_law():
    spec = NoiseSpec(0.25, 2.0)
    assert sigma_of((1, 0, 0), spec) == 2.0
    assert sigma_of((2, 0, 0), spec) == pytest.approx(2.0 * 2 ** -2.0)
    assert spec.max_regularity == 1.5
    with pytest.raises(DomainError):
        NoiseSpec(0.0)


def test_Q_half_inverse(ms2):
    spec = NoiseSpec(0.5, 1.5)
    u = rand(ms2, 0)
    assert apply_Q_inv_half(apply_Q_half(u, spec), spec).allclose(u, rtol=1e-14)
    with pytest.raises(DomainError):
        apply_Q_inv_half(u, NoiseSpec(0.5, 0.0))


def test_zero_step_and_zero_noise(ms2):
    z = SpectralField.zeros(ms2)
    with pytest.raises(DomainError):
        ou_exact_step(z, 0.0, 1.0, NoiseSpec(0.25), generator(0))
    out = ou_exact_step(rand(ms2, 1), 0.1, 1.0, NoiseSpec(0.25, 0.0), generator(0))
    expected = rand(ms2, 1).coeffs * np.exp(-0.1 * ms2.k2)[:, None]
    np.testing.assert_allclose(out.coeffs, expected, rtol=1e-14)


def test_step_keeps_divergence_free(ms2):
    z = ou_exact_step(SpectralField.zeros(ms2, (5,)), 0.1, 1.0, NoiseSpec(0.25), generator(0))
    assert np.max(divergence_residual(z)) < 1e-15


def test_one_step_variance_small_sample():
    ms = mode_set(2)
    spec = NoiseSpec(0.25)
    n = 20000
    z = ou_exact_step(SpectralField.zeros(ms, (n,)), 0.05, 0.7, spec, generator(3))
    emp = np.mean(np.abs(z.coeffs) ** 2, axis=0).sum(axis=1) / 2  # per tangential component
    want = ou_step_variance(spec, ms, 0.7, 0.05)
    np.testing.assert_allclose(emp, want, rtol=6 / math.sqrt(n) * 2)


def test_increment_covariance():
    ms = mode_set(1)
    spec, nu, h = NoiseSpec(0.25), 1.0, 0.2
    step = OUStep(ms, spec, nu, h)
    g = generator(4).standard_normal((40000,) + step.draw_shape)
    z, dW = step.apply(np.zeros((40000, len(ms), 3), dtype=complex), g)
    lam = nu * ms.k2
    # E[z_k conj(dW_k)] per tangential component = sigma (1 - e^{-lam h}) / lam
    cross = np.mean(z * np.conj(dW), axis=0).sum(axis=1).real / 2
    want = spec.sigma(ms) * -np.expm1(-lam * h) / lam
    np.testing.assert_allclose(cross, want, rtol=0.05)
    inc_var = np.mean(np.abs(dW) ** 2, axis=0).sum(axis=1) / 2
    np.testing.assert_allclose(inc_var, h, rtol=0.05)


def test_path_reproducible_and_replica_zero():
    spec = NoiseSpec(0.25)
    grid = np.linspace(0, 0.1, 11)
    a = sample_z_path(grid, 1.0, spec, 2, 42)
    b = sample_z_path(grid, 1.0, spec, 2, replica_generator(42, 0))
    assert np.array_equal(a.z, b.z) and np.array_equal(a.dW, b.dW)
    assert a.seed == 42 and b.seed is None
    assert np.all(a.z[0] == 0)


def test_path_grid_validation():
    spec = NoiseSpec(0.25)
    with pytest.raises(DomainError):
        sample_z_path([0.1, 0.2], 1.0, spec, 1, 0)
    with pytest.raises(DomainError):
        sample_z_path([0.0, 0.2, 0.1], 1.0, spec, 1, 0)


def test_subsample_sums_increments():
    p = sample_z_path(np.linspace(0, 0.08, 9), 1.0, NoiseSpec(0.25), 1, 0)
    q = p.subsample(4)
    assert len(q) == 3
    np.testing.assert_allclose(q.dW[0], p.dW[:4].sum(axis=0))
    assert np.array_equal(q.z, p.z[::4])
    with pytest.raises(ValueError):
        p.subsample(3)


def test_expected_norm_matches_ensemble():
    ms = mode_set(2)
    spec = NoiseSpec(0.25)
    n = 20000
    z = ou_exact_step(SpectralField.zeros(ms, (n,)), 0.3, 1.0, spec, generator(8))
    emp = np.mean(z.norm(1.0) ** 2)
    assert emp == pytest.approx(expected_norm_sq(spec, ms, 1.0, 0.3, 1.0), rel=0.03)


def test_replica_streams_are_chunk_invariant():
    a = ReplicaStreams(5, range(4), block=3)
    b = ReplicaStreams(5, [2, 3], block=7)
    xa = np.stack([a.next((2,)) for _ in range(10)])
    xb = np.stack([b.next((2,)) for _ in range(10)])
    assert np.array_equal(xa[:, 2:], xb)
    with pytest.raises(ValueError):
        a.next((3,))


def test_wilson_interval_contains_estimate():
    lo, hi = wilson_interval(5, 100)
    assert lo < 0.05 < hi
    assert wilson_interval(0, 50)[0] == 0.0


def test_fit_log_tail_recovers_slope():
    x = np.linspace(1, 5, 8)
    p = np.exp(-0.7 * x)
    fit, mask = fit_log_tail(x, p, np.full(8, 100))
    assert fit.slope == pytest.approx(-0.7) and mask.all()
    fit, _ = fit_log_tail(x, p, np.array([100, 100, 1, 1, 1, 1, 1, 1]))
    assert fit is None


def test_tail_mc_small_run():
    spec = NoiseSpec(0.25)
    eps = 0.01
    res = sup_norm_tail_mc(spec, 1.0, eps, np.sqrt(eps) * np.linspace(6, 8, 5), 2000, 1.0, seed=1,
                           N=1, substeps=8, bootstrap=20)
    assert np.all(np.diff(res.n_exceed) <= 0)
    assert len(res.rows()) == 5
    again = sup_norm_tail_mc(spec, 1.0, eps, np.sqrt(eps) * np.linspace(6, 8, 5), 2000, 1.0, seed=1,
                             N=1, substeps=8, bootstrap=20)
    assert np.array_equal(res.n_exceed, again.n_exceed)


def test_tail_mc_guards():
    spec = NoiseSpec(0.25)
    with pytest.raises(DomainError):
        sup_norm_tail_mc(spec, 1.0, 0.01, [0.1], 100, 1.0, 0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        sup_norm_tail_mc(spec, 2.0, 0.01, [1.0], 20, 1.0, 0, N=1, bootstrap=0)
    assert any(issubclass(x.category, HypothesisWarning) for x in w)
