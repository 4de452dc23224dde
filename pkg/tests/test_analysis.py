import math

import numpy as np
import pytest

from helpers import rand
from torus_sns import analysis as lab
from torus_sns.dynamics import CutoffSpec, SimConfig
from torus_sns.errors import DomainError
from torus_sns.noise import NoiseSpec
from torus_sns.spectral import SpectralField, apply_semigroup, mode_set

SPEC = NoiseSpec(0.25)


# ---------------------------------------------------------------- trilinear estimate


def test_admissibility_rule():
    assert lab.trilinear_admissible(1, 1, -0.5)[0]
    assert not lab.trilinear_admissible(0, 0, 0)[0]


def test_running_max_is_prefix_stable():
    small = lab.trilinear_check(1, 1, -0.5, 4, 2, seed=3, iters=3)
    big = lab.trilinear_check(1, 1, -0.5, 12, 2, seed=3, iters=3)
    assert np.all(np.diff(big.running_max) >= 0)
    np.testing.assert_array_equal(big.running_max[:4], small.running_max)
    assert big.constant >= small.constant


def test_ratio_skips_zero_field(ms2):
    z = SpectralField.zeros(ms2)
    assert lab.trilinear_ratio(z, rand(ms2, 1), rand(ms2, 2), 1, 1, 0) is None
    r = lab.trilinear_ratio(rand(ms2, 0), rand(ms2, 1), rand(ms2, 2), 1, 1, 0)
    assert 0 < r < math.inf


def test_ascent_improves_ratio():
    raw = lab.trilinear_check(1, 1, 0, 8, 2, seed=1, iters=0)
    climbed = lab.trilinear_check(1, 1, 0, 8, 2, seed=1, iters=5)
    assert climbed.constant >= raw.constant


@pytest.mark.parametrize("a, b, delta, strict", [(2, 2, 1.0, False), (1, 1, -0.5, False), (1.5, 1.5, 0.5, True)])
def test_smoothing_exponent(a, b, delta, strict):
    r = lab.smoothing_exponent(a, b)
    assert r.delta == pytest.approx(delta) and r.strict is strict
    assert str(r).startswith("delta <" if strict else "delta =")


# ---------------------------------------------------------------- lattice sums


def test_ball_sum_examples():
    assert lab.ball_sum(0.0, 1.0) == 6.0
    assert lab.ball_sum(0.0, math.sqrt(2)) == 18.0
    assert lab.ball_sum(2.0, 1.0) == 6.0
    with pytest.raises(DomainError):
        lab.ball_sum(0.0, 0.5)


def test_ball_sum_log_case_bounded():
    r = [lab.ball_sum(-3.0, k) / math.log1p(k) for k in (1, 2, 4, 8, 16, 32, 64)]
    assert max(r) < 2 * min(r[2:]) + 20


def test_ball_sum_converges_for_alpha_minus_four():
    s = [lab.ball_sum(-4.0, k) for k in (4, 8, 16, 32, 64)]
    inc = np.diff(s)
    assert np.all(inc > 0) and np.all(np.diff(inc) < 0) and inc[-1] < inc[0] / 6


def test_shell_sum_cutoff_stable_and_shell():
    a = lab.shell_sum(1, 1, 0, (2, 0, 0))
    assert a > 0 and a == lab.shell_sum(1, 1, 0, (2, 0, 0), cutoff=4)
    for l in [(2, 0, 0), (3, 1, 0), (5, 2, 2), (12, 0, 0)]:
        assert lab.shell_sum_annulus_check(l)
    vals = [lab.shell_sum(1, 1, 0, (m, 0, 0)) for m in (2, 4, 8, 16, 32)]
    assert max(vals) < 10 * vals[0]
    with pytest.raises(DomainError):
        lab.shell_sum(1, 1, 0, (1, 0, 0))


def test_shell_hypotheses():
    assert lab.shell_sum_hypotheses(1, 1, 0)[0]
    assert not lab.shell_sum_hypotheses(0, 1, 0)[0]
    assert not lab.shell_sum_hypotheses(0, 1.5, 0)[0]
    assert lab.shell_sum_hypotheses(0, 2, 0)[0]


# ---------------------------------------------------------------- weight function


def test_weight_bound_example():
    rep = lab.weight_bound_check(0.5, 0.5, 1.0, 1.0)
    assert rep.bound == pytest.approx(math.pi + math.sqrt(math.pi), rel=1e-12)
    assert rep.ok and rep.exact_err < 1e-8 and rep.a_max <= 1.0


def test_weight_bound_independent_quadrature():
    from scipy import integrate

    x, y, delta, eta, t = 0.3, 0.6, 0.7, 2.0, 1.9
    inner, _ = integrate.quad(lambda s: (t - s) ** (-y) / lab._weight_a(s, x, delta, eta), 0, t,
                              points=[delta], limit=400)
    want = float(lab._weight_a(t, x, delta, eta)) * inner
    assert lab._weight_A(t, x, y, delta, eta) == pytest.approx(want, rel=1e-6)


def test_weight_bound_domain():
    with pytest.raises(DomainError):
        lab.weight_bound_check(1.0, 0.5, 1.0, 1.0)
    with pytest.raises(DomainError):
        lab.weight_bound_check(0.5, 0.5, 0.0, 1.0)


def test_cutoff_ratio_finite_and_converging():
    a, b = lab.cutoff_regularity_ratio(200), lab.cutoff_regularity_ratio(1000)
    assert math.isfinite(b) and b == pytest.approx(a, rel=0.05)


# ---------------------------------------------------------------- functionals


def test_functionals_bounded(ms2):
    u = rand(ms2, 1, batch=(6,)).coeffs * 50
    for text in ["constant:value=2", "coord:k=1,0,0:e=0,1,0:squash=clip:scale=0.5",
                 "clipped_norm:alpha=1:cap=3", "smooth_norm:alpha=1:scale=2"]:
        f = lab.parse_functional(ms2, text)
        assert np.all(np.abs(f(u)) <= f.bound + 1e-15)


def test_coordinate_reads_coefficient(ms2):
    f = lab.coordinate(ms2, (1, 0, 0), (0, 1, 0), squash="clip", scale=10.0)
    u = SpectralField.zeros(ms2)
    i, _ = ms2.index_of((1, 0, 0))
    u.coeffs[i] = (0, 0.3, 0)
    # unit field e = (e2 / sqrt 2) at k, so <u, e> = 2 Re(u_k . conj e) = sqrt(2) * 0.3
    assert float(f(u.coeffs)) == pytest.approx(math.sqrt(2) * 0.3)
    g = lab.coordinate(ms2, (-1, 0, 0), (0, 1, 0), squash="clip", scale=10.0)
    assert float(g(u.coeffs)) == pytest.approx(math.sqrt(2) * 0.3)


def test_parse_functional_errors(ms2):
    for bad in ["coord:k=1,0,0", "nope:x=1", "smooth_norm:alpha=1:scale=2:extra=3", "constant:5",
                "coord:k=1,0,0:e=1,0,0"]:
        with pytest.raises(DomainError):
            lab.parse_functional(ms2, bad)


# ---------------------------------------------------------------- semigroup probes


def test_transition_constant_is_exact(ms2):
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.1, N=2, seed=1)
    est = lab.transition_estimate(lab.constant(1.0), rand(ms2, 1), 0.1, 20, cfg, SPEC)
    assert est.mean == 1.0 and est.se == 0.0


def test_transition_linear_mean_and_se_scaling(ms2):
    x = rand(ms2, 1)
    f = lab.coordinate(ms2, (1, 0, 0), (0, 1, 0), squash="clip", scale=100.0)
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, seed=2, nonlinear=False)
    a = lab.transition_estimate(f, x, 0.5, 500, cfg, SPEC)
    b = lab.transition_estimate(f, x, 0.5, 2000, cfg, SPEC)
    want = float(f(apply_semigroup(x, 1.0, 0.5).coeffs))
    assert abs(b.mean - want) <= 3 * b.se
    assert a.se / b.se == pytest.approx(2.0, rel=0.15)


def test_transition_time_must_be_on_grid(ms2):
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2)
    with pytest.raises(DomainError):
        lab.feller_modulus(lab.constant(), rand(ms2, 0), rand(ms2, 1), [0.1], [0.123], 5, cfg, SPEC)


def test_feller_small(ms2):
    x = rand(ms2, 1) * 0.5
    h = rand(ms2, 2)
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, seed=5)
    f = lab.parse_functional(ms2, "coord:k=1,0,0:e=0,1,0:squash=tanh:scale=1")
    rep = lab.feller_modulus(f, x, h, [0.2, 0.1, 0.05], [0.25, 0.5], 400, cfg, SPEC, alpha=1.2,
                             cutoff=CutoffSpec(1.2, 5.0))
    assert rep.ok and len(rep.rows) == 6
    with pytest.raises(DomainError):
        lab.feller_modulus(f, x, h, [1.5], [0.25], 5, cfg, SPEC)
    with pytest.raises(DomainError):
        lab.feller_modulus(f, x, SpectralField.zeros(ms2), [0.1], [0.25], 5, cfg, SPEC)


def test_feller_zero_perturbation_difference(ms2):
    # a tiny h gives a tiny difference: the CRN coupling removes the MC noise
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.25, N=2, seed=5)
    f = lab.parse_functional(ms2, "smooth_norm:alpha=1:scale=2")
    rep = lab.feller_modulus(f, rand(ms2, 1), rand(ms2, 2), [1e-9], [0.25], 50, cfg, SPEC)
    assert abs(rep.rows[0]["diff"]) < 1e-8


# ---------------------------------------------------------------- gradient formula


def test_bel_constant_functional_is_zero(ms2):
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, seed=1)
    (r,) = lab.bel_gradient(lab.constant(), rand(ms2, 1), rand(ms2, 2), 0.5, 500, cfg, SPEC, CutoffSpec(1.2, 5.0))
    assert abs(r.bel) <= 3 * r.bel_se and r.fd == 0.0


def test_bel_linear_matches_closed_form(ms2):
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, seed=2, nonlinear=False)
    fs = [lab.coordinate(ms2, (1, 0, 0), (0, 1, 0), "tanh", 1.0), lab.coordinate(ms2, (1, 0, 0), (0, 1, 0), "clip", 2.0)]
    res = lab.bel_gradient(fs, rand(ms2, 1), rand(ms2, 2), 0.5, 3000, cfg, SPEC, CutoffSpec(1.2, 5.0))
    for r in res:
        assert r.agrees_analytic, r.as_dict()
        assert abs(r.fd - r.analytic) <= 3 * r.fd_se


def test_closed_form_against_quadrature(ms2):
    from scipy import integrate, stats

    x, h = rand(ms2, 3), rand(ms2, 4)
    f = lab.coordinate(ms2, (2, 1, 0), (0, 0, 1), "tanh", 0.7)
    t, nu = 0.3, 1.3
    got = lab.linear_coordinate_derivative(f, x, h, t, nu, SPEC)
    e = f.direction
    i = int(np.flatnonzero(np.any(e != 0, axis=1))[0])
    lam = nu * ms2.k2[i]
    m = float(2 * np.real(np.vdot(e, apply_semigroup(x, nu, t).coeffs)))
    d = float(2 * np.real(np.vdot(e, apply_semigroup(h, nu, t).coeffs)))
    sd = math.sqrt(SPEC.sigma(ms2)[i] ** 2 * -math.expm1(-2 * lam * t) / (2 * lam))
    dens = stats.norm(m, sd).pdf
    want, _ = integrate.quad(lambda y: d / math.cosh(y / 0.7) ** 2 * dens(y), m - 12 * sd, m + 12 * sd)
    assert got == pytest.approx(want, rel=1e-9)


def test_bel_discrete_weight(ms2):
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, seed=2, nonlinear=False)
    f = lab.coordinate(ms2, (1, 0, 0), (0, 1, 0), "tanh", 1.0)
    (r,) = lab.bel_gradient(f, rand(ms2, 1), rand(ms2, 2), 0.5, 3000, cfg, SPEC, CutoffSpec(1.2, 5.0),
                            weight="discrete")
    assert r.agrees_analytic and r.weight == "discrete"


def test_bel_guards(ms2):
    cfg = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2)
    args = (lab.constant(), rand(ms2, 1), rand(ms2, 2), 0.5, 4, cfg)
    with pytest.raises(DomainError):
        lab.bel_gradient(*args, NoiseSpec(0.25, 0.0), CutoffSpec(1.2, 5.0))
    with pytest.raises(DomainError):
        lab.bel_gradient(*args, SPEC, CutoffSpec(1.2, 5.0), weight="magic")
    mid = SimConfig(nu=1.0, dt=0.05, T=0.5, N=2, integrator="exp-midpoint")
    with pytest.raises(DomainError):
        lab.bel_gradient(lab.constant(), rand(ms2, 1), rand(ms2, 2), 0.5, 4, mid, SPEC, CutoffSpec(1.2, 5.0),
                         weight="discrete")


# ---------------------------------------------------------------- blow-up


def test_blowup_exponent():
    assert lab.blowup_exponent(1.2) == pytest.approx(4 / 1.4)
    assert lab.blowup_exponent(2.0) == 2.0
    assert lab.blowup_exponent(1.5, 0.2) == pytest.approx(2.5)
    with pytest.raises(DomainError):
        lab.blowup_exponent(1.5)


def test_blowup_without_noise_never_violates():
    rep = lab.blowup_mc(1.2, [4.0], 1.0, NoiseSpec(0.25, 0.0), 20, 0, N=1, dt=0.01, T_max=0.1,
                        T_grid=[0.05, 0.1], validation_samples=20)
    assert rep.inclusion_ok and rep.censored[4.0] and rep.event_counts[4.0] == 20


def test_blowup_small_run_and_guards():
    spec = NoiseSpec(1.25, 2.0)
    rep = lab.blowup_mc(1.2, [4.0, 5.0], 1.0, spec, 100, 1, N=1, dt=0.001, T_max=0.02,
                        T_grid=[0.005, 0.01, 0.02], tail_R=[1.0, 1.5], validation_samples=100)
    assert rep.inclusion_ok
    assert len(rep.tail_rows) == 6
    ps = {(r["R"], r["T"]): r["p"] for r in rep.tail_rows}
    assert ps[(1.0, 0.02)] >= ps[(1.5, 0.02)] and ps[(1.0, 0.02)] >= ps[(1.0, 0.005)]
    with pytest.raises(DomainError):
        lab.blowup_mc(0.4, [4.0], 1.0, spec, 10, 0)
    with pytest.raises(DomainError):
        lab.blowup_mc(1.2, [4.0], 1.0, spec, 10, 0, x=rand(mode_set(2), 0) * 100)
