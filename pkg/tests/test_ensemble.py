import numpy as np
import pytest

from helpers import rand, single
from torus_sns.dynamics import CutoffSpec, SimConfig, simulate
from torus_sns.ensemble import Observer, continuity_trend, martingale_statistic, mild_bound_constant, run_ensemble
from torus_sns.errors import DomainError
from torus_sns.noise import NoiseSpec

SPEC = NoiseSpec(0.25)


class _Final(Observer):
    def __init__(self):
        self.u = []

    def final(self, t, u, z, w):
        self.u.append(u)


@pytest.mark.parametrize("integrator", ["exp-euler", "exp-midpoint"])
def test_replica_zero_is_the_single_path_run(ms2, integrator):
    x = rand(ms2, 1)
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.1, N=2, integrator=integrator, seed=5, snapshot_every=10)
    rec = simulate(x, cfg, CutoffSpec(1.2, 5.0), spec=SPEC)
    ob = _Final()
    run_ensemble(x, cfg, SPEC, 3, [ob], cutoff=CutoffSpec(1.2, 5.0))
    np.testing.assert_allclose(ob.u[0][0, 0], rec.u_snapshots[-1], rtol=1e-12, atol=1e-15)


def test_chunking_does_not_change_replicas(ms2):
    x = rand(ms2, 1)
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.05, N=2, seed=9)
    a, b = _Final(), _Final()
    run_ensemble(x, cfg, SPEC, 5, [a], chunk=5)
    run_ensemble(x, cfg, SPEC, 5, [b], chunk=2)
    assert np.array_equal(np.concatenate(a.u, axis=1), np.concatenate(b.u, axis=1))
    c = _Final()
    run_ensemble(x, cfg, SPEC, 2, [c], replica_offset=3)
    assert np.array_equal(c.u[0], np.concatenate(a.u, axis=1)[:, 3:])


def test_ensemble_input_checks(ms2):
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.05, N=2)
    with pytest.raises(DomainError):
        run_ensemble(rand(ms2, 0), cfg, SPEC, 0, [])
    with pytest.raises(DomainError):
        run_ensemble(np.zeros((2, 5, 3)), cfg, SPEC, 1, [])


def test_martingale_statistic(ms2):
    x = rand(ms2, 1)
    phi = single(ms2, (1, 0, 0), (0, 1, 0))
    cfg = SimConfig(nu=1.0, dt=0.005, T=0.2, N=2, seed=3)
    rep = martingale_statistic(phi, x, cfg, SPEC, 3000)
    assert rep.mean_ok and rep.var_ok, rep.as_dict()
    assert rep.expected_var == pytest.approx(0.2 * 2.0)  # t ||Q^{1/2} phi||^2, sigma_(1,0,0) = 1


def test_mild_bound_constant_finite(ms2):
    x = rand(ms2, 1)
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.2, N=2, seed=1)
    rep = mild_bound_constant(x, cfg, SPEC, 50, 1.2, 1.7, CutoffSpec(1.2, 5.0))
    assert rep.finite and rep.constant > 0 and len(rep.ratios) == 50
    with pytest.raises(DomainError):
        mild_bound_constant(x, cfg, SPEC, 5, 1.2, 1.0)


def test_continuity_trend(ms2):
    x, h = rand(ms2, 1), rand(ms2, 2)
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.2, N=2, seed=1)
    out = continuity_trend(x, h, [0.1, 0.05, 0.025], cfg, SPEC, 1.2, 1.2, CutoffSpec(1.2, 5.0))
    assert out["decreasing"]
    d = out["distances"]
    assert d[0] / d[1] == pytest.approx(2.0, rel=0.1)
    with pytest.raises(DomainError):
        continuity_trend(x, h, [0.1, 0.2], cfg, SPEC, 1.2, 1.2)
