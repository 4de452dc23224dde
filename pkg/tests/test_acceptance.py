"""Exit-criteria suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s``.  The Monte Carlo criteria go
through the experiment harness with its default parameters, so the same
numbers come out of ``torus-sns <kind> --seed S``.
"""

import math

import numpy as np
import pytest

from torus_sns.dynamics import CutoffSpec, SimConfig, energy_ledger, simulate, tangent_integrate
from torus_sns.harness import build_config, run_experiment, verify_run
from torus_sns.noise import NoiseSpec, OUStep, ou_step_variance, sample_z_path
from torus_sns.rng import generator
from torus_sns.spectral import (
    SpectralField,
    bilinear_B_direct,
    bilinear_B_fft,
    divergence_residual,
    mode_set,
    pairing,
    random_field,
)

pytestmark = pytest.mark.acceptance

# seeds of the harness runs
SEEDS = {"couple": 0, "blowup": 0, "tails": 7, "inequalities": 0, "feller": 5, "bel": 21}

_runs = {}


@pytest.fixture(scope="module")
def run_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance-runs")


def harness_run(root, kind, **params):
    key = (kind, tuple(sorted(params.items())))
    if key not in _runs:
        cfg = build_config({"kind": kind, "seed": SEEDS[kind], "params": params})
        _runs[key] = run_experiment(cfg, root)
    return _runs[key]


def _summary(man):
    import json
    import os

    with open(os.path.join(man.directory, "summary.json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------


def test_01_bilinear_oracle_equivalence(criterion):
    ms = mode_set(4)
    rng = generator(101)
    worst_rel, worst_skew = 0.0, 0.0
    for _ in range(100):
        decay = rng.uniform(0.5, 3.0)
        u, v = random_field(ms, decay, 1.0, rng), random_field(ms, decay, 1.0, rng)
        d, f = bilinear_B_direct(u, v), bilinear_B_fft(u, v)
        worst_rel = max(worst_rel, (d - f).norm() / f.norm())
        for B in (d, f):
            scale = B.norm() * v.norm()
            worst_skew = max(worst_skew, abs(pairing(B, v)) / scale)
    ok = worst_rel <= 1e-10 and worst_skew <= 1e-10
    criterion(1, ok, f"max rel diff {worst_rel:.2e}, max skew {worst_skew:.2e} (N=4, 100 pairs)")
    assert ok


def test_02_divergence_free_every_stage(criterion):
    ms = mode_set(8)
    x = random_field(ms, 2.0, 1.0, generator(2))
    x = x * (1.0 / x.norm(1.2))
    cfg = SimConfig(nu=1.0, dt=1e-3, T=1.0, N=8, seed=2, record_alphas=(1.2,))
    worst = {"z": 0.0, "B": 0.0, "v": 0.0, "u": 0.0}

    def monitor(stage, i, a):
        f = SpectralField(ms, a)
        nrm = f.norm()
        if nrm > 0:
            worst[stage] = max(worst[stage], float(divergence_residual(f)) / nrm)

    rec = simulate(x, cfg, CutoffSpec(1.2, 5.0), spec=NoiseSpec(0.25, 1.0), monitor=monitor)
    m = max(worst.values())
    ok = not rec.aborted and m <= 1e-12
    criterion(2, ok, "max |k.u_k|/|u|_H " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
              + " (N=8, 1000 steps)")
    assert ok


def test_03_ou_one_step_variance(criterion):
    ms = mode_set(8)
    spec, nu, dt, n = NoiseSpec(0.25, 1.0), 1.0, 0.01, 100_000
    picks = [(1, 0, 0), (1, 1, 1), (0, 3, 0), (3, 4, 0), (0, 0, 8)]
    idx = np.array([ms.index_of(k)[0] for k in picks])
    step = OUStep(ms, spec, nu, dt)
    # restrict the exact step to the selected modes (the transition is mode-diagonal)
    for name in ("decay", "rho", "resid"):
        setattr(step, name, getattr(step, name)[idx])
    step.basis = step.basis[idx]
    g = generator(3).standard_normal((n, len(idx), 2, 2, 2))
    z, _ = step.apply(np.zeros((n, len(idx), 3), dtype=complex), g)
    per = np.abs(z) ** 2
    s = per.sum(axis=-1) / 2  # mean |e . z_k|^2 over the two tangential directions
    want = ou_step_variance(spec, ms, nu, dt)[idx]
    # closed form, written out independently
    k2 = ms.k2[idx]
    sigma = spec.c0 * k2 ** (-(1.5 + 2 * spec.alpha0) / 2)
    oracle = sigma**2 * (1 - np.exp(-2 * nu * k2 * dt)) / (2 * nu * k2)
    np.testing.assert_allclose(want, oracle, rtol=1e-13)
    mean, se = s.mean(axis=0), s.std(axis=0, ddof=1) / math.sqrt(n)
    z_scores = (mean - oracle) / se
    ok = bool(np.all(np.abs(z_scores) <= 3))
    criterion(3, ok, "z-scores " + " ".join(f"|k|={math.sqrt(q):.2f}:{zs:+.2f}" for q, zs in zip(k2, z_scores))
              + f" ({n} draws)")
    assert ok


def test_04_energy_ledger_order(criterion):
    ms = mode_set(2)
    spec = NoiseSpec(0.25, 1.0)
    cut = CutoffSpec(1.2, 5.0)
    x = random_field(ms, 2.0, 1.0, generator(1))
    x = x * (5 / 3 / x.norm(1.2))
    T = 0.5
    zp = sample_z_path(np.arange(2049) * T / 2048, 1.0, spec, 2, 0)
    res = []
    for n in (32, 64, 128, 256):
        cfg = SimConfig(nu=1.0, dt=T / n, T=T, N=2, integrator="exp-euler")
        res.append(abs(energy_ledger(simulate(x, cfg, cut, z_path=zp), 0.0, T)))
    ratios = [a / b for a, b in zip(res, res[1:])]
    ok = all(r >= 1.8 for r in ratios)
    criterion(4, ok, "residual ratios per halving " + ", ".join(f"{r:.2f}" for r in ratios))
    assert ok


def test_05_weak_strong_coupling(criterion, run_root):
    man = harness_run(run_root, "couple")
    c = _summary(man)["constants"]
    ok = man.checks["pre_tau_within_10x_tolerance"]
    criterion(5, ok, f"max pre-tau/tolerance {c['max_pre_tau_over_tolerance']:.2e}, "
              f"{c['n_stopped']}/50 paths reach tau, max post-tau gap {c['max_post_tau_sup']:.3g}")
    assert ok


@pytest.mark.parametrize("alpha", [1.2, 2.0])
def test_06_blowup_inclusion_and_tail(criterion, run_root, alpha):
    man = harness_run(run_root, "blowup", alpha=alpha)
    s = _summary(man)
    ok = all(man.checks.values())
    c = s["constants"]
    criterion("6a" if alpha == 1.2 else "6b", ok,
              f"alpha={alpha}: c'={c['c_prime']['5']:.3g} at R=5, violations zero={man.checks['zero_violations']}, "
              f"slope {c['slope']:.3g}, r2 {c['r2']:.3f}")
    assert ok


def test_07_tail_law(criterion, run_root):
    man = harness_run(run_root, "tails")
    c = _summary(man)["constants"]
    ok = all(man.checks.values())
    criterion(7, ok, "slopes " + ", ".join(f"eps={e}: {v['slope']:.3g}" for e, v in c.items())
              + f", CI overlap={man.checks['slope_stable_under_eps_halving']}")
    assert ok


def test_08_tangent_finite_difference(criterion):
    ms = mode_set(2)
    spec = NoiseSpec(0.25, 1.0)
    cut = CutoffSpec(1.2, 5.0)
    cfg = SimConfig(nu=1.0, dt=0.01, T=0.5, N=2, snapshot_every=50)
    zp = sample_z_path(np.arange(51) * 0.01, 1.0, spec, 2, 3)
    x = random_field(ms, 2.0, 1.0, generator(1)) * 3
    h = random_field(ms, 2.0, 1.0, generator(2))
    tan = tangent_integrate(x, h, cfg, cut, z_path=zp).tangent[-1]
    base = simulate(x, cfg, cut, z_path=zp).u_snapshots[-1]
    errs = []
    for e in (1e-3, 1e-4, 1e-5):
        moved = simulate(x + h * e, cfg, cut, z_path=zp).u_snapshots[-1]
        errs.append(SpectralField(ms, (moved - base) / e - tan).norm(1.2))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(8 <= r <= 12 for r in ratios)
    criterion(8, ok, "errors " + ", ".join(f"{v:.2e}" for v in errs) + "; ratios " + ", ".join(f"{r:.2f}" for r in ratios))
    assert ok


def test_09_gradient_formula(criterion, run_root):
    nl = harness_run(run_root, "bel")
    lin = harness_run(run_root, "bel", nonlinear=False)
    ok_nl = all(v for k, v in nl.checks.items() if k.startswith("agrees_fd"))
    ok_lin = all(v for k, v in lin.checks.items() if k.startswith("agrees_analytic"))
    n_fd = sum(k.startswith("agrees_fd") for k in nl.checks)
    n_an = sum(k.startswith("agrees_analytic") for k in lin.checks)
    ok = ok_nl and ok_lin and n_fd == 3 and n_an >= 1
    criterion(9, ok, f"CRN difference agreement {sum(v for k, v in nl.checks.items() if k.startswith('agrees_fd'))}/{n_fd}, "
              f"linear closed form agreement {sum(v for k, v in lin.checks.items() if k.startswith('agrees_analytic'))}/{n_an}")
    assert ok


def test_10_inequality_lab(criterion, run_root):
    man = harness_run(run_root, "inequalities")
    tri = _summary(man)["constants"]["trilinear"]
    n_adm = sum(v["admissible"] for v in tri.values())
    ok = all(man.checks.values()) and n_adm >= 5
    criterion(10, ok, f"{n_adm} admissible triples bounded={man.checks['admissible_triples_bounded']}, "
              f"ball sum 6={man.checks['ball_sum_alpha0_k01_is_6']}, weight bound={man.checks['weight_bound_holds']}, "
              f"cut-off ratio finite={man.checks['cutoff_ratio_finite']}")
    assert ok


def test_11_feller_modulus(criterion, run_root):
    man = harness_run(run_root, "feller")
    c = _summary(man)["constants"]
    ok = all(man.checks.values()) and len(man.checks) == 2
    criterion(11, ok, ", ".join(f"{k}: {man.checks['no_doubling_' + k[10:]]} (max ratio {v:.3g})" for k, v in c.items()))
    assert ok


def test_12_manifest_reruns_are_byte_identical(criterion, run_root):
    kinds = [("couple", {}), ("blowup", {"alpha": 1.2}), ("tails", {}), ("inequalities", {})]
    bad = []
    for kind, params in kinds:
        man = harness_run(run_root, kind, **params)
        ok, diff = verify_run(man.directory)
        if not ok:
            bad.append((kind, sorted(diff)))
    ok = not bad
    criterion(12, ok, f"{len(kinds)} manifests re-run, mismatches: {bad or 'none'}")
    assert ok
