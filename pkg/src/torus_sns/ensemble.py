"""Vectorised Monte Carlo over Stokes paths.

Replicas are processed in chunks, all in lockstep.  Replica ``r`` draws its
noise from the per-replica stream of :mod:`torus_sns.rng`, so its path is the
same whatever the chunk size, and replica 0 reproduces
``sample_z_path(..., seed)`` exactly.  Several initial conditions ("systems")
can be advanced on the same paths, which gives common random numbers for
difference estimates.
"""

from __future__ import annotations

import numpy as np

from .dynamics import CutoffSpec, Propagator, SimConfig, _inner, _norm
from .errors import DomainError, NumericAbort
from .noise import NoiseSpec, OUStep
from .rng import ReplicaStreams
from .spectral import SpectralField, mode_set

__all__ = [
    "Observer", "run_ensemble", "MartingaleReport", "martingale_statistic", "MildBoundReport",
    "mild_bound_constant", "continuity_trend", "DEFAULT_CHUNK",
]

DEFAULT_CHUNK = 1000


class Observer:
    """Callbacks receiving the ensemble state.

    ``step`` is called at ``t_i`` for ``i < n`` with the increment ``dW`` of
    the cylindrical Wiener process over ``[t_i, t_{i+1}]``; ``final`` at
    ``t_n``.  ``u`` has shape ``(S, B, M, 3)``, ``z`` and ``dW`` ``(B, M, 3)``,
    tangents ``w`` ``(S, B, M, 3)`` or None.
    """

    def begin_chunk(self, replicas: np.ndarray) -> None:
        pass

    def step(self, i: int, t: float, u, z, dW, w) -> None:
        pass

    def final(self, t: float, u, z, w) -> None:
        pass


def _as_systems(xs, ms) -> np.ndarray:
    if isinstance(xs, SpectralField):
        xs = xs.coeffs
    elif isinstance(xs, (list, tuple)):
        xs = np.stack([x.coeffs if isinstance(x, SpectralField) else x for x in xs])
    xs = np.asarray(xs, dtype=complex)
    if xs.ndim == 2:
        xs = xs[None]
    if xs.shape[1:] != (len(ms), 3):
        raise DomainError("initial conditions do not match the truncation")
    return xs


def run_ensemble(
    xs,
    config: SimConfig,
    spec: NoiseSpec,
    samples: int,
    observers,
    cutoff: CutoffSpec | None = None,
    tangents=None,
    chunk: int = DEFAULT_CHUNK,
    replica_offset: int = 0,
) -> None:
    """Advance every system in ``xs`` along ``samples`` independent Stokes paths.

    ``tangents`` (same shape as ``xs``) switches on the tangent flow of each
    system in the given direction.  Observers see the state at every step.
    """
    ms = mode_set(config.N)
    xs = _as_systems(xs, ms)
    ws0 = None if tangents is None else _as_systems(tangents, ms)
    if ws0 is not None and ws0.shape != xs.shape:
        raise DomainError("need one tangent direction per system")
    if samples < 1:
        raise DomainError("need at least one sample")
    r = config.noise_substeps
    ou = OUStep(ms, spec, config.nu, config.dt / r)
    prop = Propagator(ms, config.nu, config.dt, config.integrator, cutoff, config.nonlinear, config.bilinear)
    mid = config.integrator == "exp-midpoint"
    n, dt = config.n_steps, config.dt
    M = len(ms)
    # keep the noise buffer around 32 MB
    for c0 in range(0, samples, chunk):
        reps = np.arange(c0, min(samples, c0 + chunk)) + replica_offset
        B = len(reps)
        block = int(max(1, min(64, 4e6 / (B * M * 8 * r))))
        streams = ReplicaStreams(config.seed, reps, block=block * r)
        for ob in observers:
            ob.begin_chunk(reps)
        z = np.zeros((B, M, 3), dtype=complex)
        v = np.broadcast_to(xs[:, None], (len(xs), B, M, 3)).copy()
        w = None if ws0 is None else np.broadcast_to(ws0[:, None], v.shape).copy()
        for i in range(n):
            zs, dW = z, 0.0
            zh = None
            for j in range(r):
                zs, inc = ou.apply(zs, streams.next(ou.draw_shape))
                dW = dW + inc
                if mid and j == r // 2 - 1:
                    zh = zs
            u = v + z
            for ob in observers:
                ob.step(i, i * dt, u, z, dW, w)
            if w is None:
                v = prop.step(v, z, zh)
            else:
                v, w = prop.tangent_step(v, w, z, zh)
            if not np.all(np.isfinite(v)):
                raise NumericAbort(f"non-finite ensemble state at t={(i + 1) * dt}")
            z = zs
        for ob in observers:
            ob.final(n * dt, v + z, z, w)


# ---------------------------------------------------------------------------
# Martingale diagnostic
# ---------------------------------------------------------------------------


class _MartingaleObserver(Observer):
    def __init__(self, phi, nu, prop, dt):
        self.phi, self.nu, self.prop, self.dt = phi, nu, prop, dt
        self.ones = np.ones(len(phi))
        self.Aphi = phi * prop.ms.k2[:, None]
        self.values = []

    def begin_chunk(self, replicas):
        self.acc = np.zeros(len(replicas))
        self.prev = None

    def _drift(self, u):
        # -nu <u, A phi> + <B(u, phi), u>
        return -self.nu * _inner(u, self.Aphi, self.ones) + _inner(self.prop.B(u, np.broadcast_to(self.phi, u.shape)), u, self.ones)

    def step(self, i, t, u, z, dW, w):
        u = u[0]
        if i == 0:
            self.u0 = u.copy()
            self.prev = self._drift(u)
        else:
            cur = self._drift(u)
            self.acc += 0.5 * self.dt * (self.prev + cur)
            self.prev = cur

    def final(self, t, u, z, w):
        u = u[0]
        cur = self._drift(u)
        self.acc += 0.5 * self.dt * (self.prev + cur)
        m = _inner(u - self.u0, self.phi, self.ones) - self.acc
        self.values.append(m)


class MartingaleReport:
    def __init__(self, values, expected_var, t):
        self.values = np.asarray(values)
        self.t = t
        n = len(self.values)
        self.mean = float(self.values.mean())
        self.mean_se = float(self.values.std(ddof=1) / np.sqrt(n))
        self.var = float(self.values.var(ddof=1))
        # standard error of the sample variance from the fourth moment
        c = self.values - self.mean
        self.var_se = float(np.sqrt(max(np.mean(c**4) - self.var**2, 0.0) / n))
        self.expected_var = float(expected_var)

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean) <= 3 * self.mean_se

    @property
    def var_ok(self) -> bool:
        return abs(self.var - self.expected_var) <= 3 * self.var_se

    def as_dict(self) -> dict:
        return {
            "t": self.t, "mean": self.mean, "mean_se": self.mean_se, "var": self.var,
            "var_se": self.var_se, "expected_var": self.expected_var,
            "mean_ok": self.mean_ok, "var_ok": self.var_ok,
        }


def martingale_statistic(phi: SpectralField, x: SpectralField, config: SimConfig, spec: NoiseSpec,
                         samples: int, chunk: int = DEFAULT_CHUNK) -> MartingaleReport:
    """Ensemble statistics of ``<u_t - u_0, phi> + nu int <u, A phi> - int <B(u, phi), u>``.

    The mean should vanish and the variance equal ``t ||Q^{1/2} phi||_H^2``.
    Time integrals use the trapezoidal rule on the step grid.
    """
    ms = mode_set(config.N)
    prop = Propagator(ms, config.nu, config.dt, config.integrator, None, config.nonlinear, config.bilinear)
    ob = _MartingaleObserver(phi.coeffs, config.nu, prop, config.dt)
    run_ensemble(x, config, spec, samples, [ob], chunk=chunk)
    q_half_phi = phi.coeffs * spec.sigma(ms)[:, None]
    expected = config.T * float(_norm(q_half_phi, np.ones(len(ms))) ** 2)
    return MartingaleReport(np.concatenate(ob.values), expected, config.T)


# ---------------------------------------------------------------------------
# Pathwise diagnostics
# ---------------------------------------------------------------------------


class _MildObserver(Observer):
    def __init__(self, w_beta, dt, exponent):
        self.w_beta, self.dt, self.exponent = w_beta, dt, exponent
        self.lhs, self.zsup = [], []

    def begin_chunk(self, replicas):
        self.cur = np.zeros(len(replicas))
        self.zmax = np.zeros(len(replicas))

    def step(self, i, t, u, z, dW, w):
        v = u[0] - z
        weight = min(t, 1.0) ** self.exponent if t > 0 else (1.0 if self.exponent == 0 else 0.0)
        np.maximum(self.cur, weight * _norm(v, self.w_beta), out=self.cur)
        np.maximum(self.zmax, _norm(z, self.w_beta), out=self.zmax)

    def final(self, t, u, z, w):
        self.step(None, t, u, z, None, w)
        self.lhs.append(self.cur)
        self.zsup.append(self.zmax)


class MildBoundReport:
    """Empirical constant in ``sup (t ^ 1)^{(beta-alpha)/2} ||v||_beta <= C (||x||_alpha + sup ||z||_beta)``."""

    def __init__(self, lhs, zsup, x_norm, alpha, beta):
        self.lhs = np.asarray(lhs)
        self.zsup = np.asarray(zsup)
        self.x_norm = float(x_norm)
        self.alpha, self.beta = alpha, beta
        self.ratios = self.lhs / (self.x_norm + self.zsup)
        self.constant = float(np.max(self.ratios))

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.constant))

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "x_norm": self.x_norm, "constant": self.constant,
                "median_ratio": float(np.median(self.ratios)), "samples": len(self.ratios)}


def mild_bound_constant(x: SpectralField, config: SimConfig, spec: NoiseSpec, samples: int,
                        alpha: float, beta: float, cutoff: CutoffSpec | None = None,
                        chunk: int = DEFAULT_CHUNK) -> MildBoundReport:
    """Largest ratio of the weighted ``V_beta`` norm of ``v`` to the data over an ensemble."""
    if beta < alpha:
        raise DomainError("need beta >= alpha")
    ms = mode_set(config.N)
    ob = _MildObserver(ms.k2**beta, config.dt, (beta - alpha) / 2)
    run_ensemble(x, config, spec, samples, [ob], cutoff=cutoff, chunk=chunk)
    return MildBoundReport(np.concatenate(ob.lhs), np.concatenate(ob.zsup), x.norm(alpha), alpha, beta)


class _FinalObserver(Observer):
    def __init__(self):
        self.u = []

    def final(self, t, u, z, w):
        self.u.append(u)


def continuity_trend(x: SpectralField, h: SpectralField, h_norms, config: SimConfig, spec: NoiseSpec,
                     alpha: float, beta: float, cutoff: CutoffSpec | None = None) -> dict:
    """``||u_{x+h}(T) - u_x(T)||_beta`` along a sequence of shrinking ``||h||_alpha`` on one Stokes path.

    The path is replica 0 of ``config.seed``.  Returns the distances and
    whether they decrease monotonically.
    """
    h_norms = [float(s) for s in h_norms]
    if any(b >= a for a, b in zip(h_norms, h_norms[1:])):
        raise DomainError("h_norms must be strictly decreasing")
    hn = h.norm(alpha)
    if hn == 0:
        raise DomainError("direction h must be non-zero")
    ms = mode_set(config.N)
    systems = np.stack([x.coeffs] + [x.coeffs + (s / hn) * h.coeffs for s in h_norms])
    ob = _FinalObserver()
    run_ensemble(systems, config, spec, 1, [ob], cutoff=cutoff)
    u = ob.u[0][:, 0]
    dist = [float(_norm(u[j + 1] - u[0], ms.k2**beta)) for j in range(len(h_norms))]
    return {"h_norms": h_norms, "distances": dist, "alpha": alpha, "beta": beta,
            "decreasing": all(b < a for a, b in zip(dist, dist[1:]))}
