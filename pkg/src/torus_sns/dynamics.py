"""Pathwise Galerkin dynamics: free and cut-off Navier-Stokes driven by a Stokes path.

The state is split as ``u = v + z`` with ``z`` the Stokes process.  Given a
sampled ``z`` path, ``v`` solves the random ODE

    dv/dt + nu A v + chi_R(||v + z||_alpha) B(v + z, v + z) = 0,

(``chi_R = 1`` for the free system).  The linear part is propagated exactly
per mode; the nonlinearity is explicit (exponential Euler, or a two-stage
exponential Runge-Kutta of stiff order 2 with a midpoint stage).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, NumericAbort
from .noise import NoiseSpec, ZPath, sample_z_path
from .spectral import ModeSet, SpectralField, _project_coeffs, _triad_sum_fft_sym, bilinear_coeffs, fft_plan, mode_set, resolve_bilinear

__all__ = [
    "chi",
    "chi_prime",
    "chi_R",
    "chi_R_prime",
    "CutoffSpec",
    "SimConfig",
    "Propagator",
    "rhs_v",
    "TrajectoryRecord",
    "simulate",
    "detect_stopping",
    "energy_ledger",
    "CouplingReport",
    "couple_and_compare",
    "TangentPath",
    "tangent_integrate",
    "UniquenessReport",
    "uniqueness_gap",
    "INTEGRATORS",
]

INTEGRATORS = ("exp-euler", "exp-midpoint")


# ---------------------------------------------------------------------------
# Smooth cut-off
# ---------------------------------------------------------------------------


def _psi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def chi(x):
    """Smooth non-increasing cut-off: 1 on [0, 1], 0 on [2, inf), 1/2 at 3/2.

    ``chi(x) = psi(2 - x) / (psi(2 - x) + psi(x - 1))`` with ``psi(s) = exp(-1/s)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi is defined on [0, inf)")
    a, b = _psi(2.0 - x), _psi(x - 1.0)
    out = np.where(x <= 1.0, 1.0, np.where(x >= 2.0, 0.0, a / np.where(a + b > 0, a + b, 1.0)))
    return float(out) if out.ndim == 0 else out


def chi_prime(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi is defined on [0, inf)")
    inside = (x > 1.0) & (x < 2.0)
    xi = np.where(inside, x, 1.5)
    a, b = _psi(2.0 - xi), _psi(xi - 1.0)
    d = -a * b * (1.0 / (2.0 - xi) ** 2 + 1.0 / (xi - 1.0) ** 2) / (a + b) ** 2
    out = np.where(inside, d, 0.0)
    return float(out) if out.ndim == 0 else out


def _check_R(R):
    if R < 1:
        raise DomainError(f"cut-off radius must satisfy R >= 1, got {R}")


def chi_R(x, R: float):
    _check_R(R)
    return chi(np.asarray(x, dtype=float) / R)


def chi_R_prime(x, R: float):
    """Derivative of ``x -> chi(x / R)``."""
    _check_R(R)
    return chi_prime(np.asarray(x, dtype=float) / R) / R


@dataclass(frozen=True)
class CutoffSpec:
    """Cut-off of the nonlinearity at ``||u||_alpha ~ R``."""

    alpha: float
    R: float

    def __post_init__(self):
        _check_R(self.R)

    def check_window(self, alpha0: float) -> None:
        """Raise unless ``1/2 < alpha < 1 + 2 alpha0`` (well-posedness window)."""
        if not 0.5 < self.alpha < 1.0 + 2.0 * alpha0:
            raise DomainError(
                f"alpha={self.alpha} outside (1/2, 1 + 2 alpha0) = (0.5, {1 + 2 * alpha0})"
            )


@dataclass(frozen=True)
class SimConfig:
    nu: float
    dt: float
    T: float
    N: int
    integrator: str = "exp-euler"
    seed: int = 0
    record_alphas: tuple = (0.0, 1.0)
    snapshot_every: int = 0
    nonlinear: bool = True
    bilinear: str = "auto"

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError("nu must be positive")
        if not 0 < self.dt < self.T:
            raise DomainError("need 0 < dt < T")
        if self.N < 1:
            raise DomainError("N must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise DomainError(f"integrator must be one of {INTEGRATORS}")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise DomainError(f"T={self.T} is not a whole number of steps dt={self.dt}")
        object.__setattr__(self, "record_alphas", tuple(float(a) for a in self.record_alphas))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def noise_substeps(self) -> int:
        """Stokes-path points needed per step (midpoint stage needs t + dt/2)."""
        return 2 if self.integrator == "exp-midpoint" else 1

    def fingerprint(self, **extra) -> str:
        doc = dict(asdict(self), **extra)
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def _phi1(z):
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def _phi2(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 0.0, z)
    out = np.where(small, 0.0, (np.expm1(zs) - zs) / np.where(small, 1.0, zs) ** 2)
    ser = 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720
    return np.where(small, ser, out)


def _norm(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0 * np.einsum("m,...mi->...", w, u.real**2 + u.imag**2))


def _inner(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return 2.0 * np.einsum("m,...mi->...", w, (u * np.conj(v)).real)


class Propagator:
    """One-step maps for ``v`` (and its tangent) on a fixed truncation.

    Arrays carry arbitrary leading batch axes; ``z`` arguments broadcast
    against ``v``.
    """

    def __init__(self, ms: ModeSet, nu: float, dt: float, integrator: str = "exp-euler",
                 cutoff: CutoffSpec | None = None, nonlinear: bool = True, bilinear: str = "auto"):
        if integrator not in INTEGRATORS:
            raise DomainError(f"integrator must be one of {INTEGRATORS}")
        self.ms, self.nu, self.dt = ms, float(nu), float(dt)
        self.integrator, self.cutoff = integrator, cutoff
        if bilinear == "auto":
            bilinear = resolve_bilinear(ms.N)
        if bilinear not in ("fft", "direct"):
            raise DomainError(f"unknown bilinear method {bilinear!r}")
        self.nonlinear, self.method = nonlinear, bilinear
        lam = nu * ms.k2
        self.lam = lam
        x = -lam * dt
        self.E = np.exp(x)[:, None]
        self.E_half = np.exp(x / 2)[:, None]
        self.f_euler = (dt * _phi1(x))[:, None]
        self.f_half = (0.5 * dt * _phi1(x / 2))[:, None]
        self.f_b1 = (dt * (_phi1(x) - 2.0 * _phi2(x)))[:, None]
        self.f_b2 = (dt * 2.0 * _phi2(x))[:, None]
        self.w_alpha = ms.k2 ** cutoff.alpha if cutoff is not None else None
        if bilinear == "fft":
            fft_plan(ms.N)

    # -- nonlinearity ---------------------------------------------------
    def B(self, u, v=None):
        return bilinear_coeffs(u, v, self.ms, self.method)

    def B_sym(self, u, w):
        """``B(u, w) + B(w, u)``."""
        if self.method == "fft":
            s = _triad_sum_fft_sym(u, w, fft_plan(self.ms.N))
            return 1j * _project_coeffs(s, self.ms)
        return self.B(u, w) + self.B(w, u)

    def chi_factor(self, u):
        """``(chi_R(||u||_alpha), ||u||_alpha)``; ``(1, nan)`` without cut-off."""
        if self.cutoff is None:
            return np.ones(u.shape[:-2]), None
        nrm = _norm(u, self.w_alpha)
        return chi_R(nrm, self.cutoff.R), nrm

    def N_of(self, u):
        """Nonlinear part of the vector field, ``-chi B(u, u)``, plus ``(chi, norm, Buu)``."""
        if not self.nonlinear:
            return np.zeros_like(u), (np.ones(u.shape[:-2]), None, np.zeros_like(u))
        Buu = self.B(u)
        c, nrm = self.chi_factor(u)
        return -np.asarray(c)[..., None, None] * Buu, (c, nrm, Buu)

    def DN(self, u, w, cache):
        """Derivative of ``-chi_R(||u||) B(u,u)`` at ``u`` in direction ``w``."""
        if not self.nonlinear:
            return np.zeros(np.broadcast_shapes(u.shape, w.shape), dtype=complex)
        c, nrm, Buu = cache
        out = -np.asarray(c)[..., None, None] * self.B_sym(u, w)
        if self.cutoff is not None:
            safe = np.where(nrm > 0, nrm, 1.0)
            dchi = np.where(nrm > 0, chi_R_prime(nrm, self.cutoff.R), 0.0)
            coef = dchi * _inner(u, w, self.w_alpha) / safe
            out = out - coef[..., None, None] * Buu
        return out

    # -- steps ----------------------------------------------------------
    def step(self, v, z0, zh=None, with_cache=False):
        """Advance ``v`` by one step; ``zh`` is z at the half step (midpoint only)."""
        u0 = v + z0
        n0, cache0 = self.N_of(u0)
        if self.integrator == "exp-euler":
            out = self.E * v + self.f_euler * n0
            return (out, cache0) if with_cache else out
        va = self.E_half * v + self.f_half * n0
        na, _ = self.N_of(va + zh)
        out = self.E * v + self.f_b1 * n0 + self.f_b2 * na
        return (out, cache0) if with_cache else out

    def tangent_step(self, v, w, z0, zh=None):
        """Advance base state ``v`` and tangent ``w`` together (exact discrete linearisation)."""
        u0 = v + z0
        n0, cache0 = self.N_of(u0)
        d0 = self.DN(u0, w, cache0)
        if self.integrator == "exp-euler":
            return self.E * v + self.f_euler * n0, self.E * w + self.f_euler * d0
        va = self.E_half * v + self.f_half * n0
        wa = self.E_half * w + self.f_half * d0
        ua = va + zh
        na, cachea = self.N_of(ua)
        da = self.DN(ua, wa, cachea)
        return (self.E * v + self.f_b1 * n0 + self.f_b2 * na,
                self.E * w + self.f_b1 * d0 + self.f_b2 * da)


def rhs_v(v: SpectralField, z: SpectralField, cutoff: CutoffSpec | None, nu: float,
          nonlinear: bool = True, bilinear: str = "auto") -> SpectralField:
    """``-nu A v - [chi_R(||v+z||_alpha) or 1] B(v+z, v+z)``."""
    ms = v.mode_set
    prop = Propagator(ms, nu, 1.0, cutoff=cutoff, nonlinear=nonlinear, bilinear=bilinear)
    n, _ = prop.N_of(v.coeffs + z.coeffs)
    return SpectralField(ms, -nu * ms.k2[:, None] * v.coeffs + n)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Sampled run of the (free or cut-off) system along one Stokes path."""

    times: np.ndarray
    norms: dict
    kinetic: np.ndarray  # 1/2 ||v||_H^2
    dissipation: np.ndarray  # nu ||v||_V^2 (density)
    work: np.ndarray  # chi_R(||u||_alpha) <z, B(u, v)> (density)
    chi_values: np.ndarray
    nu: float
    seed: int | None
    fingerprint: str
    cutoff: CutoffSpec | None
    snapshot_times: np.ndarray | None = None
    u_snapshots: np.ndarray | None = None
    v_snapshots: np.ndarray | None = None
    aborted: bool = False
    abort_time: float | None = None
    mode_set: ModeSet | None = field(default=None, repr=False)

    def u_field(self, i: int) -> SpectralField:
        return SpectralField(self.mode_set, self.u_snapshots[i])

    def ledger_columns(self) -> dict:
        """Cumulative ledger terms (trapezoidal in time) from ``t = 0``."""
        dt = np.diff(self.times)
        cum = lambda f: np.concatenate([[0.0], np.cumsum(0.5 * dt * (f[1:] + f[:-1]))])
        diss, work = cum(self.dissipation), cum(self.work)
        return {
            "kinetic": self.kinetic,
            "dissipation": diss,
            "work": work,
            "residual": self.kinetic + diss - work - self.kinetic[0],
        }

    def write_csv(self, path) -> None:
        ledger = self.ledger_columns()
        keys = [f"norm_{a:g}" for a in self.norms]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", *keys, "chi", "kinetic", "dissipation", "work", "residual"])
            for i, t in enumerate(self.times):
                wr.writerow(
                    [repr(float(t))]
                    + [repr(float(self.norms[a][i])) for a in self.norms]
                    + [repr(float(self.chi_values[i]))]
                    + [repr(float(ledger[c][i])) for c in ("kinetic", "dissipation", "work", "residual")]
                )


def _resolve_path(config: SimConfig, z_path: ZPath | None, spec: NoiseSpec | None) -> tuple[ZPath, int]:
    """Return the Stokes path and its refinement factor relative to the step."""
    if z_path is None:
        if spec is None:
            raise DomainError("need a NoiseSpec or a sampled z_path")
        r = config.noise_substeps
        grid = np.arange(config.n_steps * r + 1) * (config.dt / r)
        z_path = sample_z_path(grid, config.nu, spec, config.N, config.seed)
    if z_path.mode_set.N != config.N:
        raise DomainError("z_path truncation does not match the configuration")
    n_sub = len(z_path.times) - 1
    r = n_sub // config.n_steps if config.n_steps else 0
    if r < 1 or r * config.n_steps != n_sub or r % config.noise_substeps:
        raise DomainError("z_path grid must refine the simulation grid (midpoint: by an even factor)")
    if not np.allclose(z_path.times[::r], np.arange(config.n_steps + 1) * config.dt, rtol=0, atol=1e-12 * config.T):
        raise DomainError("z_path grid does not line up with the simulation grid")
    return z_path, r


def simulate(x: SpectralField, config: SimConfig, cutoff: CutoffSpec | None = None,
             z_path: ZPath | None = None, spec: NoiseSpec | None = None, monitor=None,
             strict: bool = False) -> TrajectoryRecord:
    """Integrate ``v`` from ``v(0) = x`` along a Stokes path; record ``u = v + z``.

    ``monitor(stage, step, array)`` is called after every pipeline stage
    (``"z"``, ``"B"``, ``"v"``, ``"u"``).  Non-finite values stop the run and
    set ``aborted`` (or raise :class:`NumericAbort` when ``strict``).
    """
    ms = mode_set(config.N)
    if x.mode_set != ms:
        raise DomainError("initial condition truncation does not match the configuration")
    z_path, r = _resolve_path(config, z_path, spec)
    prop = Propagator(ms, config.nu, config.dt, config.integrator, cutoff, config.nonlinear, config.bilinear)
    n = config.n_steps
    alphas = config.record_alphas
    weights = {a: ms.k2**a for a in alphas}
    w_alpha = ms.k2**cutoff.alpha if cutoff is not None else None

    times = np.arange(n + 1) * config.dt
    norms = {a: np.full(n + 1, np.nan) for a in alphas}
    kinetic, diss, work, chis = (np.full(n + 1, np.nan) for _ in range(4))
    every = config.snapshot_every
    snap_idx = list(range(0, n + 1, every)) if every else []
    if every and snap_idx[-1] != n:
        snap_idx.append(n)
    u_snaps = np.zeros((len(snap_idx), len(ms), 3), dtype=complex) if every else None
    v_snaps = np.zeros_like(u_snaps) if every else None
    snap_pos = {j: i for i, j in enumerate(snap_idx)}

    def observe(i, v, z, cache):
        u = v + z
        for a in alphas:
            norms[a][i] = _norm(u, weights[a])
        kinetic[i] = 0.5 * _norm(v, np.ones(len(ms))) ** 2
        diss[i] = config.nu * _norm(v, ms.k2) ** 2
        c, _, Buu = cache
        if config.nonlinear:
            Bv = Buu - prop.B(u, z)  # B(u, v) = B(u, u) - B(u, z)
            work[i] = float(c) * _inner(z, Bv, np.ones(len(ms)))
        else:
            work[i] = 0.0
        chis[i] = float(c)
        if i in snap_pos:
            u_snaps[snap_pos[i]] = u
            v_snaps[snap_pos[i]] = v
        if monitor is not None:
            monitor("u", i, u)

    v = x.coeffs.copy()
    aborted, abort_time = False, None
    for i in range(n):
        z0 = z_path.z[i * r]
        zh = z_path.z[i * r + r // 2] if config.integrator == "exp-midpoint" else None
        if monitor is not None:
            monitor("z", i, z0)
        v_next, cache = prop.step(v, z0, zh, with_cache=True)
        if monitor is not None:
            monitor("B", i, cache[2])
        observe(i, v, z0, cache)
        if not np.all(np.isfinite(v_next)):
            aborted, abort_time = True, float(times[i + 1])
            if strict:
                raise NumericAbort(f"non-finite state at t={abort_time}")
            break
        v = v_next
        if monitor is not None:
            monitor("v", i + 1, v)
    if not aborted:
        zn = z_path.z[n * r]
        _, cache = prop.N_of(v + zn)
        observe(n, v, zn, cache)
    return TrajectoryRecord(
        times=times, norms=norms, kinetic=kinetic, dissipation=diss, work=work, chi_values=chis,
        nu=config.nu, seed=z_path.seed, fingerprint=config.fingerprint(cutoff=cutoff and asdict(cutoff)),
        cutoff=cutoff, snapshot_times=times[snap_idx] if every else None,
        u_snapshots=u_snaps, v_snapshots=v_snaps, aborted=aborted, abort_time=abort_time, mode_set=ms,
    )


def detect_stopping(record: TrajectoryRecord, alpha: float, R: float) -> float:
    """First time ``||u||_alpha >= R``, linearly interpolated; ``inf`` if never."""
    key = float(alpha)
    if key not in record.norms:
        raise KeyError(f"alpha={alpha} was not recorded (have {sorted(record.norms)})")
    return first_crossing(record.times, record.norms[key], R)


def first_crossing(times: np.ndarray, values: np.ndarray, level: float) -> float:
    hit = np.nonzero(values >= level)[0]
    if len(hit) == 0:
        return math.inf
    i = hit[0]
    if i == 0:
        return float(times[0])
    y0, y1 = values[i - 1], values[i]
    return float(times[i - 1] + (level - y0) / (y1 - y0) * (times[i] - times[i - 1]))


def energy_ledger(record: TrajectoryRecord, s: float, t: float) -> float:
    """Residual of the energy balance between grid times ``s < t``."""
    tol = 1e-9 * max(1.0, float(record.times[-1]))

    def idx(time):
        j = int(np.argmin(np.abs(record.times - time)))
        if abs(record.times[j] - time) > tol:
            raise DomainError(f"time {time} is not on the record grid")
        return j

    i, j = idx(s), idx(t)
    if not i < j:
        raise DomainError("need s < t")
    tt = record.times[i : j + 1]
    trap = lambda f: float(np.sum(0.5 * np.diff(tt) * (f[i + 1 : j + 1] + f[i:j])))
    return record.kinetic[j] + trap(record.dissipation) - trap(record.work) - record.kinetic[i]


# ---------------------------------------------------------------------------
# Coupling and tangent flow
# ---------------------------------------------------------------------------


@dataclass
class CouplingReport:
    tau: float
    pre_tau_sup: float
    post_tau_sup: float
    local_tolerance: float
    n_pre: int
    seed: int | None

    @property
    def within_tolerance(self) -> bool:
        return self.pre_tau_sup <= 10.0 * self.local_tolerance


def step_doubling_error(x: SpectralField, config: SimConfig, cutoff: CutoffSpec | None,
                        z_path: ZPath, alpha: float) -> float:
    """``||one step - two half steps||_alpha`` from ``x`` at ``t = 0``.

    Needs a Stokes path refined at least 2x (4x for the midpoint rule).
    """
    r = (len(z_path.times) - 1) // config.n_steps
    need = 2 * config.noise_substeps
    if r % need:
        raise DomainError(f"step-doubling needs a z path refined by a multiple of {need}")
    ms = x.mode_set
    full = Propagator(ms, config.nu, config.dt, config.integrator, cutoff, config.nonlinear, config.bilinear)
    half = Propagator(ms, config.nu, config.dt / 2, config.integrator, cutoff, config.nonlinear, config.bilinear)
    z = z_path.z
    mid = config.integrator == "exp-midpoint"
    one = full.step(x.coeffs, z[0], z[r // 2] if mid else None)
    a = half.step(x.coeffs, z[0], z[r // 4] if mid else None)
    two = half.step(a, z[r // 2], z[3 * r // 4] if mid else None)
    return float(_norm(one - two, ms.k2**alpha))


def couple_and_compare(x: SpectralField, config: SimConfig, cutoff: CutoffSpec, spec: NoiseSpec,
                       z_path: ZPath | None = None) -> CouplingReport:
    """Run cut-off and free systems on one Stokes path and compare them around ``tau``."""
    if sobolev_norm_arr(x, cutoff.alpha) > cutoff.R:
        raise DomainError("need ||x||_alpha <= R")
    if z_path is None:
        r = 2 * config.noise_substeps
        grid = np.arange(config.n_steps * r + 1) * (config.dt / r)
        z_path = sample_z_path(grid, config.nu, spec, config.N, config.seed)
    cfg = SimConfig(**{**asdict(config), "snapshot_every": 1,
                       "record_alphas": tuple(sorted(set(config.record_alphas) | {cutoff.alpha}))})
    cut = simulate(x, cfg, cutoff, z_path)
    free = simulate(x, cfg, None, z_path)
    tau = detect_stopping(cut, cutoff.alpha, cutoff.R)
    w = x.mode_set.k2**cutoff.alpha
    diff = _norm(cut.u_snapshots - free.u_snapshots, w)
    pre = cut.times <= tau
    tol = step_doubling_error(x, config, None, z_path, cutoff.alpha)
    return CouplingReport(
        tau=tau,
        pre_tau_sup=float(diff[pre].max()) if pre.any() else 0.0,
        post_tau_sup=float(diff[~pre].max()) if (~pre).any() else 0.0,
        local_tolerance=tol,
        n_pre=int(pre.sum()),
        seed=z_path.seed,
    )


def sobolev_norm_arr(x: SpectralField, alpha: float) -> float:
    return float(_norm(x.coeffs, x.mode_set.k2**alpha))


@dataclass
class TangentPath:
    times: np.ndarray
    u: np.ndarray  # (n+1, M, 3)
    tangent: np.ndarray  # (n+1, M, 3)
    mode_set: ModeSet

    def tangent_field(self, i: int) -> SpectralField:
        return SpectralField(self.mode_set, self.tangent[i])

    def u_field(self, i: int) -> SpectralField:
        return SpectralField(self.mode_set, self.u[i])


def tangent_integrate(x: SpectralField, h: SpectralField, config: SimConfig,
                      cutoff: CutoffSpec | None = None, z_path: ZPath | None = None,
                      spec: NoiseSpec | None = None) -> TangentPath:
    """Derivative of the flow in direction ``h``, integrated along the base path from ``x``.

    The tangent is advanced by the exact linearisation of the integrator, so
    it is the derivative of the discrete flow map.
    """
    ms = mode_set(config.N)
    z_path, r = _resolve_path(config, z_path, spec)
    prop = Propagator(ms, config.nu, config.dt, config.integrator, cutoff, config.nonlinear, config.bilinear)
    n = config.n_steps
    us = np.zeros((n + 1, len(ms), 3), dtype=complex)
    ws = np.zeros_like(us)
    v, w = x.coeffs.copy(), h.coeffs.copy()
    us[0], ws[0] = v + z_path.z[0], w
    for i in range(n):
        z0 = z_path.z[i * r]
        zh = z_path.z[i * r + r // 2] if config.integrator == "exp-midpoint" else None
        v, w = prop.tangent_step(v, w, z0, zh)
        us[i + 1], ws[i + 1] = v + z_path.z[(i + 1) * r], w
    return TangentPath(np.arange(n + 1) * config.dt, us, ws, ms)


# ---------------------------------------------------------------------------
# Uniqueness diagnostic
# ---------------------------------------------------------------------------


@dataclass
class UniquenessReport:
    dts: list
    gaps: list  # ||u_euler(T) - u_midpoint(T)||_alpha per dt
    alpha: float

    @property
    def converging(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))


def uniqueness_gap(x: SpectralField, config: SimConfig, cutoff: CutoffSpec | None, spec: NoiseSpec,
                   refinements: int = 3, alpha: float | None = None) -> UniquenessReport:
    """Distance at ``T`` between exponential Euler and midpoint runs from one ``(x, z)``.

    Both integrators are consistent, so if the system has a unique solution
    the gap shrinks as ``dt`` is halved ``refinements`` times.  All runs use
    one Stokes path sampled on the finest grid.
    """
    if refinements < 1:
        raise DomainError("need at least one refinement")
    alpha = (cutoff.alpha if cutoff is not None else 1.0) if alpha is None else alpha
    finest = config.n_steps * 2 ** (refinements - 1)
    r = 2  # midpoint stage
    grid = np.arange(finest * r + 1) * (config.T / (finest * r))
    z_path = sample_z_path(grid, config.nu, spec, config.N, config.seed)
    w = x.mode_set.k2**alpha
    dts, gaps = [], []
    for j in range(refinements):
        dt = config.dt / 2**j
        final = []
        for integ in INTEGRATORS:
            cfg = SimConfig(**{**asdict(config), "dt": dt, "integrator": integ, "snapshot_every": 0})
            u = _final_u(x, cfg, cutoff, z_path.subsample(2 ** (refinements - 1 - j)))
            if not np.all(np.isfinite(u)):
                raise NumericAbort(f"{integ} run with dt={dt} produced a non-finite state")
            final.append(u)
        dts.append(dt)
        gaps.append(float(_norm(final[0] - final[1], w)))
    return UniquenessReport(dts, gaps, alpha)


def _final_u(x: SpectralField, config: SimConfig, cutoff, z_path: ZPath) -> np.ndarray:
    z_path, r = _resolve_path(config, z_path, None)
    prop = Propagator(x.mode_set, config.nu, config.dt, config.integrator, cutoff, config.nonlinear, config.bilinear)
    v = x.coeffs.copy()
    mid = config.integrator == "exp-midpoint"
    for i in range(config.n_steps):
        v = prop.step(v, z_path.z[i * r], z_path.z[i * r + r // 2] if mid else None)
    return v + z_path.z[config.n_steps * r]
