"""Numerical probes of the quantitative estimates behind the cut-off construction.

Deterministic checks (bilinear inequality, lattice series, the weight
function bound, cut-off regularity) and Monte Carlo probes (transition
semigroup, strong-Feller modulus, gradient formula, blow-up time).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .dynamics import CutoffSpec, Propagator, SimConfig, _inner, _norm, chi, first_crossing
from .ensemble import DEFAULT_CHUNK, Observer, run_ensemble
from .errors import DomainError, HypothesisWarning
from .noise import NoiseSpec, wilson_interval
from .rng import STREAM_FIELDS, STREAM_TRIALS, generator, replica_generator
from .spectral import ModeSet, SpectralField, _project_coeffs, bilinear_coeffs, fft_plan, leray_project, mode_set

__all__ = [
    "InequalityReport",
    "trilinear_admissible",
    "trilinear_check",
    "DeltaResult",
    "smoothing_exponent",
    "ball_sum",
    "ball_sum_bound",
    "shell_sum",
    "shell_sum_hypotheses",
    "shell_sum_annulus_check",
    "WeightBoundReport",
    "weight_bound_check",
    "cutoff_regularity_ratio",
    "Functional",
    "constant",
    "coordinate",
    "clipped_norm",
    "smooth_norm",
    "parse_functional",
    "SemigroupEstimate",
    "transition_estimate",
    "FellerReport",
    "feller_modulus",
    "BELResult",
    "bel_gradient",
    "BlowupReport",
    "blowup_exponent",
    "blowup_mc",
]


# ---------------------------------------------------------------------------
# Bilinear inequality  <B(u,v),w> <= c ||u||_a ||v||_b ||w||_{c+1}
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    params: tuple
    constant: float  # max observed ratio
    trials: int  # trials actually used (zero denominators skipped)
    N: int
    admissible: bool
    reason: str
    running_max: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "params": list(self.params), "constant": self.constant, "trials": self.trials,
            "N": self.N, "admissible": self.admissible, "reason": self.reason,
        }


def trilinear_admissible(a: float, b: float, c: float) -> tuple[bool, str]:
    """Sufficient condition for the bilinear inequality to hold with a finite constant."""
    lo = max(-c, 0.0)
    if a < lo or b < lo:
        return False, f"need a, b >= max(-c, 0) = {lo}"
    total = 2.0 * (a + b + c)
    if any(abs(q - 1.5) < 1e-12 for q in (a, b, c)):
        if total <= 3.0:
            return False, "need 2(a+b+c) > 3 when one exponent equals 3/2"
        return True, "2(a+b+c) > 3"
    if total < 3.0:
        return False, "need 2(a+b+c) >= 3"
    return True, "2(a+b+c) >= 3"


def _trial_fields(ms: ModeSet, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` random divergence-free fields with varied spectral shape.

    Each field gets a random power-law slope and, half of the time, is
    restricted to a random shell of wavenumbers, so both broadband and
    scale-localised inputs are probed.
    """
    out = np.empty((n, len(ms), 3), dtype=complex)
    kmax = ms.kabs.max()
    for j in range(n):
        slope = rng.uniform(-1.0, 4.0)
        g = rng.standard_normal((len(ms), 3)) + 1j * rng.standard_normal((len(ms), 3))
        c = ms.kabs[:, None] ** (-slope) * g
        if rng.random() < 0.5:
            lo = rng.uniform(1.0, kmax)
            width = rng.uniform(0.5, 2.0)
            c[(ms.kabs < lo) | (ms.kabs > lo + width)] = 0.0
        out[j] = c
    return _project_coeffs(out, ms)


def _grad_u(v: np.ndarray, w: np.ndarray, ms: ModeSet) -> np.ndarray:
    """Gradient in ``u`` of ``<B(u,v),w>``: the projection of ``sum_i w_i grad v_i``."""
    plan = fft_plan(ms.N)
    wp = plan.to_physical(w)  # (..., 3, n, n, n)
    kv = ms.kvec
    g = 0.0
    for i in range(3):
        dv = plan.to_physical(1j * kv * v[..., i : i + 1])  # d_j v_i, (..., 3 [j], n, n, n)
        g = g + wp[..., i : i + 1, :, :, :] * dv
    return _project_coeffs(np.moveaxis(plan.gather(g), -2, -1), ms)


def _ascent(u, v, w, a, b, c, ms, iters):
    """Block-coordinate ascent of ``<B(u,v),w>`` over the three weighted unit spheres."""
    def unit(x, q):
        n = _norm(x, ms.k2**q)[..., None, None]
        return x / np.where(n > 0, n, 1.0)

    inv = lambda q: ms.k2[:, None] ** (-q)
    u, v = unit(u, a), unit(v, b)
    for _ in range(iters):
        w = unit(bilinear_coeffs(u, v, ms, "auto") * inv(c + 1), c + 1)
        u = unit(_grad_u(v, w, ms) * inv(a), a)
        v = unit(-bilinear_coeffs(u, w, ms, "auto") * inv(b), b)
    return u, v, w


def trilinear_check(a: float, b: float, c: float, trials: int, N: int, seed: int,
                  iters: int = 15) -> InequalityReport:
    """Largest ``|<B(u,v),w>| / (||u||_a ||v||_b ||w||_{c+1})`` found from random starts.

    Each trial starts from random fields of varied spectral shape and climbs
    the ratio by exact block-coordinate maximisation (``iters`` sweeps; 0
    keeps the raw random ratio).  Trial ``t`` draws from its own stream, so
    the running maximum over the first ``n`` trials does not depend on the
    total count.
    """
    ms = mode_set(N)
    ok, reason = trilinear_admissible(a, b, c)
    ratios = np.full(trials, np.nan)
    batch = 16
    ones = np.ones(len(ms))
    for t0 in range(0, trials, batch):
        idx = range(t0, min(trials, t0 + batch))
        fields = np.stack([_trial_fields(ms, replica_generator(seed, t, STREAM_TRIALS), 3) for t in idx])
        u, v, w = fields[:, 0], fields[:, 1], fields[:, 2]
        den0 = _norm(u, ones) * _norm(v, ones)
        if iters:
            u, v, w = _ascent(u, v, w, a, b, c, ms, iters)
        num = np.abs(_inner(bilinear_coeffs(u, v, ms, "auto"), w, ones))
        den = _norm(u, ms.k2**a) * _norm(v, ms.k2**b) * _norm(w, ms.k2 ** (c + 1))
        good = (den > 0) & (den0 > 0)
        r = np.full(len(idx), np.nan)
        r[good] = num[good] / den[good]
        ratios[t0 : t0 + len(idx)] = r
    valid = ratios[~np.isnan(ratios)]
    running = np.maximum.accumulate(valid) if len(valid) else np.zeros(0)
    return InequalityReport(
        params=(a, b, c), constant=float(running[-1]) if len(valid) else 0.0, trials=len(valid),
        N=N, admissible=ok, reason=reason, running_max=running,
    )


def trilinear_ratio(u: SpectralField, v: SpectralField, w: SpectralField, a: float, b: float, c: float):
    """Single-trial ratio; ``None`` when the denominator vanishes."""
    ms = u.mode_set
    den = u.norm(a) * v.norm(b) * w.norm(c + 1)
    if den == 0:
        return None
    num = abs(float(_inner(bilinear_coeffs(u.coeffs, v.coeffs, ms, "auto"), w.coeffs, np.ones(len(ms)))))
    return num / den


@dataclass(frozen=True)
class DeltaResult:
    delta: float
    strict: bool  # True: any delta strictly below ``delta`` works

    def __str__(self) -> str:
        return f"delta < {self.delta:g}" if self.strict else f"delta = {self.delta:g}"


def smoothing_exponent(a: float, b: float) -> DeltaResult:
    """Smoothing exponent of ``B``: ``||A^{delta/2} B(u,v)|| <= c ||u||_a ||v||_b``."""
    if a < 0 or b < 0:
        raise DomainError("need a, b >= 0")
    hi, lo = max(a, b), min(a, b)
    if hi == 1.5 or hi == 0:
        return DeltaResult(lo - 1.0, True)
    return DeltaResult(lo - max(1.5 - hi, 0.0) - 1.0, False)


# ---------------------------------------------------------------------------
# Lattice series
# ---------------------------------------------------------------------------


def _ball(k0: float) -> np.ndarray:
    """Non-zero lattice points with ``|k| <= k0``, as |k|."""
    r = int(math.floor(k0))
    g = np.arange(-r, r + 1)
    q = (g[:, None, None] ** 2 + g[None, :, None] ** 2 + g[None, None, :] ** 2).ravel()
    q = q[(q > 0) & (q <= k0 * k0 + 1e-9)]
    return np.sqrt(q.astype(float))


def ball_sum(alpha: float, k0: float) -> float:
    """``sum_{0 < |k| <= k0} |k|^alpha`` over ``Z^3``."""
    if k0 < 1:
        raise DomainError("need k0 >= 1")
    return float(np.sum(_ball(k0) ** alpha))


def ball_sum_bound(alpha: float, k0: float) -> float:
    """Growth shape of :func:`ball_sum`: ``k0^{(alpha+3) v 0}``, or ``log(1+k0)`` at ``alpha=-3``."""
    if alpha == -3:
        return math.log1p(k0)
    return k0 ** max(alpha + 3.0, 0.0)


def shell_sum_hypotheses(alpha: float, beta: float, gamma: float) -> tuple[bool, str]:
    if beta < 1.5:
        return 2 * (alpha + beta + gamma) >= 3, "2(alpha+beta+gamma) >= 3"
    if beta == 1.5:
        return alpha + gamma > 0, "alpha + gamma > 0"
    return alpha + gamma >= 0, "alpha + gamma >= 0"


def _shell_members(l: np.ndarray, cutoff: int) -> np.ndarray:
    g = np.arange(-cutoff, cutoff + 1)
    m = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    m = m[np.any(m != 0, axis=1)]
    lm = np.linalg.norm(l + m, axis=1)
    return m[lm > 2 * np.linalg.norm(m, axis=1)]


def shell_sum(alpha: float, beta: float, gamma: float, l, cutoff: int | None = None) -> float:
    """``sum_{m != 0, |l+m| > 2|m|} |l|^{-2alpha} |m|^{-2beta} |l+m|^{-2gamma}``.

    Members satisfy ``|m| < |l|``, so the default cutoff ``ceil(|l|)`` already
    covers the whole set.
    """
    l = np.asarray(l, dtype=float)
    ln = float(np.linalg.norm(l))
    if ln <= 1:
        raise DomainError("need |l| > 1")
    if cutoff is None:
        cutoff = int(math.ceil(ln))
    m = _shell_members(l, cutoff)
    if len(m) == 0:
        return 0.0
    mn = np.linalg.norm(m, axis=1)
    lm = np.linalg.norm(l + m, axis=1)
    return float(np.sum(ln ** (-2 * alpha) * mn ** (-2 * beta) * lm ** (-2 * gamma)))


def shell_sum_annulus_check(l) -> bool:
    """Every member of ``{m : |l+m| > 2|m|}`` has ``2|l|/3 <= |l+m| <= 2|l|``."""
    l = np.asarray(l, dtype=float)
    ln = float(np.linalg.norm(l))
    m = _shell_members(l, int(math.ceil(ln)) + 1)
    lm = np.linalg.norm(l + m, axis=1)
    return bool(np.all(lm >= 2 * ln / 3 - 1e-12) and np.all(lm <= 2 * ln + 1e-12))


# ---------------------------------------------------------------------------
# Weight function bound
# ---------------------------------------------------------------------------


@dataclass
class WeightBoundReport:
    params: tuple
    bound: float
    max_value: float
    values: np.ndarray = field(repr=False)
    t_grid: np.ndarray = field(repr=False)
    exact_err: float  # max deviation from t^{1-y} B(1-x,1-y) on t <= delta
    a_max: float  # sup a(t) on the grid
    tol: float = 1e-6

    @property
    def ok(self) -> bool:
        delta = self.params[2]
        return (self.max_value <= self.bound + self.tol and self.exact_err <= self.tol
                and self.a_max <= delta ** self.params[0] + self.tol)


def _weight_a(t, x, delta, eta):
    t = np.asarray(t, dtype=float)
    return np.where(t <= delta, t**x, delta**x * np.exp(-eta * (t - delta)))


def _weight_A(t: float, x: float, y: float, delta: float, eta: float) -> float:
    """``a(t) int_0^t (t-s)^{-y} a(s)^{-1} ds`` by algebraic-weight quadrature."""
    if t == 0:
        return 0.0
    opts = dict(epsabs=1e-12, epsrel=1e-11, limit=200)
    if t <= delta:
        # int_0^t s^{-x} (t-s)^{-y} ds, both endpoint singularities in the weight
        val, _ = integrate.quad(lambda s: 1.0, 0.0, t, weight="alg", wvar=(-x, -y), **opts)
        return float(t**x * val)
    head, _ = integrate.quad(lambda s: (t - s) ** (-y), 0.0, delta, weight="alg", wvar=(-x, 0.0), **opts)
    tail, _ = integrate.quad(lambda s: math.exp(eta * (s - delta)), delta, t, weight="alg", wvar=(0.0, -y), **opts)
    return float(_weight_a(t, x, delta, eta) * (head + delta ** (-x) * tail))


def weight_bound_check(x: float, y: float, delta: float, eta: float, t_grid=None) -> WeightBoundReport:
    """Evaluate the convolution of the weight ``a`` against ``(t-s)^{-y}`` and compare to its bound."""
    if not (0 <= x < 1 and 0 <= y < 1):
        raise DomainError("need x, y in [0, 1)")
    if not (delta > 0 and eta > 0):
        raise DomainError("need delta, eta > 0")
    if t_grid is None:
        t_grid = np.concatenate([np.linspace(0, delta, 41), delta + np.geomspace(1e-3, 20.0 / eta + delta, 60)])
    t_grid = np.asarray(t_grid, dtype=float)
    vals = np.array([_weight_A(t, x, y, delta, eta) for t in t_grid])
    beta = special.beta(1 - x, 1 - y)
    bound = beta * delta ** (1 - y) + eta ** (y - 1) * special.gamma(1 - y)
    early = t_grid <= delta
    exact = t_grid[early] ** (1 - y) * beta
    return WeightBoundReport(
        params=(x, y, delta, eta), bound=float(bound), max_value=float(vals.max()),
        values=vals, t_grid=t_grid,
        exact_err=float(np.max(np.abs(vals[early] - exact))) if early.any() else 0.0,
        a_max=float(_weight_a(t_grid, x, delta, eta).max()),
    )


def cutoff_regularity_ratio(n: int = 1000, xmax: float = 4.0) -> float:
    """``sup |chi(x)-chi(y)| (1+x)(1+y) / |x-y|`` over pairs of an ``n``-point grid."""
    g = np.linspace(0.0, xmax, n)
    c = chi(g)
    dx = g[:, None] - g[None, :]
    num = np.abs(c[:, None] - c[None, :]) * (1 + g[:, None]) * (1 + g[None, :])
    off = dx != 0
    return float(np.max(num[off] / np.abs(dx[off])))


# ---------------------------------------------------------------------------
# Bounded test functionals
# ---------------------------------------------------------------------------


class Functional:
    """Bounded functional on coefficient arrays ``(..., M, 3) -> (...)``."""

    def __init__(self, name: str, fn, bound: float):
        self.name, self.fn, self.bound = name, fn, bound

    def __call__(self, coeffs: np.ndarray) -> np.ndarray:
        return self.fn(coeffs)

    def __repr__(self) -> str:
        return f"Functional({self.name})"


def constant(value: float = 1.0) -> Functional:
    return Functional(f"constant({value:g})", lambda u: np.full(u.shape[:-2], float(value)), abs(value))


def _unit_direction(ms: ModeSet, k, vector) -> np.ndarray:
    i, conj = ms.index_of(k)
    vec = leray_project(ms.kvec[i], np.asarray(vector, dtype=complex))
    if conj:
        vec = np.conj(vec)
    nrm = np.sqrt(2.0) * np.linalg.norm(vec)
    if nrm == 0:
        raise DomainError("vector is parallel to k")
    e = np.zeros((len(ms), 3), dtype=complex)
    e[i] = vec / nrm
    return e


def coordinate(ms: ModeSet, k, vector, squash: str = "tanh", scale: float = 1.0) -> Functional:
    """``squash(<u, e> / scale)`` for the unit field ``e`` along mode ``k``.

    ``squash`` is ``"tanh"``, or ``"clip"`` (identity on ``[-1, 1]``).
    """
    e = _unit_direction(ms, k, vector)
    ones = np.ones(len(ms))
    maps = {"tanh": np.tanh, "clip": lambda s: np.clip(s, -1.0, 1.0)}
    if squash not in maps:
        raise DomainError(f"squash must be one of {sorted(maps)}")
    f = maps[squash]
    name = f"coord(k={tuple(int(c) for c in k)},{squash},scale={scale:g})"
    out = Functional(name, lambda u: scale * f(_inner(u, e, ones) / scale), scale)
    out.direction, out.squash, out.scale = e, squash, float(scale)
    return out


def linear_coordinate_derivative(phi: Functional, x: SpectralField, h: SpectralField, t: float,
                                 nu: float, spec: NoiseSpec) -> float:
    """Exact ``D_h E phi(u_x(t))`` for a coordinate functional when ``B`` is switched off.

    Then ``u_x(t) = e^{-nu A t} x + z(t)`` and ``y = <u_x(t), e>`` is Gaussian
    with mean ``<e^{-nu A t} x, e>`` and variance ``sigma_k^2 (1 - e^{-2 nu |k|^2 t}) / (2 nu |k|^2)``.
    """
    e = getattr(phi, "direction", None)
    if e is None:
        raise DomainError("closed form available for coordinate functionals only")
    ms = x.mode_set
    i = int(np.flatnonzero(np.any(e != 0, axis=1))[0])
    lam = nu * ms.k2[i]
    ones = np.ones(len(ms))
    decay = np.exp(-nu * ms.k2 * t)[:, None]
    m = float(_inner(x.coeffs * decay, e, ones))
    d = float(_inner(h.coeffs * decay, e, ones))
    sd = math.sqrt(spec.sigma(ms)[i] ** 2 * -math.expm1(-2 * lam * t) / (2 * lam))
    c = phi.scale
    if phi.squash == "clip":
        return d * float(stats.norm.cdf((c - m) / sd) - stats.norm.cdf((-c - m) / sd))
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    y = m + sd * nodes
    return d * float(np.sum(weights / np.cosh(y / c) ** 2) / math.sqrt(2 * math.pi))


def clipped_norm(alpha: float, cap: float) -> Functional:
    def fn(u):
        ms_k2 = mode_set(_N_of(u)).k2
        return np.minimum(_norm(u, ms_k2**alpha), cap)

    return Functional(f"clipped_norm(alpha={alpha:g},cap={cap:g})", fn, cap)


def smooth_norm(alpha: float, scale: float) -> Functional:
    """``tanh(||u||_alpha^2 / scale^2)``."""

    def fn(u):
        ms_k2 = mode_set(_N_of(u)).k2
        return np.tanh(_norm(u, ms_k2**alpha) ** 2 / scale**2)

    return Functional(f"smooth_norm(alpha={alpha:g},scale={scale:g})", fn, 1.0)


def _N_of(u: np.ndarray) -> int:
    M = u.shape[-2]
    N = int(round(((2 * M + 1) ** (1 / 3) - 1) / 2))
    if ((2 * N + 1) ** 3 - 1) // 2 != M:
        raise DomainError(f"{M} coefficients do not form a cube truncation")
    return N


def parse_functional(ms: ModeSet, text: str) -> Functional:
    """Build a functional from ``kind:key=value:...``.

    ``constant:value=1``, ``coord:k=1,0,0:e=0,1,0:squash=tanh:scale=1``,
    ``clipped_norm:alpha=1:cap=3``, ``smooth_norm:alpha=1:scale=2``.
    """
    kind, *parts = text.strip().split(":")
    kw = {}
    for p in parts:
        if "=" not in p:
            raise DomainError(f"malformed functional option {p!r}")
        key, val = p.split("=", 1)
        kw[key] = val
    vec = lambda s: tuple(float(c) for c in s.split(","))
    try:
        if kind == "constant":
            out = constant(float(kw.pop("value", 1.0)))
        elif kind == "coord":
            k = tuple(int(c) for c in kw.pop("k").split(","))
            out = coordinate(ms, k, vec(kw.pop("e")), kw.pop("squash", "tanh"), float(kw.pop("scale", 1.0)))
        elif kind == "clipped_norm":
            out = clipped_norm(float(kw.pop("alpha")), float(kw.pop("cap")))
        elif kind == "smooth_norm":
            out = smooth_norm(float(kw.pop("alpha")), float(kw.pop("scale")))
        else:
            raise DomainError(f"unknown functional kind {kind!r}")
    except KeyError as exc:
        raise DomainError(f"functional {kind!r} needs option {exc}") from None
    if kw:
        raise DomainError(f"unknown functional options {sorted(kw)}")
    return out


# ---------------------------------------------------------------------------
# Monte Carlo semigroup probes
# ---------------------------------------------------------------------------


class _ValueObserver(Observer):
    """Records functionals of every system at selected steps."""

    def __init__(self, functionals, steps, n_total):
        self.functionals = list(functionals)
        self.steps = sorted(set(int(s) for s in steps))
        self.n_total = n_total
        self.chunks = []

    def begin_chunk(self, replicas):
        self.cur = {}

    def _record(self, i, u):
        if i in self.steps:
            self.cur[i] = np.stack([f(u) for f in self.functionals])  # (F, S, B)

    def step(self, i, t, u, z, dW, w):
        self._record(i, u)

    def final(self, t, u, z, w):
        self._record(self.n_total, u)
        self.chunks.append(np.stack([self.cur[s] for s in self.steps]))  # (T, F, S, B)

    def values(self) -> np.ndarray:
        return np.concatenate(self.chunks, axis=-1)


@dataclass
class SemigroupEstimate:
    functional: str
    x_norm: float
    t: float
    mean: float
    se: float
    samples: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.se, self.mean + 1.96 * self.se


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    if len(a) < 2:
        return float(a.mean()), float("nan")
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def _steps_for(times, config: SimConfig) -> list[int]:
    out = []
    for t in times:
        s = t / config.dt
        if abs(s - round(s)) > 1e-9 * max(1.0, s) or round(s) < 0 or round(s) > config.n_steps:
            raise DomainError(f"time {t} is not on the step grid of the configuration")
        out.append(int(round(s)))
    return out


def transition_estimate(phi: Functional, x: SpectralField, t: float, samples: int, config: SimConfig,
                        spec: NoiseSpec, cutoff: CutoffSpec | None = None,
                        chunk: int = DEFAULT_CHUNK) -> SemigroupEstimate:
    """Monte Carlo ``E phi(u_x(t))`` over independent Stokes paths."""
    cfg = _with_horizon(config, t)
    ob = _ValueObserver([phi], [cfg.n_steps], cfg.n_steps)
    run_ensemble(x, cfg, spec, samples, [ob], cutoff=cutoff, chunk=chunk)
    vals = ob.values()[0, 0, 0]
    mean, se = _mean_se(vals)
    return SemigroupEstimate(phi.name, float(x.norm(0.0)), float(t), mean, se, samples)


def _with_horizon(config: SimConfig, T: float) -> SimConfig:
    from dataclasses import asdict

    return SimConfig(**{**asdict(config), "T": float(T)})


@dataclass
class FellerReport:
    functional: str
    alpha: float
    rows: list  # dicts per (t, h)
    doubling_ok: dict  # t -> bool
    prefactor: dict  # t -> max ratio

    @property
    def ok(self) -> bool:
        return all(self.doubling_ok.values())


def _log_modulus(r: float) -> float:
    return r * math.log(math.e / r)


def feller_modulus(phi: Functional, x: SpectralField, h: SpectralField, h_norms, times, samples: int,
                   config: SimConfig, spec: NoiseSpec, alpha: float = 1.0,
                   cutoff: CutoffSpec | None = None, chunk: int = DEFAULT_CHUNK) -> FellerReport:
    """``|P_t phi(x + h) - P_t phi(x)|`` against ``||h||_alpha log(e / ||h||_alpha)``.

    ``h`` is a direction, rescaled to each entry of ``h_norms`` (decreasing,
    all < 1).  All systems share the noise paths.  The no-doubling check
    requires ``r_{j+1} <= 2 r_j + 3 se`` for consecutive ratios.
    """
    h_norms = [float(s) for s in h_norms]
    if any(not 0 < s < 1 for s in h_norms):
        raise DomainError("perturbation sizes must lie in (0, 1)")
    hn = h.norm(alpha)
    if hn == 0:
        raise DomainError("direction h must be non-zero")
    T = max(times)
    cfg = _with_horizon(config, T)
    steps = _steps_for(times, cfg)
    systems = [x.coeffs] + [x.coeffs + (s / hn) * h.coeffs for s in h_norms]
    ob = _ValueObserver([phi], steps, cfg.n_steps)
    run_ensemble(np.stack(systems), cfg, spec, samples, [ob], cutoff=cutoff, chunk=chunk)
    vals = ob.values()[:, 0]  # (T, S, samples)
    rows, doubling, pref = [], {}, {}
    for ti, (t, st) in enumerate(zip(times, steps)):
        ratios, ses = [], []
        for j, s in enumerate(h_norms):
            d = vals[ob.steps.index(st), j + 1] - vals[ob.steps.index(st), 0]
            mean, se = _mean_se(d)
            m = _log_modulus(s)
            rows.append({"t": t, "h_norm": s, "diff": mean, "diff_se": se, "modulus": m,
                         "ratio": abs(mean) / m, "ratio_se": se / m})
            ratios.append(abs(mean) / m)
            ses.append(se / m)
        ok = all(ratios[j + 1] <= 2 * ratios[j] + 3 * math.hypot(ses[j], ses[j + 1]) for j in range(len(ratios) - 1))
        doubling[t] = bool(ok)
        pref[t] = float(max(ratios))
    return FellerReport(phi.name, alpha, rows, doubling, pref)


# ---------------------------------------------------------------------------
# Gradient formula
# ---------------------------------------------------------------------------


class _BELObserver(Observer):
    def __init__(self, functionals, sigma, decay, n, weight: str, fd: bool):
        self.functionals = functionals
        self.inv_sigma = (1.0 / sigma)[:, None]
        self.var = None
        self.decay = decay
        self.n = n
        self.kind = weight
        self.fd = fd
        self.ones = np.ones(len(sigma))
        self.w_chunks, self.v_chunks = [], []

    def begin_chunk(self, replicas):
        self.acc = np.zeros(len(replicas))
        self.z_prev = None

    def step(self, i, t, u, z, dW, w):
        if self.kind == "ito":
            # left-point sum of <Q^{-1/2} w_i, dW_i>
            self.acc += _inner(w[0] * self.inv_sigma, dW, self.ones)
        else:
            if i > 0:
                self._discrete(z, w)
            self.z_prev = z

    def _discrete(self, z, w):
        innov = z - self.decay * self.z_prev
        self.acc += _inner(innov / self.var[:, None], w[0], self.ones)

    def final(self, t, u, z, w):
        if self.kind == "discrete":
            self._discrete(z, w)
        self.w_chunks.append(self.acc.copy())
        self.v_chunks.append(np.stack([f(u) for f in self.functionals]))  # (F, S, B)


@dataclass
class BELResult:
    functional: str
    t: float
    bel: float
    bel_se: float
    fd: float | None
    fd_se: float | None
    fd_eps: float | None
    analytic: float | None = None
    samples: int = 0
    weight: str = "ito"

    @property
    def combined_se(self) -> float:
        return math.hypot(self.bel_se, self.fd_se or 0.0)

    @property
    def agrees_fd(self) -> bool | None:
        if self.fd is None:
            return None
        return abs(self.bel - self.fd) <= 3 * self.combined_se

    @property
    def agrees_analytic(self) -> bool | None:
        if self.analytic is None:
            return None
        return abs(self.bel - self.analytic) <= 3 * self.bel_se

    def as_dict(self) -> dict:
        return {
            "functional": self.functional, "t": self.t, "bel": self.bel, "bel_se": self.bel_se,
            "fd": self.fd, "fd_se": self.fd_se, "fd_eps": self.fd_eps, "analytic": self.analytic,
            "samples": self.samples, "weight": self.weight,
            "agrees_fd": self.agrees_fd, "agrees_analytic": self.agrees_analytic,
        }


def bel_gradient(functionals, x: SpectralField, h: SpectralField, t: float, samples: int,
                 config: SimConfig, spec: NoiseSpec, cutoff: CutoffSpec | None,
                 fd_eps: float | None = 1e-3, weight: str = "ito",
                 chunk: int = DEFAULT_CHUNK) -> list[BELResult]:
    """Directional derivative ``D_h E phi(u_x(t))`` from the gradient formula.

    The estimator is ``E[phi(u_t) (1/t) sum_i <Q^{-1/2} u~_i, dW_i>]``, a
    left-point sum reusing the increments that generated the Stokes path
    (``weight="ito"``).  ``weight="discrete"`` uses the Gaussian innovations
    of the exponential-Euler chain instead, which is unbiased for the
    discrete scheme.  With ``fd_eps`` a central difference on the same paths
    is returned alongside.
    """
    if isinstance(functionals, Functional):
        functionals = [functionals]
    if spec.c0 == 0:
        raise DomainError("the gradient formula needs an invertible covariance (c0 > 0)")
    if weight not in ("ito", "discrete"):
        raise DomainError("weight must be 'ito' or 'discrete'")
    if cutoff is None and config.nonlinear:
        warnings.warn("gradient formula applied without a cut-off", HypothesisWarning, stacklevel=2)
    cfg = _with_horizon(config, t)
    if weight == "discrete" and cfg.integrator != "exp-euler":
        raise DomainError("the discrete weight is defined for the exponential-Euler chain only")
    ms = mode_set(cfg.N)
    systems = [x.coeffs]
    if fd_eps:
        systems += [x.coeffs + fd_eps * h.coeffs, x.coeffs - fd_eps * h.coeffs]
    tangents = np.zeros((len(systems), len(ms), 3), dtype=complex)
    tangents[0] = h.coeffs
    prop = Propagator(ms, cfg.nu, cfg.dt)
    ob = _BELObserver(functionals, spec.sigma(ms), prop.E, cfg.n_steps, weight, bool(fd_eps))
    if weight == "discrete":
        lam = cfg.nu * ms.k2
        ob.var = spec.sigma(ms) ** 2 * (-np.expm1(-2 * lam * cfg.dt)) / (2 * lam)
    run_ensemble(np.stack(systems), cfg, spec, samples, [ob], cutoff=cutoff, tangents=tangents, chunk=chunk)
    wts = np.concatenate(ob.w_chunks)
    vals = np.concatenate(ob.v_chunks, axis=-1)  # (F, S, samples)
    norm = cfg.T if weight == "ito" else cfg.n_steps
    out = []
    for fi, f in enumerate(functionals):
        b, bse = _mean_se(vals[fi, 0] * wts / norm)
        fd = fse = None
        if fd_eps:
            fd, fse = _mean_se((vals[fi, 1] - vals[fi, 2]) / (2 * fd_eps))
        analytic = None
        if not cfg.nonlinear and getattr(f, "direction", None) is not None:
            analytic = linear_coordinate_derivative(f, x, h, cfg.T, cfg.nu, spec)
        out.append(BELResult(f.name, float(t), b, bse, fd, fse, fd_eps, analytic, samples, weight))
    return out


# ---------------------------------------------------------------------------
# Blow-up time
# ---------------------------------------------------------------------------


def blowup_exponent(alpha: float, eps: float | None = None) -> float:
    """``gamma`` in ``T <= c' R^{-gamma}``; ``alpha = 3/2`` needs ``eps``."""
    if alpha == 1.5:
        if eps is None or not 0 < eps < 1:
            raise DomainError("alpha = 3/2 needs an eps in (0, 1)")
        return 2.0 / (1.0 - eps)
    return 4.0 / min(2 * alpha - 1, 2.0)


class _BlowupObserver(Observer):
    def __init__(self, w_u, w_z):
        self.w_u, self.w_z = w_u, w_z
        self.u_chunks, self.z_chunks = [], []

    def begin_chunk(self, replicas):
        self.un, self.zn = [], []

    def step(self, i, t, u, z, dW, w):
        self.un.append(_norm(u[0], self.w_u))
        self.zn.append(_norm(z, self.w_z))

    def final(self, t, u, z, w):
        self.step(None, t, u, z, None, w)
        self.u_chunks.append(np.stack(self.un, axis=1))
        self.z_chunks.append(np.stack(self.zn, axis=1))


@dataclass
class BlowupReport:
    alpha: float
    gamma: float
    R_values: list
    c_prime: dict  # R -> fitted constant (safety factor applied)
    censored: dict  # R -> True when no training path constrained c'
    violations: dict  # R -> count on the validation replicas
    event_counts: dict  # R -> validation paths on which the z event holds at T
    tail_rows: list  # dicts (R, T, n, n_hit, p, ci)
    slope: float | None
    intercept: float | None
    r2: float | None
    samples: int
    validation_samples: int
    safety: float

    @property
    def inclusion_ok(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def _exit_times(times: np.ndarray, norms: np.ndarray, level: float) -> np.ndarray:
    """First grid time with ``norm > level`` per row (``inf`` if none)."""
    over = norms > level
    hit = over.any(axis=1)
    idx = np.argmax(over, axis=1)
    return np.where(hit, times[idx], np.inf)


def blowup_mc(alpha: float, R_values, nu: float, spec: NoiseSpec, samples: int, seed: int, N: int = 2,
              dt: float = 0.002, T_max: float = 0.2, T_grid=None, x: SpectralField | None = None,
              eps: float | None = None, validation_samples: int | None = None, safety: float = 0.5,
              min_exceed: int = 10, tail_R=None, max_p: float = 0.5, chunk: int = DEFAULT_CHUNK) -> BlowupReport:
    """Blow-up time probe for the cut-off system.

    One cut-off run at ``R_max = max(R_values)`` serves every ``R``: before
    ``||u||_alpha`` first reaches ``R`` the cut-off systems for ``R`` and
    ``R_max`` coincide, so ``tau_R`` is the first crossing of ``R`` on that run.

    ``c'`` for each ``R`` is ``safety`` times the largest ``c`` for which no
    training path has ``tau < T <= T_z`` at ``T = c R^{-gamma}``, where
    ``T_z`` is the first time ``||z||`` exceeds ``R/3``.  It is then checked on
    ``validation_samples`` fresh replicas.

    The tail of ``P[tau_R <= T]`` is swept over ``tail_R`` (default
    ``R_values``) and ``T_grid``, and regressed in log scale on ``R^2 / T``
    over the tail region: points with at least ``min_exceed`` hits and
    ``p <= max_p``.
    """
    R_values = sorted(float(r) for r in R_values)
    tail_R = R_values if tail_R is None else sorted(float(r) for r in tail_R)
    if min(R_values[0], tail_R[0]) < 1:
        raise DomainError("need R >= 1")
    if not 0.5 < alpha < spec.max_regularity:
        raise DomainError(f"alpha must lie in (1/2, 1 + 2 alpha0) = (0.5, {spec.max_regularity})")
    gamma = blowup_exponent(alpha, eps)
    ms = mode_set(N)
    if x is None:
        x = SpectralField(ms, np.zeros((len(ms), 3), dtype=complex))
    if x.norm(alpha) > min(R_values[0], tail_R[0]) / 3 + 1e-12:
        raise DomainError("need ||x||_alpha <= R/3 for every R")
    validation_samples = samples if validation_samples is None else validation_samples
    cfg = SimConfig(nu=nu, dt=dt, T=T_max, N=N, seed=seed)
    cut = CutoffSpec(alpha, max(R_values[-1], tail_R[-1]))
    beta = alpha + (eps if alpha == 1.5 else 0.0)

    def run(n, offset):
        ob = _BlowupObserver(ms.k2**alpha, ms.k2**beta)
        run_ensemble(x, cfg, spec, n, [ob], cutoff=cut, chunk=chunk, replica_offset=offset)
        return np.concatenate(ob.u_chunks), np.concatenate(ob.z_chunks)

    times = np.arange(cfg.n_steps + 1) * dt
    un_tr, zn_tr = run(samples, 0)
    un_va, zn_va = run(validation_samples, samples)

    cp, cens, viol, events = {}, {}, {}, {}
    for R in R_values:
        tau = np.array([first_crossing(times, row, R) for row in un_tr])
        tz = _exit_times(times, zn_tr, R / 3)
        bad = tau < tz
        if bad.any():
            cp[R] = safety * float(np.min(tau[bad])) * R**gamma
            cens[R] = False
        else:
            cp[R] = T_max * R**gamma
            cens[R] = True
        T = min(cp[R] * R ** (-gamma), T_max)
        tau_v = np.array([first_crossing(times, row, R) for row in un_va])
        tz_v = _exit_times(times, zn_va, R / 3)
        ev = T < tz_v
        events[R] = int(ev.sum())
        viol[R] = int(np.sum(ev & (tau_v < T)))

    # tail of tau over an (R, T) sweep, pooled over both replica sets
    un = np.concatenate([un_tr, un_va])
    if T_grid is None:
        T_grid = np.linspace(T_max / 4, T_max, 4)
    rows, xs, ps, ne = [], [], [], []
    n_all = len(un)
    for R in tail_R:
        tau = np.array([first_crossing(times, row, R) for row in un])
        for T in T_grid:
            k = int(np.sum(tau <= T))
            lo, hi = wilson_interval(k, n_all)
            rows.append({"R": R, "T": float(T), "n": n_all, "n_hit": k, "p": k / n_all, "ci_lo": lo, "ci_hi": hi})
            xs.append(R * R / T)
            ps.append(k / n_all)
            ne.append(k)
    xs, ps, ne = map(np.asarray, (xs, ps, ne))
    mask = (ne >= min_exceed) & (ps <= max_p)
    slope = intercept = r2 = None
    if mask.sum() >= 3:
        fit = stats.linregress(xs[mask], np.log(ps[mask]))
        slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    return BlowupReport(alpha, gamma, R_values, cp, cens, viol, events, rows, slope, intercept, r2,
                        samples, validation_samples, safety)
