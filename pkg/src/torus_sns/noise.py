"""Diagonal Gaussian noise and the Stokes (Ornstein-Uhlenbeck) process.

The covariance is diagonal in the real Fourier basis.  For every
representative ``k`` and each of the two unit vectors ``e`` orthogonal to
``k`` there are two real eigenfunctions, ``sqrt(2) e cos(k.x)`` and
``-sqrt(2) e sin(k.x)`` (unit H-norm in our normalisation), both with
eigenvalue ``sigma_k^2``.  In complex coordinates a cylindrical increment is

    dW_k = sum_e e (dbeta_{e,cos} - i dbeta_{e,sin}) / sqrt(2),

so each tangential component of ``dW_k`` has ``E|.|^2 = dt``, split evenly
between real and imaginary parts.

Each OU step draws a pair of standard normals ``(a, b)`` per real coordinate:
``a`` gives the Brownian increment and ``(a, b)`` together give the exact OU
innovation with the correct covariance against that increment.  The
increments are kept with the path so stochastic integrals can reuse them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .errors import DomainError, HypothesisWarning
from .rng import STREAM_TRIALS, ReplicaStreams, generator, replica_generator
from .spectral import ModeSet, SpectralField, mode_set

__all__ = [
    "NoiseSpec",
    "sigma_of",
    "OUStep",
    "ou_exact_step",
    "ou_step_variance",
    "ZPath",
    "sample_z_path",
    "expected_norm_sq",
    "TailResult",
    "sup_norm_tail_mc",
    "wilson_interval",
    "apply_Q_half",
    "apply_Q_inv_half",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Power-law covariance ``sigma_k = c0 |k|^{-(3/2 + 2 alpha0)}``."""

    alpha0: float
    c0: float = 1.0

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise DomainError(f"alpha0 must be positive, got {self.alpha0}")
        if self.c0 < 0:
            raise DomainError(f"c0 must be non-negative, got {self.c0}")

    @property
    def exponent(self) -> float:
        return 1.5 + 2.0 * self.alpha0

    @property
    def max_regularity(self) -> float:
        """Spatial regularity ceiling ``1 + 2 alpha0`` of the Stokes process."""
        return 1.0 + 2.0 * self.alpha0

    def sigma(self, ms: ModeSet) -> np.ndarray:
        return self.c0 * ms.kabs ** (-self.exponent)

    def trace(self, ms: ModeSet) -> float:
        """Trace of Q restricted to the truncation (sum over eigenfunctions)."""
        return float(4.0 * np.sum(self.sigma(ms) ** 2))


def sigma_of(k, spec: NoiseSpec) -> float:
    kabs = math.sqrt(sum(float(c) ** 2 for c in k))
    if kabs == 0.0:
        raise DomainError("sigma is undefined at k = 0")
    return spec.c0 * kabs ** (-spec.exponent)


def apply_Q_half(u: SpectralField, spec: NoiseSpec) -> SpectralField:
    return SpectralField(u.mode_set, u.coeffs * spec.sigma(u.mode_set)[:, None])


def apply_Q_inv_half(u: SpectralField, spec: NoiseSpec) -> SpectralField:
    """Per-mode division by ``sigma_k``; requires ``c0 > 0``."""
    if spec.c0 == 0:
        raise DomainError("Q is not invertible when c0 = 0")
    return SpectralField(u.mode_set, u.coeffs / spec.sigma(u.mode_set)[:, None])


def ou_step_variance(spec: NoiseSpec, ms: ModeSet, nu: float, dt: float) -> np.ndarray:
    """Innovation ``E|e . z_k|^2`` per tangential component over one step."""
    lam = nu * ms.k2
    return spec.sigma(ms) ** 2 * (-np.expm1(-2.0 * lam * dt)) / (2.0 * lam)


class OUStep:
    """Exact OU transition over a fixed step ``h`` for one truncation.

    ``apply(z, g)`` takes standard normals ``g`` of shape ``(..., M, 2, 2, 2)``
    (axes: tangential direction, cos/sin part, pair ``a``/``b``) and returns
    ``(z_next, dW)``.
    """

    draw_shape_tail = (2, 2, 2)

    def __init__(self, ms: ModeSet, spec: NoiseSpec, nu: float, h: float):
        if not h > 0:
            raise DomainError(f"time step must be positive, got {h}")
        if not nu > 0:
            raise DomainError(f"viscosity must be positive, got {nu}")
        self.ms, self.spec, self.nu, self.h = ms, spec, nu, h
        lam = nu * ms.k2
        sig = spec.sigma(ms)
        self.decay = np.exp(-lam * h)
        var = sig**2 * (-np.expm1(-2.0 * lam * h)) / (2.0 * lam)
        cov = sig * (-np.expm1(-lam * h)) / lam
        self.rho = cov / math.sqrt(h)
        self.resid = np.sqrt(np.maximum(var - cov**2 / h, 0.0))
        self.basis = ms.tangent_basis  # (M, 2, 3)

    @property
    def draw_shape(self) -> tuple:
        return (len(self.ms),) + self.draw_shape_tail

    def _combine(self, parts: np.ndarray) -> np.ndarray:
        # parts: (..., M, 2 dirs, 2 [cos, sin]) real -> (..., M, 3) complex
        amp = (parts[..., 0] - 1j * parts[..., 1]) * (1.0 / math.sqrt(2.0))
        return amp[..., 0, None] * self.basis[:, 0] + amp[..., 1, None] * self.basis[:, 1]

    def apply(self, z: np.ndarray, g: np.ndarray, increments: bool = True):
        a, b = g[..., 0], g[..., 1]
        innov = self.rho[:, None, None] * a + self.resid[:, None, None] * b
        z_next = self.decay[:, None] * z + self._combine(innov)
        dW = self._combine(math.sqrt(self.h) * a) if increments else None
        return z_next, dW


@lru_cache(maxsize=64)
def _ou_step(N: int, spec: NoiseSpec, nu: float, h: float) -> OUStep:
    return OUStep(mode_set(N), spec, nu, h)


def ou_exact_step(
    z: SpectralField,
    dt: float,
    nu: float,
    spec: NoiseSpec,
    rng: np.random.Generator,
    return_increment: bool = False,
):
    """One exact OU transition of every mode of ``z``."""
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    step = _ou_step(z.mode_set.N, spec, float(nu), float(dt))
    g = rng.standard_normal(z.batch_shape + step.draw_shape)
    zc, dW = step.apply(z.coeffs, g)
    out = SpectralField(z.mode_set, zc)
    if return_increment:
        return out, SpectralField(z.mode_set, dW)
    return out


@dataclass
class ZPath:
    """Sampled Stokes process with the cylindrical increments that drove it."""

    mode_set: ModeSet
    times: np.ndarray
    z: np.ndarray  # (n+1, M, 3)
    dW: np.ndarray  # (n, M, 3)
    seed: int | None
    nu: float
    spec: NoiseSpec

    def __len__(self) -> int:
        return len(self.times)

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.mode_set, self.z[i])

    def norms(self, beta: float) -> np.ndarray:
        return SpectralField(self.mode_set, self.z).norm(beta)

    def subsample(self, factor: int) -> "ZPath":
        """Coarser path on every ``factor``-th grid point (increments summed)."""
        factor = int(factor)
        n = len(self.times) - 1
        if factor < 1 or n % factor:
            raise ValueError(f"cannot subsample {n} steps by {factor}")
        dW = self.dW.reshape((n // factor, factor) + self.dW.shape[1:]).sum(axis=1)
        return ZPath(
            self.mode_set, self.times[::factor].copy(), self.z[::factor].copy(), dW,
            self.seed, self.nu, self.spec,
        )


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or grid[0] != 0.0:
        raise DomainError("time grid must be a 1-d array starting at 0")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return grid


def sample_z_path(grid, nu: float, spec: NoiseSpec, N: int, rng) -> ZPath:
    """Iterate exact OU steps from ``z(0) = 0`` along ``grid``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed; a seed maps to
    replica 0 of the noise stream, so the path equals replica 0 of any
    ensemble run with the same seed.
    """
    grid = _check_grid(grid)
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = replica_generator(seed, 0)
    ms = mode_set(N)
    n = len(grid) - 1
    z = np.zeros((n + 1, len(ms), 3), dtype=complex)
    dW = np.zeros((n, len(ms), 3), dtype=complex)
    for i in range(n):
        step = _ou_step(N, spec, float(nu), float(grid[i + 1] - grid[i]))
        z[i + 1], dW[i] = step.apply(z[i], rng.standard_normal(step.draw_shape))
    return ZPath(ms, grid, z, dW, seed, float(nu), spec)


def expected_norm_sq(spec: NoiseSpec, ms: ModeSet, nu: float, t: float, beta: float) -> float:
    """Analytic ``E ||z(t)||_beta^2`` for ``z(0) = 0``.

    Sum over eigenfunctions: 2 polarisations x full lattice (both k and -k).
    """
    lam = nu * ms.k2
    per = spec.sigma(ms) ** 2 * ms.k2**beta * (-np.expm1(-2.0 * lam * t)) / (2.0 * lam)
    return float(4.0 * per.sum())


# ---------------------------------------------------------------------------
# Tails of sup_{s <= eps} ||z(s)||_beta
# ---------------------------------------------------------------------------


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TailResult:
    beta: float
    eps: float
    K: np.ndarray
    n_samples: int
    n_exceed: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")
    slope_se: float = float("nan")
    slope_ci: tuple = (float("nan"), float("nan"))
    fit_mask: np.ndarray | None = None
    hypothesis_ok: bool = True
    sups: np.ndarray | None = field(default=None, repr=False)

    def rows(self) -> list[dict]:
        return [
            {
                "beta": self.beta, "eps": self.eps, "K": float(K), "n_samples": self.n_samples,
                "n_exceed": int(ne), "p_hat": float(p), "ci_lo": float(lo), "ci_hi": float(hi),
            }
            for K, ne, p, lo, hi in zip(self.K, self.n_exceed, self.p_hat, self.ci_lo, self.ci_hi)
        ]

    def fit_summary(self) -> dict:
        return {
            "slope": self.slope, "intercept": self.intercept, "r2": self.r2,
            "slope_se": self.slope_se, "slope_ci": list(self.slope_ci),
            "n_fit_points": int(self.fit_mask.sum()) if self.fit_mask is not None else 0,
            "hypothesis_ok": self.hypothesis_ok,
        }


def fit_log_tail(x: np.ndarray, p: np.ndarray, n_exceed: np.ndarray, min_exceed: int = 10):
    """Least squares of ``log p`` on ``x`` using points with enough exceedances."""
    mask = (n_exceed >= min_exceed) & (p < 1.0)
    if mask.sum() < 3:
        return None, mask
    return stats.linregress(x[mask], np.log(p[mask])), mask


def sup_norm_tail_mc(
    spec: NoiseSpec,
    beta: float,
    eps: float,
    K_values,
    samples: int,
    nu: float,
    seed: int,
    N: int = 2,
    substeps: int = 16,
    min_exceed: int = 10,
    bootstrap: int = 200,
    chunk: int = 2000,
) -> TailResult:
    """Estimate ``P[sup_{s <= eps} ||z(s)||_beta >= K]`` for each K.

    The supremum is the maximum over ``substeps`` equal sub-steps of
    ``[0, eps]``.  The log-tail is regressed on ``K^2 / eps``; the slope's
    confidence interval is a percentile bootstrap over replicas.
    """
    K = np.asarray(K_values, dtype=float)
    if np.any(K < 0.5):
        raise DomainError("tail levels must satisfy K >= 1/2")
    ok = beta < spec.max_regularity
    if not ok:
        warnings.warn(
            f"beta={beta} >= 1 + 2 alpha0 = {spec.max_regularity}: tail bound not guaranteed",
            HypothesisWarning,
            stacklevel=2,
        )
    ms = mode_set(N)
    step = OUStep(ms, spec, nu, eps / substeps)
    weights = ms.k2**beta
    sups = np.empty(samples)
    for c0 in range(0, samples, chunk):
        reps = range(c0, min(samples, c0 + chunk))
        streams = ReplicaStreams(seed, reps)
        z = np.zeros((len(streams), len(ms), 3), dtype=complex)
        best = np.zeros(len(streams))
        for _ in range(substeps):
            z, _ = step.apply(z, streams.next(step.draw_shape), increments=False)
            nrm = np.sqrt(2.0 * np.einsum("m,bmi->b", weights, np.abs(z) ** 2))
            np.maximum(best, nrm, out=best)
        sups[c0 : c0 + len(streams)] = best

    n_exceed = (sups[None, :] >= K[:, None]).sum(axis=1)
    p_hat = n_exceed / samples
    cis = np.array([wilson_interval(k, samples) for k in n_exceed])
    res = TailResult(
        beta, eps, K, samples, n_exceed, p_hat, cis[:, 0], cis[:, 1],
        hypothesis_ok=ok, sups=sups,
    )
    x = K**2 / eps
    fit, mask = fit_log_tail(x, p_hat, n_exceed, min_exceed)
    res.fit_mask = mask
    if fit is None:
        return res
    res.slope, res.intercept = float(fit.slope), float(fit.intercept)
    res.r2, res.slope_se = float(fit.rvalue**2), float(fit.stderr)
    if bootstrap:
        rng = generator(seed, STREAM_TRIALS)
        boots = []
        for _ in range(bootstrap):
            s = rng.choice(sups, size=samples, replace=True)
            ne = (s[None, :] >= K[mask][:, None]).sum(axis=1)
            if np.all(ne > 0):
                boots.append(stats.linregress(x[mask], np.log(ne / samples)).slope)
        if boots:
            res.slope_ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return res
