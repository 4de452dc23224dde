"""Divergence-free Fourier fields on the 2*pi-periodic 3-torus.

A real, mean-zero velocity field is written as ``u(x) = sum_k u_k exp(i k.x)``
with ``u_{-k} = conj(u_k)``.  Only one representative of each pair ``{k, -k}``
is stored: the wave vector whose first non-zero component is positive.
Representatives are kept in lexicographic order, so a truncation is fully
described by its cutoff ``N = max |k|_inf``.

Norms and pairings sum over the *full* lattice, i.e. every stored coefficient
counts twice:

    ||u||_alpha^2 = sum_{k in Z^3} |k|^{2 alpha} |u_k|^2 = 2 sum_{reps} ...

The Stokes operator acts as ``|k|^2`` on mode ``k``.

Arrays of coefficients have shape ``(..., M, 3)``; any leading axes are
treated as a batch, which is how ensembles are propagated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import ConfigurationError, DomainError, ModeSetMismatch

__all__ = [
    "ModeSet",
    "SpectralField",
    "mode_set",
    "leray_project",
    "project",
    "sobolev_norm",
    "sobolev_inner",
    "pairing",
    "apply_semigroup",
    "apply_power",
    "random_field",
    "single_mode_field",
    "bilinear_B_direct",
    "bilinear_B_fft",
    "bilinear",
    "divergence_residual",
    "field_to_json",
    "field_from_json",
    "save_field",
    "load_field",
    "FIELD_FORMAT",
]

FIELD_FORMAT = "torus-sns-field"
FIELD_FORMAT_VERSION = 1
ORDERING = "lexicographic, first nonzero component positive"
MAX_FFT_SIZE = 256


def _is_representative(k: np.ndarray) -> np.ndarray:
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    return (kx > 0) | ((kx == 0) & (ky > 0)) | ((kx == 0) & (ky == 0) & (kz > 0))


class ModeSet:
    """Galerkin truncation ``{k in Z^3 : 0 < |k|_inf <= N}`` modulo ``k ~ -k``."""

    def __init__(self, N: int):
        N = int(N)
        if N < 1:
            raise DomainError(f"mode cutoff must be >= 1, got {N}")
        self.N = N
        r = np.arange(-N, N + 1)
        grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        reps = grid[_is_representative(grid)]
        # meshgrid with indexing="ij" already enumerates lexicographically
        self.modes = np.ascontiguousarray(reps, dtype=np.int64)
        self.modes.setflags(write=False)
        self.k2 = np.sum(self.modes.astype(float) ** 2, axis=1)
        self.kabs = np.sqrt(self.k2)
        self.kvec = self.modes.astype(float)
        L = 2 * N + 1
        self.side = L
        shifted = self.modes + N
        self.flat_index = np.ravel_multi_index(shifted.T, (L, L, L))
        self.neg_flat_index = np.ravel_multi_index((-self.modes + N).T, (L, L, L))
        self._lookup = {tuple(k): i for i, k in enumerate(self.modes.tolist())}

    def __len__(self) -> int:
        return len(self.modes)

    def __repr__(self) -> str:
        return f"ModeSet(N={self.N}, M={len(self)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ModeSet) and other.N == self.N

    def __hash__(self) -> int:
        return hash(("ModeSet", self.N))

    def index_of(self, k) -> tuple[int, bool]:
        """Return ``(i, conjugate)``: the representative slot holding mode ``k``.

        ``conjugate`` is True when ``k`` is the negative of the representative.
        """
        k = tuple(int(c) for c in k)
        if k in self._lookup:
            return self._lookup[k], False
        neg = tuple(-c for c in k)
        if neg in self._lookup:
            return self._lookup[neg], True
        raise DomainError(f"wave vector {k} is not in {self!r}")

    def power(self, alpha: float) -> np.ndarray:
        """``|k|^alpha`` per representative."""
        return self.kabs**alpha

    @cached_property
    def tangent_basis(self) -> np.ndarray:
        """Two real orthonormal vectors orthogonal to each k, shape (M, 2, 3)."""
        k = self.kvec / self.kabs[:, None]
        # cross with the coordinate axis least aligned with k
        axis = np.argmin(np.abs(k), axis=1)
        ref = np.eye(3)[axis]
        e1 = np.cross(k, ref)
        e1 /= np.linalg.norm(e1, axis=1)[:, None]
        e2 = np.cross(k, e1)
        return np.stack([e1, e2], axis=1)

    @cached_property
    def projector(self) -> np.ndarray:
        """Leray projectors ``I - k k^T/|k|^2``, shape (M, 3, 3)."""
        kk = self.kvec[:, :, None] * self.kvec[:, None, :] / self.k2[:, None, None]
        return np.eye(3)[None] - kk

    def to_cube(self, coeffs: np.ndarray) -> np.ndarray:
        """Expand representative coefficients to the full ``(2N+1)^3`` cube."""
        L = self.side
        out = np.zeros(coeffs.shape[:-2] + (L**3, 3), dtype=complex)
        out[..., self.flat_index, :] = coeffs
        out[..., self.neg_flat_index, :] = np.conj(coeffs)
        return out.reshape(coeffs.shape[:-2] + (L, L, L, 3))


@lru_cache(maxsize=None)
def mode_set(N: int) -> ModeSet:
    """Shared (cached) :class:`ModeSet` for cutoff ``N``."""
    return ModeSet(N)


def _coeffs_of(u) -> np.ndarray:
    return u.coeffs if isinstance(u, SpectralField) else np.asarray(u)


def _same_modes(u: "SpectralField", v: "SpectralField") -> None:
    if u.mode_set != v.mode_set:
        raise ModeSetMismatch(f"mode sets differ: {u.mode_set!r} vs {v.mode_set!r}")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of a real divergence-free field (or a stack of them).

    ``coeffs`` has shape ``(..., M, 3)``; leading axes are a batch.
    """

    mode_set: ModeSet
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape[-2:] != (len(self.mode_set), 3):
            raise ValueError(
                f"coefficient array must end in ({len(self.mode_set)}, 3), got {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, ms: ModeSet, batch: tuple = ()) -> "SpectralField":
        return cls(ms, np.zeros(tuple(batch) + (len(ms), 3), dtype=complex))

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-2]

    def __getitem__(self, idx) -> "SpectralField":
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched field")
        return SpectralField(self.mode_set, self.coeffs[idx])

    def __add__(self, other):
        _same_modes(self, other)
        return SpectralField(self.mode_set, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_modes(self, other)
        return SpectralField(self.mode_set, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.mode_set, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.mode_set, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.mode_set, self.coeffs / scalar)

    def norm(self, alpha: float = 0.0):
        return sobolev_norm(self, alpha)

    def allclose(self, other: "SpectralField", rtol=1e-12, atol=0.0) -> bool:
        _same_modes(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol))

    def copy(self) -> "SpectralField":
        return SpectralField(self.mode_set, self.coeffs.copy())


def leray_project(k, v) -> np.ndarray:
    """Project the complex 3-vector ``v`` onto the plane orthogonal to ``k``."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=complex)
    k2 = float(k @ k)
    if k2 == 0.0:
        raise DomainError("Leray projection is undefined at k = 0")
    return v - (k @ v) / k2 * k


def _project_coeffs(coeffs: np.ndarray, ms: ModeSet) -> np.ndarray:
    kdot = np.einsum("...mi,mi->...m", coeffs, ms.kvec)
    return coeffs - (kdot / ms.k2)[..., None] * ms.kvec


def project(u: SpectralField) -> SpectralField:
    """Mode-wise Leray projection of a whole field."""
    return SpectralField(u.mode_set, _project_coeffs(u.coeffs, u.mode_set))


def divergence_residual(u: SpectralField):
    """``max_k |k . u_k|`` (per batch member)."""
    d = np.abs(np.einsum("...mi,mi->...m", u.coeffs, u.mode_set.kvec))
    return d.max(axis=-1)


def sobolev_norm(u: SpectralField, alpha: float = 0.0):
    """``||A^{alpha/2} u||_H`` summed over the full lattice."""
    w = u.mode_set.k2**alpha
    sq = np.einsum("m,...mi->...", w, np.abs(u.coeffs) ** 2)
    out = np.sqrt(2.0 * sq)
    return float(out) if np.ndim(out) == 0 else out


def sobolev_inner(u: SpectralField, v: SpectralField, alpha: float = 0.0):
    """Real ``V_alpha`` inner product ``sum_k |k|^{2 alpha} u_k . conj(v_k)``."""
    _same_modes(u, v)
    w = u.mode_set.k2**alpha
    s = np.einsum("m,...mi,...mi->...", w, u.coeffs, np.conj(v.coeffs))
    out = 2.0 * s.real
    return float(out) if np.ndim(out) == 0 else out


def pairing(u: SpectralField, v: SpectralField):
    """H inner product ``sum_{k in Z^3} u_k . conj(v_k)`` (always real)."""
    return sobolev_inner(u, v, 0.0)


def apply_power(u: SpectralField, gamma: float) -> SpectralField:
    """``A^gamma u``: multiply mode k by ``|k|^{2 gamma}``."""
    return SpectralField(u.mode_set, u.coeffs * (u.mode_set.k2**gamma)[:, None])


def apply_semigroup(u: SpectralField, nu: float, t: float) -> SpectralField:
    """Heat/Stokes semigroup ``exp(-nu A t)``."""
    if t < 0:
        raise DomainError(f"semigroup time must be non-negative, got {t}")
    if t == 0:
        return u
    return SpectralField(u.mode_set, u.coeffs * np.exp(-nu * u.mode_set.k2 * t)[:, None])


def random_field(
    ms: ModeSet, decay: float, amplitude: float, rng: np.random.Generator, batch: tuple = ()
) -> SpectralField:
    """Gaussian divergence-free field with ``|u_k| ~ amplitude |k|^{-decay}``."""
    shape = tuple(batch) + (len(ms), 3)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = (amplitude / np.sqrt(2.0)) * ms.kabs[:, None] ** (-decay) * g
    return SpectralField(ms, _project_coeffs(c, ms))


def single_mode_field(ms: ModeSet, k, vector) -> SpectralField:
    """Field whose only non-zero pair is ``{k, -k}`` with ``u_k = P_k vector``."""
    i, conj = ms.index_of(k)
    c = np.zeros((len(ms), 3), dtype=complex)
    vec = leray_project(ms.kvec[i], np.asarray(vector, dtype=complex))
    c[i] = np.conj(vec) if conj else vec
    return SpectralField(ms, c)


# ---------------------------------------------------------------------------
# Bilinear term  B(u, v)_k = i P_k sum_{l+m=k} (k . u_l) v_m
# ---------------------------------------------------------------------------


def bilinear_B_direct(u: SpectralField, v: SpectralField) -> SpectralField:
    """Exact triad convolution over the ``(2N+1)^3`` lattice, truncated to the mode set."""
    from . import kernels

    _same_modes(u, v)
    ms = u.mode_set
    s = kernels.triad_sum(u.coeffs, v.coeffs, ms)
    return SpectralField(ms, 1j * _project_coeffs(s, ms))


DENSE_MAX_N = 2


class FFTPlan:
    """Transforms between representatives and an ``n^3`` collocation grid.

    ``transform="fft"`` scatters into a half spectrum and uses real FFTs;
    ``"dense"`` multiplies by the (pruned) real DFT matrices, which is faster
    for the small truncations where transform overhead dominates.  Both are
    the same alias-free map.
    """

    def __init__(self, ms: ModeSet, n: int | None = None, transform: str | None = None):
        minimum = 3 * ms.N + 1
        if n is None:
            n = minimum
        if n < minimum:
            raise ConfigurationError(
                f"FFT grid {n} too small for cutoff N={ms.N}: need >= {minimum} to dealias"
            )
        if n > MAX_FFT_SIZE:
            raise ConfigurationError(f"FFT grid {n} exceeds the supported maximum {MAX_FFT_SIZE}")
        self.ms = ms
        self.n = n
        nh = n // 2 + 1
        self.half_shape = (n, n, nh)
        k = ms.modes
        flat = lambda q: np.ravel_multi_index(((q[:, 0] % n), (q[:, 1] % n), q[:, 2]), self.half_shape)
        pos_z = k[:, 2] >= 0
        neg_z = k[:, 2] <= 0
        self.direct_idx = np.nonzero(pos_z)[0]
        self.direct_pos = flat(k[pos_z])
        self.conj_idx = np.nonzero(neg_z)[0]
        self.conj_pos = flat(-k[neg_z])
        # gather: k_z >= 0 read directly, otherwise read conj at -k
        self.gather_conj = np.nonzero(k[:, 2] < 0)[0]
        self.gather_pos = flat(np.where(k[:, 2:3] < 0, -k, k))
        if transform is None:
            transform = "dense" if ms.N <= DENSE_MAX_N else "fft"
        if transform not in ("fft", "dense"):
            raise ConfigurationError(f"unknown transform {transform!r}")
        self.transform = transform
        if transform == "dense":
            g = np.arange(n) * (2.0 * np.pi / n)
            pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
            phase = ms.kvec @ pts.T  # (M, P)
            cos, sin = np.cos(phase), np.sin(phase)
            # f(x) = sum_reps 2 Re(u_k e^{ik.x})
            self.synth_re, self.synth_im = 2.0 * cos, -2.0 * sin
            # u_k = n^-3 sum_x f(x) e^{-ik.x}
            self.analysis = np.ascontiguousarray(np.concatenate([cos, -sin]).T) / n**3

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        """(..., M, 3) coefficients -> (..., 3, n, n, n) real samples."""
        n = self.n
        c = np.moveaxis(coeffs, -1, -2)  # (..., 3, M)
        if self.transform == "dense":
            phys = np.ascontiguousarray(c.real) @ self.synth_re + np.ascontiguousarray(c.imag) @ self.synth_im
            return phys.reshape(c.shape[:-1] + (n, n, n))
        spec = np.zeros(c.shape[:-1] + (int(np.prod(self.half_shape)),), dtype=complex)
        spec[..., self.direct_pos] = c[..., self.direct_idx]
        spec[..., self.conj_pos] = np.conj(c[..., self.conj_idx])
        spec = spec.reshape(c.shape[:-1] + self.half_shape)
        return scipy.fft.irfftn(spec, s=(n, n, n), axes=(-3, -2, -1)) * n**3

    def gather(self, phys: np.ndarray) -> np.ndarray:
        """(..., n, n, n) real samples -> (..., M) representative coefficients."""
        n = self.n
        if self.transform == "dense":
            M = len(self.ms)
            a = phys.reshape(phys.shape[:-3] + (-1,)) @ self.analysis
            return a[..., :M] + 1j * a[..., M:]
        spec = scipy.fft.rfftn(phys, axes=(-3, -2, -1))
        spec = spec.reshape(spec.shape[:-3] + (-1,))
        out = spec[..., self.gather_pos]
        out[..., self.gather_conj] = np.conj(out[..., self.gather_conj])
        out *= 1.0 / n**3
        return out


@lru_cache(maxsize=None)
def fft_plan(N: int, n: int | None = None, transform: str | None = None) -> FFTPlan:
    return FFTPlan(mode_set(N), n, transform)


# symmetric 3x3 index -> position in the stacked upper triangle
_SYM = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _contract(P: np.ndarray, kv: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``s_i = sum_j k_j P[rows[i, j]]`` with ``P`` (..., p, M) -> (..., M, 3)."""
    s = P[..., rows[:, 0], :] * kv[:, 0] + P[..., rows[:, 1], :] * kv[:, 1] + P[..., rows[:, 2], :] * kv[:, 2]
    return np.moveaxis(s, -2, -1)


def _triad_sum_fft(u: np.ndarray, v: np.ndarray, plan: FFTPlan, same: bool) -> np.ndarray:
    """``sum_{l+m=k} (k . u_l) v_m`` via the divergence form ``ik_j (u_j v_i)^``."""
    kv = plan.ms.kvec
    up = plan.to_physical(u)  # (..., 3, n, n, n)
    if same:
        prods = np.stack([up[..., i, :, :, :] * up[..., j, :, :, :] for i, j in _UPPER], axis=-4)
        return _contract(plan.gather(prods), kv, _SYM)
    vp = plan.to_physical(v)
    # product index 3*i + j holds u_j v_i
    prods = (up[..., None, :, :, :, :] * vp[..., :, None, :, :, :]).reshape(
        np.broadcast_shapes(up.shape[:-4], vp.shape[:-4]) + (9,) + up.shape[-3:]
    )
    return _contract(plan.gather(prods), kv, np.arange(9).reshape(3, 3))


def _triad_sum_fft_sym(u: np.ndarray, w: np.ndarray, plan: FFTPlan) -> np.ndarray:
    """Triad sum of ``B(u, w) + B(w, u)`` (symmetric products ``u_i w_j + w_i u_j``)."""
    up, wp = plan.to_physical(u), plan.to_physical(w)
    prods = np.stack(
        [up[..., i, :, :, :] * wp[..., j, :, :, :] + wp[..., i, :, :, :] * up[..., j, :, :, :] for i, j in _UPPER],
        axis=-4,
    )
    return _contract(plan.gather(prods), plan.ms.kvec, _SYM)


def bilinear_B_fft(u: SpectralField, v: SpectralField, n: int | None = None) -> SpectralField:
    """Pseudo-spectral ``B(u, v)`` on an ``n^3`` grid (``n >= 3N+1``: alias-free)."""
    _same_modes(u, v)
    ms = u.mode_set
    plan = fft_plan(ms.N, n)
    s = _triad_sum_fft(u.coeffs, v.coeffs, plan, same=u is v)
    return SpectralField(ms, 1j * _project_coeffs(s, ms))


def bilinear(u: SpectralField, v: SpectralField, method: str = "fft") -> SpectralField:
    if method == "auto":
        method = resolve_bilinear(u.mode_set.N)
    if method == "fft":
        return bilinear_B_fft(u, v)
    if method == "direct":
        return bilinear_B_direct(u, v)
    raise ValueError(f"unknown bilinear method {method!r}")


def resolve_bilinear(N: int) -> str:
    """Fastest exact method for a truncation: compiled direct sums at small N."""
    from . import kernels

    return "direct" if kernels.BACKEND == "cython" and N <= 2 else "fft"


def bilinear_coeffs(u: np.ndarray, v: np.ndarray | None, ms: ModeSet, method: str = "fft") -> np.ndarray:
    """Array-level ``B(u, v)`` (``v=None`` means ``v = u``)."""
    from . import kernels

    same = v is None
    if same:
        v = u
    if method == "auto":
        method = resolve_bilinear(ms.N)
    if method == "fft":
        s = _triad_sum_fft(u, v, fft_plan(ms.N), same=same)
    elif method == "direct":
        s = kernels.triad_sum(u, v, ms)
    else:
        raise ValueError(f"unknown bilinear method {method!r}")
    return 1j * _project_coeffs(s, ms)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def field_to_json(u: SpectralField) -> str:
    """Self-describing JSON; floats are written with ``repr`` so decoding is bit-exact."""
    if u.batch_shape:
        raise ValueError("serialize one field at a time")
    records = []
    for k, c in zip(u.mode_set.modes.tolist(), u.coeffs):
        row = list(k)
        for z in c:
            row += [float(z.real), float(z.imag)]
        records.append(row)
    doc = {
        "format": FIELD_FORMAT,
        "version": FIELD_FORMAT_VERSION,
        "N": u.mode_set.N,
        "ordering": ORDERING,
        "count": len(records),
        "record": ["kx", "ky", "kz", "re_x", "im_x", "re_y", "im_y", "re_z", "im_z"],
        "modes": records,
    }
    return json.dumps(doc)


def field_from_json(text: str) -> SpectralField:
    doc = json.loads(text)
    if doc.get("format") != FIELD_FORMAT:
        raise ValueError(f"not a {FIELD_FORMAT} document")
    if doc.get("version") != FIELD_FORMAT_VERSION:
        raise ValueError(f"unsupported field format version {doc.get('version')}")
    ms = mode_set(int(doc["N"]))
    if doc["count"] != len(ms) or len(doc["modes"]) != len(ms):
        raise ValueError("mode count does not match the cutoff")
    c = np.zeros((len(ms), 3), dtype=complex)
    for row in doc["modes"]:
        i, conj = ms.index_of(row[:3])
        vec = np.array(row[3:9:2]) + 1j * np.array(row[4:9:2])
        c[i] = np.conj(vec) if conj else vec
    return SpectralField(ms, c)


def save_field(u: SpectralField, path) -> None:
    Path(path).write_text(field_to_json(u), encoding="utf-8")


def load_field(path) -> SpectralField:
    return field_from_json(Path(path).read_text(encoding="utf-8"))
