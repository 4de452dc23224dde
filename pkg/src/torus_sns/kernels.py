"""Hot-kernel dispatch: compiled ``_kernels`` when available, numpy otherwise.

Set ``TORUS_SNS_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("TORUS_SNS_PURE_PYTHON") == "1":
        raise ImportError("pure-Python mode requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _lanes(u: np.ndarray, ms, B: int):
    """(B, M, 3) -> real and imaginary (L, L, L, 3, B) cubes."""
    L = ms.side
    re = np.zeros((L**3, 3, B))
    im = np.zeros((L**3, 3, B))
    ut = np.moveaxis(u, 0, -1)  # (M, 3, B)
    re[ms.flat_index] = ut.real
    im[ms.flat_index] = ut.imag
    re[ms.neg_flat_index] = ut.real
    im[ms.neg_flat_index] = -ut.imag
    return re.reshape(L, L, L, 3, B), im.reshape(L, L, L, 3, B)


# below this batch the per-field kernel is as fast and skips the transpose
LANES_MIN_BATCH = 8


def _triad_sum_compiled(u: np.ndarray, v: np.ndarray, ms) -> np.ndarray:
    same = v is u
    batch = np.broadcast_shapes(u.shape[:-2], v.shape[:-2])
    u = np.broadcast_to(u, batch + u.shape[-2:])
    v = np.broadcast_to(v, batch + v.shape[-2:])
    nb = int(np.prod(batch))
    reps = np.ascontiguousarray(ms.modes, dtype=np.int_)
    if nb >= LANES_MIN_BATCH:
        ur, ui = _lanes(u.reshape(nb, len(ms), 3), ms, nb)
        vr, vi = (ur, ui) if same else _lanes(v.reshape(nb, len(ms), 3), ms, nb)
        ore, oim = _compiled.triad_sum_lanes(ur, ui, vr, vi, reps, ms.N)
        return np.moveaxis(ore + 1j * oim, -1, 0).reshape(batch + (len(ms), 3))
    L = ms.side
    uc = np.ascontiguousarray(ms.to_cube(u).reshape((-1, L, L, L, 3)))
    vc = np.ascontiguousarray(ms.to_cube(v).reshape((-1, L, L, L, 3)))
    out = _compiled.triad_sum_cube(uc, vc, reps, ms.N)
    return out.reshape(batch + (len(ms), 3))


def triad_sum(u: np.ndarray, v: np.ndarray, ms, backend: str | None = None) -> np.ndarray:
    """``sum_{l+m=k} (k . u_l) v_m`` for every representative ``k`` (no projection)."""
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _triad_sum_compiled(u, v, ms)
    if backend == "numpy":
        return _kernels_py.triad_sum(u, v, ms)
    raise ValueError(f"unknown backend {backend!r}")
