"""Numpy implementation of the direct triad convolution (fallback for ``_kernels``)."""

from functools import lru_cache

import numpy as np

# bytes of complex workspace per chunk of batch members
_CHUNK_BYTES = 64 * 2**20


@lru_cache(maxsize=None)
def triad_table(N: int):
    """All ``(k, l, m)`` with ``k`` a representative, ``l + m = k``, ``l, m`` in the cube.

    Returns ``(k_index, l_flat, m_flat, starts)`` sorted by ``k_index``; ``starts``
    marks the first triad of every representative (for ``np.add.reduceat``).
    """
    from .spectral import mode_set

    ms = mode_set(N)
    L = 2 * N + 1
    r = np.arange(-N, N + 1)
    cube = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    cube = cube[np.any(cube != 0, axis=1)]
    ks, ls, mss = [], [], []
    for i, k in enumerate(ms.modes):
        m = k[None, :] - cube
        ok = np.all(np.abs(m) <= N, axis=1) & np.any(m != 0, axis=1)
        ks.append(np.full(ok.sum(), i))
        ls.append(np.ravel_multi_index((cube[ok] + N).T, (L, L, L)))
        mss.append(np.ravel_multi_index((m[ok] + N).T, (L, L, L)))
    k_index = np.concatenate(ks)
    starts = np.searchsorted(k_index, np.arange(len(ms)))
    return k_index, np.concatenate(ls), np.concatenate(mss), starts


def triad_sum(u: np.ndarray, v: np.ndarray, ms) -> np.ndarray:
    k_index, l_flat, m_flat, starts = triad_table(ms.N)
    batch = u.shape[:-2]
    L3 = ms.side**3
    uf = ms.to_cube(u).reshape((-1, L3, 3))
    vf = ms.to_cube(v).reshape((-1, L3, 3))
    kk = ms.kvec[k_index]
    out = np.empty((uf.shape[0], len(ms), 3), dtype=complex)
    step = max(1, _CHUNK_BYTES // (16 * 4 * len(k_index)))
    for b0 in range(0, uf.shape[0], step):
        ub = uf[b0 : b0 + step]
        dot = np.einsum("bti,ti->bt", ub[:, l_flat, :], kk)
        contrib = dot[..., None] * vf[b0 : b0 + step][:, m_flat, :]
        out[b0 : b0 + step] = np.add.reduceat(contrib, starts, axis=1)
    return out.reshape(batch + (len(ms), 3))
