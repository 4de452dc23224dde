"""Independent oracles shared by the test modules."""

import numpy as np

from torus_sns.rng import generator
from torus_sns.spectral import SpectralField, mode_set, random_field


def rand(ms, seed, decay=1.0, amp=1.0, batch=()):
    return random_field(ms, decay, amp, generator(seed), batch=batch)


def full_lattice(u: SpectralField):
    """Dict k -> u_k over both members of every Hermitian pair (test oracle)."""
    out = {}
    for k, c in zip(u.mode_set.modes.tolist(), u.coeffs):
        out[tuple(k)] = np.array(c)
        out[tuple(-q for q in k)] = np.conj(c)
    return out


def brute_B(u: SpectralField, v: SpectralField) -> dict:
    """``i P_k sum_{l+m=k} (k . u_l) v_m`` by explicit double loop over the full lattice."""
    U, V = full_lattice(u), full_lattice(v)
    out = {}
    for k in u.mode_set.modes.tolist():
        k = np.array(k, dtype=float)
        acc = np.zeros(3, dtype=complex)
        for l, ul in U.items():
            m = tuple(int(a) for a in k - np.array(l))
            if m in V:
                acc += (k @ ul) * V[m]
        acc = 1j * (acc - (k @ acc) / (k @ k) * k)
        out[tuple(int(a) for a in k)] = acc
    return out


def single(ms, k, vec):
    from torus_sns.spectral import single_mode_field

    return single_mode_field(ms, k, vec)


def cube_points(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 2 * np.pi, size=(n, 3))


def evaluate(u: SpectralField, x) -> np.ndarray:
    """Physical value ``sum_k u_k e^{i k.x}`` at points ``x`` (n, 3)."""
    U = full_lattice(u)
    out = np.zeros((len(x), 3), dtype=complex)
    for k, c in U.items():
        out += np.exp(1j * (np.asarray(x) @ np.array(k, dtype=float)))[:, None] * c
    return out
