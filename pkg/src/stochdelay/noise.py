"""Wiener increments with reproducible per-member streams, Brownian-bridge
refinement, and the Ito stochastic convolution.

Streams: member ``m`` of an ensemble seeded with ``seed`` draws from a Philox
(counter-based) generator keyed by ``splitmix64(seed, m, stream)``.  The key
depends only on those three integers, so results do not depend on how the
ensemble is split across workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1

STREAM_PATH = 0
STREAM_BRIDGE = 1
STREAM_GAMMA = 2
STREAM_AUX = 3


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(seed: int, *parts: int) -> int:
    k = splitmix64(int(seed) & _MASK)
    for p in parts:
        k = splitmix64(k ^ (int(p) & _MASK))
    return k


def stream(seed: int, *parts: int) -> np.random.Generator:
    """Independent generator for (seed, *parts)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *parts)))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments dW_i over [t_i, t_i + dt), shape (n_steps, d)."""

    dt: float
    increments: np.ndarray
    seed: int
    member: int = 0
    level: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def d(self) -> int:
        return self.increments.shape[1]

    def W(self) -> np.ndarray:
        """W at t_0..t_N, shape (n_steps + 1, d)."""
        return np.concatenate([np.zeros((1, self.d)), np.cumsum(self.increments, axis=0)])


def sample_increments(n_steps: int, dt: float, d: int, seed: int, member: int = 0) -> np.ndarray:
    if n_steps < 1 or not dt > 0:
        raise ValueError("need n_steps >= 1 and dt > 0")
    g = stream(seed, member, STREAM_PATH)
    return np.sqrt(dt) * g.standard_normal((n_steps, d))


def sample_path(n_steps: int, dt: float, d: int = 1, seed: int = 0, member: int = 0) -> NoisePath:
    return NoisePath(dt, sample_increments(n_steps, dt, d, seed, member), seed, member)


def sample_ensemble(n_paths: int, n_steps: int, dt: float, d: int, seed: int, first_member: int = 0) -> np.ndarray:
    """Increments for members first_member .. first_member + n_paths - 1: (n_paths, n_steps, d)."""
    return np.stack([sample_increments(n_steps, dt, d, seed, first_member + k) for k in range(n_paths)])


def bridge_refine(increments: np.ndarray, dt: float, seed: int, member: int, level: int) -> np.ndarray:
    """Halve the step by Brownian-bridge midpoint sampling.

    Each coarse increment D splits into D/2 + sqrt(dt)/2 Z and D/2 - sqrt(dt)/2 Z,
    so coarse increments are exactly sums of fine ones.
    """
    inc = np.asarray(increments, dtype=float)
    g = stream(seed, member, STREAM_BRIDGE, level)
    z = 0.5 * np.sqrt(dt) * g.standard_normal(inc.shape)
    fine = np.empty((2 * inc.shape[0],) + inc.shape[1:])
    fine[0::2] = 0.5 * inc + z
    fine[1::2] = 0.5 * inc - z
    return fine


def refine_path(path: NoisePath) -> NoisePath:
    fine = bridge_refine(path.increments, path.dt, path.seed, path.member, path.level + 1)
    return NoisePath(path.dt / 2, fine, path.seed, path.member, path.level + 1)


def bridge_hierarchy(path: NoisePath, n_levels: int) -> list[NoisePath]:
    """The coarse path followed by ``n_levels - 1`` successive bridge refinements."""
    out = [path]
    for _ in range(n_levels - 1):
        out.append(refine_path(out[-1]))
    return out


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    inc = np.asarray(increments)
    n = inc.shape[-2]
    if n % factor:
        raise ValueError("step count not divisible by factor")
    return inc.reshape(inc.shape[:-2] + (n // factor, factor, inc.shape[-1])).sum(axis=-2)


def duhamel_sum(sg, dt: float, forcing: np.ndarray) -> np.ndarray:
    """sum_{j<i} S(t_i - t_j) forcing_j for every i; forcing is (..., N + 1, n).

    Evaluated by Z_{i+1} = S(dt)(Z_i + forcing_i), the same sum rearranged
    through the semigroup law.
    """
    f = np.asarray(forcing, dtype=float)
    out = np.zeros_like(f)
    z = np.zeros(f.shape[:-2] + f.shape[-1:])
    for i in range(f.shape[-2] - 1):
        z = sg.apply(dt, z + f[..., i, :])
        out[..., i + 1, :] = z
    return out


def noise_forcing(psi: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """psi dW_i on the time grid, padded with a zero row at t_N: (..., N + 1, n)."""
    inc = np.asarray(increments, dtype=float)
    f = inc @ np.atleast_2d(psi)
    pad = np.zeros(f.shape[:-2] + (1,) + f.shape[-1:])
    return np.concatenate([f, pad], axis=-2)


def stochastic_convolution(sg, psi: np.ndarray, path: NoisePath, t: float) -> np.ndarray:
    """Left-point (Ito) sum  sum_i S(t - t_i) psi dW_i  at time t."""
    i = int(round(t / path.dt))
    if abs(i * path.dt - t) > 1e-9 * max(1.0, t) or i > path.n_steps or i < 0:
        raise ValueError(f"t={t} is not on the path grid")
    psi = np.atleast_2d(psi)
    z = np.zeros(psi.shape[-1])
    for j in range(i):
        z = sg.apply(path.dt, z + path.increments[j] @ psi)
    return z


def stochastic_convolution_path(sg, psi: np.ndarray, increments: np.ndarray, dt: float) -> np.ndarray:
    return duhamel_sum(sg, dt, noise_forcing(psi, increments))
