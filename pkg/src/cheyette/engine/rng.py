"""Counter-based normal draws: Philox4x32-10 plus an inverse-CDF transform.

Every standard normal is a pure function of ``(seed, path, step, brownian)``,
so any subset of paths or steps can be regenerated independently of how a
batch is split or scheduled.

Counter words are ``(path & 0xffffffff, step, brownian, path >> 32)`` and the
key is ``(seed & 0xffffffff, seed >> 32)``. The first two output words build
one 53-bit uniform in (0, 1), which goes through Acklam's rational inverse
normal CDF followed by one Halley correction step.
"""
from __future__ import annotations

import math
from typing import Protocol

import numba as nb
import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint32(0x9E3779B9)
PHILOX_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

# Acklam's coefficients for the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02, 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02, 6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00, -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    p = np.uint64(a) * np.uint64(b)
    return np.uint32(p >> np.uint64(32)), np.uint32(p & _MASK32)


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32; all arguments are uint32."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for _ in range(10):
        hi0, lo0 = _mulhilo(PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(PHILOX_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + PHILOX_W0)
        k1 = np.uint32(k1 + PHILOX_W1)
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _uniform(w0, w1):
    hi = np.float64(np.uint32(w0) >> np.uint32(5))
    lo = np.float64(np.uint32(w1) >> np.uint32(6))
    return (hi * 67108864.0 + lo + 0.5) / 9007199254740992.0


@nb.njit(cache=True)
def _inverse_lower(p):
    # p in (0, 0.5]; Acklam's rational approximation plus one Halley step.
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q) / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True)
def inverse_normal_cdf(p):
    """Inverse standard normal CDF for p in (0, 1).

    The upper half uses the reflection x(p) = -x(1 - p); 1 - p is exact there.
    """
    if p > 0.5:
        return -_inverse_lower(1.0 - p)
    return _inverse_lower(p)


@nb.njit(cache=True)
def normal_at(seed, path, step, brownian):
    """The standard normal for one (path, step, brownian) coordinate."""
    s = np.uint64(seed)
    p = np.uint64(path)
    w0, w1, _, _ = philox4x32(
        np.uint32(p & _MASK32),
        np.uint32(step),
        np.uint32(brownian),
        np.uint32(p >> np.uint64(32)),
        np.uint32(s & _MASK32),
        np.uint32(s >> np.uint64(32)),
    )
    return inverse_normal_cdf(_uniform(w0, w1))


@nb.njit(cache=True)
def _fill_step(seed, path_start, step, out):
    nbr, n = out.shape
    for b in range(nbr):
        for i in range(n):
            out[b, i] = normal_at(seed, path_start + i, step, b)


@nb.njit(cache=True)
def _fill_block(seed, path_start, out):
    ns, nbr, n = out.shape
    for k in range(ns):
        for b in range(nbr):
            for i in range(n):
                out[k, b, i] = normal_at(seed, path_start + i, k, b)


@nb.njit(cache=True)
def _uniforms(seed, path_start, step, brownian, n):
    out = np.empty(n)
    s = np.uint64(seed)
    for i in range(n):
        p = np.uint64(path_start + i)
        w0, w1, _, _ = philox4x32(
            np.uint32(p & _MASK32),
            np.uint32(step),
            np.uint32(brownian),
            np.uint32(p >> np.uint64(32)),
            np.uint32(s & _MASK32),
            np.uint32(s >> np.uint64(32)),
        )
        out[i] = _uniform(w0, w1)
    return out


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be in [0, 2**64)")
    return seed


def uniforms(seed: int, n: int, step: int = 0, brownian: int = 0, path_start: int = 0) -> np.ndarray:
    return _uniforms(np.uint64(_check_seed(seed)), path_start, step, brownian, n)


def normal_step(seed: int, step: int, n_brownians: int, n_paths: int, path_start: int = 0) -> np.ndarray:
    """Normals for one time step, shape ``(n_brownians, n_paths)``."""
    out = np.empty((n_brownians, n_paths))
    _fill_step(np.uint64(_check_seed(seed)), path_start, step, out)
    return out


def normal_block(seed: int, n_steps: int, n_brownians: int, n_paths: int, path_start: int = 0) -> np.ndarray:
    """Normals for a whole simulation, shape ``(n_steps, n_brownians, n_paths)``."""
    out = np.empty((n_steps, n_brownians, n_paths))
    _fill_block(np.uint64(_check_seed(seed)), path_start, out)
    return out


class RandomSource(Protocol):
    """Supplies the independent standard normals of one time step."""

    def normals(self, step: int, n_brownians: int, n_paths: int) -> np.ndarray: ...


class PhiloxNormals:
    """Pseudo-random normals keyed by (seed, path, step, brownian)."""

    def __init__(self, seed: int, path_start: int = 0):
        self.seed = _check_seed(seed)
        self.path_start = int(path_start)

    def normals(self, step: int, n_brownians: int, n_paths: int) -> np.ndarray:
        return normal_step(self.seed, step, n_brownians, n_paths, self.path_start)

    def block(self, n_steps: int, n_brownians: int, n_paths: int) -> np.ndarray:
        return normal_block(self.seed, n_steps, n_brownians, n_paths, self.path_start)


class InjectedNormals:
    """Pre-drawn normals of shape ``(n_steps, n_brownians, n_paths)``."""

    def __init__(self, z: np.ndarray):
        self.z = np.asarray(z, dtype=float)
        if self.z.ndim != 3:
            raise ValueError("injected normals must have shape (steps, brownians, paths)")

    def normals(self, step: int, n_brownians: int, n_paths: int) -> np.ndarray:
        if step >= self.z.shape[0] or self.z.shape[1] != n_brownians or self.z.shape[2] != n_paths:
            raise ValueError(
                f"injected normals of shape {self.z.shape} do not cover step {step} "
                f"with {n_brownians} Brownians and {n_paths} paths"
            )
        return self.z[step]

    def block(self, n_steps: int, n_brownians: int, n_paths: int) -> np.ndarray:
        if self.z.shape[0] < n_steps or self.z.shape[1:] != (n_brownians, n_paths):
            raise ValueError(f"injected normals of shape {self.z.shape} do not cover the simulation")
        return self.z[:n_steps]
