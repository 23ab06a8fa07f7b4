"""Counter-based scheme increments.

Every random number is a pure function of (master_seed, stream_id, counter):
the 64-bit word at position ``counter`` of a stream is lane ``counter % 4`` of
the Philox4x64-10 block keyed by (master_seed, stream_id) at block counter
``counter // 4``.  A trajectory's step n with m noise components reads
counters n*m .. n*m + m - 1, so results never depend on scheduling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import _numba_setup  # noqa: F401

U64 = np.uint64
_M32 = U64(0xFFFFFFFF)
_S32 = U64(32)
_S11 = U64(11)
_S63 = U64(63)
_PHILOX_M0 = U64(0xD2E7470EE14C6C93)
_PHILOX_M1 = U64(0xCA5A826395121157)
_PHILOX_W0 = U64(0x9E3779B97F4A7C15)
_PHILOX_W1 = U64(0xBB67AE8584CAA73B)
_TWO_M53 = 2.0 ** -53
_HALF53 = U64(2**52)
_TOP53 = U64(2**53 - 1)
_SQRT3 = math.sqrt(3.0)

GAUSSIAN, RADEMACHER, THREE_POINT = 0, 1, 2
NOISE_CODES = {"gaussian": GAUSSIAN, "rademacher": RADEMACHER, "three_point": THREE_POINT}


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    lo = a * b
    a_lo, a_hi = a & _M32, a >> _S32
    b_lo, b_hi = b & _M32, b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    mid = (p0 >> _S32) + (p1 & _M32) + (p2 & _M32)
    hi = a_hi * b_hi + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, lo


@njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds; returns the four output words."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _PHILOX_W0
            k1 = k1 + _PHILOX_W1
        hi0, lo0 = _mulhilo(_PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(_PHILOX_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(cache=True)
def raw_word(seed, stream, counter):
    w = philox4x64(counter >> U64(2), U64(0), U64(0), U64(0), seed, stream)
    lane = counter & U64(3)
    if lane == 0:
        return w[0]
    if lane == 1:
        return w[1]
    if lane == 2:
        return w[2]
    return w[3]


# rational inverse normal CDF (Acklam), relative error below 1.2e-9
_IA = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
       1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_IB = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
       6.680131188771972e+01, -1.328068155288572e+01)
_IC = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
       -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ID = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
       3.754408661907416e+00)
_P_LOW = 0.02425


@njit(cache=True)
def _tail(p):
    q = math.sqrt(-2.0 * math.log(p))
    num = ((((_IC[0] * q + _IC[1]) * q + _IC[2]) * q + _IC[3]) * q + _IC[4]) * q + _IC[5]
    den = (((_ID[0] * q + _ID[1]) * q + _ID[2]) * q + _ID[3]) * q + 1.0
    return num / den


@njit(cache=True)
def inverse_normal_cdf(p):
    if p < _P_LOW:
        return _tail(p)
    if p > 1.0 - _P_LOW:
        return -_tail(1.0 - p)
    q = p - 0.5
    r = q * q
    num = (((((_IA[0] * r + _IA[1]) * r + _IA[2]) * r + _IA[3]) * r + _IA[4]) * r + _IA[5]) * q
    den = ((((_IB[0] * r + _IB[1]) * r + _IB[2]) * r + _IB[3]) * r + _IB[4]) * r + 1.0
    return num / den


@njit(cache=True, inline="always")
def word_to_noise(w, kind):
    if kind == 1:
        return 1.0 if (w >> _S63) == U64(0) else -1.0
    # midpoint of the 53-bit grid; the upper half is mapped through its exact
    # complement because i + 0.5 is not representable there and would round to 1
    i = w >> _S11
    if kind == 0:
        if i < _HALF53:
            return inverse_normal_cdf((float(i) + 0.5) * _TWO_M53)
        return -inverse_normal_cdf((float(_TOP53 - i) + 0.5) * _TWO_M53)
    u = (float(i) + 0.5) * _TWO_M53
    if u < 1.0 / 6.0:
        return -_SQRT3
    if u < 1.0 / 3.0:
        return _SQRT3
    return 0.0


@njit(cache=True)
def fill_noise(seed, stream, start, kind, out):
    """out[j] = noise at counter start + j."""
    n = out.shape[0]
    block = U64(0xFFFFFFFFFFFFFFFF)
    w0 = w1 = w2 = w3 = U64(0)
    for j in range(n):
        c = start + U64(j)
        b = c >> U64(2)
        if b != block or j == 0:
            w0, w1, w2, w3 = philox4x64(b, U64(0), U64(0), U64(0), seed, stream)
            block = b
        lane = c & U64(3)
        if lane == 0:
            w = w0
        elif lane == 1:
            w = w1
        elif lane == 2:
            w = w2
        else:
            w = w3
        out[j] = word_to_noise(w, kind)


def _gaussian_moment(k: int) -> float:
    return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))


@dataclass(frozen=True)
class NoiseModel:
    kind: str

    def __post_init__(self):
        if self.kind not in NOISE_CODES:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def code(self) -> int:
        return NOISE_CODES[self.kind]

    def exact_moment(self, k: int) -> float:
        if k % 2:
            return 0.0
        if self.kind == "gaussian":
            return _gaussian_moment(k)
        if self.kind == "rademacher":
            return 1.0
        return 3.0 ** (k // 2) / 3.0  # (1/3) * (sqrt 3)^k

    @property
    def exact_moments(self) -> dict[int, float]:
        return {k: self.exact_moment(k) for k in range(1, 9)}


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int
    counter: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "counter"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer")

    def advanced(self, n: int) -> "RngStream":
        return replace(self, counter=(self.counter + n) % 2**64)


def derive_stream_id(*parts) -> int:
    """Stable 64-bit stream id from a tuple of labels (problem, scheme, delta, repeat, ...)."""
    text = "|".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def sample_increment(model: NoiseModel, stream: RngStream, m: int) -> tuple[np.ndarray, RngStream]:
    """Draw m i.i.d. increments; the returned stream has its counter advanced by m."""
    if m < 1:
        raise ValueError("m must be >= 1")
    out = np.empty(m)
    fill_noise(U64(stream.master_seed), U64(stream.stream_id), U64(stream.counter), model.code, out)
    return out, stream.advanced(m)


def draw_many(model: NoiseModel, stream: RngStream, n: int) -> np.ndarray:
    out = np.empty(n)
    fill_noise(U64(stream.master_seed), U64(stream.stream_id), U64(stream.counter), model.code, out)
    return out


@dataclass
class MomentRow:
    order: int
    sample: float
    exact: float
    z: float
    passed: bool


def validate_moments(model: NoiseModel, max_order: int = 8, n_samples: int = 10**6,
                     stream: RngStream | None = None) -> list[MomentRow]:
    """Compare sample moments with the exact table; |z| > 5 fails."""
    if n_samples < 10**4:
        raise ValueError("n_samples must be >= 1e4")
    stream = stream or RngStream(0, derive_stream_id("validate_moments", model.kind))
    x = draw_many(model, stream, n_samples)
    rows = []
    for k in range(1, max_order + 1):
        xk = x**k
        sample = float(xk.mean())
        exact = model.exact_moment(k)
        # standard error from the exact law
        var = model.exact_moment(2 * k) - exact**2
        se = math.sqrt(max(var, 0.0) / n_samples)
        if se == 0.0:
            z = 0.0 if abs(sample - exact) <= 1e-12 * max(1.0, abs(exact)) else math.inf
        else:
            z = (sample - exact) / se
        rows.append(MomentRow(k, sample, exact, z, abs(z) <= 5.0))
    return rows
