"""Real trigonometric polynomials on the torus T^d = [0, 2*pi)^d.

A polynomial is stored as a map from integer frequency vectors k to complex
coefficients c_k of exp(i k.x).  Real-valuedness is kept by construction
(c_{-k} = conj(c_k)).  Drifts of the catalog problems and all observables are
of this form, which lets the spectral oracle assemble its operators exactly and
lets the compiled kernels evaluate derivatives in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

Freq = tuple[int, ...]


def _clean(terms: Mapping[Freq, complex], tol: float = 0.0) -> dict[Freq, complex]:
    return {k: complex(c) for k, c in terms.items() if abs(c) > tol}


@dataclass(frozen=True)
class TrigPoly:
    d: int
    terms: Mapping[Freq, complex] = field(default_factory=dict)

    def __post_init__(self):
        for k in self.terms:
            if len(k) != self.d:
                raise ValueError(f"frequency {k} does not match dimension {self.d}")
        object.__setattr__(self, "terms", _clean(self.terms))

    # construction -----------------------------------------------------------
    @classmethod
    def constant(cls, d: int, value: float) -> "TrigPoly":
        return cls(d, {(0,) * d: complex(value)})

    @classmethod
    def cos(cls, k: Iterable[int], coef: float = 1.0) -> "TrigPoly":
        k = tuple(int(v) for v in k)
        if not any(k):
            return cls.constant(len(k), coef)
        neg = tuple(-v for v in k)
        return cls(len(k), {k: 0.5 * coef, neg: 0.5 * coef})

    @classmethod
    def sin(cls, k: Iterable[int], coef: float = 1.0) -> "TrigPoly":
        k = tuple(int(v) for v in k)
        if not any(k):
            return cls(len(k))
        neg = tuple(-v for v in k)
        return cls(len(k), {k: -0.5j * coef, neg: 0.5j * coef})

    # algebra ----------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, TrigPoly):
            other = TrigPoly.constant(self.d, float(other))
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0.0) + c
        return TrigPoly(self.d, out)

    __radd__ = __add__

    def __neg__(self):
        return TrigPoly(self.d, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, TrigPoly):
            return TrigPoly(self.d, {k: c * other for k, c in self.terms.items()})
        out: dict[Freq, complex] = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                out[k] = out.get(k, 0.0) + c1 * c2
        return TrigPoly(self.d, _clean(out, 1e-15))

    __rmul__ = __mul__

    def diff(self, axis: int) -> "TrigPoly":
        """Exact partial derivative along ``axis``."""
        return TrigPoly(self.d, {k: 1j * k[axis] * c for k, c in self.terms.items()})

    # queries ----------------------------------------------------------------
    @property
    def bandwidth(self) -> int:
        return max((max(abs(v) for v in k) for k in self.terms), default=0)

    @property
    def is_constant(self) -> bool:
        return all(not any(k) for k in self.terms)

    def coefficient(self, k: Freq) -> complex:
        return self.terms.get(tuple(k), 0.0)

    def sup_bound(self) -> float:
        """Upper bound on the sup norm (sum of coefficient moduli)."""
        return float(sum(abs(c) for c in self.terms.values()))

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected trailing dimension {self.d}, got {x.shape}")
        out = np.zeros(x.shape[:-1])
        ks, ca, cb = self.cos_sin_arrays()
        for k, a, b in zip(ks, ca, cb):
            theta = x @ k
            out = out + a * np.cos(theta) + b * np.sin(theta)
        return out if out.ndim else float(out)

    def cos_sin_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Half-plane real form: p(x) = sum_t ca_t cos(k_t.x) + cb_t sin(k_t.x)."""
        ks, ca, cb = [], [], []
        seen = set()
        for k in sorted(self.terms):
            if k in seen:
                continue
            neg = tuple(-v for v in k)
            seen.update((k, neg))
            c = self.terms[k]
            ks.append(k)
            if not any(k):
                ca.append(c.real)
                cb.append(0.0)
            else:
                # c e^{ikx} + conj(c) e^{-ikx} = 2 Re(c) cos - 2 Im(c) sin
                ca.append(2.0 * c.real)
                cb.append(-2.0 * c.imag)
        return (np.array(ks, dtype=float).reshape(-1, self.d),
                np.array(ca, dtype=float), np.array(cb, dtype=float))


def lie_bracket_poly(h: list[TrigPoly], ht: list[TrigPoly]) -> list[TrigPoly]:
    """[h, ht]_j = sum_i h_i d_i ht_j - ht_i d_i h_j, exactly."""
    d = len(h)
    out = []
    for j in range(d):
        acc = TrigPoly(h[0].d)
        for i in range(d):
            acc = acc + h[i] * ht[j].diff(i) - ht[i] * h[j].diff(i)
        out.append(acc)
    return out
