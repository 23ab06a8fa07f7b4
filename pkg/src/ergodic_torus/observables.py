"""Observable catalog: trigonometric test functions addressed by string ids.

Grammar (whitespace ignored):

    one | const:<c>                         constants
    cos | sin | cos<n> | sin<n>             cos(n x1), sin(n x1)
    cos[k1,k2,...] | sin[k1,k2,...]         cos(k.x), sin(k.x)
    <id>*<id>                               products
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .trig import TrigPoly

_ATOM = re.compile(r"^(cos|sin)(\d*)$|^(cos|sin)\[([-\d,]+)\]$")


@dataclass(frozen=True)
class Observable:
    label: str
    poly: TrigPoly

    def __call__(self, x):
        return self.poly(x)

    @property
    def d(self) -> int:
        return self.poly.d

    @property
    def sup_norm(self) -> float:
        return self.poly.sup_bound()

    def sobolev_norm(self, order: int) -> float:
        """sum over multi-indices |alpha| <= order of sup |d^alpha phi| (upper bounds)."""
        total = 0.0
        for r in range(order + 1):
            for alpha in combinations_with_replacement(range(self.d), r):
                p = self.poly
                for j in alpha:
                    p = p.diff(j)
                total += p.sup_bound()
        return total

    def scaled(self, factor: float, label: str | None = None) -> "Observable":
        return Observable(label or f"{factor:g}*{self.label}", self.poly * factor)


def _atom(token: str, d: int) -> TrigPoly:
    if token == "one":
        return TrigPoly.constant(d, 1.0)
    if token.startswith("const:"):
        return TrigPoly.constant(d, float(token[6:]))
    m = _ATOM.match(token)
    if not m:
        raise ValueError(f"unknown observable {token!r}")
    if m.group(1):
        kind, n = m.group(1), int(m.group(2) or 1)
        k = (n,) + (0,) * (d - 1)
    else:
        kind = m.group(3)
        k = tuple(int(v) for v in m.group(4).split(","))
        if len(k) != d:
            raise ValueError(f"observable {token!r} needs {d} frequencies")
    return TrigPoly.cos(k) if kind == "cos" else TrigPoly.sin(k)


def parse_observable(label: str, d: int) -> Observable:
    text = label.replace(" ", "").lower()
    poly = None
    for token in text.split("*"):
        p = _atom(token, d)
        poly = p if poly is None else poly * p
    return Observable(text, poly)


def dictionary(d: int) -> list[Observable]:
    """The fixed 8-member trigonometric dictionary used as a proxy unit ball."""
    if d == 1:
        labels = [f"{f}{n}" for n in (1, 2, 3, 4) for f in ("cos", "sin")]
    elif d == 2:
        ks = ["1,0", "0,1", "1,1", "1,-1"]
        labels = [f"{f}[{k}]" for k in ks for f in ("cos", "sin")]
    else:
        raise ValueError("dictionary defined for d in {1, 2}")
    return [parse_observable(lab, d) for lab in labels]


def normalized_dictionary(d: int, order: int) -> list[Observable]:
    """Dictionary members scaled to unit W^{order,inf} norm."""
    out = []
    for obs in dictionary(d):
        out.append(obs.scaled(1.0 / obs.sobolev_norm(order), obs.label))
    return out


def evaluate_many(observables, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.stack([np.asarray(o(x)) for o in observables], axis=-1)
