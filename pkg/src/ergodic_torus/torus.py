"""Torus state space, SDE problem descriptions, the problem catalog and
hypoellipticity diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .trig import TrigPoly, lie_bracket_poly

TWO_PI = 2.0 * np.pi

VectorField = Callable[[np.ndarray], np.ndarray]


class StateBlowUp(FloatingPointError):
    """Raised when a state stops being finite."""


def wrap(raw) -> np.ndarray:
    """Map raw coordinates onto [0, 2*pi)^d.

    Raises ``StateBlowUp`` ("non-finite state") for nan/inf input.
    """
    x = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(x)):
        raise StateBlowUp("non-finite state")
    y = np.mod(x, TWO_PI)
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(y >= TWO_PI, 0.0, y)


@dataclass(frozen=True)
class SdeProblem:
    """dX = f(X) dt + g(X) dW on T^d with m driving Wiener processes.

    Catalog problems also carry ``drift_poly`` (f as trigonometric polynomials)
    and ``diffusion_matrix`` (constant g); the spectral oracle and the compiled
    simulation kernels need both.
    """

    d: int
    m: int
    drift: VectorField
    diffusion: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    potential: Optional[Callable[[np.ndarray], float]] = None
    lipschitz_bound: float = 0.0
    catalog_id: str = "custom"
    drift_poly: Optional[tuple[TrigPoly, ...]] = field(default=None, repr=False)
    diffusion_matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def has_constant_diffusion(self) -> bool:
        return self.diffusion_matrix is not None

    def diffusion_tensor(self, x) -> np.ndarray:
        g = np.asarray(self.diffusion(x), dtype=float)
        return g @ g.T

    def scalar_noise_level(self) -> Optional[float]:
        """sigma if g == sigma * I, else None."""
        if self.diffusion_matrix is None or self.d != self.m:
            return None
        g = self.diffusion_matrix
        sigma = g[0, 0]
        if sigma > 0 and np.allclose(g, sigma * np.eye(self.d), rtol=0, atol=1e-14):
            return float(sigma)
        return None


def eval_drift(problem: SdeProblem, x) -> np.ndarray:
    return np.asarray(problem.drift(np.asarray(x, dtype=float)), dtype=float)


def eval_diffusion(problem: SdeProblem, x) -> np.ndarray:
    return np.asarray(problem.diffusion(np.asarray(x, dtype=float)), dtype=float)


def _poly_problem(catalog_id: str, drift_poly, g, lipschitz, potential=None) -> SdeProblem:
    drift_poly = tuple(drift_poly)
    d = len(drift_poly)
    g = np.array(g, dtype=float).reshape(d, -1)
    g.setflags(write=False)
    jac_poly = [[fi.diff(j) for j in range(d)] for fi in drift_poly]

    def drift(x):
        return np.array([fi(x) for fi in drift_poly], dtype=float)

    def diffusion(x):
        return g.copy()

    def jacobian(x):
        return np.array([[dij(x) for dij in row] for row in jac_poly], dtype=float)

    return SdeProblem(
        d=d, m=g.shape[1], drift=drift, diffusion=diffusion, drift_jacobian=jacobian,
        potential=potential, lipschitz_bound=lipschitz, catalog_id=catalog_id,
        drift_poly=drift_poly, diffusion_matrix=g,
    )


def _grad1d() -> SdeProblem:
    V = TrigPoly.cos([1], -1.0)
    return _poly_problem("grad1d", [TrigPoly.sin([1], -1.0)], [[1.0]], 1.0,
                         potential=lambda x: float(V(np.atleast_1d(x))))


def _zero1d() -> SdeProblem:
    return _poly_problem("zero1d", [TrigPoly(1)], [[1.0]], 0.0,
                         potential=lambda x: 0.0)


def _nongrad2d() -> SdeProblem:
    f1 = TrigPoly.sin([1, 0], -1.0) + TrigPoly.sin([-1, 1], 0.3)
    f2 = TrigPoly.sin([0, 1], -1.0)
    # row-sum bound of the Jacobian: |cos x1| + 2 * 0.3 |cos(x2 - x1)|, |cos x2|
    return _poly_problem("nongrad2d", [f1, f2], np.eye(2), 1.6)


def _hypo2d() -> SdeProblem:
    f1 = TrigPoly.sin([0, 1])
    f2 = TrigPoly.constant(2, 0.5)
    return _poly_problem("hypo2d", [f1, f2], [[0.0], [1.0]], 1.0)


CATALOG: dict[str, Callable[[], SdeProblem]] = {
    "grad1d": _grad1d,
    "zero1d": _zero1d,
    "nongrad2d": _nongrad2d,
    "hypo2d": _hypo2d,
}


def get_problem(problem_id: str) -> SdeProblem:
    try:
        return CATALOG[problem_id.lower()]()
    except KeyError:
        raise KeyError(f"unknown problem {problem_id!r}; choose from {sorted(CATALOG)}") from None


# brackets -------------------------------------------------------------------

def _fd_jacobian(h: VectorField, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(h(x + e)) - np.asarray(h(x - e))) / (2 * step))
    return np.stack(cols, axis=1)


def lie_bracket(h: VectorField, ht: VectorField, x, step: float = 1e-5) -> np.ndarray:
    """[h, ht](x) = (h.grad) ht - (ht.grad) h with central-difference Jacobians."""
    x = np.asarray(x, dtype=float)
    return _fd_jacobian(ht, x, step) @ np.asarray(h(x)) - _fd_jacobian(h, x, step) @ np.asarray(ht(x))


def _constant_field(v: np.ndarray) -> VectorField:
    v = np.array(v, dtype=float)
    return lambda x: v


def hormander_fields(problem: SdeProblem, depth: int):
    """Vector fields spanning Lambda_depth; polynomial when the problem allows."""
    if depth < 0 or depth > 3:
        raise ValueError("depth must be in 0..3")
    if problem.drift_poly is not None:
        d = problem.d
        base = [list(problem.drift_poly)]
        base += [[TrigPoly.constant(d, c) for c in col] for col in problem.diffusion_matrix.T]
        fields, frontier = list(base), list(base)
        for _ in range(depth):
            frontier = [lie_bracket_poly(hb, h) for h in frontier for hb in base]
            frontier = [h for h in frontier if any(c.terms for c in h)]
            fields += frontier
        return [(lambda x, h=h: np.array([c(x) for c in h])) for h in fields]

    base = [problem.drift] + [
        (lambda x, k=k: np.asarray(problem.diffusion(x))[:, k]) for k in range(problem.m)
    ]
    fields, frontier = list(base), list(base)
    for _ in range(depth):
        frontier = [(lambda x, hb=hb, h=h: lie_bracket(hb, h, x)) for h in frontier for hb in base]
        fields += frontier
    return fields


def hormander_rank(problem: SdeProblem, x, depth: int, tol: float = 1e-8) -> int:
    """Numerical rank of Lambda_depth(x)."""
    x = np.asarray(x, dtype=float)
    vals = np.stack([np.asarray(h(x), dtype=float) for h in hormander_fields(problem, depth)], axis=1)
    s = np.linalg.svd(vals, compute_uv=False)
    return int(np.sum(s > tol))
