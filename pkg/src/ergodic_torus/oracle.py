"""Ground-truth stationary averages, densities, Poisson solutions and
asymptotic variances.

Densities and Poisson solutions are truncated Fourier series
u(x) = sum_k u_k exp(i k.x), |k_j| <= cutoff, stored as dense arrays indexed by
k + cutoff along each axis. Catalog drifts are trigonometric polynomials and the
diffusion is constant, so the truncated generator is a sparse banded matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .observables import Observable
from .torus import TWO_PI, SdeProblem

GAP_TOL = 1e-6
SOLVABILITY_TOL = 1e-8
_DENSE_SVD_MAX = 2000


class OracleError(ValueError):
    pass


def default_cutoff(d: int) -> int:
    return 64 if d == 1 else 32


# --------------------------------------------------------------------------- #
# closed-form Gibbs quadrature
# --------------------------------------------------------------------------- #

def gibbs_average(problem: SdeProblem, observable: Observable, n_quad: int = 512) -> float:
    """int phi exp(-2V/s^2) / int exp(-2V/s^2) by the trapezoidal rule."""
    sigma = problem.scalar_noise_level()
    if problem.potential is None or sigma is None:
        raise OracleError("not a gradient problem")
    if n_quad < 256:
        raise ValueError("n_quad must be >= 256")
    x = _grid(problem.d, n_quad)
    flat = x.reshape(-1, problem.d)
    V = np.array([problem.potential(p) for p in flat])
    w = -2.0 * V / sigma**2
    w = np.exp(w - w.max())
    phi = np.asarray(observable(flat), dtype=float)
    return float(math.fsum(phi * w) / math.fsum(w))


def gibbs_density(problem: SdeProblem, x, n_quad: int = 512) -> np.ndarray:
    """Normalized Gibbs density at points x[..., d]."""
    sigma = problem.scalar_noise_level()
    if problem.potential is None or sigma is None:
        raise OracleError("not a gradient problem")
    grid = _grid(problem.d, n_quad).reshape(-1, problem.d)
    Vg = np.array([problem.potential(p) for p in grid])
    shift = (-2.0 * Vg / sigma**2).max()
    Z = math.fsum(np.exp(-2.0 * Vg / sigma**2 - shift)) * (TWO_PI / n_quad) ** problem.d
    pts = np.asarray(x, dtype=float).reshape(-1, problem.d)
    Vx = np.array([problem.potential(p) for p in pts])
    return (np.exp(-2.0 * Vx / sigma**2 - shift) / Z).reshape(np.shape(x)[:-1])


# --------------------------------------------------------------------------- #
# grids and spectral helpers
# --------------------------------------------------------------------------- #

def _grid(d: int, n: int) -> np.ndarray:
    """Uniform grid, shape (n,)*d + (d,)."""
    axis = TWO_PI * np.arange(n) / n
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)


def _freqs(d: int, cutoff: int) -> np.ndarray:
    """All frequency vectors in [-cutoff, cutoff]^d in C order, shape (N, d)."""
    r = np.arange(-cutoff, cutoff + 1)
    return np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _flat_index(k: np.ndarray, cutoff: int) -> np.ndarray:
    n = 2 * cutoff + 1
    idx = np.zeros(k.shape[0], dtype=np.int64)
    for j in range(k.shape[1]):
        idx = idx * n + (k[:, j] + cutoff)
    return idx


def _to_grid(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Evaluate a truncated series on the uniform n^d grid."""
    d = coeffs.ndim
    cutoff = (coeffs.shape[0] - 1) // 2
    if n <= 2 * cutoff:
        raise ValueError("grid too coarse for the series")
    full = np.zeros((n,) * d, dtype=complex)
    idx = np.ix_(*([np.arange(-cutoff, cutoff + 1) % n] * d))
    full[idx] = coeffs
    return np.fft.ifftn(full) * n**d


def _spectral_diff(coeffs: np.ndarray, axis: int) -> np.ndarray:
    cutoff = (coeffs.shape[0] - 1) // 2
    shape = [1] * coeffs.ndim
    shape[axis] = -1
    k = np.arange(-cutoff, cutoff + 1).reshape(shape)
    return 1j * k * coeffs


def _series_values(coeffs: np.ndarray, x) -> np.ndarray:
    """Evaluate at arbitrary points x[..., d] (direct sum)."""
    d = coeffs.ndim
    cutoff = (coeffs.shape[0] - 1) // 2
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, d)
    ks = _freqs(d, cutoff)
    c = coeffs.reshape(-1)
    nz = np.abs(c) > 0
    phase = pts @ ks[nz].T
    vals = (np.exp(1j * phase) @ c[nz]).real
    return vals.reshape(x.shape[:-1])


def _poly_coeffs(poly, cutoff: int) -> np.ndarray:
    out = np.zeros((2 * cutoff + 1,) * poly.d, dtype=complex)
    for k, c in poly.terms.items():
        if max(abs(v) for v in k) > cutoff:
            raise OracleError("observable bandwidth exceeds cutoff")
        out[tuple(v + cutoff for v in k)] = c
    return out


def _check_problem(problem: SdeProblem) -> None:
    if problem.drift_poly is None or problem.diffusion_matrix is None:
        raise OracleError("spectral oracle needs a trigonometric drift and constant diffusion")
    if problem.d > 2:
        raise OracleError("spectral solves are limited to d <= 2")


def _generator_matrix(problem: SdeProblem, cutoff: int, adjoint: bool) -> sp.csc_matrix:
    """Truncated L (or L*) acting on coefficient vectors in _freqs order.

    L u  : (Lu)_k  = sum_i sum_q f_iq * i (k-q)_i u_{k-q} - 1/2 k.a.k u_k
    L* r : (L*r)_k = -sum_i i k_i sum_q f_iq r_{k-q}     - 1/2 k.a.k r_k
    """
    d = problem.d
    ks = _freqs(d, cutoff)
    N = ks.shape[0]
    g = np.asarray(problem.diffusion_matrix, dtype=float)
    a = g @ g.T
    diag = -0.5 * np.einsum("ni,ij,nj->n", ks, a, ks)
    rows, cols, vals = [np.arange(N)], [np.arange(N)], [diag.astype(complex)]
    for i, fi in enumerate(problem.drift_poly):
        for q, c in fi.terms.items():
            src = ks - np.asarray(q)
            ok = np.all(np.abs(src) <= cutoff, axis=1)
            kk, ss = ks[ok], src[ok]
            if adjoint:
                v = -1j * kk[:, i] * c
            else:
                v = 1j * ss[:, i] * c
            rows.append(np.nonzero(ok)[0])
            cols.append(_flat_index(ss, cutoff))
            vals.append(v.astype(complex))
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def _drop_zero_mode(A: sp.csc_matrix, zero: int):
    keep = np.r_[0:zero, zero + 1:A.shape[0]]
    return A[keep][:, keep].tocsc(), keep


def _smallest_singular_value(A: sp.csc_matrix, lu=None, iters: int = 200) -> float:
    """sigma_min by dense SVD for small systems, inverse iteration otherwise."""
    if A.shape[0] <= _DENSE_SVD_MAX:
        return float(np.linalg.svd(A.toarray(), compute_uv=False)[-1])
    lu = lu or spla.splu(A)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[0]) + 0j
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = lu.solve(lu.solve(v), trans="H")
        nw = np.linalg.norm(w)
        new = 1.0 / math.sqrt(nw)
        v = w / nw
        if abs(new - est) <= 1e-10 * new:
            return new
        est = new
    return est


# --------------------------------------------------------------------------- #
# stationary density
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SpectralDensity:
    d: int
    cutoff: int
    coeffs: np.ndarray
    residual_norm: float
    gap: float
    grid_min: float

    def __call__(self, x) -> np.ndarray:
        return _series_values(self.coeffs, x)

    def grid_values(self, n: int | None = None) -> np.ndarray:
        return _to_grid(self.coeffs, n or 4 * self.cutoff).real

    def coefficient(self, k) -> complex:
        if max(abs(v) for v in k) > self.cutoff:
            return 0j
        return complex(self.coeffs[tuple(v + self.cutoff for v in k)])

    @property
    def total_mass(self) -> float:
        return float((self.coeffs[(self.cutoff,) * self.d] * TWO_PI**self.d).real)


def _adjoint_residual(problem: SdeProblem, coeffs: np.ndarray, n: int) -> float:
    d = problem.d
    rho = _to_grid(coeffs, n).real
    x = _grid(d, n)
    a = np.asarray(problem.diffusion_matrix) @ np.asarray(problem.diffusion_matrix).T
    k = np.fft.fftfreq(n, 1.0 / n)
    out = np.zeros((n,) * d, dtype=complex)
    for i, fi in enumerate(problem.drift_poly):
        shape = [1] * d
        shape[i] = -1
        out -= 1j * k.reshape(shape) * np.fft.fftn(fi(x) * rho) / n**d
    # diffusion part in coefficient space
    diff = np.zeros_like(coeffs)
    for i in range(d):
        for j in range(d):
            if a[i, j]:
                diff += 0.5 * a[i, j] * _spectral_diff(_spectral_diff(coeffs, i), j)
    out = np.fft.ifftn(out) * n**d + _to_grid(diff, n)
    return float(np.max(np.abs(out)))


def solve_stationary_density(problem: SdeProblem, cutoff: int | None = None) -> SpectralDensity:
    """Null vector of the truncated adjoint generator with the zero mode pinned."""
    _check_problem(problem)
    d = problem.d
    cutoff = cutoff or default_cutoff(d)
    A = _generator_matrix(problem, cutoff, adjoint=True)
    N = A.shape[0]
    zero = N // 2
    pinned = 1.0 / TWO_PI**d
    Ared, keep = _drop_zero_mode(A, zero)
    rhs = -np.asarray(A[keep][:, [zero]].todense()).ravel() * pinned
    try:
        lu = spla.splu(Ared)
    except RuntimeError:
        # exactly singular factor: the gap is zero
        raise OracleError("no spectral gap at cutoff") from None
    gap = _smallest_singular_value(Ared, lu)
    if gap < GAP_TOL:
        raise OracleError("no spectral gap at cutoff")
    sol = np.empty(N, dtype=complex)
    sol[keep] = lu.solve(rhs)
    sol[zero] = pinned
    coeffs = sol.reshape((2 * cutoff + 1,) * d)
    # enforce exact conjugate symmetry of a real density
    coeffs = 0.5 * (coeffs + np.conj(coeffs[(slice(None, None, -1),) * d]))
    n = 4 * cutoff
    res = _adjoint_residual(problem, coeffs, n)
    gmin = float(_to_grid(coeffs, n).real.min())
    return SpectralDensity(d, cutoff, coeffs, res, gap, gmin)


def stationary_average(density: SpectralDensity, observable: Observable) -> float:
    """int phi dmu as a spectral inner product, exact for phi within the cutoff."""
    total = 0j
    for k, c in observable.poly.terms.items():
        total += c * density.coefficient(tuple(-v for v in k))
    return float((total * TWO_PI**density.d).real)


# --------------------------------------------------------------------------- #
# Poisson equation
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class PoissonSolution:
    coeffs: np.ndarray
    phi_bar: float
    residual_norm: float
    gauge: float

    @property
    def cutoff(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    def __call__(self, x) -> np.ndarray:
        return _series_values(self.coeffs, x)

    def gradient(self, x) -> np.ndarray:
        return np.stack([_series_values(_spectral_diff(self.coeffs, i), x) for i in range(self.d)],
                        axis=-1)


def _mu_integral(coeffs: np.ndarray, density: SpectralDensity) -> complex:
    """int u dmu = (2 pi)^d sum_k u_k rho_{-k}."""
    rho = density.coeffs[(slice(None, None, -1),) * density.d]
    return complex(np.sum(coeffs * rho) * TWO_PI**density.d)


def _apply_generator(problem: SdeProblem, coeffs: np.ndarray, n: int) -> np.ndarray:
    """L u on the n^d grid."""
    d = problem.d
    x = _grid(d, n)
    a = np.asarray(problem.diffusion_matrix) @ np.asarray(problem.diffusion_matrix).T
    out = np.zeros((n,) * d)
    for i, fi in enumerate(problem.drift_poly):
        if fi.terms:
            out += fi(x) * _to_grid(_spectral_diff(coeffs, i), n).real
    second = np.zeros_like(coeffs)
    for i in range(d):
        for j in range(d):
            if a[i, j]:
                second += 0.5 * a[i, j] * _spectral_diff(_spectral_diff(coeffs, i), j)
    return out + _to_grid(second, n).real


def solve_poisson(problem: SdeProblem, observable: Observable, cutoff: int | None = None,
                  density: SpectralDensity | None = None,
                  phi_bar: float | None = None) -> PoissonSolution:
    """Galerkin solve of L psi = phi - phi_bar with the gauge int psi dmu = 0."""
    _check_problem(problem)
    d = problem.d
    cutoff = cutoff or default_cutoff(d)
    if density is None or density.cutoff != cutoff:
        density = solve_stationary_density(problem, cutoff)
    if phi_bar is None:
        phi_bar = stationary_average(density, observable)
    # the truncated adjoint annihilates the density exactly, so the discrete
    # system is solvable iff the right-hand side integrates to zero against it
    if abs(stationary_average(density, observable) - phi_bar) > SOLVABILITY_TOL:
        raise OracleError("singular system")
    rhs = _poly_coeffs(observable.poly, cutoff)
    rhs[(cutoff,) * d] -= phi_bar
    A = _generator_matrix(problem, cutoff, adjoint=False)
    N = A.shape[0]
    zero = N // 2
    Ared, keep = _drop_zero_mode(A, zero)
    sol = np.zeros(N, dtype=complex)
    if np.any(rhs):
        sol[keep] = spla.splu(Ared).solve(rhs.reshape(-1)[keep])
    coeffs = sol.reshape((2 * cutoff + 1,) * d)
    coeffs = 0.5 * (coeffs + np.conj(coeffs[(slice(None, None, -1),) * d]))
    coeffs[(cutoff,) * d] -= _mu_integral(coeffs, density).real
    n = 4 * cutoff
    target = observable(_grid(d, n)) - phi_bar
    res = float(np.max(np.abs(_apply_generator(problem, coeffs, n) - target)))
    gauge = abs(_mu_integral(coeffs, density))
    return PoissonSolution(coeffs, float(phi_bar), res, gauge)


def asymptotic_variance(problem: SdeProblem, poisson: PoissonSolution,
                        density: SpectralDensity) -> float:
    """int |g^T grad psi|^2 dmu by trapezoidal quadrature."""
    _check_problem(problem)
    d = problem.d
    n = 4 * max(poisson.cutoff, density.cutoff)
    g = np.asarray(problem.diffusion_matrix, dtype=float)
    grad = np.stack([_to_grid(_spectral_diff(poisson.coeffs, i), n).real for i in range(d)], -1)
    flux = grad @ g
    rho = _to_grid(density.coeffs, n).real
    val = math.fsum((np.sum(flux**2, axis=-1) * rho).ravel()) * (TWO_PI / n) ** d
    return max(val, 0.0)


@dataclass(frozen=True)
class OracleSummary:
    phi_bar: float
    residual: float
    asymptotic_variance: float
    density_residual: float

    def to_json(self) -> dict:
        return {"phi_bar": self.phi_bar, "residual": self.residual,
                "asymptotic_variance": self.asymptotic_variance}


def oracle_summary(problem: SdeProblem, observable: Observable,
                   cutoff: int | None = None) -> OracleSummary:
    density = solve_stationary_density(problem, cutoff)
    poisson = solve_poisson(problem, observable, density.cutoff, density)
    return OracleSummary(poisson.phi_bar, poisson.residual_norm,
                         asymptotic_variance(problem, poisson, density), density.residual_norm)


def reference_value(problem: SdeProblem, observable: Observable, cutoff: int | None = None) -> float:
    """Gibbs quadrature where available, spectral density otherwise."""
    if problem.potential is not None and problem.scalar_noise_level() is not None:
        return gibbs_average(problem, observable)
    return stationary_average(solve_stationary_density(problem, cutoff), observable)


__all__ = [
    "OracleError", "OracleSummary", "PoissonSolution", "SpectralDensity", "asymptotic_variance",
    "default_cutoff", "gibbs_average", "gibbs_density", "oracle_summary", "reference_value",
    "solve_poisson", "solve_stationary_density", "stationary_average",
]
