"""One-step integrators and a Monte-Carlo weak-order certifier."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .noise import U64, NoiseModel, RngStream
from .torus import SdeProblem, StateBlowUp, wrap


class SchemeError(RuntimeError):
    pass


class ImplicitSolveError(SchemeError):
    pass


_CLAIMED_ORDER = {"explicit_em": 1, "split_step": 1, "weak2": 2}
_DEFAULT_NOISE = {"explicit_em": "gaussian", "split_step": "gaussian", "weak2": "three_point"}


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    implicit_tol: float = 1e-12
    implicit_max_iters: int = 50

    def __post_init__(self):
        if self.kind not in _CLAIMED_ORDER:
            raise ValueError(f"unknown scheme {self.kind!r}; choose from {sorted(_CLAIMED_ORDER)}")

    @property
    def claimed_weak_order(self) -> int:
        return _CLAIMED_ORDER[self.kind]

    @property
    def default_noise(self) -> str:
        return _DEFAULT_NOISE[self.kind]

    @property
    def code(self) -> int:
        return K.SCHEME_CODES[self.kind]

    def check_admissible(self, problem: SdeProblem, delta: float) -> None:
        """Raise ``SchemeError`` when the scheme cannot be run on ``problem`` at ``delta``."""
        if not 0.0 < delta < 1.0:
            raise SchemeError("time step must lie in (0, 1)")
        if self.kind == "split_step" and delta * problem.lipschitz_bound > 0.5:
            raise SchemeError(
                f"split_step needs delta * Lip(f) <= 0.5 (got {delta * problem.lipschitz_bound:g})")
        if self.kind == "weak2" and not problem.has_constant_diffusion:
            raise SchemeError("requires constant diffusion")


def _finite_or_raise(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise StateBlowUp("state blow-up")
    return wrap(x)


def em_step(problem: SdeProblem, x, delta: float, eta) -> np.ndarray:
    """wrap(x + f(x) delta + g(x) eta sqrt(delta))."""
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    raw = x + problem.drift(x) * delta + problem.diffusion(x) @ eta * np.sqrt(delta)
    return _finite_or_raise(raw)


def solve_implicit_drift(problem: SdeProblem, x, delta: float, tol: float = 1e-12,
                         max_iters: int = 50) -> np.ndarray:
    """Fixed point y = x + f(y) delta, iterated from y = x.

    Under delta * Lip(f) <= 0.5 the map is a contraction and the iterates stay
    on the branch closest to x.  Returns the unwrapped y.
    """
    x = np.asarray(x, dtype=float)
    y = x.copy()
    for _ in range(max_iters + 1):
        r = x + problem.drift(y) * delta - y
        if np.max(np.abs(r)) <= tol:
            return y
        y = y + r
    raise ImplicitSolveError("implicit solve failed")


def split_step(problem: SdeProblem, x, delta: float, eta, cfg: SchemeConfig | None = None) -> np.ndarray:
    cfg = cfg or SchemeConfig("split_step")
    if delta * problem.lipschitz_bound > 0.5:
        raise SchemeError("split_step needs delta * Lip(f) <= 0.5")
    y = solve_implicit_drift(problem, x, delta, cfg.implicit_tol, cfg.implicit_max_iters)
    raw = y + problem.diffusion(y) @ np.asarray(eta, dtype=float) * np.sqrt(delta)
    return _finite_or_raise(raw)


def _drift_second_order_terms(problem: SdeProblem, x: np.ndarray, a: np.ndarray):
    """(Df(x), f.grad f + 1/2 a:hess f) at x."""
    f = problem.drift(x)
    d = problem.d
    if problem.drift_poly is not None:
        jac = np.array([[fi.diff(j)(x) for j in range(d)] for fi in problem.drift_poly])
        hess_term = np.array([
            sum(a[j, l] * fi.diff(j).diff(l)(x) for j in range(d) for l in range(d))
            for fi in problem.drift_poly
        ])
    else:
        if problem.drift_jacobian is None:
            raise SchemeError("weak2 needs a drift Jacobian")
        jac = np.asarray(problem.drift_jacobian(x), dtype=float)
        h = 1e-5
        hess_term = np.zeros(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            djac = (np.asarray(problem.drift_jacobian(x + e)) - np.asarray(problem.drift_jacobian(x - e))) / (2 * h)
            # djac[i, l] = d_j d_l f_i
            hess_term += djac @ a[:, j]
    return jac, jac @ f + 0.5 * hess_term


def weak2_step(problem: SdeProblem, x, delta: float, xi) -> np.ndarray:
    """Simplified order-2 weak Taylor step for constant diffusion."""
    if not problem.has_constant_diffusion:
        raise SchemeError("requires constant diffusion")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g = problem.diffusion_matrix
    f = problem.drift(x)
    jac, lf = _drift_second_order_terms(problem, x, g @ g.T)
    gxi = g @ xi
    raw = (x + f * delta + gxi * np.sqrt(delta) + 0.5 * delta**2 * lf
           + 0.5 * delta**1.5 * jac @ gxi)
    return _finite_or_raise(raw)


def step(cfg: SchemeConfig, problem: SdeProblem, x, delta: float, noise) -> np.ndarray:
    if cfg.kind == "explicit_em":
        return em_step(problem, x, delta, noise)
    if cfg.kind == "split_step":
        return split_step(problem, x, delta, noise, cfg)
    return weak2_step(problem, x, delta, noise)


# -- weak order certificate ---------------------------------------------------

def _moments_match_gaussian(model: NoiseModel, order: int) -> bool:
    gauss = NoiseModel("gaussian")
    return all(abs(model.exact_moment(k) - gauss.exact_moment(k)) < 1e-12 for k in range(1, order + 1))


def _start_points(d: int, n: int) -> np.ndarray:
    """Deterministic, well-spread start points on T^d (rank-1 lattice)."""
    gen = np.array([1.0, 0.6180339887498949, 0.4142135623730951][:d])
    j = np.arange(n)[:, None] + 0.5
    return np.mod(j / n * gen * 2 * np.pi, 2 * np.pi) if d > 1 else (j / n) * 2 * np.pi


def _fit_slope(x, y) -> tuple[float, float]:
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


@dataclass
class OrderCheckReport:
    scheme: str
    problem: str
    noise: str
    p_claimed: int
    deltas: list[float]
    max_defect: list[float]
    defect_stderr: list[float]
    defect_by_order: list[dict[int, float]]
    db04: list[float]
    slope: float
    db04_slope: float
    K: float
    passed: bool
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme, "problem": self.problem, "noise": self.noise,
            "p_claimed": self.p_claimed, "slope": self.slope, "pass": self.passed,
            "deltas": self.deltas, "max_defect": self.max_defect,
            "defect_stderr": self.defect_stderr, "db04": self.db04,
            "db04_slope": self.db04_slope, "K": self.K, "notes": self.notes,
        }


def _resolve(scheme, noise):
    if isinstance(scheme, str) and scheme == "reference":
        return "reference", K.EM_SUBSTEP, noise or "gaussian", SchemeConfig("explicit_em")
    cfg = scheme if isinstance(scheme, SchemeConfig) else SchemeConfig(scheme)
    return cfg.kind, cfg.code, noise or cfg.default_noise, cfg


def coupled_increments(schemes, problem: SdeProblem, delta: float, n_samples: int,
                       stream: RngStream, noises=None, n_sub: int = 512, n_points: int = 4):
    """Scheme and fine-step reference displacements sharing one Brownian path.

    Returns (ref, lead_ref, sch, lead_sch, noise labels); ``ref`` has shape
    (n_points, n_samples // n_points, d) and ``sch`` an extra leading scheme axis.
    """
    noises = noises or [None] * len(schemes)
    resolved = [_resolve(s, n) for s, n in zip(schemes, noises)]
    for label, _, _, cfg in resolved:
        if label != "reference":
            cfg.check_admissible(problem, delta)
    cfg = resolved[0][3]
    pp = K.pack_problem(problem)
    x0s = _start_points(problem.d, n_points).reshape(n_points, problem.d)
    per_point = max(1, n_samples // n_points)
    codes = np.array([r[1] for r in resolved], dtype=np.int64)
    kinds = np.array([NoiseModel(r[2]).code for r in resolved], dtype=np.int64)
    ref, lref, sch, lsch, status = K.coupled_increments_kernel(
        x0s, per_point, float(delta), int(n_sub), codes, kinds,
        U64(stream.master_seed), U64(stream.stream_id), pp.ks, pp.comp, pp.ca, pp.cb, pp.quad, pp.g,
        cfg.implicit_tol, cfg.implicit_max_iters)
    if np.any(status == K.IMPLICIT_FAILED):
        raise ImplicitSolveError("implicit solve failed")
    shape = (n_points, per_point, problem.d)
    return (ref.reshape(shape), lref.reshape(shape), sch.reshape((len(schemes),) + shape),
            lsch.reshape((len(schemes),) + shape), [r[2] for r in resolved])


def _defects(ref, lref, sch, lsch, model: NoiseModel, order: int):
    """Largest |mean defect| over index tuples and start points, with its standard error."""
    d = ref.shape[-1]
    use_cv = _moments_match_gaussian(model, order)
    best, best_se = 0.0, 0.0
    for alpha in itertools.product(range(d), repeat=order):
        a = list(alpha)
        diff = np.prod(ref[..., a], axis=-1) - np.prod(sch[..., a], axis=-1)
        if use_cv:
            # E[prod lead_ref - prod lead_sch] = 0 when the noise moments agree up to `order`
            diff -= np.prod(lref[..., a], axis=-1) - np.prod(lsch[..., a], axis=-1)
        est = np.abs(diff.mean(axis=1))
        j = int(np.argmax(est))
        if est[j] >= best:
            best = float(est[j])
            best_se = float(diff[j].std(ddof=1) / np.sqrt(diff.shape[1]))
    return best, best_se


def weak_order_checks(schemes, problem: SdeProblem, delta_grid, orders, n_samples: int,
                      stream: RngStream, noises=None, n_sub: int = 512, n_points: int = 4,
                      min_samples: int = 10**5) -> list[OrderCheckReport]:
    """Certify several schemes against one shared fine-step reference per delta.

    For every delta and monomial order s = 1..2p+1 the defect
    sup_alpha |E prod delta_alpha - E prod deltabar_alpha| is estimated over all
    index tuples and a fixed set of start points; the true increment is
    replaced by EM substepping at delta / n_sub.  Where the scheme's noise
    matches Gaussian moments up to order s, the difference of the pure-noise
    leading terms (exactly mean zero) is subtracted as a control variate.
    E prod |deltabar_alpha| at order 2p+2 is reported as well.  PASS needs both
    fitted log-log slopes >= p + 1 - 0.4.
    """
    delta_grid = [float(v) for v in delta_grid]
    orders = list(orders)
    if n_samples < min_samples:
        raise ValueError(f"n_samples must be >= {min_samples}")
    if len(delta_grid) < 2:
        raise ValueError("need at least two time steps")
    ratios = [abs(a / b - 2.0) for a, b in zip(delta_grid, delta_grid[1:])]
    if max(ratios) > 1e-9:
        raise ValueError("delta_grid must be decreasing with ratio 2")
    for p in orders:
        for dl in delta_grid:
            if dl / n_sub > dl ** (p + 1):
                raise SchemeError(f"reference too coarse at delta={dl:g}: delta/{n_sub} > delta^{p + 1}")
    ns = len(schemes)
    max_def = [[] for _ in range(ns)]
    max_se = [[] for _ in range(ns)]
    by_order = [[] for _ in range(ns)]
    db04 = [[] for _ in range(ns)]
    labels = None
    # every delta reuses the same Brownian samples (common random numbers)
    for dl in delta_grid:
        ref, lref, sch, lsch, labels = coupled_increments(
            schemes, problem, dl, n_samples, stream, noises, n_sub, n_points)
        for q, p in enumerate(orders):
            model = NoiseModel(labels[q])
            row, worst, worst_se = {}, 0.0, 0.0
            for s in range(1, 2 * p + 2):
                est, se = _defects(ref, lref, sch[q], lsch[q], model, s)
                row[s] = est
                if est >= worst:
                    worst, worst_se = est, se
            absmom = max(
                float(np.max(np.mean(np.prod(np.abs(sch[q][..., list(a)]), axis=-1), axis=1)))
                for a in itertools.product(range(problem.d), repeat=2 * p + 2)
            )
            max_def[q].append(worst)
            max_se[q].append(worst_se)
            by_order[q].append(row)
            db04[q].append(absmom)

    reports = []
    for q, p in enumerate(orders):
        notes = []
        usable = [(dl, v) for dl, v in zip(delta_grid, max_def[q]) if v > 0]
        if not usable:
            slope = float("inf")
            notes.append("all defects are exactly zero")
        elif len(usable) >= 2:
            slope = _fit_slope(*zip(*usable))[0]
        else:
            slope = float("nan")
        db_slope = _fit_slope(delta_grid, db04[q])[0]
        k_fit = max(v / dl ** (p + 1) for dl, v in zip(delta_grid, db04[q]))
        for dl, v, se in zip(delta_grid, max_def[q], max_se[q]):
            if v > 0 and v <= 2 * se:
                notes.append(f"defect at delta={dl:g} within 2 standard errors of zero")
        threshold = p + 1 - 0.4
        label = schemes[q] if isinstance(schemes[q], str) else schemes[q].kind
        reports.append(OrderCheckReport(
            label, problem.catalog_id, labels[q], p, delta_grid, max_def[q], max_se[q], by_order[q],
            db04[q], slope, db_slope, k_fit, bool(slope >= threshold and db_slope >= threshold), notes))
    return reports


def weak_order_check(scheme, problem: SdeProblem, delta_grid, p: int, n_samples: int,
                     stream: RngStream, noise: str | None = None, n_sub: int = 512,
                     n_points: int = 4, min_samples: int = 10**5) -> OrderCheckReport:
    """Single-scheme form of :func:`weak_order_checks`."""
    return weak_order_checks([scheme], problem, delta_grid, [p], n_samples, stream, [noise],
                             n_sub, n_points, min_samples)[0]
