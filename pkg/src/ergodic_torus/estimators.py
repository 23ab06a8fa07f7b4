"""Time-averaging estimators, block statistics, Richardson extrapolation and
ensemble averages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .noise import U64, NoiseModel, RngStream, derive_stream_id
from .observables import Observable
from .schemes import ImplicitSolveError, SchemeConfig, SchemeError
from .torus import SdeProblem, StateBlowUp, wrap


def time_average(values: Sequence[float]) -> float:
    """(1/N) sum_{n=0}^{N-1} phi(X_n), compensated."""
    values = list(values)
    if not values:
        raise ValueError("time average of an empty sequence")
    return math.fsum(values) / len(values)


def block_statistics(block_means: Sequence[float], c: float = 2.0) -> tuple[float, float]:
    """Unbiased sample variance of the block means and the CI half-width c*sqrt(D/M)."""
    b = np.asarray(block_means, dtype=float)
    M = b.size
    if M < 2:
        raise ValueError("need >= 2 blocks")
    mean = math.fsum(b) / M
    var = math.fsum((b - mean) ** 2) / (M - 1)
    return var, c * math.sqrt(var / M)


def richardson(value_coarse: float, value_fine: float, p: int) -> float:
    """Two-grid extrapolation (2^p fine - coarse) / (2^p - 1), fine at half the step."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if value_coarse == value_fine:
        return value_fine
    r = 2.0**p
    return (r * value_fine - value_coarse) / (r - 1.0)


@dataclass
class EstimatorResult:
    value: float
    delta: float
    n_steps: int
    horizon: float
    block_means: list[float]
    sampled_variance: float
    ci_halfwidth: float
    c_multiplier: float = 2.0
    observable: str = ""
    burnin: int = 0
    final_state: list[float] = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return len(self.block_means)


@dataclass
class BatchRun:
    """Raw kernel output for many repeats and observables on shared trajectories."""

    block_sums: np.ndarray   # (repeats, observables, blocks)
    n_steps: int
    delta: float
    finals: np.ndarray
    burnin: int = 0

    @property
    def block_means(self) -> np.ndarray:
        return self.block_sums / (self.n_steps // self.block_sums.shape[2])

    @property
    def values(self) -> np.ndarray:
        """(repeats, observables) time averages."""
        r, o, _ = self.block_sums.shape
        out = np.empty((r, o))
        for i in range(r):
            for j in range(o):
                out[i, j] = math.fsum(self.block_sums[i, j]) / self.n_steps
        return out


def _check_status(status: np.ndarray) -> None:
    if np.any(status == K.IMPLICIT_FAILED):
        raise ImplicitSolveError("implicit solve failed")
    if np.any(status == K.BLOW_UP):
        raise StateBlowUp("state blow-up")


def simulate_batch(problem: SdeProblem, scheme: SchemeConfig, observables: Sequence[Observable],
                   x0, delta: float, n_steps: int, n_blocks: int, master_seed: int,
                   stream_ids: Sequence[int], noise: str | None = None, burnin: int = 0) -> BatchRun:
    """Run one trajectory per stream id and accumulate block sums of every observable."""
    if n_steps < 1 or n_blocks < 1 or n_steps % n_blocks:
        raise ValueError("n_steps must be a positive multiple of n_blocks")
    if burnin < 0:
        raise ValueError("burnin must be >= 0")
    scheme.check_admissible(problem, delta)
    noise = noise or scheme.default_noise
    pp = K.pack_problem(problem)
    po = K.pack_observables([o.poly for o in observables])
    x0 = wrap(np.asarray(x0, dtype=float).reshape(problem.d))
    ids = np.array([int(s) for s in stream_ids], dtype=np.uint64)
    x0s = np.tile(x0, (len(ids), 1))
    sums, status, finals = K.time_average_kernel(
        x0s, int(n_steps), int(burnin), int(n_blocks), scheme.code, NoiseModel(noise).code,
        float(delta), U64(master_seed), ids, pp.ks, pp.comp, pp.ca, pp.cb, pp.quad, pp.g,
        po.ks, po.comp, po.ca, po.cb, po.n_obs, scheme.implicit_tol, scheme.implicit_max_iters)
    _check_status(status)
    return BatchRun(sums, n_steps, delta, finals, burnin)


def run_time_average(problem: SdeProblem, scheme: SchemeConfig, observable: Observable, x0,
                     delta: float, n_steps: int, n_blocks: int, stream: RngStream,
                     noise: str | None = None, burnin: int = 0, c: float = 2.0) -> EstimatorResult:
    """Single-pass time average of one trajectory with block statistics."""
    if n_blocks < 2:
        raise ValueError("need >= 2 blocks")
    if stream.counter:
        raise ValueError("trajectories start at counter 0 of their stream")
    run = simulate_batch(problem, scheme, [observable], x0, delta, n_steps, n_blocks,
                         stream.master_seed, [stream.stream_id], noise, burnin)
    block_means = run.block_means[0, 0]
    var, half = block_statistics(block_means, c)
    return EstimatorResult(
        value=float(run.values[0, 0]), delta=delta, n_steps=n_steps, horizon=n_steps * delta,
        block_means=[float(v) for v in block_means], sampled_variance=var, ci_halfwidth=half,
        c_multiplier=c, observable=observable.label, burnin=burnin,
        final_state=[float(v) for v in run.finals[0]])


def ensemble_average(problem: SdeProblem, scheme: SchemeConfig, observable: Observable,
                     t_final: float, delta: float, n_trajectories: int, x0, stream: RngStream,
                     noise: str | None = None) -> tuple[float, float]:
    """Mean of phi over L independent trajectories at time t_final, and its standard error."""
    if n_trajectories < 2:
        raise ValueError("need >= 2 trajectories")
    n_steps = round(t_final / delta)
    if abs(n_steps * delta - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be an integer multiple of delta")
    x0 = wrap(np.asarray(x0, dtype=float).reshape(problem.d))
    if n_steps == 0:
        return float(observable(x0)), 0.0
    scheme.check_admissible(problem, delta)
    noise = noise or scheme.default_noise
    pp = K.pack_problem(problem)
    ids = np.array([derive_stream_id(stream.stream_id, "ensemble", l) for l in range(n_trajectories)],
                   dtype=np.uint64)
    finals, status = K.final_state_kernel(
        np.tile(x0, (n_trajectories, 1)), int(n_steps), scheme.code, NoiseModel(noise).code,
        float(delta), U64(stream.master_seed), ids, pp.ks, pp.comp, pp.ca, pp.cb, pp.quad, pp.g,
        scheme.implicit_tol, scheme.implicit_max_iters)
    _check_status(status)
    vals = np.asarray(observable(finals), dtype=float)
    return float(math.fsum(vals) / vals.size), float(vals.std(ddof=1) / math.sqrt(vals.size))


def reference_trajectory(problem: SdeProblem, scheme: SchemeConfig, x0, delta: float, n_steps: int,
                         stream: RngStream, noise: str | None = None) -> np.ndarray:
    """States X_0..X_{n_steps-1} from the pure-Python steppers (slow; for cross-checks)."""
    from .noise import sample_increment
    from .schemes import step

    noise = NoiseModel(noise or scheme.default_noise)
    x = wrap(np.asarray(x0, dtype=float).reshape(problem.d))
    out = [x]
    for _ in range(n_steps - 1):
        eta, stream = sample_increment(noise, stream, problem.m)
        x = step(scheme, problem, x, delta, eta)
        out.append(x)
    return np.array(out)


__all__ = [
    "BatchRun", "EstimatorResult", "SchemeError", "block_statistics", "ensemble_average",
    "reference_trajectory", "richardson", "run_time_average", "simulate_batch", "time_average",
]
