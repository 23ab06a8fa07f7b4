"""Compiled trajectory kernels.

Problems reach the kernels as flat arrays describing a trigonometric drift
(terms ca*cos(k.x) + cb*sin(k.x) added to component ``comp``) and a constant
diffusion matrix; observables use the same term layout with ``comp`` naming
the observable.  Repeats run under ``prange``; each one owns its own stream,
so the output does not depend on the thread count.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit, prange

from .noise import U64, fill_noise

TWO_PI = 2.0 * math.pi

EXPLICIT_EM, SPLIT_STEP, WEAK2, EM_SUBSTEP = 0, 1, 2, 3
SCHEME_CODES = {"explicit_em": EXPLICIT_EM, "split_step": SPLIT_STEP, "weak2": WEAK2}

OK, IMPLICIT_FAILED, BLOW_UP = 0, 1, 2
_NOISE_CHUNK = 1024


class PackedProblem(NamedTuple):
    d: int
    m: int
    ks: np.ndarray      # (nt, d) frequencies
    comp: np.ndarray    # (nt,) drift component
    ca: np.ndarray
    cb: np.ndarray
    quad: np.ndarray    # (nt,) k^T a k
    g: np.ndarray       # (d, m)


class PackedObservables(NamedTuple):
    ks: np.ndarray
    comp: np.ndarray
    ca: np.ndarray
    cb: np.ndarray
    n_obs: int


def pack_problem(problem) -> PackedProblem:
    if problem.drift_poly is None or problem.diffusion_matrix is None:
        raise ValueError("compiled kernels need a trigonometric drift and constant diffusion")
    g = np.ascontiguousarray(problem.diffusion_matrix, dtype=float)
    a = g @ g.T
    ks, comp, ca, cb = [], [], [], []
    for i, fi in enumerate(problem.drift_poly):
        k, a_, b_ = fi.cos_sin_arrays()
        ks.append(k)
        ca.append(a_)
        cb.append(b_)
        comp.append(np.full(len(a_), i, dtype=np.int64))
    ks = np.concatenate(ks).reshape(-1, problem.d)
    quad = np.einsum("ti,ij,tj->t", ks, a, ks)
    return PackedProblem(problem.d, problem.m, np.ascontiguousarray(ks), np.concatenate(comp),
                         np.concatenate(ca), np.concatenate(cb), quad, g)


def pack_observables(polys) -> PackedObservables:
    d = polys[0].d
    ks, comp, ca, cb = [], [], [], []
    for i, p in enumerate(polys):
        k, a_, b_ = p.cos_sin_arrays()
        ks.append(k.reshape(-1, d))
        ca.append(a_)
        cb.append(b_)
        comp.append(np.full(len(a_), i, dtype=np.int64))
    return PackedObservables(np.ascontiguousarray(np.concatenate(ks)), np.concatenate(comp),
                             np.concatenate(ca), np.concatenate(cb), len(polys))


# -- pointwise pieces --------------------------------------------------------

@njit(cache=True, inline="always")
def _drift(x, ks, comp, ca, cb, f):
    for i in range(f.shape[0]):
        f[i] = 0.0
    for t in range(ks.shape[0]):
        th = 0.0
        for j in range(x.shape[0]):
            th += ks[t, j] * x[j]
        v = 0.0
        if ca[t] != 0.0:
            v += ca[t] * math.cos(th)
        if cb[t] != 0.0:
            v += cb[t] * math.sin(th)
        f[comp[t]] += v


@njit(cache=True, inline="always")
def _observe(x, ks, comp, ca, cb, out):
    for i in range(out.shape[0]):
        out[i] = 0.0
    for t in range(ks.shape[0]):
        th = 0.0
        for j in range(x.shape[0]):
            th += ks[t, j] * x[j]
        v = 0.0
        if ca[t] != 0.0:
            v += ca[t] * math.cos(th)
        if cb[t] != 0.0:
            v += cb[t] * math.sin(th)
        out[comp[t]] += v


@njit(cache=True, inline="always")
def _noise_term(g, eta, eo, sqdt, w):
    for i in range(g.shape[0]):
        acc = 0.0
        for j in range(g.shape[1]):
            acc += g[i, j] * eta[eo + j]
        w[i] = acc * sqdt


@njit(cache=True, inline="always")
def increment(scheme, x, delta, eta, eo, ks, comp, ca, cb, quad, g, tol, maxit, out, f, w, y, tv, tdv):
    """Writes the (unwrapped) one-step displacement into ``out``; returns a status code.

    The noise vector is eta[eo:eo + m].
    """
    d = x.shape[0]
    sqdt = math.sqrt(delta)
    _noise_term(g, eta, eo, sqdt, w)
    if scheme == EXPLICIT_EM:
        _drift(x, ks, comp, ca, cb, f)
        for i in range(d):
            out[i] = f[i] * delta + w[i]
        return OK
    if scheme == SPLIT_STEP:
        for i in range(d):
            y[i] = x[i]
        converged = False
        for it in range(maxit + 1):
            _drift(y, ks, comp, ca, cb, f)
            res = 0.0
            for i in range(d):
                r = x[i] + f[i] * delta - y[i]
                f[i] = r
                res = max(res, abs(r))
            if res <= tol:
                converged = True
                break
            if it == maxit:
                break
            for i in range(d):
                y[i] += f[i]
        if not converged:
            return IMPLICIT_FAILED
        for i in range(d):
            out[i] = y[i] - x[i] + w[i]
        return OK
    # WEAK2: x + f D + w + 1/2 D^2 (f.grad f + 1/2 a:hess f) + 1/2 D^{3/2} (Df g) xi
    nt = ks.shape[0]
    for i in range(d):
        f[i] = 0.0
    for t in range(nt):
        th = 0.0
        for j in range(d):
            th += ks[t, j] * x[j]
        s, c = math.sin(th), math.cos(th)
        tv[t] = ca[t] * c + cb[t] * s
        tdv[t] = -ca[t] * s + cb[t] * c
        f[comp[t]] += tv[t]
    for i in range(d):
        out[i] = f[i] * delta + w[i]
    half_d2 = 0.5 * delta * delta
    half_d = 0.5 * delta
    for t in range(nt):
        kf = 0.0
        kw = 0.0
        for j in range(d):
            kf += ks[t, j] * f[j]
            kw += ks[t, j] * w[j]
        # w already carries sqrt(D), so 1/2 D^{3/2} Df g xi = 1/2 D (Df w)
        out[comp[t]] += half_d2 * (tdv[t] * kf - 0.5 * quad[t] * tv[t]) + half_d * tdv[t] * kw
    return OK


@njit(cache=True, inline="always")
def wrap_inplace(x):
    for i in range(x.shape[0]):
        v = x[i]
        if not math.isfinite(v):
            return BLOW_UP
        v = v % TWO_PI
        if v >= TWO_PI:
            v = 0.0
        x[i] = v
    return OK


# -- trajectory kernels ------------------------------------------------------

@njit(cache=True, parallel=True)
def time_average_kernel(x0s, n_steps, burnin, n_blocks, scheme, noise_kind, delta, seed,
                        stream_ids, ks, comp, ca, cb, quad, g, oks, ocomp, oca, ocb, n_obs,
                        tol, maxit):
    """Block sums of each observable along one trajectory per repeat.

    Sums run over X_burnin .. X_{burnin+n_steps-1}; block b holds the contiguous
    run of n_steps // n_blocks states.  Kahan-compensated.
    """
    n_rep, d = x0s.shape
    m = g.shape[1]
    nt = ks.shape[0]
    blen = n_steps // n_blocks
    sums = np.zeros((n_rep, n_obs, n_blocks))
    status = np.zeros(n_rep, dtype=np.int64)
    finals = np.empty((n_rep, d))
    total = burnin + n_steps
    for r in prange(n_rep):
        x = x0s[r].copy()
        out = np.empty(d)
        f = np.empty(d)
        w = np.empty(d)
        y = np.empty(d)
        tv = np.empty(nt)
        tdv = np.empty(nt)
        vals = np.empty(n_obs)
        comp_err = np.zeros(n_obs)
        acc = np.zeros(n_obs)
        buf = np.empty(_NOISE_CHUNK * m)
        sid = stream_ids[r]
        cur_block = -1
        for n in range(total):
            if n >= burnin:
                b = (n - burnin) // blen
                if b != cur_block:
                    if cur_block >= 0:
                        for o in range(n_obs):
                            sums[r, o, cur_block] = acc[o]
                    for o in range(n_obs):
                        acc[o] = 0.0
                        comp_err[o] = 0.0
                    cur_block = b
                _observe(x, oks, ocomp, oca, ocb, vals)
                for o in range(n_obs):
                    yk = vals[o] - comp_err[o]
                    tk = acc[o] + yk
                    comp_err[o] = (tk - acc[o]) - yk
                    acc[o] = tk
            if n == total - 1:
                break
            k = n % _NOISE_CHUNK
            if k == 0:
                fill_noise(seed, sid, U64(n * m), noise_kind, buf)
            st = increment(scheme, x, delta, buf, k * m, ks, comp, ca, cb, quad, g,
                           tol, maxit, out, f, w, y, tv, tdv)
            if st != OK:
                status[r] = st
                break
            for i in range(d):
                x[i] += out[i]
            st = wrap_inplace(x)
            if st != OK:
                status[r] = st
                break
        if cur_block >= 0:
            for o in range(n_obs):
                sums[r, o, cur_block] = acc[o]
        finals[r] = x
    return sums, status, finals


@njit(cache=True, parallel=True)
def final_state_kernel(x0s, n_steps, scheme, noise_kind, delta, seed, stream_ids,
                       ks, comp, ca, cb, quad, g, tol, maxit):
    n_rep, d = x0s.shape
    m = g.shape[1]
    nt = ks.shape[0]
    finals = x0s.copy()
    status = np.zeros(n_rep, dtype=np.int64)
    for r in prange(n_rep):
        x = finals[r]
        out = np.empty(d)
        f = np.empty(d)
        w = np.empty(d)
        y = np.empty(d)
        tv = np.empty(nt)
        tdv = np.empty(nt)
        buf = np.empty(_NOISE_CHUNK * m)
        for n in range(n_steps):
            k = n % _NOISE_CHUNK
            if k == 0:
                fill_noise(seed, stream_ids[r], U64(n * m), noise_kind, buf)
            st = increment(scheme, x, delta, buf, k * m, ks, comp, ca, cb, quad, g,
                           tol, maxit, out, f, w, y, tv, tdv)
            if st != OK:
                status[r] = st
                break
            for i in range(d):
                x[i] += out[i]
            st = wrap_inplace(x)
            if st != OK:
                status[r] = st
                break
    return finals, status


@njit(cache=True)
def _std_normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@njit(cache=True, parallel=True)
def coupled_increments_kernel(x0s, n_per_point, delta, n_sub, schemes, noise_kinds, seed, stream_id,
                              ks, comp, ca, cb, quad, g, tol, maxit):
    """One-step displacements of several schemes and of a fine-step EM reference.

    Sample i from start point p reads the Gaussian substep increments at
    counters (p * n_per_point + i) * n_sub * m onward.  Each scheme's noise is
    coupled to the same path: eta = (sum of substep normals) / sqrt(n_sub),
    mapped through its quantile for non-Gaussian laws.  ``lead_*`` hold the
    pure-noise leading terms g eta sqrt(delta) and g xi sqrt(delta).
    """
    n_pts, d = x0s.shape
    m = g.shape[1]
    nt = ks.shape[0]
    ns = schemes.shape[0]
    n_tot = n_pts * n_per_point
    ref = np.empty((n_tot, d))
    lead_ref = np.empty((n_tot, d))
    sch = np.empty((ns, n_tot, d))
    lead_sch = np.empty((ns, n_tot, d))
    status = np.zeros(n_tot, dtype=np.int64)
    h = delta / n_sub
    sqrt_nsub = math.sqrt(n_sub)
    sqdt = math.sqrt(delta)
    sqrt3 = math.sqrt(3.0)
    for idx in prange(n_tot):
        p = idx // n_per_point
        x0 = x0s[p]
        x = x0.copy()
        out = np.empty(d)
        f = np.empty(d)
        w = np.empty(d)
        y = np.empty(d)
        tv = np.empty(nt)
        tdv = np.empty(nt)
        z = np.empty(n_sub * m)
        eta = np.zeros(m)
        xi = np.empty(m)
        fill_noise(seed, stream_id, U64(idx * n_sub * m), 0, z)
        for j in range(n_sub):
            increment(EXPLICIT_EM, x, h, z, j * m, ks, comp, ca, cb, quad, g, tol, maxit,
                      out, f, w, y, tv, tdv)
            for i in range(d):
                x[i] += out[i]
            for k in range(m):
                eta[k] += z[j * m + k]
        for k in range(m):
            eta[k] /= sqrt_nsub
        for i in range(d):
            ref[idx, i] = x[i] - x0[i]
        _noise_term(g, eta, 0, sqdt, w)
        for i in range(d):
            lead_ref[idx, i] = w[i]
        for q in range(ns):
            kind = noise_kinds[q]
            for k in range(m):
                if kind == 1:
                    xi[k] = 1.0 if eta[k] >= 0.0 else -1.0
                elif kind == 2:
                    u = _std_normal_cdf(eta[k])
                    xi[k] = -sqrt3 if u < 1.0 / 6.0 else (sqrt3 if u > 5.0 / 6.0 else 0.0)
                else:
                    xi[k] = eta[k]
            if schemes[q] == EM_SUBSTEP:
                for i in range(d):
                    sch[q, idx, i] = ref[idx, i]
            else:
                st = increment(schemes[q], x0, delta, xi, 0, ks, comp, ca, cb, quad, g, tol, maxit,
                               out, f, w, y, tv, tdv)
                if st != OK:
                    status[idx] = st
                for i in range(d):
                    sch[q, idx, i] = out[i]
            _noise_term(g, xi, 0, sqdt, w)
            for i in range(d):
                lead_sch[q, idx, i] = w[i]
    return ref, lead_ref, sch, lead_sch, status
