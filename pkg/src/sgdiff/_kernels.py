"""Hot loops, each in a numba flavour (``*_nb``) and a numpy flavour (``*_np``).

The public engines call the dispatchers at the bottom of this module, which
honour ``_accel.USE_NUMBA``.  Both flavours consume the same counter-based
random streams, so they simulate the same trajectories; results agree to
round-off (transcendental functions may differ in the last ulp).

Ensemble kernels process trajectories in fixed-size blocks.  Within a block,
trajectories are accumulated sequentially in index order (numba: Welford;
numpy: two-pass mean/M2); blocks are merged afterwards in block order.  The
reduction therefore never depends on how blocks are scheduled.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded

from . import rng
from ._accel import USE_NUMBA, njit, prange
from .cutoff import psi_scalar

QUADRATIC, TRIG, DOUBLE_WELL = 0, 1, 2
COORDINATE, SQUARED_NORM, EXPECTED_LOSS, POLYNOMIAL, NORM_POWER = 0, 1, 2, 3, 4

_XI = np.uint64(rng.XI)
_INIT = np.uint64(rng.INIT)
_GAUSS = np.uint64(rng.GAUSS)
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# scalar pieces shared by the numba kernels

@njit
def grad_comp(family, mu, s, x, xi):
    if family == QUADRATIC:
        return mu * x + xi
    if family == TRIG:
        return mu * x + s * math.cos(x + xi)
    return x * x * x - x + xi


@njit
def xi_from_u(family, s, u):
    if family == TRIG:
        return _TWO_PI * u
    return s if u < 0.5 else -s


@njit
def mean_grad_comp(family, mu, x):
    if family == DOUBLE_WELL:
        return x * x * x - x
    return mu * x


@njit
def corr_comp(family, mu, x):
    if family == DOUBLE_WELL:
        return 0.5 * (3.0 * x * x - 1.0) * (x * x * x - x)
    return 0.5 * mu * mu * x


@njit
def phi_eval(code, index, coeffs, family, mu, x):
    if code == COORDINATE:
        return x[index]
    if code == POLYNOMIAL:
        acc = 0.0
        v = x[index]
        for k in range(coeffs.shape[0] - 1, -1, -1):
            acc = acc * v + coeffs[k]
        return acc
    r2 = 0.0
    for i in range(x.shape[0]):
        r2 += x[i] * x[i]
    if code == SQUARED_NORM:
        return r2
    if code == NORM_POWER:
        out = 1.0
        for _ in range(index):
            out *= r2
        return out
    if family == DOUBLE_WELL:
        q = x[0] * x[0] - 1.0
        return 0.25 * q * q
    return 0.5 * mu * r2


@njit
def init_point(x0, radius, key, out):
    d = x0.shape[0]
    if radius <= 0.0:
        for i in range(d):
            out[i] = x0[i]
        return
    if d == 1:
        out[0] = radius * (2.0 * rng.uniform(key, np.uint64(0)) - 1.0)
        return
    nrm2 = 0.0
    for i in range(d):
        g = rng.normal(key, np.uint64(i))
        out[i] = g
        nrm2 += g * g
    r = radius * rng.uniform(key, np.uint64(2 * d)) ** (1.0 / d)
    scale = r / math.sqrt(nrm2)
    for i in range(d):
        out[i] *= scale


@njit
def lagrange4(values, lo, h, y):
    n = values.shape[0]
    t = (y - lo) / h
    j = int(math.floor(t))
    if j < 1:
        j = 1
    elif j > n - 3:
        j = n - 3
    p = t - j
    pm1 = p - 1.0
    pm2 = p - 2.0
    pp1 = p + 1.0
    return (
        -p * pm1 * pm2 / 6.0 * values[j - 1]
        + pp1 * pm1 * pm2 / 2.0 * values[j]
        - pp1 * p * pm2 / 2.0 * values[j + 1]
        + pp1 * p * pm1 / 6.0 * values[j + 2]
    )


# ---------------------------------------------------------------------------
# SGD ensemble

@njit(parallel=True)
def sgd_ensemble_nb(family, mu, s, x0, init_radius, eta, n_steps, seed, n_paths, block,
                    phi_code, phi_index, coeffs, r_check, stats, record):
    d = x0.shape[0]
    nblk = (n_paths + block - 1) // block
    ne = n_steps + 1 if stats else 1
    mean = np.zeros((nblk, ne))
    m2 = np.zeros((nblk, ne))
    maxn = np.zeros(nblk)
    esc = np.zeros(nblk, dtype=np.int64)
    paths = np.zeros((n_paths if record else 0, n_steps + 1 if record else 0, d))
    seed_u = np.uint64(seed)
    for b in prange(nblk):
        x = np.empty(d)
        lo = b * block
        hi = min(n_paths, lo + block)
        for j in range(lo, hi):
            ju = np.uint64(j)
            init_point(x0, init_radius, rng.stream_key(seed_u, _INIT, ju), x)
            key = rng.stream_key(seed_u, _XI, ju)
            c = float(j - lo + 1)
            for n in range(n_steps + 1):
                if n > 0:
                    base = np.uint64((n - 1) * d)
                    for i in range(d):
                        xi = xi_from_u(family, s, rng.uniform(key, base + np.uint64(i)))
                        x[i] = x[i] - eta * grad_comp(family, mu, s, x[i], xi)
                r2 = 0.0
                for i in range(d):
                    r2 += x[i] * x[i]
                nrm = math.sqrt(r2)
                if nrm > maxn[b]:
                    maxn[b] = nrm
                if nrm > r_check:
                    esc[b] += 1
                if record:
                    for i in range(d):
                        paths[j, n, i] = x[i]
                if stats:
                    v = phi_eval(phi_code, phi_index, coeffs, family, mu, x)
                    delta = v - mean[b, n]
                    mean[b, n] += delta / c
                    m2[b, n] += delta * (v - mean[b, n])
    return mean, m2, maxn, esc, paths


def _grad_np(family, mu, s, x, xi):
    if family == QUADRATIC:
        return mu * x + xi
    if family == TRIG:
        return mu * x + s * np.cos(x + xi)
    return x * x * x - x + xi


def _xi_np(family, s, u):
    if family == TRIG:
        return _TWO_PI * u
    return np.where(u < 0.5, s, -s)


def _mean_grad_np(family, mu, x):
    if family == DOUBLE_WELL:
        return x * x * x - x
    return mu * x


def _corr_np(family, mu, x):
    if family == DOUBLE_WELL:
        return 0.5 * (3.0 * x * x - 1.0) * (x * x * x - x)
    return 0.5 * mu * mu * x


def _phi_np(code, index, coeffs, family, mu, X):
    if code == COORDINATE:
        return X[:, index].copy()
    if code == POLYNOMIAL:
        return np.polynomial.polynomial.polyval(X[:, index], coeffs)
    r2 = np.sum(X * X, axis=1)
    if code == SQUARED_NORM:
        return r2
    if code == NORM_POWER:
        return r2**index
    if family == DOUBLE_WELL:
        return 0.25 * (X[:, 0] ** 2 - 1.0) ** 2
    return 0.5 * mu * r2


def _init_np(x0, radius, keys):
    m, d = keys.shape[0], x0.shape[0]
    if radius <= 0.0:
        return np.tile(x0, (m, 1))
    if d == 1:
        return (radius * (2.0 * rng.uniform_np(keys, 0) - 1.0))[:, None]
    g = np.stack([rng.normal_np(keys, i) for i in range(d)], axis=1)
    r = radius * rng.uniform_np(keys, 2 * d) ** (1.0 / d)
    return g * (r / np.sqrt(np.sum(g * g, axis=1)))[:, None]


def _block_stats_np(v):
    # shifted two-pass: exact zero variance for a constant block
    d = v - v[0]
    dm = np.mean(d)
    return v[0] + dm, np.sum((d - dm) ** 2)


def sgd_ensemble_np(family, mu, s, x0, init_radius, eta, n_steps, seed, n_paths, block,
                    phi_code, phi_index, coeffs, r_check, stats, record):
    d = x0.shape[0]
    nblk = (n_paths + block - 1) // block
    ne = n_steps + 1 if stats else 1
    mean = np.zeros((nblk, ne))
    m2 = np.zeros((nblk, ne))
    maxn = np.zeros(nblk)
    esc = np.zeros(nblk, dtype=np.int64)
    paths = np.zeros((n_paths if record else 0, n_steps + 1 if record else 0, d))
    for b in range(nblk):
        idx = np.arange(b * block, min(n_paths, (b + 1) * block))
        X = _init_np(x0, init_radius, rng.stream_keys_np(seed, rng.INIT, idx))
        keys = rng.stream_keys_np(seed, rng.XI, idx)
        for n in range(n_steps + 1):
            if n > 0:
                base = (n - 1) * d
                for i in range(d):
                    xi = _xi_np(family, s, rng.uniform_np(keys, base + i))
                    X[:, i] = X[:, i] - eta * _grad_np(family, mu, s, X[:, i], xi)
            nrm = np.sqrt(np.sum(X * X, axis=1))
            maxn[b] = max(maxn[b], nrm.max())
            esc[b] += int(np.count_nonzero(nrm > r_check))
            if record:
                paths[idx, n, :] = X
            if stats:
                mean[b, n], m2[b, n] = _block_stats_np(
                    _phi_np(phi_code, phi_index, coeffs, family, mu, X))
    return mean, m2, maxn, esc, paths


# ---------------------------------------------------------------------------
# Euler-Maruyama ensemble for the modified SDE

@njit(parallel=True)
def sde_ensemble_nb(family, mu, x0, init_radius, eta, corr_eta, h, k_sub, n_epochs, seed,
                    n_paths, block, sqrt_sig, R, R2, use_cutoff,
                    phi_code, phi_index, coeffs, r_check, stats, record):
    d = x0.shape[0]
    nblk = (n_paths + block - 1) // block
    ne = n_epochs + 1 if stats else 1
    mean = np.zeros((nblk, ne))
    m2 = np.zeros((nblk, ne))
    maxn = np.zeros(nblk)
    esc = np.zeros(nblk, dtype=np.int64)
    paths = np.zeros((n_paths if record else 0, n_epochs + 1 if record else 0, d))
    seed_u = np.uint64(seed)
    sq_eta = math.sqrt(eta)
    sq_h = math.sqrt(h)
    for b in prange(nblk):
        x = np.empty(d)
        dr = np.empty(d)
        z = np.empty(d)
        lo = b * block
        hi = min(n_paths, lo + block)
        for j in range(lo, hi):
            ju = np.uint64(j)
            init_point(x0, init_radius, rng.stream_key(seed_u, _INIT, ju), x)
            key = rng.stream_key(seed_u, _GAUSS, ju)
            c = float(j - lo + 1)
            step = 0
            for e in range(n_epochs + 1):
                if e > 0:
                    for _ in range(k_sub):
                        r2 = 0.0
                        for i in range(d):
                            r2 += x[i] * x[i]
                        p = psi_scalar(math.sqrt(r2), R, R2) if use_cutoff else 1.0
                        base = np.uint64(step * d)
                        for i in range(d):
                            dr[i] = -(mean_grad_comp(family, mu, x[i]) + corr_eta * corr_comp(family, mu, x[i]))
                            z[i] = rng.normal(key, base + np.uint64(i)) * sq_h
                        for i in range(d):
                            noise = 0.0
                            for l in range(d):
                                noise += sqrt_sig[i, l] * z[l]
                            x[i] = x[i] + dr[i] * h + sq_eta * p * noise
                        step += 1
                        r2 = 0.0
                        for i in range(d):
                            r2 += x[i] * x[i]
                        nrm = math.sqrt(r2)
                        if nrm > maxn[b]:
                            maxn[b] = nrm
                        if nrm > r_check:
                            esc[b] += 1
                else:
                    r2 = 0.0
                    for i in range(d):
                        r2 += x[i] * x[i]
                    nrm = math.sqrt(r2)
                    if nrm > maxn[b]:
                        maxn[b] = nrm
                if record:
                    for i in range(d):
                        paths[j, e, i] = x[i]
                if stats:
                    v = phi_eval(phi_code, phi_index, coeffs, family, mu, x)
                    delta = v - mean[b, e]
                    mean[b, e] += delta / c
                    m2[b, e] += delta * (v - mean[b, e])
    return mean, m2, maxn, esc, paths


def _psi_np(r, R, R2):
    out = np.ones_like(r)
    out[r >= R2] = 0.0
    mid = (r > R) & (r < R2)
    tau = (r[mid] - R) / (R2 - R)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.exp(-1.0 / (1.0 - tau))
        bb = np.exp(-1.0 / tau)
    out[mid] = a / (a + bb)
    return out


def sde_ensemble_np(family, mu, x0, init_radius, eta, corr_eta, h, k_sub, n_epochs, seed,
                    n_paths, block, sqrt_sig, R, R2, use_cutoff,
                    phi_code, phi_index, coeffs, r_check, stats, record):
    d = x0.shape[0]
    nblk = (n_paths + block - 1) // block
    ne = n_epochs + 1 if stats else 1
    mean = np.zeros((nblk, ne))
    m2 = np.zeros((nblk, ne))
    maxn = np.zeros(nblk)
    esc = np.zeros(nblk, dtype=np.int64)
    paths = np.zeros((n_paths if record else 0, n_epochs + 1 if record else 0, d))
    sq_eta = math.sqrt(eta)
    sq_h = math.sqrt(h)
    for b in range(nblk):
        idx = np.arange(b * block, min(n_paths, (b + 1) * block))
        X = _init_np(x0, init_radius, rng.stream_keys_np(seed, rng.INIT, idx))
        keys = rng.stream_keys_np(seed, rng.GAUSS, idx)
        maxn[b] = np.sqrt(np.sum(X * X, axis=1)).max()
        step = 0
        for e in range(n_epochs + 1):
            if e > 0:
                for _ in range(k_sub):
                    r = np.sqrt(np.sum(X * X, axis=1))
                    p = _psi_np(r, R, R2) if use_cutoff else np.ones_like(r)
                    dr = -(_mean_grad_np(family, mu, X) + corr_eta * _corr_np(family, mu, X))
                    Z = np.stack([rng.normal_np(keys, step * d + i) for i in range(d)], axis=1) * sq_h
                    X = X + dr * h + sq_eta * p[:, None] * (Z @ sqrt_sig.T)
                    step += 1
                    nrm = np.sqrt(np.sum(X * X, axis=1))
                    maxn[b] = max(maxn[b], nrm.max())
                    esc[b] += int(np.count_nonzero(nrm > r_check))
            if record:
                paths[idx, e, :] = X
            if stats:
                mean[b, e], m2[b, e] = _block_stats_np(
                    _phi_np(phi_code, phi_index, coeffs, family, mu, X))
    return mean, m2, maxn, esc, paths


# ---------------------------------------------------------------------------
# transfer operator S on a uniform 1-D grid

@njit
def apply_S_nb(values, x, lo, h, eta, family, mu, s, xi_nodes, xi_w):
    n = values.shape[0]
    hi = x[n - 1]
    out = np.empty(n)
    excess = 0.0
    for i in range(n):
        acc = 0.0
        for q in range(xi_nodes.shape[0]):
            y = x[i] - eta * grad_comp(family, mu, s, x[i], xi_nodes[q])
            if y < lo:
                excess = max(excess, lo - y)
            elif y > hi:
                excess = max(excess, y - hi)
            acc += xi_w[q] * lagrange4(values, lo, h, y)
        out[i] = acc
    return out, excess


def lagrange4_np(values, lo, h, y):
    n = values.shape[0]
    t = (y - lo) / h
    j = np.clip(np.floor(t).astype(np.int64), 1, n - 3)
    p = t - j
    pm1, pm2, pp1 = p - 1.0, p - 2.0, p + 1.0
    return (
        -p * pm1 * pm2 / 6.0 * values[j - 1]
        + pp1 * pm1 * pm2 / 2.0 * values[j]
        - pp1 * p * pm2 / 2.0 * values[j + 1]
        + pp1 * p * pm1 / 6.0 * values[j + 2]
    )


def apply_S_np(values, x, lo, h, eta, family, mu, s, xi_nodes, xi_w):
    Y = x[:, None] - eta * _grad_np(family, mu, s, x[:, None], xi_nodes[None, :])
    hi = x[-1]
    excess = max(0.0, float(lo - Y.min()), float(Y.max() - hi))
    return lagrange4_np(values, lo, h, Y) @ xi_w, excess


# ---------------------------------------------------------------------------
# theta-scheme time stepping for u_t = A u, A tridiagonal

@njit
def theta_run_nb(lower, diag, upper, dt, theta, u0, n_steps, save_every):
    n = u0.shape[0]
    out = np.empty((n_steps // save_every + 1, n))
    out[0, :] = u0
    a = -theta * dt * lower
    bdiag = 1.0 - theta * dt * diag
    c = -theta * dt * upper
    cp = np.empty(n)
    inv = np.empty(n)
    inv[0] = 1.0 / bdiag[0]
    cp[0] = c[0] * inv[0]
    for i in range(1, n):
        inv[i] = 1.0 / (bdiag[i] - a[i] * cp[i - 1])
        cp[i] = c[i] * inv[i]
    e = (1.0 - theta) * dt
    u = u0.copy()
    rhs = np.empty(n)
    for k in range(1, n_steps + 1):
        rhs[0] = u[0] + e * (diag[0] * u[0] + upper[0] * u[1])
        for i in range(1, n - 1):
            rhs[i] = u[i] + e * (lower[i] * u[i - 1] + diag[i] * u[i] + upper[i] * u[i + 1])
        rhs[n - 1] = u[n - 1] + e * (lower[n - 1] * u[n - 2] + diag[n - 1] * u[n - 1])
        if theta > 0.0:
            rhs[0] = rhs[0] * inv[0]
            for i in range(1, n):
                rhs[i] = (rhs[i] - a[i] * rhs[i - 1]) * inv[i]
            u[n - 1] = rhs[n - 1]
            for i in range(n - 2, -1, -1):
                u[i] = rhs[i] - cp[i] * u[i + 1]
        else:
            for i in range(n):
                u[i] = rhs[i]
        if k % save_every == 0:
            out[k // save_every, :] = u
    return out


def _tri_matvec(lower, diag, upper, u):
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def theta_run_np(lower, diag, upper, dt, theta, u0, n_steps, save_every):
    n = u0.shape[0]
    out = np.empty((n_steps // save_every + 1, n))
    out[0] = u0
    ab = np.zeros((3, n))
    ab[0, 1:] = -theta * dt * upper[:-1]
    ab[1] = 1.0 - theta * dt * diag
    ab[2, :-1] = -theta * dt * lower[1:]
    e = (1.0 - theta) * dt
    u = u0.copy()
    for k in range(1, n_steps + 1):
        rhs = u + e * _tri_matvec(lower, diag, upper, u)
        u = solve_banded((1, 1), ab, rhs, check_finite=False) if theta > 0.0 else rhs
        if k % save_every == 0:
            out[k // save_every] = u
    return out


# ---------------------------------------------------------------------------
# dispatch

def sgd_ensemble(*args, numba: bool | None = None):
    use = USE_NUMBA if numba is None else numba
    return (sgd_ensemble_nb if use else sgd_ensemble_np)(*args)


def sde_ensemble(*args, numba: bool | None = None):
    use = USE_NUMBA if numba is None else numba
    return (sde_ensemble_nb if use else sde_ensemble_np)(*args)


def apply_S(*args, numba: bool | None = None):
    use = USE_NUMBA if numba is None else numba
    return (apply_S_nb if use else apply_S_np)(*args)


def theta_run(*args, numba: bool | None = None):
    use = USE_NUMBA if numba is None else numba
    return (theta_run_nb if use else theta_run_np)(*args)


def merge_blocks(mean: np.ndarray, m2: np.ndarray, counts: np.ndarray):
    """Chan merge of per-block (mean, M2) rows in block order -> (mean, M2, n)."""
    tot_n = 0.0
    tot_mean = np.zeros(mean.shape[1])
    tot_m2 = np.zeros(mean.shape[1])
    for b in range(mean.shape[0]):
        nb = float(counts[b])
        n = tot_n + nb
        delta = mean[b] - tot_mean
        tot_mean = tot_mean + delta * (nb / n)
        tot_m2 = tot_m2 + m2[b] + delta * delta * (tot_n * nb / n)
        tot_n = n
    return tot_mean, tot_m2, tot_n
