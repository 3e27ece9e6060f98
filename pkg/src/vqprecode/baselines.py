"""Sum-rate evaluation and classical precoders (MRT, ZF, WMMSE, SWMMSE).

Channel convention: a constellation is an array H of shape (J, N) whose rows
are the users' channels, precoders are columns of V (N, J), and every rate
uses the transpose (not conjugate-transpose) inner product

    R = sum_j log2(1 + |h_j^T v_j|^2 / (sum_{m != j} |h_j^T v_m|^2 + sigma^2)).

All solvers conjugate the channels once at entry (g_j = conj(h_j), so that
h_j^T v = g_j^H v) and work with g thereafter.

WMMSE is the standard block-coordinate scheme: scalar MMSE receivers,
MSE weights w = 1/e, and a joint precoder update through a regularized
inverse whose multiplier lambda is found by bisection on the transmit power
(the quadratic form is diagonalized once per iteration, so the bisection is
cheap and essentially exact).  SWMMSE replaces each user's channel by a fixed
set of S samples from its conditional Gaussian model and runs the same block
updates on the sample-average objective; the sample set is drawn once, which
keeps runs reproducible and makes the vanishing-covariance limit collapse to
WMMSE on the means exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .covariance import AngularDictionary, StatisticalCSI, build_covariance

_EIG_FLOOR = 1e-12       # relative eigenvalue threshold for pseudo-inversion
_POWER_TOL = 1e-10       # bisection tolerance on the transmit power


class PrecodingError(Exception):
    pass


class SingularChannelError(PrecodingError):
    pass


@dataclass
class PrecoderSet:
    v: np.ndarray            # (N, J) complex, columns are per-user precoders
    rho: float

    def power(self) -> float:
        return float(np.sum(np.abs(self.v) ** 2))


@dataclass
class SolverReport:
    iterations: int
    trace: list = field(default_factory=list)   # objective per iteration
    converged: bool = False
    reason: str = ""


def sum_rate(channels: np.ndarray, precoders: PrecoderSet, noise_var: float) -> float:
    """Instantaneous achievable sum rate of a constellation."""
    if noise_var <= 0:
        raise PrecodingError("noise variance must be positive")
    t = channels @ precoders.v
    p2 = np.abs(t) ** 2
    sig = np.diag(p2).copy()
    interf = p2.sum(axis=1) - sig
    return float(np.sum(np.log2(1.0 + sig / (interf + noise_var))))


def mrt(channels: np.ndarray, rho: float, noise_var: float = 0.0) -> PrecoderSet:
    """Matched filter with equal power split: v_j ~ conj(h_j)."""
    j, n = channels.shape
    v = np.zeros((n, j), dtype=complex)
    for k in range(j):
        g = channels[k].conj()
        nrm = np.linalg.norm(g)
        if nrm <= 1e-12:
            g = np.zeros(n, dtype=complex)
            g[0] = 1.0
            nrm = 1.0
        v[:, k] = np.sqrt(rho / j) * g / nrm
    return PrecoderSet(v=v, rho=rho)


def zf(channels: np.ndarray, rho: float) -> PrecoderSet:
    """Zero forcing with equal per-user power; needs J <= N and a well
    conditioned Gram matrix."""
    j, n = channels.shape
    if j > n:
        raise PrecodingError(f"zero forcing needs J <= N, got J={j}, N={n}")
    g = channels.conj().T
    gram = g.conj().T @ g
    if np.linalg.cond(gram) > 1e12:
        raise SingularChannelError("channel Gram matrix numerically singular")
    raw = g @ np.linalg.inv(gram)
    raw /= np.linalg.norm(raw, axis=0, keepdims=True)
    return PrecoderSet(v=np.sqrt(rho / j) * raw, rho=rho)


def _power_profile(eigvals, beta2, lam):
    return float(np.sum(beta2 / ((eigvals + lam) ** 2)[:, None]))


def _solve_power_constrained(a0: np.ndarray, b: np.ndarray, rho: float) -> np.ndarray:
    """argmin_V sum_j v_j^H A0 v_j - 2 Re(b_j^H v_j)  s.t.  ||V||_F^2 <= rho.

    Diagonalizes A0 once; lambda = 0 when the unconstrained minimizer is
    feasible, otherwise bisection drives the power onto the budget.
    """
    eigvals, u = np.linalg.eigh(a0)
    eigvals = np.maximum(eigvals, 0.0)
    beta = u.conj().T @ b
    beta2 = np.abs(beta) ** 2
    # components in the numerical nullspace of A0 carry no signal: drop them
    # (minimum-norm solution) so the lambda = 0 power is finite
    floor = max(eigvals.max(), 1.0) * _EIG_FLOOR
    null = eigvals < floor
    if np.any(null):
        beta = beta.copy()
        beta[null, :] = 0.0
        beta2 = np.abs(beta) ** 2
        eigvals = np.where(null, floor, eigvals)

    if _power_profile(eigvals, beta2, 0.0) <= rho + _POWER_TOL:
        lam = 0.0
    else:
        hi = np.sqrt(np.sum(beta2) / rho)    # power(hi) <= rho by construction
        while _power_profile(eigvals, beta2, hi) > rho:
            hi *= 2.0
        lo = 0.0
        for _ in range(200):
            lam = 0.5 * (lo + hi)
            p = _power_profile(eigvals, beta2, lam)
            if abs(p - rho) <= _POWER_TOL:
                break
            if p > rho:
                lo = lam
            else:
                hi = lam
        else:
            lam = hi
    return u @ (beta / (eigvals + lam)[:, None])


def wmmse(channels: np.ndarray, rho: float, noise_var: float,
          max_iter: int = 300, tol: float = 1e-5) -> tuple[PrecoderSet, SolverReport]:
    """Iterative WMMSE on one constellation, initialized at MRT.

    Stops when the sum-rate improvement drops below ``tol`` or at the
    iteration cap; always returns the best iterate seen.
    """
    if noise_var <= 0:
        raise PrecodingError("noise variance must be positive")
    j, n = channels.shape
    g = channels.conj().T                     # columns g_j, so h_j^T v = g_j^H v
    v = mrt(channels, rho).v

    best_v, best_rate = v.copy(), sum_rate(channels, PrecoderSet(v, rho), noise_var)
    trace = [best_rate]
    prev = best_rate
    converged, reason = False, "max_iter"
    for it in range(max_iter):
        t = channels @ v                      # t[j, m] = g_j^H v_m
        denom = np.sum(np.abs(t) ** 2, axis=1) + noise_var
        u = np.diag(t) / denom
        e = 1.0 - np.real(np.conj(u) * np.diag(t))
        e = np.maximum(e, 1e-12)
        w = 1.0 / e
        scal = w * np.abs(u) ** 2
        a0 = (g * scal[None, :]) @ g.conj().T
        b = g * (w * u)[None, :]
        v = _solve_power_constrained(a0, b, rho)

        rate = sum_rate(channels, PrecoderSet(v, rho), noise_var)
        trace.append(rate)
        if rate > best_rate:
            best_rate, best_v = rate, v.copy()
        if abs(rate - prev) <= tol:
            converged, reason = True, "tolerance"
            break
        prev = rate
    report = SolverReport(iterations=len(trace) - 1, trace=trace,
                          converged=converged, reason=reason)
    return PrecoderSet(v=best_v, rho=rho), report


def draw_conditional_samples(stats: list[StatisticalCSI], dictionary: AngularDictionary,
                             n_samples: int, rng: np.random.Generator,
                             draws: np.ndarray | None = None) -> np.ndarray:
    """S channel samples per user from h = mu + chol(C) xi, shape (J, S, N)."""
    j = len(stats)
    n = stats[0].mu.shape[0]
    if draws is None:
        draws = np.sqrt(0.5) * (rng.standard_normal((j, n_samples, n))
                                + 1j * rng.standard_normal((j, n_samples, n)))
    out = np.empty((j, n_samples, n), dtype=complex)
    for k, st in enumerate(stats):
        cmat = build_covariance(st.c, dictionary)
        chol = linalg.cholesky(cmat, lower=True)
        out[k] = st.mu[None, :] + draws[k] @ chol.T
    return out


def swmmse(stats: list[StatisticalCSI], dictionary: AngularDictionary, rho: float,
           noise_var: float, n_samples: int = 32, max_iter: int = 300,
           tol: float = 1e-5, rng: np.random.Generator | None = None,
           draws: np.ndarray | None = None) -> tuple[PrecoderSet, SolverReport]:
    """Sample-average WMMSE on statistical CSI.

    Draws a fixed set of S conditional samples per user once, then runs the
    WMMSE block updates on the surrogate objective (1/S) sum_s R(H^(s), V);
    each (user, sample) pair carries its own receiver and weight, and the
    precoder update averages the quadratic and linear terms over samples.
    """
    if n_samples < 1:
        raise PrecodingError("need at least one conditional sample")
    if rng is None and draws is None:
        raise PrecodingError("provide an rng or explicit sample draws")
    j = len(stats)
    mu = np.stack([st.mu for st in stats])               # (J, N)
    hs = draw_conditional_samples(stats, dictionary, n_samples, rng, draws)
    gs = hs.conj()                                       # (J, S, N)

    def surrogate(vmat):
        t = np.einsum("jsn,nm->jsm", hs, vmat)
        p2 = np.abs(t) ** 2
        sig = np.abs(t[np.arange(j), :, np.arange(j)]) ** 2    # (J, S)
        interf = p2.sum(axis=2) - sig
        return float(np.mean(np.sum(np.log2(1 + sig / (interf + noise_var)), axis=0)))

    v = mrt(mu, rho).v
    best_v, best_obj = v.copy(), surrogate(v)
    trace = [best_obj]
    prev = best_obj
    converged, reason = False, "max_iter"
    for it in range(max_iter):
        t = np.einsum("jsn,nm->jsm", hs, v)              # t[j, s, m] = g_js^H v_m
        denom = np.sum(np.abs(t) ** 2, axis=2) + noise_var
        tjj = t[np.arange(j), :, np.arange(j)]           # (J, S)
        u = tjj / denom
        e = np.maximum(1.0 - np.real(np.conj(u) * tjj), 1e-12)
        w = 1.0 / e
        scal = w * np.abs(u) ** 2                        # (J, S)
        a0 = np.einsum("js,jsn,jsk->nk", scal, gs, gs.conj()) / n_samples
        b = np.einsum("js,jsn->nj", w * u, gs) / n_samples
        v = _solve_power_constrained(a0, b, rho)

        obj = surrogate(v)
        trace.append(obj)
        if obj > best_obj:
            best_obj, best_v = obj, v.copy()
        if abs(obj - prev) <= tol:
            converged, reason = True, "tolerance"
            break
        prev = obj
    report = SolverReport(iterations=len(trace) - 1, trace=trace,
                          converged=converged, reason=reason)
    return PrecoderSet(v=best_v, rho=rho), report
