"""Block-Toeplitz covariance parameterization and the Gaussian likelihood.

A covariance is reconstructed from a nonnegative angular power vector c of
length 4N through C = Q^H diag(c) Q, where Q is the Kronecker product of the
first-T-columns blocks of unitary 2T-point DFT matrices (T = n_v, n_h).  The
columns of Q are orthonormal, so c = 1 gives exactly the identity and any
c >= eps gives C >= eps*I.

The negative log-likelihood node carries hand-derived gradients:

    nll  = log det(pi C) + r^H C^-1 r,          r = h - mu
    d/d mu_re = -2 Re(C^-1 r),   d/d mu_im = -2 Im(C^-1 r)
    d/d c_k   = a_k^H C^-1 a_k - |a_k^H C^-1 r|^2

with a_k the conjugated k-th row of Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import diffcore as dc
from .channel import ArrayGeometry

# positivity floor applied to c by the decoder activation (softplus + eps)
C_FLOOR = 1e-6


class CovarianceError(Exception):
    pass


@dataclass(frozen=True)
class AngularDictionary:
    q: np.ndarray           # (4N, N) complex, orthonormal columns
    geometry: ArrayGeometry


@dataclass(frozen=True)
class StatisticalCSI:
    """Conditional Gaussian channel model (mean, angular power profile)."""

    mu: np.ndarray          # (N,) complex
    c: np.ndarray           # (4N,) real, >= C_FLOOR

    def __post_init__(self):
        if np.any(self.c < 0):
            raise CovarianceError("angular power entries must be nonnegative")


def _dft_block(t: int) -> np.ndarray:
    """First t columns of the unitary 2t-point DFT matrix."""
    j = np.arange(2 * t)[:, None]
    k = np.arange(t)[None, :]
    return np.exp(-2j * np.pi * j * k / (2 * t)) / np.sqrt(2 * t)


def build_dictionary(geometry: ArrayGeometry) -> AngularDictionary:
    q = np.kron(_dft_block(geometry.n_v), _dft_block(geometry.n_h))
    return AngularDictionary(q=q, geometry=geometry)


def build_covariance(c: np.ndarray, dictionary: AngularDictionary) -> np.ndarray:
    """C = Q^H diag(c) Q, Hermitian PSD by construction."""
    c = np.asarray(c, dtype=np.float64)
    if np.any(c < 0):
        raise CovarianceError("negative entry in angular power vector")
    q = dictionary.q
    return (q.conj().T * c[None, :]) @ q


def _solve_spd(cmat: np.ndarray):
    try:
        chol = linalg.cholesky(cmat, lower=True)
    except linalg.LinAlgError as exc:
        raise CovarianceError(f"Cholesky factorization failed: {exc}") from exc
    return chol


def gaussian_nll_values(h: np.ndarray, mu: np.ndarray, c: np.ndarray,
                        dictionary: AngularDictionary):
    """NLL values and gradients for a batch; used by the graph node and tests.

    Shapes: h, mu (B, N) complex; c (B, 4N) real.
    Returns (nll (B,), g_mu_re, g_mu_im (B, N), g_c (B, 4N)).
    """
    q = dictionary.q
    b, n = h.shape
    nll = np.empty(b)
    g_mu_re = np.empty((b, n))
    g_mu_im = np.empty((b, n))
    g_c = np.empty((b, q.shape[0]))
    for i in range(b):
        cmat = build_covariance(c[i], dictionary)
        chol = _solve_spd(cmat)
        r = h[i] - mu[i]
        x = linalg.solve_triangular(chol, r, lower=True)
        logdet = 2.0 * np.sum(np.log(np.real(np.diag(chol))))
        nll[i] = n * np.log(np.pi) + logdet + np.real(np.vdot(x, x))
        cinv = linalg.cho_solve((chol, True), np.eye(n, dtype=complex))
        cinv_r = cinv @ r
        g_mu_re[i] = -2.0 * cinv_r.real
        g_mu_im[i] = -2.0 * cinv_r.imag
        # a_k = conj(q_k) row-wise; both contractions reduce to products with q
        quad = np.einsum("kj,kj->k", q @ cinv, q.conj()).real
        u = q @ cinv_r
        g_c[i] = quad - np.abs(u) ** 2
    return nll, g_mu_re, g_mu_im, g_c


def gaussian_nll(h: np.ndarray, mu_re: dc.Node, mu_im: dc.Node, c: dc.Node,
                 dictionary: AngularDictionary) -> dc.Node:
    """Differentiable per-sample NLL node, shape (B,); h is a fixed batch."""
    mu = mu_re.value + 1j * mu_im.value
    nll, g_mu_re, g_mu_im, g_c = gaussian_nll_values(h, mu, c.value, dictionary)

    def vjp(g):
        w = g[:, None]
        return w * g_mu_re, w * g_mu_im, w * g_c

    return dc.custom(nll, (mu_re, mu_im, c), vjp, "gaussian_nll")


def mse_loss(h: np.ndarray, hbar_re: dc.Node, hbar_im: dc.Node) -> dc.Node:
    """Per-sample ||h - hbar||^2 node, shape (B,), over complex entries."""
    dre = dc.sub(dc.constant(np.ascontiguousarray(h.real)), hbar_re)
    dim = dc.sub(dc.constant(np.ascontiguousarray(h.imag)), hbar_im)
    return dc.node_sum(dc.add(dc.mul(dre, dre), dc.mul(dim, dim)), axis=1)
