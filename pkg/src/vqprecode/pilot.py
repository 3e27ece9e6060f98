"""Pilot matrices and the noisy observation model y = P h + n.

The fixed pilot is an equispaced row subset of the unitary 2D-DFT matrix
(Kronecker of the vertical and horizontal DFTs), rescaled so every column of
P has unit norm.  The learnable pilot holds the same matrix in the parameter
store as a complex fully-connected layer without bias ("pilot.re"/"pilot.im"),
initialized at the DFT pilots and projected back to ||P||_F^2 = N after every
optimizer step so learnt and fixed pilots always compare at equal energy.

Complex products here go through :func:`diffcore.complex_apply` so that plain
and in-graph observations agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .channel import ArrayGeometry

PILOT_RE = "pilot.re"
PILOT_IM = "pilot.im"


class PilotError(Exception):
    pass


@dataclass(frozen=True)
class PilotMatrix:
    p: np.ndarray            # (n_p, N) complex
    kind: str = "fixed-dft"  # or "learnable"

    @property
    def n_pilots(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class Observation:
    y: np.ndarray            # (n_p,) complex
    noise_var: float


def _unitary_dft(t: int) -> np.ndarray:
    j, k = np.meshgrid(np.arange(t), np.arange(t), indexing="ij")
    return np.exp(-2j * np.pi * j * k / t) / np.sqrt(t)


def build_dft_pilots(geometry: ArrayGeometry, n_p: int) -> PilotMatrix:
    """Rows floor(k*N/n_p) of the unitary 2D-DFT, rescaled to entry magnitude
    1/sqrt(n_p) so columns have unit norm."""
    n = geometry.n_antennas
    if not 1 <= n_p <= n:
        raise PilotError(f"n_p must be in [1, {n}], got {n_p}")
    full = np.kron(_unitary_dft(geometry.n_v), _unitary_dft(geometry.n_h))
    rows = (np.arange(n_p) * n) // n_p
    p = full[rows] * np.sqrt(n / n_p)
    return PilotMatrix(p=p, kind="fixed-dft")


def draw_noise(rng: np.random.Generator, n_p: int, noise_var: float,
               count: int | None = None) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with E|n_k|^2 = noise_var."""
    shape = (n_p,) if count is None else (count, n_p)
    scale = np.sqrt(noise_var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_pilot(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """P @ h for batched h (B, N) -> (B, n_p), via separated real products
    (the same decomposition the differentiable path uses)."""
    re, im = dc.complex_apply(h.real, h.imag, p.real.T, p.imag.T)
    return re + 1j * im


def observe(pilot: PilotMatrix, h: np.ndarray, noise_var: float,
            rng: np.random.Generator) -> Observation:
    """One noisy observation y = P h + n of a single channel vector."""
    if noise_var < 0:
        raise PilotError("noise variance must be nonnegative")
    y = apply_pilot(pilot.p, h[None, :])[0]
    if noise_var > 0:
        y = y + draw_noise(rng, pilot.n_pilots, noise_var)
    return Observation(y=y, noise_var=float(noise_var))


def init_pilot_params(store: dc.ParameterStore, geometry: ArrayGeometry, n_p: int) -> None:
    """Register the learnable pilot at the fixed-DFT initialization."""
    p = build_dft_pilots(geometry, n_p).p
    store.register(PILOT_RE, p.real)
    store.register(PILOT_IM, p.imag)


def pilot_forward(store: dc.ParameterStore, h_re: dc.Node, h_im: dc.Node,
                  noise_re: dc.Node, noise_im: dc.Node):
    """In-graph observation of a channel batch (B, N) -> (B, n_p) node pair.

    Noise enters as constant leaves, so gradients reach only the pilot.
    """
    p_re_t = dc.transpose(store[PILOT_RE])
    p_im_t = dc.transpose(store[PILOT_IM])
    y_re, y_im = dc.complex_matmul(h_re, h_im, p_re_t, p_im_t)
    return dc.add(y_re, noise_re), dc.add(y_im, noise_im)


def pilot_matrix_from_store(store: dc.ParameterStore) -> PilotMatrix:
    return PilotMatrix(p=store[PILOT_RE].value + 1j * store[PILOT_IM].value,
                       kind="learnable")


def renormalize_pilot(store: dc.ParameterStore) -> None:
    """Project the learnable pilot back onto ||P||_F^2 = N (post-step)."""
    p_re = store[PILOT_RE].value
    p_im = store[PILOT_IM].value
    n = p_re.shape[1]
    energy = float((p_re * p_re).sum() + (p_im * p_im).sum())
    factor = np.sqrt(n / energy)
    store.set_value(PILOT_RE, p_re * factor)
    store.set_value(PILOT_IM, p_im * factor)
