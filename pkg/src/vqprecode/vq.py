"""Shared codebook, nearest-codeword quantization and feedback packing.

A latent z of length N_L splits into N_L/N_E sub-vectors; each is replaced by
the Euclidean-nearest codeword (ties to the lowest index), so one message
costs exactly B = (N_L/N_E) * log2(C) bits.  The training losses follow the
VQ-VAE recipe: a codebook term pulling selected codewords toward sg(z) and a
commitment term pulling z toward sg(f), plus a straight-through output node
that copies downstream gradients across the quantizer unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc

CODEBOOK = "vq.codebook"


class VqError(Exception):
    pass


@dataclass(frozen=True)
class FeedbackMessage:
    indices: np.ndarray     # (N_L / N_E,) int in [0, C)
    f: np.ndarray           # (N_L,) quantized latent

    @property
    def n_sub(self) -> int:
        return len(self.indices)


def _check_dims(n_latent: int, n_embed: int, n_codewords: int) -> int:
    if n_latent % n_embed != 0:
        raise VqError(f"codeword dim {n_embed} does not divide latent dim {n_latent}")
    bits = int(n_codewords).bit_length() - 1
    if n_codewords <= 0 or (1 << bits) != n_codewords:
        raise VqError(f"codebook size {n_codewords} is not a power of two")
    return bits


def feedback_bits(n_latent: int, n_embed: int, n_codewords: int) -> int:
    """Exact message size (N_L / N_E) * log2(C)."""
    bits = _check_dims(n_latent, n_embed, n_codewords)
    return (n_latent // n_embed) * bits


def init_codebook(store: dc.ParameterStore, n_codewords: int, n_embed: int,
                  rng: np.random.Generator) -> None:
    """Small symmetric initialization, uniform on [-1/C, 1/C]."""
    lim = 1.0 / n_codewords
    store.register(CODEBOOK, rng.uniform(-lim, lim, size=(n_codewords, n_embed)))


def quantize_batch(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest-codeword indices for a latent batch (B, N_L) -> (B, n_sub).

    argmin over exact squared distances; numpy's argmin takes the first
    minimum, which realizes the lowest-index tie-break.
    """
    b, n_latent = z.shape
    n_codewords, n_embed = codebook.shape
    _check_dims(n_latent, n_embed, n_codewords)
    sub = z.reshape(b, n_latent // n_embed, 1, n_embed)
    d2 = np.sum((sub - codebook[None, None, :, :]) ** 2, axis=3)
    return np.argmin(d2, axis=2)


def quantize(z: np.ndarray, codebook: np.ndarray) -> FeedbackMessage:
    """Quantize one latent vector."""
    idx = quantize_batch(z[None, :], codebook)[0]
    return FeedbackMessage(indices=idx, f=codebook[idx].reshape(-1).copy())


def lookup(store: dc.ParameterStore, indices: np.ndarray) -> dc.Node:
    """Assemble quantized latents (B, N_L) from codebook rows, differentiable
    w.r.t. the codebook."""
    return dc.rows_lookup(store[CODEBOOK], indices)


def straight_through(z: dc.Node, f: dc.Node) -> dc.Node:
    """Forward value f, backward identity into z: z + sg(f - z)."""
    return dc.add(z, dc.stop_gradient(dc.sub(f, z)))


def vq_loss_terms(z: dc.Node, f: dc.Node, beta: float):
    """Per-sample codebook and commitment terms of shape (B,).

    The codebook term ||sg(z) - f||^2 reaches only the codewords; the
    commitment term beta * ||z - sg(f)||^2 reaches only the encoder.
    """
    d_cb = dc.sub(dc.stop_gradient(z), f)
    codebook_term = dc.node_sum(dc.mul(d_cb, d_cb), axis=1)
    d_cm = dc.sub(z, dc.stop_gradient(f))
    commitment_term = dc.scale(dc.node_sum(dc.mul(d_cm, d_cm), axis=1), beta)
    return codebook_term, commitment_term


def pack_feedback(msg: FeedbackMessage, n_codewords: int) -> str:
    """Big-endian concatenation of log2(C)-bit indices."""
    bits = _check_dims(len(msg.indices) * 1, 1, n_codewords)
    for i in msg.indices:
        if not 0 <= i < n_codewords:
            raise VqError(f"index {i} out of range for codebook size {n_codewords}")
    return "".join(format(int(i), f"0{bits}b") for i in msg.indices)


def unpack_feedback(bitstring: str, codebook: np.ndarray) -> FeedbackMessage:
    """Inverse of :func:`pack_feedback`; rebuilds indices and the latent."""
    n_codewords, n_embed = codebook.shape
    bits = _check_dims(n_embed, n_embed, n_codewords)
    if len(bitstring) % bits != 0 or not bitstring:
        raise VqError(f"bit string length {len(bitstring)} is not a multiple of {bits}")
    if set(bitstring) - {"0", "1"}:
        raise VqError("bit string may contain only '0' and '1'")
    idx = np.array([int(bitstring[i:i + bits], 2) for i in range(0, len(bitstring), bits)])
    return FeedbackMessage(indices=idx, f=codebook[idx].reshape(-1).copy())


def usage_histogram(indices: np.ndarray, n_codewords: int) -> np.ndarray:
    """Codeword usage counts, for dead-codeword diagnostics (no reseeding)."""
    return np.bincount(np.asarray(indices).reshape(-1), minlength=n_codewords)
