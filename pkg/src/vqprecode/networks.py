"""Trainable blocks of the end-to-end pipeline.

The feedback side runs, per user: learnable pilot observation, a trainable
complex linear coarse estimator (initialized at the pilot adjoint), projection
onto the angular dictionary, a real MLP encoder, nearest-codeword quantization
with a straight-through output, and a decoder producing either statistical
CSI (mean + angular power through softplus + floor) or an instantaneous
reconstruction (mean only, identity covariance).

The precoding side is a graph network over the users of a constellation:
shared feature extractor on [Re mu; Im mu; c; ln sigma^2], rounds of mean
message passing over the other users (zero message when alone), shared
update and readout maps, and an exact projection of the stacked precoders
onto the total power budget.  One parameter set serves any number of users.

Batches of constellations are flattened to rows grouped per constellation;
the neighbor mean and per-constellation reductions are matmuls with constant
indicator matrices, which keeps the whole pipeline inside the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import pilot as pm
from . import vq
from .baselines import PrecoderSet
from .channel import ArrayGeometry
from .covariance import (C_FLOOR, AngularDictionary, StatisticalCSI,
                         build_dictionary, gaussian_nll, mse_loss)

MODES = ("statistical", "instantaneous")
LN2 = float(np.log(2.0))


class NetworkError(Exception):
    pass


class DegenerateOutput(NetworkError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    geometry: ArrayGeometry
    n_p: int
    n_latent: int = 8
    n_embed: int = 2
    n_codewords: int = 16
    mode: str = "statistical"
    enc_hidden: tuple = (256, 128)
    dec_hidden: tuple = (128, 256)
    gnn_dim: int = 128
    gnn_rounds: int = 3
    beta: float = 0.25
    seed: int = 0
    learn_pilot: bool = True
    freeze_coarse_estimator: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise NetworkError(f"mode must be one of {MODES}, got '{self.mode}'")
        vq.feedback_bits(self.n_latent, self.n_embed, self.n_codewords)

    @property
    def n(self) -> int:
        return self.geometry.n_antennas

    @property
    def feedback_bits(self) -> int:
        return vq.feedback_bits(self.n_latent, self.n_embed, self.n_codewords)

    def fingerprint(self) -> dict:
        return {
            "n_v": self.geometry.n_v, "n_h": self.geometry.n_h, "n_p": self.n_p,
            "n_latent": self.n_latent, "n_embed": self.n_embed,
            "n_codewords": self.n_codewords, "mode": self.mode,
            "beta": self.beta, "seed": self.seed,
        }


def _named_rng(seed: int, name: str) -> np.random.Generator:
    # per-parameter stream: initialization is independent of registration
    # order, so e.g. both decoder modes share the same trunk and mu-head init
    return np.random.default_rng(np.random.SeedSequence([seed, *name.encode()]))


@dataclass
class FeedbackOutputs:
    """Graph nodes of one feedback pass over a user batch."""
    z: dc.Node
    indices: np.ndarray
    f: dc.Node
    f_st: dc.Node
    mu_re: dc.Node
    mu_im: dc.Node
    c: dc.Node | None          # None in instantaneous mode
    rec_loss: dc.Node          # (B,)
    codebook_term: dc.Node     # (B,)
    commitment_term: dc.Node   # (B,)


class EndToEndModel:
    """Parameter container plus graph builders for training and evaluation."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dictionary: AngularDictionary = build_dictionary(config.geometry)
        self.store = dc.ParameterStore()
        self._qt_re = np.ascontiguousarray(self.dictionary.q.T.real)
        self._qt_im = np.ascontiguousarray(self.dictionary.q.T.imag)
        self._agg_cache: dict = {}
        self._init_params()

    # -- parameters ---------------------------------------------------------

    def _init_linear(self, name: str, fan_in: int, fan_out: int) -> None:
        rng = _named_rng(self.config.seed, name)
        lim = 1.0 / np.sqrt(fan_in)
        self.store.register(f"{name}.w", rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        self.store.register(f"{name}.b", np.zeros(fan_out))

    def _init_params(self) -> None:
        cfg = self.config
        n = cfg.n
        pm.init_pilot_params(self.store, cfg.geometry, cfg.n_p)
        # coarse estimator starts at the matched filter (adjoint of the pilots)
        p0 = pm.build_dft_pilots(cfg.geometry, cfg.n_p).p
        self.store.register("enc.gphi.re", p0.real)
        self.store.register("enc.gphi.im", -p0.imag)
        h1, h2 = cfg.enc_hidden
        self._init_linear("enc.l0", 8 * n, h1)
        self._init_linear("enc.l1", h1, h2)
        self._init_linear("enc.out", h2, cfg.n_latent)
        d1, d2 = cfg.dec_hidden
        self._init_linear("dec.l0", cfg.n_latent, d1)
        self._init_linear("dec.l1", d1, d2)
        self._init_linear("dec.mu", d2, 2 * n)
        if cfg.mode == "statistical":
            self._init_linear("dec.c", d2, 4 * n)
        vq.init_codebook(self.store, cfg.n_codewords, cfg.n_embed,
                         _named_rng(cfg.seed, vq.CODEBOOK))
        self._init_linear("gnn.feat", 6 * n + 1, cfg.gnn_dim)
        self._init_linear("gnn.msg", cfg.gnn_dim, cfg.gnn_dim)
        self._init_linear("gnn.upd", 2 * cfg.gnn_dim, cfg.gnn_dim)
        self._init_linear("gnn.readout", cfg.gnn_dim, 2 * n)

    def frozen_names(self) -> set:
        frozen = set()
        if not self.config.learn_pilot:
            frozen |= {pm.PILOT_RE, pm.PILOT_IM}
        if self.config.freeze_coarse_estimator:
            frozen |= {"enc.gphi.re", "enc.gphi.im"}
        return frozen

    def _linear(self, name: str, x: dc.Node) -> dc.Node:
        return dc.add(dc.matmul(x, self.store[f"{name}.w"]), self.store[f"{name}.b"])

    # -- feedback side ------------------------------------------------------

    def encode(self, y_re: dc.Node, y_im: dc.Node) -> dc.Node:
        """Observation batch (B, n_p) to latent batch (B, N_L): coarse
        estimate, angular-dictionary projection, real stacking, MLP."""
        est_re, est_im = dc.complex_matmul(
            y_re, y_im, self.store["enc.gphi.re"], self.store["enc.gphi.im"])
        x_re, x_im = dc.complex_matmul(
            est_re, est_im, dc.constant(self._qt_re), dc.constant(self._qt_im))
        enc_in = dc.concat([x_re, x_im], axis=1)
        a = dc.softplus(self._linear("enc.l0", enc_in))
        a = dc.softplus(self._linear("enc.l1", a))
        return self._linear("enc.out", a)

    def decode(self, f_st: dc.Node):
        """Quantized latent batch to (mu_re, mu_im, c); c is None in
        instantaneous mode (identity covariance)."""
        n = self.config.n
        t = dc.softplus(self._linear("dec.l0", f_st))
        t = dc.softplus(self._linear("dec.l1", t))
        mu_raw = self._linear("dec.mu", t)
        mu_re = dc.narrow(mu_raw, 1, 0, n)
        mu_im = dc.narrow(mu_raw, 1, n, n)
        if self.config.mode == "statistical":
            c = dc.add_const(dc.softplus(self._linear("dec.c", t)), C_FLOOR)
        else:
            c = None
        return mu_re, mu_im, c

    def reconstruction_loss(self, h: np.ndarray, mu_re: dc.Node, mu_im: dc.Node,
                            c: dc.Node | None) -> dc.Node:
        if self.config.mode == "statistical":
            return gaussian_nll(h, mu_re, mu_im, c, self.dictionary)
        return mse_loss(h, mu_re, mu_im)

    def feedback_forward(self, h: np.ndarray, noise: np.ndarray) -> FeedbackOutputs:
        """Pilot observation through decoder for a user batch h (B, N);
        noise (B, n_p) enters as a constant leaf."""
        cfg = self.config
        h_re = dc.constant(np.ascontiguousarray(h.real))
        h_im = dc.constant(np.ascontiguousarray(h.imag))
        y_re, y_im = pm.pilot_forward(
            self.store, h_re, h_im,
            dc.constant(np.ascontiguousarray(noise.real)),
            dc.constant(np.ascontiguousarray(noise.imag)))
        z = self.encode(y_re, y_im)

        indices = vq.quantize_batch(z.value, self.store[vq.CODEBOOK].value)
        f = vq.lookup(self.store, indices)
        f_st = vq.straight_through(z, f)
        codebook_term, commitment_term = vq.vq_loss_terms(z, f, cfg.beta)

        mu_re, mu_im, c = self.decode(f_st)
        rec = self.reconstruction_loss(h, mu_re, mu_im, c)
        return FeedbackOutputs(z=z, indices=indices, f=f, f_st=f_st,
                               mu_re=mu_re, mu_im=mu_im, c=c, rec_loss=rec,
                               codebook_term=codebook_term,
                               commitment_term=commitment_term)

    # -- precoding side -----------------------------------------------------

    def _agg(self, n_const: int, j: int):
        key = (n_const, j)
        if key not in self._agg_cache:
            rows = n_const * j
            same = np.zeros((rows, rows))
            for c in range(n_const):
                same[c * j:(c + 1) * j, c * j:(c + 1) * j] = 1.0
            eye = np.eye(rows)
            mean_others = (same - eye) / (j - 1) if j > 1 else np.zeros((rows, rows))
            group_sum = np.zeros((n_const, rows))
            for c in range(n_const):
                group_sum[c, c * j:(c + 1) * j] = 1.0
            self._agg_cache[key] = (same, eye, mean_others, group_sum)
        return self._agg_cache[key]

    def precode_forward(self, mu_re: dc.Node, mu_im: dc.Node, c: dc.Node | None,
                        n_const: int, j: int, noise_var: float, rho: float):
        """GNN precoders for n_const constellations of j users each.

        Inputs are (n_const * j, .) nodes grouped consecutively; in
        instantaneous mode (c is None) the angular power feature is all-ones,
        matching the identity decoder covariance.
        """
        cfg = self.config
        rows = n_const * j
        if c is None:
            c = dc.constant(np.ones((rows, 4 * cfg.n)))
        ln_s2 = dc.constant(np.full((rows, 1), np.log(noise_var)))
        feats = dc.concat([mu_re, mu_im, c, ln_s2], axis=1)
        g = dc.softplus(self._linear("gnn.feat", feats))
        _, _, mean_others, group_sum = self._agg(n_const, j)
        for _ in range(cfg.gnn_rounds):
            msg = dc.softplus(self._linear("gnn.msg", g))
            m = dc.matmul(dc.constant(mean_others), msg)
            g = dc.softplus(self._linear("gnn.upd", dc.concat([g, m], axis=1)))
        raw = self._linear("gnn.readout", g)
        v_re = dc.narrow(raw, 1, 0, cfg.n)
        v_im = dc.narrow(raw, 1, cfg.n, cfg.n)

        sq = dc.add(dc.mul(v_re, v_re), dc.mul(v_im, v_im))
        row_power = dc.node_sum(sq, axis=1, keepdims=True)
        group_power = dc.matmul(dc.constant(group_sum), row_power)   # (n_const, 1)
        if np.any(group_power.value == 0.0):
            raise DegenerateOutput("all-zero precoders before power normalization")
        factor = dc.sqrt(dc.div(dc.constant(np.full((n_const, 1), rho)), group_power))
        row_factor = dc.matmul(dc.constant(group_sum.T), factor)     # (rows, 1)
        return dc.mul(v_re, row_factor), dc.mul(v_im, row_factor)

    def sum_rate_node(self, h: np.ndarray, v_re: dc.Node, v_im: dc.Node,
                      n_const: int, j: int, noise_var: float) -> dc.Node:
        """Per-constellation achievable sum rate (n_const, 1) on true channels."""
        h_re = dc.constant(np.ascontiguousarray(h.real))
        h_im = dc.constant(np.ascontiguousarray(h.imag))
        # T[a, b] = h_a^T v_b (transpose convention); only same-group terms used
        t_re, t_im = dc.complex_matmul(h_re, h_im, dc.transpose(v_re), dc.transpose(v_im))
        p2 = dc.add(dc.mul(t_re, t_re), dc.mul(t_im, t_im))
        same, eye, _, group_sum = self._agg(n_const, j)
        sig = dc.node_sum(dc.mul(p2, dc.constant(eye)), axis=1)
        in_group = dc.node_sum(dc.mul(p2, dc.constant(same)), axis=1)
        interf = dc.sub(in_group, sig)
        sinr = dc.div(sig, dc.add_const(interf, noise_var))
        rate = dc.scale(dc.log(dc.add_const(sinr, 1.0)), 1.0 / LN2)
        return dc.matmul(dc.constant(group_sum), dc.reshape(rate, (n_const * j, 1)))

    # -- evaluation conveniences (graph built, values read) ------------------

    def run_feedback(self, h: np.ndarray, noise: np.ndarray):
        """Numpy view of the feedback pass: (mu, c or None, indices)."""
        out = self.feedback_forward(h, noise)
        mu = out.mu_re.value + 1j * out.mu_im.value
        c = out.c.value if out.c is not None else None
        return mu, c, out.indices

    def stats_from_feedback(self, h: np.ndarray, noise: np.ndarray) -> list[StatisticalCSI]:
        """Decoder outputs as statistical CSI; instantaneous reconstructions
        get the identity covariance (c = 1)."""
        mu, c, _ = self.run_feedback(h, noise)
        if c is None:
            c = np.ones((h.shape[0], 4 * self.config.n))
        return [StatisticalCSI(mu=mu[i], c=c[i]) for i in range(h.shape[0])]


def gnn_precode(stats: list[StatisticalCSI], noise_var: float, rho: float,
                model: EndToEndModel) -> PrecoderSet:
    """Run the precoder network on a single constellation of statistical CSI."""
    if len(stats) < 1:
        raise NetworkError("need at least one user")
    if noise_var <= 0:
        raise NetworkError("noise variance must be positive")
    j = len(stats)
    mu = np.stack([s.mu for s in stats])
    c = np.stack([s.c for s in stats])
    v_re, v_im = model.precode_forward(
        dc.constant(np.ascontiguousarray(mu.real)),
        dc.constant(np.ascontiguousarray(mu.imag)),
        dc.constant(c), 1, j, noise_var, rho)
    return PrecoderSet(v=(v_re.value + 1j * v_im.value).T, rho=rho)
