"""Evaluation protocol: per-method sum rates over random constellations,
sweeps over J, B and n_p, and CSV emission.

One constellation set is fixed per (seed, config, J) and reused across all
methods, including the per-user observation noise draws, so method curves
differ only through the feedback/precoding chain.  Rates are always computed
on the true channels of the constellation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import baselines as bl
from . import training as tr
from .channel import ChannelDataset
from .config import ExperimentConfig
from .covariance import build_dictionary
from .networks import gnn_precode
from .training import ModelCheckpoint, check_fingerprint, model_from_checkpoint

CSV_HEADER = "sweep_var,value,method,mean_sum_rate,std_err,n_constellations,seed"


class HarnessError(Exception):
    pass


class NotImplementedMethod(HarnessError):
    pass


class MissingCheckpoint(HarnessError):
    pass


class PartialCheckpoints(HarnessError):
    def __init__(self, missing):
        self.missing = missing
        super().__init__("missing checkpoints for: "
                         + ", ".join(f"({v}, {m})" for v, m in missing))


@dataclass(frozen=True)
class MethodSpec:
    key: str
    label: str
    needs_checkpoint: bool
    mode: str | None            # required checkpoint mode
    precoder: str               # gnn | swmmse | wmmse | mrt | zf | wmmse_true
    learnt_pilot: bool = False


METHODS = {m.key: m for m in [
    MethodSpec("vqvae_s_gnn_learntP", "VQ-VAE(S) + GNN, learnt P", True,
               "statistical", "gnn", learnt_pilot=True),
    MethodSpec("vqae_i_gnn_learntP", "VQ-AE(I) + GNN, learnt P", True,
               "instantaneous", "gnn", learnt_pilot=True),
    MethodSpec("vqvae_s_gnn", "VQ-VAE(S) + GNN", True, "statistical", "gnn"),
    MethodSpec("vqae_i_gnn", "VQ-AE(I) + GNN", True, "instantaneous", "gnn"),
    MethodSpec("vqvae_s_swmmse", "VQ-VAE(S) + SWMMSE", True, "statistical", "swmmse"),
    MethodSpec("vqae_i_wmmse", "VQ-AE(I) + WMMSE", True, "instantaneous", "wmmse"),
    MethodSpec("wmmse_perfect_csi", "WMMSE, perfect CSI", False, None, "wmmse_true"),
    MethodSpec("mrt", "MRT", False, None, "mrt"),
    MethodSpec("zf", "ZF", False, None, "zf"),
]}

# recognized for legend parity with the cited prior work, deliberately absent
GMM_METHODS = {"gmm_gnn": "GMM + GNN", "gmm_swmmse": "GMM + SWMMSE"}


@dataclass(frozen=True)
class SweepRow:
    sweep_var: str
    value: float
    method: str
    mean_sum_rate: float
    std_err: float
    n_constellations: int
    seed: int


@dataclass
class SweepResult:
    rows: list

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.sweep_var},{r.value!r},{r.method},{r.mean_sum_rate!r},"
                         f"{r.std_err!r},{r.n_constellations},{r.seed}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str) -> "SweepResult":
        lines = text.strip().split("\n")
        if not lines or lines[0] != CSV_HEADER:
            raise HarnessError(f"line 1: expected header '{CSV_HEADER}'")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 7:
                raise HarnessError(f"line {lineno}: expected 7 fields, got {len(parts)}")
            try:
                rows.append(SweepRow(sweep_var=parts[0], value=float(parts[1]),
                                     method=parts[2], mean_sum_rate=float(parts[3]),
                                     std_err=float(parts[4]),
                                     n_constellations=int(parts[5]),
                                     seed=int(parts[6])))
            except ValueError as exc:
                raise HarnessError(f"line {lineno}: {exc}") from exc
        return SweepResult(rows=rows)


def method_label(key: str) -> str:
    if key in METHODS:
        return METHODS[key].label
    if key in GMM_METHODS:
        return GMM_METHODS[key]
    raise HarnessError(f"unknown method '{key}'")


def _eval_noise(rng: np.random.Generator, j: int, n_p: int) -> np.ndarray:
    return np.sqrt(0.5) * (rng.standard_normal((j, n_p))
                           + 1j * rng.standard_normal((j, n_p)))


def evaluate_method(method: str, checkpoint: ModelCheckpoint | None,
                    dataset: ChannelDataset, config: ExperimentConfig,
                    j: int, snr_db: float, n_p: int | None = None,
                    codebook_size: int | None = None) -> tuple[float, float, np.ndarray]:
    """Mean sum rate, standard error and per-constellation rates of one method
    at one (J, SNR) operating point."""
    if method in GMM_METHODS:
        raise NotImplementedMethod(
            f"method '{method}' ({GMM_METHODS[method]}) is a comparison point from "
            "cited prior work and is deliberately not implemented")
    if method not in METHODS:
        raise HarnessError(f"unknown method '{method}'")
    spec = METHODS[method]
    noise_var = tr.sigma2_from_snr_db(snr_db)
    model = None
    if spec.needs_checkpoint:
        if checkpoint is None:
            raise MissingCheckpoint(f"method '{method}' needs a trained checkpoint")
        model_config = config.model_config(n_p=n_p, codebook_size=codebook_size,
                                           mode=spec.mode)
        check_fingerprint(checkpoint, model_config)
        model = model_from_checkpoint(checkpoint, model_config)
    n_pilots = n_p if n_p is not None else config.n_p
    dictionary = build_dictionary(dataset.geometry)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, j]))
    rates = np.empty(config.n_constellations)
    for k in range(config.n_constellations):
        const = tr.sample_constellation(dataset, "eval", j, noise_var, rng)
        raw_noise = _eval_noise(rng, j, n_pilots)
        h = dataset.samples[const.sample_rows]

        if spec.precoder == "wmmse_true":
            v, _ = bl.wmmse(h, config.rho, noise_var)
        elif spec.precoder == "mrt":
            v = bl.mrt(h, config.rho)
        elif spec.precoder == "zf":
            v = bl.zf(h, config.rho)
        else:
            noise = np.sqrt(noise_var) * raw_noise
            stats = model.stats_from_feedback(h, noise)
            if spec.precoder == "gnn":
                v = gnn_precode(stats, noise_var, config.rho, model)
            elif spec.precoder == "swmmse":
                v, _ = bl.swmmse(stats, dictionary, config.rho, noise_var,
                                 n_samples=config.swmmse_samples,
                                 rng=np.random.default_rng(
                                     np.random.SeedSequence([config.seed, 3, j, k])))
            else:   # wmmse on the instantaneous reconstruction
                hbar = np.stack([s.mu for s in stats])
                v, _ = bl.wmmse(hbar, config.rho, noise_var)
        rates[k] = bl.sum_rate(h, v, noise_var)
    mean = float(rates.mean())
    std_err = float(rates.std(ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else 0.0
    return mean, std_err, rates


def _sweep_values(axis: str, config: ExperimentConfig):
    from .vq import feedback_bits
    if axis == "J":
        return [(j, {"j": j}) for j in config.j_list]
    if axis == "B":
        return [(feedback_bits(config.n_latent, config.n_embed, c),
                 {"codebook_size": c}) for c in config.c_list]
    if axis == "n_p":
        return [(n_p, {"n_p": n_p}) for n_p in config.np_list]
    raise HarnessError(f"unknown sweep axis '{axis}' (expected J, B or n_p)")


def run_sweep(axis: str, config: ExperimentConfig, dataset: ChannelDataset,
              checkpoint_paths: dict[str, str]) -> SweepResult:
    """Evaluate every configured method along one axis.

    ``checkpoint_paths`` maps a learned method to a path template that may
    contain ``{value}`` (the swept codebook size or pilot count).  Missing
    (value, method) pairs are reported together before any evaluation runs.
    """
    import os

    snr_db = config.snr_list[0]
    values = _sweep_values(axis, config)
    plan = []
    missing = []
    for value, override in values:
        for method in config.methods:
            if method in GMM_METHODS:
                raise NotImplementedMethod(
                    f"method '{method}' ({GMM_METHODS[method]}) is not implemented")
            spec = METHODS.get(method)
            if spec is None:
                raise HarnessError(f"unknown method '{method}'")
            path = None
            if spec.needs_checkpoint:
                template = checkpoint_paths.get(method)
                if template is None:
                    missing.append((value, method))
                    continue
                swept = override.get("codebook_size") or override.get("n_p") or ""
                path = template.format(value=swept) if "{value}" in template else template
                if not os.path.exists(path):
                    missing.append((value, method))
                    continue
            plan.append((value, override, method, path))
    if missing:
        raise PartialCheckpoints(missing)

    rows = []
    for value, override, method, path in plan:
        checkpoint = tr.load_checkpoint(path) if path else None
        j = override.get("j", config.j_fixed)
        mean, err, _ = evaluate_method(
            method, checkpoint, dataset, config, j=j, snr_db=snr_db,
            n_p=override.get("n_p"), codebook_size=override.get("codebook_size"))
        rows.append(SweepRow(sweep_var=axis, value=float(value), method=method,
                             mean_sum_rate=mean, std_err=err,
                             n_constellations=config.n_constellations,
                             seed=config.seed))
    return SweepResult(rows=rows)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
