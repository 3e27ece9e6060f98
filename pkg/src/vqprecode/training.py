"""Two-stage training and the checkpoint container.

Pre-training fits the feedback path (pilot, coarse estimator, encoder,
codebook, decoder) per user on the first data half with the VQ-VAE loss;
fine-tuning loads that checkpoint, adds the precoder network and trains
everything without freezing on constellations from the second half, at a
tenth of the pre-training learning rate, with the negative sum rate added to
the loss.  The learnable pilot is projected back to ||P||_F^2 = N after every
optimizer step in both stages.

Batch semantics: in pre-training ``batch_size`` counts users (samples); in
fine-tuning it counts constellations of ``j_train`` users each.

Checkpoint file format (little-endian):

    magic  4s  = b"VQCK"
    version u32 = 1
    stage   u8  (0 pretrain, 1 finetune)
    n_v, n_h, n_p, n_latent, n_embed, n_codewords   u32 each
    mode    u8  (0 statistical, 1 instantaneous)
    beta    f64
    seed    i64
    n_params u32, then per parameter:
        name_len u16, name utf-8, ndim u8, dims u32 each, values f64

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import pilot as pm
from .channel import ChannelDataset
from .networks import MODES, EndToEndModel, ModelConfig

_MAGIC = b"VQCK"
_VERSION = 1
STAGES = ("pretrain", "finetune")
# fingerprint keys that must match between a checkpoint and the model it loads into
_STRICT_KEYS = ("n_v", "n_h", "n_p", "n_latent", "n_embed", "n_codewords", "mode")


class TrainingError(Exception):
    pass


class FingerprintMismatch(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    j_train: int = 4
    snr_train_db: float = 15.0
    rho: float = 1.0
    clip_norm: float = 10.0
    seed: int = 0
    finetune_lr: float | None = None     # derived as lr / 10 when unset

    def finetune_rate(self) -> float:
        return self.lr / 10.0 if self.finetune_lr is None else self.finetune_lr


@dataclass(frozen=True)
class Constellation:
    scenario_ids: np.ndarray     # (J,) pairwise distinct
    sample_rows: np.ndarray      # (J,) dataset row per scenario
    noise_var: float


@dataclass
class ModelCheckpoint:
    stage: str
    fingerprint: dict
    params: dict[str, np.ndarray]


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    visited_rows: set = field(default_factory=set)
    codeword_usage: np.ndarray | None = None


def sigma2_from_snr_db(snr_db: float) -> float:
    """rho = 1 convention: SNR = 1 / sigma_n^2."""
    return float(10.0 ** (-snr_db / 10.0))


def sample_constellation(dataset: ChannelDataset, split: str, j: int,
                         noise_var: float, rng: np.random.Generator) -> Constellation:
    """J distinct scenarios from a split, one uniformly chosen sample each."""
    scen = dataset.scenario_samples(split)
    ids = sorted(scen)
    if len(ids) < j:
        raise TrainingError(f"split '{split}' holds {len(ids)} scenarios, need {j}")
    chosen = rng.choice(len(ids), size=j, replace=False)
    scenario_ids = np.array([ids[k] for k in chosen])
    rows = np.array([scen[s][rng.integers(len(scen[s]))] for s in scenario_ids])
    return Constellation(scenario_ids=scenario_ids, sample_rows=rows,
                         noise_var=noise_var)


def checkpoint_from_model(model: EndToEndModel, stage: str) -> ModelCheckpoint:
    return ModelCheckpoint(stage=stage, fingerprint=model.config.fingerprint(),
                           params=model.store.values())


def check_fingerprint(checkpoint: ModelCheckpoint, config: ModelConfig) -> None:
    want = config.fingerprint()
    bad = [k for k in _STRICT_KEYS if checkpoint.fingerprint.get(k) != want[k]]
    if bad:
        detail = {k: (checkpoint.fingerprint.get(k), want[k]) for k in bad}
        raise FingerprintMismatch(f"checkpoint/config mismatch on {detail}")


def model_from_checkpoint(checkpoint: ModelCheckpoint, config: ModelConfig) -> EndToEndModel:
    check_fingerprint(checkpoint, config)
    model = EndToEndModel(config)
    names = set(model.store.names())
    if names != set(checkpoint.params):
        raise FingerprintMismatch(
            f"parameter sets differ: {sorted(names ^ set(checkpoint.params))}")
    for name, value in checkpoint.params.items():
        model.store.set_value(name, value)
    return model


def _pretrain_loss(model: EndToEndModel, h: np.ndarray, noise: np.ndarray):
    out = model.feedback_forward(h, noise)
    per_user = dc.add(out.rec_loss, dc.add(out.codebook_term, out.commitment_term))
    return dc.node_mean(per_user), out


def _apply_gradients(model: EndToEndModel, lr: float, clip_norm: float) -> None:
    grads = model.store.gradients()
    for name in model.frozen_names():
        grads.pop(name, None)
    grads = dc.clip_gradients(grads, clip_norm)
    dc.adam_step(model.store, grads, lr)
    if model.config.learn_pilot:
        pm.renormalize_pilot(model.store)


def pretrain(dataset: ChannelDataset, model_config: ModelConfig,
             train_config: TrainConfig) -> tuple[ModelCheckpoint, TrainReport]:
    """VQ-VAE stage on the pre-train half; the precoder network stays untouched."""
    model = EndToEndModel(model_config)
    rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 0]))
    noise_var = sigma2_from_snr_db(train_config.snr_train_db)
    rows = dataset.pretrain_idx
    report = TrainReport()
    usage = np.zeros(model_config.n_codewords, dtype=np.int64)
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(rows))
        total, count = 0.0, 0
        for start in range(0, len(order), train_config.batch_size):
            batch = rows[order[start:start + train_config.batch_size]]
            h = dataset.samples[batch]
            noise = pm.draw_noise(rng, model_config.n_p, noise_var, count=len(batch))
            model.store.zero_grads()
            try:
                loss, out = _pretrain_loss(model, h, noise)
                dc.backward(loss)
            except dc.NonFiniteValue as exc:
                raise TrainingError(
                    f"non-finite loss in pretrain epoch {epoch} at rows "
                    f"{batch[:4].tolist()}...: {exc}") from exc
            _apply_gradients(model, train_config.lr, train_config.clip_norm)
            usage += np.bincount(out.indices.reshape(-1),
                                 minlength=model_config.n_codewords)
            total += float(loss.value) * len(batch)
            count += len(batch)
            report.visited_rows.update(int(r) for r in batch)
        report.epoch_losses.append(total / count)
    report.codeword_usage = usage
    return checkpoint_from_model(model, "pretrain"), report


def finetune(checkpoint: ModelCheckpoint, dataset: ChannelDataset,
             model_config: ModelConfig,
             train_config: TrainConfig) -> tuple[ModelCheckpoint, TrainReport]:
    """Joint stage on constellations from the fine-tune half; loss adds the
    negative sum rate on the true channels to the per-user VQ-VAE terms."""
    if checkpoint.stage != "pretrain":
        raise TrainingError(f"fine-tuning expects a pretrain checkpoint, "
                            f"got stage '{checkpoint.stage}'")
    model = model_from_checkpoint(checkpoint, model_config)
    rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))
    noise_var = sigma2_from_snr_db(train_config.snr_train_db)
    lr = train_config.finetune_rate()
    j = train_config.j_train
    n_rows = len(dataset.finetune_idx)
    steps_per_epoch = max(1, n_rows // (train_config.batch_size * j))
    report = TrainReport()
    for epoch in range(train_config.epochs):
        total, count = 0.0, 0
        for step in range(steps_per_epoch):
            consts = [sample_constellation(dataset, "finetune", j, noise_var, rng)
                      for _ in range(train_config.batch_size)]
            rows = np.concatenate([c.sample_rows for c in consts])
            h = dataset.samples[rows]
            noise = pm.draw_noise(rng, model_config.n_p, noise_var, count=len(rows))
            model.store.zero_grads()
            try:
                out = model.feedback_forward(h, noise)
                v_re, v_im = model.precode_forward(
                    out.mu_re, out.mu_im, out.c, len(consts), j, noise_var,
                    train_config.rho)
                rates = model.sum_rate_node(h, v_re, v_im, len(consts), j, noise_var)
                per_user = dc.add(out.rec_loss,
                                  dc.add(out.codebook_term, out.commitment_term))
                loss = dc.add(dc.node_mean(per_user), dc.neg(dc.node_mean(rates)))
                dc.backward(loss)
            except dc.NonFiniteValue as exc:
                raise TrainingError(
                    f"non-finite loss in finetune epoch {epoch} step {step}: "
                    f"{exc}") from exc
            _apply_gradients(model, lr, train_config.clip_norm)
            total += float(loss.value)
            count += 1
            report.visited_rows.update(int(r) for r in rows)
        report.epoch_losses.append(total / count)
    return checkpoint_from_model(model, "finetune"), report


# -- checkpoint persistence --------------------------------------------------

def save_checkpoint(checkpoint: ModelCheckpoint, path: str) -> None:
    fp = checkpoint.fingerprint
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIB", _MAGIC, _VERSION, STAGES.index(checkpoint.stage)))
        fh.write(struct.pack("<IIIIII", fp["n_v"], fp["n_h"], fp["n_p"],
                             fp["n_latent"], fp["n_embed"], fp["n_codewords"]))
        fh.write(struct.pack("<Bdq", MODES.index(fp["mode"]), fp["beta"], fp["seed"]))
        fh.write(struct.pack("<I", len(checkpoint.params)))
        for name in sorted(checkpoint.params):
            data = np.ascontiguousarray(checkpoint.params[name], dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        magic, version, stage = struct.unpack("<4sIB", fh.read(9))
        if magic != _MAGIC:
            raise TrainingError(f"{path}: not a checkpoint file (bad magic)")
        if version != _VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint version {version}")
        n_v, n_h, n_p, n_latent, n_embed, n_codewords = struct.unpack("<IIIIII", fh.read(24))
        mode_idx, beta, seed = struct.unpack("<Bdq", fh.read(17))
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
    fingerprint = {"n_v": n_v, "n_h": n_h, "n_p": n_p, "n_latent": n_latent,
                   "n_embed": n_embed, "n_codewords": n_codewords,
                   "mode": MODES[mode_idx], "beta": beta, "seed": seed}
    return ModelCheckpoint(stage=STAGES[stage], fingerprint=fingerprint, params=params)
