"""Experiment configuration: flat UTF-8 key=value files.

Lines are ``key=value``; blank lines and ``#`` comments are ignored; unknown
keys are errors.  Every key has a typed default, so an empty file is a valid
desk-scale experiment.  ``--paper-scale`` swaps in the full-scale geometry,
codebook and evaluation protocol (N=64, B=40, 500 constellations, 10,000
evaluation samples, 480,000 training samples).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .channel import ArrayGeometry, DatasetConfig
from .networks import ModelConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _parse_float_list(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse_str_list(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    # array and system
    n_v: int = 2
    n_h: int = 8
    d_v: float = 1.0
    d_h: float = 0.5
    n_p: int = 4
    rho: float = 1.0
    # model
    n_latent: int = 8
    n_embed: int = 2
    codebook_size: int = 16
    mode: str = "statistical"
    beta: float = 0.25
    enc_hidden1: int = 256
    enc_hidden2: int = 128
    dec_hidden1: int = 128
    dec_hidden2: int = 256
    gnn_dim: int = 128
    gnn_rounds: int = 3
    learn_pilot: bool = True
    freeze_coarse_estimator: bool = False
    pilot_constraint: str = "frobenius"
    # data
    n_scenarios: int = 100
    samples_per_scenario: int = 60
    eval_size: int = 2000
    # training
    pretrain_lr: float = 1e-3
    pretrain_epochs: int = 10
    pretrain_batch: int = 64
    finetune_lr: float = 0.0          # 0 means: derive as pretrain_lr / 10
    finetune_epochs: int = 6
    finetune_batch: int = 16
    j_train: int = 4
    snr_train_db: float = 15.0
    clip_norm: float = 10.0
    # evaluation
    j_list: tuple = (2, 4, 6)
    c_list: tuple = (16, 64, 256)
    np_list: tuple = (2, 4, 8)
    snr_list: tuple = (15.0,)
    j_fixed: int = 4                  # user count for B and n_p sweeps
    n_constellations: int = 100
    swmmse_samples: int = 32
    methods: tuple = ("vqvae_s_gnn_learntP", "wmmse_perfect_csi", "mrt", "zf")
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.n_constellations < 1:
            raise ConfigError("n_constellations must be at least 1")
        if self.pilot_constraint not in ("frobenius", "per_row"):
            raise ConfigError(f"unknown pilot_constraint '{self.pilot_constraint}'")

    # -- derived sub-configurations ----------------------------------------

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(n_v=self.n_v, n_h=self.n_h, d_v=self.d_v, d_h=self.d_h)

    def model_config(self, n_p: int | None = None, codebook_size: int | None = None,
                     mode: str | None = None,
                     learn_pilot: bool | None = None) -> ModelConfig:
        if self.pilot_constraint == "per_row":
            raise ConfigError("pilot_constraint=per_row is a documented stub; "
                              "only 'frobenius' is implemented")
        return ModelConfig(
            geometry=self.geometry(),
            n_p=self.n_p if n_p is None else n_p,
            n_latent=self.n_latent, n_embed=self.n_embed,
            n_codewords=self.codebook_size if codebook_size is None else codebook_size,
            mode=self.mode if mode is None else mode,
            enc_hidden=(self.enc_hidden1, self.enc_hidden2),
            dec_hidden=(self.dec_hidden1, self.dec_hidden2),
            gnn_dim=self.gnn_dim, gnn_rounds=self.gnn_rounds, beta=self.beta,
            seed=self.seed,
            learn_pilot=self.learn_pilot if learn_pilot is None else learn_pilot,
            freeze_coarse_estimator=self.freeze_coarse_estimator)

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(geometry=self.geometry(), n_scenarios=self.n_scenarios,
                             samples_per_scenario=self.samples_per_scenario,
                             eval_size=self.eval_size, seed=self.seed)

    def train_config(self, stage: str) -> TrainConfig:
        batch = self.pretrain_batch if stage == "pretrain" else self.finetune_batch
        epochs = self.pretrain_epochs if stage == "pretrain" else self.finetune_epochs
        return TrainConfig(lr=self.pretrain_lr, batch_size=batch, epochs=epochs,
                           j_train=self.j_train, snr_train_db=self.snr_train_db,
                           rho=self.rho, clip_norm=self.clip_norm, seed=self.seed,
                           finetune_lr=self.finetune_lr or None)

    def snapshot(self) -> list[str]:
        """key=value lines reproducing this configuration."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out.append(f"{f.name}={','.join(str(x) for x in v)}")
            else:
                out.append(f"{f.name}={v}")
        return out


_PARSERS = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
}


def _field_parser(cfg_field):
    if cfg_field.type in ("tuple", tuple):
        default = cfg_field.default
        if default and isinstance(default[0], str):
            return _parse_str_list
        if default and isinstance(default[0], float):
            return _parse_float_list
        return _parse_int_list
    name = cfg_field.type if isinstance(cfg_field.type, str) else cfg_field.type.__name__
    return _PARSERS[{"int": int, "float": float, "str": str, "bool": bool}[name]]


PAPER_SCALE_OVERRIDES = {
    "n_v": "4", "n_h": "16", "n_p": "8",
    "n_latent": "8", "n_embed": "2", "codebook_size": "1024",
    "n_scenarios": "500", "samples_per_scenario": "980", "eval_size": "10000",
    "n_constellations": "500", "j_list": "2,4,6,8,10", "np_list": "1,2,4,8,16",
    "c_list": "4,16,64,256,1024", "j_fixed": "8",
}


def parse_config(path: str, overrides: dict | None = None,
                 paper_scale: bool = False) -> ExperimentConfig:
    """Load a key=value file, apply paper-scale and flag overrides in order."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        raw[key.strip()] = value.strip()
    if paper_scale:
        raw.update(PAPER_SCALE_OVERRIDES)
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    return config_from_mapping(raw, source=path)


def config_from_mapping(raw: dict[str, str], source: str = "<mapping>") -> ExperimentConfig:
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - set(by_name))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {unknown}")
    kwargs = {}
    for key, text in raw.items():
        try:
            kwargs[key] = _field_parser(by_name[key])(text)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{source}: {exc}") from exc
