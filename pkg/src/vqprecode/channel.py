"""Synthetic URA downlink channels with per-user cluster statistics.

Each user ("scenario") is a small set of propagation clusters with mean
azimuth/elevation, angular spreads and gain variances summing to one, so the
per-sample channel is a random superposition of steering vectors.  A dataset
is a pool of such samples with disjoint pre-train / fine-tune / evaluation
splits and one global scalar fixing the empirical mean of ||h||^2 to N.

Dataset file format (all little-endian):

    magic   4s   = b"VQPD"
    version u32  = 1
    n_v, n_h           u32, u32
    n_scenarios        u32
    n_samples          u32
    d_v, d_h           f64, f64
    norm_scale         f64
    scenario_ids       u32  x n_samples
    channel entries    f64  x (n_samples * N * 2), re/im interleaved, row-major
    3 split tables     u64 count + u32 indices each (pretrain, finetune, eval)

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"VQPD"
_VERSION = 1

# Scenario prior: uniform azimuth, elevation within +/-30 degrees (rooftop
# geometry), per-cluster spreads between 1 and 10 degrees, 1..5 clusters.
ELEVATION_MAX = np.pi / 6
SPREAD_MIN = np.deg2rad(1.0)
SPREAD_MAX = np.deg2rad(10.0)
CLUSTER_MAX = 5


class ChannelError(Exception):
    pass


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform rectangular array: n_v vertical by n_h horizontal elements,
    spacings in wavelengths (vertical-major antenna ordering)."""

    n_v: int
    n_h: int
    d_v: float = 1.0
    d_h: float = 0.5

    def __post_init__(self):
        if self.n_v < 1 or self.n_h < 1:
            raise ChannelError("antenna counts must be positive")
        if self.d_v <= 0 or self.d_h <= 0:
            raise ChannelError("antenna spacings must be positive")

    @property
    def n_antennas(self) -> int:
        return self.n_v * self.n_h


@dataclass(frozen=True)
class UserScenario:
    """Cluster geometry of one user; gain variances sum to one."""

    azimuths: np.ndarray
    elevations: np.ndarray
    spreads_az: np.ndarray
    spreads_el: np.ndarray
    gain_vars: np.ndarray
    seed: int

    def __post_init__(self):
        p = len(self.azimuths)
        if p < 1:
            raise ChannelError("need at least one cluster")
        for name in ("elevations", "spreads_az", "spreads_el", "gain_vars"):
            if len(getattr(self, name)) != p:
                raise ChannelError(f"{name} length != cluster count")
        if np.any(self.gain_vars < 0) or abs(self.gain_vars.sum() - 1.0) > 1e-9:
            raise ChannelError("gain variances must be nonnegative and sum to 1")
        if np.any(np.abs(self.elevations) > np.pi / 2) or np.any(np.abs(self.azimuths) > np.pi):
            raise ChannelError("cluster angles out of range")

    @property
    def n_clusters(self) -> int:
        return len(self.azimuths)


def steering_vector(geometry: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """URA response a(az, el), the Kronecker product (vertical-major) of the
    vertical and horizontal phase ramps.  Every entry has unit magnitude."""
    if abs(azimuth) > np.pi or abs(elevation) > np.pi / 2:
        raise ChannelError("angles out of range")
    m = np.arange(geometry.n_v)
    n = np.arange(geometry.n_h)
    a_v = np.exp(2j * np.pi * geometry.d_v * m * np.sin(elevation))
    a_h = np.exp(2j * np.pi * geometry.d_h * n * np.sin(azimuth) * np.cos(elevation))
    return np.kron(a_v, a_h)


def sample_channel(scenario: UserScenario, geometry: ArrayGeometry,
                   rng: np.random.Generator) -> np.ndarray:
    """One channel draw h = sum_p g_p a(theta_p + dtheta, phi_p + dphi).

    Gains are circular Gaussian with the scenario's variances and the angle
    perturbations Gaussian with the scenario's spreads, so E||h||^2 = N
    before any dataset-level rescale.
    """
    n = geometry.n_antennas
    h = np.zeros(n, dtype=np.complex128)
    for p in range(scenario.n_clusters):
        az = scenario.azimuths[p] + rng.normal(0.0, scenario.spreads_az[p])
        el = scenario.elevations[p] + rng.normal(0.0, scenario.spreads_el[p])
        az = (az + np.pi) % (2 * np.pi) - np.pi
        el = np.clip(el, -np.pi / 2, np.pi / 2)
        g = np.sqrt(scenario.gain_vars[p] / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        h += g * steering_vector(geometry, az, el)
    return h


def draw_scenarios(count: int, seed: int) -> list[UserScenario]:
    """Sample user scenarios from the documented prior."""
    rng = np.random.default_rng(seed)
    scenarios = []
    for i in range(count):
        p = int(rng.integers(1, CLUSTER_MAX + 1))
        raw = rng.uniform(0.1, 1.0, size=p)
        scenarios.append(UserScenario(
            azimuths=rng.uniform(-np.pi, np.pi, size=p),
            elevations=rng.uniform(-ELEVATION_MAX, ELEVATION_MAX, size=p),
            spreads_az=rng.uniform(SPREAD_MIN, SPREAD_MAX, size=p),
            spreads_el=rng.uniform(SPREAD_MIN, SPREAD_MAX, size=p),
            gain_vars=raw / raw.sum(),
            seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return scenarios


@dataclass(frozen=True)
class DatasetConfig:
    geometry: ArrayGeometry
    n_scenarios: int
    samples_per_scenario: int
    eval_size: int
    seed: int = 0


@dataclass
class ChannelDataset:
    """Pool of normalized channel samples with disjoint split index tables."""

    geometry: ArrayGeometry
    samples: np.ndarray          # (n_samples, N) complex128, already rescaled
    scenario_ids: np.ndarray     # (n_samples,) int
    pretrain_idx: np.ndarray
    finetune_idx: np.ndarray
    eval_idx: np.ndarray
    norm_scale: float
    n_scenarios: int = field(default=0)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"pretrain": self.pretrain_idx,
                    "finetune": self.finetune_idx,
                    "eval": self.eval_idx}[name]
        except KeyError:
            raise ChannelError(f"unknown split '{name}'") from None

    def scenario_samples(self, split: str) -> dict[int, np.ndarray]:
        """Map scenario id -> sample indices of that scenario inside a split."""
        cache = self.__dict__.setdefault("_scenario_cache", {})
        if split not in cache:
            out: dict[int, list] = {}
            for i in self.split(split):
                out.setdefault(int(self.scenario_ids[i]), []).append(int(i))
            cache[split] = {k: np.asarray(v) for k, v in out.items()}
        return cache[split]


def build_dataset(config: DatasetConfig) -> ChannelDataset:
    """Generate the sample pool, fit the global normalization scalar on it and
    mark disjoint pre-train / fine-tune / evaluation splits.

    The evaluation set takes the tail samples of each scenario (round-robin so
    every scenario is represented); the remaining per-scenario samples split
    half and half into the two training stages.
    """
    geom = config.geometry
    pool = config.n_scenarios * config.samples_per_scenario
    if config.eval_size >= pool:
        raise ChannelError(
            f"eval size {config.eval_size} exceeds generated pool {pool}")
    scenarios = draw_scenarios(config.n_scenarios, config.seed)

    n = geom.n_antennas
    samples = np.empty((pool, n), dtype=np.complex128)
    scenario_ids = np.empty(pool, dtype=np.int64)
    for s, scen in enumerate(scenarios):
        rng = np.random.default_rng(scen.seed)
        for k in range(config.samples_per_scenario):
            row = s * config.samples_per_scenario + k
            samples[row] = sample_channel(scen, geom, rng)
            scenario_ids[row] = s

    # one global scalar: empirical mean of ||h||^2 over the pool becomes N
    mean_energy = float(np.mean(np.sum(np.abs(samples) ** 2, axis=1)))
    norm_scale = float(np.sqrt(n / mean_energy))
    samples *= norm_scale

    per_scen_eval = np.full(config.n_scenarios, config.eval_size // config.n_scenarios)
    per_scen_eval[: config.eval_size % config.n_scenarios] += 1
    pre, fine, ev = [], [], []
    for s in range(config.n_scenarios):
        rows = np.arange(s * config.samples_per_scenario,
                         (s + 1) * config.samples_per_scenario)
        e = int(per_scen_eval[s])
        train = rows[: len(rows) - e]
        ev.extend(rows[len(rows) - e:])
        half = len(train) // 2
        pre.extend(train[:half])
        fine.extend(train[half: 2 * half + (len(train) % 2)])
    return ChannelDataset(
        geometry=geom,
        samples=samples,
        scenario_ids=scenario_ids,
        pretrain_idx=np.asarray(pre, dtype=np.int64),
        finetune_idx=np.asarray(fine, dtype=np.int64),
        eval_idx=np.asarray(ev, dtype=np.int64),
        norm_scale=norm_scale,
        n_scenarios=config.n_scenarios,
    )


def save_dataset(dataset: ChannelDataset, path: str) -> None:
    geom = dataset.geometry
    n_samples = dataset.samples.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIIII", _MAGIC, _VERSION, geom.n_v, geom.n_h,
                             dataset.n_scenarios, n_samples))
        fh.write(struct.pack("<ddd", geom.d_v, geom.d_h, dataset.norm_scale))
        fh.write(dataset.scenario_ids.astype("<u4").tobytes())
        inter = np.empty((n_samples, geom.n_antennas, 2), dtype="<f8")
        inter[:, :, 0] = dataset.samples.real
        inter[:, :, 1] = dataset.samples.imag
        fh.write(inter.tobytes())
        for idx in (dataset.pretrain_idx, dataset.finetune_idx, dataset.eval_idx):
            fh.write(struct.pack("<Q", len(idx)))
            fh.write(idx.astype("<u4").tobytes())


def load_dataset(path: str) -> ChannelDataset:
    with open(path, "rb") as fh:
        magic, version, n_v, n_h, n_scen, n_samples = struct.unpack("<4sIIIII", fh.read(24))
        if magic != _MAGIC:
            raise ChannelError(f"{path}: not a dataset file (bad magic)")
        if version != _VERSION:
            raise ChannelError(f"{path}: unsupported dataset version {version}")
        d_v, d_h, norm_scale = struct.unpack("<ddd", fh.read(24))
        geom = ArrayGeometry(n_v=n_v, n_h=n_h, d_v=d_v, d_h=d_h)
        scenario_ids = np.frombuffer(fh.read(4 * n_samples), dtype="<u4").astype(np.int64)
        n = geom.n_antennas
        inter = np.frombuffer(fh.read(16 * n_samples * n), dtype="<f8")
        inter = inter.reshape(n_samples, n, 2)
        samples = (inter[:, :, 0] + 1j * inter[:, :, 1]).astype(np.complex128)
        splits = []
        for _ in range(3):
            (count,) = struct.unpack("<Q", fh.read(8))
            splits.append(np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.int64))
    return ChannelDataset(geometry=geom, samples=samples, scenario_ids=scenario_ids,
                          pretrain_idx=splits[0], finetune_idx=splits[1],
                          eval_idx=splits[2], norm_scale=norm_scale,
                          n_scenarios=n_scen)
