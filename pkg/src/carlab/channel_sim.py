"""Synthetic paired low/high-array channel outputs with LoS/NLoS ground truth.

The propagation model is a label-conditioned tapped delay line with
uniform-planar-array steering:

* LoS: a Rician dominant tap at the geometric UAV-UE delay and direction,
  K-factor drawn in dB, plus a few weak Rayleigh echoes at short excess delay.
* NLoS: several Rayleigh taps with an exponential power-delay decay, a late
  first arrival, and wide angular scatter around the geometric direction.

Each sample is rendered twice from the same tap set, once per array size, with
independent thermal noise drawn from sibling RNG substreams. Every sample owns
its own stream keyed by ``(seed, uav_index, ue_index)``, so datasets do not
depend on generation order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from scipy.signal import resample

from carlab.errors import ConfigInvalid, ConfigMismatch, IoFailure
from carlab.zc_signal import PathTap, ZCSequence, delay_stats, gen_zc

log = logging.getLogger(__name__)

FORMAT_VERSION = "car-ds/1"
SPEED_OF_LIGHT = 299_792_458.0

# stream tags for np.random.SeedSequence entropy
_LABELS, _UAV, _UES, _SAMPLE = 0, 1, 2, 3


@dataclass
class SceneConfig:
    area_side: float = 50.0
    uav_altitude: float = 75.0
    uav_xy_stddev: float = 5.0
    n_uav_locations: int = 5
    ues_per_location: int = 2000
    n_low: int = 4
    n_high: int = 16
    time_samples_T: int = 64
    snr_db: float = 10.0
    carrier_spacing: float = 0.5
    seed: int = 0
    # preamble and sampling
    zc_root: int = 7
    zc_length: int = 139
    sample_period: float = 50e-9
    preamble_oversample: float | None = None
    # tapped-delay-line substitute
    los_k_db: tuple[float, float] = (8.0, 15.0)
    los_echoes: tuple[int, int] = (2, 4)
    los_max_excess: float = 0.3e-6
    los_angle_scatter_deg: float = 10.0
    suppress_echoes: bool = False
    nlos_taps: tuple[int, int] = (6, 12)
    nlos_max_excess: float = 2.5e-6
    nlos_first_excess: tuple[float, float] = (0.05e-6, 0.3e-6)
    nlos_decay: tuple[float, float] = (0.5e-6, 1.0e-6)
    nlos_elevation_scatter_deg: float = 25.0
    nlos_azimuth_scatter_deg: float = 60.0

    def __post_init__(self):
        for name in ("los_k_db", "los_echoes", "nlos_taps", "nlos_first_excess", "nlos_decay"):
            setattr(self, name, tuple(getattr(self, name)))

    @property
    def n_samples(self) -> int:
        return self.n_uav_locations * self.ues_per_location

    def validate(self) -> "SceneConfig":
        problems = []
        if not 1 <= self.n_low < self.n_high:
            problems.append(f"need 1 <= n_low < n_high, got {self.n_low}, {self.n_high}")
        if self.time_samples_T < 8:
            problems.append("time_samples_T must be >= 8")
        if self.n_samples % 2:
            problems.append("n_uav_locations * ues_per_location must be even for a 50/50 split")
        if self.n_uav_locations < 1 or self.ues_per_location < 1:
            problems.append("need at least one UAV location and one UE")
        if self.area_side < 0 or self.uav_xy_stddev < 0 or self.uav_altitude < 0:
            problems.append("geometry lengths must be non-negative")
        if self.sample_period <= 0:
            problems.append("sample_period must be positive")
        if self.preamble_oversample is not None and (
                self.preamble_oversample <= 0 or round(self.zc_length * self.preamble_oversample) < 1):
            problems.append("preamble_oversample must give a waveform of at least one sample")
        if not 0 <= self.los_echoes[0] <= self.los_echoes[1]:
            problems.append("los_echoes must be an ordered non-negative range")
        if not 1 <= self.nlos_taps[0] <= self.nlos_taps[1]:
            problems.append("nlos_taps must be an ordered range starting at >= 1")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PathTapSet:
    taps: list[PathTap]
    rician_k_db: float | None
    los_flag: int

    @property
    def delays(self) -> np.ndarray:
        return np.array([t.delay_t for t in self.taps], dtype=np.float64)

    @property
    def powers(self) -> np.ndarray:
        return np.array([t.power_p for t in self.taps], dtype=np.float64)

    def rms_spread(self) -> float:
        return delay_stats(self.delays, self.powers).rms_spread

    def to_json(self) -> dict[str, Any]:
        return {
            "rician_k_db": self.rician_k_db,
            "los_flag": self.los_flag,
            "taps": [
                {
                    "delay": t.delay_t,
                    "power": t.power_p,
                    "gain_re": t.gain.real,
                    "gain_im": t.gain.imag,
                    "azimuth": t.aoa_azimuth,
                    "elevation": t.aoa_elevation,
                }
                for t in self.taps
            ],
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "PathTapSet":
        taps = [
            PathTap(t["delay"], t["power"], complex(t["gain_re"], t["gain_im"]),
                    t["azimuth"], t["elevation"])
            for t in d["taps"]
        ]
        return cls(taps, d["rician_k_db"], d["los_flag"])


@dataclass
class ChannelOutput:
    """Real/imaginary received samples across an ``n_side x n_side`` array, shape ``(N^2, T, 2)``."""

    data: np.ndarray

    @property
    def antennas_sq(self) -> int:
        return self.data.shape[0]

    @property
    def time_T(self) -> int:
        return self.data.shape[1]

    def as_complex(self) -> np.ndarray:
        return self.data[..., 0].astype(np.float64) + 1j * self.data[..., 1]


@dataclass
class Sample:
    low: ChannelOutput
    high: ChannelOutput
    label: int
    uav_index: int
    ue_index: int
    ue_position: np.ndarray
    tap_truth: PathTapSet


# -- geometry ---------------------------------------------------------------

def place_uav(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    c = cfg.area_side / 2.0
    x, y = rng.normal(c, cfg.uav_xy_stddev, size=2)
    return np.array([x, y, cfg.uav_altitude])


def place_ues(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    xy = rng.uniform(0.0, 1.0, size=(cfg.ues_per_location, 2)) * cfg.area_side
    return np.column_stack([xy, np.zeros(cfg.ues_per_location)])


def _geometry(uav: np.ndarray, ue: np.ndarray) -> tuple[float, float, float]:
    """Propagation delay (s), elevation from array normal and azimuth (rad) of the direct path."""
    d = ue - uav
    horiz = math.hypot(d[0], d[1])
    dist = math.sqrt(horiz**2 + d[2] ** 2)
    return dist / SPEED_OF_LIGHT, math.atan2(horiz, abs(d[2])), math.atan2(d[1], d[0])


# -- taps -------------------------------------------------------------------

def _rayleigh(rng, mean_power):
    mean_power = np.asarray(mean_power, dtype=np.float64)
    power = mean_power * rng.exponential(1.0, size=mean_power.shape)
    phase = rng.uniform(0.0, 2 * np.pi, size=mean_power.shape)
    return power, phase


def synth_taps(
    rng: np.random.Generator,
    label: int,
    cfg: SceneConfig,
    geometry: tuple[np.ndarray, np.ndarray],
) -> PathTapSet:
    """Draw a normalised tap set conditioned on the LoS/NLoS label.

    ``geometry`` is ``(uav_position, ue_position)``. Tap powers equal
    ``|gain|^2`` and sum to one.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    tau0, elev0, azim0 = _geometry(*geometry)

    if label == 1:
        k_db = float(rng.uniform(*cfg.los_k_db))
        k_lin = 10.0 ** (k_db / 10.0)
        lo, hi = cfg.los_echoes
        n_echo = 0 if cfg.suppress_echoes else int(rng.integers(lo, hi + 1))
        excess = np.sort(rng.uniform(0.0, cfg.los_max_excess, size=n_echo))
        echo_p, echo_phase = _rayleigh(rng, np.exp(-excess / max(cfg.los_max_excess, 1e-12)))
        if n_echo and echo_p.sum() > 0:
            echo_p *= (1.0 / (k_lin + 1.0)) / echo_p.sum()
            dominant = k_lin / (k_lin + 1.0)
        else:
            dominant = 1.0
        scatter = np.deg2rad(cfg.los_angle_scatter_deg)
        delays = np.concatenate([[tau0], tau0 + excess])
        powers = np.concatenate([[dominant], echo_p])
        phases = np.concatenate([[rng.uniform(0.0, 2 * np.pi)], echo_phase])
        elev = np.concatenate([[elev0], elev0 + scatter * rng.standard_normal(n_echo)])
        azim = np.concatenate([[azim0], azim0 + scatter * rng.standard_normal(n_echo)])
    else:
        k_db = None
        n = int(rng.integers(cfg.nlos_taps[0], cfg.nlos_taps[1] + 1))
        first = rng.uniform(*cfg.nlos_first_excess)
        rest = rng.uniform(first, cfg.nlos_max_excess, size=n - 1)
        excess = np.concatenate([[first], np.sort(rest)])
        decay = rng.uniform(*cfg.nlos_decay)
        powers, phases = _rayleigh(rng, np.exp(-(excess - first) / decay))
        delays = tau0 + excess
        elev = elev0 + np.deg2rad(cfg.nlos_elevation_scatter_deg) * rng.standard_normal(n)
        azim = azim0 + np.deg2rad(cfg.nlos_azimuth_scatter_deg) * rng.standard_normal(n)

    powers = powers / powers.sum()
    elev = np.clip(np.abs(elev), 0.0, np.deg2rad(89.0))
    azim = np.mod(azim, 2 * np.pi)
    taps = [
        PathTap(float(d), float(p), complex(math.sqrt(p) * np.exp(1j * ph)), float(a), float(e))
        for d, p, ph, a, e in zip(delays, powers, phases, azim, elev)
    ]
    return PathTapSet(taps, k_db, int(label))


# -- rendering --------------------------------------------------------------

def element_grid(n_side: int) -> np.ndarray:
    """Integer ``(p, q)`` coordinates of each element, antenna index ``a = p * n_side + q``."""
    p, q = np.divmod(np.arange(n_side * n_side), n_side)
    return np.column_stack([p, q]).astype(np.float64)


def array_response(taps: PathTapSet, n_side: int, spacing: float = 0.5) -> np.ndarray:
    """Per-antenna complex gain of each tap, shape ``(n_side**2, n_taps)``."""
    if n_side < 1:
        raise ValueError("n_side must be >= 1")
    grid = element_grid(n_side)
    if not taps.taps:
        return np.zeros((n_side * n_side, 0), dtype=np.complex128)
    gain = np.array([t.gain for t in taps.taps])
    elev = np.array([t.aoa_elevation for t in taps.taps])
    azim = np.array([t.aoa_azimuth for t in taps.taps])
    u = np.sin(elev) * np.cos(azim)
    v = np.sin(elev) * np.sin(azim)
    phase = 2 * np.pi * spacing * (np.outer(grid[:, 0], u) + np.outer(grid[:, 1], v))
    return gain[None, :] * np.exp(1j * phase)


def preamble_waveform(preamble: ZCSequence, oversample: float) -> np.ndarray:
    """One period of the band-limited preamble: Fourier resampling of the ``K`` chips
    to ``round(K * oversample)`` samples, unit RMS.

    ``oversample > 1`` interpolates (a narrow-band preamble seen by a faster
    receiver); ``oversample < 1`` decimates.
    """
    L = int(round(preamble.length_K * oversample))
    if L < 1:
        raise ConfigMismatch(f"oversample {oversample} leaves no samples")
    x = resample(np.asarray(preamble.values), L)
    return x / np.sqrt(np.mean(np.abs(x) ** 2))


def resampled_preamble(preamble: ZCSequence, T: int, oversample: float | None = None) -> np.ndarray:
    """The first ``T`` samples of the periodic preamble waveform (what an ideal channel delivers).

    ``oversample=None`` resamples the whole period onto exactly ``T`` samples.
    """
    wave = preamble_waveform(preamble, T / preamble.length_K if oversample is None else oversample)
    return wave[np.arange(T) % wave.size]


def render_channel_output(
    preamble: ZCSequence,
    taps: PathTapSet,
    n_side: int,
    cfg: SceneConfig,
    rng: np.random.Generator,
) -> ChannelOutput:
    """Receive the preamble through ``taps`` on an ``n_side x n_side`` array.

    Each tap contributes a cyclically delayed copy of the periodic preamble
    waveform, delay rounded to the nearest sample, and the first ``T``
    samples are kept. Every antenna row is scaled to unit RMS before circular
    white noise at ``cfg.snr_db`` is added.
    """
    T = cfg.time_samples_T
    if T < 8:
        raise ConfigMismatch("time_samples_T must be >= 8")
    max_delay = max((t.delay_t for t in taps.taps), default=0.0)
    if int(round(max_delay / cfg.sample_period)) >= T:
        raise ConfigMismatch(
            f"tap delay {max_delay:.3g}s exceeds the {T}-sample window at period {cfg.sample_period:.3g}s"
        )
    oversample = cfg.preamble_oversample
    base = preamble_waveform(preamble, T / preamble.length_K if oversample is None else oversample)
    A = array_response(taps, n_side, cfg.carrier_spacing)
    shifts = np.array([int(round(t.delay_t / cfg.sample_period)) for t in taps.taps], dtype=int)
    idx = (np.arange(T)[None, :] - shifts[:, None]) % base.size
    delayed = base[idx] if len(shifts) else np.zeros((0, T), dtype=np.complex128)
    rx = A @ delayed
    rms = np.sqrt(np.mean(np.abs(rx) ** 2, axis=1, keepdims=True))
    rx = np.divide(rx, rms, out=np.zeros_like(rx), where=rms > 0)
    if math.isfinite(cfg.snr_db):
        sigma = math.sqrt(10.0 ** (-cfg.snr_db / 10.0) / 2.0)
        rx = rx + sigma * (rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape))
    data = np.stack([rx.real, rx.imag], axis=-1).astype(np.float32)
    return ChannelOutput(data)


# -- sample streams ---------------------------------------------------------

def label_assignment(cfg: SceneConfig) -> np.ndarray:
    n = cfg.n_samples
    labels = np.zeros(n, dtype=np.uint8)
    labels[: n // 2] = 1
    np.random.default_rng([cfg.seed, _LABELS]).shuffle(labels)
    return labels


def uav_position(cfg: SceneConfig, uav_index: int) -> np.ndarray:
    return place_uav(np.random.default_rng([cfg.seed, _UAV, uav_index]), cfg)


def ue_positions(cfg: SceneConfig, uav_index: int) -> np.ndarray:
    return place_ues(np.random.default_rng([cfg.seed, _UES, uav_index]), cfg)


def sample_streams(cfg: SceneConfig, uav_index: int, ue_index: int) -> list[np.random.Generator]:
    """``[taps, low-array noise, high-array noise]`` generators for one sample."""
    ss = np.random.SeedSequence([cfg.seed, _SAMPLE, uav_index, ue_index])
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def render_pair(cfg: SceneConfig, preamble: ZCSequence, taps: PathTapSet,
                uav_index: int, ue_index: int) -> tuple[ChannelOutput, ChannelOutput]:
    """Render the (low, high) outputs of a sample from its tap truth."""
    _, rng_low, rng_high = sample_streams(cfg, uav_index, ue_index)
    low = render_channel_output(preamble, taps, cfg.n_low, cfg, rng_low)
    high = render_channel_output(preamble, taps, cfg.n_high, cfg, rng_high)
    return low, high


def make_sample(cfg: SceneConfig, preamble: ZCSequence, labels: np.ndarray,
                uav_index: int, ue_index: int,
                uav: np.ndarray | None = None, ues: np.ndarray | None = None) -> Sample:
    uav = uav_position(cfg, uav_index) if uav is None else uav
    ues = ue_positions(cfg, uav_index) if ues is None else ues
    s = uav_index * cfg.ues_per_location + ue_index
    label = int(labels[s])
    rng_taps = sample_streams(cfg, uav_index, ue_index)[0]
    taps = synth_taps(rng_taps, label, cfg, (uav, ues[ue_index]))
    low, high = render_pair(cfg, preamble, taps, uav_index, ue_index)
    return Sample(low, high, label, uav_index, ue_index, ues[ue_index, :2].copy(), taps)


def _render_location(cfg: SceneConfig, uav_index: int):
    preamble = gen_zc(cfg.zc_root, cfg.zc_length)
    labels = label_assignment(cfg)
    uav = uav_position(cfg, uav_index)
    ues = ue_positions(cfg, uav_index)
    n = cfg.ues_per_location
    low = np.empty((n, cfg.n_low**2, cfg.time_samples_T, 2), dtype=np.float32)
    high = np.empty((n, cfg.n_high**2, cfg.time_samples_T, 2), dtype=np.float32)
    meta = []
    for i in range(n):
        s = make_sample(cfg, preamble, labels, uav_index, i, uav, ues)
        low[i], high[i] = s.low.data, s.high.data
        meta.append({
            "label": s.label,
            "uav_index": uav_index,
            "ue_index": i,
            "uav_position": uav.tolist(),
            "ue_position": s.ue_position.tolist(),
            **s.tap_truth.to_json(),
        })
    return low, high, meta


# -- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    """Paired channel outputs held in memory (or memory-mapped)."""

    low: np.ndarray  # (S, n_low^2, T, 2) float32
    high: np.ndarray  # (S, n_high^2, T, 2) float32
    labels: np.ndarray  # (S,) uint8
    cfg: SceneConfig
    taps: list[dict[str, Any]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def tap_set(self, i: int) -> PathTapSet:
        return PathTapSet.from_json(self.taps[i])

    def rms_spreads(self) -> np.ndarray:
        return np.array([self.tap_set(i).rms_spread() for i in range(len(self))])


@dataclass
class DatasetManifest:
    path: Path
    n_samples: int
    class_counts: dict[str, int]
    low_shape: tuple[int, ...]
    high_shape: tuple[int, ...]
    config: dict[str, Any]


def _iter_locations(cfg: SceneConfig, jobs: int):
    if jobs <= 1:
        for u in range(cfg.n_uav_locations):
            yield _render_location(cfg, u)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_render_location, [cfg] * cfg.n_uav_locations,
                            range(cfg.n_uav_locations))


def make_dataset(cfg: SceneConfig, jobs: int = 1) -> Dataset:
    """Generate a dataset in memory."""
    cfg.validate()
    lows, highs, metas = [], [], []
    for low, high, meta in _iter_locations(cfg, jobs):
        lows.append(low)
        highs.append(high)
        metas.extend(meta)
    labels = np.array([m["label"] for m in metas], dtype=np.uint8)
    return Dataset(np.concatenate(lows), np.concatenate(highs), labels, cfg, metas)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_dataset(cfg: SceneConfig, out_dir: str | Path, jobs: int = 1) -> DatasetManifest:
    """Generate and write a dataset directory (``manifest.json``, ``*.bin``, ``taps.json``)."""
    cfg.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        all_meta = []
        with open(out / "low.bin", "wb") as f_low, open(out / "high.bin", "wb") as f_high, \
                open(out / "labels.bin", "wb") as f_lab:
            for u, (low, high, meta) in enumerate(_iter_locations(cfg, jobs)):
                f_low.write(low.astype("<f4", copy=False).tobytes())
                f_high.write(high.astype("<f4", copy=False).tobytes())
                f_lab.write(bytes(m["label"] for m in meta))
                all_meta.extend(meta)
                log.info("location %d/%d rendered", u + 1, cfg.n_uav_locations)
        with open(out / "taps.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(all_meta, fh, separators=(",", ":"))
        n_los = sum(m["label"] for m in all_meta)
        T = cfg.time_samples_T
        manifest = {
            "format": FORMAT_VERSION,
            "seed": cfg.seed,
            "n_samples": len(all_meta),
            "class_counts": {"los": n_los, "nlos": len(all_meta) - n_los},
            "shapes": {"low": [cfg.n_low**2, T, 2], "high": [cfg.n_high**2, T, 2]},
            "dtype": "<f4",
            "config": cfg.to_dict(),
            "sha256": {name: _sha256(out / name)
                       for name in ("low.bin", "high.bin", "labels.bin", "taps.json")},
        }
        with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out}: {exc}") from exc
    return DatasetManifest(out, len(all_meta), manifest["class_counts"],
                           tuple(manifest["shapes"]["low"]), tuple(manifest["shapes"]["high"]),
                           manifest["config"])


def load_dataset(path: str | Path, mmap: bool = False, with_taps: bool = True) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read dataset manifest in {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise ConfigInvalid(f"unsupported dataset format {manifest.get('format')!r}")
    cfg = SceneConfig.from_dict(manifest["config"])
    n = manifest["n_samples"]
    shapes = manifest["shapes"]

    def arr(name, shape):
        if mmap:
            return np.memmap(path / name, dtype="<f4", mode="r", shape=(n, *shape))
        return np.fromfile(path / name, dtype="<f4").reshape(n, *shape)

    labels = np.fromfile(path / "labels.bin", dtype=np.uint8)
    if labels.shape[0] != n:
        raise ConfigInvalid(f"labels.bin holds {labels.shape[0]} entries, manifest says {n}")
    taps = json.loads((path / "taps.json").read_text(encoding="utf-8")) if with_taps else []
    return Dataset(arr("low.bin", shapes["low"]), arr("high.bin", shapes["high"]), labels, cfg, taps)
