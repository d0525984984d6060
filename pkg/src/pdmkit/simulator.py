"""Synthetic stand-ins for the motor testbed and the farm sensor deployment.

Motor recordings model a rotating imbalance: X and Z see the fundamental at
``rpm / 60`` Hz in quadrature plus a second harmonic, with an amplitude that
grows with the health class and with speed. Y sees only low-level noise.
Every recording draws its phase and amplitude from a seed derived from
``(master seed, rpm, health, recording index)``, independent of the sensor,
so a MEMS recording samples exactly the same continuous signal as the piezo
recording with the same key.

Farm series are a base level, a 24 h sinusoid, a linear trend and Gaussian
noise at a 15 minute cadence, with optional injected anomalies.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import RejectedInputError

PAPER_RPMS = (100, 200, 300, 320, 340, 360, 380, 400, 500, 600)
GRID_RPMS = (100, 200, 300, 400, 500, 600)
BINARY_RPMS = (300, 320, 340, 360, 380)

PIEZO = "Piezo"
MEMS = "Mems"
SAMPLE_RATES = {PIEZO: 3200.0, MEMS: 10.0}

HEALTH_LABELS = ("Normal", "NearFailure", "Failure")

SENSOR_TYPES = ("Temperature", "Humidity", "SoilConductivity", "SoilDielectric",
                "SoilTemperature", "WaterNitrate", "SoilNitrate")
CADENCE_MINUTES = 15
SAMPLES_PER_DAY = 24 * 60 // CADENCE_MINUTES
FARM_START = np.datetime64("2018-10-01T00:00")
ANOMALY_KINDS = ("spike", "drop", "stuck")


def _sub_rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------- motor


@dataclass(frozen=True)
class MotorSpec:
    rpm_list: tuple = PAPER_RPMS
    sensor_kind: str = PIEZO
    recordings_per_condition: int = 50
    recording_seconds: float = 10.0
    health: tuple = (1.0, 1.5, 2.2)
    noise_sigma: float = 0.3
    harmonic_ratio: float = 0.25
    y_sigma: float = 0.1
    amplitude_jitter: float = 0.12
    rpm_exponent: float = 0.5
    rpm_reference: float = 300.0
    seed: int = 0
    allow_any_rpm: bool = False

    def __post_init__(self):
        if self.sensor_kind not in SAMPLE_RATES:
            raise RejectedInputError(f"unknown sensor kind {self.sensor_kind!r}")
        if not self.recording_seconds > 0:
            raise RejectedInputError("recording_seconds must be positive")
        if self.recordings_per_condition < 1:
            raise RejectedInputError("recordings_per_condition must be >= 1")
        if len(self.health) != len(HEALTH_LABELS):
            raise RejectedInputError("need one amplitude scale per health class")

    @property
    def rate(self) -> float:
        return SAMPLE_RATES[self.sensor_kind]

    @property
    def samples_per_recording(self) -> int:
        return int(round(self.rate * self.recording_seconds))


@dataclass
class Recording:
    rpm: int
    label: int
    sensor_kind: str
    index: int
    rate: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.x)) / self.rate

    @property
    def label_name(self) -> str:
        return HEALTH_LABELS[self.label]

    def axes(self) -> dict:
        return {"X": self.x, "Y": self.y, "Z": self.z}


def motor_signal(spec: MotorSpec, rpm: int, label: int, index: int, t: np.ndarray):
    """Noise-free X, Y, Z vibration of one recording evaluated at times ``t``."""
    rng = _sub_rng(spec.seed, rpm, label, index)
    phase = rng.uniform(0.0, 2 * np.pi)
    harmonic_phase = rng.uniform(0.0, 2 * np.pi)
    jitter = np.exp(spec.amplitude_jitter * rng.standard_normal())
    amp = spec.health[label] * (rpm / spec.rpm_reference) ** spec.rpm_exponent * jitter
    theta = 2 * np.pi * (rpm / 60.0) * t + phase
    h = spec.harmonic_ratio * amp
    x = amp * np.sin(theta) + h * np.sin(2 * theta + harmonic_phase)
    z = amp * np.cos(theta) + h * np.cos(2 * theta + harmonic_phase)
    return x, np.zeros_like(t), z


def gen_recording(spec: MotorSpec, rpm: int, label: int, index: int) -> Recording:
    n = spec.samples_per_recording
    t = np.arange(n) / spec.rate
    x, y, z = motor_signal(spec, rpm, label, index, t)
    kind_code = 1 if spec.sensor_kind == PIEZO else 2
    noise = _sub_rng(spec.seed, rpm, label, index, kind_code)
    if spec.noise_sigma > 0:
        x = x + spec.noise_sigma * noise.standard_normal(n)
        z = z + spec.noise_sigma * noise.standard_normal(n)
    if spec.y_sigma > 0:
        y = y + spec.y_sigma * noise.standard_normal(n)
    return Recording(int(rpm), int(label), spec.sensor_kind, int(index), spec.rate, x, y, z)


def gen_motor(spec: MotorSpec) -> list[Recording]:
    """All recordings of a motor campaign, ordered by rpm, health, index."""
    if not spec.rpm_list:
        raise RejectedInputError("rpm_list is empty")
    for rpm in spec.rpm_list:
        if rpm <= 0 or (rpm not in PAPER_RPMS and not spec.allow_any_rpm):
            raise RejectedInputError(f"rpm {rpm} is not one of the testbed speeds {PAPER_RPMS}")
    return [gen_recording(spec, rpm, label, idx)
            for rpm in spec.rpm_list
            for label in range(len(HEALTH_LABELS))
            for idx in range(spec.recordings_per_condition)]


# ---------------------------------------------------------------- farm


@dataclass(frozen=True)
class AnomalySpec:
    count: int = 0
    magnitude: float = 0.5
    kinds: tuple = ("spike",)
    region: tuple = (0.0, 1.0)
    min_gap: int = 24
    stuck_length: int = 8

    def __post_init__(self):
        for k in self.kinds:
            if k not in ANOMALY_KINDS:
                raise RejectedInputError(f"unknown anomaly kind {k!r}")
        if self.count < 0:
            raise RejectedInputError("anomaly count must be nonnegative")
        lo, hi = self.region
        if not 0.0 <= lo < hi <= 1.0:
            raise RejectedInputError(f"anomaly region must satisfy 0 <= lo < hi <= 1, got {self.region}")


@dataclass(frozen=True)
class FarmSpec:
    sensor_type: str
    duration_days: float = 30.0
    base: float = 0.0
    amplitude: float = 0.0
    trend: float = 0.0
    noise: float = 0.0
    peak_hour: float = 14.0
    lower: float | None = None
    upper: float | None = None
    anomalies: AnomalySpec = field(default_factory=AnomalySpec)
    seed: int = 0
    device: int = 0

    def __post_init__(self):
        if self.sensor_type not in SENSOR_TYPES:
            raise RejectedInputError(f"unknown sensor type {self.sensor_type!r}; expected one of {SENSOR_TYPES}")
        if self.duration_days < 2:
            raise RejectedInputError("duration must be at least 2 days")

    @property
    def cadence_minutes(self) -> int:
        return CADENCE_MINUTES

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_days * SAMPLES_PER_DAY))

    @classmethod
    def for_sensor(cls, sensor_type: str, **overrides) -> "FarmSpec":
        params = dict(farm_defaults()[sensor_type]) if sensor_type in SENSOR_TYPES else {}
        params.update(overrides)
        return cls(sensor_type=sensor_type, **params)


def farm_defaults(path=None) -> dict:
    """Per-type parameter table, read from the packaged INI unless ``path`` is given."""
    parser = configparser.ConfigParser()
    if path is None:
        parser.read_string(resources.files("pdmkit").joinpath("data/farm_sensors.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    table = {}
    for section in parser.sections():
        if section not in SENSOR_TYPES:
            raise RejectedInputError(f"unknown sensor type section [{section}]")
        row = {}
        for key, raw in parser[section].items():
            if key not in ("base", "amplitude", "trend", "noise", "peak_hour", "lower", "upper"):
                raise RejectedInputError(f"unknown key {key!r} in [{section}]")
            row[key] = float(raw) if raw.strip() else None
        table[section] = row
    return table


@dataclass
class SensorSeries:
    sensor_type: str
    device: int
    timestamps: np.ndarray
    values: np.ndarray
    is_anomaly: np.ndarray
    clean: np.ndarray | None = None
    seed: int = 0

    def __len__(self):
        return len(self.values)

    @property
    def anomaly_indices(self) -> np.ndarray:
        return np.nonzero(self.is_anomaly)[0]

    @property
    def name(self) -> str:
        return f"device{self.device}_{self.sensor_type}"


def farm_timestamps(n: int) -> np.ndarray:
    return FARM_START + np.arange(n) * np.timedelta64(CADENCE_MINUTES, "m")


def _pick_positions(rng, n_candidates_lo, n_candidates_hi, count, min_gap):
    span = n_candidates_hi - n_candidates_lo
    if count * min_gap > span:
        raise RejectedInputError(f"cannot place {count} anomalies {min_gap} samples apart in {span} samples")
    # spread slack uniformly between gaps, which keeps the draw exact and deterministic
    slack = span - count * min_gap
    cuts = np.sort(rng.integers(0, slack + 1, size=count))
    return n_candidates_lo + cuts + np.arange(count) * min_gap + min_gap // 2


def gen_farm(spec: FarmSpec) -> SensorSeries:
    n = spec.n_samples
    a = spec.anomalies
    if a.count > n:
        raise RejectedInputError(f"anomaly count {a.count} exceeds series length {n}")
    rng = _sub_rng(spec.seed, SENSOR_TYPES.index(spec.sensor_type), spec.device)
    days = np.arange(n) / SAMPLES_PER_DAY
    clean = (spec.base
             + spec.amplitude * np.cos(2 * np.pi * (days - spec.peak_hour / 24.0))
             + spec.trend * days)
    if spec.noise > 0:
        clean = clean + spec.noise * rng.standard_normal(n)
    if spec.lower is not None or spec.upper is not None:
        clean = np.clip(clean, spec.lower, spec.upper)
    values = clean.copy()
    mask = np.zeros(n, dtype=bool)
    if a.count:
        arng = _sub_rng(spec.seed, SENSOR_TYPES.index(spec.sensor_type), spec.device, 7)
        lo = max(1, int(np.floor(a.region[0] * n)))
        hi = int(np.floor(a.region[1] * n))
        positions = _pick_positions(arng, lo, hi, a.count, max(a.min_gap, a.stuck_length + 1))
        for j, i in enumerate(positions):
            kind = a.kinds[j % len(a.kinds)]
            if kind == "spike":
                values[i] = clean[i] * (1.0 + a.magnitude)
                mask[i] = True
            elif kind == "drop":
                values[i] = clean[i] * (1.0 - a.magnitude)
                mask[i] = True
            else:
                stop = min(n, i + a.stuck_length)
                values[i:stop] = values[i - 1]
                mask[i:stop] = True
    return SensorSeries(spec.sensor_type, spec.device, farm_timestamps(n), values, mask, clean, spec.seed)


# ---------------------------------------------------------------- bundle


@dataclass
class Bundle:
    farm: list[SensorSeries]
    motor: dict  # sensor kind -> list[Recording]
    motor_specs: dict
    seed: int
    farm_split: float = 0.66
    motor_split: float = 0.5

    def manifest_counts(self) -> dict:
        counts = {}
        for s in self.farm:
            n_train = int(np.floor(self.farm_split * len(s)))
            counts[f"farm/{s.name}"] = dict(samples=len(s), train=n_train, test=len(s) - n_train,
                                             anomalies=int(s.is_anomaly.sum()))
        for kind, recs in self.motor.items():
            for r in recs:
                n = len(r.x)
                n_train = int(np.floor(self.motor_split * n))
                counts[f"motor/{kind}/rpm{r.rpm}_{r.label_name}_{r.index:03d}"] = dict(
                    samples=n, train=n_train, test=n - n_train)
        return counts


DEVICES = (22, 25, 30, 32, 33)


def default_farm_specs(seed: int = 0, duration_days: float = 30.0, anomalies: AnomalySpec | None = None,
                       sensor_types=SENSOR_TYPES, devices=DEVICES, params_path=None) -> list[FarmSpec]:
    table = farm_defaults(params_path)
    specs = []
    for device in devices:
        drng = _sub_rng(seed, device, 99)
        for stype in sensor_types:
            row = dict(table[stype])
            row["base"] = row["base"] * (1.0 + 0.03 * drng.standard_normal())
            row["peak_hour"] = row["peak_hour"] + drng.uniform(-1.0, 1.0)
            specs.append(FarmSpec(stype, duration_days=duration_days, anomalies=anomalies or AnomalySpec(),
                                  seed=seed, device=device, **row))
    return specs


def default_motor_spec(kind: str, seed: int = 0, **overrides) -> MotorSpec:
    params = dict(sensor_kind=kind, seed=seed)
    if kind == MEMS:
        params["noise_sigma"] = 0.5
    params.update(overrides)
    return MotorSpec(**params)


def dataset_bundle(seed: int = 0, farm_days: float = 30.0, farm_anomalies: AnomalySpec | None = None,
                   motor_overrides: dict | None = None) -> Bundle:
    """Five devices x seven farm sensors plus a motor corpus for both sensor kinds."""
    if farm_anomalies is None:
        farm_anomalies = AnomalySpec(count=4, magnitude=0.5, kinds=("spike", "drop", "stuck"))
    farm = [gen_farm(s) for s in default_farm_specs(seed, farm_days, farm_anomalies)]
    overrides = motor_overrides or {}
    specs = {kind: default_motor_spec(kind, seed, **overrides.get(kind, {})) for kind in (PIEZO, MEMS)}
    motor = {kind: gen_motor(spec) for kind, spec in specs.items()}
    return Bundle(farm, motor, specs, seed)


def with_health_gap(spec: MotorSpec, gap: float) -> MotorSpec:
    """Rescale health amplitudes so consecutive classes differ by ``gap`` (relative)."""
    return replace(spec, health=tuple(spec.health[0] * (1.0 + gap) ** k for k in range(len(HEALTH_LABELS))))
