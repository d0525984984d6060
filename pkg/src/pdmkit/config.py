"""Run configuration: sectioned key-value text, validated against a fixed schema."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import RejectedInputError
from .simulator import ANOMALY_KINDS, DEVICES, PAPER_RPMS, SENSOR_TYPES


class ConfigError(RejectedInputError):
    """Unknown key, unknown section or a value that fails validation."""


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(" ", "").split(",") if v)


def _names(raw: str) -> tuple:
    return tuple(v.strip() for v in raw.split(",") if v.strip())


def _opt_int(raw: str):
    return int(raw) if raw.strip() else None


def _opt_str(raw: str):
    return raw.strip() or None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
    },
    "generate": {
        "farm": (_bool, True),
        "motor": (_bool, True),
        "farm_days": (float, 30.0),
        "devices": (_ints, DEVICES),
        "sensor_types": (_names, SENSOR_TYPES),
        "farm_params": (_opt_str, None),
        "anomaly_count": (int, 4),
        "anomaly_magnitude": (float, 0.5),
        "anomaly_kinds": (_names, ANOMALY_KINDS),
        "anomaly_region": (_floats, (0.0, 1.0)),
        "rpms": (_ints, PAPER_RPMS),
        "health": (_floats, (1.0, 1.5, 2.2)),
        "piezo_recordings": (int, 10),
        "piezo_seconds": (float, 1.0),
        "piezo_noise": (float, 0.3),
        "mems_recordings": (int, 10),
        "mems_seconds": (float, 10.0),
        "mems_noise": (float, 0.5),
        "raw_motor": (_bool, True),
    },
    "detect": {
        "forecaster": (str, "arima"),
        "split_fraction": (float, 0.66),
        "threshold": (float, 0.2),
        "denominator_floor": (float, 1e-6),
        "two_sided": (_bool, True),
        "p": (int, 10),
        "d": (int, 1),
        "auto_lag": (_bool, False),
        "rolling": (_bool, True),
        "window_len": (int, 10),
        "hidden_dim": (int, 64),
        "epochs": (int, 5),
        "batch_size": (int, 32),
        "learning_rate": (float, 0.05),
        "figures": (_bool, True),
    },
    "classify": {
        "preset": (str, "baseline"),
        "axes": (_names, ("X", "Y", "Z")),
        "window_len": (_opt_int, None),
        "rpms": (_ints, ()),
        "binary": (_bool, False),
        "augment": (_bool, False),
        "interpolation_count": (_opt_int, None),
        "grid": (_bool, False),
        "augmented_row": (_bool, True),
        "train_fraction": (float, 0.7),
        "transfer_from": (_opt_str, None),
        "fine_tune_epochs": (int, 0),
        "freeze_hidden": (_bool, False),
        "figures": (_bool, True),
    },
}

CHOICES = {
    ("detect", "forecaster"): ("arima", "lstm"),
    ("classify", "preset"): ("baseline", "neurons-80", "neurons-100", "layers-3", "epochs-100", "batch-100"),
}


def _validate(section: str, key: str, value):
    if (section, key) in CHOICES and value not in CHOICES[(section, key)]:
        raise ConfigError(f"[{section}] {key} = {value!r}: expected one of {', '.join(CHOICES[(section, key)])}")
    if key == "sensor_types":
        bad = [v for v in value if v not in SENSOR_TYPES]
        if bad:
            raise ConfigError(f"[{section}] sensor_types: unknown sensor type {bad[0]!r}")
    if key == "anomaly_kinds":
        bad = [v for v in value if v not in ANOMALY_KINDS]
        if bad:
            raise ConfigError(f"[{section}] anomaly_kinds: unknown anomaly kind {bad[0]!r}")
    if key == "axes":
        bad = [v for v in value if v not in ("X", "Y", "Z")]
        if bad or not value:
            raise ConfigError(f"[{section}] axes: expected a subset of X,Y,Z, got {','.join(value)!r}")


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def resolved_text(self) -> str:
        """The fully resolved configuration, written next to every output."""
        parser = configparser.ConfigParser()
        for section in ("run", self.command):
            parser.add_section(section)
            for key in SCHEMA[section]:
                parser.set(section, key, _fmt(self.values[key]))
        out = io.StringIO()
        parser.write(out)
        return out.getvalue().rstrip("\n") + "\n"


def load_config(command: str, path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then command-line overrides.

    One file may carry sections for several commands; every section is
    checked, but only ``run`` and the command's own section are applied. An
    unknown section or key is an error that names it.
    """
    if command not in SCHEMA or command == "run":
        raise ConfigError(f"unknown command {command!r}")
    allowed = ("run", command)
    values = {key: default for s in allowed for key, (_, default) in SCHEMA[s].items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                conv = SCHEMA[section][key][0]
                try:
                    value = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}: [{section}] {key}: {exc}") from exc
                # other commands' sections are checked but not applied
                if section in allowed:
                    values[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in values:
            raise ConfigError(f"unknown option {key!r}")
        values[key] = value
    for section in allowed:
        for key in SCHEMA[section]:
            _validate(section, key, values[key])
    return RunConfig(command, values)

