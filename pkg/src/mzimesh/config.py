"""Strict INI run configuration.

Every key has a type and a default; unknown sections or keys are errors.
Values resolve in order: defaults, config file, command-line flags.
"""

from __future__ import annotations

import configparser
import os

OUTPUT_ENV = "MZIMESH_OUTPUT_DIR"
DEFAULT_OUTPUT = "mzimesh-out"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s is None or str(s).strip().lower() in ("", "none") else float(s)


def _opt_str(s):
    return None if s is None or str(s).strip().lower() in ("", "none") else str(s)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {"seed": (int, 0), "output_dir": (_opt_str, None)},
    "mesh": {"kind": (str, "bokun"), "n": (int, 8), "crosstalk": (float, 0.0)},
    "calibration": {
        "averaging": (_bool, True),
        "residual_db": (_opt_float, None),
        "span_v": (float, 4.0),
        "v_pi": (float, 2.0),
        "resolution": (float, 0.01),
    },
    "training": {
        "dataset": (str, "gaussian"),
        "layers": (int, 1),
        "epochs": (int, 30),
        "batch_size": (int, 32),
        "learning_rate": (float, 0.02),
        "activation": (str, "modrelu"),
        "modrelu_b": (float, 0.1),
        "loss_fn": (str, "mean-square-error"),
        "per_class": (int, 100),
        "validation_per_class": (int, 20),
        "separation": (float, 4.0),
        "spread": (float, 1.0),
        "n_features": (int, 10),
        "train_images": (_opt_str, None),
        "train_labels": (_opt_str, None),
        "test_images": (_opt_str, None),
        "test_labels": (_opt_str, None),
        "train_limit": (int, 0),
    },
    "sweep": {
        "model": (_opt_str, None),
        "mode": (str, "sigma-loss"),
        "axis1_start": (float, 0.0),
        "axis1_stop": (float, 0.5),
        "axis1_steps": (int, 21),
        "axis2_start": (float, 0.0),
        "axis2_stop": (float, 1.0),
        "axis2_steps": (int, 21),
        "trials": (int, 20),
        "samples": (int, 200),
        "workers": (int, 1),
        "threshold": (float, 0.75),
    },
    "energy": {
        "n": (int, 10),
        "p_pi": (float, 0.020),
        "vr": (float, 1e10),
        "transit_time": (float, 2.2e-6),
        "in_situ_iterations": (int, 200),
        "ex_situ_iterations": (int, 10),
        "f_w_max": (float, 2e3),
        "f_w_steps": (int, 21),
    },
    "programming": {
        "method": (str, "ex-situ"),
        "iterations": (int, 10),
        "max_iterations": (int, 200),
        "step": (float, 0.05),
        "tol": (float, 1e-3),
        "target": (_opt_str, None),
        "mzi": (int, 0),
    },
}


class RunConfig:
    """Resolved configuration: ``cfg["section"]["key"]`` gives a typed value."""

    def __init__(self, values: dict[str, dict[str, object]], source: str | None = None):
        self.values = values
        self.source = source

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def output_dir(self) -> str:
        return self.values["run"]["output_dir"] or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT

    def to_ini(self) -> str:
        lines = []
        if self.source:
            lines.append(f"; resolved from {self.source} with command-line overrides")
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                v = self.values[section][key]
                if section == "run" and key == "output_dir":
                    v = self.output_dir
                lines.append(f"{key} = {'none' if v is None else v}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())


def _parse(section: str, key: str, raw) -> object:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {', '.join(SCHEMA[section])}")
    parser = SCHEMA[section][key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def load_config(path=None, overrides: dict[tuple[str, str], object] | None = None) -> RunConfig:
    """Defaults, then the INI file at ``path`` (if any), then ``overrides``."""
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in cp.sections():
            for key, raw in cp.items(section):
                values.setdefault(section, {})[key] = _parse(section, key, raw)
    for (section, key), raw in (overrides or {}).items():
        if raw is not None:
            values[section][key] = _parse(section, key, raw)
    return RunConfig(values, None if path is None else str(path))
