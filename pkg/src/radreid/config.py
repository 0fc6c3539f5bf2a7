"""Run configuration: INI-style ``key = value`` files with free-form sections.

Section names only group keys; every key is global and must be one of
``KEYS``. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .trainer import TrainConfig

PT_MODES = ("features", "pe", "sia")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)

    # paths
    data_dir: str = ""
    run_dir: str = ""
    checkpoint: str = ""

    # PT generation
    pt_mode: str = "features"
    pt_jitter: float = 1.0
    conf_threshold: float = 0.2
    aug_flips: bool = False
    aug_jitter: float = 0.0

    # evaluation
    camera_filter: bool = True
    export_projection: bool = True

    # synthetic data
    synth_identities: int = 20
    synth_min_samples: int = 5
    synth_max_samples: int = 15
    synth_dim: int = 32
    synth_spread: float = 1.0
    synth_separation: float = 10.0
    synth_cameras: int = 2
    synth_camera_bias: float = 0.0
    synth_figures: bool = False
    synth_height: int = 128
    synth_width: int = 64

    # ablation sweep
    ablate_param: str = "gamma"
    ablate_values: str = "0.1,0.5,1.0"

    def __post_init__(self):
        if self.pt_mode not in PT_MODES:
            raise ConfigError(f"pt_mode must be one of {PT_MODES}, got {self.pt_mode!r}")

    @property
    def seed(self) -> int:
        return self.train.seed


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "train"}
KEYS = sorted(set(_TRAIN_FIELDS) | set(_RUN_FIELDS))

_SECTION_OF = {name: "train" for name in _TRAIN_FIELDS}
for _name in _RUN_FIELDS:
    _SECTION_OF[_name] = _name.split("_")[0] if _name.split("_")[0] in ("synth", "ablate", "pt") else "run"


def _coerce(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _field_type(f):
    t = f.type
    return t if isinstance(t, str) else t.__name__


def resolve(values: dict) -> RunConfig:
    """Build a RunConfig from raw string values (unknown keys are errors)."""
    unknown = sorted(set(values) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    train_kw = {k: _coerce(k, v, _field_type(_TRAIN_FIELDS[k])) for k, v in values.items() if k in _TRAIN_FIELDS}
    run_kw = {k: _coerce(k, v, _field_type(_RUN_FIELDS[k])) for k, v in values.items() if k in _RUN_FIELDS}
    try:
        return RunConfig(train=TrainConfig(**train_kw), **run_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    body = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith(("#", ";"))]
    if body and not body[0].startswith("["):
        text = "[run]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in values:
                raise ConfigError(f"key {key!r} set in more than one section")
            values[key] = value
    return values


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_text(p.read_text()))
    values.update(parse_overrides(overrides))
    return resolve(values)


def as_flat_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg.train)
    out.update({k: getattr(cfg, k) for k in _RUN_FIELDS})
    return out


def train_echo(cfg: RunConfig) -> dict:
    """The training-relevant keys only (no paths), for checkpoint headers."""
    return dataclasses.asdict(cfg.train)


def dump_config(cfg: RunConfig, extra: dict | None = None) -> str:
    """Render the resolved config back to the file format, sections and keys sorted."""
    flat = as_flat_dict(cfg)
    sections: dict = {}
    for key in sorted(flat):
        sections.setdefault(_SECTION_OF[key], {})[key] = flat[key]
    buf = io.StringIO()
    if extra:
        buf.write("".join(f"# {k}: {v}\n" for k, v in extra.items()))
    for name in sorted(sections):
        buf.write(f"[{name}]\n")
        for key, value in sections[name].items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()
