"""Run configuration: defaults, flat dotted-key config files, flag merging.

The file format is one `key = value` pair per line with `#` comments; keys
are dotted paths (`optimize.lr`, `window.t0`, `target.Smile`).  Resolution
order is built-in defaults, then the config file (path from ``--config`` or
the LATENTDEID_CONFIG environment variable), then command-line flags.  The
fully resolved mapping is echoed into the output directory and reloads to
an identical configuration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigError
from .losses import resolve_attribute

ENV_CONFIG_PATH = "LATENTDEID_CONFIG"

_TARGET_PREFIX = "target."


def _parse_scalar(raw: str):
    text = raw.strip()
    lowered = text.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines into a flat mapping with typed values."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno} is not `key = value`: {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {lineno} has an empty key")
        out[key] = _parse_scalar(raw)
    return out


def dump_config_text(mapping: dict) -> str:
    """Serialize a flat mapping; parse_config_text inverts this exactly."""
    lines = [f"{k} = {_format_scalar(v)}" for k, v in sorted(mapping.items())]
    return "\n".join(lines) + "\n"


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    return parse_config_text(text)


@dataclass
class RunConfig:
    """Resolved run settings shared by all commands."""

    mode: str = "linear"
    lr: float = 0.001
    strength: float = 1000.0
    n_opt: int = 50
    init_norm: float = 0.1
    seed: int = 1006
    t0: int = 600
    t_edit: int = 400
    t_boost: int = 200
    n_denoise: int = 16
    total_steps: int = 1000
    weight_identity: float = 1.0
    weight_attribute: float = 1.0
    weight_mask: float = 0.5
    bernoulli_attr: bool = False
    use_checkpoint: bool = False
    providers: str = "toy"
    workers: int = 1
    record_latents: bool = False
    attribute_targets: dict = field(default_factory=dict)


#: dotted config key -> RunConfig field
KEY_TO_FIELD = {
    "optimize.mode": "mode",
    "optimize.lr": "lr",
    "optimize.lambda": "strength",
    "optimize.n_opt": "n_opt",
    "optimize.init_norm": "init_norm",
    "optimize.seed": "seed",
    "optimize.checkpoint": "use_checkpoint",
    "window.t0": "t0",
    "window.t_edit": "t_edit",
    "window.t_boost": "t_boost",
    "window.n_denoise": "n_denoise",
    "schedule.total_steps": "total_steps",
    "weights.identity": "weight_identity",
    "weights.attribute": "weight_attribute",
    "weights.mask": "weight_mask",
    "loss.bernoulli": "bernoulli_attr",
    "providers.name": "providers",
    "run.workers": "workers",
    "run.record_latents": "record_latents",
}
FIELD_TO_KEY = {v: k for k, v in KEY_TO_FIELD.items()}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(field_name: str, value):
    """Nudge parsed scalars to the field's declared type (int→float etc.)."""
    want = _FIELD_TYPES[field_name]
    if want == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{FIELD_TO_KEY[field_name]} expects true/false, got {value!r}")
    if want == "int" and not isinstance(value, int):
        raise ConfigError(f"{FIELD_TO_KEY[field_name]} expects an integer, got {value!r}")
    return value


def config_from_mapping(mapping: dict) -> RunConfig:
    """Build a RunConfig from a flat dotted-key mapping."""
    kwargs: dict = {}
    targets: dict = {}
    for key, value in mapping.items():
        if key.startswith(_TARGET_PREFIX):
            name = resolve_attribute(key[len(_TARGET_PREFIX):])
            targets[name] = float(value)
        elif key in KEY_TO_FIELD:
            f = KEY_TO_FIELD[key]
            kwargs[f] = _coerce(f, value)
        else:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: "
                f"{', '.join(sorted(KEY_TO_FIELD))}, target.<AttributeName>"
            )
    return RunConfig(attribute_targets=targets, **kwargs)


def config_to_mapping(config: RunConfig) -> dict:
    """Flatten a RunConfig back to the dotted-key mapping it echoes."""
    out = {
        key: getattr(config, field_name) for key, field_name in KEY_TO_FIELD.items()
    }
    for name, prob in sorted(config.attribute_targets.items()):
        out[_TARGET_PREFIX + name] = float(prob)
    return out


def resolve_config(
    file_path: str | Path | None = None,
    flag_overrides: dict | None = None,
) -> RunConfig:
    """defaults <- config file <- flags; flags use RunConfig field names."""
    mapping = config_to_mapping(RunConfig())
    if file_path is None:
        env_path = os.environ.get(ENV_CONFIG_PATH)
        if env_path:
            file_path = env_path
    if file_path is not None:
        mapping.update(load_config_file(file_path))
    config = config_from_mapping(mapping)
    for field_name, value in (flag_overrides or {}).items():
        if value is None:
            continue
        if field_name == "attribute_targets":
            merged = dict(config.attribute_targets)
            merged.update(
                {resolve_attribute(k): float(v) for k, v in value.items()}
            )
            config.attribute_targets = merged
        elif field_name in FIELD_TO_KEY:
            setattr(config, field_name, _coerce(field_name, value))
        else:
            raise ConfigError(f"unknown configuration field {field_name!r}")
    return config
