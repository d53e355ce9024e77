"""Run configuration: defaults, file parsing, overrides, and hashing.

Config files are UTF-8 text, one ``key = value`` per line. ``#`` starts a
comment, blank lines are skipped, and ``[section]`` headers are allowed as
visual grouping but carry no meaning. Values are parsed as bools
(true/false), ints, floats, comma-separated tuples of numbers, or strings
(optionally quoted). Unknown keys are rejected so typos fail loudly.

The config hash is the sha256 of the canonical serialization (sorted
``key=value`` lines); it is stamped into every artifact a run emits so that
checkpoints, masks, and reports can be traced to the exact configuration
that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .errors import ConfigurationError

# Picked by a scan over candidate seeds; see the desk-profile demo script.
DESK_SEED = 5


@dataclass(frozen=True)
class RunConfig:
    # data: a directory tree, or the synthetic generator when root is empty
    data_root: str = ""
    synthetic_count: int = 64
    synthetic_size: int = 64
    synthetic_difficulty: float = 0.35
    # models
    model1_channels: tuple[int, ...] = (16, 32, 64, 128)
    model2_channels: tuple[int, ...] = (16, 32, 64, 128)
    thresholds: tuple[float, ...] = (0.01, 0.1, 0.6)
    # losses
    stage1_alpha: float = 0.7
    stage1_beta: float = 0.3
    stage2_alpha: float = 0.5
    stage2_beta: float = 0.5
    ce_weight: float = 0.5
    # optimization
    lr: float = 1e-4
    batch: int = 4
    epochs: int = 100
    train_fraction: float = 0.8
    augment: bool = True
    # inference
    window: int = 512
    overlap: float = 0.25
    blend: str = "constant"
    stage2_full_image: bool = True
    # run identity
    master_seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        for name in ("model1_channels", "model2_channels", "thresholds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.synthetic_count < 1 or self.synthetic_size < 1:
            raise ConfigurationError("config: synthetic count and size must be >= 1")
        if not self.model1_channels or not self.model2_channels:
            raise ConfigurationError("config: encoder channel lists must be non-empty")
        if self.lr <= 0:
            raise ConfigurationError("config: lr must be positive")
        if self.batch < 1:
            raise ConfigurationError("config: batch must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("config: epochs must be >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigurationError("config: train_fraction must lie in (0, 1]")
        if self.blend not in ("constant", "gaussian"):
            raise ConfigurationError(f"config: unknown blend {self.blend!r}")

    @property
    def model2_in_channels(self) -> int:
        return 1 + len(self.thresholds)


def desk_profile(master_seed: int = DESK_SEED) -> RunConfig:
    """A configuration small enough to train both stages on a CPU in
    minutes: 16 synthetic 64x64 samples, narrow models, full-image
    inference (one 64px window), augmentation off."""
    return RunConfig(
        synthetic_count=16,
        synthetic_size=64,
        synthetic_difficulty=0.15,
        model1_channels=(8, 16, 32),
        model2_channels=(8, 16, 32),
        epochs=60,
        train_fraction=0.875,
        augment=False,
        window=64,
        master_seed=master_seed,
    )


# -- serialization and hashing -----------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(config: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}"
             for f in sorted(dataclasses.fields(RunConfig), key=lambda f: f.name)]
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(to_text(config).encode("utf-8")).hexdigest()


# -- parsing -----------------------------------------------------------------


def _parse_scalar(token: str):
    token = token.strip()
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "\"'":
        return token[1:-1]
    low = token.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith("(") and raw.endswith(")"):
        raw = raw[1:-1]
        return tuple(_parse_scalar(t) for t in raw.split(",") if t.strip())
    if "," in raw:
        return tuple(_parse_scalar(t) for t in raw.split(",") if t.strip())
    return _parse_scalar(raw)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"config line {lineno}: empty key")
        out[key] = _parse_value(raw)
    return out


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    typ = _FIELD_TYPES[name]
    if typ == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigurationError(f"config: {name} expects true/false, got {value!r}")
    if typ == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"config: {name} expects an integer, got {value!r}")
        return value
    if typ == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config: {name} expects a number, got {value!r}")
        return float(value)
    if typ == "str":
        return str(value)
    # tuple fields: accept a scalar as a 1-tuple
    vals = value if isinstance(value, tuple) else (value,)
    if "int" in typ:
        return tuple(int(v) for v in vals)
    return tuple(float(v) for v in vals)


def config_from_mapping(mapping: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    unknown = sorted(set(mapping) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigurationError(f"config: unknown keys {unknown}")
    updates = {k: _coerce(k, v) for k, v in mapping.items()}
    return dataclasses.replace(base, **updates)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()), base=base)


def apply_overrides(config: RunConfig, seed: int | None = None,
                    epochs: int | None = None, out: str | None = None) -> RunConfig:
    updates = {}
    if seed is not None:
        updates["master_seed"] = seed
    if epochs is not None:
        updates["epochs"] = epochs
    if out is not None:
        updates["out_dir"] = out
    return dataclasses.replace(config, **updates) if updates else config
