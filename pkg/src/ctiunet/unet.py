"""Configurable encoder-decoder U-Net on the autodiff substrate.

One builder instantiates both networks of the cascade; they differ only in
``in_channels`` (3 for the RGB stage, 1 + number of thresholds for the
refinement stage). Each encoder level is two conv+norm+relu blocks, levels
are joined by 2x2 max pooling going down and nearest-upsample+conv going
up, with skip concatenation at matching levels and a final 1x1 convolution
producing single-channel logits.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .nn import (
    Parameter,
    Tensor,
    concat_channels,
    conv2d,
    instance_norm,
    maxpool2,
    relu,
    upsample_nearest2,
)

MODEL_MAGIC = b"CTIU"
MODEL_FORMAT_VERSION = 1
NORM_EPS = 1e-5


class ModelIOError(Exception):
    """Base class for model file problems."""


class VersionMismatchError(ModelIOError):
    pass


class TruncatedModelError(ModelIOError):
    pass


class ModelConsistencyError(ModelIOError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 1
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("UNetConfig: channel counts must be >= 1")
        if not self.encoder_channels or any(c < 1 for c in self.encoder_channels):
            raise ConfigurationError("UNetConfig: encoder_channels must be non-empty and positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError("UNetConfig: kernel_size must be odd and >= 1")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def spatial_factor(self) -> int:
        """Input extents must be multiples of this (2^(depth-1))."""
        return 2 ** (self.depth - 1)


def _plan(config: UNetConfig):
    """Ordered layer list: ('conv', name, cin, cout, k) / ('norm', name, c)."""
    enc = config.encoder_channels
    k = config.kernel_size
    layers = []

    def double_conv(prefix, cin, cout):
        layers.append(("conv", f"{prefix}.conv1", cin, cout, k))
        layers.append(("norm", f"{prefix}.norm1", cout))
        layers.append(("conv", f"{prefix}.conv2", cout, cout, k))
        layers.append(("norm", f"{prefix}.norm2", cout))

    double_conv("enc0", config.in_channels, enc[0])
    for i in range(1, len(enc)):
        double_conv(f"enc{i}", enc[i - 1], enc[i])
    for i in range(len(enc) - 2, -1, -1):
        layers.append(("conv", f"up{i}.conv", enc[i + 1], enc[i], k))
        layers.append(("norm", f"up{i}.norm", enc[i]))
        double_conv(f"dec{i}", 2 * enc[i], enc[i])
    layers.append(("conv", "head", enc[0], config.out_channels, 1))
    return layers


def parameter_spec(config: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every parameter, in build order."""
    spec = []
    for entry in _plan(config):
        if entry[0] == "conv":
            _, name, cin, cout, k = entry
            spec.append((f"{name}.weight", (cout, cin, k, k)))
            spec.append((f"{name}.bias", (cout,)))
        else:
            _, name, c = entry
            spec.append((f"{name}.scale", (c,)))
            spec.append((f"{name}.shift", (c,)))
    return spec


@dataclass
class UNetModel:
    config: UNetConfig
    params: dict[str, Parameter] = field(repr=False)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def build_unet(config: UNetConfig, seed: int, dtype=np.float32) -> UNetModel:
    """Realize a config into named parameters.

    Conv weights are Kaiming-uniform with fan-in scaling, U(-b, b) with
    b = sqrt(6 / fan_in); biases zero; norm affines identity. Draws happen
    in build order, so the same (config, seed) gives bit-identical models.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    for entry in _plan(config):
        if entry[0] == "conv":
            _, name, cin, cout, k = entry
            bound = np.sqrt(6.0 / (cin * k * k))
            w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
            params[f"{name}.weight"] = Parameter(w, f"{name}.weight")
            params[f"{name}.bias"] = Parameter(np.zeros(cout, dtype=dtype), f"{name}.bias")
        else:
            _, name, c = entry
            params[f"{name}.scale"] = Parameter(np.ones(c, dtype=dtype), f"{name}.scale")
            params[f"{name}.shift"] = Parameter(np.zeros(c, dtype=dtype), f"{name}.shift")
    return UNetModel(config=config, params=params)


def _conv_norm_relu(model: UNetModel, prefix: str, x: Tensor) -> Tensor:
    p = model.params
    h = conv2d(x, p[f"{prefix}.conv.weight"], p[f"{prefix}.conv.bias"])
    h = instance_norm(h, p[f"{prefix}.norm.scale"], p[f"{prefix}.norm.shift"], eps=NORM_EPS)
    return relu(h)


def _double_conv(model: UNetModel, prefix: str, x: Tensor) -> Tensor:
    p = model.params
    h = conv2d(x, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"])
    h = relu(instance_norm(h, p[f"{prefix}.norm1.scale"], p[f"{prefix}.norm1.shift"], eps=NORM_EPS))
    h = conv2d(h, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"])
    return relu(instance_norm(h, p[f"{prefix}.norm2.scale"], p[f"{prefix}.norm2.shift"], eps=NORM_EPS))


def forward(model: UNetModel, batch: Tensor) -> Tensor:
    """Full encoder-decoder pass; returns logits of the input's spatial shape."""
    cfg = model.config
    if batch.data.ndim != 4:
        raise ConfigurationError(f"forward: expected rank-4 input, got rank {batch.data.ndim}")
    b, c, h, w = batch.data.shape
    if c != cfg.in_channels:
        raise ConfigurationError(f"forward: input has {c} channels, model expects {cfg.in_channels}")
    f = cfg.spatial_factor
    if h % f or w % f:
        raise ConfigurationError(
            f"forward: spatial extents {h}x{w} must be multiples of {f} for depth {cfg.depth}"
        )

    depth = cfg.depth
    skips = []
    x = batch
    for i in range(depth):
        if i > 0:
            x = maxpool2(x)
        x = _double_conv(model, f"enc{i}", x)
        if i < depth - 1:
            skips.append(x)
    for i in range(depth - 2, -1, -1):
        x = upsample_nearest2(x)
        x = _conv_norm_relu(model, f"up{i}", x)
        x = concat_channels(x, skips[i])
        x = _double_conv(model, f"dec{i}", x)
    p = model.params
    return conv2d(x, p["head.weight"], p["head.bias"])


# -- model files -------------------------------------------------------------

_CONFIG_KEYS = ("encoder_channels", "in_channels", "kernel_size", "out_channels")


def _config_to_lines(config: UNetConfig, extra: dict[str, str] | None = None) -> str:
    vals = {
        "in_channels": str(config.in_channels),
        "out_channels": str(config.out_channels),
        "encoder_channels": ",".join(str(c) for c in config.encoder_channels),
        "kernel_size": str(config.kernel_size),
    }
    if extra:
        vals.update({str(k): str(v) for k, v in extra.items()})
    return "".join(f"{k}={vals[k]}\n" for k in sorted(vals))


def _config_from_lines(text: str) -> tuple[UNetConfig, dict[str, str]]:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ModelConsistencyError(f"malformed config line {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    missing = [k for k in _CONFIG_KEYS if k not in kv]
    if missing:
        raise ModelConsistencyError(f"config block is missing keys {missing}")
    try:
        config = UNetConfig(
            in_channels=int(kv.pop("in_channels")),
            out_channels=int(kv.pop("out_channels")),
            encoder_channels=tuple(int(c) for c in kv.pop("encoder_channels").split(",")),
            kernel_size=int(kv.pop("kernel_size")),
        )
    except (ValueError, ConfigurationError) as e:
        raise ModelConsistencyError(f"invalid config block: {e}") from e
    return config, kv


def save_model(model: UNetModel, path, extra: dict[str, str] | None = None) -> None:
    """Write the model file: magic, format version, length-prefixed config
    text (key=value lines, sorted keys), then parameters in name-sorted order
    as (name, shape, little-endian float32 values)."""
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", MODEL_FORMAT_VERSION))
    cfg = _config_to_lines(model.config, extra).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    names = sorted(model.params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedModelError(
                f"file ends at byte {len(self.data)} but {self.off + n} were needed"
            )
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path) -> UNetModel:
    """Read a model file back; raises distinct errors for a bad magic/version,
    truncation, and config/parameter inconsistency. Never returns a partial
    model."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MODEL_MAGIC:
        raise ModelIOError("not a model file (bad magic)")
    version = r.u32()
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"model format version {version} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    config, meta = _config_from_lines(r.take(r.u32()).decode("utf-8"))
    expected = sorted(parameter_spec(config))
    count = r.u32()
    if count != len(expected):
        raise ModelConsistencyError(
            f"file declares {count} parameters but the config implies {len(expected)}"
        )
    params: dict[str, Parameter] = {}
    for name_exp, shape_exp in expected:
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 4:
            raise ModelConsistencyError(f"parameter {name!r} has rank {rank} > 4")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        if name != name_exp or tuple(shape) != tuple(shape_exp):
            raise ModelConsistencyError(
                f"parameter {name!r} {tuple(shape)} does not match expected "
                f"{name_exp!r} {tuple(shape_exp)}"
            )
        params[name] = Parameter(arr, name)
    if r.off != len(r.data):
        raise ModelConsistencyError(f"{len(r.data) - r.off} trailing bytes after last parameter")
    model = UNetModel(config=config, params={})
    # restore build order so save/load round-trips are stable
    model.params = {name: params[name] for name, _ in parameter_spec(config)}
    model.meta = meta
    return model


def load_model_meta(path) -> dict[str, str]:
    """Read only the key=value metadata lines of a model file."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MODEL_MAGIC:
        raise ModelIOError("not a model file (bad magic)")
    version = r.u32()
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"model format version {version} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    _, meta = _config_from_lines(r.take(r.u32()).decode("utf-8"))
    return meta
