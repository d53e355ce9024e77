"""Multi-threshold binarization, refinement-input assembly, sliding-window
inference, and the end-to-end two-model cascade.

The cascade runs: normalize -> stage-1 probabilities -> binarize at every
threshold -> stack the masks behind a normalized grayscale copy of the input
-> stage-2 probabilities -> final mask at 0.5. Thresholding uses >=, so a
threshold of 1.0 keeps only certain pixels, and ascending thresholds give
nested masks by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .data import normalize, to_grayscale
from .errors import ConfigurationError
from .nn import Tensor, no_grad, sigmoid
from .unet import UNetModel, forward

FINAL_THRESHOLD = 0.5
GAUSS_WEIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class ThresholdSet:
    values: tuple[float, ...] = (0.01, 0.1, 0.6)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ConfigurationError("ThresholdSet: need at least one threshold")
        if any(not (0.0 < v < 1.0) for v in vals):
            raise ConfigurationError(f"ThresholdSet: values {vals} must lie in (0, 1)")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError(f"ThresholdSet: values {vals} must be strictly ascending")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class WindowSpec:
    window: int = 64
    overlap: float = 0.25
    blend: str = "constant"

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError("WindowSpec: window must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigurationError("WindowSpec: overlap must lie in [0, 1)")
        if self.blend not in ("constant", "gaussian"):
            raise ConfigurationError(f"WindowSpec: unknown blend {self.blend!r}")
        if self.stride < 1:
            raise ConfigurationError("WindowSpec: stride rounds to zero")

    @property
    def stride(self) -> int:
        return int(round(self.window * (1.0 - self.overlap)))


def binarize_multi(probs: np.ndarray, thresholds: ThresholdSet) -> np.ndarray:
    """(1,H,W) probabilities -> (T,H,W) binary stack, channel i = probs >= t_i."""
    probs = np.asarray(probs)
    if probs.ndim != 3 or probs.shape[0] != 1:
        raise ConfigurationError(f"binarize_multi: expected (1,H,W), got {probs.shape}")
    t = np.asarray(thresholds.values, dtype=probs.dtype).reshape(-1, 1, 1)
    return (probs >= t).astype(np.float64)


def assemble_model2_input(gray: np.ndarray, stack: np.ndarray) -> np.ndarray:
    """[normalized gray, mask@t_0, mask@t_1, ...] as one (1+T,H,W) array."""
    gray = np.asarray(gray)
    stack = np.asarray(stack)
    if gray.ndim != 3 or gray.shape[0] != 1:
        raise ConfigurationError(f"assemble_model2_input: gray must be (1,H,W), got {gray.shape}")
    if stack.ndim != 3:
        raise ConfigurationError(f"assemble_model2_input: stack must be (T,H,W), got {stack.shape}")
    if gray.shape[1:] != stack.shape[1:]:
        raise ConfigurationError(
            f"assemble_model2_input: gray {gray.shape[1:]} and stack {stack.shape[1:]} extents differ"
        )
    return np.concatenate([gray, stack], axis=0)


# -- sliding-window inference ------------------------------------------------


def _window_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] + window < extent:
        starts.append(extent - window)  # clamp the final window to the edge
    return starts


def _blend_weights(window: int, blend: str) -> np.ndarray:
    if blend == "constant":
        return np.ones((window, window), dtype=np.float64)
    c = (window - 1) / 2.0
    sigma = window / 8.0
    yy, xx = np.mgrid[0:window, 0:window]
    w = np.exp(-((yy - c) ** 2 + (xx - c) ** 2) / (2.0 * sigma * sigma))
    return np.maximum(w, GAUSS_WEIGHT_FLOOR)


def _as_window_fn(model):
    """Accept a UNetModel or any callable (C,h,w) -> (1,h,w)."""
    if isinstance(model, UNetModel):
        def fn(tile: np.ndarray) -> np.ndarray:
            with no_grad():
                out = sigmoid(forward(model, Tensor(tile[None].astype(np.float32))))
            return out.data[0].astype(np.float64)
        return fn
    if callable(model):
        return model
    raise ConfigurationError(f"sliding_window_infer: cannot run {type(model).__name__} as a model")


def sliding_window_infer(model, image: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Tile (C,H,W) into overlapping windows, run the model per window, and
    blend the per-window probabilities by weighted averaging. Windows are
    visited in fixed row-major order; the final row/column is clamped to the
    image edge, so no padding ever reaches the model."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ConfigurationError(f"sliding_window_infer: expected (C,H,W), got {image.shape}")
    c, h, w = image.shape
    if spec.window > h or spec.window > w:
        raise ConfigurationError(
            f"sliding_window_infer: window {spec.window} exceeds image extent {h}x{w}"
        )
    if isinstance(model, UNetModel):
        if model.config.in_channels != c:
            raise ConfigurationError(
                f"sliding_window_infer: image has {c} channels, model expects "
                f"{model.config.in_channels}"
            )
        if spec.window % model.config.spatial_factor:
            raise ConfigurationError(
                f"sliding_window_infer: window {spec.window} must be a multiple of "
                f"the model's spatial factor {model.config.spatial_factor}"
            )
    fn = _as_window_fn(model)
    weights = _blend_weights(spec.window, spec.blend)
    num = np.zeros((1, h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for y0 in _window_starts(h, spec.window, spec.stride):
        for x0 in _window_starts(w, spec.window, spec.stride):
            tile = image[:, y0:y0 + spec.window, x0:x0 + spec.window]
            probs = np.asarray(fn(tile), dtype=np.float64)
            if probs.shape != (1, spec.window, spec.window):
                raise ConfigurationError(
                    f"sliding_window_infer: model returned {probs.shape}, expected "
                    f"(1, {spec.window}, {spec.window})"
                )
            num[:, y0:y0 + spec.window, x0:x0 + spec.window] += weights * probs
            den[y0:y0 + spec.window, x0:x0 + spec.window] += weights
    return num / den


# -- the full cascade --------------------------------------------------------


@dataclass
class CascadeResult:
    probs1: np.ndarray      # (1,H,W) stage-1 probabilities
    stack: np.ndarray       # (T,H,W) threshold masks
    gray: np.ndarray        # (1,H,W) normalized grayscale input
    probs2: np.ndarray      # (1,H,W) refined probabilities
    final_mask: np.ndarray  # (1,H,W) binary


def check_cascade_channels(model1, model2, thresholds: ThresholdSet) -> None:
    if isinstance(model1, UNetModel) and model1.config.in_channels != 3:
        raise ConfigurationError(
            f"cascade: stage-1 model expects {model1.config.in_channels} input channels, "
            "the RGB stage needs 3"
        )
    need = 1 + len(thresholds)
    if isinstance(model2, UNetModel) and model2.config.in_channels != need:
        raise ConfigurationError(
            f"cascade: {len(thresholds)} thresholds imply {need} stage-2 input channels, "
            f"but the model expects {model2.config.in_channels}"
        )


def run_cascade(model1, model2, image: np.ndarray, thresholds: ThresholdSet,
                spec: WindowSpec) -> CascadeResult:
    """Full two-stage pass over one (3,H,W) image in [0,1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"run_cascade: expected (3,H,W) image, got {image.shape}")
    check_cascade_channels(model1, model2, thresholds)
    probs1 = sliding_window_infer(model1, normalize(image), spec)
    stack = binarize_multi(probs1, thresholds)
    gray = normalize(to_grayscale(image))
    probs2 = sliding_window_infer(model2, assemble_model2_input(gray, stack), spec)
    final = (probs2 >= FINAL_THRESHOLD).astype(np.float64)
    return CascadeResult(probs1=probs1, stack=stack, gray=gray, probs2=probs2,
                         final_mask=final)


# -- PNG rendering of results ------------------------------------------------


def heatmap_u8(probs: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(probs)[0] * 255.0), 0, 255).astype(np.uint8)


def mask_u8(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask)[0] >= 0.5, 255, 0).astype(np.uint8)


def _boundary(mask2d: np.ndarray) -> np.ndarray:
    m = mask2d >= 0.5
    interior = m.copy()
    interior[1:] &= m[:-1]
    interior[:-1] &= m[1:]
    interior[:, 1:] &= m[:, :-1]
    interior[:, :-1] &= m[:, 1:]
    return m & ~interior


def overlay_u8(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Input rendered 8-bit with the mask boundary painted green."""
    rgb = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    rgb = rgb.copy()
    b = _boundary(np.asarray(mask)[0])
    rgb[b] = (0, 255, 0)
    return rgb


def save_png(path, arr8: np.ndarray, text: dict | None = None) -> None:
    """Write an 8-bit grayscale (H,W) or RGB (H,W,3) PNG with optional
    tEXt metadata (used to stamp artifacts with the run's config hash)."""
    info = PngInfo()
    for k, v in (text or {}).items():
        info.add_text(str(k), str(v))
    mode = "L" if arr8.ndim == 2 else "RGB"
    Image.fromarray(arr8, mode=mode).save(path, format="PNG", pnginfo=info)


def read_png_text(path) -> dict:
    return dict(Image.open(path).text)
