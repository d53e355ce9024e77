"""Stochastic augmentation pipeline with synchronized image/mask geometry.

Ten transforms in a fixed order: five geometric (applied identically to image
and mask through one inverse-map resampler, bilinear for the image and
nearest-neighbor for the mask) and five intensity-only. Each fires
independently with its own probability from a per-sample RNG stream, so a
(master seed, sample index, epoch) triple fully determines the output.

Intensity transforms assume [0,1] inputs; the pipeline is meant to run before
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

GEOMETRIC_KINDS = ("rotate90", "zoom", "axis_flip", "affine", "grid_distortion")
INTENSITY_KINDS = ("gaussian_noise", "adjust_contrast", "shift_intensity",
                   "histogram_shift", "gaussian_smooth")


@dataclass(frozen=True)
class TransformEntry:
    kind: str
    p: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GEOMETRIC_KINDS + INTENSITY_KINDS:
            raise ConfigurationError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"transform probability {self.p} outside [0, 1]")


@dataclass(frozen=True)
class AugmentSpec:
    transforms: tuple[TransformEntry, ...]
    master_seed: int = 0


def default_augment_spec(master_seed: int = 0) -> AugmentSpec:
    """The shipped pipeline: every transform with its default parameters."""
    t = (
        TransformEntry("rotate90", 0.5),
        TransformEntry("zoom", 0.5, {"low": 0.9, "high": 1.1}),
        TransformEntry("axis_flip", 0.5),
        TransformEntry("affine", 0.5, {"rotate": 0.1, "scale": 0.1, "shear": 0.1}),
        TransformEntry("grid_distortion", 0.5, {"limit": 0.03, "cells": 5}),
        TransformEntry("gaussian_noise", 0.2, {"mean": 0.0, "std": 0.1}),
        TransformEntry("adjust_contrast", 0.5, {"low": 0.7, "high": 1.5}),
        TransformEntry("shift_intensity", 0.5, {"low": 0.1, "high": 0.2}),
        TransformEntry("histogram_shift", 0.5, {"points": 3, "magnitude": 0.1}),
        TransformEntry("gaussian_smooth", 0.5, {"low": 0.5, "high": 1.0}),
    )
    return AugmentSpec(t, master_seed)


def identity_augment_spec(master_seed: int = 0) -> AugmentSpec:
    """All probabilities zero; the pipeline becomes the exact identity."""
    base = default_augment_spec(master_seed)
    return AugmentSpec(tuple(TransformEntry(e.kind, 0.0, e.params) for e in base.transforms),
                       master_seed)


@dataclass
class AugmentedPair:
    image: np.ndarray   # (C,H,W)
    mask: np.ndarray    # (1,H,W) binary
    log: list           # (kind, drawn-parameter dict) per applied transform


# -- resampling core ---------------------------------------------------------


def _reflect_index(idx, n):
    # mirror without edge repetition: for n=4, -1 -> 1 and 4 -> 2
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _resample(planes: np.ndarray, sy: np.ndarray, sx: np.ndarray, mode: str) -> np.ndarray:
    """Sample (C,H,W) planes at float source coords, reflect-padded."""
    c, h, w = planes.shape
    if mode == "nearest":
        iy = _reflect_index(np.rint(sy).astype(np.int64), h)
        ix = _reflect_index(np.rint(sx).astype(np.int64), w)
        return planes[:, iy, ix]
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0
    y0r, y1r = _reflect_index(y0, h), _reflect_index(y0 + 1, h)
    x0r, x1r = _reflect_index(x0, w), _reflect_index(x0 + 1, w)
    return (planes[:, y0r, x0r] * (1 - fy) * (1 - fx)
            + planes[:, y0r, x1r] * (1 - fy) * fx
            + planes[:, y1r, x0r] * fy * (1 - fx)
            + planes[:, y1r, x1r] * fy * fx)


def _apply_map(image, mask, sy, sx):
    img = _resample(image, sy, sx, "bilinear")
    msk = (_resample(mask, sy, sx, "nearest") >= 0.5).astype(mask.dtype)
    return img, msk


def _check_pair(image, mask):
    if image.ndim != 3 or mask.ndim != 3 or mask.shape[0] != 1:
        raise ConfigurationError("augment: expected image (C,H,W) and mask (1,H,W)")
    if image.shape[1:] != mask.shape[1:]:
        raise ConfigurationError(
            f"augment: image {image.shape[1:]} and mask {mask.shape[1:]} extents differ"
        )


# -- geometric transforms ----------------------------------------------------


def rotate90(image, mask, k: int):
    """Exact CCW quarter-turn index permutation, k in {1,2,3}."""
    _check_pair(image, mask)
    return np.rot90(image, k, axes=(1, 2)).copy(), np.rot90(mask, k, axes=(1, 2)).copy()


def axis_flip(image, mask, axis: int):
    _check_pair(image, mask)
    return np.flip(image, axis=axis + 1).copy(), np.flip(mask, axis=axis + 1).copy()


def zoom(image, mask, factor: float):
    """Scale about the center; reflect padding covers zoom-out, the implicit
    crop of the inverse map covers zoom-in. Output extents never change."""
    _check_pair(image, mask)
    _, h, w = image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    return _apply_map(image, mask, cy + (yy - cy) / factor, cx + (xx - cx) / factor)


def affine(image, mask, rotate: float, scale: float, shear: float):
    """Rotation (radians) + isotropic scale (1+scale) + shear, about the center."""
    _check_pair(image, mask)
    _, h, w = image.shape
    c, s = np.cos(rotate), np.sin(rotate)
    fwd = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]]) * (1.0 + scale)
    inv = np.linalg.inv(fwd)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = yy - cy, xx - cx
    return _apply_map(image, mask,
                      cy + inv[0, 0] * dy + inv[0, 1] * dx,
                      cx + inv[1, 0] * dy + inv[1, 1] * dx)


def grid_distortion(image, mask, disp: np.ndarray):
    """Perturb source coordinates by a control-lattice displacement field.

    ``disp`` is (2, cells, cells) in pixels (y then x), one vector per lattice
    point; the field is bilinearly interpolated to every pixel.
    """
    _check_pair(image, mask)
    if disp.ndim != 3 or disp.shape[0] != 2 or disp.shape[1] != disp.shape[2]:
        raise ConfigurationError(f"grid_distortion: displacement shape {disp.shape} invalid")
    _, h, w = image.shape
    cells = disp.shape[1]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # lattice coordinates of each pixel, in [0, cells-1]
    gy = yy * (cells - 1) / max(h - 1, 1)
    gx = xx * (cells - 1) / max(w - 1, 1)
    y0 = np.minimum(np.floor(gy).astype(np.int64), cells - 2)
    x0 = np.minimum(np.floor(gx).astype(np.int64), cells - 2)
    fy, fx = gy - y0, gx - x0
    fields = []
    for a in range(2):
        d = disp[a]
        fields.append(d[y0, x0] * (1 - fy) * (1 - fx) + d[y0, x0 + 1] * (1 - fy) * fx
                      + d[y0 + 1, x0] * fy * (1 - fx) + d[y0 + 1, x0 + 1] * fy * fx)
    return _apply_map(image, mask, yy + fields[0], xx + fields[1])


# -- intensity transforms ----------------------------------------------------


def gaussian_noise(image, rng: np.random.Generator, mean: float = 0.0, std: float = 0.1):
    return image + rng.normal(mean, std, size=image.shape)


def adjust_contrast(image, gamma: float):
    """Gamma curve on [0,1]; inputs outside the range are clipped first."""
    return np.clip(image, 0.0, 1.0) ** gamma


def shift_intensity(image, offset: float):
    return np.clip(image + offset, 0.0, 1.0)


def histogram_shift(image, control_y: np.ndarray):
    """Monotone piecewise-linear remap of [0,1] through perturbed knots."""
    control_y = np.sort(np.asarray(control_y, dtype=np.float64))
    knots_x = np.linspace(0.0, 1.0, len(control_y))
    shp = image.shape
    return np.interp(np.clip(image, 0.0, 1.0).ravel(), knots_x, control_y).reshape(shp)


def gaussian_smooth(image, sigma: float):
    """Separable truncated (+-3 sigma) Gaussian blur with reflect padding."""
    radius = max(int(np.ceil(3.0 * sigma)), 1)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    out = image.astype(np.float64, copy=True)
    for axis in (1, 2):
        pad = [(0, 0), (0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


# -- the pipeline ------------------------------------------------------------


def sample_rng(master_seed: int, sample_index: int, epoch: int) -> np.random.Generator:
    """Independent stream per (seed, sample, epoch) triple."""
    return np.random.default_rng([master_seed, sample_index, epoch])


def apply_pipeline(image, mask, spec: AugmentSpec, sample_index: int, epoch: int) -> AugmentedPair:
    """Run the transform list in order, each firing with its probability.

    Geometric kinds move image and mask through the same map; intensity kinds
    touch the image only. The returned log holds every (kind, drawn values).
    """
    _check_pair(image, mask)
    rng = sample_rng(spec.master_seed, sample_index, epoch)
    img = np.asarray(image, dtype=np.float64).copy()
    msk = np.asarray(mask, dtype=np.float64).copy()
    log = []
    for entry in spec.transforms:
        if rng.random() >= entry.p:
            continue
        q = entry.params
        if entry.kind == "rotate90":
            k = int(rng.integers(1, 4))
            img, msk = rotate90(img, msk, k)
            log.append(("rotate90", {"k": k}))
        elif entry.kind == "zoom":
            f = float(rng.uniform(q.get("low", 0.9), q.get("high", 1.1)))
            img, msk = zoom(img, msk, f)
            log.append(("zoom", {"factor": f}))
        elif entry.kind == "axis_flip":
            ax = int(rng.integers(0, 2))
            img, msk = axis_flip(img, msk, ax)
            log.append(("axis_flip", {"axis": ax}))
        elif entry.kind == "affine":
            r = float(rng.uniform(-q.get("rotate", 0.1), q.get("rotate", 0.1)))
            sc = float(rng.uniform(-q.get("scale", 0.1), q.get("scale", 0.1)))
            sh = float(rng.uniform(-q.get("shear", 0.1), q.get("shear", 0.1)))
            img, msk = affine(img, msk, r, sc, sh)
            log.append(("affine", {"rotate": r, "scale": sc, "shear": sh}))
        elif entry.kind == "grid_distortion":
            cells = int(q.get("cells", 5))
            limit = float(q.get("limit", 0.03))
            cell_px = (img.shape[1] - 1) / max(cells - 1, 1)
            disp = rng.uniform(-limit, limit, size=(2, cells, cells)) * cell_px
            img, msk = grid_distortion(img, msk, disp)
            log.append(("grid_distortion", {"limit": limit, "cells": cells}))
        elif entry.kind == "gaussian_noise":
            mean, std = q.get("mean", 0.0), q.get("std", 0.1)
            img = gaussian_noise(img, rng, mean, std)
            log.append(("gaussian_noise", {"mean": mean, "std": std}))
        elif entry.kind == "adjust_contrast":
            g = float(rng.uniform(q.get("low", 0.7), q.get("high", 1.5)))
            img = adjust_contrast(img, g)
            log.append(("adjust_contrast", {"gamma": g}))
        elif entry.kind == "shift_intensity":
            off = float(rng.uniform(q.get("low", 0.1), q.get("high", 0.2)))
            img = shift_intensity(img, off)
            log.append(("shift_intensity", {"offset": off}))
        elif entry.kind == "histogram_shift":
            pts = int(q.get("points", 3))
            mag = float(q.get("magnitude", 0.1))
            base = np.linspace(0.0, 1.0, pts)
            cy = np.clip(base + rng.uniform(-mag, mag, size=pts), 0.0, 1.0)
            img = histogram_shift(img, cy)
            log.append(("histogram_shift", {"control_y": np.sort(cy).tolist()}))
        elif entry.kind == "gaussian_smooth":
            sg = float(rng.uniform(q.get("low", 0.5), q.get("high", 1.0)))
            img = gaussian_smooth(img, sg)
            log.append(("gaussian_smooth", {"sigma": sg}))
    return AugmentedPair(image=img, mask=msk, log=log)
