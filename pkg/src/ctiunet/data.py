"""Dataset loading, preprocessing, deterministic splitting, and a synthetic
tile generator.

On-disk layout is ``<root>/<condition>/img/<id>.png`` plus a ``mask`` twin,
with a tab-separated manifest listing every pair and its content hash. A
Dataset in memory is an immutable, identifier-sorted list of samples;
iteration order is the determinism anchor for everything downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError

CONDITIONS = ("5/6Nx", "DN", "NEP25", "normal", "synthetic")
# "/" cannot appear in a directory name; map the one condition that has it
_COND_TO_DIR = {"5/6Nx": "5_6Nx"}
_DIR_TO_COND = {v: k for k, v in _COND_TO_DIR.items()}

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
NORM_STD_FLOOR = 1e-6


class DataLoadError(Exception):
    """Raised when any file in a dataset root fails validation; carries the
    full per-file error list so one run surfaces every problem."""

    def __init__(self, errors: list[str]):
        super().__init__(f"{len(errors)} dataset error(s):\n" + "\n".join(errors))
        self.errors = errors


def condition_dir(condition: str) -> str:
    return _COND_TO_DIR.get(condition, condition)


def dir_condition(dirname: str) -> str:
    return _DIR_TO_COND.get(dirname, dirname)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray      # (3,H,W) float64 in [0,1]
    mask: np.ndarray       # (1,H,W) float64 binary
    condition: str
    identifier: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ConfigurationError(f"Sample {self.identifier}: image must be (3,H,W)")
        if self.mask.ndim != 3 or self.mask.shape[0] != 1:
            raise ConfigurationError(f"Sample {self.identifier}: mask must be (1,H,W)")
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise ConfigurationError(f"Sample {self.identifier}: image/mask extents differ")


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    root: str = ""
    manifest_hash: str = ""

    def __post_init__(self):
        ids = [s.identifier for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("Dataset: identifiers must be unique")
        object.__setattr__(self, "samples", tuple(sorted(self.samples,
                                                         key=lambda s: s.identifier)))

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def conditions(self) -> list[str]:
        return sorted({s.condition for s in self.samples})


# -- preprocessing -----------------------------------------------------------


def normalize(image: np.ndarray) -> np.ndarray:
    """Per-image, per-channel standardization; constant channels map to zero."""
    image = np.asarray(image, dtype=np.float64)
    mean = image.mean(axis=(-2, -1), keepdims=True)
    std = image.std(axis=(-2, -1), keepdims=True)
    return (image - mean) / np.maximum(std, NORM_STD_FLOOR)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """(3,H,W) -> (1,H,W) luminance."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"to_grayscale: expected (3,H,W), got {image.shape}")
    r, g, b = GRAY_WEIGHTS
    return (r * image[0] + g * image[1] + b * image[2])[None]


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigurationError("SplitSpec: train_fraction must lie in [0, 1]")


def _shuffle_key(seed: int, identifier: str) -> bytes:
    # a per-identifier keyed hash, so a sample's position in the shuffled
    # order never depends on which other samples are present
    return hashlib.blake2b(identifier.encode("utf-8"),
                           key=str(seed).encode("utf-8"), digest_size=16).digest()


def split(dataset: Dataset, spec: SplitSpec) -> tuple[tuple[Sample, ...], tuple[Sample, ...]]:
    """Stratified per condition: floor(fraction * n) samples go to train,
    chosen by a seeded shuffle; the remainder is validation."""
    by_cond: dict[str, list[Sample]] = {}
    for s in dataset:
        by_cond.setdefault(s.condition, []).append(s)
    train, val = [], []
    for cond in sorted(by_cond):
        group = sorted(by_cond[cond],
                       key=lambda s: (_shuffle_key(spec.seed, s.identifier), s.identifier))
        k = int(np.floor(spec.train_fraction * len(group)))
        train.extend(group[:k])
        val.extend(group[k:])
    order = lambda xs: tuple(sorted(xs, key=lambda s: s.identifier))
    return order(train), order(val)


# -- synthetic generator -----------------------------------------------------


def _synthesize(rg: np.random.Generator, size: int, difficulty: float):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = rg.uniform(0.18, 0.30)
    cell = max(h // 8, 1)
    rep = -(-h // cell)  # ceil, so the upsampled blotch always covers h x w
    blotch = rg.standard_normal((3, cell, cell))
    blotch = np.repeat(np.repeat(blotch, rep, 1), rep, 2)[:, :h, :w]
    img = base + 0.12 * difficulty * blotch + 0.10 * difficulty * rg.standard_normal((3, h, w))
    mask = np.zeros((h, w))
    soft = np.zeros((h, w))
    for _ in range(int(rg.integers(1, 3))):
        cy, cx = rg.uniform(0.28 * h, 0.72 * h, 2)
        ry, rx = rg.uniform(0.22 * h, 0.30 * h, 2)
        th = rg.uniform(0, np.pi)
        c, s = np.cos(th), np.sin(th)
        u = ((xx - cx) * c + (yy - cy) * s) / rx
        v = (-(xx - cx) * s + (yy - cy) * c) / ry
        d = np.sqrt(u * u + v * v)
        mask = np.maximum(mask, (d <= 1.0).astype(np.float64))
        # Gaussian-like falloff just outside the ellipse; width tracks difficulty
        e = (0.4 + 2.4 * difficulty) / min(rx, ry)
        soft = np.maximum(soft, np.clip((1.0 + 0.5 * e - d) / e, 0.0, 1.0))
    hue = np.array([0.95, 0.82, 0.90]) + 0.03 * rg.standard_normal(3)
    fg = hue[:, None, None] + 0.06 * difficulty * rg.standard_normal((3, h, w))
    img = img * (1.0 - soft) + soft * fg
    return np.clip(img, 0.0, 1.0), mask[None]


def generate_synthetic(count: int, size: int = 64, seed: int = 0,
                       difficulty: float = 0.35) -> Dataset:
    """Deterministic blob tiles: 1-2 soft-edged ellipses of a bright distinct
    hue over a textured background; the mask is the exact generating ellipse
    set. ``difficulty`` scales background clutter, foreground speckle, and
    edge softness; geometry (and so the masks) is difficulty-independent.

    Sample i is drawn from its own (seed, i) stream, so the first k samples
    of any larger count are identical to a count=k run.
    """
    if count < 0:
        raise ConfigurationError("generate_synthetic: count must be >= 0")
    if size < 1:
        raise ConfigurationError("generate_synthetic: size must be >= 1")
    if not 0.0 <= difficulty <= 1.0:
        raise ConfigurationError("generate_synthetic: difficulty must lie in [0, 1]")
    samples = []
    for i in range(count):
        img, mask = _synthesize(np.random.default_rng([seed, i]), size, difficulty)
        samples.append(Sample(image=img, mask=mask, condition="synthetic",
                              identifier=f"synthetic-{i:04d}"))
    return Dataset(samples=tuple(samples))


# -- disk I/O ----------------------------------------------------------------


def _image_to_png_bytes(arr: np.ndarray, mode: str) -> bytes:
    import io
    if mode == "RGB":
        a8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    else:
        a8 = np.where(arr[0] >= 0.5, 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(a8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_dataset(dataset: Dataset, root) -> str:
    """Write PNG pairs plus manifest.tsv; returns the manifest hash.

    The manifest is written last (tmp + rename), so a partially written tree
    never carries a valid manifest.
    """
    root = Path(root)
    rows = []
    for s in dataset:
        cdir = root / condition_dir(s.condition)
        (cdir / "img").mkdir(parents=True, exist_ok=True)
        (cdir / "mask").mkdir(parents=True, exist_ok=True)
        img_bytes = _image_to_png_bytes(s.image, "RGB")
        mask_bytes = _image_to_png_bytes(s.mask, "L")
        img_rel = f"{condition_dir(s.condition)}/img/{s.identifier}.png"
        mask_rel = f"{condition_dir(s.condition)}/mask/{s.identifier}.png"
        (root / img_rel).write_bytes(img_bytes)
        (root / mask_rel).write_bytes(mask_bytes)
        content = hashlib.sha256(img_bytes + mask_bytes).hexdigest()
        rows.append(f"{s.identifier}\t{s.condition}\t{img_rel}\t{mask_rel}\t{content}")
    text = "identifier\tcondition\timg\tmask\tcontent_hash\n" + "".join(r + "\n" for r in rows)
    tmp = root / "manifest.tsv.tmp"
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(root / "manifest.tsv")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_image_png(path) -> np.ndarray:
    """One RGB PNG as a (3,H,W) array in [0,1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def _load_mask_png(path: Path, errors: list[str]) -> np.ndarray | None:
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2:
        errors.append(f"{path}: mask must be single-channel, got shape {arr.shape}")
        return None
    vals = np.unique(arr)
    bad = [int(v) for v in vals if v not in (0, 255)]
    if bad:
        errors.append(f"{path}: non-binary mask values {bad}")
        return None
    return (arr == 255).astype(np.float64)[None]


def load_dataset(root) -> Dataset:
    """Read every condition directory under root; raise DataLoadError listing
    all problems (orphans, non-binary masks, extent mismatches) if any."""
    root = Path(root)
    errors: list[str] = []
    samples: list[Sample] = []
    if not root.exists():
        raise DataLoadError([f"{root}: dataset root does not exist"])
    for cdir in sorted(p for p in root.iterdir() if p.is_dir()):
        condition = dir_condition(cdir.name)
        imgs = {p.stem: p for p in sorted((cdir / "img").glob("*.png"))} if (cdir / "img").is_dir() else {}
        masks = {p.stem: p for p in sorted((cdir / "mask").glob("*.png"))} if (cdir / "mask").is_dir() else {}
        for stem in sorted(set(imgs) - set(masks)):
            errors.append(f"{imgs[stem]}: image has no mask partner")
        for stem in sorted(set(masks) - set(imgs)):
            errors.append(f"{masks[stem]}: mask has no image partner")
        for stem in sorted(set(imgs) & set(masks)):
            img = np.asarray(Image.open(imgs[stem]).convert("RGB"), dtype=np.float64) / 255.0
            img = img.transpose(2, 0, 1)
            mask = _load_mask_png(masks[stem], errors)
            if mask is None:
                continue
            if img.shape[1:] != mask.shape[1:]:
                errors.append(f"{imgs[stem]}: image {img.shape[1:]} and mask "
                              f"{mask.shape[1:]} extents differ")
                continue
            samples.append(Sample(image=img, mask=mask, condition=condition, identifier=stem))
    if errors:
        raise DataLoadError(errors)
    manifest = root / "manifest.tsv"
    mh = hashlib.sha256(manifest.read_bytes()).hexdigest() if manifest.is_file() else ""
    return Dataset(samples=tuple(samples), root=str(root), manifest_hash=mh)
