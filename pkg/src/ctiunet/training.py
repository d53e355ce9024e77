"""Two-stage training: the RGB model first, then the refinement model
against inputs assembled from the frozen first model's probabilities.

Determinism contract: every stochastic choice (generator, split, weight
init, batch order, augmentation, teacher noise) draws from a named
sub-seed derived from the master seed, so one master seed fixes the whole
run. Checkpoints are written to a temp file and renamed into place, so an
interrupt never corrupts the best checkpoint on disk.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentSpec, apply_pipeline, default_augment_spec, sample_rng
from .cascade import (ThresholdSet, WindowSpec, assemble_model2_input,
                      binarize_multi, sliding_window_infer)
from .config import RunConfig, config_hash
from .data import Dataset, Sample, SplitSpec, normalize, split, to_grayscale
from .errors import ConfigurationError
from .losses import CompositeLossConfig, TverskyParams, composite_loss
from .nn import Adam, Tensor, no_grad, sigmoid
from .unet import UNetConfig, UNetModel, build_unet, forward, save_model

VAL_THRESHOLD = 0.5


def sub_seed(master: int, role: str) -> int:
    """Stable, role-named 32-bit sub-seed of the master seed."""
    digest = hashlib.blake2b(f"{master}:{role}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_dsc: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_dsc: float = 0.0
    checkpoint_path: str = ""
    wall_time: float = 0.0

    def to_text(self, include_timing: bool = False) -> str:
        lines = ["epoch\ttrain_loss\tval_loss\tval_dsc"]
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.train_loss:.8f}\t{e.val_loss:.8f}\t{e.val_dsc:.8f}")
        lines.append(f"# best_epoch={self.best_epoch} best_val_dsc={self.best_val_dsc:.8f}")
        if include_timing:
            lines.append(f"# wall_time_s={self.wall_time:.2f}")
        return "\n".join(lines) + "\n"


def _check_extent(config: RunConfig, dataset: Dataset, factor: int) -> None:
    for s in dataset:
        h, w = s.image.shape[1:]
        if h % factor or w % factor:
            raise ConfigurationError(
                f"training: sample {s.identifier} extent {h}x{w} is not a multiple "
                f"of the model's spatial factor {factor}"
            )


def _augmented(sample: Sample, spec: AugmentSpec | None, epoch: int,
               index: int) -> tuple[np.ndarray, np.ndarray]:
    if spec is None:
        return sample.image, sample.mask
    pair = apply_pipeline(sample.image, sample.mask, spec, index, epoch)
    return pair.image, pair.mask


def _save_best(model: UNetModel, path: str, extra: dict[str, str]) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    os.close(fd)
    try:
        save_model(model, tmp, extra=extra)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _mean_sample_dsc(probs: np.ndarray, masks: np.ndarray) -> float:
    vals = []
    for k in range(probs.shape[0]):
        pred = probs[k] >= VAL_THRESHOLD
        t = masks[k] > 0.5
        den = 2 * (pred & t).sum() + (pred & ~t).sum() + (~pred & t).sum()
        vals.append(2.0 * (pred & t).sum() / den if den else 1.0)
    return float(np.mean(vals))


class _Trainer:
    """Shared epoch loop; stages differ only in how a sample becomes a
    model input batch."""

    def __init__(self, config: RunConfig, model: UNetModel, loss_config: CompositeLossConfig,
                 shuffle_seed: int, out_path: str, stage: str, log):
        self.config = config
        self.model = model
        self.loss_config = loss_config
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.out_path = out_path
        self.stage = stage
        self.log = log or (lambda msg: None)
        self.extra = {"config_hash": config_hash(config), "stage": stage}

    def make_input(self, image01: np.ndarray, epoch: int, index: int,
                   train: bool) -> np.ndarray:
        raise NotImplementedError

    def run(self, train_samples, val_samples, augment_spec: AugmentSpec | None) -> TrainLog:
        cfg, model = self.config, self.model
        opt = Adam(model.parameters(), lr=cfg.lr)
        log = TrainLog(checkpoint_path=self.out_path)
        t0 = time.time()
        best = -1.0
        if cfg.epochs == 0:
            _save_best(model, self.out_path, {**self.extra, "epoch": "0"})
            log.wall_time = time.time() - t0
            return log
        for epoch in range(1, cfg.epochs + 1):
            order = self.shuffle_rng.permutation(len(train_samples))
            loss_sum, seen = 0.0, 0
            for b0 in range(0, len(order), cfg.batch):
                idx = order[b0:b0 + cfg.batch]
                xs, ys = [], []
                for i in idx:
                    img, msk = _augmented(train_samples[i], augment_spec, epoch, int(i))
                    xs.append(self.make_input(img, epoch, int(i), train=True))
                    ys.append(msk)
                x = Tensor(np.stack(xs).astype(np.float32))
                y = Tensor(np.stack(ys).astype(np.float32))
                model.zero_grad()
                loss = composite_loss(sigmoid(forward(model, x)), y, self.loss_config)
                loss.backward()
                opt.step()
                loss_sum += float(loss.data) * len(idx)
                seen += len(idx)
            train_loss = loss_sum / seen
            val_loss, val_dsc = self._validate(val_samples)
            log.epochs.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                         val_loss=val_loss, val_dsc=val_dsc))
            if val_dsc > best:
                best = val_dsc
                log.best_epoch, log.best_val_dsc = epoch, val_dsc
                _save_best(model, self.out_path,
                           {**self.extra, "epoch": str(epoch), "val_dsc": repr(val_dsc)})
            self.log(f"stage{self.stage} epoch {epoch}/{cfg.epochs} "
                     f"train_loss={train_loss:.4f} val_loss={val_loss:.4f} val_dsc={val_dsc:.4f}")
        log.wall_time = time.time() - t0
        return log

    def _validate(self, val_samples) -> tuple[float, float]:
        cfg = self.config
        loss_sum, dsc_sum, seen = 0.0, 0.0, 0
        with no_grad():
            for b0 in range(0, len(val_samples), cfg.batch):
                batch = val_samples[b0:b0 + cfg.batch]
                xs = [self.make_input(s.image, 0, b0 + j, train=False)
                      for j, s in enumerate(batch)]
                ys = [s.mask for s in batch]
                x = Tensor(np.stack(xs).astype(np.float32))
                y = Tensor(np.stack(ys).astype(np.float32))
                probs = sigmoid(forward(self.model, x))
                loss_sum += float(composite_loss(probs, y, self.loss_config).data) * len(batch)
                dsc_sum += _mean_sample_dsc(probs.data, np.stack(ys)) * len(batch)
                seen += len(batch)
        return loss_sum / seen, dsc_sum / seen


class _Stage1Trainer(_Trainer):
    def make_input(self, image01, epoch, index, train):
        return normalize(image01)


class _Stage2Trainer(_Trainer):
    def __init__(self, *args, teacher, thresholds: ThresholdSet, teacher_seed: int, **kw):
        super().__init__(*args, **kw)
        self.teacher = teacher
        self.thresholds = thresholds
        self.teacher_seed = teacher_seed

    def make_input(self, image01, epoch, index, train):
        # validation teachers always see epoch 0 so the val set is fixed
        rng = sample_rng(self.teacher_seed, index, epoch if train else 0)
        probs = np.asarray(self.teacher(image01, rng), dtype=np.float64)
        stack = binarize_multi(probs, self.thresholds)
        gray = normalize(to_grayscale(image01))
        return assemble_model2_input(gray, stack)


def split_dataset(config: RunConfig, dataset: Dataset) -> tuple[list[Sample], list[Sample]]:
    spec = SplitSpec(train_fraction=config.train_fraction,
                     seed=sub_seed(config.master_seed, "split"))
    train_samples, val_samples = split(dataset, spec)
    return list(train_samples), list(val_samples)


def _augment_spec_for(config: RunConfig, stage: str) -> AugmentSpec | None:
    if not config.augment:
        return None
    return default_augment_spec(master_seed=sub_seed(config.master_seed, f"augment{stage}"))


def train_stage1(config: RunConfig, dataset: Dataset, out_path: str,
                 log=None) -> tuple[UNetModel, TrainLog]:
    """Train the RGB model. The returned model holds the last-epoch
    weights; the best-epoch state is what out_path holds."""
    model = build_unet(UNetConfig(in_channels=3, out_channels=1,
                                  encoder_channels=config.model1_channels),
                       seed=sub_seed(config.master_seed, "model1"))
    _check_extent(config, dataset, model.config.spatial_factor)
    train_samples, val_samples = split_dataset(config, dataset)
    trainer = _Stage1Trainer(config, model,
                             CompositeLossConfig(TverskyParams(config.stage1_alpha,
                                                               config.stage1_beta),
                                                 config.ce_weight),
                             sub_seed(config.master_seed, "shuffle1"), out_path, "1", log)
    return model, trainer.run(train_samples, val_samples, _augment_spec_for(config, "1"))


def model1_teacher(model1: UNetModel, config: RunConfig):
    """Teacher that runs the frozen first model: full-image forward by
    default, sliding-window when the config asks for it."""
    def teach(image01: np.ndarray, rng) -> np.ndarray:
        x = normalize(image01)
        if config.stage2_full_image:
            with no_grad():
                out = sigmoid(forward(model1, Tensor(x[None].astype(np.float32))))
            return out.data[0].astype(np.float64)
        spec = WindowSpec(window=config.window, overlap=config.overlap, blend=config.blend)
        return sliding_window_infer(model1, x, spec)
    return teach


def train_stage2(config: RunConfig, dataset: Dataset, model1: UNetModel, out_path: str,
                 teacher=None, log=None,
                 model2_config: UNetConfig | None = None) -> tuple[UNetModel, TrainLog]:
    """Train the refinement model against the frozen model1 (or an injected
    teacher fn(image01, rng) -> probs). The teacher runs on the augmented
    pair, so geometric transforms never desynchronize the mask stack."""
    thresholds = ThresholdSet(config.thresholds)
    need = 1 + len(thresholds)
    if model2_config is None:
        model2_config = UNetConfig(in_channels=need, out_channels=1,
                                   encoder_channels=config.model2_channels)
    if model2_config.in_channels != need:
        raise ConfigurationError(
            f"stage 2: {len(thresholds)} thresholds imply {need} input channels, "
            f"but the model takes {model2_config.in_channels}"
        )
    model = build_unet(model2_config, seed=sub_seed(config.master_seed, "model2"))
    _check_extent(config, dataset, max(model.config.spatial_factor,
                                       model1.config.spatial_factor if model1 else 1))
    if teacher is None:
        if model1 is None:
            raise ConfigurationError("stage 2: need a stage-1 model or an explicit teacher")
        if model1.config.in_channels != 3:
            raise ConfigurationError(
                f"stage 2: stage-1 model expects {model1.config.in_channels} channels, needs 3"
            )
        teacher = model1_teacher(model1, config)
    train_samples, val_samples = split_dataset(config, dataset)
    trainer = _Stage2Trainer(
        config, model,
        CompositeLossConfig(TverskyParams(config.stage2_alpha, config.stage2_beta),
                            config.ce_weight),
        sub_seed(config.master_seed, "shuffle2"), out_path, "2", log,
        teacher=teacher, thresholds=thresholds,
        teacher_seed=sub_seed(config.master_seed, "teacher"),
    )
    return model, trainer.run(train_samples, val_samples, _augment_spec_for(config, "2"))
