"""Optimization loop, progressive stages and linear probing."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Stage, TrainConfig
from .data import Dataset, NormStats, batch_iterator, normalize, sample_band_view
from .losses import total_loss
from .mae import SpecAwareMAE, batch_masking, load_checkpoint, save_checkpoint
from .meta import UNKNOWN
from .numerics import backward, no_grad, ops
from .numerics.tensor import Parameter, Tensor
from .sensors import subset

log = logging.getLogger(__name__)


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig, epochs: int | None = None,
          warmup_epochs: int | None = None) -> float:
    """Linear warmup from 0 to ``lr_base``, then cosine decay reaching ``lr_min`` at the last step."""
    epochs = cfg.epochs if epochs is None else epochs
    warmup_epochs = cfg.warmup_epochs if warmup_epochs is None else warmup_epochs
    warm = warmup_epochs * steps_per_epoch
    total = epochs * steps_per_epoch
    if step < warm:
        return cfg.lr_base * step / warm
    span = max(total - 1 - warm, 1)
    progress = min((step - warm) / span, 1.0)
    return cfg.lr_min + (cfg.lr_base - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; 1-d parameters (biases, norms, scalars) are not decayed."""

    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.95,
                 weight_decay: float = 0.05, eps: float = 1e-8):
        self.params = [p for p in params if getattr(p, "trainable", True)]
        self.beta1, self.beta2, self.weight_decay, self.eps = beta1, beta2, weight_decay, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.aborted = 0

    def step(self, lr: float) -> bool:
        """Apply one update from ``p.grad``; returns False (no change) on non-finite grads."""
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                self.aborted += 1
                log.warning("non-finite gradient in %s; step aborted", p.name)
                return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay and p.ndim >= 2:
                p.data -= (lr * self.weight_decay) * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return True


def optimizer_step(params: Sequence[Parameter], state: AdamW, lr: float) -> bool:
    return state.step(lr)


def apply_name_dropout(sensor_name: str, p: float, rng: np.random.Generator) -> str:
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout probability must lie in [0, 1]")
    return UNKNOWN if rng.random() < p else sensor_name


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss_total: float
    loss_charbonnier: float
    loss_sam: float

    def line(self) -> str:
        return (f"{self.epoch}, {self.lr:.6e}, {self.loss_total:.6f}, "
                f"{self.loss_charbonnier:.6f}, {self.loss_sam:.6f}")


@dataclass
class StageResult:
    stage: str
    epochs: list[EpochLog]
    step_losses: list[float]
    checkpoint: Path | None
    seconds: float

    @property
    def first_loss(self) -> float:
        return self.epochs[0].loss_total

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss_total


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: Dataset, stats: NormStats,
                 model: SpecAwareMAE | None = None):
        self.cfg = cfg
        self.dataset = dataset
        self.stats = stats
        self.dtype = np.float64 if cfg.dtype == "float64" else np.float32
        self.model = model or SpecAwareMAE(cfg.model, dtype=self.dtype)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A1]))
        self.global_step = 0

    def loss_on_batch(self, batch, names: Sequence[str] | None = None):
        m = self.model
        k = m.cfg.patch
        n_tokens = (batch.cubes.shape[-2] // k) * (batch.cubes.shape[-1] // k)
        masks = batch_masking(batch.cubes.shape[0], n_tokens, self.cfg.mask_ratio, self.rng)
        out = m.forward_mim(batch.cubes.astype(self.dtype), batch.spec, masks=masks, names=names)
        return total_loss(out.target, out.reconstruction, self.cfg.loss, out.masks.mask())

    def stage_indices(self, stage: Stage) -> list[int]:
        per = stage.per_sensor
        if per is None and stage.sensors and len(stage.sensors) > 1:
            counts = [sum(e.sensor == k for e in self.dataset.entries) for k in stage.sensors]
            per = min(counts)
        return self.dataset.select(stage.sensors or None, per, seed=self.cfg.seed)

    def run_stage(self, stage: Stage, out_dir: str | Path | None = None,
                  index: int = 0, max_steps: int | None = None) -> StageResult:
        cfg = self.cfg
        t0 = time.time()
        indices = self.stage_indices(stage)
        opt = AdamW(self.model.parameters(), cfg.beta1, cfg.beta2, cfg.weight_decay)
        sensors = {self.dataset.entries[i].sensor for i in indices}
        micro_per_epoch = sum(
            math.ceil(sum(self.dataset.entries[i].sensor == k for i in indices) / cfg.batch) for k in sensors)
        steps_per_epoch = max(1, math.ceil(micro_per_epoch / cfg.accumulate))
        epochs_log: list[EpochLog] = []
        step_losses: list[float] = []
        step = 0
        done = False
        for epoch in range(stage.epochs):
            sums = np.zeros(3)
            count = 0
            lr = lr_at(step, steps_per_epoch, cfg, stage.epochs, stage.warmup_epochs)
            micro = 0
            self.model.zero_grad()
            for batch in batch_iterator(self.dataset, self.stats, cfg.batch, cfg.seed + 1000 * index, epoch,
                                        indices, cfg.workers, cfg.band_window, cfg.band_stride, cfg.shards,
                                        step_offset=self.global_step):
                names = [apply_name_dropout(batch.spec.name, cfg.sensor_name_dropout, self.rng)
                         for _ in range(batch.cubes.shape[0])]
                res = self.loss_on_batch(batch, names)
                loss = res.total * (1.0 / cfg.accumulate) if cfg.accumulate > 1 else res.total
                backward(loss)
                value = res.total.item()
                if not math.isfinite(value):
                    raise FloatingPointError(f"non-finite loss at stage {stage.name} step {step}")
                sums += (value, res.charbonnier, res.sam)
                count += 1
                step_losses.append(value)
                micro += 1
                self.global_step += 1
                if micro % cfg.accumulate == 0:
                    lr = lr_at(step, steps_per_epoch, cfg, stage.epochs, stage.warmup_epochs)
                    opt.step(lr)
                    self.model.zero_grad()
                    step += 1
                    if max_steps is not None and step >= max_steps:
                        done = True
                        break
            if micro % cfg.accumulate:
                lr = lr_at(step, steps_per_epoch, cfg, stage.epochs, stage.warmup_epochs)
                opt.step(lr)
                self.model.zero_grad()
                step += 1
            mean = sums / max(count, 1)
            entry = EpochLog(epoch + 1, lr, *mean)
            epochs_log.append(entry)
            log.info("stage %s epoch %s", stage.name, entry.line())
            if done:
                break
        ckpt = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            ckpt = out / f"stage{index + 1}_{stage.name}.ckpt"
            save_checkpoint(self.model, ckpt, cfg, extra={"stage": stage.name, "index": index})
            with open(out / "metrics.log", "a") as fh:
                fh.write(f"# stage {index + 1} {stage.name}\n")
                for e in epochs_log:
                    fh.write(e.line() + "\n")
        return StageResult(stage.name, epochs_log, step_losses, ckpt, time.time() - t0)

    def pretrain(self, out_dir: str | Path | None = None, resume: str | Path | None = None,
                 start_stage: int = 0) -> list[StageResult]:
        if resume is not None:
            load_checkpoint(self.model, resume, self.cfg)
        results = []
        for i, stage in enumerate(self.cfg.stages[start_stage:], start=start_stage):
            results.append(self.run_stage(stage, out_dir, index=i))
        return results


# -- linear probing -----------------------------------------------------------------

@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    trainable_parameters: int
    classes: int
    extra: dict = field(default_factory=dict)


def extract_features(model: SpecAwareMAE, dataset: Dataset, stats: NormStats, indices: Sequence[int],
                     window: int | None = None, seed: int = 0, batch: int = 8) -> np.ndarray:
    """Frozen-backbone features: mean-pooled unmasked encoder tokens."""
    feats = []
    with no_grad():
        for j in range(0, len(indices), batch):
            ids = list(indices[j:j + batch])
            groups: dict[str, list[int]] = {}
            for i in ids:
                groups.setdefault(dataset.entries[i].sensor, []).append(i)
            out = {}
            for key, gid in groups.items():
                spec = dataset.specs[key]
                sel = sample_band_view(spec, window, seed=seed)
                idx = np.asarray(sel.indices)
                cubes = np.stack([normalize(dataset.load(i), stats)[idx] for i in gid]).astype(model.dtype)
                f = model.encode_features(cubes, subset(spec, sel)).data
                out.update(zip(gid, f))
            feats.extend(out[i] for i in ids)
    return np.stack(feats).astype(np.float64)


def train_linear_head(train_x: np.ndarray, train_y: np.ndarray, classes: int, epochs: int = 300,
                      lr: float = 0.05, seed: int = 0) -> tuple[Parameter, Parameter]:
    rng = np.random.default_rng(seed)
    dim = train_x.shape[1]
    w = Parameter(rng.normal(0, 0.01, (dim, classes)), dtype=np.float64, name="probe.weight")
    b = Parameter(np.zeros(classes), dtype=np.float64, name="probe.bias")
    opt = AdamW([w, b], 0.9, 0.999, weight_decay=0.0)
    x = Tensor(train_x)
    onehot = np.eye(classes)[train_y]
    for _ in range(epochs):
        w.zero_grad()
        b.zero_grad()
        logits = ops.matmul(x, w) + b
        nll = -ops.mean(ops.sum(ops.log_softmax(logits, axis=-1) * Tensor(onehot), axis=-1))
        backward(nll, [w, b])
        opt.step(lr)
    return w, b


def linear_probe(model: SpecAwareMAE, dataset: Dataset, stats: NormStats, indices: Sequence[int] | None = None,
                 epochs: int = 300, train_fraction: float = 0.5, seed: int = 0,
                 window: int | None = None) -> ProbeResult:
    """Fit one linear map on frozen features; report held-out accuracy."""
    indices = list(range(len(dataset))) if indices is None else list(indices)
    labels = np.array([dataset.entries[i].label for i in indices])
    classes = int(labels.max()) + 1
    feats = extract_features(model, dataset, stats, indices, window=window, seed=seed)
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(indices), dtype=bool)
    for c in range(classes):
        members = np.flatnonzero(labels == c)
        pick = rng.choice(members, size=max(1, int(round(train_fraction * len(members)))), replace=False)
        train_mask[pick] = True
    mu = feats[train_mask].mean(axis=0)
    sd = feats[train_mask].std(axis=0) + 1e-8
    z = (feats - mu) / sd
    w, b = train_linear_head(z[train_mask], labels[train_mask], classes, epochs, seed=seed)
    pred = np.argmax(z @ w.data + b.data, axis=1)
    test = ~train_mask if np.any(~train_mask) else train_mask
    return ProbeResult(
        accuracy=float(np.mean(pred[test] == labels[test])),
        train_accuracy=float(np.mean(pred[train_mask] == labels[train_mask])),
        trainable_parameters=int(w.size + b.size),
        classes=classes,
    )
