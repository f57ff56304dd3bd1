"""Training loop, SGD with momentum, polynomial LR decay and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import config as C
from . import data, model
from .losses import LossBreakdown, LossConfig, total_loss
from .metrics import CropSpec
from .serialize import FormatError, read_named_tensors, read_string, write_named_tensors, \
    write_string
from .tensor import Tensor

CHECKPOINT_MAGIC = b"GSCK"
CHECKPOINT_VERSION = 1
CSV_HEADER = "step,epoch,lr,bce,ce,reg_fwd,reg_bwd,total"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    data_dir: str = ""
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-2
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    shape_stream: bool = True
    gradients_input: bool = True
    dual_task: bool = True
    eval_every: int = 0          # epochs between validation passes; 0 = end only
    val_fraction: float = 0.2
    hflip: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    crop: CropSpec = field(default_factory=CropSpec)

    def __post_init__(self):
        if not self.shape_stream:
            self.gradients_input = False
            self.dual_task = False
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("lr must be positive, momentum in [0, 1), weight_decay >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def effective_loss(self):
        """Loss weights after the ablation switches."""
        cfg = self.loss
        if not self.dual_task:
            cfg = dataclasses.replace(cfg, reg_boundary_weight=0.0, reg_semantic_weight=0.0)
        if not self.shape_stream:
            cfg = dataclasses.replace(cfg, bce_weight=0.0)
        return cfg

    def model_config(self, num_classes):
        return model.ModelConfig(num_classes=num_classes, shape_stream=self.shape_stream,
                                 gradients_input=self.gradients_input)

    def to_text(self):
        sections = {"train": self, "loss": self.loss, "crop": self.crop}
        return C.dump_sections(sections)

    @classmethod
    def from_sections(cls, sections):
        known = {"train", "loss", "crop"}
        for name in sections:
            if name not in known and name not in ("dataset", "eval"):
                raise C.ConfigError(f"unknown config section [{name}]")
        base = cls()
        loss = C.update_dataclass(base.loss, sections.get("loss", {}), "loss")
        crop = C.update_dataclass(base.crop, sections.get("crop", {}), "crop")
        cfg = C.update_dataclass(base, sections.get("train", {}), "train")
        return dataclasses.replace(cfg, loss=loss, crop=crop)

    @classmethod
    def from_text(cls, text):
        return cls.from_sections(C.read_sections(text=text))


# ------------------------------------------------------------------ dataset
@dataclass
class Dataset:
    samples: list
    num_classes: int

    @classmethod
    def from_dir(cls, path):
        manifest, samples = data.load_dataset(path)
        return cls(samples, int(manifest["num_classes"]))

    @classmethod
    def from_spec(cls, spec):
        return cls(data.generate_dataset(spec), spec.num_classes)

    def split(self, val_fraction):
        tr, va = data.split_indices(len(self.samples), val_fraction)
        return [self.samples[i] for i in tr], [self.samples[i] for i in va]


def stack_batch(samples, flips=None):
    image = np.stack([s.image for s in samples])
    grad = np.stack([s.image_grad for s in samples])
    labels = np.stack([s.labels for s in samples])
    gt_b = np.stack([s.gt_boundary for s in samples])[:, None]
    if flips is not None and flips.any():
        image[flips] = image[flips][..., ::-1]
        grad[flips] = grad[flips][..., ::-1]
        labels[flips] = labels[flips][..., ::-1]
        gt_b[flips] = gt_b[flips][..., ::-1]
    return image, grad, labels, gt_b


# ---------------------------------------------------------------- optimizer
def poly_lr(base, step, total, power=0.9):
    if total <= 0:
        raise ValueError("total steps must be positive")
    frac = min(max(step / total, 0.0), 1.0)
    return base * (1.0 - frac) ** power


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay."""

    def __init__(self, params, momentum=0.9, weight_decay=1e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, lr):
        m, wd = np.float32(self.momentum), np.float32(self.weight_decay)
        lr = np.float32(lr)
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v = self.velocity[name]
            v *= m
            v += g + wd * p.data
            p.data -= lr * v


# ----------------------------------------------------------------- checkpoints
@dataclass
class Checkpoint:
    config: TrainConfig
    num_classes: int
    epoch: int          # completed epochs
    step: int           # completed optimizer steps
    params: dict
    velocity: dict


def save_checkpoint(path, ckpt):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    write_string(buf, ckpt.config.to_text())
    buf.write(struct.pack("<IIQ", ckpt.num_classes, ckpt.epoch, ckpt.step))
    write_named_tensors(buf, {f"param/{k}": v for k, v in ckpt.params.items()})
    write_named_tensors(buf, {f"momentum/{k}": v for k, v in ckpt.velocity.items()})
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        cfg = TrainConfig.from_text(read_string(f))
        k, epoch, step = struct.unpack("<IIQ", f.read(16))
        params = {n.split("/", 1)[1]: v for n, v in read_named_tensors(f).items()}
        vel = {n.split("/", 1)[1]: v for n, v in read_named_tensors(f).items()}
    return Checkpoint(cfg, k, epoch, step, params, vel)


def restore_model(ckpt):
    mcfg = ckpt.config.model_config(ckpt.num_classes)
    store = model.init_params(mcfg, ckpt.config.seed)
    store.load_state_dict(ckpt.params)
    return mcfg, store


# -------------------------------------------------------------------- training
def _first_nonfinite(named):
    for name, value in named:
        if value is None:
            continue
        arr = value.data if isinstance(value, Tensor) else value
        if not np.all(np.isfinite(arr)):
            return name
    return None


def _format_row(step, epoch, lr, values):
    cols = [str(step), str(epoch), f"{lr:.8g}"] + [f"{values[k]:.8g}" for k in LossBreakdown.FIELDS]
    return ",".join(cols)


def predict(params, mcfg, samples, batch_size=8, with_boundary=False):
    """Argmax label maps (and boundary probabilities) for a list of samples."""
    from .tensor import no_grad
    preds, bounds = [], []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            image, grad, _, _ = stack_batch(samples[i:i + batch_size])
            out = model.forward(params, mcfg, Tensor(image), Tensor(grad))
            preds.append(out.categorical.labels())
            if with_boundary and out.boundary is not None:
                bounds.append(out.boundary.data[:, 0])
    preds = np.concatenate(preds) if preds else np.zeros((0,))
    if with_boundary:
        return preds, (np.concatenate(bounds) if bounds else None)
    return preds


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    params: object
    model_config: model.ModelConfig
    history: list
    evals: list


def train(cfg, dataset=None, out_dir=None, resume=None, stop_epoch=None, on_eval=None,
          log=None):
    """Run training; returns a TrainResult.

    ``dataset`` defaults to ``cfg.data_dir``. With ``out_dir`` set, the metrics CSV
    and the final checkpoint are written there. ``stop_epoch`` ends early (for
    interrupted-run tests) without changing the LR schedule.
    """
    if dataset is None:
        dataset = Dataset.from_dir(cfg.data_dir)
    train_set, val_set = dataset.split(cfg.val_fraction)
    if not train_set:
        raise TrainingError("training split is empty")
    k = dataset.num_classes
    mcfg = cfg.model_config(k)
    loss_cfg = cfg.effective_loss()
    params = model.init_params(mcfg, cfg.seed)
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    start_epoch, step = 0, 0
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ck.num_classes != k:
            raise TrainingError(f"checkpoint has {ck.num_classes} classes, dataset has {k}")
        params.load_state_dict(ck.params)
        for n, v in ck.velocity.items():
            opt.velocity[n][...] = v
        start_epoch, step = ck.epoch, ck.step

    csv_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "metrics.csv")
        if resume is None or not os.path.exists(csv_path):
            with open(csv_path, "w") as f:
                f.write(CSV_HEADER + "\n")
    history, evals = [], []
    last_epoch = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)

    for epoch in range(start_epoch, last_epoch):
        order_rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = order_rng.permutation(len(train_set))
        rows = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            flips = order_rng.random(len(idx)) < 0.5 if cfg.hflip else None
            image, grad, labels, gt_b = stack_batch([train_set[i] for i in idx], flips)
            lr = poly_lr(cfg.lr, step, total_steps, cfg.power)
            params.zero_grad()
            out = model.forward(params, mcfg, Tensor(image), Tensor(grad))
            noise_rng = np.random.default_rng([cfg.seed, 2, step])
            loss = total_loss(out.boundary, out.categorical, labels, gt_b, loss_cfg, rng=noise_rng)
            bad = _first_nonfinite(
                [("logits", out.categorical.logits), ("boundary", out.boundary)]
                + [(f"loss.{n}", getattr(loss, n)) for n in LossBreakdown.FIELDS])
            if bad:
                raise TrainingError(f"non-finite value in {bad} at step {step} (epoch {epoch})")
            loss.total.backward()
            bad = _first_nonfinite((f"grad[{n}]", p.grad) for n, p in params.items())
            if bad:
                raise TrainingError(f"non-finite value in {bad} at step {step} (epoch {epoch})")
            opt.step(lr)
            values = loss.values()
            history.append(values)
            rows.append(_format_row(step, epoch, lr, values))
            step += 1
        if csv_path:
            with open(csv_path, "a") as f:
                f.write("\n".join(rows) + "\n")
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs}  total {history[-1]['total']:.4f}  "
                f"ce {history[-1]['ce']:.4f}")
        done = epoch + 1
        if val_set and on_eval is not None and (
                (cfg.eval_every and done % cfg.eval_every == 0) or done == cfg.epochs):
            evals.append((done, on_eval(params, mcfg, val_set)))

    ckpt = Checkpoint(cfg, k, last_epoch, step,
                      {n: t.data.copy() for n, t in params.items()},
                      {n: v.copy() for n, v in opt.velocity.items()})
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.gsck"), ckpt)
    return TrainResult(ckpt, params, mcfg, history, evals)
