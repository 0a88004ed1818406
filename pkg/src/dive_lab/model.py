"""A small ReLU perceptron with hand-written backprop and an SGD-momentum loop."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mathcore as mc
from .data import Dataset, SubsetSplit

CKPT_MAGIC = b"DIVECK01"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelParams:
    weights: list
    biases: list

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 60
    batch_size: int = 64
    warmup_epochs: int = 3
    decay_milestones: tuple = (40, 50)
    decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_milestones", tuple(int(m) for m in self.decay_milestones))
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        ms = self.decay_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("decay milestones must be strictly increasing")
        if ms and ms[-1] >= self.epochs:
            raise ValueError("decay milestones must be smaller than epochs")


@dataclass
class LossSpec:
    """Training objective: ``ce``, ``bsce``, ``kd``, ``dive`` or ``soft``.

    ``kd`` and ``dive`` read per-example teacher logits from ``teacher_logits``
    (row i belongs to training example i). ``soft`` trains plain softmax cross
    entropy against the fixed per-example distributions in ``soft_targets``.
    """

    kind: str = "ce"
    counts: np.ndarray | None = None
    distill: mc.DistillConfig | None = None
    teacher_logits: np.ndarray | None = None
    soft_targets: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ce", "bsce", "kd", "dive", "soft"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind in ("kd", "dive"):
            if self.teacher_logits is None:
                raise ValueError(f"{self.kind} needs a teacher logits table")
            if self.distill is None:
                self.distill = mc.DistillConfig()
        if self.kind in ("bsce", "dive") and self.counts is None:
            raise ValueError(f"{self.kind} needs class counts")
        if self.kind == "soft" and self.soft_targets is None:
            raise ValueError("soft needs a targets table")

    def batch_loss(self, idx, labels, logits) -> mc.LossValue:
        """Per-example losses and logit gradients for training rows ``idx``."""
        C = logits.shape[1]
        if self.kind == "soft":
            return mc.ce_loss(self.soft_targets[idx], logits)
        y = mc.one_hot(labels, C)
        if self.kind == "ce":
            return mc.ce_loss(y, logits)
        if self.kind == "bsce":
            return mc.bsce_loss(y, logits, self.counts)
        if self.kind == "kd":
            return mc.kd_loss(y, self.teacher_logits[idx], logits, self.distill)
        return mc.dive_loss(y, self.teacher_logits[idx], logits, self.counts, self.distill)


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    acc_all: list = field(default_factory=list)
    acc_many: list = field(default_factory=list)
    acc_medium: list = field(default_factory=list)
    acc_few: list = field(default_factory=list)

    COLUMNS = ("epoch", "lr", "loss", "acc_all", "acc_many", "acc_medium", "acc_few")

    def __len__(self):
        return len(self.epoch)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
                w.writerow([row[0]] + [fmt(v) for v in row[1:]])


@dataclass
class EvalReport:
    top1_all: float
    top1_many: float
    top1_medium: float
    top1_few: float
    confusion: np.ndarray

    def per_class(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        return np.diag(self.confusion) / np.maximum(rows, 1)

    def as_row(self) -> dict:
        return {
            "acc_all": self.top1_all,
            "acc_many": self.top1_many,
            "acc_medium": self.top1_medium,
            "acc_few": self.top1_few,
        }


def fmt(v) -> str:
    """Locale-independent float formatting used in every CSV."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def init_model(layer_sizes, seed: int) -> ModelParams:
    """Gaussian weights scaled by ``1 / sqrt(fan_in)``, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) / math.sqrt(a) for a, b in zip(sizes, sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return ModelParams(weights, biases)


def _forward_cache(params: ModelParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params: ModelParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"feature batch of shape {x.shape} does not match input size {params.weights[0].shape[0]}"
        )
    return _forward_cache(params, x)[-1]


def backward(params: ModelParams, features, dloss_dlogits, weight_decay: float = 0.0):
    """Gradients of ``sum(dloss_dlogits * logits) + wd/2 * sum ||W||^2``.

    Returns ``(weight_grads, bias_grads)`` lists aligned with ``params``.
    """
    x = np.asarray(features, dtype=np.float64)
    g = np.asarray(dloss_dlogits, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError("feature batch does not match the input layer")
    if g.shape != (x.shape[0], params.weights[-1].shape[1]):
        raise ValueError(f"upstream gradient shape {g.shape} does not match the batch")
    acts = _forward_cache(params, x)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ g + weight_decay * params.weights[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (acts[i] > 0)
    return gw, gb


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup over ``warmup_epochs`` then step decay at each milestone."""
    if epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    passed = sum(1 for m in cfg.decay_milestones if epoch >= m)
    return cfg.lr * cfg.decay_factor**passed


def loss_and_grads(params: ModelParams, x, labels, idx, loss_spec: LossSpec, weight_decay=0.0):
    """Mean batch loss (with the L2 penalty) and its parameter gradients."""
    with np.errstate(over="ignore", invalid="ignore"):
        logits = forward(params, x)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("logits overflowed")
    lv = loss_spec.batch_loss(idx, labels, logits)
    n = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(np.mean(lv.value))
        value += 0.5 * weight_decay * sum(float((W * W).sum()) for W in params.weights)
    gw, gb = backward(params, x, lv.grad_logits / n, weight_decay)
    return value, gw, gb


def train(
    dataset: Dataset,
    loss_spec: LossSpec,
    cfg: TrainConfig,
    hidden=(64,),
    params: ModelParams | None = None,
    eval_set: Dataset | None = None,
    split: SubsetSplit | None = None,
):
    """Mini-batch SGD with momentum; returns ``(params, history)``.

    Shuffling and initialization derive from ``cfg.seed`` only, so a run is a
    deterministic function of its inputs. When ``eval_set`` and ``split`` are
    given, each epoch also records test accuracy overall and per subset.
    """
    if loss_spec.teacher_logits is not None and len(loss_spec.teacher_logits) != dataset.n:
        raise ValueError("teacher logits table must have one row per training example")
    if params is None:
        params = init_model([dataset.dim, *hidden, dataset.num_classes], cfg.seed)
    else:
        params = params.copy()
    rng = np.random.default_rng([cfg.seed, 7])
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    history = TrainHistory()
    n = dataset.n
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                value, gw, gb = loss_and_grads(
                    params, dataset.features[idx], dataset.labels[idx], idx, loss_spec, cfg.weight_decay
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}: {exc}") from None
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += value * len(idx)
            for i in range(len(params.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] + gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] + gb[i]
                params.weights[i] -= lr * vel_w[i]
                params.biases[i] -= lr * vel_b[i]
        history.epoch.append(epoch)
        history.lr.append(lr)
        history.loss.append(total / n)
        if eval_set is not None and split is not None:
            rep = evaluate(params, eval_set, split)
            accs = (rep.top1_all, rep.top1_many, rep.top1_medium, rep.top1_few)
        else:
            accs = (math.nan,) * 4
        for name, v in zip(("acc_all", "acc_many", "acc_medium", "acc_few"), accs):
            getattr(history, name).append(v)
    return params, history


def predict(params: ModelParams, features) -> np.ndarray:
    """Top-1 class from the raw logits; ties go to the lowest index."""
    return np.argmax(forward(params, features), axis=1)


def report_from_predictions(labels, preds, num_classes: int, split: SubsetSplit) -> EvalReport:
    labels = np.asarray(labels)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, np.asarray(preds)), 1)
    per_class = np.diag(conf) / np.maximum(conf.sum(axis=1), 1)
    present = conf.sum(axis=1) > 0
    masks = split.masks(num_classes)

    def mean_over(mask):
        m = mask & present
        return float(per_class[m].mean()) if m.any() else math.nan

    return EvalReport(
        top1_all=float(np.trace(conf) / max(labels.size, 1)),
        top1_many=mean_over(masks["many"]),
        top1_medium=mean_over(masks["medium"]),
        top1_few=mean_over(masks["few"]),
        confusion=conf,
    )


def evaluate(params: ModelParams, test: Dataset, split: SubsetSplit) -> EvalReport:
    """Top-1 accuracy overall and averaged per class inside each subset."""
    return report_from_predictions(test.labels, predict(params, test.features), test.num_classes, split)


def write_report_csv(reports: dict, path) -> None:
    """One row per named model: ``model,acc_all,acc_many,acc_medium,acc_few``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "acc_all", "acc_many", "acc_medium", "acc_few"])
        for name, rep in reports.items():
            w.writerow([name] + [fmt(v) for v in rep.as_row().values()])


def save_checkpoint(params: ModelParams, path) -> None:
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(sizes)))
        fh.write(np.asarray(sizes, dtype="<u8").tobytes())
        for W, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.asarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (L,) = struct.unpack_from("<Q", buf, 8)
    off = 16
    sizes = np.frombuffer(buf, dtype="<u8", count=L, offset=off).astype(int).tolist()
    off += 8 * L
    weights, biases = [], []
    for a, b in zip(sizes, sizes[1:]):
        if len(buf) < off + 8 * (a * b + b):
            raise ValueError(f"truncated checkpoint at byte offset {off}")
        weights.append(np.frombuffer(buf, dtype="<f8", count=a * b, offset=off).reshape(a, b).copy())
        off += 8 * a * b
        biases.append(np.frombuffer(buf, dtype="<f8", count=b, offset=off).copy())
        off += 8 * b
    if off != len(buf):
        raise ValueError(f"trailing bytes in checkpoint at byte offset {off}")
    return ModelParams(weights, biases)
