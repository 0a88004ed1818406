"""Virtual-example histograms, the temperature rule of thumb and the DiVE pipeline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import mathcore as mc
from .data import ClassProfile, Dataset, SubsetSplit, split_subsets
from .model import (
    EvalReport,
    LossSpec,
    ModelParams,
    TrainConfig,
    TrainHistory,
    evaluate,
    fmt,
    forward,
    train,
)

POWER_P = 0.5
DEFAULT_TAU_GRID = tuple(float(t) for t in range(1, 11))
AUTO = "auto"


@dataclass
class VirtualHistogram:
    per_class: np.ndarray
    tau: float
    power_p: float
    total: float

    @property
    def normalized(self) -> np.ndarray:
        return self.per_class / self.total


@dataclass
class FlatnessReport:
    mean_many: float
    mean_medium: float
    mean_few: float
    entropy: float
    kl_to_uniform: float


@dataclass
class TauRecommendation:
    """Outcome of the temperature scan.

    ``tau`` is the teacher's effective temperature, ``student_tau`` the
    temperature applied to both sides of the KL term (they differ by the
    power exponent when power normalization is on).
    """

    tau: float
    power: bool
    student_tau: float
    scan_table: list
    criterion_met: bool = True

    def distill_config(self, alpha: float = 0.5, **kw) -> mc.DistillConfig:
        return mc.DistillConfig(
            alpha=alpha, tau=self.student_tau, power_p=POWER_P if self.power else 1.0, **kw
        )


def teacher_targets(teacher_logits, tau: float, power: bool) -> np.ndarray:
    """Per-example teacher distributions ``t^tau``, optionally power-normalized."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    t = mc.softmax_temp(np.atleast_2d(teacher_logits), tau)
    return mc.power_normalize(t, POWER_P) if power else t


def virtual_distribution(teacher_logits, tau: float, power: bool) -> VirtualHistogram:
    """Sum of the per-example teacher distributions, one virtual count per class."""
    z = np.asarray(teacher_logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("virtual_distribution needs at least one example")
    t = teacher_targets(z, tau, power)
    per_class = t.sum(axis=0)
    return VirtualHistogram(per_class, float(tau), POWER_P if power else 1.0, float(t.shape[0]))


def flatness(hist: VirtualHistogram, split: SubsetSplit, profile: ClassProfile | None = None) -> FlatnessReport:
    """Subset means of the histogram plus entropy and KL to uniform of ``V / total``.

    ``profile`` is accepted for signature symmetry with the subset split; the
    report depends only on the histogram and the split.
    """
    V = np.asarray(hist.per_class, dtype=np.float64)
    C = V.size

    def mean_of(members):
        idx = sorted(members)
        return float(V[idx].mean()) if idx else math.nan

    q = V / V.sum()
    H = float(mc.entropy(q))
    return FlatnessReport(
        mean_many=mean_of(split.many),
        mean_medium=mean_of(split.medium),
        mean_few=mean_of(split.few),
        entropy=H,
        kl_to_uniform=max(math.log(C) - H, 0.0),
    )


def select_tau(
    teacher_logits,
    split: SubsetSplit,
    profile: ClassProfile | None = None,
    tau_grid=DEFAULT_TAU_GRID,
    power_options=(False, True),
) -> TauRecommendation:
    """Scan ``(tau, power)`` and keep the first setting whose tail mean reaches the head mean.

    The scan runs over ``tau_grid`` in the given order; at each temperature
    the no-power option is tried before the power option. If nothing
    qualifies, the setting with the largest ``mean_few / mean_many`` wins.
    Only teacher outputs are transformed; nothing is trained.
    """
    tau_grid = list(tau_grid)
    power_options = sorted(set(bool(p) for p in power_options))
    if not tau_grid or not power_options:
        raise ValueError("tau grid and power options must be non-empty")
    table = []
    chosen = None
    for tau in tau_grid:
        for power in power_options:
            rep = flatness(virtual_distribution(teacher_logits, tau, power), split, profile)
            table.append((float(tau), power, rep))
            if chosen is None and rep.mean_few >= rep.mean_many:
                chosen = (float(tau), power)
    met = chosen is not None
    if not met:
        best = max(table, key=lambda row: _tail_head_ratio(row[2]))
        chosen = (best[0], best[1])
    tau, power = chosen
    teacher_tau = tau / POWER_P if power else tau
    return TauRecommendation(teacher_tau, power, tau, table, met)


def _tail_head_ratio(rep: FlatnessReport) -> float:
    if not rep.mean_many > 0:
        return math.inf
    return rep.mean_few / rep.mean_many


def write_scan_csv(table, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "power", "mean_many", "mean_medium", "mean_few", "entropy", "kl_to_uniform"])
        for tau, power, rep in table:
            w.writerow(
                [fmt(tau), int(power), fmt(rep.mean_many), fmt(rep.mean_medium), fmt(rep.mean_few),
                 fmt(rep.entropy), fmt(rep.kl_to_uniform)]
            )


def write_histogram_csv(hist: VirtualHistogram, profile: ClassProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "count", "virtual_count"])
        for k, (c, v) in enumerate(zip(profile.counts, hist.per_class)):
            w.writerow([k, int(c), fmt(v)])


@dataclass
class PipelineResult:
    teacher: ModelParams
    student: ModelParams
    distill_cfg: mc.DistillConfig
    teacher_report: EvalReport
    student_report: EvalReport
    teacher_history: TrainHistory
    student_history: TrainHistory
    recommendation: TauRecommendation | None = None
    extras: dict = field(default_factory=dict)


def dive_pipeline(
    train_set: Dataset,
    test_set: Dataset,
    teacher_cfg: TrainConfig,
    student_cfg: TrainConfig,
    distill_cfg: mc.DistillConfig | str = AUTO,
    alpha: float = 0.5,
    hidden=(64,),
    tau_grid=DEFAULT_TAU_GRID,
    split: SubsetSplit | None = None,
    teacher_adjusted: bool = False,
) -> PipelineResult:
    """Train a BSCE teacher, pick a temperature, then distill into a student.

    With ``distill_cfg == "auto"`` the temperature and power option come from
    :func:`select_tau` and ``alpha`` is used for the loss weight. Teacher
    logits are the raw network outputs unless ``teacher_adjusted`` is set, in
    which case ``log(n_k / n_max)`` is added to them first.
    """
    if train_set.dim != test_set.dim or train_set.num_classes != test_set.num_classes:
        raise ValueError("training and test sets disagree on feature dimension or classes")
    split = split or split_subsets(train_set.profile)
    counts = train_set.profile.counts
    teacher, t_hist = train(
        train_set, LossSpec("bsce", counts=counts), teacher_cfg, hidden=hidden,
        eval_set=test_set, split=split,
    )
    z = forward(teacher, train_set.features)
    if teacher_adjusted:
        z = z + np.log(counts / counts.max())
    rec = select_tau(z, split, train_set.profile, tau_grid)
    if isinstance(distill_cfg, str):
        if distill_cfg != AUTO:
            raise ValueError(f"distill_cfg must be a DistillConfig or {AUTO!r}")
        distill_cfg = rec.distill_config(alpha)
    student, s_hist = train(
        train_set,
        LossSpec("dive", counts=counts, distill=distill_cfg, teacher_logits=z),
        student_cfg,
        hidden=hidden,
        eval_set=test_set,
        split=split,
    )
    return PipelineResult(
        teacher=teacher,
        student=student,
        distill_cfg=distill_cfg,
        teacher_report=evaluate(teacher, test_set, split),
        student_report=evaluate(student, test_set, split),
        teacher_history=t_hist,
        student_history=s_hist,
        recommendation=rec,
    )
