"""Multi-seed runners shared by the command line and the acceptance suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import data
from .distill import AUTO, dive_pipeline
from .model import LossSpec, TrainConfig, evaluate, fmt, train

EPSILONS = (0.0, 0.1, 0.2, 0.3, 0.4)

# Desk-scale recipe; weight decay is raised above the CIFAR value so the
# teacher's virtual-example distribution can level out inside tau <= 10.
DESK_CONFIG = TrainConfig(weight_decay=2e-3)


@dataclass
class MethodComparison:
    """Per-seed EvalReports for the CE baseline, the BSCE teacher and the DiVE student."""

    reports: dict = field(default_factory=lambda: {"ce": [], "bsce": [], "dive": []})
    recommendations: list = field(default_factory=list)

    def mean(self, method: str, attr: str = "top1_all") -> float:
        return float(np.mean([getattr(r, attr) for r in self.reports[method]]))


def compare_methods(
    seeds=range(5),
    C=20,
    n_max=200,
    beta=100.0,
    d=32,
    separation=3.0,
    cfg: TrainConfig = DESK_CONFIG,
    hidden=(64,),
    distill_cfg=AUTO,
    alpha=0.5,
) -> MethodComparison:
    out = MethodComparison()
    for seed in seeds:
        train_set, test_set = data.synth_pair(C, n_max, beta, d, separation, seed)
        split = data.split_subsets(train_set.profile)
        seed_cfg = replace(cfg, seed=seed)
        ce, _ = train(train_set, LossSpec("ce"), seed_cfg, hidden=hidden)
        res = dive_pipeline(
            train_set, test_set, seed_cfg, seed_cfg, distill_cfg, alpha=alpha, hidden=hidden, split=split
        )
        out.reports["ce"].append(evaluate(ce, test_set, split))
        out.reports["bsce"].append(res.teacher_report)
        out.reports["dive"].append(res.student_report)
        out.recommendations.append(res.recommendation)
    return out


def binary_experiment(
    n_head=1000,
    n_tail=100,
    epsilons=EPSILONS,
    seeds=range(5),
    d=32,
    separation=2.5,
    cfg: TrainConfig = DESK_CONFIG,
    hidden=(64,),
    test_per_class=500,
) -> list:
    """Label-smoothing sweep on a two-class long-tailed problem.

    Class 0 is the head, class 1 the tail. Each head example gives
    ``epsilon`` of its label mass to the tail class. Returns one dict per
    epsilon with head/tail/all accuracy mean and std over seeds plus the
    virtual-example ratio.
    """
    profile = data.ClassProfile([n_head, n_tail])
    split = data.split_subsets(profile, hi=n_tail, lo=n_tail)
    rows = []
    for eps in epsilons:
        accs = []
        for seed in seeds:
            train_set = data.synth_gaussian_lt(profile, d, separation, seed)
            test_set = data.synth_balanced_test(2, test_per_class, d, separation, seed)
            targets = data.smoothing_targets(train_set.labels, 0, 1, eps)
            params, _ = train(
                train_set, LossSpec("soft", soft_targets=targets.targets), replace(cfg, seed=seed), hidden=hidden
            )
            rep = evaluate(params, test_set, split)
            head, tail = rep.per_class()
            accs.append((head, tail, rep.top1_all))
        accs = np.asarray(accs)
        mean, std = accs.mean(axis=0), accs.std(axis=0)
        rows.append(
            {
                "epsilon": float(eps),
                "ratio": data.virtual_ratio(n_head, n_tail, eps),
                "head_mean": float(mean[0]),
                "head_std": float(std[0]),
                "tail_mean": float(mean[1]),
                "tail_std": float(std[1]),
                "all_mean": float(mean[2]),
                "all_std": float(std[2]),
            }
        )
    return rows


BINARY_COLUMNS = ("epsilon", "ratio", "head_mean", "head_std", "tail_mean", "tail_std", "all_mean", "all_std")


def write_binary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BINARY_COLUMNS)
        for row in rows:
            w.writerow([fmt(row[c]) for c in BINARY_COLUMNS])
