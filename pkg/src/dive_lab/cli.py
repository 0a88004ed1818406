"""``dive-lab`` command line: synth, train, dive, analyze-ve, binary-exp, eval.

Configuration is a flat ``key = value`` file (``--config``) overridden by
``--key=value`` arguments. Exit codes: 0 success, 2 I/O failure,
3 validation failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, data, distill, experiments
from . import mathcore as mc
from . import model as mdl
from . import svgplot

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _floats(s) -> tuple:
    return tuple(float(v) for v in str(s).replace(";", ",").split(",") if v.strip())


def _ints(s) -> tuple:
    return tuple(int(v) for v in str(s).replace(";", ",").split(",") if v.strip())


def _bool(s) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _powers(s) -> tuple:
    v = str(s).strip().lower()
    if v == "both":
        return (False, True)
    return (_bool(v),)


def _tau(s):
    return "auto" if str(s).strip().lower() == "auto" else float(s)


def _default_out() -> str:
    return os.environ.get("DIVE_LAB_OUT", "dive_lab_out")


@dataclass
class ExperimentConfig:
    out: str = ""
    seeds: tuple = (0,)
    # dataset
    num_classes: int = 20
    n_max: int = 200
    beta: float = 100.0
    dim: int = 32
    separation: float = 3.0
    test_per_class: int = 50
    train_data: str = ""
    test_data: str = ""
    # network and optimizer
    hidden: tuple = (64,)
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = experiments.DESK_CONFIG.weight_decay
    epochs: int = 60
    batch_size: int = 64
    warmup_epochs: int = 3
    decay_milestones: tuple = (40, 50)
    decay_factor: float = 0.1
    # distillation
    alpha: float = 0.5
    tau: object = "auto"
    power_p: float = 0.5
    target_form: str = "t_tau"
    bsce_term: bool = True
    teacher_adjusted: bool = False
    baseline_ce: bool = True
    # analysis
    checkpoint: str = ""
    tau_grid: tuple = distill.DEFAULT_TAU_GRID
    power: tuple = (False, True)
    # binary smoothing experiment
    n_head: int = 1000
    n_tail: int = 100
    epsilons: tuple = experiments.EPSILONS
    binary_separation: float = 2.5
    binary_test_per_class: int = 500

    def __post_init__(self):
        if not self.out:
            self.out = _default_out()
        if not self.seeds:
            raise ValueError("seeds must not be empty")

    def train_config(self, seed: int) -> mdl.TrainConfig:
        return mdl.TrainConfig(
            lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay, epochs=self.epochs,
            batch_size=self.batch_size, warmup_epochs=self.warmup_epochs,
            decay_milestones=self.decay_milestones, decay_factor=self.decay_factor, seed=seed,
        )

    def distill_config(self):
        if self.tau == "auto":
            return distill.AUTO
        return mc.DistillConfig(self.alpha, float(self.tau), self.power_p, self.target_form, self.bsce_term)

    def seed_dir(self, seed: int) -> Path:
        return Path(self.out) / f"seed_{seed}"

    def snapshot(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


_PARSERS = {
    "seeds": _ints, "hidden": _ints, "decay_milestones": _ints, "tau_grid": _floats,
    "epsilons": _floats, "power": _powers, "tau": _tau, "bsce_term": _bool,
    "teacher_adjusted": _bool, "baseline_ce": _bool,
}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def build_config(pairs: dict) -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if key in _PARSERS:
            kwargs[key] = _PARSERS[key](raw)
        else:
            default = known[key].default
            kwargs[key] = type(default)(raw) if not isinstance(default, str) else str(raw)
    return ExperimentConfig(**kwargs)


def _overrides(extra: list) -> dict:
    out = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise ValueError(f"unrecognized argument {arg!r}; overrides look like --key=value")
        k, v = arg[2:].split("=", 1)
        out[k.replace("-", "_")] = v
    return out


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to output directory {path}: {exc}", EXIT_IO) from None
    return path


def _load(path) -> data.Dataset:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"dataset not found: {p}", EXIT_VALIDATION)
    try:
        return data.load_dataset(p)
    except data.DatasetFormatError as exc:
        raise CliError(f"{p}: {exc}", EXIT_VALIDATION) from None


def _datasets(cfg: ExperimentConfig, seed: int):
    sd = cfg.seed_dir(seed)
    train_set = _load(cfg.train_data or sd / "train.dsb")
    test_set = _load(cfg.test_data or sd / "test.dsb")
    if train_set.dim != test_set.dim or train_set.num_classes != test_set.num_classes:
        raise CliError("train and test datasets disagree on feature dimension or class count", EXIT_VALIDATION)
    return train_set, test_set


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


class Manifest:
    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.artifacts = {}
        self.timings = {}

    def add(self, key, *paths):
        self.artifacts.setdefault(str(key), []).extend(str(p) for p in paths)

    def write(self) -> Path:
        missing = [p for ps in self.artifacts.values() for p in ps if not Path(p).exists()]
        if missing:
            raise CliError(f"artifacts missing at manifest time: {missing}", EXIT_IO)
        path = Path(self.cfg.out) / f"manifest_{self.command.replace('-', '_')}.json"
        body = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.snapshot(),
            "artifacts": self.artifacts,
            "timings_s": self.timings,
        }
        _write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


def _run_seeds(fn, cfg: ExperimentConfig, jobs: int, manifest: Manifest):
    results = {}
    if jobs > 1 and len(cfg.seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {s: pool.submit(fn, cfg, s) for s in cfg.seeds}
            for s in cfg.seeds:
                results[s] = futs[s].result()
    else:
        for s in cfg.seeds:
            results[s] = fn(cfg, s)
    for s in cfg.seeds:
        paths, elapsed, _ = results[s]
        manifest.add(f"seed_{s}", *paths)
        manifest.timings[f"seed_{s}"] = round(elapsed, 3)
    return {s: r[2] for s, r in results.items()}


# ---------------------------------------------------------------- synth


def _synth_one(cfg: ExperimentConfig, seed: int):
    t0 = time.perf_counter()
    sd = _mkdir(cfg.seed_dir(seed))
    try:
        profile = data.exp_profile(cfg.num_classes, cfg.n_max, cfg.beta)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    train_set = data.synth_gaussian_lt(profile, cfg.dim, cfg.separation, seed)
    test_set = data.synth_balanced_test(cfg.num_classes, cfg.test_per_class, cfg.dim, cfg.separation, seed)
    paths = [sd / "train.dsb", sd / "test.dsb", sd / "profile.csv"]
    data.save_dataset(train_set, paths[0])
    data.save_dataset(test_set, paths[1])
    data.write_profile_csv(profile, paths[2])
    return paths, time.perf_counter() - t0, None


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    _mkdir(Path(cfg.out))
    manifest = Manifest("synth", cfg)
    _run_seeds(_synth_one, cfg, args.jobs, manifest)
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------- train


def _train_one(cfg: ExperimentConfig, seed: int, loss: str):
    t0 = time.perf_counter()
    train_set, test_set = _datasets(cfg, seed)
    split = data.split_subsets(train_set.profile)
    spec = mdl.LossSpec(loss, counts=train_set.profile.counts if loss == "bsce" else None)
    params, hist = mdl.train(
        train_set, spec, cfg.train_config(seed), hidden=cfg.hidden, eval_set=test_set, split=split
    )
    od = _mkdir(cfg.seed_dir(seed) / loss)
    paths = [od / "model.ckpt", od / "history.csv", od / "report.csv", od / "confusion.csv"]
    rep = mdl.evaluate(params, test_set, split)
    mdl.save_checkpoint(params, paths[0])
    hist.to_csv(paths[1])
    mdl.write_report_csv({loss: rep}, paths[2])
    _write_confusion(rep, paths[3])
    return paths, time.perf_counter() - t0, rep


def _write_confusion(rep: mdl.EvalReport, path: Path) -> None:
    C = rep.confusion.shape[0]
    lines = ["true\\pred," + ",".join(str(k) for k in range(C))]
    lines += [f"{k}," + ",".join(str(int(v)) for v in row) for k, row in enumerate(rep.confusion)]
    _write_text(path, "\n".join(lines) + "\n")


class _TrainJob:
    def __init__(self, loss):
        self.loss = loss

    def __call__(self, cfg, seed):
        return _train_one(cfg, seed, self.loss)


def _write_summary(path: Path, per_seed: dict) -> None:
    """Per-seed and mean rows: ``seed,model,acc_all,acc_many,acc_medium,acc_few``."""
    rows = ["seed,model,acc_all,acc_many,acc_medium,acc_few"]
    models = list(next(iter(per_seed.values())))
    for seed, reps in per_seed.items():
        for name in models:
            rows.append(",".join([str(seed), name] + [mdl.fmt(v) for v in reps[name].as_row().values()]))
    for name in models:
        vals = np.array([list(per_seed[s][name].as_row().values()) for s in per_seed], dtype=float)
        rows.append(",".join(["mean", name] + [mdl.fmt(v) for v in vals.mean(axis=0)]))
    _write_text(path, "\n".join(rows) + "\n")


def cmd_train(cfg: ExperimentConfig, args) -> int:
    _mkdir(Path(cfg.out))
    manifest = Manifest(f"train_{args.loss}", cfg)
    reps = _run_seeds(_TrainJob(args.loss), cfg, args.jobs, manifest)
    summary = Path(cfg.out) / f"summary_{args.loss}.csv"
    _write_summary(summary, {s: {args.loss: r} for s, r in reps.items()})
    manifest.add("summary", summary)
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------- dive


def _dive_one(cfg: ExperimentConfig, seed: int):
    t0 = time.perf_counter()
    train_set, test_set = _datasets(cfg, seed)
    split = data.split_subsets(train_set.profile)
    tcfg = cfg.train_config(seed)
    try:
        dcfg = cfg.distill_config()
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    res = distill.dive_pipeline(
        train_set, test_set, tcfg, tcfg, dcfg, alpha=cfg.alpha, hidden=cfg.hidden,
        tau_grid=cfg.tau_grid, split=split, teacher_adjusted=cfg.teacher_adjusted,
    )
    od = _mkdir(cfg.seed_dir(seed) / "dive")
    reports = {}
    paths = []
    if cfg.baseline_ce:
        ce, ce_hist = mdl.train(
            train_set, mdl.LossSpec("ce"), tcfg, hidden=cfg.hidden, eval_set=test_set, split=split
        )
        reports["ce"] = mdl.evaluate(ce, test_set, split)
        paths += [od / "ce.ckpt", od / "ce_history.csv"]
        mdl.save_checkpoint(ce, paths[-2])
        ce_hist.to_csv(paths[-1])
    reports["bsce"] = res.teacher_report
    reports["dive"] = res.student_report
    named = {
        "teacher.ckpt": lambda p: mdl.save_checkpoint(res.teacher, p),
        "student.ckpt": lambda p: mdl.save_checkpoint(res.student, p),
        "teacher_history.csv": res.teacher_history.to_csv,
        "student_history.csv": res.student_history.to_csv,
        "report.csv": lambda p: mdl.write_report_csv(reports, p),
        "scan.csv": lambda p: distill.write_scan_csv(res.recommendation.scan_table, p),
        "distill.csv": lambda p: _write_distill_choice(res, p),
    }
    for name, write in named.items():
        write(od / name)
        paths.append(od / name)
    return paths, time.perf_counter() - t0, reports


def _write_distill_choice(res: distill.PipelineResult, path: Path) -> None:
    c = res.distill_cfg
    rec = res.recommendation
    lines = [
        "alpha,student_tau,power_p,teacher_tau,target_form,bsce_term,rule_tau,rule_power,rule_met",
        ",".join([
            mdl.fmt(c.alpha), mdl.fmt(c.tau), mdl.fmt(c.power_p), mdl.fmt(c.teacher_tau), c.target_form.value,
            str(int(c.bsce_term)), mdl.fmt(rec.tau), str(int(rec.power)), str(int(rec.criterion_met)),
        ]),
    ]
    _write_text(path, "\n".join(lines) + "\n")


def cmd_dive(cfg: ExperimentConfig, args) -> int:
    if args.auto_tau is not None:
        cfg = replace(cfg, tau="auto" if args.auto_tau else (3.0 if cfg.tau == "auto" else cfg.tau))
    _mkdir(Path(cfg.out))
    manifest = Manifest("dive", cfg)
    reps = _run_seeds(_dive_one, cfg, args.jobs, manifest)
    summary = Path(cfg.out) / "summary_dive.csv"
    _write_summary(summary, reps)
    manifest.add("summary", summary)
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------- analyze-ve


def cmd_analyze_ve(cfg: ExperimentConfig, args) -> int:
    seed = cfg.seeds[0]
    ckpt = Path(cfg.checkpoint or cfg.seed_dir(seed) / "dive" / "teacher.ckpt")
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}", EXIT_VALIDATION)
    try:
        params = mdl.load_checkpoint(ckpt)
    except ValueError as exc:
        raise CliError(f"{ckpt}: {exc}", EXIT_VALIDATION) from None
    train_set = _load(cfg.train_data or cfg.seed_dir(seed) / "train.dsb")
    sizes = params.layer_sizes
    if sizes[0] != train_set.dim or sizes[-1] != train_set.num_classes:
        raise CliError(
            f"checkpoint layers {sizes} do not fit data with d={train_set.dim}, C={train_set.num_classes}",
            EXIT_VALIDATION,
        )
    od = _mkdir(Path(cfg.out) / "analysis")
    manifest = Manifest("analyze-ve", cfg)
    t0 = time.perf_counter()
    z = mdl.forward(params, train_set.features)
    if cfg.teacher_adjusted:
        counts = train_set.profile.counts
        z = z + np.log(counts / counts.max())
    split = data.split_subsets(train_set.profile)
    table = []
    bars = {"input": train_set.profile.counts.astype(float)}
    for tau in cfg.tau_grid:
        for power in sorted(set(cfg.power)):
            hist = distill.virtual_distribution(z, tau, power)
            table.append((float(tau), power, distill.flatness(hist, split, train_set.profile)))
            path = od / f"hist_tau{tau:g}_p{int(power)}.csv"
            distill.write_histogram_csv(hist, train_set.profile, path)
            manifest.add("histograms", path)
            bars[f"tau={tau:g}{' +pow' if power else ''}"] = hist.per_class
    distill.write_scan_csv(table, od / "flatness.csv")
    rec = distill.select_tau(z, split, train_set.profile, cfg.tau_grid, cfg.power)
    _write_text(
        od / "recommendation.csv",
        "teacher_tau,power,student_tau,criterion_met\n"
        f"{mdl.fmt(rec.tau)},{int(rec.power)},{mdl.fmt(rec.student_tau)},{int(rec.criterion_met)}\n",
    )
    shown = dict(list(bars.items())[: len(svgplot.PALETTE)])
    _write_text(od / "virtual_examples.svg", svgplot.bar_chart(shown, title="Virtual example distribution"))
    manifest.add("analysis", od / "flatness.csv", od / "recommendation.csv", od / "virtual_examples.svg")
    manifest.timings["analysis"] = round(time.perf_counter() - t0, 3)
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------- binary-exp


def cmd_binary_exp(cfg: ExperimentConfig, args) -> int:
    if not cfg.n_head >= cfg.n_tail >= 1:
        raise CliError("binary experiment needs n_head >= n_tail >= 1", EXIT_VALIDATION)
    od = _mkdir(Path(cfg.out) / "binary")
    manifest = Manifest("binary-exp", cfg)
    t0 = time.perf_counter()
    try:
        rows = experiments.binary_experiment(
            cfg.n_head, cfg.n_tail, cfg.epsilons, cfg.seeds, cfg.dim, cfg.binary_separation,
            cfg.train_config(0), cfg.hidden, cfg.binary_test_per_class,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    csv_path = od / f"binary_{cfg.n_head}vs{cfg.n_tail}.csv"
    experiments.write_binary_csv(rows, csv_path)
    eps = [r["epsilon"] for r in rows]
    svg = svgplot.line_chart(
        eps,
        {k: [100 * r[f"{k}_mean"] for r in rows] for k in ("head", "tail", "all")},
        {k: [100 * r[f"{k}_std"] for r in rows] for k in ("head", "tail", "all")},
        title=f"{cfg.n_head} vs. {cfg.n_tail}", xlabel="epsilon", ylabel="accuracy (%)",
    )
    svg_path = od / f"binary_{cfg.n_head}vs{cfg.n_tail}.svg"
    _write_text(svg_path, svg)
    manifest.add("binary", csv_path, svg_path)
    manifest.timings["binary"] = round(time.perf_counter() - t0, 3)
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    seed = cfg.seeds[0]
    if not cfg.checkpoint:
        raise CliError("eval needs --checkpoint=PATH", EXIT_VALIDATION)
    ckpt = Path(cfg.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}", EXIT_VALIDATION)
    try:
        params = mdl.load_checkpoint(ckpt)
    except ValueError as exc:
        raise CliError(f"{ckpt}: {exc}", EXIT_VALIDATION) from None
    train_set, test_set = _datasets(cfg, seed)
    sizes = params.layer_sizes
    if sizes[0] != test_set.dim or sizes[-1] != test_set.num_classes:
        raise CliError(f"checkpoint layers {sizes} do not fit the test data", EXIT_VALIDATION)
    rep = mdl.evaluate(params, test_set, data.split_subsets(train_set.profile))
    od = _mkdir(Path(cfg.out) / "eval")
    mdl.write_report_csv({ckpt.stem: rep}, od / f"{ckpt.stem}_report.csv")
    _write_confusion(rep, od / f"{ckpt.stem}_confusion.csv")
    manifest = Manifest("eval", cfg)
    manifest.add("eval", od / f"{ckpt.stem}_report.csv", od / f"{ckpt.stem}_confusion.csv")
    manifest.write()
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "dive": cmd_dive,
    "analyze-ve": cmd_analyze_ve,
    "binary-exp": cmd_binary_exp,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dive-lab",
        description="Long-tailed distillation laboratory. Extra --key=value arguments override config keys.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--jobs", type=int, default=1, help="seeds to run in parallel")
        if name == "train":
            sp.add_argument("--loss", choices=("ce", "bsce"), default="ce")
        if name == "dive":
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--auto-tau", dest="auto_tau", action="store_true", default=None)
            g.add_argument("--no-auto-tau", dest="auto_tau", action="store_false")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        pairs = {}
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise CliError(f"cannot read config {args.config}: {exc}", EXIT_VALIDATION) from None
            pairs.update(parse_config_text(text))
        pairs.update(_overrides(extra))
        try:
            cfg = build_config(pairs)
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid configuration: {exc}", EXIT_VALIDATION) from None
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"dive-lab: error: {exc}", file=sys.stderr)
        return exc.code
    except mdl.TrainingDiverged as exc:
        print(f"dive-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dive-lab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dive-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
