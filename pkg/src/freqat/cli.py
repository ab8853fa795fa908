"""Command-line entry point: ``freqat <command> [flags]``.

Commands: ``train``, ``eval``, ``lpf-sweep``, ``spectra``, ``kernels``.
Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags (highest precedence).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import analysis, data, training
from . import model as M
from .attacks import CROSS_ENTROPY, CW_MARGIN, AttackConfig
from .io import csv_bytes, write_atomic

OUT_DIR_ENV = "FR_OUT_DIR"
ATTACKS = ("none", "fgsm", "pgd", "cw")
COMMANDS = ("train", "eval", "lpf-sweep", "spectra", "kernels")
_ALL = set(COMMANDS)
_EVALS = {"eval", "lpf-sweep", "spectra", "kernels"}
_ATTACKING = {"eval", "lpf-sweep", "spectra"}


class ConfigError(ValueError):
    pass


def parse_fraction(text: str) -> float:
    """Parse ``0.03``, ``8/255`` or ``1e-3`` to the nearest float."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number or fraction: {text!r}") from None


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


def parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def parse_optional_str(text: str) -> Optional[str]:
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass(frozen=True)
class Option:
    key: str  # flag name without dashes == config-file key
    parse: Callable[[str], Any]
    default: Any
    help: str
    commands: frozenset = frozenset(_ALL)
    is_flag: bool = False  # boolean switch with a --no- form
    choices: Optional[tuple] = None
    shown: Optional[str] = None  # default as displayed in --help, when not str(default)

    @property
    def dest(self) -> str:
        return self.key.replace("-", "_")


def _fmt_default(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


OPTIONS: tuple[Option, ...] = (
    Option("seed", int, 0, "seed for init, shuffling and attack noise"),
    Option("out", str, "runs", f"output directory; env {OUT_DIR_ENV} replaces the default"),
    Option("workers", int, 1, "worker threads for batch loops; results do not depend on it"),
    Option("data", parse_optional_str, None, "CIFAR-10 binary directory"),
    Option("synth", parse_bool, False, "use the synthetic sinusoid dataset", is_flag=True),
    Option("synth-classes", int, 10, "classes in the synthetic dataset"),
    Option("data-seed", int, 0, "seed for dataset subsetting and the train/val split"),
    Option("per-class", int, 500, "training examples per class", frozenset({"train"})),
    Option("split-ratio", parse_fraction, 0.9, "train share of the train/val split",
           frozenset({"train"})),
    Option("test-per-class", int, 100, "test examples per class", frozenset(_EVALS)),
    Option("epochs", int, 20, "training epochs", frozenset({"train"})),
    Option("batch-size", int, 128, "minibatch size", frozenset({"train"})),
    Option("lr", parse_fraction, 0.01, "initial learning rate", frozenset({"train"})),
    Option("momentum", parse_fraction, 0.9, "SGD momentum", frozenset({"train"})),
    Option("weight-decay", parse_fraction, 5e-4, "L2 weight decay", frozenset({"train"})),
    Option("lambda", parse_fraction, 0.1, "frequency-regularization coefficient",
           frozenset({"train"})),
    Option("fr-softmax", parse_bool, False, "regularize softmax outputs instead of logits",
           frozenset({"train"}), is_flag=True),
    Option("natural", parse_bool, False, "natural training (no attack, no regularizer)",
           frozenset({"train"}), is_flag=True),
    Option("train-steps", int, 10, "PGD steps of the training attack", frozenset({"train"})),
    Option("val-steps", int, 20, "PGD steps for validation robust accuracy",
           frozenset({"train"})),
    Option("swa", parse_bool, True, "keep a weight average from the first LR drop",
           frozenset({"train"}), is_flag=True),
    Option("swa-start", parse_optional_int, None, "first SWA epoch; none means the first LR drop",
           frozenset({"train"})),
    Option("timing", parse_bool, False, "also write wall-clock seconds per epoch to timing.csv",
           frozenset({"train"}), is_flag=True),
    Option("flip", parse_bool, False, "random horizontal flips during training",
           frozenset({"train"}), is_flag=True),
    Option("ckpt", parse_optional_str, None, "checkpoint to load", frozenset(_EVALS)),
    Option("attack", str, "pgd", "evaluation attack: none, fgsm, pgd or cw",
           frozenset({"eval"}), choices=ATTACKS),
    Option("steps", int, 20, "attack steps", frozenset(_ATTACKING)),
    Option("eps", parse_fraction, 8 / 255, "L-inf radius; fractions like 8/255 are accepted",
           frozenset(_ATTACKING | {"train"}), shown="8/255"),
    Option("alpha", parse_fraction, 2 / 255, "attack step size",
           frozenset(_ATTACKING | {"train"}), shown="2/255"),
    Option("random-start", parse_bool, True, "uniform random start inside the ball",
           frozenset(_ATTACKING | {"train"}), is_flag=True),
    Option("csv", parse_optional_str, None, "append the result row to this CSV",
           frozenset({"eval"})),
    Option("bands", parse_int_list, (32, 28, 24, 20, 16), "LPF bandwidths, decreasing",
           frozenset({"lpf-sweep"})),
    Option("adaptive", parse_bool, False, "re-attack through the filter at each bandwidth",
           frozenset({"lpf-sweep"}), is_flag=True),
    Option("count", int, 100, "number of test images", frozenset({"spectra"})),
)
OPTION_BY_KEY = {o.key: o for o in OPTIONS}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {o.dest: o.default for o in OPTIONS})

    def __getattr__(self, name: str):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def train_config(self) -> training.TrainConfig:
        v = self.values
        atk = None if v["natural"] else self.attack_config(v["train_steps"], CROSS_ENTROPY)
        return training.TrainConfig(
            epochs=v["epochs"], batch_size=v["batch_size"], lr0=v["lr"],
            momentum=v["momentum"], weight_decay=v["weight_decay"],
            fr_lambda=0.0 if v["natural"] else v["lambda"], fr_on_softmax=v["fr_softmax"],
            train_attack=atk, val_attack=self.attack_config(v["val_steps"], CROSS_ENTROPY),
            swa_enabled=v["swa"], swa_start=v["swa_start"], augment_flip=v["flip"],
            seed=v["seed"], workers=v["workers"],
        )

    def attack_config(self, steps: int, loss_kind: str) -> AttackConfig:
        return AttackConfig(self.eps, self.alpha, steps, self.random_start, loss_kind)


def default_config() -> RunConfig:
    cfg = RunConfig()
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        cfg.values["out"] = env_out
    return cfg


def parse_config(path: str | os.PathLike, base: Optional[RunConfig] = None) -> RunConfig:
    """Read ``key = value`` lines ('#' starts a comment) on top of ``base``."""
    cfg = base or default_config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        opt = OPTION_BY_KEY.get(key.replace("_", "-"))
        if opt is None:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            parsed = opt.parse(value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {e}") from None
        if opt.choices and parsed not in opt.choices:
            raise ConfigError(f"{path}:{lineno}: {key!r} must be one of {opt.choices}")
        cfg.values[opt.dest] = parsed
    return cfg


# -- argument parsing ----------------------------------------------------------


def _arg_type(opt: Option):
    def conv(text: str):
        try:
            return opt.parse(text)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None

    conv.__name__ = opt.key
    return conv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqat",
        description="Frequency-regularized adversarial training toolkit.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "train": "train a model (natural, PGD-AT, or PGD-AT with frequency regularization)",
        "eval": "clean or adversarial accuracy of a checkpoint",
        "lpf-sweep": "accuracy under low-pass filtered inputs",
        "spectra": "spectral difference maps of natural vs adversarial inputs",
        "kernels": "first-layer kernel smoothness",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                       help="key = value file applied before flags")
        for opt in OPTIONS:
            if name not in opt.commands:
                continue
            shown = opt.shown if opt.shown is not None else _fmt_default(opt.default)
            text = f"{opt.help} (default: {shown})"
            if opt.is_flag:
                p.add_argument(f"--{opt.key}", dest=opt.dest, default=argparse.SUPPRESS,
                               action=argparse.BooleanOptionalAction, help=text)
            else:
                p.add_argument(f"--{opt.key}", dest=opt.dest, default=argparse.SUPPRESS,
                               type=_arg_type(opt), choices=opt.choices,
                               metavar=opt.key.upper().replace("-", "_"), help=text)
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = default_config()
    ns = vars(args)
    if "config" in ns:
        cfg = parse_config(ns["config"], cfg)
    for opt in OPTIONS:
        if opt.dest in ns:
            cfg.values[opt.dest] = ns[opt.dest]
    return cfg


# -- datasets --------------------------------------------------------------------


def _train_val(cfg: RunConfig) -> tuple[data.Dataset, data.Dataset]:
    if cfg.synth:
        full = data.synth_dataset(cfg.per_class, cfg.synth_classes, cfg.data_seed)
    elif cfg.data:
        full = data.take_subset(data.load_cifar10(cfg.data, "train"), cfg.per_class, cfg.data_seed)
    else:
        raise ConfigError("no data: pass --data DIR or --synth")
    return data.split(full, cfg.split_ratio, cfg.data_seed)


def _test_set(cfg: RunConfig) -> data.Dataset:
    if cfg.synth:
        return data.synth_dataset(cfg.test_per_class, cfg.synth_classes, cfg.data_seed,
                                  holdout=True)
    if cfg.data:
        return data.take_subset(data.load_cifar10(cfg.data, "test"), cfg.test_per_class,
                                cfg.data_seed)
    raise ConfigError("no data: pass --data DIR or --synth")


def _load_ckpt(cfg: RunConfig) -> M.ModelParams:
    if not cfg.ckpt:
        raise ConfigError("--ckpt is required")
    params, _ = M.load_checkpoint(cfg.ckpt)
    return params


def _eval_attack(cfg: RunConfig, kind: str) -> Optional[AttackConfig]:
    if kind == "none":
        return None
    if kind == "fgsm":
        # one full-size signed step from the clean point, identical to FGSM
        return AttackConfig(cfg.eps, cfg.eps, 1, False, CROSS_ENTROPY)
    return cfg.attack_config(cfg.steps, CW_MARGIN if kind == "cw" else CROSS_ENTROPY)


def _meta(cfg: RunConfig, *keys: str) -> str:
    return ";".join(f"{k}={_fmt_default(cfg.values[k])}" for k in ("seed", *keys))


# -- commands --------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    tcfg = cfg.train_config()
    train_set, val_set = _train_val(cfg)
    out = Path(cfg.out)
    mode = "natural" if cfg.natural else f"pgd{cfg.train_steps} lambda={cfg.values['lambda']}"
    print(f"train: {len(train_set)} train / {len(val_set)} val, {mode}, seed={cfg.seed}")

    def report(row: training.MetricsRow):
        print(
            f"epoch {row.epoch:3d}/{tcfg.epochs} lr={row.learning_rate:.4g} "
            f"loss={row.train_loss:.4f} std_acc={row.standard_acc:.4f} "
            f"rob_acc={row.robust_acc:.4f} ({row.wall_seconds:.1f}s)",
            flush=True,
        )

    result = training.train(tcfg, train_set, val_set, on_epoch=report)
    meta = _meta(cfg, "epochs", "lambda", "natural", "train_steps", "eps", "alpha")
    write_atomic(out / "metrics.csv", training.metrics_csv(result.metrics, cfg.seed))
    if cfg.timing:
        # the only output that differs between identical runs, hence opt-in
        write_atomic(out / "timing.csv", training.timing_csv(result.metrics, cfg.seed))
    M.save_checkpoint(result.final, out / "final.ckpt", meta)
    if result.swa is not None:
        M.save_checkpoint(result.swa, out / "swa.ckpt", meta + ";swa=1")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    params = _load_ckpt(cfg)
    test = _test_set(cfg)
    atk = _eval_attack(cfg, cfg.attack)
    acc, loss = training.evaluate(params, test, atk, cfg.seed, cfg.workers)
    label = cfg.attack if atk is None or cfg.attack == "fgsm" else f"{cfg.attack}-{cfg.steps}"
    print(f"{label}: accuracy={acc:.4f} mean_loss={loss:.6f} (n={len(test)}, seed={cfg.seed})")
    if cfg.csv:
        header = ["ckpt", "attack", "steps", "eps", "alpha", "accuracy", "mean_loss"]
        row = [cfg.ckpt, cfg.attack, cfg.steps, cfg.eps, cfg.alpha, acc, loss]
        path = Path(cfg.csv)
        if path.exists():
            old = path.read_bytes()
            new = csv_bytes(header, [row]).split(b"\n", 1)[1]
            write_atomic(path, old + new)
        else:
            write_atomic(path, csv_bytes(header, [row], [f"seed={cfg.seed}"]))
    return 0


def cmd_lpf_sweep(cfg: RunConfig) -> int:
    params = _load_ckpt(cfg)
    test = _test_set(cfg)
    atk = cfg.attack_config(cfg.steps, CROSS_ENTROPY)
    rows = analysis.lpf_sweep(params, test, cfg.bands, atk, cfg.seed, cfg.adaptive, cfg.workers)
    for r in rows:
        print(f"band {r.bandwidth:3d}: clean={r.clean_acc:.4f} robust={r.robust_acc:.4f}")
    write_atomic(Path(cfg.out) / "sweep.csv", analysis.sweep_csv(rows, cfg.seed))
    return 0


def cmd_spectra(cfg: RunConfig) -> int:
    params = _load_ckpt(cfg)
    test = _test_set(cfg)
    n = min(cfg.count, len(test))
    sub = test.subset(np.arange(n))
    atk = cfg.attack_config(cfg.steps, CROSS_ENTROPY)
    adv = training.adversarial_examples(params, sub.images, sub.labels, atk, cfg.seed,
                                        cfg.workers)
    out = Path(cfg.out)
    rows = []
    for i in range(n):
        m = analysis.spectrum_diff(sub.images[i], adv[i])
        analysis.export_pgm(m, out / "spectra" / f"diff_{i:04d}.pgm", f"seed={cfg.seed}")
        rows.append([i, int(sub.labels[i]), analysis.low_frequency_fraction(m)])
    fracs = np.array([r[2] for r in rows], dtype=float)
    mean = float(np.nanmean(fracs)) if np.isfinite(fracs).any() else float("nan")
    write_atomic(out / "spectra.csv", csv_bytes(
        ["index", "label", "low_freq_fraction"], rows, [f"seed={cfg.seed}", f"mean={mean!r}"]
    ))
    print(f"spectra: {n} maps, mean low-frequency energy fraction={mean:.4f}")
    return 0


def cmd_kernels(cfg: RunConfig) -> int:
    params = _load_ckpt(cfg)
    rep = analysis.smoothness_report(params)
    write_atomic(Path(cfg.out) / "smoothness.csv", analysis.smoothness_csv(rep, cfg.seed))
    print(f"kernels: {rep.scores.size} conv1 slices, mean TV={rep.mean:.6f} std={rep.std:.6f}")
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "lpf-sweep": cmd_lpf_sweep,
    "spectra": cmd_spectra,
    "kernels": cmd_kernels,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return HANDLERS[args.command](cfg)
    except (ValueError, OSError) as e:
        print(f"freqat {args.command}: error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())

