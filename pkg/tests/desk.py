"""Desk-scale experiment recipe shared by the acceptance suite.

CIFAR-10 subset: 500 images per class for training (split 9:1 into train
and validation), 100 per class for testing. Small CNN, 20 epochs, learning
rate drops at epochs 15 and 18. Robust models are trained with PGD-5
(eps 8/255, step 2/255); evaluation uses PGD-20.

Trained checkpoints are cached, so a rerun of the suite only re-evaluates.
The CIFAR-10 binary batches are looked up in ``$FR_CIFAR10_DIR``.

Run directly to exercise the same analyses on the synthetic dataset:
``python3 tests/desk.py --source synth``.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from freqat import data, training
from freqat import model as M
from freqat.analysis import low_frequency_fraction, lpf_sweep, smoothness_report, spectrum_diff
from freqat.attacks import AttackConfig

CIFAR_ENV = "FR_CIFAR10_DIR"
CACHE_ENV = "FR_ACCEPTANCE_CACHE"
SEEDS = (0, 1, 2)
BANDS = (32, 24, 16, 8)
TRAIN_ATTACK = AttackConfig(8 / 255, 2 / 255, 5, True)
EVAL_ATTACK = AttackConfig(8 / 255, 2 / 255, 20, True)
BUDGET_SECONDS = 30 * 60


@dataclass
class Recipe:
    per_class: int = 500
    test_per_class: int = 100
    epochs: int = 20
    batch_size: int = 128
    lr0: float = 0.01
    data_seed: int = 0

    def config(self, seed: int, lam: float | None) -> training.TrainConfig:
        """``lam=None`` is natural training."""
        return training.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr0=self.lr0,
            fr_lambda=0.0 if lam is None else lam,
            train_attack=None if lam is None else TRAIN_ATTACK,
            val_attack=EVAL_ATTACK, seed=seed, workers=os.cpu_count() or 1,
        )


class DataUnavailable(RuntimeError):
    pass


def cifar_dir() -> Path:
    d = os.environ.get(CIFAR_ENV)
    if not d:
        raise DataUnavailable(f"CIFAR-10 binary batches not available: set {CIFAR_ENV}")
    return Path(d)


def load_sets(source: str, recipe: Recipe):
    """(train, val, test) for ``source`` in {"cifar", "synth"}."""
    if source == "cifar":
        root = cifar_dir()
        full = data.take_subset(data.load_cifar10(root, "train"), recipe.per_class, recipe.data_seed)
        test = data.take_subset(data.load_cifar10(root, "test"), recipe.test_per_class,
                                recipe.data_seed)
    elif source == "synth":
        full = data.synth_dataset(recipe.per_class, 10, recipe.data_seed)
        test = data.synth_dataset(recipe.test_per_class, 10, recipe.data_seed, holdout=True)
    else:
        raise ValueError(f"unknown source {source!r}")
    train, val = data.split(full, 0.9, recipe.data_seed)
    return train, val, test


@dataclass
class Run:
    params: M.ModelParams
    seconds: float


class Desk:
    """Trains (or loads from cache) and evaluates the desk-scale models."""

    def __init__(self, source: str, cache: Path, recipe: Recipe | None = None, log=print):
        self.source = source
        self.recipe = recipe or Recipe()
        self.cache = Path(cache)
        self.log = log
        self._sets = None
        self._runs: dict = {}

    @property
    def sets(self):
        if self._sets is None:
            self._sets = load_sets(self.source, self.recipe)
        return self._sets

    def _path(self, seed: int, lam: float | None) -> Path:
        r = self.recipe
        kind = "natural" if lam is None else f"at-lam{lam}"
        tag = f"{self.source}-pc{r.per_class}-e{r.epochs}-b{r.batch_size}-lr{r.lr0}-d{r.data_seed}"
        return self.cache / f"{tag}-{kind}-seed{seed}.ckpt"

    def run(self, seed: int, lam: float | None) -> Run:
        key = (seed, lam)
        if key in self._runs:
            return self._runs[key]
        path = self._path(seed, lam)
        if path.exists():
            params, meta = M.load_checkpoint(path)
            seconds = float(dict(kv.split("=") for kv in meta.split(";"))["seconds"])
        else:
            train, val, _ = self.sets
            self.log(f"training {path.name}")
            t0 = time.perf_counter()
            res = training.train(self.recipe.config(seed, lam), train, val,
                                 on_epoch=lambda r: self.log(f"  epoch {r.epoch}: "
                                                             f"std={r.standard_acc:.3f} "
                                                             f"rob={r.robust_acc:.3f}"))
            seconds = time.perf_counter() - t0
            params = res.final
            M.save_checkpoint(params, path, f"seed={seed};seconds={seconds!r}")
        self._runs[key] = Run(params, seconds)
        return self._runs[key]

    # -- the four trend checks --------------------------------------------------

    def fr_efficacy(self):
        test = self.sets[2]
        rows = {}
        for lam in (0.0, 0.1):
            rob, gap, secs = [], [], []
            for s in SEEDS:
                run = self.run(s, lam)
                std, _ = training.evaluate(run.params, test)
                r, _ = training.evaluate(run.params, test, EVAL_ATTACK, seed=s)
                rob.append(r)
                gap.append(std - r)
                secs.append(run.seconds)
            rows[lam] = (statistics.median(rob), statistics.median(gap), max(secs))
        (r0, g0, t0), (r1, g1, t1) = rows[0.0], rows[0.1]
        ok = r1 >= r0 and g1 < g0 and max(t0, t1) < BUDGET_SECONDS
        detail = (f"median PGD-20 acc {r1:.4f} (lambda 0.1) vs {r0:.4f} (lambda 0); "
                  f"median gap {g1:.4f} vs {g0:.4f}; slowest run {max(t0, t1) / 60:.1f} min")
        return ok, detail

    def lpf_trend(self):
        test = self.sets[2]
        votes, parts = 0, []
        for s in SEEDS:
            nat = [r.clean_acc for r in lpf_sweep(self.run(s, None).params, test, BANDS,
                                                  EVAL_ATTACK, seed=s)]
            rob = [r.clean_acc for r in lpf_sweep(self.run(s, 0.0).params, test, BANDS,
                                                  EVAL_ATTACK, seed=s)]
            mono = all(a >= b for a, b in zip(nat, nat[1:]))
            i16 = BANDS.index(16)
            drop_nat, drop_rob = nat[0] - nat[i16], rob[0] - rob[i16]
            ok = mono and drop_rob < drop_nat
            votes += ok
            parts.append(f"seed {s}: natural {'/'.join(f'{a:.3f}' for a in nat)}, "
                         f"drop32->16 robust {drop_rob:.3f} vs natural {drop_nat:.3f}")
        return votes >= 2, f"{votes}/3 seeds; " + "; ".join(parts)

    def kernel_trend(self):
        votes, parts = 0, []
        for s in SEEDS:
            tv_rob = smoothness_report(self.run(s, 0.0).params).mean
            tv_nat = smoothness_report(self.run(s, None).params).mean
            votes += tv_rob <= tv_nat
            parts.append(f"seed {s}: robust {tv_rob:.4f} vs natural {tv_nat:.4f}")
        return votes >= 2, f"{votes}/3 seeds; " + "; ".join(parts)

    def spectrum_trend(self, count: int = 100):
        test = self.sets[2]
        sub = test.subset(np.arange(min(count, len(test))))
        params = self.run(SEEDS[0], 0.0).params
        adv = training.adversarial_examples(params, sub.images, sub.labels, EVAL_ATTACK,
                                            seed=SEEDS[0])
        fr = [low_frequency_fraction(spectrum_diff(x, xa)) for x, xa in zip(sub.images, adv)]
        mean = float(np.nanmean(fr))
        return mean > 0.25, f"mean low-frequency energy fraction {mean:.4f} over {len(fr)} pairs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="run the desk-scale trend checks")
    ap.add_argument("--source", choices=("cifar", "synth"), default="cifar")
    ap.add_argument("--cache", default=os.environ.get(CACHE_ENV, ".desk-cache"))
    ap.add_argument("--per-class", type=int, default=500)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args(argv)
    recipe = Recipe(args.per_class, args.test_per_class, args.epochs)
    desk = Desk(args.source, Path(args.cache), recipe, log=lambda m: print(m, flush=True))
    Path(args.cache).mkdir(parents=True, exist_ok=True)
    for n, check in ((6, desk.fr_efficacy), (7, desk.lpf_trend),
                     (8, desk.kernel_trend), (9, desk.spectrum_trend)):
        ok, detail = check()
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
