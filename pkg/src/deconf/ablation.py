"""Ablation grid: every variant crossed with every seed and split.

Cells run sequentially and independently; a failing cell is recorded and the
grid keeps going, so one diverging variant cannot take down a sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datagen import DatasetBundle
from .errors import DeconfError, ValidationError
from .metrics import MetricsReport
from .training import VARIANTS, Checkpoint, TrainConfig, evaluate, train_suci, train_vanilla

EVAL_SPLITS = ("train", "iid_test", "ood_test")


@dataclass
class AblationResults:
    reports: list[MetricsReport] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def add(self, report: MetricsReport) -> None:
        self.reports.append(report)

    def accuracy(self, variant: str, split: str, seed: int) -> float:
        for r in self.reports:
            if (r.variant, r.split, r.seed) == (variant, split, seed):
                return r.accuracy
        raise ValidationError(f"no report for ({variant!r}, {split!r}, seed {seed})")

    def seed_accuracies(self, variant: str, split: str) -> np.ndarray:
        vals = [r.accuracy for r in self.reports if r.variant == variant and r.split == split]
        return np.asarray(sorted(vals), dtype=np.float64)

    def summary(self) -> dict[str, dict[str, dict[str, float]]]:
        """Seed-mean and population standard deviation per (variant, split)."""
        out: dict[str, dict[str, dict[str, float]]] = {}
        for r in sorted(self.reports, key=lambda r: (r.variant, r.split, r.seed)):
            cell = out.setdefault(r.variant, {}).setdefault(r.split, {"_acc": [], "_macro": [], "_weighted": []})
            cell["_acc"].append(r.accuracy)
            cell["_macro"].append(r.macro_f1)
            cell["_weighted"].append(r.weighted_f1)
        for variant, by_split in out.items():
            for split, cell in by_split.items():
                acc = np.asarray(cell.pop("_acc"))
                macro = np.asarray(cell.pop("_macro"))
                weighted = np.asarray(cell.pop("_weighted"))
                cell.update(
                    accuracy_mean=float(acc.mean()),
                    accuracy_std=float(acc.std()),
                    macro_f1_mean=float(macro.mean()),
                    macro_f1_std=float(macro.std()),
                    weighted_f1_mean=float(weighted.mean()),
                    weighted_f1_std=float(weighted.std()),
                    n_seeds=len(acc),
                )
        return out


def train_variant(bundle: DatasetBundle, config: TrainConfig, variant: str, seed: int) -> Checkpoint:
    cfg = replace(config, variant=variant, seed=seed)
    if variant == "vanilla":
        return train_vanilla(bundle, cfg)
    return train_suci(bundle, cfg)


def run_ablations(
    bundle: DatasetBundle,
    base_config: TrainConfig,
    seeds: Sequence[int],
    variants: Sequence[str] | None = None,
    splits: Sequence[str] = EVAL_SPLITS,
    binary_map: tuple[int, ...] | None = None,
) -> AblationResults:
    """Train and evaluate every (variant, seed) cell over the given splits."""
    if len(seeds) == 0:
        raise ValidationError("run_ablations needs at least one seed")
    requested = list(variants) if variants is not None else list(VARIANTS)
    unknown = [v for v in requested if v not in VARIANTS]
    if unknown:
        raise ValidationError(f"unknown variants: {unknown}; expected a subset of {VARIANTS}")
    deduped = list(dict.fromkeys(requested))
    if len(deduped) < len(requested):
        warnings.warn(f"duplicate variants removed: {sorted(set(v for v in requested if requested.count(v) > 1))}")

    results = AblationResults()
    for variant in deduped:
        for seed in seeds:
            try:
                ckpt = train_variant(bundle, base_config, variant, int(seed))
                for split in splits:
                    results.add(evaluate(ckpt, bundle, split, binary_map=binary_map))
            except DeconfError as exc:
                results.failures.append(
                    {"variant": variant, "seed": int(seed), "error_code": exc.code, "message": str(exc)}
                )
    return results
