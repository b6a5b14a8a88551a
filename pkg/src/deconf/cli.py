"""Command-line entry point.

Subcommands: gen, train, eval, ablate, oracle, report. One JSON config file
(sections "gen", "train", "paths", "eval") drives everything; command-line
flags override file values, and unknown keys anywhere in the file are
rejected. Artifacts land under a per-run directory named by a hash of the
effective config plus the seed, inside the base output directory (flag
--out, else the DECONF_OUT environment variable, else paths.out_dir from the
config, else ./deconf_out).

Exit codes: 0 success, 2 validation error (bad config, flags, or file
contents), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ablation import EVAL_SPLITS, AblationResults, run_ablations
from .backbone import encode, stack_batch
from .datagen import DatasetBundle, GenConfig, generate, load_bundle, save_bundle
from .errors import DeconfError, ValidationError
from .metrics import MetricsReport
from .reporting import dump_metrics_json, metrics_document, render_report, rerender_report
from .scm import interventional_backdoor, load_scm, observational, tv_distance
from .training import (
    VARIANTS,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_suci,
    train_vanilla,
)

ENV_OUT = "DECONF_OUT"
DEFAULT_OUT = "deconf_out"


@dataclass(frozen=True)
class EvalOptions:
    split: str = "iid_test"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: tuple[str, ...] | None = None  # None = all variants
    binary_map: tuple[int, ...] | None = None

    def validate(self) -> None:
        if len(self.seeds) == 0:
            raise ValidationError("eval.seeds must be nonempty")
        if self.variants is not None:
            unknown = [v for v in self.variants if v not in VARIANTS]
            if unknown:
                raise ValidationError(f"eval.variants has unknown entries: {unknown}")
        if self.binary_map is not None and any(g not in (0, 1) for g in self.binary_map):
            raise ValidationError("eval.binary_map entries must be 0 or 1")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "seeds": list(self.seeds),
            "variants": None if self.variants is None else list(self.variants),
            "binary_map": None if self.binary_map is None else list(self.binary_map),
        }

    @staticmethod
    def from_dict(doc: dict) -> "EvalOptions":
        known = set(EvalOptions().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"eval section has unknown keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
        if kwargs.get("variants") is not None:
            kwargs["variants"] = tuple(kwargs["variants"])
        if kwargs.get("binary_map") is not None:
            kwargs["binary_map"] = tuple(int(g) for g in kwargs["binary_map"])
        return EvalOptions(**kwargs)


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str | None = None
    data_dir: str | None = None
    checkpoint_dir: str | None = None
    report_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "data_dir": self.data_dir,
            "checkpoint_dir": self.checkpoint_dir,
            "report_dir": self.report_dir,
        }

    @staticmethod
    def from_dict(doc: dict) -> "PathsConfig":
        known = set(PathsConfig().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"paths section has unknown keys: {sorted(unknown)}")
        return PathsConfig(**doc)


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def validate(self) -> None:
        self.gen.validate()
        self.train.validate()
        self.eval.validate()

    def to_dict(self) -> dict:
        return {
            "gen": self.gen.to_dict(),
            "train": self.train.to_dict(),
            "paths": self.paths.to_dict(),
            "eval": self.eval.to_dict(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        known = {"gen", "train", "paths", "eval"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"config has unknown sections: {sorted(unknown)}")
        return RunConfig(
            gen=GenConfig.from_dict(doc.get("gen", {})),
            train=TrainConfig.from_dict(doc.get("train", {})),
            paths=PathsConfig.from_dict(doc.get("paths", {})),
            eval=EvalOptions.from_dict(doc.get("eval", {})),
        )


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"config file {p} must hold a JSON object")
    return RunConfig.from_dict(doc)


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def resolve_out_dir(cfg: RunConfig, flag_value: str | None) -> Path:
    if flag_value is not None:
        return Path(flag_value)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if cfg.paths.out_dir is not None:
        return Path(cfg.paths.out_dir)
    return Path(DEFAULT_OUT)


def gen_run_dir(cfg: RunConfig, out_dir: Path) -> Path:
    doc = cfg.gen.to_dict()
    seed = doc.pop("seed")
    return out_dir / "runs" / f"gen-{_config_hash(doc)}-s{seed}"


def train_run_dir(cfg: RunConfig, out_dir: Path) -> Path:
    doc = {"gen": cfg.gen.to_dict(), "train": cfg.train.to_dict()}
    seed = doc["train"].pop("seed")
    return out_dir / "runs" / f"train-{_config_hash(doc)}-s{seed}"


def default_data_dir(cfg: RunConfig, out_dir: Path) -> Path:
    if cfg.paths.data_dir is not None:
        return Path(cfg.paths.data_dir)
    return gen_run_dir(cfg, out_dir) / "bundle"


def _load_bundle_for(cfg: RunConfig, out_dir: Path, flag_data: str | None) -> DatasetBundle:
    data_dir = Path(flag_data) if flag_data is not None else default_data_dir(cfg, out_dir)
    if not (data_dir / "meta.json").exists():
        raise ValidationError(f"no dataset bundle at {data_dir}; run `deconf gen` first or pass --data")
    bundle = load_bundle(data_dir)
    if bundle.config != cfg.gen:
        raise ValidationError(
            f"bundle at {data_dir} was generated with a different gen config; regenerate or fix the config"
        )
    return bundle


def _apply_overrides(obj, overrides: dict):
    provided = {k: v for k, v in overrides.items() if v is not None}
    return replace(obj, **provided) if provided else obj


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    cfg = replace(
        cfg,
        gen=_apply_overrides(
            cfg.gen,
            {
                "seed": args.seed,
                "rho": args.rho,
                "n_train_subjects": args.n_train_subjects,
                "n_ood_subjects": args.n_ood_subjects,
                "samples_per_subject": args.samples_per_subject,
                "alpha_signal": args.alpha_signal,
                "beta_style": args.beta_style,
                "sigma_noise": args.sigma_noise,
            },
        ),
    )
    cfg.validate()
    out_dir = resolve_out_dir(cfg, args.out)
    target = Path(args.data) if args.data is not None else default_data_dir(cfg, out_dir)
    bundle = generate(cfg.gen)
    save_bundle(bundle, target)
    counts = {tag: len(rows) for tag, rows in bundle.samples.items()}
    print(f"bundle written to {target}")
    print(f"splits: {json.dumps(counts, sort_keys=True)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    cfg = replace(
        cfg,
        train=_apply_overrides(
            cfg.train,
            {
                "seed": args.seed,
                "epochs": args.epochs,
                "batch_size": args.batch_size,
                "learning_rate": args.learning_rate,
                "task_disc_mode": args.task_disc_mode,
                "variant": args.variant,
            },
        ),
    )
    if args.arm == "vanilla":
        cfg = replace(cfg, train=replace(cfg.train, variant="vanilla"))
    elif cfg.train.variant == "vanilla":
        cfg = replace(cfg, train=replace(cfg.train, variant="full"))
    cfg.validate()
    out_dir = resolve_out_dir(cfg, args.out)
    bundle = _load_bundle_for(cfg, out_dir, args.data)
    checkpoint = train_vanilla(bundle, cfg.train) if args.arm == "vanilla" else train_suci(bundle, cfg.train)
    if cfg.paths.checkpoint_dir is not None:
        target = Path(cfg.paths.checkpoint_dir)
    else:
        target = train_run_dir(cfg, out_dir) / f"checkpoint-{checkpoint.config.variant}"
    save_checkpoint(checkpoint, target)
    final = checkpoint.epoch_losses[-1] if checkpoint.epoch_losses else None
    print(f"checkpoint written to {target}")
    print(f"epochs: {checkpoint.epoch}; final losses: {json.dumps(final, sort_keys=True)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if args.split is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, split=args.split))
    cfg.validate()
    out_dir = resolve_out_dir(cfg, args.out)
    bundle = _load_bundle_for(cfg, out_dir, args.data)
    if args.checkpoint is None:
        raise ValidationError("eval needs --checkpoint pointing at a checkpoint directory")
    checkpoint = load_checkpoint(args.checkpoint)
    report = evaluate(checkpoint, bundle, cfg.eval.split, binary_map=cfg.eval.binary_map)
    results = AblationResults(reports=[report])
    target = Path(args.out_file) if args.out_file else Path(args.checkpoint) / f"metrics-{cfg.eval.split}.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_metrics_json(metrics_document(results)), encoding="utf-8")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"metrics written to {target}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.variants is not None:
        overrides["variants"] = tuple(args.variants.split(","))
    if overrides:
        cfg = replace(cfg, eval=replace(cfg.eval, **overrides))
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    cfg.validate()
    out_dir = resolve_out_dir(cfg, args.out)
    bundle = _load_bundle_for(cfg, out_dir, args.data)
    variants = cfg.eval.variants if cfg.eval.variants is not None else VARIANTS
    results = run_ablations(
        bundle, cfg.train, cfg.eval.seeds, variants=variants, binary_map=cfg.eval.binary_map
    )

    embedding = labels = None
    if "full" in variants and not any(f["variant"] == "full" for f in results.failures):
        ckpt = train_suci(bundle, replace(cfg.train, variant="full", seed=cfg.eval.seeds[0]))
        rows = bundle.split("iid_test") + bundle.split("ood_test")
        X_t, X_v, X_a, y_t, _ = stack_batch(rows)
        embedding = encode((X_t, X_v, X_a), ckpt.backbone_params())
        labels = y_t

    if cfg.paths.report_dir is not None:
        target = Path(cfg.paths.report_dir)
    else:
        target = train_run_dir(cfg, out_dir) / "report"
    written = render_report(results, target, embedding=embedding, embedding_labels=labels)
    for path in written:
        print(f"wrote {path}")
    if results.failures:
        print(f"{len(results.failures)} cell(s) failed; see metrics.json")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    scm = load_scm(args.scm)
    x = args.x
    obs = observational(scm, x)
    interv = interventional_backdoor(scm, x)
    gap = tv_distance(obs, interv)
    if args.json:
        print(
            json.dumps(
                {
                    "x": x,
                    "observational": [float(v) for v in obs],
                    "interventional": [float(v) for v in interv],
                    "tv_gap": float(gap),
                },
                indent=2,
                sort_keys=True,
            )
        )
    else:
        fmt = lambda v: "[" + ", ".join(f"{float(p):.6f}" for p in v) + "]"
        print(f"observational   P(Y | x={x})     = {fmt(obs)}")
        print(f"interventional  P(Y | do(x={x})) = {fmt(interv)}")
        print(f"total variation gap = {float(gap):.6f}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    written = rerender_report(args.reports_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deconf",
        description="Synthetic multimodal benchmark with subject confounding, "
        "de-confounded training, and exact causal-adjustment oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON config file (default: built-in defaults)")
        p.add_argument("--out", default=None, help=f"base output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})")

    p_gen = sub.add_parser("gen", help="generate the synthetic dataset bundle")
    common(p_gen)
    p_gen.add_argument("--data", default=None, help="bundle directory (default: derived from the config hash)")
    p_gen.add_argument("--seed", type=int, default=None, help="generator seed (default: 7)")
    p_gen.add_argument("--rho", type=float, default=None, help="preferred-class probability per training subject (default: 0.8)")
    p_gen.add_argument("--n-train-subjects", type=int, default=None, help="training subjects (default: 24)")
    p_gen.add_argument("--n-ood-subjects", type=int, default=None, help="held-out subjects (default: 8)")
    p_gen.add_argument("--samples-per-subject", type=int, default=None, help="samples per subject (default: 200)")
    p_gen.add_argument("--alpha-signal", type=float, default=None, help="class-direction strength (default: 1.0)")
    p_gen.add_argument("--beta-style", type=float, default=None, help="subject-style strength (default: 1.5)")
    p_gen.add_argument("--sigma-noise", type=float, default=None, help="frame noise scale (default: 0.7)")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train one arm on an existing bundle")
    common(p_train)
    p_train.add_argument("--arm", choices=("vanilla", "suci"), required=True, help="baseline or de-confounded arm")
    p_train.add_argument("--data", default=None, help="bundle directory (default: derived from the config hash)")
    p_train.add_argument("--variant", default=None, help="de-confounded variant (default: full; ignored for --arm vanilla)")
    p_train.add_argument("--seed", type=int, default=None, help="training seed (default: 0)")
    p_train.add_argument("--epochs", type=int, default=None, help="training epochs (default: 30)")
    p_train.add_argument("--batch-size", type=int, default=None, help="mini-batch size (default: 64)")
    p_train.add_argument("--learning-rate", type=float, default=None, help="step size (default: 0.001)")
    p_train.add_argument(
        "--task-disc-mode", choices=("adversarial", "literal"), default=None,
        help="task-discriminator optimization mode (default: adversarial)",
    )
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None, help="checkpoint directory (required)")
    p_eval.add_argument("--data", default=None, help="bundle directory (default: derived from the config hash)")
    p_eval.add_argument("--split", default=None, choices=EVAL_SPLITS, help="split to evaluate (default: iid_test)")
    p_eval.add_argument("--out-file", default=None, help="metrics.json path (default: inside the checkpoint dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the variant x seed grid and render a report")
    common(p_ablate)
    p_ablate.add_argument("--data", default=None, help="bundle directory (default: derived from the config hash)")
    p_ablate.add_argument("--seeds", default=None, help="comma-separated seeds (default: 0,1,2,3,4)")
    p_ablate.add_argument("--variants", default=None, help=f"comma-separated subset of {','.join(VARIANTS)} (default: all)")
    p_ablate.add_argument("--epochs", type=int, default=None, help="override training epochs")
    p_ablate.set_defaults(func=cmd_ablate)

    p_oracle = sub.add_parser("oracle", help="print observational vs interventional distributions for an SCM")
    p_oracle.add_argument("scm", help="SCM JSON file")
    p_oracle.add_argument("--x", type=int, required=True, help="input value index to condition on / intervene at")
    p_oracle.add_argument("--json", action="store_true", help="print machine-readable JSON instead of text")
    p_oracle.set_defaults(func=cmd_oracle)

    p_report = sub.add_parser("report", help="re-render summary.md and figures from a report directory")
    p_report.add_argument("reports_dir", help="directory holding metrics.json")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except DeconfError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
