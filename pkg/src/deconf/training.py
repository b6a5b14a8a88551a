"""Training loops, checkpoint persistence, and evaluation.

Two arms share the same backbone and optimizer settings:

- the baseline arm classifies the fused representation directly;
- the de-confounded arm adds the parallel subject pathway, maintains the
  confounder dictionary across epochs, and classifies through the
  backdoor-adjusted head. Its objective is the unweighted sum of the task
  cross-entropy and the disentanglement loss.

A checkpoint is a directory: manifest.json (names, shapes, byte offsets,
config, epoch log, format version) plus params.bin and, for the
de-confounded arm, dictionary.bin (both row-major little-endian 32-bit
floats). Reloading reproduces identical forward outputs bit for bit.

Training is deterministic per seed in single-threaded execution: all
randomness flows from named substreams of the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backbone import (
    BackboneParams,
    VanillaHeadParams,
    encode_backward,
    encode_with_cache,
    init_backbone,
    init_vanilla_head,
    stack_batch,
    vanilla_logits,
    vanilla_logits_backward,
)
from .datagen import DatasetBundle, GenConfig
from .dictionary import (
    ConfounderDictionary,
    accumulate_subject,
    clustered_dictionary,
    init_dictionary,
    random_dictionary,
    update_dictionary,
)
from .errors import (
    FormatVersionError,
    NonFiniteLossError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
)
from .intervention import (
    D_ATTN_DEFAULT,
    D_HIDDEN_DEFAULT,
    InterventionParams,
    init_intervention,
    intervene_backward,
    intervene_with_cache,
)
from .metrics import MetricsReport, build_report
from .nn import Adam, cross_entropy, rng_stream
from .subject import (
    TASK_DISC_MODES,
    DiscriminatorParams,
    DynamicFusionParams,
    GeneratorParams,
    fusion_backward,
    fusion_with_cache,
    generator_backward,
    generator_with_cache,
    init_discriminators,
    init_fusion,
    init_generator,
    subject_loss_with_grads,
    task_disc_step_grads,
)

CHECKPOINT_FORMAT_VERSION = 1
PARAM_DTYPE = np.dtype("<f4")

VARIANTS = (
    "vanilla",
    "full",
    "avg_pool",
    "no_subject_disc",
    "no_task_disc",
    "no_text",
    "no_visual",
    "no_audio",
    "random_Z",
    "clustered_Z",
    "no_psi",
    "no_prior",
)

_DROP_BY_VARIANT = {
    "no_text": frozenset({"t"}),
    "no_visual": frozenset({"v"}),
    "no_audio": frozenset({"a"}),
}

# rng substream tags
_TAG_INIT = 31
_TAG_SHUFFLE = 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    task_disc_mode: str = "adversarial"
    variant: str = "full"
    loss_weight_task: float = 1.0
    loss_weight_subject: float = 1.0
    d_enc: int = 32
    d_fused: int = 64
    d_g: int = 64
    d_h: int = D_HIDDEN_DEFAULT
    d_n: int = D_ATTN_DEFAULT

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValidationError(f"TrainConfig.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"TrainConfig.batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0):
            raise ValidationError(f"TrainConfig.learning_rate must be > 0, got {self.learning_rate}")
        if self.task_disc_mode not in TASK_DISC_MODES:
            raise ValidationError(
                f"TrainConfig.task_disc_mode must be one of {TASK_DISC_MODES}, got {self.task_disc_mode!r}"
            )
        if self.variant not in VARIANTS:
            raise ValidationError(f"TrainConfig.variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("loss_weight_task", "loss_weight_subject"):
            if getattr(self, name) < 0:
                raise ValidationError(f"TrainConfig.{name} must be >= 0, got {getattr(self, name)}")
        for name in ("d_enc", "d_fused", "d_g", "d_h", "d_n"):
            if getattr(self, name) < 1:
                raise ValidationError(f"TrainConfig.{name} must be >= 1, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "task_disc_mode": self.task_disc_mode,
            "variant": self.variant,
            "loss_weight_task": self.loss_weight_task,
            "loss_weight_subject": self.loss_weight_subject,
            "d_enc": self.d_enc,
            "d_fused": self.d_fused,
            "d_g": self.d_g,
            "d_h": self.d_h,
            "d_n": self.d_n,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = set(TrainConfig().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"TrainConfig has unknown keys: {sorted(unknown)}")
        return TrainConfig(**doc)


@dataclass
class Checkpoint:
    arm: str  # "vanilla" | "suci"
    config: TrainConfig
    params: dict[str, np.ndarray]
    dictionary: ConfounderDictionary | None
    epoch: int
    epoch_losses: list[dict[str, float]]
    data_dims: dict
    batch_log: list[dict] = field(default_factory=list, repr=False)

    def backbone_params(self) -> BackboneParams:
        return BackboneParams.from_flat(self.params)

    def vanilla_head_params(self) -> VanillaHeadParams:
        return VanillaHeadParams.from_flat(self.params)

    def fusion_params(self) -> DynamicFusionParams:
        return DynamicFusionParams.from_flat(self.params)

    def generator_params(self) -> GeneratorParams:
        return GeneratorParams.from_flat(self.params)

    def discriminator_params(self) -> DiscriminatorParams:
        return DiscriminatorParams.from_flat(self.params)

    def intervention_params(self) -> InterventionParams:
        return InterventionParams.from_flat(self.params)


def _data_dims(gc: GenConfig) -> dict:
    return {
        "dims": list(gc.dims),
        "seq_lens": list(gc.seq_lens),
        "n_classes": gc.n_classes,
        "n_train_subjects": gc.n_train_subjects,
    }


def _check_dims(data_dims: dict, gc: GenConfig) -> None:
    expected = _data_dims(gc)
    for key in expected:
        if data_dims.get(key) != expected[key]:
            raise ValidationError(
                f"checkpoint/bundle dimension mismatch on {key!r}: checkpoint {data_dims.get(key)}, bundle {expected[key]}"
            )


def variant_modes(variant: str) -> dict:
    """Forward/backward switches implied by a variant name."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return {
        "drop": _DROP_BY_VARIANT.get(variant, frozenset()),
        "pool_mode": "mean" if variant == "avg_pool" else "attention",
        "psi_mode": "uniform" if variant == "no_psi" else "attention",
        "prior_mode": "uniform" if variant == "no_prior" else "counts",
        "term_weights": (
            0.0 if variant == "no_subject_disc" else 1.0,
            0.0 if variant == "no_task_disc" else 1.0,
        ),
    }


def _train_arrays(bundle: DatasetBundle):
    rows = bundle.split("train")
    if not rows:
        raise ValidationError("train split is empty")
    return stack_batch(rows)


def train_vanilla(bundle: DatasetBundle, config: TrainConfig) -> Checkpoint:
    """Cross-entropy training of the backbone + affine head baseline."""
    config.validate()
    cfg = replace(config, variant="vanilla")
    gc = bundle.config
    X_t, X_v, X_a, y_t, _ = _train_arrays(bundle)
    n = y_t.shape[0]

    backbone = init_backbone(rng_stream(cfg.seed, _TAG_INIT, 0), gc.dims, cfg.d_enc, cfg.d_fused)
    head = init_vanilla_head(rng_stream(cfg.seed, _TAG_INIT, 1), cfg.d_fused, gc.n_classes)
    params = {**backbone.flat(), **head.flat()}
    opt = Adam(cfg.learning_rate)

    epoch_losses: list[dict[str, float]] = []
    batch_log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng_stream(cfg.seed, _TAG_SHUFFLE, epoch).permutation(n)
        loss_sum, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = (X_t[idx], X_v[idx], X_a[idx])
            M, cache = encode_with_cache(xb, backbone)
            logits = vanilla_logits(M, head)
            loss, grad_logits = cross_entropy(logits, y_t[idx])
            total = cfg.loss_weight_task * loss
            if not np.isfinite(total):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch + 1}")
            grad_M, head_grads = vanilla_logits_backward(cfg.loss_weight_task * grad_logits, M, head)
            grads = {**head_grads, **encode_backward(grad_M, cache, backbone)}
            opt.step(params, grads)
            batch_log.append({"epoch": epoch, "task": float(loss), "subject": 0.0, "total": float(total)})
            loss_sum += float(loss) * idx.shape[0]
            seen += idx.shape[0]
        mean = loss_sum / seen
        epoch_losses.append({"task": mean, "subject": 0.0, "total": cfg.loss_weight_task * mean})
    return Checkpoint(
        arm="vanilla",
        config=cfg,
        params=params,
        dictionary=None,
        epoch=cfg.epochs,
        epoch_losses=epoch_losses,
        data_dims=_data_dims(gc),
        batch_log=batch_log,
    )


def train_suci(bundle: DatasetBundle, config: TrainConfig) -> Checkpoint:
    """De-confounded training: subject pathway, dictionary, intervention head."""
    config.validate()
    if config.variant == "vanilla":
        raise ValidationError("variant 'vanilla' is trained by train_vanilla, not train_suci")
    cfg = config
    modes = variant_modes(cfg.variant)
    gc = bundle.config
    X_t, X_v, X_a, y_t, y_s = _train_arrays(bundle)
    n = y_t.shape[0]
    d_s = sum(gc.dims)
    n_subjects = gc.n_train_subjects
    if np.any(y_s >= n_subjects):
        raise ValidationError("train split contains subject ids outside the training subject range")
    subject_counts = np.bincount(y_s, minlength=n_subjects).astype(np.int64)

    backbone = init_backbone(rng_stream(cfg.seed, _TAG_INIT, 0), gc.dims, cfg.d_enc, cfg.d_fused)
    fusion = init_fusion(rng_stream(cfg.seed, _TAG_INIT, 2), gc.dims, gc.seq_lens)
    generator = init_generator(rng_stream(cfg.seed, _TAG_INIT, 3), d_s, cfg.d_g)
    disc = init_discriminators(rng_stream(cfg.seed, _TAG_INIT, 4), d_s, n_subjects, gc.n_classes)
    iv = init_intervention(rng_stream(cfg.seed, _TAG_INIT, 5), cfg.d_fused, d_s, gc.n_classes, cfg.d_h, cfg.d_n)
    params = {**backbone.flat(), **fusion.flat(), **generator.flat(), **disc.flat(), **iv.flat()}
    opt = Adam(cfg.learning_rate)

    if cfg.variant == "random_Z":
        dictionary = random_dictionary(n_subjects, d_s, cfg.seed).with_counts(subject_counts)
    else:
        dictionary = init_dictionary(n_subjects, d_s, cfg.seed).with_counts(subject_counts)
    learned_prototypes = cfg.variant not in ("random_Z", "clustered_Z")

    w_task, w_sub = cfg.loss_weight_task, cfg.loss_weight_subject
    epoch_losses: list[dict[str, float]] = []
    batch_log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng_stream(cfg.seed, _TAG_SHUFFLE, epoch).permutation(n)
        sums = {"task": 0.0, "subject": 0.0, "total": 0.0, "subject_ce": 0.0, "task_uniform_mse": 0.0}
        seen = 0
        epoch_feats: list[np.ndarray] = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = (X_t[idx], X_v[idx], X_a[idx])
            yt_b, ys_b = y_t[idx], y_s[idx]

            M, bb_cache = encode_with_cache(xb, backbone)
            cat, fu_cache = fusion_with_cache(xb, fusion, drop=modes["drop"], pool_mode=modes["pool_mode"])
            S, gen_cache = generator_with_cache(cat, generator)
            logits, iv_cache = intervene_with_cache(
                M, dictionary, iv, psi_mode=modes["psi_mode"], prior_mode=modes["prior_mode"]
            )
            l_task, grad_logits = cross_entropy(logits, yt_b)
            l_sub, breakdown, grad_S, disc_grads = subject_loss_with_grads(
                S, ys_b, disc, mode=cfg.task_disc_mode, term_weights=modes["term_weights"]
            )
            total = w_task * l_task + w_sub * l_sub
            if not np.isfinite(total):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch + 1}")

            if learned_prototypes:
                accumulate_subject(dictionary, ys_b, S)
            elif cfg.variant == "clustered_Z":
                epoch_feats.append(S.astype(np.float64))

            grad_M, iv_grads = intervene_backward(w_task * grad_logits, iv_cache, iv)
            bb_grads = encode_backward(grad_M, bb_cache, backbone)
            grad_cat, gen_grads = generator_backward(w_sub * grad_S, gen_cache, generator)
            fu_grads = fusion_backward(grad_cat, fu_cache, fusion)
            grads = {**iv_grads, **bb_grads, **gen_grads, **fu_grads}
            for name, g in disc_grads.items():
                grads[name] = w_sub * g
            opt.step(params, grads)

            if cfg.task_disc_mode == "adversarial" and modes["term_weights"][1] != 0.0:
                _, dt_grads = task_disc_step_grads(S, yt_b, disc)
                opt.step(params, dt_grads)

            batch_log.append(
                {"epoch": epoch, "task": float(l_task), "subject": float(l_sub), "total": float(total)}
            )
            b = idx.shape[0]
            sums["task"] += float(l_task) * b
            sums["subject"] += float(l_sub) * b
            sums["total"] += float(total) * b
            sums["subject_ce"] += breakdown["subject_ce"] * b
            sums["task_uniform_mse"] += breakdown["task_uniform_mse"] * b
            seen += b

        if cfg.variant == "clustered_Z":
            feats = np.concatenate(epoch_feats, axis=0)
            prev_updates = dictionary.updates
            dictionary = clustered_dictionary(feats, n_subjects, seed=cfg.seed, dtype=dictionary.Z.dtype)
            dictionary.updates = prev_updates + 1
        else:
            update_dictionary(dictionary)
        epoch_losses.append({k: v / seen for k, v in sums.items()})

    return Checkpoint(
        arm="suci",
        config=cfg,
        params=params,
        dictionary=dictionary,
        epoch=cfg.epochs,
        epoch_losses=epoch_losses,
        data_dims=_data_dims(gc),
        batch_log=batch_log,
    )


def evaluate(
    checkpoint: Checkpoint,
    bundle: DatasetBundle,
    split: str,
    binary_map: tuple[int, ...] | None = None,
) -> MetricsReport:
    """Argmax predictions on one split; never mutates the checkpoint."""
    rows = bundle.split(split)
    if not rows:
        raise ValidationError(f"split {split!r} is empty")
    _check_dims(checkpoint.data_dims, bundle.config)
    X_t, X_v, X_a, y_t, _ = stack_batch(rows)
    M, _ = encode_with_cache((X_t, X_v, X_a), checkpoint.backbone_params())
    if checkpoint.arm == "vanilla":
        logits = vanilla_logits(M, checkpoint.vanilla_head_params())
    elif checkpoint.arm == "suci":
        if checkpoint.dictionary is None:
            raise ValidationError("de-confounded checkpoint has no dictionary")
        modes = variant_modes(checkpoint.config.variant)
        logits, _ = intervene_with_cache(
            M,
            checkpoint.dictionary,
            checkpoint.intervention_params(),
            psi_mode=modes["psi_mode"],
            prior_mode=modes["prior_mode"],
        )
    else:
        raise ValidationError(f"unknown checkpoint arm {checkpoint.arm!r}")
    pred = np.argmax(logits, axis=1)
    return build_report(
        checkpoint.config.variant,
        split,
        checkpoint.config.seed,
        y_t,
        pred,
        bundle.config.n_classes,
        binary_map=binary_map,
    )


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------

def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    blob = bytearray()
    for name in sorted(checkpoint.params):
        arr = np.ascontiguousarray(checkpoint.params[name], dtype=PARAM_DTYPE)
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(checkpoint.params[name].shape), "offset": len(blob), "bytes": len(raw)}
        )
        blob += raw
    (root / "params.bin").write_bytes(bytes(blob))

    dict_meta = None
    if checkpoint.dictionary is not None:
        d = checkpoint.dictionary
        z_raw = np.ascontiguousarray(d.Z, dtype=PARAM_DTYPE).tobytes()
        (root / "dictionary.bin").write_bytes(z_raw)
        dict_meta = {
            "file": "dictionary.bin",
            "shape": list(d.Z.shape),
            "bytes": len(z_raw),
            "counts": [int(c) for c in d.counts],
            "priors": [float(p) for p in d.priors],
            "frozen": bool(d.frozen),
            "updates": int(d.updates),
        }

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arm": checkpoint.arm,
        "config": checkpoint.config.to_dict(),
        "data_dims": checkpoint.data_dims,
        "epoch": checkpoint.epoch,
        "epoch_losses": checkpoint.epoch_losses,
        "params": entries,
        "params_bytes": len(blob),
        "dictionary": dict_meta,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def load_checkpoint(path: str | Path) -> Checkpoint:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatVersionError(
            f"checkpoint format version {version!r} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = TrainConfig.from_dict(manifest["config"])
    config.validate()

    declared = int(manifest["params_bytes"])
    raw = (root / "params.bin").read_bytes() if (root / "params.bin").exists() else None
    if raw is None:
        raise TruncatedPayloadError("params.bin missing from checkpoint")
    if len(raw) < declared:
        raise TruncatedPayloadError(f"params.bin truncated: {len(raw)} bytes on disk, manifest declares {declared}")
    if len(raw) > declared:
        raise ShapeMismatchError(f"manifest/payload shape mismatch: params.bin has {len(raw)} bytes, declared {declared}")
    params: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(int(v) for v in entry["shape"])
        nbytes = int(entry["bytes"])
        expected = int(np.prod(shape, dtype=np.int64)) * PARAM_DTYPE.itemsize
        if nbytes != expected:
            raise ShapeMismatchError(
                f"manifest/payload shape mismatch for {entry['name']!r}: shape {shape} needs {expected} bytes, "
                f"manifest declares {nbytes}"
            )
        offset = int(entry["offset"])
        if offset + nbytes > declared:
            raise ShapeMismatchError(f"parameter {entry['name']!r} extends past the declared payload")
        arr = np.frombuffer(raw, dtype=PARAM_DTYPE, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
        params[entry["name"]] = arr.reshape(shape).copy()

    dictionary = None
    if manifest.get("dictionary") is not None:
        dm = manifest["dictionary"]
        shape = tuple(int(v) for v in dm["shape"])
        dpath = root / dm["file"]
        if not dpath.exists():
            raise TruncatedPayloadError(f"dictionary payload {dm['file']!r} missing")
        z_raw = dpath.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * PARAM_DTYPE.itemsize
        if int(dm["bytes"]) != expected:
            raise ShapeMismatchError(
                f"manifest/payload shape mismatch: dictionary shape {shape} needs {expected} bytes, "
                f"manifest declares {dm['bytes']}"
            )
        if len(z_raw) < expected:
            raise TruncatedPayloadError(f"dictionary.bin truncated: {len(z_raw)} bytes on disk, needs {expected}")
        if len(z_raw) > expected:
            raise ShapeMismatchError(f"manifest/payload shape mismatch: dictionary.bin has {len(z_raw)} bytes, needs {expected}")
        Z = np.frombuffer(z_raw, dtype=PARAM_DTYPE).reshape(shape).copy()
        dictionary = ConfounderDictionary(Z=Z, counts=np.asarray(dm["counts"], dtype=np.int64), frozen=bool(dm["frozen"]))
        dictionary.updates = int(dm["updates"])

    return Checkpoint(
        arm=manifest["arm"],
        config=config,
        params=params,
        dictionary=dictionary,
        epoch=int(manifest["epoch"]),
        epoch_losses=[{k: float(v) for k, v in row.items()} for row in manifest["epoch_losses"]],
        data_dims=manifest["data_dims"],
    )
