"""Synthetic multimodal benchmark with subjects as built-in confounders.

Each subject carries a persistent per-modality style vector (the confounding
mechanism: it shapes every frame the subject produces) and, for training
subjects, a preferred label class (the confounder's pull on the label prior).
A frame of modality m for a sample with label y is

    alpha_signal * u[m, y]  +  beta_style * style[m, subject]  +  sigma_noise * eps

with orthonormal class directions u and i.i.d. standard normal eps. Training
subjects emit their preferred class with probability rho; out-of-distribution
subjects have fresh styles and uniform labels, so any style->label shortcut
learned in training stops paying off exactly there.

On disk a bundle is a directory: ``meta.json`` plus one raw float32
little-endian payload per split (row-major, sample-major, modality order
t, v, a).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    FormatVersionError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
)
from .nn import rng_stream

MODALITIES = ("t", "v", "a")
BUNDLE_FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")

# rng substream tags
_TAG_DIRECTIONS = 11
_TAG_SUBJECT = 12


@dataclass(frozen=True)
class GenConfig:
    n_train_subjects: int = 24
    n_ood_subjects: int = 8
    samples_per_subject: int = 200
    seq_lens: tuple[int, int, int] = (12, 10, 10)
    dims: tuple[int, int, int] = (16, 8, 8)
    n_classes: int = 3
    rho: float = 0.8
    alpha_signal: float = 1.0
    beta_style: float = 1.5
    # optional per-modality override of beta_style, order (t, v, a)
    beta_style_per_modality: tuple[float, float, float] | None = None
    sigma_noise: float = 0.7
    iid_holdout_frac: float = 0.2
    seed: int = 7

    def validate(self) -> None:
        for name in ("n_train_subjects", "n_ood_subjects", "samples_per_subject"):
            if getattr(self, name) < 1:
                raise ValidationError(f"GenConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ValidationError(f"GenConfig.n_classes must be >= 2, got {self.n_classes}")
        if self.n_train_subjects < self.n_classes:
            raise ValidationError(
                f"GenConfig.n_train_subjects ({self.n_train_subjects}) must be >= n_classes "
                f"({self.n_classes}) so every class has a preferred subject"
            )
        if len(self.seq_lens) != 3 or any(t < 1 for t in self.seq_lens):
            raise ValidationError(f"GenConfig.seq_lens must be three counts >= 1, got {self.seq_lens}")
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValidationError(f"GenConfig.dims must be three widths >= 1, got {self.dims}")
        if any(d < self.n_classes for d in self.dims):
            raise ValidationError(
                f"GenConfig.dims {self.dims} must each be >= n_classes ({self.n_classes}) "
                "for orthonormal class directions"
            )
        if not (1.0 / self.n_classes <= self.rho <= 1.0):
            raise ValidationError(
                f"GenConfig.rho must lie in [1/n_classes, 1] = [{1.0 / self.n_classes:.4f}, 1], got {self.rho}"
            )
        for name in ("alpha_signal", "beta_style", "sigma_noise"):
            if getattr(self, name) < 0.0:
                raise ValidationError(f"GenConfig.{name} must be >= 0, got {getattr(self, name)}")
        if self.beta_style_per_modality is not None:
            if len(self.beta_style_per_modality) != 3 or any(b < 0 for b in self.beta_style_per_modality):
                raise ValidationError(
                    f"GenConfig.beta_style_per_modality must be three scales >= 0, got {self.beta_style_per_modality}"
                )
        if not (0.0 < self.iid_holdout_frac < 1.0):
            raise ValidationError(f"GenConfig.iid_holdout_frac must lie in (0, 1), got {self.iid_holdout_frac}")

    def betas(self) -> tuple[float, float, float]:
        if self.beta_style_per_modality is not None:
            return tuple(float(b) for b in self.beta_style_per_modality)
        return (self.beta_style,) * 3

    def to_dict(self) -> dict:
        return {
            "n_train_subjects": self.n_train_subjects,
            "n_ood_subjects": self.n_ood_subjects,
            "samples_per_subject": self.samples_per_subject,
            "seq_lens": list(self.seq_lens),
            "dims": list(self.dims),
            "n_classes": self.n_classes,
            "rho": self.rho,
            "alpha_signal": self.alpha_signal,
            "beta_style": self.beta_style,
            "beta_style_per_modality": (
                list(self.beta_style_per_modality) if self.beta_style_per_modality is not None else None
            ),
            "sigma_noise": self.sigma_noise,
            "iid_holdout_frac": self.iid_holdout_frac,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "GenConfig":
        known = set(GenConfig().to_dict())
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"GenConfig has unknown keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "seq_lens" in kwargs:
            kwargs["seq_lens"] = tuple(kwargs["seq_lens"])
        if "dims" in kwargs:
            kwargs["dims"] = tuple(kwargs["dims"])
        if kwargs.get("beta_style_per_modality") is not None:
            kwargs["beta_style_per_modality"] = tuple(kwargs["beta_style_per_modality"])
        return GenConfig(**kwargs)


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int
    preferred_class: int  # -1 for OOD subjects (uniform labels, no pull)
    style_vectors: tuple[np.ndarray, np.ndarray, np.ndarray]  # unit norm, float64
    split_tag: str  # "train" | "ood"


@dataclass(frozen=True)
class MultimodalSample:
    x_t: np.ndarray  # (T_t, d_t) float32
    x_v: np.ndarray  # (T_v, d_v) float32
    x_a: np.ndarray  # (T_a, d_a) float32
    y_t: int
    y_s: int
    split_tag: str  # "train" | "iid_test" | "ood_test"

    def modality(self, m: str) -> np.ndarray:
        return {"t": self.x_t, "v": self.x_v, "a": self.x_a}[m]


@dataclass
class DatasetBundle:
    config: GenConfig
    subjects: list[SubjectProfile]
    samples: dict[str, list[MultimodalSample]] = field(default_factory=dict)
    # orthonormal class-signal directions, one (d_m, n_classes) matrix per modality
    class_directions: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def split(self, tag: str) -> list[MultimodalSample]:
        if tag not in self.samples:
            raise ValidationError(f"unknown split {tag!r}; have {sorted(self.samples)}")
        return self.samples[tag]

    @property
    def splits(self) -> tuple[str, ...]:
        return tuple(self.samples)


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = float(np.linalg.norm(v))
    while norm < 1e-12:  # essentially unreachable; keeps the contract airtight
        v = rng.standard_normal(dim)
        norm = float(np.linalg.norm(v))
    return v / norm


def _class_directions(config: GenConfig) -> tuple[np.ndarray, ...]:
    """One orthonormal (d_m, n_classes) direction set per modality."""
    out = []
    for mi, d_m in enumerate(config.dims):
        rng = rng_stream(config.seed, _TAG_DIRECTIONS, mi)
        g = rng.standard_normal((d_m, config.n_classes))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))[None, :]  # canonical sign
        out.append(q)
    return tuple(out)


def _subject_rng(config: GenConfig, subject_id: int) -> np.random.Generator:
    return rng_stream(config.seed, _TAG_SUBJECT, subject_id)


def generate(config: GenConfig) -> DatasetBundle:
    """Deterministic synthesis of subjects, labels, frames, and splits.

    Each subject's randomness comes from an independent stream keyed by
    (seed, subject_id), so per-subject work could be parallelized without
    changing the output.
    """
    config.validate()
    directions = _class_directions(config)
    betas = config.betas()
    n_iid_train = math.ceil((1.0 - config.iid_holdout_frac) * config.samples_per_subject)

    subjects: list[SubjectProfile] = []
    samples: dict[str, list[MultimodalSample]] = {"train": [], "iid_test": [], "ood_test": []}

    n_total = config.n_train_subjects + config.n_ood_subjects
    for sid in range(n_total):
        is_train = sid < config.n_train_subjects
        rng = _subject_rng(config, sid)
        styles = tuple(_unit_vector(rng, d_m) for d_m in config.dims)
        preferred = sid % config.n_classes if is_train else -1
        subjects.append(
            SubjectProfile(
                subject_id=sid,
                preferred_class=preferred,
                style_vectors=styles,
                split_tag="train" if is_train else "ood",
            )
        )
        for k in range(config.samples_per_subject):
            if is_train:
                if rng.random() < config.rho:
                    y = preferred
                else:
                    y = int(rng.integers(0, config.n_classes - 1))
                    if y >= preferred:
                        y += 1  # uniform over the non-preferred classes
            else:
                y = int(rng.integers(0, config.n_classes))
            mats = []
            for mi, (T_m, d_m) in enumerate(zip(config.seq_lens, config.dims)):
                base = config.alpha_signal * directions[mi][:, y] + betas[mi] * styles[mi]
                frames = base[None, :] + config.sigma_noise * rng.standard_normal((T_m, d_m))
                mats.append(frames.astype(np.float32))
            if is_train:
                tag = "train" if k < n_iid_train else "iid_test"
            else:
                tag = "ood_test"
            samples[tag].append(
                MultimodalSample(x_t=mats[0], x_v=mats[1], x_a=mats[2], y_t=int(y), y_s=sid, split_tag=tag)
            )

    return DatasetBundle(config=config, subjects=subjects, samples=samples, class_directions=directions)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _sample_layout(config: GenConfig) -> dict:
    shapes = {m: [int(t), int(d)] for m, t, d in zip(MODALITIES, config.seq_lens, config.dims)}
    offsets = {}
    cursor = 0
    for m in MODALITIES:
        offsets[m] = cursor
        cursor += shapes[m][0] * shapes[m][1] * PAYLOAD_DTYPE.itemsize
    return {
        "modalities": list(MODALITIES),
        "shapes": shapes,
        "offsets_bytes": offsets,
        "sample_stride_bytes": cursor,
        "dtype": "<f4",
        "order": "C",
    }


def save_bundle(bundle: DatasetBundle, path: str | Path) -> Path:
    """Write meta.json plus one raw payload per split; returns the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    layout = _sample_layout(bundle.config)
    splits_meta = {}
    for tag in ("train", "iid_test", "ood_test"):
        rows = bundle.samples.get(tag, [])
        fname = f"{tag}.bin"
        blob = bytearray()
        for s in rows:
            for m in MODALITIES:
                blob += np.ascontiguousarray(s.modality(m), dtype=PAYLOAD_DTYPE).tobytes()
        (root / fname).write_bytes(bytes(blob))
        splits_meta[tag] = {
            "file": fname,
            "count": len(rows),
            "bytes": len(blob),
            "y_t": [s.y_t for s in rows],
            "y_s": [s.y_s for s in rows],
        }
    meta = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "sample_layout": layout,
        "subjects": [
            {
                "subject_id": s.subject_id,
                "preferred_class": s.preferred_class,
                "split_tag": s.split_tag,
                "style_vectors": [v.tolist() for v in s.style_vectors],
            }
            for s in bundle.subjects
        ],
        "class_directions": (
            [m.tolist() for m in bundle.class_directions] if bundle.class_directions is not None else None
        ),
        "splits": splits_meta,
    }
    with open(root / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def load_bundle(path: str | Path) -> DatasetBundle:
    """Inverse of save_bundle; bit-identical arrays, validated against the manifest."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise ValidationError(f"no meta.json under {root}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    version = meta.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise FormatVersionError(
            f"bundle format version {version!r} unsupported (expected {BUNDLE_FORMAT_VERSION})"
        )
    config = GenConfig.from_dict(meta["config"])
    config.validate()
    layout = meta["sample_layout"]
    expected_layout = _sample_layout(config)
    if layout != expected_layout:
        raise ShapeMismatchError(
            "manifest/payload shape mismatch: sample_layout disagrees with config "
            f"(declared {layout.get('shapes')}, config implies {expected_layout['shapes']})"
        )
    stride = layout["sample_stride_bytes"]

    subjects = [
        SubjectProfile(
            subject_id=int(s["subject_id"]),
            preferred_class=int(s["preferred_class"]),
            style_vectors=tuple(np.asarray(v, dtype=np.float64) for v in s["style_vectors"]),
            split_tag=s["split_tag"],
        )
        for s in meta["subjects"]
    ]
    directions = None
    if meta.get("class_directions") is not None:
        directions = tuple(np.asarray(m, dtype=np.float64) for m in meta["class_directions"])

    samples: dict[str, list[MultimodalSample]] = {}
    for tag, info in meta["splits"].items():
        count = int(info["count"])
        declared = int(info["bytes"])
        if declared != count * stride:
            raise ShapeMismatchError(
                f"manifest/payload shape mismatch in split {tag!r}: declares {declared} bytes "
                f"but {count} samples x {stride} bytes/sample = {count * stride}"
            )
        fpath = root / info["file"]
        if not fpath.exists():
            raise TruncatedPayloadError(f"payload file {info['file']!r} missing for split {tag!r}")
        raw = fpath.read_bytes()
        if len(raw) < declared:
            raise TruncatedPayloadError(
                f"payload {info['file']!r} truncated: {len(raw)} bytes on disk, manifest declares {declared}"
            )
        if len(raw) > declared:
            raise ShapeMismatchError(
                f"manifest/payload shape mismatch: {info['file']!r} has {len(raw)} bytes, manifest declares {declared}"
            )
        rows = []
        for i in range(count):
            mats = {}
            for m in MODALITIES:
                t, d = layout["shapes"][m]
                start = i * stride + layout["offsets_bytes"][m]
                arr = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, count=t * d, offset=start)
                mats[m] = arr.reshape(t, d).copy()
            rows.append(
                MultimodalSample(
                    x_t=mats["t"],
                    x_v=mats["v"],
                    x_a=mats["a"],
                    y_t=int(info["y_t"][i]),
                    y_s=int(info["y_s"][i]),
                    split_tag=tag,
                )
            )
        samples[tag] = rows
    return DatasetBundle(config=config, subjects=subjects, samples=samples, class_directions=directions)


def bundles_equal(a: DatasetBundle, b: DatasetBundle) -> bool:
    """Field-for-field equality with bit-identical arrays."""
    if a.config != b.config or len(a.subjects) != len(b.subjects):
        return False
    for sa, sb in zip(a.subjects, b.subjects):
        if (sa.subject_id, sa.preferred_class, sa.split_tag) != (sb.subject_id, sb.preferred_class, sb.split_tag):
            return False
        if any(not np.array_equal(va, vb) for va, vb in zip(sa.style_vectors, sb.style_vectors)):
            return False
    if (a.class_directions is None) != (b.class_directions is None):
        return False
    if a.class_directions is not None:
        if any(not np.array_equal(ma, mb) for ma, mb in zip(a.class_directions, b.class_directions)):
            return False
    if set(a.samples) != set(b.samples):
        return False
    for tag in a.samples:
        if len(a.samples[tag]) != len(b.samples[tag]):
            return False
        for ra, rb in zip(a.samples[tag], b.samples[tag]):
            if (ra.y_t, ra.y_s, ra.split_tag) != (rb.y_t, rb.y_s, rb.split_tag):
                return False
            for m in MODALITIES:
                if not np.array_equal(ra.modality(m), rb.modality(m)):
                    return False
    return True


def default_bundle(seed: int | None = None) -> DatasetBundle:
    """The benchmark bundle under the default generator configuration."""
    cfg = GenConfig() if seed is None else replace(GenConfig(), seed=seed)
    return generate(cfg)
