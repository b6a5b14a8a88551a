"""Reference multimodal backbone and the baseline classification head.

Deliberately simple: per modality, mean over frames, one affine layer with a
GeLU, then the three modality encodings are concatenated and passed through a
second affine + GeLU to give the shared representation. The de-confounding
machinery reads this representation; a plain affine head on top of it is the
baseline arm. Pooling here is a frame mean on purpose so that the attention
pooling in the disentanglement path stays the only attention over frames.

All forwards are pure. Functions ending in ``_backward`` consume the cache
returned by the matching ``*_with_cache`` forward and return parameter
gradients as a flat name->array dict (same names as ``*.flat()``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import MODALITIES, MultimodalSample
from .errors import ValidationError
from .nn import affine, affine_backward, gelu, gelu_grad, init_affine

D_ENC_DEFAULT = 32
D_FUSED_DEFAULT = 64


def stack_batch(samples: Sequence[MultimodalSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (X_t, X_v, X_a, y_t, y_s); all samples must share shapes."""
    if len(samples) == 0:
        raise ValidationError("cannot stack an empty batch")
    xs = []
    for mi, m in enumerate(MODALITIES):
        first = samples[0].modality(m)
        for s in samples:
            if s.modality(m).shape != first.shape:
                raise ValidationError(
                    f"modality {m!r}: inconsistent shapes in batch, {s.modality(m).shape} vs {first.shape}"
                )
        xs.append(np.stack([s.modality(m) for s in samples], axis=0))
    y_t = np.asarray([s.y_t for s in samples], dtype=np.int64)
    y_s = np.asarray([s.y_s for s in samples], dtype=np.int64)
    return xs[0], xs[1], xs[2], y_t, y_s


@dataclass
class BackboneParams:
    """Per-modality affine encoders (d_m -> d_enc) plus a fusion affine (3*d_enc -> d)."""

    enc_W: tuple[np.ndarray, np.ndarray, np.ndarray]  # each (d_enc, d_m)
    enc_b: tuple[np.ndarray, np.ndarray, np.ndarray]  # each (d_enc,)
    fuse_W: np.ndarray  # (d, 3*d_enc)
    fuse_b: np.ndarray  # (d,)

    @property
    def d_enc(self) -> int:
        return self.enc_W[0].shape[0]

    @property
    def d_fused(self) -> int:
        return self.fuse_W.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(W.shape[1] for W in self.enc_W)

    def validate(self) -> None:
        for m, W, b in zip(MODALITIES, self.enc_W, self.enc_b):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValidationError(f"backbone encoder {m!r}: weight {W.shape} and bias {b.shape} disagree")
            if W.shape[0] != self.d_enc:
                raise ValidationError(f"backbone encoder {m!r}: output width {W.shape[0]} != d_enc {self.d_enc}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValidationError(f"backbone encoder {m!r}: non-finite parameters")
        if self.fuse_W.shape[1] != 3 * self.d_enc:
            raise ValidationError(
                f"backbone fusion: input width {self.fuse_W.shape[1]} != 3*d_enc = {3 * self.d_enc}"
            )
        if self.fuse_b.shape != (self.fuse_W.shape[0],):
            raise ValidationError(f"backbone fusion: bias shape {self.fuse_b.shape} != ({self.fuse_W.shape[0]},)")
        if not (np.all(np.isfinite(self.fuse_W)) and np.all(np.isfinite(self.fuse_b))):
            raise ValidationError("backbone fusion: non-finite parameters")

    def flat(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m, W, b in zip(MODALITIES, self.enc_W, self.enc_b):
            out[f"backbone.enc_{m}.W"] = W
            out[f"backbone.enc_{m}.b"] = b
        out["backbone.fuse.W"] = self.fuse_W
        out["backbone.fuse.b"] = self.fuse_b
        return out

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "BackboneParams":
        return BackboneParams(
            enc_W=tuple(flat[f"backbone.enc_{m}.W"] for m in MODALITIES),
            enc_b=tuple(flat[f"backbone.enc_{m}.b"] for m in MODALITIES),
            fuse_W=flat["backbone.fuse.W"],
            fuse_b=flat["backbone.fuse.b"],
        )


@dataclass
class VanillaHeadParams:
    """Affine map from the fused representation to class logits."""

    W: np.ndarray  # (C_t, d)
    b: np.ndarray  # (C_t,)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def validate(self) -> None:
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValidationError(f"vanilla head: weight {self.W.shape} and bias {self.b.shape} disagree")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("vanilla head: non-finite parameters")

    def flat(self) -> dict[str, np.ndarray]:
        return {"vanilla_head.W": self.W, "vanilla_head.b": self.b}

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "VanillaHeadParams":
        return VanillaHeadParams(W=flat["vanilla_head.W"], b=flat["vanilla_head.b"])


def init_backbone(
    rng: np.random.Generator,
    dims: tuple[int, int, int],
    d_enc: int = D_ENC_DEFAULT,
    d_fused: int = D_FUSED_DEFAULT,
    dtype=np.float32,
) -> BackboneParams:
    if d_enc < 1 or d_fused < 1:
        raise ValidationError(f"backbone widths must be >= 1, got d_enc={d_enc}, d_fused={d_fused}")
    enc = [init_affine(rng, d_enc, d_m, dtype=dtype) for d_m in dims]
    fuse_W, fuse_b = init_affine(rng, d_fused, 3 * d_enc, dtype=dtype)
    return BackboneParams(
        enc_W=tuple(w for w, _ in enc),
        enc_b=tuple(b for _, b in enc),
        fuse_W=fuse_W,
        fuse_b=fuse_b,
    )


def init_vanilla_head(rng: np.random.Generator, d_fused: int, n_classes: int, dtype=np.float32) -> VanillaHeadParams:
    W, b = init_affine(rng, n_classes, d_fused, dtype=dtype)
    return VanillaHeadParams(W=W, b=b)


def _as_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(batch, (tuple, list)) and len(batch) > 0 and isinstance(batch[0], np.ndarray):
        if len(batch) != 3:
            raise ValidationError(f"expected three modality arrays, got {len(batch)}")
        return tuple(np.asarray(x) for x in batch)
    xs_t, xs_v, xs_a, _, _ = stack_batch(batch)
    return xs_t, xs_v, xs_a


def encode_with_cache(batch, params: BackboneParams) -> tuple[np.ndarray, dict]:
    """Fused representation matrix (B, d) plus the cache for the backward pass."""
    xs = _as_arrays(batch)
    pooled, pre_enc, hidden = [], [], []
    for mi, (m, x) in enumerate(zip(MODALITIES, xs)):
        if x.ndim != 3:
            raise ValidationError(f"modality {m!r}: expected 3 axes (batch, frames, features), got {x.ndim}")
        if x.shape[2] != params.enc_W[mi].shape[1]:
            raise ValidationError(
                f"modality {m!r}: feature axis has width {x.shape[2]}, encoder expects {params.enc_W[mi].shape[1]}"
            )
        p = x.mean(axis=1)
        a = affine(p, params.enc_W[mi], params.enc_b[mi])
        pooled.append(p)
        pre_enc.append(a)
        hidden.append(gelu(a))
    cat = np.concatenate(hidden, axis=1)
    pre_fuse = affine(cat, params.fuse_W, params.fuse_b)
    m_out = gelu(pre_fuse)
    cache = {"pooled": pooled, "pre_enc": pre_enc, "cat": cat, "pre_fuse": pre_fuse}
    return m_out, cache


def encode(batch, params: BackboneParams) -> np.ndarray:
    m_out, _ = encode_with_cache(batch, params)
    return m_out


def encode_backward(grad_m: np.ndarray, cache: dict, params: BackboneParams) -> dict[str, np.ndarray]:
    grad_pre_fuse = grad_m * gelu_grad(cache["pre_fuse"])
    grad_cat, dW_f, db_f = affine_backward(grad_pre_fuse, cache["cat"], params.fuse_W)
    grads = {"backbone.fuse.W": dW_f, "backbone.fuse.b": db_f}
    d_enc = params.d_enc
    for mi, m in enumerate(MODALITIES):
        chunk = grad_cat[:, mi * d_enc : (mi + 1) * d_enc]
        grad_pre = chunk * gelu_grad(cache["pre_enc"][mi])
        _, dW, db = affine_backward(grad_pre, cache["pooled"][mi], params.enc_W[mi])
        grads[f"backbone.enc_{m}.W"] = dW
        grads[f"backbone.enc_{m}.b"] = db
    return grads


def vanilla_logits(m: np.ndarray, params: VanillaHeadParams) -> np.ndarray:
    m = np.asarray(m)
    if m.shape[-1] != params.W.shape[1]:
        raise ValidationError(f"vanilla head expects width {params.W.shape[1]}, got {m.shape[-1]}")
    return affine(m, params.W, params.b)


def vanilla_logits_backward(
    grad_logits: np.ndarray, m: np.ndarray, params: VanillaHeadParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grad_m, dW, db = affine_backward(grad_logits, m, params.W)
    return grad_m, {"vanilla_head.W": dW, "vanilla_head.b": db}
