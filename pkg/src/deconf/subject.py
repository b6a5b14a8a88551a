"""Subject-specific feature disentanglement.

A second pathway, parallel to the backbone, reads the raw frames directly:
per modality, a learned frame-attention pool (softmax over frames of
x_m w + b) gives a summary p_m; the concatenated summaries pass through a
two-layer GeLU perceptron to give the subject feature s. Two linear
discriminators shape s: a subject discriminator pulls s toward identifying
its subject (cross-entropy against the subject id), and a task discriminator
pushes s to carry no task signal (mean squared gap between its softmax and
the uniform vector).

Two optimization modes for the task-discriminator term:

- "literal": the combined objective is minimized jointly in all parameters,
  including the task discriminator's (which can then satisfy its term by
  collapsing to a constant uniform output).
- "adversarial" (default): within the combined objective the task
  discriminator is frozen (the uniformity term shapes only the upstream
  path), and the discriminator itself is trained by a separate step to
  predict the task label from a gradient-isolated copy of s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import MODALITIES
from .errors import ValidationError
from .nn import (
    affine,
    affine_backward,
    cross_entropy,
    gelu,
    gelu_grad,
    init_affine,
    mse_to_uniform,
    softmax,
    softmax_backward,
)

TASK_DISC_MODES = ("adversarial", "literal")


@dataclass(frozen=True)
class SubjectFeature:
    """Disentangled subject representation, width d_s = d_t + d_v + d_a."""

    s: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.s)):
            raise ValidationError("subject feature has non-finite entries")


@dataclass
class DynamicFusionParams:
    """Per modality: frame-score weights w (d_m,) and per-position bias b (T_m,)."""

    w: tuple[np.ndarray, np.ndarray, np.ndarray]
    b: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(w.shape[0] for w in self.w)

    @property
    def seq_lens(self) -> tuple[int, int, int]:
        return tuple(b.shape[0] for b in self.b)

    def validate(self) -> None:
        for m, w, b in zip(MODALITIES, self.w, self.b):
            if w.ndim != 1 or b.ndim != 1:
                raise ValidationError(f"fusion {m!r}: w and b must be vectors, got {w.shape} and {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"fusion {m!r}: non-finite parameters")

    def flat(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m, w, b in zip(MODALITIES, self.w, self.b):
            out[f"fusion.{m}.w"] = w
            out[f"fusion.{m}.b"] = b
        return out

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "DynamicFusionParams":
        return DynamicFusionParams(
            w=tuple(flat[f"fusion.{m}.w"] for m in MODALITIES),
            b=tuple(flat[f"fusion.{m}.b"] for m in MODALITIES),
        )


@dataclass
class GeneratorParams:
    """Two affine layers with a GeLU between: d_s -> d_g -> d_s."""

    W1: np.ndarray  # (d_g, d_s)
    b1: np.ndarray  # (d_g,)
    W2: np.ndarray  # (d_s, d_g)
    b2: np.ndarray  # (d_s,)

    @property
    def d_s(self) -> int:
        return self.W1.shape[1]

    def validate(self) -> None:
        if self.W2.shape != (self.W1.shape[1], self.W1.shape[0]):
            raise ValidationError(
                f"generator: layer shapes {self.W1.shape} and {self.W2.shape} do not compose d_s->d_g->d_s"
            )
        if self.b1.shape != (self.W1.shape[0],) or self.b2.shape != (self.W2.shape[0],):
            raise ValidationError("generator: bias widths disagree with weights")
        for a in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(a)):
                raise ValidationError("generator: non-finite parameters")

    def flat(self) -> dict[str, np.ndarray]:
        return {
            "generator.l1.W": self.W1,
            "generator.l1.b": self.b1,
            "generator.l2.W": self.W2,
            "generator.l2.b": self.b2,
        }

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "GeneratorParams":
        return GeneratorParams(
            W1=flat["generator.l1.W"],
            b1=flat["generator.l1.b"],
            W2=flat["generator.l2.W"],
            b2=flat["generator.l2.b"],
        )


@dataclass
class DiscriminatorParams:
    """Subject discriminator (d_s -> n_subjects) and task discriminator (d_s -> n_classes)."""

    subject_W: np.ndarray
    subject_b: np.ndarray
    task_W: np.ndarray
    task_b: np.ndarray

    @property
    def n_subjects(self) -> int:
        return self.subject_W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.task_W.shape[0]

    def validate(self) -> None:
        if self.subject_b.shape != (self.subject_W.shape[0],):
            raise ValidationError("subject discriminator: bias width disagrees with weight")
        if self.task_b.shape != (self.task_W.shape[0],):
            raise ValidationError("task discriminator: bias width disagrees with weight")
        if self.subject_W.shape[1] != self.task_W.shape[1]:
            raise ValidationError(
                f"discriminators disagree on d_s: {self.subject_W.shape[1]} vs {self.task_W.shape[1]}"
            )
        for a in (self.subject_W, self.subject_b, self.task_W, self.task_b):
            if not np.all(np.isfinite(a)):
                raise ValidationError("discriminator: non-finite parameters")

    def flat(self) -> dict[str, np.ndarray]:
        return {
            "disc_subject.W": self.subject_W,
            "disc_subject.b": self.subject_b,
            "disc_task.W": self.task_W,
            "disc_task.b": self.task_b,
        }

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "DiscriminatorParams":
        return DiscriminatorParams(
            subject_W=flat["disc_subject.W"],
            subject_b=flat["disc_subject.b"],
            task_W=flat["disc_task.W"],
            task_b=flat["disc_task.b"],
        )


def init_fusion(rng: np.random.Generator, dims, seq_lens, dtype=np.float32) -> DynamicFusionParams:
    ws, bs = [], []
    for d_m, t_m in zip(dims, seq_lens):
        ws.append((rng.standard_normal(d_m) / np.sqrt(d_m)).astype(dtype))
        bs.append(np.zeros(t_m, dtype=dtype))
    return DynamicFusionParams(w=tuple(ws), b=tuple(bs))


def init_generator(rng: np.random.Generator, d_s: int, d_g: int, dtype=np.float32) -> GeneratorParams:
    W1, b1 = init_affine(rng, d_g, d_s, dtype=dtype)
    W2, b2 = init_affine(rng, d_s, d_g, dtype=dtype)
    return GeneratorParams(W1=W1, b1=b1, W2=W2, b2=b2)


def init_discriminators(
    rng: np.random.Generator, d_s: int, n_subjects: int, n_classes: int, dtype=np.float32
) -> DiscriminatorParams:
    sW, sb = init_affine(rng, n_subjects, d_s, dtype=dtype)
    tW, tb = init_affine(rng, n_classes, d_s, dtype=dtype)
    return DiscriminatorParams(subject_W=sW, subject_b=sb, task_W=tW, task_b=tb)


# ---------------------------------------------------------------------------
# Dynamic fusion
# ---------------------------------------------------------------------------

def dynamic_fusion(x_m: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Attention-pool one modality's frames: returns (p_m, xi).

    xi = softmax over frames of (x_m w + b); p_m = xi^T x_m. xi is a simplex
    point, so p_m lies in the convex hull of the frame rows.
    """
    x_m = np.asarray(x_m)
    if x_m.ndim != 2:
        raise ValidationError(f"dynamic_fusion expects a (frames, features) matrix, got {x_m.ndim} axes")
    if w.shape != (x_m.shape[1],):
        raise ValidationError(f"fusion weight width {w.shape} does not match feature width {x_m.shape[1]}")
    if b.shape != (x_m.shape[0],):
        raise ValidationError(f"fusion bias length {b.shape} does not match frame count {x_m.shape[0]}")
    xi = softmax(x_m @ w + b)
    return xi @ x_m, xi


POOL_MODES = ("attention", "mean")


def fusion_with_cache(
    xs: tuple[np.ndarray, np.ndarray, np.ndarray],
    params: DynamicFusionParams,
    drop: frozenset[str] = frozenset(),
    pool_mode: str = "attention",
) -> tuple[np.ndarray, dict]:
    """Batched fusion of all modalities into one (B, d_s) matrix.

    Modalities named in `drop` contribute zero blocks of unchanged width, so
    the downstream widths are identical across modality ablations. pool_mode
    "mean" replaces the learned frame attention with a plain frame average
    (uniform weights, no gradient to the fusion parameters).
    """
    if pool_mode not in POOL_MODES:
        raise ValidationError(f"unknown pool_mode {pool_mode!r}; expected one of {POOL_MODES}")
    unknown = drop - set(MODALITIES)
    if unknown:
        raise ValidationError(f"unknown modalities to drop: {sorted(unknown)}")
    chunks, xis = [], []
    for mi, (m, x) in enumerate(zip(MODALITIES, xs)):
        x = np.asarray(x)
        if x.ndim != 3:
            raise ValidationError(f"modality {m!r}: expected (batch, frames, features), got {x.ndim} axes")
        if x.shape[2] != params.w[mi].shape[0]:
            raise ValidationError(
                f"modality {m!r}: feature axis width {x.shape[2]} does not match fusion weight {params.w[mi].shape[0]}"
            )
        if x.shape[1] != params.b[mi].shape[0]:
            raise ValidationError(
                f"modality {m!r}: frame axis length {x.shape[1]} does not match fusion bias {params.b[mi].shape[0]}"
            )
        if pool_mode == "attention":
            scores = x @ params.w[mi] + params.b[mi][None, :]
            xi = softmax(scores, axis=1)
        else:
            xi = np.full(x.shape[:2], 1.0 / x.shape[1], dtype=x.dtype)
        p = np.einsum("bt,btd->bd", xi, x)
        if m in drop:
            p = np.zeros_like(p)
        chunks.append(p)
        xis.append(xi)
    cat = np.concatenate(chunks, axis=1)
    cache = {"xs": xs, "xis": xis, "drop": drop, "dims": params.dims, "pool_mode": pool_mode}
    return cat, cache


def fusion_backward(grad_cat: np.ndarray, cache: dict, params: DynamicFusionParams) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    offset = 0
    for mi, m in enumerate(MODALITIES):
        d_m = cache["dims"][mi]
        grad_p = grad_cat[:, offset : offset + d_m]
        offset += d_m
        x, xi = cache["xs"][mi], cache["xis"][mi]
        if m in cache["drop"] or cache["pool_mode"] == "mean":
            grads[f"fusion.{m}.w"] = np.zeros_like(params.w[mi])
            grads[f"fusion.{m}.b"] = np.zeros_like(params.b[mi])
            continue
        grad_xi = np.einsum("bd,btd->bt", grad_p, x)
        grad_scores = softmax_backward(grad_xi, xi, axis=1)
        grads[f"fusion.{m}.w"] = np.einsum("bt,btd->d", grad_scores, x)
        grads[f"fusion.{m}.b"] = grad_scores.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Subject generator
# ---------------------------------------------------------------------------

def subject_generator(p_t: np.ndarray, p_v: np.ndarray, p_a: np.ndarray, params: GeneratorParams) -> SubjectFeature:
    """Map the three modality summaries to one subject feature."""
    cat = np.concatenate([np.asarray(p_t), np.asarray(p_v), np.asarray(p_a)])
    if cat.shape != (params.d_s,):
        raise ValidationError(f"generator expects concatenated width {params.d_s}, got {cat.shape}")
    s, _ = generator_with_cache(cat[None, :], params)
    return SubjectFeature(s=s[0])


def generator_with_cache(cat: np.ndarray, params: GeneratorParams) -> tuple[np.ndarray, dict]:
    if cat.shape[-1] != params.d_s:
        raise ValidationError(f"generator expects width {params.d_s}, got {cat.shape[-1]}")
    a1 = affine(cat, params.W1, params.b1)
    h = gelu(a1)
    s = affine(h, params.W2, params.b2)
    return s, {"cat": cat, "a1": a1, "h": h}


def generator_backward(grad_s: np.ndarray, cache: dict, params: GeneratorParams) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grad_h, dW2, db2 = affine_backward(grad_s, cache["h"], params.W2)
    grad_a1 = grad_h * gelu_grad(cache["a1"])
    grad_cat, dW1, db1 = affine_backward(grad_a1, cache["cat"], params.W1)
    return grad_cat, {
        "generator.l1.W": dW1,
        "generator.l1.b": db1,
        "generator.l2.W": dW2,
        "generator.l2.b": db2,
    }


# ---------------------------------------------------------------------------
# Discriminator losses
# ---------------------------------------------------------------------------

def subject_loss(
    s: np.ndarray,
    y_s: np.ndarray | int,
    disc: DiscriminatorParams,
    mode: str = "adversarial",
) -> tuple[float, dict[str, float]]:
    """Combined disentanglement loss with its per-term breakdown.

    Returns (subject_ce + task_uniform_mse, breakdown). The mode does not
    change the value, only which parameters the gradients reach; it is
    validated here so a bad mode fails loudly at the first loss evaluation.
    """
    total, breakdown, _, _ = subject_loss_with_grads(s, y_s, disc, mode)
    return total, breakdown


def subject_loss_with_grads(
    s: np.ndarray,
    y_s: np.ndarray | int,
    disc: DiscriminatorParams,
    mode: str = "adversarial",
    term_weights: tuple[float, float] = (1.0, 1.0),
) -> tuple[float, dict[str, float], np.ndarray, dict[str, np.ndarray]]:
    """Loss, breakdown, gradient wrt s, and discriminator-parameter gradients.

    term_weights scales (subject_ce, task_uniform_mse); a zero weight removes
    the term from the value, from the gradient wrt s, and from the parameter
    gradients (used by the discriminator ablations). In adversarial mode the
    task discriminator's parameters receive no gradient from the uniformity
    term (they are trained separately via task_disc_step_grads); in literal
    mode they do.
    """
    if mode not in TASK_DISC_MODES:
        raise ValidationError(f"unknown task_disc_mode {mode!r}; expected one of {TASK_DISC_MODES}")
    w_ce, w_mse = float(term_weights[0]), float(term_weights[1])
    S = np.atleast_2d(np.asarray(s))
    y = np.atleast_1d(np.asarray(y_s, dtype=np.int64))
    if S.shape[-1] != disc.subject_W.shape[1]:
        raise ValidationError(f"subject feature width {S.shape[-1]} does not match discriminators ({disc.subject_W.shape[1]})")
    if np.any(y < 0) or np.any(y >= disc.n_subjects):
        raise ValidationError(f"subject index out of range [0, {disc.n_subjects}): {y}")

    logits_s = affine(S, disc.subject_W, disc.subject_b)
    ce, grad_logits_s = cross_entropy(logits_s, y)
    grad_S_ce, dWs, dbs = affine_backward(grad_logits_s, S, disc.subject_W)

    logits_t = affine(S, disc.task_W, disc.task_b)
    mse, grad_logits_t = mse_to_uniform(logits_t)
    grad_S_mse, dWt, dbt = affine_backward(grad_logits_t, S, disc.task_W)

    grads: dict[str, np.ndarray] = {}
    if w_ce != 0.0:
        grads["disc_subject.W"] = w_ce * dWs
        grads["disc_subject.b"] = w_ce * dbs
    if mode == "literal" and w_mse != 0.0:
        grads["disc_task.W"] = w_mse * dWt
        grads["disc_task.b"] = w_mse * dbt
    total = float(w_ce * ce + w_mse * mse)
    breakdown = {"subject_ce": float(ce), "task_uniform_mse": float(mse)}
    return total, breakdown, w_ce * grad_S_ce + w_mse * grad_S_mse, grads


def task_disc_step_grads(
    s_detached: np.ndarray, y_t: np.ndarray, disc: DiscriminatorParams
) -> tuple[float, dict[str, np.ndarray]]:
    """Adversarial-mode update for the task discriminator alone.

    Cross-entropy of the task discriminator against the task label on a
    gradient-isolated copy of s: no gradient is returned for s or any other
    parameter group.
    """
    S = np.atleast_2d(np.asarray(s_detached))
    y = np.atleast_1d(np.asarray(y_t, dtype=np.int64))
    logits = affine(S, disc.task_W, disc.task_b)
    ce, grad_logits = cross_entropy(logits, y)
    _, dW, db = affine_backward(grad_logits, S, disc.task_W)
    return float(ce), {"disc_task.W": dW, "disc_task.b": db}
