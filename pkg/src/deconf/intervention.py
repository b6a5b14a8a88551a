"""Backdoor-adjusted prediction head.

Instead of classifying the fused representation alone, the head folds in an
expectation over the confounder dictionary: attention weights psi (the fused
vector queries every prototype, scaled by sqrt(d_s)) are multiplied by the
prototype priors, the weighted prototype sum E = sum_i psi_i * z_i * p(z_i)
is formed without renormalization, and the final features are
W_m m + W_h E, followed by an affine map to class logits. Prototypes are
read-only here: no gradient flows into the dictionary.

Uniform substitutes for psi or the priors (the "no attention" and "no prior"
ablations) keep the same expression with the corresponding factor fixed to
1/n_subjects, preserving the output scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import ConfounderDictionary
from .errors import ValidationError
from .nn import affine, affine_backward, init_affine, softmax, softmax_backward

D_HIDDEN_DEFAULT = 64
D_ATTN_DEFAULT = 128

PSI_MODES = ("attention", "uniform")
PRIOR_MODES = ("counts", "uniform")


@dataclass
class InterventionParams:
    W_m: np.ndarray  # (d_h, d) on the fused representation
    W_h: np.ndarray  # (d_h, d_s) on the confounder expectation
    W_q: np.ndarray  # (d_n, d) query map
    W_k: np.ndarray  # (d_n, d_s) key map
    head_W: np.ndarray  # (C_t, d_h)
    head_b: np.ndarray  # (C_t,)

    @property
    def d_h(self) -> int:
        return self.W_m.shape[0]

    @property
    def d_n(self) -> int:
        return self.W_q.shape[0]

    @property
    def d_in(self) -> int:
        return self.W_m.shape[1]

    @property
    def d_s(self) -> int:
        return self.W_h.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head_W.shape[0]

    def validate(self) -> None:
        if self.W_h.shape[0] != self.d_h:
            raise ValidationError(f"W_h output width {self.W_h.shape[0]} != W_m output width {self.d_h}")
        if self.W_k.shape[0] != self.d_n:
            raise ValidationError(f"W_k output width {self.W_k.shape[0]} != W_q output width {self.d_n}")
        if self.W_q.shape[1] != self.d_in:
            raise ValidationError(f"W_q input width {self.W_q.shape[1]} != W_m input width {self.d_in}")
        if self.W_k.shape[1] != self.d_s:
            raise ValidationError(f"W_k input width {self.W_k.shape[1]} != W_h input width {self.d_s}")
        if self.head_W.shape[1] != self.d_h:
            raise ValidationError(f"head input width {self.head_W.shape[1]} != d_h {self.d_h}")
        if self.head_b.shape != (self.head_W.shape[0],):
            raise ValidationError("head bias width disagrees with head weight")
        for a in (self.W_m, self.W_h, self.W_q, self.W_k, self.head_W, self.head_b):
            if not np.all(np.isfinite(a)):
                raise ValidationError("intervention parameters have non-finite entries")

    def flat(self) -> dict[str, np.ndarray]:
        return {
            "intervention.W_m": self.W_m,
            "intervention.W_h": self.W_h,
            "intervention.W_q": self.W_q,
            "intervention.W_k": self.W_k,
            "intervention.head.W": self.head_W,
            "intervention.head.b": self.head_b,
        }

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray]) -> "InterventionParams":
        return InterventionParams(
            W_m=flat["intervention.W_m"],
            W_h=flat["intervention.W_h"],
            W_q=flat["intervention.W_q"],
            W_k=flat["intervention.W_k"],
            head_W=flat["intervention.head.W"],
            head_b=flat["intervention.head.b"],
        )


def init_intervention(
    rng: np.random.Generator,
    d_in: int,
    d_s: int,
    n_classes: int,
    d_h: int = D_HIDDEN_DEFAULT,
    d_n: int = D_ATTN_DEFAULT,
    dtype=np.float32,
) -> InterventionParams:
    if min(d_in, d_s, n_classes, d_h, d_n) < 1:
        raise ValidationError("intervention widths must all be >= 1")
    W_m, _ = init_affine(rng, d_h, d_in, dtype=dtype)
    W_h, _ = init_affine(rng, d_h, d_s, dtype=dtype)
    W_q, _ = init_affine(rng, d_n, d_in, dtype=dtype)
    W_k, _ = init_affine(rng, d_n, d_s, dtype=dtype)
    head_W, head_b = init_affine(rng, n_classes, d_h, dtype=dtype)
    return InterventionParams(W_m=W_m, W_h=W_h, W_q=W_q, W_k=W_k, head_W=head_W, head_b=head_b)


def intervene_with_cache(
    m: np.ndarray,
    dictionary: ConfounderDictionary,
    params: InterventionParams,
    psi_mode: str = "attention",
    prior_mode: str = "counts",
) -> tuple[np.ndarray, dict]:
    """Batched backdoor-adjusted logits plus the cache for the backward pass.

    Cache keys "psi" (B, n_subjects) and "E" (B, d_s) double as the public
    diagnostics.
    """
    if psi_mode not in PSI_MODES:
        raise ValidationError(f"unknown psi_mode {psi_mode!r}; expected one of {PSI_MODES}")
    if prior_mode not in PRIOR_MODES:
        raise ValidationError(f"unknown prior_mode {prior_mode!r}; expected one of {PRIOR_MODES}")
    M = np.atleast_2d(np.asarray(m))
    if M.shape[1] != params.d_in:
        raise ValidationError(f"fused representation width {M.shape[1]} does not match W_m ({params.d_in})")
    Z = dictionary.Z
    if Z.shape[0] < 1:
        raise ValidationError("empty confounder dictionary")
    if Z.shape[1] != params.d_s:
        raise ValidationError(f"prototype width {Z.shape[1]} does not match W_h/W_k ({params.d_s})")

    if prior_mode == "counts":
        prior = dictionary.priors
    else:
        prior = np.full(dictionary.n_subjects, 1.0 / dictionary.n_subjects)
    prior = prior.astype(M.dtype, copy=False)

    scale = float(np.sqrt(Z.shape[1]))
    if psi_mode == "attention":
        Q = M @ params.W_q.T
        K = Z @ params.W_k.T
        psi = softmax((Q @ K.T) / scale, axis=1)
    else:
        Q = K = None
        psi = np.full((M.shape[0], Z.shape[0]), 1.0 / Z.shape[0], dtype=M.dtype)

    weighted = psi * prior[None, :]
    E = weighted @ Z
    H = M @ params.W_m.T + E @ params.W_h.T
    logits = affine(H, params.head_W, params.head_b)
    cache = {
        "M": M,
        "Z": Z,
        "Q": Q,
        "K": K,
        "psi": psi,
        "prior": prior,
        "E": E,
        "H": H,
        "scale": scale,
        "psi_mode": psi_mode,
    }
    return logits, cache


def intervene(
    m: np.ndarray,
    dictionary: ConfounderDictionary,
    params: InterventionParams,
    psi_mode: str = "attention",
    prior_mode: str = "counts",
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Logits plus diagnostics {"psi", "E"} for one vector or a batch."""
    single = np.asarray(m).ndim == 1
    logits, cache = intervene_with_cache(m, dictionary, params, psi_mode=psi_mode, prior_mode=prior_mode)
    if single:
        return logits[0], {"psi": cache["psi"][0], "E": cache["E"][0]}
    return logits, {"psi": cache["psi"], "E": cache["E"]}


def intervene_backward(
    grad_logits: np.ndarray, cache: dict, params: InterventionParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients wrt the fused representation and all intervention parameters.

    The dictionary is a constant: no gradient is produced for Z or the priors.
    """
    M, Z, psi, prior = cache["M"], cache["Z"], cache["psi"], cache["prior"]
    grad_H, dhead_W, dhead_b = affine_backward(grad_logits, cache["H"], params.head_W)
    grad_M = grad_H @ params.W_m
    dW_m = grad_H.T @ M
    grad_E = grad_H @ params.W_h
    dW_h = grad_H.T @ cache["E"]
    grads = {
        "intervention.W_m": dW_m,
        "intervention.W_h": dW_h,
        "intervention.head.W": dhead_W,
        "intervention.head.b": dhead_b,
    }
    if cache["psi_mode"] == "attention":
        grad_weighted = grad_E @ Z.T
        grad_psi = grad_weighted * prior[None, :]
        grad_scores = softmax_backward(grad_psi, psi, axis=1)
        grad_raw = grad_scores / cache["scale"]
        grad_Q = grad_raw @ cache["K"]
        grad_K = grad_raw.T @ cache["Q"]
        grads["intervention.W_q"] = grad_Q.T @ M
        grads["intervention.W_k"] = grad_K.T @ Z
        grad_M = grad_M + grad_Q @ params.W_q
    else:
        grads["intervention.W_q"] = np.zeros_like(params.W_q)
        grads["intervention.W_k"] = np.zeros_like(params.W_k)
    return grad_M, grads
