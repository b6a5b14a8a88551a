"""Exact observational and interventional inference on small discrete SCMs.

The model is a three-variable chain with a confounder: Z influences both X
and Y, and X influences Y. All distributions are finite tables, so both the
observational conditional P(Y|X=x) and the interventional P(Y|do(X=x)) can
be computed exactly in double precision:

    observational:   sum_z P(Y|x,z) * P(z|x)   with P(z|x) by Bayes rule
    interventional:  sum_z P(Y|x,z) * P(z)     (backdoor adjustment)

``interventional_bruteforce`` re-derives the second quantity by a different
route (enumerating the mutilated joint table with the Z->X edge severed) and
exists purely so the adjustment formula can be cross-checked against
truncated factorization cell by cell.

Axis convention (also used in the JSON form): z is always the last axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError, UnreachableEvidenceError, ValidationError

SIMPLEX_ATOL = 1e-12
MAX_CARD = 16  # full enumeration stays exact and instantaneous below this


def _check_simplex(vec: np.ndarray, what: str) -> None:
    if np.any(vec < 0.0):
        raise ValidationError(f"{what} has negative entries")
    if abs(float(vec.sum()) - 1.0) > SIMPLEX_ATOL:
        raise ValidationError(f"{what} sums to {float(vec.sum())!r}, not 1 within {SIMPLEX_ATOL}")


@dataclass(frozen=True)
class DiscreteSCM:
    """Finite-cardinality structural causal model over (Z, X, Y).

    prior_z:         (z_card,) distribution of the confounder.
    cond_x_given_z:  (x_card, z_card); each column is P(X|z).
    cond_y_given_xz: (y_card, x_card, z_card); each (x, z) slice is P(Y|x,z).
    """

    prior_z: np.ndarray
    cond_x_given_z: np.ndarray
    cond_y_given_xz: np.ndarray

    def __post_init__(self):
        pz = np.asarray(self.prior_z, dtype=np.float64)
        pxz = np.asarray(self.cond_x_given_z, dtype=np.float64)
        pyxz = np.asarray(self.cond_y_given_xz, dtype=np.float64)
        if pz.ndim != 1 or pxz.ndim != 2 or pyxz.ndim != 3:
            raise ValidationError("expected ndim 1/2/3 for prior_z / cond_x_given_z / cond_y_given_xz")
        zc = pz.shape[0]
        xc = pxz.shape[0]
        yc = pyxz.shape[0]
        for name, card in (("z", zc), ("x", xc), ("y", yc)):
            if card < 1:
                raise ValidationError(f"{name}_card must be >= 1, got {card}")
            if card > MAX_CARD:
                raise ValidationError(f"{name}_card {card} exceeds the supported maximum {MAX_CARD}")
        if pxz.shape != (xc, zc):
            raise ShapeMismatchError(f"cond_x_given_z shape {pxz.shape} != {(xc, zc)}")
        if pyxz.shape != (yc, xc, zc):
            raise ShapeMismatchError(f"cond_y_given_xz shape {pyxz.shape} != {(yc, xc, zc)}")
        _check_simplex(pz, "prior_z")
        for z in range(zc):
            _check_simplex(pxz[:, z], f"cond_x_given_z[:, {z}]")
            for x in range(xc):
                _check_simplex(pyxz[:, x, z], f"cond_y_given_xz[:, {x}, {z}]")
        object.__setattr__(self, "prior_z", pz)
        object.__setattr__(self, "cond_x_given_z", pxz)
        object.__setattr__(self, "cond_y_given_xz", pyxz)

    @property
    def z_card(self) -> int:
        return self.prior_z.shape[0]

    @property
    def x_card(self) -> int:
        return self.cond_x_given_z.shape[0]

    @property
    def y_card(self) -> int:
        return self.cond_y_given_xz.shape[0]


def _check_x(scm: DiscreteSCM, x: int) -> int:
    x = int(x)
    if not 0 <= x < scm.x_card:
        raise ValidationError(f"x index {x} out of range [0, {scm.x_card})")
    return x


def observational(scm: DiscreteSCM, x: int) -> np.ndarray:
    """P(Y | X=x): the likelihood a conventional model estimates.

    The confounder is marginalized with its posterior P(z|x), which is where
    the observational bias enters. Raises if P(X=x) = 0 (the posterior is
    undefined on unreachable evidence).
    """
    x = _check_x(scm, x)
    weights = scm.cond_x_given_z[x, :] * scm.prior_z
    marginal = float(weights.sum())
    if marginal <= 0.0:
        raise UnreachableEvidenceError(f"unreachable evidence: P(X={x}) = 0 under the model")
    posterior_z = weights / marginal
    return scm.cond_y_given_xz[:, x, :] @ posterior_z


def interventional_backdoor(scm: DiscreteSCM, x: int) -> np.ndarray:
    """P(Y | do(X=x)) via backdoor adjustment: each stratum weighted by P(z).

    Defined for every x, including values with zero observational marginal.
    """
    x = _check_x(scm, x)
    return scm.cond_y_given_xz[:, x, :] @ scm.prior_z


def interventional_bruteforce(scm: DiscreteSCM, x: int) -> np.ndarray:
    """P(Y | do(X=x)) by truncated factorization on the mutilated graph.

    Builds the full joint table of the model with the Z->X edge severed and X
    clamped to x, enumerates every (z, x', y) cell, and marginalizes. Kept as
    explicit loops on purpose: this is the independent oracle for
    ``interventional_backdoor`` and must not share its code path.
    """
    x = _check_x(scm, x)
    joint = np.zeros((scm.z_card, scm.x_card, scm.y_card), dtype=np.float64)
    for z in range(scm.z_card):
        for xp in range(scm.x_card):
            clamp = 1.0 if xp == x else 0.0
            for y in range(scm.y_card):
                joint[z, xp, y] = scm.prior_z[z] * clamp * scm.cond_y_given_xz[y, xp, z]
    out = np.zeros(scm.y_card, dtype=np.float64)
    for y in range(scm.y_card):
        for z in range(scm.z_card):
            for xp in range(scm.x_card):
                out[y] += joint[z, xp, y]
    return out


def sample_observational(scm: DiscreteSCM, n: int, seed: int) -> np.ndarray:
    """Ancestral sampling z ~ P(z), x ~ P(x|z), y ~ P(y|x,z).

    Returns an (n, 3) int64 array of (z, x, y) triples, bit-reproducible for
    a fixed seed. Naive frequency estimates of P(y|x) from these samples
    converge to the observational conditional, not the interventional one.
    """
    n = int(n)
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    u = rng.random((3, n))

    def draw(cum: np.ndarray, uu: np.ndarray) -> np.ndarray:
        # cum has shape (card, n); index = count of cumulative bins below u
        return np.minimum((uu[None, :] >= cum).sum(axis=0), cum.shape[0] - 1)

    cum_z = np.cumsum(scm.prior_z)[:, None] * np.ones((1, n))
    z = draw(cum_z, u[0])
    cum_x = np.cumsum(scm.cond_x_given_z, axis=0)[:, z]
    x = draw(cum_x, u[1])
    cum_y = np.cumsum(scm.cond_y_given_xz, axis=0)[:, x, z]
    y = draw(cum_y, u[2])
    return np.stack([z, x, y], axis=1).astype(np.int64)


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two distributions on the same support."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


# ---------------------------------------------------------------------------
# JSON form
# ---------------------------------------------------------------------------

def scm_from_dict(doc: dict) -> DiscreteSCM:
    for key in ("prior_z", "x_given_z", "y_given_xz"):
        if key not in doc:
            raise ValidationError(f"SCM document missing key {key!r}")
    extra = set(doc) - {"prior_z", "x_given_z", "y_given_xz"}
    if extra:
        raise ValidationError(f"SCM document has unknown keys: {sorted(extra)}")
    return DiscreteSCM(
        prior_z=np.asarray(doc["prior_z"], dtype=np.float64),
        cond_x_given_z=np.asarray(doc["x_given_z"], dtype=np.float64),
        cond_y_given_xz=np.asarray(doc["y_given_xz"], dtype=np.float64),
    )


def scm_to_dict(scm: DiscreteSCM) -> dict:
    return {
        "prior_z": scm.prior_z.tolist(),
        "x_given_z": scm.cond_x_given_z.tolist(),
        "y_given_xz": scm.cond_y_given_xz.tolist(),
    }


def load_scm(path: str | Path) -> DiscreteSCM:
    """Load an SCM from JSON: {"prior_z", "x_given_z", "y_given_xz"}, z last axis."""
    with open(path, "r", encoding="utf-8") as fh:
        return scm_from_dict(json.load(fh))


def save_scm(scm: DiscreteSCM, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scm_to_dict(scm), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Canonical demo models
# ---------------------------------------------------------------------------

def confounded_demo() -> DiscreteSCM:
    """2x2x2 model with pure confounding: X has no causal effect on Y.

    Y depends only on Z, yet X and Y are strongly associated because Z drives
    both. Observational and interventional answers split far apart (TV 0.32
    at x=1), which makes it the canonical confounding witness in tests and in
    the ``oracle`` CLI demo.
    """
    return DiscreteSCM(
        prior_z=np.array([0.5, 0.5]),
        cond_x_given_z=np.array([[0.9, 0.1],
                                 [0.1, 0.9]]),
        cond_y_given_xz=np.array([
            # y = 0
            [[0.9, 0.1],
             [0.9, 0.1]],
            # y = 1
            [[0.1, 0.9],
             [0.1, 0.9]],
        ]),
    )


def unconfounded_demo() -> DiscreteSCM:
    """2x2x2 model with Z independent of X: adjustment changes nothing."""
    return DiscreteSCM(
        prior_z=np.array([0.3, 0.7]),
        cond_x_given_z=np.array([[0.6, 0.6],
                                 [0.4, 0.4]]),
        cond_y_given_xz=np.array([
            [[0.8, 0.2],
             [0.3, 0.6]],
            [[0.2, 0.8],
             [0.7, 0.4]],
        ]),
    )


def random_scm(rng: np.random.Generator, z_card: int, x_card: int, y_card: int) -> DiscreteSCM:
    """Random dense SCM with Dirichlet-uniform columns, for randomized sweeps."""
    prior = rng.random(z_card) + 1e-3
    prior /= prior.sum()
    px = rng.random((x_card, z_card)) + 1e-3
    px /= px.sum(axis=0, keepdims=True)
    py = rng.random((y_card, x_card, z_card)) + 1e-3
    py /= py.sum(axis=0, keepdims=True)
    return DiscreteSCM(prior_z=prior, cond_x_given_z=px, cond_y_given_xz=py)
