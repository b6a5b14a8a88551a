"""Stratified confounder dictionary: one prototype per training subject.

Each prototype starts as uniform [0, 1) noise and, at every epoch end, is
replaced by the mean of that subject's disentangled features accumulated
during the epoch (subjects unseen in an epoch keep their previous row).
Prototype priors are the subjects' shares of the training split, fixed once
from the data. Prototypes are constants with respect to gradients; they move
only through this epoch-end mean update.

Two ablation substitutes ship alongside: a frozen random dictionary (the
uniform init, never updated) and an unsupervised one whose rows are k-means++
centroids of all epoch features, with priors set to cluster-size fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .nn import rng_stream

# rng substream tags
_TAG_DICT_INIT = 21
_TAG_KMEANS = 22

KMEANS_SHIFT_TOL = 1e-6
KMEANS_MAX_ITER = 100


@dataclass
class ConfounderDictionary:
    Z: np.ndarray  # (n_subjects, d_s) prototypes
    counts: np.ndarray  # (n_subjects,) training-sample counts, fixed by the split
    updates: int = 0  # epoch-boundary updates applied so far
    frozen: bool = False  # frozen dictionaries ignore epoch-end updates
    cache_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    cache_count: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.Z.ndim != 2 or self.Z.shape[0] < 1:
            raise ValidationError(f"dictionary needs a (n_subjects, d_s) matrix with n_subjects >= 1, got {self.Z.shape}")
        if not np.all(np.isfinite(self.Z)):
            raise ValidationError("dictionary prototypes have non-finite entries")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.Z.shape[0],):
            raise ValidationError(f"counts shape {self.counts.shape} does not match {self.Z.shape[0]} prototypes")
        if np.any(self.counts < 0):
            raise ValidationError("negative subject counts")
        if self.cache_sum is None:
            self.cache_sum = np.zeros(self.Z.shape, dtype=np.float64)
        if self.cache_count is None:
            self.cache_count = np.zeros(self.Z.shape[0], dtype=np.int64)

    @property
    def n_subjects(self) -> int:
        return self.Z.shape[0]

    @property
    def d_s(self) -> int:
        return self.Z.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def priors(self) -> np.ndarray:
        """p(z_i) = count_i / total; subjects with no training samples get 0."""
        total = self.total
        if total == 0:
            raise ValidationError("dictionary has no training counts; set counts before using priors")
        return self.counts.astype(np.float64) / float(total)

    def with_counts(self, counts: np.ndarray) -> "ConfounderDictionary":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (self.n_subjects,):
            raise ValidationError(f"counts shape {counts.shape} does not match {self.n_subjects} prototypes")
        if np.any(counts < 0):
            raise ValidationError("negative subject counts")
        self.counts = counts
        return self


def init_dictionary(n_subjects: int, d_s: int, seed: int, dtype=np.float32) -> ConfounderDictionary:
    """Uniform [0, 1) prototypes, empty caches, zero counts; deterministic per seed."""
    if n_subjects < 1:
        raise ValidationError(f"n_subjects must be >= 1, got {n_subjects}")
    if d_s < 1:
        raise ValidationError(f"d_s must be >= 1, got {d_s}")
    rng = rng_stream(seed, _TAG_DICT_INIT)
    Z = rng.random((n_subjects, d_s)).astype(dtype)
    return ConfounderDictionary(Z=Z, counts=np.zeros(n_subjects, dtype=np.int64))


def random_dictionary(n_subjects: int, d_s: int, seed: int, dtype=np.float32) -> ConfounderDictionary:
    """Same distribution as init_dictionary but permanently frozen (never updated)."""
    d = init_dictionary(n_subjects, d_s, seed, dtype=dtype)
    d.frozen = True
    return d


def accumulate_subject(dictionary: ConfounderDictionary, y_s: np.ndarray | int, s: np.ndarray) -> ConfounderDictionary:
    """Add one batch (or one vector) of subject features to the epoch cache.

    Accumulation happens in double precision regardless of the feature dtype.
    """
    S = np.atleast_2d(np.asarray(s, dtype=np.float64))
    ids = np.atleast_1d(np.asarray(y_s, dtype=np.int64))
    if S.shape[0] != ids.shape[0]:
        raise ValidationError(f"{S.shape[0]} features for {ids.shape[0]} subject ids")
    if S.shape[1] != dictionary.d_s:
        raise ValidationError(f"feature width {S.shape[1]} does not match dictionary d_s {dictionary.d_s}")
    if np.any(ids < 0) or np.any(ids >= dictionary.n_subjects):
        raise ValidationError(f"unknown subject id in {np.unique(ids)}; dictionary has {dictionary.n_subjects} subjects")
    np.add.at(dictionary.cache_sum, ids, S)
    np.add.at(dictionary.cache_count, ids, 1)
    if dictionary.total > 0 and np.any(dictionary.cache_count > dictionary.counts):
        bad = int(np.argmax(dictionary.cache_count - dictionary.counts))
        raise ValidationError(
            f"subject {bad} accumulated {int(dictionary.cache_count[bad])} features this epoch, "
            f"more than its {int(dictionary.counts[bad])} training samples"
        )
    return dictionary


def update_dictionary(dictionary: ConfounderDictionary) -> ConfounderDictionary:
    """Epoch-boundary update: prototypes become exact cached means; cache clears.

    Subjects with no observations this epoch keep their previous prototype.
    Frozen dictionaries skip the prototype move but still clear the cache and
    count the epoch boundary.
    """
    seen = dictionary.cache_count > 0
    if not dictionary.frozen and np.any(seen):
        means = dictionary.cache_sum[seen] / dictionary.cache_count[seen, None].astype(np.float64)
        dictionary.Z[seen] = means.astype(dictionary.Z.dtype)
    dictionary.cache_sum[:] = 0.0
    dictionary.cache_count[:] = 0
    dictionary.updates += 1
    return dictionary


# ---------------------------------------------------------------------------
# k-means++ alternative
# ---------------------------------------------------------------------------

def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(closest_sq.sum())
        if total <= 0.0:
            # all remaining points coincide with a centroid; caller guarantees
            # enough distinct points, so pick any uncovered index
            idx = int(rng.integers(0, n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest_sq), r, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        closest_sq = np.minimum(closest_sq, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_pp(points: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding plus Lloyd refinement; returns (centroids, assignments).

    Iterates until the largest centroid shift is below KMEANS_SHIFT_TOL or
    KMEANS_MAX_ITER passes. Empty clusters keep their previous centroid. Ties
    in assignment go to the lowest cluster index.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValidationError(f"clustering expects a nonempty (n, d) matrix, got {points.shape}")
    if k < 1:
        raise ValidationError(f"n_clusters must be >= 1, got {k}")
    n_distinct = np.unique(points, axis=0).shape[0]
    if k > n_distinct:
        raise ValidationError(f"n_clusters {k} exceeds the {n_distinct} distinct feature points")
    rng = rng_stream(seed, _TAG_KMEANS)
    centroids = _kmeans_pp_seed(points, k, rng)
    assign = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            mask = assign == j
            if np.any(mask):
                new_centroids[j] = points[mask].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < KMEANS_SHIFT_TOL:
            break
    return centroids, assign


def clustered_dictionary(features: np.ndarray, n_clusters: int, seed: int = 0, dtype=np.float32) -> ConfounderDictionary:
    """Unsupervised dictionary: k-means++ centroids with cluster-share priors.

    The result is frozen against the per-subject mean update (its rows are not
    per-subject prototypes); the caller rebuilds it from fresh features at
    each epoch end instead.
    """
    centroids, assign = kmeans_pp(features, n_clusters, seed=seed)
    counts = np.bincount(assign, minlength=n_clusters).astype(np.int64)
    return ConfounderDictionary(Z=centroids.astype(dtype), counts=counts, frozen=True)
