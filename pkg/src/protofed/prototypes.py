"""Class prototypes: extraction, aggregation, alignment, DP noising, and
nearest-prototype classification.

A prototype is the mean embedding of a class's samples. Participants compute
local prototypes, the server averages them into global ones, and inference
assigns the class of the nearest global prototype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class PrototypeSet:
    """Per-class prototype vectors with presence flags.

    vectors: (K, d) array; rows for absent classes are meaningless and must
    never be read (use `present` to mask).
    present: (K,) bool, True iff the class was observed / aggregated.
    support: (K,) counts backing each vector (sample counts for local sets,
    contributor counts for aggregated ones). present[j] iff support[j] > 0.
    """

    vectors: np.ndarray
    present: np.ndarray
    support: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        self.support = np.asarray(self.support, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be (K, d)")
        if not np.array_equal(self.present, self.support > 0):
            raise ValueError("present[j] must hold exactly when support[j] > 0")
        if self.present.any() and not np.all(np.isfinite(self.vectors[self.present])):
            raise ValueError("present prototype vectors must be finite")

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def empty(cls, num_classes: int, dim: int) -> "PrototypeSet":
        return cls(
            vectors=np.zeros((num_classes, dim)),
            present=np.zeros(num_classes, dtype=bool),
            support=np.zeros(num_classes, dtype=np.int64),
        )

    def copy(self) -> "PrototypeSet":
        return PrototypeSet(self.vectors.copy(), self.present.copy(), self.support.copy())


class PrototypeAccumulator:
    """Running (sum, count) per class, so prototypes can be accumulated over
    many batches and merged across accumulators without revisiting data."""

    def __init__(self, num_classes: int, dim: int):
        self.sums = np.zeros((num_classes, dim))
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def add(self, embeddings: np.ndarray, labels: np.ndarray) -> None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if embeddings.shape[0] != labels.shape[0]:
            raise ValueError("embeddings and labels must have matching length")
        np.add.at(self.sums, labels, embeddings)
        np.add.at(self.counts, labels, 1)

    def merge(self, other: "PrototypeAccumulator") -> None:
        self.sums += other.sums
        self.counts += other.counts

    def to_prototypes(self) -> PrototypeSet:
        present = self.counts > 0
        vectors = np.zeros_like(self.sums)
        vectors[present] = self.sums[present] / self.counts[present, None]
        return PrototypeSet(vectors=vectors, present=present, support=self.counts.copy())


def compute_local_prototypes(
    embeddings: np.ndarray, labels: np.ndarray, num_classes: int
) -> PrototypeSet:
    """Per-class mean of the given embeddings; classes not in `labels` are absent."""
    acc = PrototypeAccumulator(num_classes, np.asarray(embeddings).shape[1])
    acc.add(embeddings, labels)
    return acc.to_prototypes()


def aggregate_global_prototypes(
    locals_: Sequence[PrototypeSet], contributors_only: bool = True
) -> PrototypeSet:
    """Average local prototypes class-by-class across participants.

    With contributors_only (default) the divisor for class j is the number of
    participants that actually hold class j; absent local entries neither
    contribute nor count. With contributors_only=False the divisor is the
    participant count M and absent entries enter as zero vectors (the literal
    1/M average). A class with no contributor at all stays absent either way.

    Aggregated support counts contributors, not samples.
    """
    if not locals_:
        raise ValueError("need at least one local prototype set")
    dims = {p.dim for p in locals_}
    ks = {p.num_classes for p in locals_}
    if len(dims) != 1 or len(ks) != 1:
        raise ValueError("all prototype sets must share (K, d)")
    k, d = ks.pop(), dims.pop()
    m = len(locals_)

    sums = np.zeros((k, d))
    contributors = np.zeros(k, dtype=np.int64)
    for p in locals_:
        sums[p.present] += p.vectors[p.present]
        contributors += p.present
    present = contributors > 0
    vectors = np.zeros((k, d))
    divisor = contributors if contributors_only else np.full(k, m, dtype=np.int64)
    vectors[present] = sums[present] / divisor[present, None]
    return PrototypeSet(vectors=vectors, present=present, support=contributors)


def alignment_loss(
    local: PrototypeSet, global_prev: PrototypeSet
) -> tuple[float, np.ndarray]:
    """Sum of squared L2 distances between local and global prototypes over
    classes present in both sets, plus the gradient w.r.t. the local vectors.

    Classes absent in either set contribute zero loss and zero gradient.
    Returns (loss, grads) with grads shaped like local.vectors.
    """
    if local.dim != global_prev.dim or local.num_classes != global_prev.num_classes:
        raise ValueError("prototype sets must share (K, d)")
    both = local.present & global_prev.present
    grads = np.zeros_like(local.vectors)
    if not both.any():
        return 0.0, grads
    diff = local.vectors[both] - global_prev.vectors[both]
    grads[both] = 2.0 * diff
    return float(np.sum(diff * diff)), grads


def add_dp_noise(
    protos: PrototypeSet, sigma: float, rng: np.random.Generator
) -> PrototypeSet:
    """Add i.i.d. N(0, sigma^2) per coordinate to every present vector.

    sigma=0 is the identity (no draw). Presence and support are unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return protos.copy()
    out = protos.copy()
    idx = np.flatnonzero(out.present)
    out.vectors[idx] += rng.normal(0.0, sigma, size=(idx.size, out.dim))
    return out


def nearest_prototype_classify(
    embeddings: np.ndarray, global_protos: PrototypeSet
) -> np.ndarray:
    """Assign each embedding the class of the nearest present prototype
    (squared L2); ties go to the smallest class id. Accepts a single vector
    or an (N, d) batch; returns int64 class ids."""
    if not global_protos.present.any():
        raise ValueError("no present prototypes to classify against")
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    class_ids = np.flatnonzero(global_protos.present)  # ascending: argmin tie -> smallest id
    vectors = global_protos.vectors[class_ids]
    d2 = (
        np.sum(emb * emb, axis=1)[:, None]
        - 2.0 * emb @ vectors.T
        + np.sum(vectors * vectors, axis=1)[None, :]
    )
    # Exact distances for ties: the quadratic expansion above is fast but can
    # split exact ties by rounding, so recheck candidate minima directly.
    pred = class_ids[np.argmin(d2, axis=1)]
    near = d2 <= np.min(d2, axis=1)[:, None] + 1e-9
    for i in np.flatnonzero(np.sum(near, axis=1) > 1):
        exact = np.sum((vectors - emb[i]) ** 2, axis=1)
        pred[i] = class_ids[np.argmin(exact)]
    if np.asarray(embeddings).ndim == 1:
        return pred[0]
    return pred
