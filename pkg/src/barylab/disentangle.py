"""Inter-residual contrastive (IRC) and barycenter-residual orthogonality (BRO) losses.

Similarities are cosines on raw embeddings.  A zero vector has similarity 0
with everything: residuals vanish when the map is close to the identity and
such samples should neither attract nor repel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def irc_loss(residuals, source_ids, tau: float = 0.07) -> ad.Var:
    """Supervised contrastive loss over the residuals of one batch.

    For each anchor, positives are the other residuals from the same source
    and negatives the residuals from other sources; the loss is the negative
    sum over anchors of ``log(sum_pos / (sum_pos + sum_neg))`` with
    ``exp(cos / tau)`` terms.  Anchors without positives are skipped.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    R = ad.const(residuals)
    ids = np.asarray(source_ids)
    if R.shape[0] == 0:
        raise ValueError("need at least one residual")
    U = ad.normalize_rows(R)
    # shift by the largest attainable logit; cancels in the ratio
    E = ad.exp((U @ U.T) * (1.0 / tau) - 1.0 / tau)
    same = ids[:, None] == ids[None, :]
    pos_mask = same & ~np.eye(len(ids), dtype=bool)
    neg_mask = ~same
    anchors = np.flatnonzero(pos_mask.any(axis=1))
    if len(anchors) == 0 or not neg_mask.any():
        # log 1 for every anchor (or no anchors at all)
        return ad.vsum(E * 0.0)
    pos = ad.take_rows((E * pos_mask.astype(float)).sum(axis=1), anchors)
    neg = ad.take_rows((E * neg_mask.astype(float)).sum(axis=1), anchors)
    # -log(pos / (pos + neg)) written so that tiny losses keep their precision
    return ad.vsum(ad.log1p(neg / pos))


def bro_loss(barycenters, residuals) -> ad.Var:
    """Sum of squared cosines over every (barycenter, residual) pair in the batch."""
    Ub = ad.normalize_rows(ad.const(barycenters))
    Ur = ad.normalize_rows(ad.const(residuals))
    M = Ub @ Ur.T
    return ad.vsum(ad.square(M))


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Source, barycenter and residual embeddings of one batch (rows aligned)."""

    z: np.ndarray
    b: np.ndarray
    source_ids: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return self.z - self.b

    @staticmethod
    def _unit(x):
        n = np.linalg.norm(x, axis=1, keepdims=True)
        return np.divide(x, n, out=np.zeros_like(x), where=n > 0)

    @property
    def b_unit(self) -> np.ndarray:
        return self._unit(self.b)

    @property
    def r_unit(self) -> np.ndarray:
        return self._unit(self.r)

    @classmethod
    def from_triples(cls, triples) -> "EmbeddingBatch":
        return cls(
            np.array([t.z for t in triples], dtype=float),
            np.array([t.b for t in triples], dtype=float),
            np.array([t.source_id for t in triples]),
        )

    def irc(self, tau: float = 0.07) -> float:
        return irc_loss(self.r, self.source_ids, tau).item()

    def bro(self) -> float:
        return bro_loss(self.b, self.r).item()

    def mean_sq_cosine(self) -> float:
        """BRO normalised by the number of pairs."""
        return self.bro() / (len(self.b) * len(self.b))
