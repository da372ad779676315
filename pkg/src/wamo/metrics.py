"""Retrieval metrics: R@K, median rank and Rsum."""
from dataclasses import dataclass

import numpy as np

KS = (1, 2, 3, 5, 10)


def target_rank(scores, target):
    """1-based rank of ``target`` in a score row; ties resolved by gallery index."""
    s = scores[target]
    return 1 + int(np.sum(scores > s)) + int(np.sum(scores[:target] == s))


def best_rank(scores, targets):
    return min(target_rank(scores, t) for t in targets)


def recall_at_k(ranks, k):
    ranks = np.asarray(ranks)
    return 100.0 * float(np.mean(ranks <= k)) if ranks.size else 0.0


def median_rank(ranks):
    """Midpoint of the two central ranks when the count is even."""
    return float(np.median(np.asarray(ranks, dtype=float)))


@dataclass(frozen=True)
class RetrievalReport:
    r_at_k_t2m: dict
    r_at_k_m2t: dict
    medr_t2m: float
    medr_m2t: float

    @property
    def rsum(self):
        return float(sum(self.r_at_k_t2m[k] for k in KS) + sum(self.r_at_k_m2t[k] for k in KS))

    @classmethod
    def from_ranks(cls, t2m_ranks, m2t_ranks, m2t_medr_ranks=None):
        """``m2t_medr_ranks`` overrides the ranks used for the m2t median."""
        return cls(
            {k: recall_at_k(t2m_ranks, k) for k in KS},
            {k: recall_at_k(m2t_ranks, k) for k in KS},
            median_rank(t2m_ranks),
            median_rank(m2t_ranks if m2t_medr_ranks is None else m2t_medr_ranks),
        )

    def to_json(self):
        out = {}
        for k in KS:
            out[f"t2m_R@{k}"] = self.r_at_k_t2m[k]
        out["t2m_MedR"] = self.medr_t2m
        for k in KS:
            out[f"m2t_R@{k}"] = self.r_at_k_m2t[k]
        out["m2t_MedR"] = self.medr_m2t
        out["rsum"] = self.rsum
        return out


def retrieval_ranks(sim, caption_owner):
    """Ranks for both directions from a (n_captions, n_motions) similarity matrix.

    Text-to-motion: every caption is a query against all motions.
    Motion-to-text: every motion is a query against all captions. Recall uses
    the best rank among its own captions; the median uses its first caption.
    Returns ``(t2m, m2t_best, m2t_first)``.
    """
    sim = np.asarray(sim)
    owner = np.asarray(caption_owner)
    t2m = [target_rank(sim[q], owner[q]) for q in range(sim.shape[0])]
    best, first = [], []
    for m in range(sim.shape[1]):
        targets = np.flatnonzero(owner == m)
        best.append(best_rank(sim[:, m], targets))
        first.append(target_rank(sim[:, m], targets[0]))
    return t2m, best, first
