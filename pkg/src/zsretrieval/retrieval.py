"""Exact top-K retrieval over item vectors, plus list interleaving."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import QueryVector
from .errors import ConfigError, ScoreError


@dataclass
class RankedList:
    """Ordered retrieval result; scores non-increasing, items unique."""

    items: np.ndarray
    scores: np.ndarray
    k: int
    score_mode: str
    short: bool = False  # fewer than k candidates were available

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(zip(self.items.tolist(), self.scores.tolist()))


def retrieve_topk(
    q: QueryVector | np.ndarray,
    V: np.ndarray,
    k: int,
    mode: str = "dot",
    exclude: set[int] | None = None,
) -> RankedList:
    """Full-scan top-k by score, ties broken by ascending item index.

    Excluded items are never returned; zero-norm rows are skipped under
    cosine. When fewer than k candidates remain, all are returned and the
    result is flagged short.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    qv = q.values if isinstance(q, QueryVector) else np.asarray(q, dtype=np.float64)
    if V.shape[0] == 0:
        raise ScoreError("empty item matrix")
    V64 = V.astype(np.float64)
    scores = V64 @ qv
    mask = np.ones(len(scores), dtype=bool)
    if mode == "cosine":
        nq = np.linalg.norm(qv)
        if nq == 0.0:
            raise ScoreError("cosine undefined for zero-norm query")
        norms = np.linalg.norm(V64, axis=1)
        mask &= norms > 0.0
        scores = np.where(mask, scores / (np.where(mask, norms, 1.0) * nq), -np.inf)
    elif mode != "dot":
        raise ScoreError(f"unknown score mode {mode!r}")
    if exclude:
        mask[np.fromiter(exclude, dtype=np.int64)] = False
    cand = np.nonzero(mask)[0]
    # Sort by (-score, index); lexsort's last key is primary.
    order = np.lexsort((cand, -scores[cand]))[:k]
    chosen = cand[order]
    return RankedList(chosen, scores[chosen], k, mode, short=len(chosen) < k)


def ensemble_interleave(primary: RankedList, secondary: RankedList,
                        head_len: int) -> RankedList:
    """Head of primary, then alternate secondary/primary, deduplicating.

    The first ``head_len`` primary entries are emitted verbatim; afterwards
    entries alternate starting with secondary. A duplicate is skipped within
    its own turn (the turn is not forfeited to the other list). Secondary
    contributes at most ``head_len`` entries; ``head_len == 0`` means no head
    and no cap (pure alternation).
    """
    if head_len < 0:
        raise ConfigError("head_len must be >= 0")
    out_items: list[int] = []
    out_scores: list[float] = []
    seen: set[int] = set()

    def emit(item: int, score: float) -> None:
        out_items.append(item)
        out_scores.append(score)
        seen.add(item)

    p_entries = list(primary)
    s_entries = list(secondary)
    pi = si = 0
    while pi < len(p_entries) and pi < head_len:
        item, score = p_entries[pi]
        pi += 1
        if item not in seen:
            emit(item, score)

    s_cap = head_len if head_len > 0 else None
    s_emitted = 0
    turn_secondary = True
    while pi < len(p_entries) or si < len(s_entries):
        if turn_secondary:
            if s_cap is not None and s_emitted >= s_cap:
                si = len(s_entries)
            while si < len(s_entries):
                item, score = s_entries[si]
                si += 1
                if item not in seen:
                    emit(item, score)
                    s_emitted += 1
                    break
        else:
            while pi < len(p_entries):
                item, score = p_entries[pi]
                pi += 1
                if item not in seen:
                    emit(item, score)
                    break
        turn_secondary = not turn_secondary

    return RankedList(np.array(out_items, dtype=np.int64),
                      np.array(out_scores, dtype=np.float64),
                      k=len(out_items), score_mode=primary.score_mode,
                      short=False)
