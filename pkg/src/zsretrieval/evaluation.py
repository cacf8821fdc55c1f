"""Offline recall metrics: graph reconstruction, pooled labeled sets, recall@K."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import CorrelationGraph
from .encoder import encode_bow
from .errors import EncodeError, ScoreError
from .retrieval import ensemble_interleave, retrieve_topk
from .store import ModelState

LENGTH_BUCKETS = (1, 2, 3, 4)  # plus a 5+ bucket


@dataclass
class LabeledSet:
    """Human-labeled queries with their relevant item sets."""

    queries: list[tuple[list[int], set[int]]]  # (query word indices, relevant items)

    @property
    def pool(self) -> set[int]:
        out: set[int] = set()
        for _, rel in self.queries:
            out |= rel
        return out


@dataclass
class RecallReport:
    per_query: list[float]
    mean: float
    skipped: int = 0
    extra: dict = field(default_factory=dict)


def _topk_set(row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest finite scores, ties resolved by lowest index.

    Matches the (score desc, index asc) ordering of retrieve_topk, as a set;
    -inf entries are treated as excluded candidates.
    """
    cand = np.nonzero(row > -np.inf)[0]
    if len(cand) <= k:
        return cand
    vals = row[cand]
    part = np.argpartition(-vals, k - 1)
    threshold = vals[part[k - 1]]
    above = cand[vals > threshold]
    at = cand[vals == threshold][: k - len(above)]
    return np.concatenate([above, at])


def reconstruction_recall(
    state: ModelState,
    graph: CorrelationGraph,
    mode: str = "cosine",
    exclude_seed: bool = True,
    batch: int = 256,
) -> RecallReport:
    """For each item with neighbors, retrieve top-k_i items by score with its
    own vector and measure the fraction of true neighbors recovered.

    Scores are computed in row batches so large graphs stay fast; candidate
    semantics (cosine zero-norm skipping, seed exclusion, tie-breaking)
    match retrieve_topk exactly.
    """
    if mode not in ("dot", "cosine"):
        raise ScoreError(f"unknown score mode {mode!r}")
    V = state.V.astype(np.float64)
    n = graph.n
    norms = np.linalg.norm(V, axis=1) if mode == "cosine" else None
    recalls = []
    skipped = 0
    for start in range(0, n, batch):
        stop = min(start + batch, n)
        S = V[start:stop] @ V.T
        if mode == "cosine":
            safe = np.where(norms > 0.0, norms, 1.0)
            S = np.where(norms[None, :] > 0.0, S / safe[None, :], -np.inf)
        for i in range(start, stop):
            true = graph.neighbors[i]
            if len(true) == 0 or (mode == "cosine" and norms[i] == 0.0):
                skipped += 1
                continue
            row = S[i - start]
            if exclude_seed:
                row = row.copy()
                row[i] = -np.inf
            pred = set(_topk_set(row, len(true)).tolist())
            recalls.append(len(pred & set(true.tolist())) / len(true))
    mean = float(np.mean(recalls)) if recalls else 0.0
    return RecallReport(recalls, mean, skipped)


def pooled_recall(state: ModelState, labeled: LabeledSet, mode: str = "cosine") -> RecallReport:
    """Per-query recall of the relevant set within the pooled candidate set."""
    pool = np.array(sorted(labeled.pool), dtype=np.int64)
    Vpool = state.V[pool]
    recalls = []
    skipped = 0
    for words, relevant in labeled.queries:
        try:
            q = encode_bow(words, state.W)
            ranked = retrieve_topk(q, Vpool, len(relevant), mode)
        except (EncodeError, ScoreError):
            skipped += 1
            continue
        predicted = {int(pool[j]) for j in ranked.items}
        recalls.append(len(relevant & predicted) / len(relevant))
    mean = float(np.mean(recalls)) if recalls else 0.0
    return RecallReport(recalls, mean, skipped)


def _length_bucket(words: list[int], unigram_len: int | None = None) -> str:
    n = unigram_len if unigram_len is not None else len(words)
    return str(n) if n <= LENGTH_BUCKETS[-1] else f"{LENGTH_BUCKETS[-1] + 1}+"


def recall_at_k(
    state: ModelState,
    pairs: list[tuple[list[int], int]],
    K: int,
    mode: str = "dot",
    V: np.ndarray | None = None,
    by_length: bool = False,
    unigram_lens: list[int] | None = None,
) -> RecallReport:
    """Fraction of pairs whose target appears in the query's top-K.

    ``V`` overrides the state's item matrix (e.g. for norm-rescaled runs);
    ``by_length`` adds a per-query-length split using ``unigram_lens`` when
    the word lists contain bigrams.
    """
    mat = state.V if V is None else V
    hits = []
    skipped = 0
    bucket_hits: dict[str, list[float]] = {}
    for idx, (words, target) in enumerate(pairs):
        try:
            q = encode_bow(words, state.W)
            ranked = retrieve_topk(q, mat, K, mode)
        except (EncodeError, ScoreError):
            skipped += 1
            continue
        hit = float(target in set(ranked.items.tolist()))
        hits.append(hit)
        if by_length:
            ul = unigram_lens[idx] if unigram_lens is not None else None
            bucket_hits.setdefault(_length_bucket(words, ul), []).append(hit)
    mean = float(np.mean(hits)) if hits else 0.0
    extra = {}
    if by_length:
        extra["by_length"] = {b: float(np.mean(v)) for b, v in sorted(bucket_hits.items())}
    return RecallReport(hits, mean, skipped, extra)


def ensemble_recall_at_k(
    primary: ModelState,
    secondary: ModelState,
    pairs: list[tuple[list[int], int]],
    K: int,
    head_len: int | None = None,
) -> RecallReport:
    """recall@K of the interleaved retrieval of two models.

    Each query is retrieved from both models (with each model's own score
    mode), the lists are interleaved with the given head length (default
    K // 2), and the hit test uses the first K merged entries. A query is
    skipped only when neither model can score it.
    """
    if head_len is None:
        head_len = K // 2
    hits = []
    skipped = 0
    for words, target in pairs:
        lists = []
        for st in (primary, secondary):
            try:
                q = encode_bow(words, st.W)
                lists.append(retrieve_topk(q, st.V, K, st.score_mode))
            except (EncodeError, ScoreError):
                lists.append(None)
        if lists[0] is None and lists[1] is None:
            skipped += 1
            continue
        if lists[0] is None or lists[1] is None:
            merged = lists[0] if lists[1] is None else lists[1]
        else:
            merged = ensemble_interleave(lists[0], lists[1], head_len)
        hits.append(float(target in set(merged.items[:K].tolist())))
    mean = float(np.mean(hits)) if hits else 0.0
    return RecallReport(hits, mean, skipped)
