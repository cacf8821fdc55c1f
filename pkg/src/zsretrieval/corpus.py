"""Corpus ingestion: vocabulary, per-item text features, co-occurrence graph.

Items come with pre-tokenized text; the vocabulary holds unigrams plus
bigrams of adjacent tokens (joined by "_"). The correlation graph is built
from ordered per-user consumption sequences: an item consumed right after
another becomes its neighbor, rows ranked by co-occurrence count and
truncated to a per-row cap.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import binio
from .errors import ConfigError, IngestError

ADJ_MAGIC = b"ZSRADJ\x00\x01"
WORDS_MAGIC = b"ZSRWRD\x00\x01"


@dataclass
class CorrelationGraph:
    """Sparse directed neighbor lists with co-occurrence counts.

    ``neighbors[i]`` is sorted by ascending item index; ``counts[i]`` is
    parallel to it. Rows never exceed ``max_neighbors`` entries.
    """

    neighbors: list[np.ndarray]
    counts: list[np.ndarray]
    max_neighbors: int

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @property
    def nnz(self) -> int:
        return sum(len(row) for row in self.neighbors)

    def row_nnz(self) -> np.ndarray:
        return np.array([len(row) for row in self.neighbors], dtype=np.int64)

    def col_nnz(self) -> np.ndarray:
        cols = np.zeros(self.n, dtype=np.int64)
        for row in self.neighbors:
            np.add.at(cols, row, 1)
        return cols

    def in_edges(self) -> list[np.ndarray]:
        """Transpose adjacency: for each item, the seeds that list it."""
        buckets: list[list[int]] = [[] for _ in range(self.n)]
        for i, row in enumerate(self.neighbors):
            for j in row:
                buckets[int(j)].append(i)
        return [np.array(b, dtype=np.int64) for b in buckets]


@dataclass
class TrainingWeights:
    """Per-item row/column example weights, each rescaled to mean 1.0."""

    row: np.ndarray
    col: np.ndarray


@dataclass
class Corpus:
    """Immutable item corpus: ids, vocabulary, word lists, graph."""

    item_ids: list[str]
    vocab: list[str]
    word_lists: list[np.ndarray]  # per-item vocab indices, order and duplicates kept
    graph: CorrelationGraph
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        self.vocab_index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def m(self) -> int:
        return len(self.vocab)


def empty_graph(n: int, max_neighbors: int = 250) -> CorrelationGraph:
    e = np.array([], dtype=np.int64)
    return CorrelationGraph([e.copy() for _ in range(n)], [e.copy() for _ in range(n)], max_neighbors)


def tokens_with_bigrams(tokens: Sequence[str]) -> list[str]:
    """Unigrams in original order, then adjacent-pair bigrams joined by '_'."""
    out = list(tokens)
    out.extend(f"{a}_{b}" for a, b in zip(tokens, tokens[1:]))
    return out


def words_to_indices(corpus: Corpus, tokens: Sequence[str], bigrams: bool = True) -> list[int]:
    """Map query tokens to vocab indices, dropping OOV terms silently."""
    words = tokens_with_bigrams(tokens) if bigrams else list(tokens)
    vi = corpus.vocab_index
    return [vi[w] for w in words if w in vi]


def build_correlation_graph(
    sequences: Iterable[Sequence[int]],
    n_items: int,
    max_neighbors: int,
    window: int = 1,
    symmetrize: bool = False,
) -> CorrelationGraph:
    """Count adjacent (earlier, later) consumptions and keep top neighbors.

    Rows are ranked by co-occurrence count (ties broken by ascending item
    index) and truncated to ``max_neighbors``. Self-transitions are skipped.
    """
    if max_neighbors < 1:
        raise ConfigError("max_neighbors must be >= 1")
    if window < 1:
        raise ConfigError("window must be >= 1")
    counts: dict[tuple[int, int], int] = {}
    for seq in sequences:
        for w in range(1, window + 1):
            for q, p in zip(seq, seq[w:]):
                if q == p:
                    continue
                if not (0 <= q < n_items and 0 <= p < n_items):
                    raise IngestError(f"item index out of range in sequence: ({q}, {p})")
                counts[(q, p)] = counts.get((q, p), 0) + 1
    if symmetrize:
        sym: dict[tuple[int, int], int] = {}
        for (q, p), c in counts.items():
            sym[(q, p)] = sym.get((q, p), 0) + c
            sym[(p, q)] = sym.get((p, q), 0) + c
        counts = sym

    rows: list[list[tuple[int, int]]] = [[] for _ in range(n_items)]
    for (q, p), c in counts.items():
        rows[q].append((p, c))
    neighbors, ncounts = [], []
    for entries in rows:
        entries.sort(key=lambda e: (-e[1], e[0]))
        kept = entries[:max_neighbors]
        kept.sort(key=lambda e: e[0])
        neighbors.append(np.array([j for j, _ in kept], dtype=np.int64))
        ncounts.append(np.array([c for _, c in kept], dtype=np.int64))
    return CorrelationGraph(neighbors, ncounts, max_neighbors)


def build_corpus(
    item_text: Mapping[str, Sequence[str]],
    min_item_count: int = 0,
    min_word_count: int = 0,
    consumption_counts: Mapping[str, int] | None = None,
) -> Corpus:
    """Build vocabulary and per-item word lists; the graph starts empty.

    ``min_word_count`` thresholds on the number of distinct items a word
    occurs in. ``min_item_count`` thresholds on consumption counts and
    requires ``consumption_counts``; without counts it is ignored.
    """
    if min_item_count < 0 or min_word_count < 0:
        raise ConfigError("thresholds must be >= 0")
    kept_ids = []
    for item_id in item_text:
        if min_item_count > 0 and consumption_counts is not None:
            if consumption_counts.get(item_id, 0) < min_item_count:
                continue
        kept_ids.append(item_id)

    doc_freq: dict[str, int] = {}
    per_item_words: list[list[str]] = []
    for item_id in kept_ids:
        words = tokens_with_bigrams(item_text[item_id])
        per_item_words.append(words)
        for w in set(words):
            doc_freq[w] = doc_freq.get(w, 0) + 1

    vocab: list[str] = []
    vocab_index: dict[str, int] = {}
    for words in per_item_words:
        for w in words:
            if w not in vocab_index and doc_freq[w] >= max(min_word_count, 1):
                vocab_index[w] = len(vocab)
                vocab.append(w)

    word_lists = []
    n_empty = 0
    for words in per_item_words:
        idx = [vocab_index[w] for w in words if w in vocab_index]
        if not idx:
            n_empty += 1
        word_lists.append(np.array(idx, dtype=np.int64))

    stats = {"items_with_empty_text": n_empty, "dropped_items": len(item_text) - len(kept_ids)}
    return Corpus(kept_ids, vocab, word_lists, empty_graph(len(kept_ids)), stats)


def compute_training_weights(graph: CorrelationGraph, empty_weight_one: bool = False) -> TrainingWeights:
    """1/sqrt(nnz) row/column weights, each rescaled to arithmetic mean 1.0.

    Empty rows/columns receive the maximum raw weight among the nonempty
    ones (or 1.0 when ``empty_weight_one``).
    """

    def raw_weights(nnz: np.ndarray) -> np.ndarray:
        w = np.zeros(len(nnz), dtype=np.float64)
        nonempty = nnz > 0
        w[nonempty] = 1.0 / np.sqrt(nnz[nonempty])
        fill = 1.0 if (empty_weight_one or not nonempty.any()) else float(w[nonempty].max())
        w[~nonempty] = fill
        mean = w.mean() if len(w) else 1.0
        return w / mean if mean > 0 else np.ones_like(w)

    return TrainingWeights(raw_weights(graph.row_nnz()), raw_weights(graph.col_nnz()))


# ---------------------------------------------------------------------------
# File ingestion


def read_items_jsonl(path: str | Path) -> dict[str, list[str]]:
    """items.jsonl: one {"id": ..., "words": [...]} object per line."""
    items: dict[str, list[str]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                item_id, words = rec["id"], rec["words"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: malformed item record: {exc}") from exc
            if not isinstance(item_id, str) or not isinstance(words, list):
                raise IngestError(f"{path}:{lineno}: 'id' must be a string and 'words' a list")
            items[item_id] = [str(w) for w in words]
    return items


def read_sequences_tsv(path: str | Path) -> list[tuple[str, list[str]]]:
    """sequences.tsv: user_id TAB comma-separated ordered item ids."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 tab-separated fields")
            user, seq = parts
            out.append((user, [s for s in seq.split(",") if s]))
    return out


def read_graph_tsv(path: str | Path, corpus: Corpus, max_neighbors: int = 250) -> CorrelationGraph:
    """graph.tsv direct ingest: seed_id TAB neighbor_id TAB count."""
    rows: list[list[tuple[int, int]]] = [[] for _ in range(corpus.n)]
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 tab-separated fields")
            seed_id, nbr_id, count_s = parts
            for item_id in (seed_id, nbr_id):
                if item_id not in corpus.item_index:
                    raise IngestError(f"{path}:{lineno}: unknown item id {item_id!r}")
            count = int(count_s)
            if count < 1:
                raise IngestError(f"{path}:{lineno}: count must be >= 1")
            rows[corpus.item_index[seed_id]].append((corpus.item_index[nbr_id], count))
    neighbors, counts = [], []
    for entries in rows:
        seen = {}
        for j, c in entries:
            if j in seen:
                raise IngestError(f"duplicate graph edge for neighbor index {j}")
            seen[j] = c
        entries.sort(key=lambda e: (-e[1], e[0]))
        kept = sorted(entries[:max_neighbors])
        neighbors.append(np.array([j for j, _ in kept], dtype=np.int64))
        counts.append(np.array([c for _, c in kept], dtype=np.int64))
    return CorrelationGraph(neighbors, counts, max_neighbors)


def ingest_corpus(
    item_text: Mapping[str, Sequence[str]],
    sequences: list[tuple[str, list[str]]],
    min_item_count: int = 0,
    min_word_count: int = 0,
    max_neighbors: int = 250,
    window: int = 1,
    symmetrize: bool = False,
) -> Corpus:
    """Full pipeline: thresholds, vocabulary, and sequence-derived graph."""
    consumption: dict[str, int] = {}
    for lineno, (_, seq) in enumerate(sequences, 1):
        for item_id in seq:
            if item_id not in item_text:
                raise IngestError(f"sequences line {lineno}: unknown item id {item_id!r}")
            consumption[item_id] = consumption.get(item_id, 0) + 1
    corpus = build_corpus(item_text, min_item_count, min_word_count, consumption)
    index = corpus.item_index
    # Dropped items leave holes in the sequences; pairs spanning a hole are skipped.
    mapped = [[index[i] for i in seq if i in index] for _, seq in sequences]
    corpus.graph = build_correlation_graph(mapped, corpus.n, max_neighbors, window, symmetrize)
    return corpus


# ---------------------------------------------------------------------------
# Persistence


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    binio.atomic_write_bytes(
        directory / "vocab.tsv",
        "".join(f"{t}\t{i}\n" for i, t in enumerate(corpus.vocab)).encode())
    binio.atomic_write_bytes(
        directory / "items.tsv",
        "".join(f"{t}\t{i}\n" for i, t in enumerate(corpus.item_ids)).encode())
    binio.write_int_lists(directory / "words.bin", WORDS_MAGIC, corpus.word_lists)
    binio.write_int_lists(directory / "adjacency.bin", ADJ_MAGIC,
                          corpus.graph.neighbors, corpus.graph.counts)
    meta = {"max_neighbors": corpus.graph.max_neighbors, "stats": corpus.stats}
    binio.atomic_write_bytes(directory / "corpus_meta.json",
                             json.dumps(meta, indent=2).encode())


def _read_tsv_index(path: Path) -> list[str]:
    tokens = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            token, idx = line.split("\t")
            if int(idx) != len(tokens):
                raise IngestError(f"{path}:{lineno}: non-dense index {idx}")
            tokens.append(token)
    return tokens


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    vocab = _read_tsv_index(directory / "vocab.tsv")
    item_ids = _read_tsv_index(directory / "items.tsv")
    word_lists, _ = binio.read_int_lists(directory / "words.bin", WORDS_MAGIC)
    neighbors, counts = binio.read_int_lists(directory / "adjacency.bin", ADJ_MAGIC)
    meta = json.loads((directory / "corpus_meta.json").read_text())
    if counts is None:
        raise IngestError(f"{directory}/adjacency.bin: missing counts")
    graph = CorrelationGraph(neighbors, counts, int(meta["max_neighbors"]))
    return Corpus(item_ids, vocab, word_lists, graph, dict(meta.get("stats", {})))
