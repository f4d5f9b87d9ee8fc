"""Tokenization, vocabulary and the Huffman coding tree for hierarchical softmax."""

from __future__ import annotations

import heapq
import html
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

_TAG_RE = re.compile(r"<[^>]*>")
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip HTML tags/entities, split on non-word characters.

    Intra-word apostrophes are kept ("don't" stays one token); everything
    that is not a letter, digit or such an apostrophe is a separator.
    """
    text = _TAG_RE.sub(" ", text)
    text = html.unescape(text)
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Token -> dense index map with occurrence counts.

    Indices are assigned by descending frequency, ties broken by first
    appearance in the corpus.
    """

    tokens: dict[str, int]
    frequencies: np.ndarray  # freq per index
    total_tokens: int

    def __len__(self):
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        return self.tokens[token]

    def to_tsv(self) -> str:
        lines = [f"{tok}\t{idx}\t{self.frequencies[idx]}" for tok, idx in self.tokens.items()]
        return "\n".join(lines) + ("\n" if lines else "")


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Count tokens over a corpus of token sequences and index the survivors."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    first_seen = {}
    pos = 0
    for doc in corpus:
        for tok in doc:
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = pos
                pos += 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], first_seen[t]))
    tokens = {t: i for i, t in enumerate(kept)}
    freqs = np.array([counts[t] for t in kept], dtype=np.int64)
    return Vocabulary(tokens=tokens, frequencies=freqs, total_tokens=int(freqs.sum()))


@dataclass
class HuffmanTree:
    """Per-word Huffman codes and root-first inner-node paths.

    ``codes[w][i]`` is the branch taken at inner node ``paths[w][i]``; the
    code set is prefix-free and minimizes expected code length under the
    vocabulary frequencies.
    """

    codes: list[np.ndarray]  # uint8 bit arrays, one per word index
    paths: list[np.ndarray]  # int arrays of inner-node indices, root first
    inner_count: int


def build_huffman(vocab: Vocabulary) -> HuffmanTree:
    """Greedy Huffman construction with deterministic tie-breaking.

    Ties on frequency merge the earliest-created node first (leaves are
    created in vocabulary-index order, inner nodes in merge order), so an
    identical vocabulary always yields a bit-identical tree.  A single-word
    vocabulary yields an empty code and no inner nodes.
    """
    n = len(vocab)
    if n == 0:
        raise ValueError("cannot build a Huffman tree over an empty vocabulary")
    if n == 1:
        return HuffmanTree(
            codes=[np.zeros(0, dtype=np.uint8)],
            paths=[np.zeros(0, dtype=np.int64)],
            inner_count=0,
        )

    # heap entries: (frequency, creation order, node id)
    # node ids: 0..n-1 leaves, n..2n-2 inner nodes
    heap = [(int(vocab.frequencies[i]), i, i) for i in range(n)]
    heapq.heapify(heap)
    parent = np.zeros(2 * n - 1, dtype=np.int64)
    branch = np.zeros(2 * n - 1, dtype=np.uint8)
    next_id = n
    while len(heap) > 1:
        f0, _, a = heapq.heappop(heap)
        f1, _, b = heapq.heappop(heap)
        parent[a] = next_id
        parent[b] = next_id
        branch[a] = 0
        branch[b] = 1
        heapq.heappush(heap, (f0 + f1, next_id, next_id))
        next_id += 1
    root = next_id - 1

    codes = []
    paths = []
    for w in range(n):
        bits = []
        inner = []
        node = w
        while node != root:
            bits.append(branch[node])
            inner.append(parent[node] - n)  # inner-node index in [0, n-1)
            node = parent[node]
        codes.append(np.array(bits[::-1], dtype=np.uint8))
        paths.append(np.array(inner[::-1], dtype=np.int64))
    return HuffmanTree(codes=codes, paths=paths, inner_count=n - 1)
