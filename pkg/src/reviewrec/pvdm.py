"""Distributed-memory paragraph vector training with hierarchical softmax.

Each document contributes a vector that is averaged together with the
context word vectors to form the hidden state h; the target word is scored
by a product of sigmoids along its Huffman path.  Word vectors, document
vectors and inner-node parameters are all updated by SGD with a linearly
decaying learning rate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from reviewrec.textproc import HuffmanTree, Vocabulary, tokenize

logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class TaggedDocument:
    tag: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class PvConfig:
    """Hyperparameters of the paragraph-vector trainer.

    ``dim`` is the embedding width p, ``window`` the context half-width in
    tokens on each side of the target.  Context vectors and the document
    vector are combined by averaging, so the hidden width equals ``dim``
    regardless of the window.
    """

    dim: int = 10
    window: int = 5
    epochs: int = 20
    initial_lr: float = 0.025
    final_lr: float = 1e-4
    seed: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.epochs < 0:
            raise ValueError("dim and window must be >= 1, epochs >= 0")
        if not (0.0 < self.final_lr <= self.initial_lr):
            raise ValueError("need 0 < final_lr <= initial_lr")


@dataclass
class EmbeddingModel:
    """Trained PV-DM parameters.

    ``W`` holds one row per vocabulary word, ``D`` one row per trained
    document, ``inner_w``/``inner_b`` the hierarchical-softmax inner-node
    weights and biases (|V|-1 rows).
    """

    W: np.ndarray
    D: np.ndarray
    inner_w: np.ndarray
    inner_b: np.ndarray
    vocab: Vocabulary
    tree: HuffmanTree
    config: PvConfig
    doc_tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.doc_index = {t: i for i, t in enumerate(self.doc_tags)}

    def doc_vector(self, tag: str) -> np.ndarray:
        return self.D[self.doc_index[tag]]


def build_entity_docs(reviews, entity, allowed, tokenizer=tokenize, tag_prefix=""):
    """One tagged document per user (or item): its reviews concatenated.

    Only reviews whose (user_id, product_id) pair is in ``allowed`` (the
    training-fold rating set) contribute, which keeps test-fold text out of
    the embeddings.  Reviews are concatenated in timestamp order; entities
    whose surviving text is empty are omitted.
    """
    if entity not in ("user", "item"):
        raise ValueError(f"entity must be 'user' or 'item', got {entity!r}")
    groups: dict[str, list] = {}
    for order, r in enumerate(reviews):
        if (r.user_id, r.product_id) not in allowed:
            continue
        key = r.user_id if entity == "user" else r.product_id
        groups.setdefault(key, []).append((r.time, order, r))
    docs = []
    for key in groups:
        groups[key].sort(key=lambda t: (t[0], t[1]))
        tokens = []
        for _, _, r in groups[key]:
            tokens.extend(tokenizer(r.text))
        if tokens:
            docs.append(TaggedDocument(tag=tag_prefix + key, tokens=tuple(tokens)))
    return docs


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _init_model(vocab, tree, config, n_docs, doc_tags):
    p = config.dim
    rng = np.random.default_rng(config.seed)
    scale = 0.5 / p
    W = rng.uniform(-scale, scale, size=(len(vocab), p))
    D = rng.uniform(-scale, scale, size=(n_docs, p))
    inner_w = rng.uniform(-scale, scale, size=(tree.inner_count, p))
    inner_b = rng.uniform(-scale, scale, size=tree.inner_count)
    return EmbeddingModel(W, D, inner_w, inner_b, vocab, tree, config, doc_tags)


def _docs_to_ids(docs, vocab):
    id_docs = []
    for doc in docs:
        ids = []
        for tok in doc.tokens:
            if tok not in vocab.tokens:
                raise TrainingError(f"token {tok!r} not in vocabulary")
            ids.append(vocab.tokens[tok])
        id_docs.append(np.array(ids, dtype=np.int64))
    return id_docs


def _sgd_position(model, ids, t, drow, lr):
    """One SGD step on target position t of a document; returns -log p."""
    k = model.config.window
    lo = max(0, t - k)
    ctx = np.concatenate([ids[lo:t], ids[t + 1 : t + 1 + k]])
    count = len(ctx) + 1
    h = (model.W[ctx].sum(axis=0) + model.D[drow]) / count

    wid = ids[t]
    path = model.tree.paths[wid]
    code = model.tree.codes[wid]
    if len(path) == 0:
        return 0.0
    z = model.inner_w[path] @ h + model.inner_b[path]
    # branch bit 0 has probability sigma(z), bit 1 has sigma(-z)
    f = _sigmoid(z)
    target = 1.0 - code
    g = f - target  # d(-log p)/dz
    grad_h = g @ model.inner_w[path]
    model.inner_w[path] -= lr * np.outer(g, h)
    model.inner_b[path] -= lr * g
    upd = lr * grad_h / count
    np.subtract.at(model.W, ctx, upd)
    model.D[drow] -= upd
    signed = np.where(code == 0, z, -z)
    return float(np.sum(np.log1p(np.exp(-signed))))


def train(docs, vocab, tree, config: PvConfig, workers: int = 1) -> EmbeddingModel:
    """Train one joint PV-DM model over the tagged documents.

    Single-threaded training (``workers=1``, the default) is bit
    deterministic for a fixed seed.  With ``workers > 1`` documents are
    sharded across threads and parameter updates are unsynchronized, so
    results vary between runs; never use that mode for golden comparisons.
    """
    docs = list(docs)
    tags = [d.tag for d in docs]
    if len(set(tags)) != len(tags):
        raise TrainingError("document tags must be unique")
    id_docs = _docs_to_ids(docs, vocab)
    model = _init_model(vocab, tree, config, len(docs), tags)

    total_positions = sum(len(ids) for ids in id_docs)
    total_steps = config.epochs * total_positions
    if total_steps == 0:
        return model
    lr0, lr1 = config.initial_lr, config.final_lr

    def lr_at(step):
        if total_steps == 1:
            return lr0
        return lr0 - (lr0 - lr1) * step / (total_steps - 1)

    if workers <= 1:
        step = 0
        for epoch in range(config.epochs):
            for drow, ids in enumerate(id_docs):
                for t in range(len(ids)):
                    _sgd_position(model, ids, t, drow, lr_at(step))
                    step += 1
        return model

    from concurrent.futures import ThreadPoolExecutor

    def run_shard(shard):
        # per-shard step counter approximates the global schedule
        step = 0
        shard_positions = sum(len(id_docs[d]) for d in shard)
        shard_total = max(1, config.epochs * shard_positions)
        for epoch in range(config.epochs):
            for drow in shard:
                ids = id_docs[drow]
                for t in range(len(ids)):
                    frac = step / shard_total
                    _sgd_position(model, ids, t, drow, lr0 - (lr0 - lr1) * frac)
                    step += 1

    shards = [list(range(w, len(docs), workers)) for w in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run_shard, shards))
    return model


def hs_probability(model: EmbeddingModel, h: np.ndarray, word: str) -> float:
    """Probability of ``word`` given hidden state h under hierarchical softmax.

    Product over the word's Huffman path of sigma(+-(w.h + b)); normalizes
    over the vocabulary by construction.
    """
    if word not in model.vocab.tokens:
        raise KeyError(f"unknown word {word!r}")
    wid = model.vocab.tokens[word]
    path = model.tree.paths[wid]
    code = model.tree.codes[wid]
    if len(path) == 0:
        return 1.0
    z = model.inner_w[path] @ h + model.inner_b[path]
    signed = np.where(code == 0, z, -z)
    return float(np.prod(_sigmoid(signed)))


def hs_gradients(model: EmbeddingModel, h: np.ndarray, word: str):
    """Analytic gradients of -log hs_probability(word | h).

    Returns (grad_h, grad_inner_w, grad_inner_b) where the inner gradients
    cover only the nodes on the word's path, in path order.
    """
    wid = model.vocab.tokens[word]
    path = model.tree.paths[wid]
    code = model.tree.codes[wid]
    z = model.inner_w[path] @ h + model.inner_b[path]
    g = _sigmoid(z) - (1.0 - code)
    grad_h = g @ model.inner_w[path]
    grad_w = np.outer(g, h)
    return grad_h, grad_w, g


def corpus_nll(model: EmbeddingModel, docs) -> float:
    """Average -log p over every (document, position) pair."""
    id_docs = _docs_to_ids(docs, model.vocab)
    k = model.config.window
    total = 0.0
    n = 0
    for drow, ids in enumerate(id_docs):
        for t in range(len(ids)):
            lo = max(0, t - k)
            ctx = np.concatenate([ids[lo:t], ids[t + 1 : t + 1 + k]])
            h = (model.W[ctx].sum(axis=0) + model.D[drow]) / (len(ctx) + 1)
            path = model.tree.paths[ids[t]]
            code = model.tree.codes[ids[t]]
            if len(path):
                z = model.inner_w[path] @ h + model.inner_b[path]
                signed = np.where(code == 0, z, -z)
                total += float(np.sum(np.log1p(np.exp(-signed))))
            n += 1
    return total / max(1, n)


def infer(model: EmbeddingModel, tokens, steps: int, seed: int | None = None) -> np.ndarray:
    """Optimize a fresh document vector against the frozen model.

    Word vectors and inner-node parameters stay fixed; only the new
    document vector is updated, for ``steps`` passes over the tokens.
    """
    ids = np.array(
        [model.vocab.tokens[t] for t in tokens if t in model.vocab.tokens], dtype=np.int64
    )
    if len(tokens) == 0 or len(ids) == 0:
        raise InferenceError("no in-vocabulary tokens to infer from")
    p = model.config.dim
    rng = np.random.default_rng(model.config.seed if seed is None else seed)
    dvec = rng.uniform(-0.5 / p, 0.5 / p, size=p)

    k = model.config.window
    lr0, lr1 = model.config.initial_lr, model.config.final_lr
    total = steps * len(ids)
    step = 0
    for _ in range(steps):
        for t in range(len(ids)):
            lr = lr0 if total <= 1 else lr0 - (lr0 - lr1) * step / (total - 1)
            lo = max(0, t - k)
            ctx = np.concatenate([ids[lo:t], ids[t + 1 : t + 1 + k]])
            count = len(ctx) + 1
            h = (model.W[ctx].sum(axis=0) + dvec) / count
            path = model.tree.paths[ids[t]]
            code = model.tree.codes[ids[t]]
            if len(path):
                z = model.inner_w[path] @ h + model.inner_b[path]
                g = _sigmoid(z) - (1.0 - code)
                dvec -= lr * (g @ model.inner_w[path]) / count
            step += 1
    return dvec


# ---------------------------------------------------------------------------
# persistence

_CHECKPOINT_MAGIC = "PVCKPT"
_CHECKPOINT_VERSION = 1


def export_embeddings(matrix: np.ndarray, labels) -> str:
    """Text export: '<rows> <dim>' header, then one 'label v1 ... vp' line per row."""
    rows, dim = matrix.shape
    lines = [f"{rows} {dim}"]
    for label, row in zip(labels, matrix):
        lines.append(label + " " + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_model(model: EmbeddingModel, path):
    header = {
        "magic": _CHECKPOINT_MAGIC,
        "version": _CHECKPOINT_VERSION,
        "config": vars(model.config) | {},
        "doc_tags": model.doc_tags,
        "vocab_tokens": list(model.vocab.tokens),
        "vocab_freqs": model.vocab.frequencies.tolist(),
    }
    np.savez(
        path,
        header=json.dumps(header),
        W=model.W,
        D=model.D,
        inner_w=model.inner_w,
        inner_b=model.inner_b,
    )


def load_model(path) -> EmbeddingModel:
    from reviewrec.textproc import build_huffman

    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("magic") != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an embedding checkpoint")
        if header.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        vocab = Vocabulary(
            tokens={t: i for i, t in enumerate(header["vocab_tokens"])},
            frequencies=np.array(header["vocab_freqs"], dtype=np.int64),
            total_tokens=int(sum(header["vocab_freqs"])),
        )
        tree = build_huffman(vocab)  # deterministic reconstruction
        config = PvConfig(**header["config"])
        return EmbeddingModel(
            W=data["W"],
            D=data["D"],
            inner_w=data["inner_w"],
            inner_b=data["inner_b"],
            vocab=vocab,
            tree=tree,
            config=config,
            doc_tags=header["doc_tags"],
        )
