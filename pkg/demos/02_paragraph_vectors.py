"""
Training paragraph vectors over entity review text
==================================================

Each user (and each item) gets one document: the concatenation of all their
review text.  A distributed-memory model then learns a vector per document
by predicting words from averaged context vectors plus the document vector,
through a Huffman-coded tree softmax.
"""

import numpy as np

from reviewrec.pvdm import PvConfig, build_entity_docs, hs_probability, infer, train
from reviewrec.synthetic import SyntheticConfig, generate_reviews
from reviewrec.textproc import build_huffman, build_vocab, tokenize

reviews = generate_reviews(SyntheticConfig(n_users=16, n_items=12, seed=3))
all_pairs = {(r.user_id, r.product_id) for r in reviews}

user_docs = build_entity_docs(reviews, "user", all_pairs, tokenize, tag_prefix="u:")
print(f"{len(user_docs)} user documents, first tag {user_docs[0].tag}, "
      f"{len(user_docs[0].tokens)} tokens")

vocab = build_vocab([d.tokens for d in user_docs], min_count=1)
tree = build_huffman(vocab)
print(f"vocabulary of {len(vocab)} words, {tree.inner_count} inner tree nodes")

config = PvConfig(dim=8, window=3, epochs=40, seed=1)
model = train(user_docs, vocab, tree, config)

# the tree softmax is a proper distribution: probabilities sum to one
h = np.zeros(config.dim)
total = sum(hs_probability(model, h, w) for w in vocab.tokens)
print(f"sum of word probabilities at h=0: {total:.12f}")

# users in the synthetic corpus alternate between two taste groups,
# so even-index documents should cluster away from odd-index ones
D = model.D / np.linalg.norm(model.D, axis=1, keepdims=True)
S = D @ D.T
same = np.mean([S[i, j] for i in range(len(D)) for j in range(len(D))
                if i != j and i % 2 == j % 2])
cross = np.mean([S[i, j] for i in range(len(D)) for j in range(len(D)) if i % 2 != j % 2])
print(f"mean cosine within a taste group {same:.3f}, across groups {cross:.3f}")

# a held-out snippet can be folded in without touching trained weights
tokens = tokenize("rich dark chocolate truffle, wonderful and delicious")
vec = infer(model, tokens, steps=30, seed=5)
sims = model.D @ vec / (np.linalg.norm(model.D, axis=1) * np.linalg.norm(vec))
print("closest user document to the snippet:", model.doc_tags[int(np.argmax(sims))])
