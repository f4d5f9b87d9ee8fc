"""Review-based recommender engine.

Trains paragraph-vector embeddings over user/item review text and fuses
them as priors into a probabilistic matrix factorization trained by MAP
fixed-point updates.  An SVD baseline and ranked-list evaluation
(MAP@N / MRR@N under k-fold cross validation) are included.
"""

from reviewrec.dataset import (
    Review,
    RatingsMatrix,
    FoldPlan,
    DatasetStats,
    parse_reviews,
    serialize_reviews,
    build_matrix,
    split_folds,
    stats,
)
from reviewrec.textproc import Vocabulary, HuffmanTree, tokenize, build_vocab, build_huffman
from reviewrec.pvdm import TaggedDocument, PvConfig, EmbeddingModel, build_entity_docs, train, infer
from reviewrec.factorization import (
    MfHyperparams,
    LatentModel,
    SvdModel,
    train_parvecmf,
    train_svd,
    recommend_top_n,
)
from reviewrec.evaluation import EvalConfig, EvalReport, cross_validate

__version__ = "0.1.0"
