"""Ranked-list metrics (MAP@N, MRR@N) and k-fold cross validation.

Average precision divides by the full relevant-item count |I_u| even when
|I_u| exceeds the list length, which caps AP below 1 for such users; that
is deliberate and matches the metric definition this engine evaluates.
Users without any relevant test item (or without any training rating) are
excluded from the evaluated set and counted separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from reviewrec import factorization, pvdm, textproc
from reviewrec.dataset import RatingsMatrix, split_folds
from reviewrec.factorization import MfHyperparams, recommend_top_n, train_parvecmf, train_svd
from reviewrec.pvdm import PvConfig, build_entity_docs

logger = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    n_folds: int = 5
    list_size: int = 5
    relevance_threshold: float = 4.0
    seed: int = 1
    feature_sweep: tuple[int, ...] = (5, 10, 20, 50)

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.list_size < 1:
            raise ValueError("list_size must be >= 1")
        if not (1.0 <= self.relevance_threshold <= 5.0):
            raise ValueError("relevance_threshold must lie within the rating scale")


@dataclass
class FoldResult:
    model: str
    features: int
    fold: int
    map_at_n: float
    mrr_at_n: float
    n_evaluated: int
    n_skipped_cold: int


@dataclass
class EvalReport:
    rows: list[FoldResult]
    config: EvalConfig
    metadata: dict = field(default_factory=dict)

    def mean(self, model: str, features: int, metric: str) -> float:
        vals = [
            getattr(r, metric) for r in self.rows if r.model == model and r.features == features
        ]
        if not vals:
            raise KeyError(f"no rows for model={model} features={features}")
        return float(np.mean(vals))

    def to_tsv(self) -> str:
        lines = ["model\tfeatures\tfold\tmap_at_n\tmrr_at_n"]
        for r in self.rows:
            lines.append(f"{r.model}\t{r.features}\t{r.fold}\t{r.map_at_n!r}\t{r.mrr_at_n!r}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = []
        for key, val in sorted(self.metadata.items()):
            lines.append(f"{key} = {val}")
        lines.append(f"n_folds = {self.config.n_folds}")
        lines.append(f"list_size = {self.config.list_size}")
        lines.append(f"relevance_threshold = {self.config.relevance_threshold}")
        lines.append(f"seed = {self.config.seed}")
        models = sorted({r.model for r in self.rows})
        features = sorted({r.features for r in self.rows})
        for model in models:
            for feat in features:
                try:
                    m = self.mean(model, feat, "map_at_n")
                    rr = self.mean(model, feat, "mrr_at_n")
                except KeyError:
                    continue
                lines.append(f"mean_map@{self.config.list_size} {model} k={feat} = {m:.6f}")
                lines.append(f"mean_mrr@{self.config.list_size} {model} k={feat} = {rr:.6f}")
        return "\n".join(lines) + "\n"


def average_precision(ranked, relevant, L=None) -> float:
    """AP of one ranked list: (1/|I_u|) sum over positions of precision * rel."""
    if not relevant:
        raise EvaluationError("average precision is undefined for an empty relevant set")
    if L is None:
        L = len(ranked)
    hits = 0
    total = 0.0
    for pos, item in enumerate(ranked[:L], start=1):
        if item in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def reciprocal_rank(ranked, relevant) -> float:
    """1 / rank of the first relevant item; 0 if none appears in the list."""
    for pos, item in enumerate(ranked, start=1):
        if item in relevant:
            return 1.0 / pos
    return 0.0


def map_at_n(lists: dict, relevants: dict) -> float:
    """Mean AP over the evaluated users (every user must have |I_u| >= 1)."""
    if not lists:
        raise EvaluationError("no evaluable users")
    return float(np.mean([average_precision(lists[u], relevants[u]) for u in lists]))


def mrr_at_n(lists: dict, relevants: dict) -> float:
    if not lists:
        raise EvaluationError("no evaluable users")
    return float(np.mean([reciprocal_rank(lists[u], relevants[u]) for u in lists]))


def rank_fold_users(model, R: RatingsMatrix, test_mask, train_mask, config: EvalConfig):
    """Top-N lists and relevant sets for every evaluable test-fold user.

    Evaluable means: at least one test item at/above the relevance
    threshold AND at least one training rating (cold users are skipped and
    counted).  Candidate items exclude the user's training items.
    Returns (lists, relevants, n_skipped_cold).
    """
    test_items: dict[int, set] = {}
    for e in np.nonzero(test_mask)[0]:
        if R.scores[e] >= config.relevance_threshold:
            test_items.setdefault(int(R.user_idx[e]), set()).add(int(R.item_idx[e]))
    train_items: dict[int, set] = {}
    for e in np.nonzero(train_mask)[0]:
        train_items.setdefault(int(R.user_idx[e]), set()).add(int(R.item_idx[e]))

    lists, relevants = {}, {}
    skipped_cold = 0
    for user, relevant in sorted(test_items.items()):
        if user not in train_items:
            skipped_cold += 1
            continue
        ranked = recommend_top_n(model, user, config.list_size, exclude=train_items[user])
        lists[user] = ranked
        relevants[user] = relevant
    return lists, relevants, skipped_cold


def fold_theta(reviews, train_pairs, pv_config: PvConfig, R: RatingsMatrix, tokenizer=None):
    """Train one joint PV-DM model on a fold's training reviews and extract priors.

    User and item documents share a single model (same word matrix, same
    inner nodes) so both prior families live in one latent space.  Entities
    with no training text get a zero prior row.  Returns (theta_u, theta_v,
    embedding model).
    """
    tokenizer = tokenizer or textproc.tokenize
    user_docs = build_entity_docs(reviews, "user", train_pairs, tokenizer, tag_prefix="u:")
    item_docs = build_entity_docs(reviews, "item", train_pairs, tokenizer, tag_prefix="i:")
    docs = user_docs + item_docs
    vocab = textproc.build_vocab([d.tokens for d in docs], min_count=1)
    theta_u = np.zeros((R.n_users, pv_config.dim))
    theta_v = np.zeros((R.n_items, pv_config.dim))
    if len(vocab) == 0:
        return theta_u, theta_v, None
    tree = textproc.build_huffman(vocab)
    model = pvdm.train(docs, vocab, tree, pv_config)
    for tag, row in model.doc_index.items():
        kind, key = tag[:2], tag[2:]
        if kind == "u:" and key in R.user_index:
            theta_u[R.user_index[key]] = model.D[row]
        elif kind == "i:" and key in R.item_index:
            theta_v[R.item_index[key]] = model.D[row]
    return theta_u, theta_v, model


def cross_validate(
    R: RatingsMatrix,
    reviews,
    config: EvalConfig,
    mf_hyper: MfHyperparams,
    pv_config: PvConfig,
    mf_mode: str = "exact",
    collect_details: bool = False,
) -> EvalReport:
    """k-fold comparison of the text-prior factorization against the SVD baseline.

    Per fold: embeddings, both factorizations and the metric pass all see
    only training-fold data; the feature sweep ties the MF rank k to the
    embedding dimension p.  With ``collect_details`` the report metadata
    keeps every per-user ranked list and relevant set (for metric audits).
    """
    plan = split_folds(R, config.n_folds, config.seed)
    rows = []
    details = []
    any_evaluated = False
    for fold in range(config.n_folds):
        train_mask = plan.train_mask(fold)
        test_mask = plan.test_mask(fold)
        R_train = R.subset(train_mask)
        train_pairs = {
            (R.user_ids[R.user_idx[e]], R.item_ids[R.item_idx[e]])
            for e in np.nonzero(train_mask)[0]
        }
        for feat in config.feature_sweep:
            pv = PvConfig(
                dim=feat,
                window=pv_config.window,
                epochs=pv_config.epochs,
                initial_lr=pv_config.initial_lr,
                final_lr=pv_config.final_lr,
                seed=pv_config.seed + 7919 * fold,
            )
            theta_u, theta_v, _ = fold_theta(reviews, train_pairs, pv, R)
            hyper = MfHyperparams(
                k=feat,
                lambda_u=mf_hyper.lambda_u,
                lambda_v=mf_hyper.lambda_v,
                conf_obs=mf_hyper.conf_obs,
                conf_unobs=mf_hyper.conf_unobs,
                max_iters=mf_hyper.max_iters,
                tol=mf_hyper.tol,
                damping=mf_hyper.damping,
                seed=mf_hyper.seed + 7919 * fold,
            )
            latent = train_parvecmf(R_train, theta_u, theta_v, hyper, mode=mf_mode)
            svd = train_svd(R_train, min(feat, min(R.n_users, R.n_items)))
            for name, model in (("parvecmf", latent), ("svd", svd)):
                lists, relevants, skipped = rank_fold_users(
                    model, R, test_mask, train_mask, config
                )
                if not lists:
                    logger.warning(
                        "fold %d features %d model %s: no evaluable users", fold, feat, name
                    )
                    continue
                any_evaluated = True
                rows.append(
                    FoldResult(
                        model=name,
                        features=feat,
                        fold=fold,
                        map_at_n=map_at_n(lists, relevants),
                        mrr_at_n=mrr_at_n(lists, relevants),
                        n_evaluated=len(lists),
                        n_skipped_cold=skipped,
                    )
                )
                if collect_details:
                    details.append((name, feat, fold, lists, relevants))
    if not any_evaluated:
        raise EvaluationError("no evaluable users in any fold")
    meta = {"mf_mode": mf_mode, "pv_epochs": pv_config.epochs, "pv_window": pv_config.window}
    report = EvalReport(rows=rows, config=config, metadata=meta)
    if collect_details:
        report.details = details
    return report
