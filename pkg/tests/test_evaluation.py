import itertools

import numpy as np
import pytest

from reviewrec.dataset import Review, build_matrix, split_folds
from reviewrec.evaluation import (
    EvalConfig,
    EvaluationError,
    average_precision,
    cross_validate,
    map_at_n,
    mrr_at_n,
    rank_fold_users,
    reciprocal_rank,
)
from reviewrec.factorization import MfHyperparams, train_svd
from reviewrec.pvdm import PvConfig
from reviewrec.synthetic import SyntheticConfig, generate_reviews


def brute_force_ap(ranked, relevant):
    """Independent AP evaluator: literal positional accumulation."""
    total = 0.0
    for i in range(1, len(ranked) + 1):
        rel_i = 1 if ranked[i - 1] in relevant else 0
        hits_up_to_i = sum(1 for x in ranked[:i] if x in relevant)
        precision_at_i = hits_up_to_i / i
        total += precision_at_i * rel_i
    return total / len(relevant)


def brute_force_rr(ranked, relevant):
    for i in range(1, len(ranked) + 1):
        if ranked[i - 1] in relevant:
            return 1.0 / i
    return 0.0


class TestAveragePrecision:
    def test_single_relevant_at_top(self):
        assert average_precision(["R", "x", "y", "z", "w"], {"R"}) == 1.0

    def test_single_relevant_at_second(self):
        assert average_precision(["x", "R"], {"R"}) == 0.5

    def test_no_relevant_in_list(self):
        assert average_precision(["x", "y", "z"], {"a", "b", "c"}) == 0.0

    def test_divides_by_full_relevant_count(self):
        # |I_u| = 3 exceeds list length 2: AP capped below 1 by definition
        assert average_precision(["a", "b"], {"a", "b", "c"}) == pytest.approx(2 / 3)

    def test_empty_relevant_set_rejected(self):
        with pytest.raises(EvaluationError):
            average_precision(["x"], set())

    def test_exhaustive_against_brute_force(self):
        # every ranked list of length <= 5 over items {0..5}, up to 3 relevant
        items = list(range(6))
        count = 0
        for length in range(1, 6):
            for ranked in itertools.permutations(items, length):
                for n_rel in range(1, 4):
                    relevant = set(items[:n_rel])
                    assert average_precision(list(ranked), relevant) == brute_force_ap(
                        list(ranked), relevant
                    )
                    assert reciprocal_rank(list(ranked), relevant) == brute_force_rr(
                        list(ranked), relevant
                    )
                    count += 1
        assert count > 1000


class TestReciprocalRank:
    def test_first_position(self):
        assert reciprocal_rank(["R", "x"], {"R"}) == 1.0

    def test_third_position(self):
        assert reciprocal_rank(["x", "y", "R"], {"R"}) == pytest.approx(1 / 3)

    def test_absent_contributes_zero(self):
        assert reciprocal_rank(["x", "y"], {"R"}) == 0.0


class TestMeans:
    def test_map_mean(self):
        lists = {1: ["R", "x"], 2: ["x", "y"]}
        rels = {1: {"R"}, 2: {"z"}}
        assert map_at_n(lists, rels) == 0.5

    def test_single_user(self):
        lists = {1: ["x", "R"]}
        rels = {1: {"R"}}
        assert map_at_n(lists, rels) == 0.5
        assert mrr_at_n(lists, rels) == 0.5

    def test_all_perfect(self):
        lists = {u: [f"R{u}"] for u in range(4)}
        rels = {u: {f"R{u}"} for u in range(4)}
        assert map_at_n(lists, rels) == 1.0
        assert mrr_at_n(lists, rels) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(EvaluationError):
            map_at_n({}, {})
        with pytest.raises(EvaluationError):
            mrr_at_n({}, {})


def tiny_instance():
    """4 users x 4 items, hand-built so every fold has usable structure."""
    reviews = []
    t = 0
    scores = {
        (0, 0): 5.0, (0, 1): 4.0, (0, 2): 1.0,
        (1, 0): 4.0, (1, 1): 5.0, (1, 3): 2.0,
        (2, 1): 1.0, (2, 2): 5.0, (2, 3): 4.0,
        (3, 0): 2.0, (3, 2): 4.0, (3, 3): 5.0,
    }
    words = {0: "coffee roast brew", 1: "coffee espresso bean", 2: "tea leaf chai", 3: "tea matcha steep"}
    for (u, i), s in scores.items():
        t += 1
        reviews.append(
            Review(
                product_id=f"p{i}", user_id=f"u{u}", score=s,
                text=("great tasty " if s >= 4 else "awful bland ") + words[i], time=t,
            )
        )
    return reviews


class TestCrossValidate:
    def setup_method(self):
        self.reviews = tiny_instance()
        self.matrix = build_matrix(self.reviews)
        self.config = EvalConfig(n_folds=3, list_size=5, relevance_threshold=4.0,
                                 seed=3, feature_sweep=(2,))
        self.mf = MfHyperparams(k=2, max_iters=100, tol=1e-10, conf_unobs=0.01)
        self.pv = PvConfig(dim=2, window=2, epochs=5, seed=1)

    def test_metrics_match_brute_force_recomputation(self):
        report = cross_validate(self.matrix, self.reviews, self.config, self.mf,
                                self.pv, collect_details=True)
        for name, feat, fold, lists, relevants in report.details:
            expected_map = np.mean([brute_force_ap(lists[u], relevants[u]) for u in lists])
            expected_mrr = np.mean([brute_force_rr(lists[u], relevants[u]) for u in lists])
            row = next(
                r for r in report.rows
                if r.model == name and r.features == feat and r.fold == fold
            )
            assert abs(row.map_at_n - expected_map) < 1e-12
            assert abs(row.mrr_at_n - expected_mrr) < 1e-12

    def test_determinism(self):
        r1 = cross_validate(self.matrix, self.reviews, self.config, self.mf, self.pv)
        r2 = cross_validate(self.matrix, self.reviews, self.config, self.mf, self.pv)
        assert r1.to_tsv() == r2.to_tsv()

    def test_threshold_above_scale_max_fails(self):
        config = EvalConfig(n_folds=3, list_size=5, relevance_threshold=5.0,
                            seed=3, feature_sweep=(2,))
        reviews = [r for r in self.reviews if r.score < 5.0]
        matrix = build_matrix(reviews)
        with pytest.raises(EvaluationError):
            cross_validate(matrix, reviews, config, self.mf, self.pv)

    def test_report_tsv_shape(self):
        report = cross_validate(self.matrix, self.reviews, self.config, self.mf, self.pv)
        lines = report.to_tsv().strip().split("\n")
        assert lines[0] == "model\tfeatures\tfold\tmap_at_n\tmrr_at_n"
        assert len(lines) - 1 == len(report.rows)
        assert all(len(line.split("\t")) == 5 for line in lines[1:])

    def test_metric_ranges(self):
        report = cross_validate(self.matrix, self.reviews, self.config, self.mf, self.pv)
        for r in report.rows:
            assert 0.0 <= r.map_at_n <= 1.0
            assert 0.0 <= r.mrr_at_n <= 1.0


class TestFoldIsolation:
    def test_no_leakage_on_synthetic(self):
        reviews = generate_reviews(SyntheticConfig(seed=5))
        matrix = build_matrix(reviews)
        plan = split_folds(matrix, 5, seed=9)
        for fold in range(5):
            train_mask = plan.train_mask(fold)
            test_mask = plan.test_mask(fold)
            train_pairs = {
                (int(matrix.user_idx[e]), int(matrix.item_idx[e]))
                for e in np.nonzero(train_mask)[0]
            }
            test_pairs = {
                (int(matrix.user_idx[e]), int(matrix.item_idx[e]))
                for e in np.nonzero(test_mask)[0]
            }
            assert not (train_pairs & test_pairs)
            assert len(train_pairs) + len(test_pairs) == matrix.n_entries

    def test_candidate_lists_exclude_train_items(self):
        reviews = tiny_instance()
        matrix = build_matrix(reviews)
        plan = split_folds(matrix, 3, seed=3)
        model = train_svd(matrix.subset(plan.train_mask(0)), k=2)
        config = EvalConfig(n_folds=3, list_size=5, relevance_threshold=4.0,
                            seed=3, feature_sweep=(2,))
        lists, relevants, _ = rank_fold_users(
            model, matrix, plan.test_mask(0), plan.train_mask(0), config
        )
        train_items = {}
        for e in np.nonzero(plan.train_mask(0))[0]:
            train_items.setdefault(int(matrix.user_idx[e]), set()).add(int(matrix.item_idx[e]))
        for user, ranked in lists.items():
            assert not (set(ranked) & train_items[user])
            assert len(ranked) == len(set(ranked))

    def test_cold_users_skipped_and_counted(self):
        reviews = tiny_instance()
        matrix = build_matrix(reviews)
        # force user 0 entirely into the "test" mask
        test_mask = matrix.user_idx == 0
        train_mask = ~test_mask
        model = train_svd(matrix.subset(train_mask), k=2)
        config = EvalConfig(n_folds=2, list_size=5, relevance_threshold=4.0,
                            seed=1, feature_sweep=(2,))
        lists, _, skipped = rank_fold_users(model, matrix, test_mask, train_mask, config)
        assert skipped == 1
        assert 0 not in lists
