"""
Parsing review dumps and inspecting corpus shape
================================================

Reads the small bundled review file, prints its dimensions and shows how
ratings become a sparse matrix plus a fold assignment for cross validation.
"""

from pathlib import Path

from reviewrec.dataset import build_matrix, parse_reviews, split_folds, stats
from reviewrec.textproc import tokenize

fixture = Path(__file__).resolve().parent.parent / "tests" / "data" / "finefoods_fixture.txt"

# the parser is tolerant by default: malformed blocks are skipped and counted
errors = []
reviews = parse_reviews(fixture, on_error="skip", errors_out=errors)
print(f"parsed {len(reviews)} reviews, {len(errors)} malformed blocks skipped")

st = stats(reviews, tokenize)
print(f"users = {st.n_users}, products = {st.n_products}")
print(f"median review length = {st.median_words_per_review} tokens")

# duplicate (user, product) pairs collapse to the most recent rating
matrix = build_matrix(reviews, dedup="latest")
print(f"\nratings matrix: {matrix.n_users} x {matrix.n_items}, {matrix.n_entries} entries")

plan = split_folds(matrix, 3, seed=2)
for fold in range(3):
    n_test = int(plan.test_mask(fold).sum())
    print(f"fold {fold}: {matrix.n_entries - n_test} train / {n_test} test ratings")
