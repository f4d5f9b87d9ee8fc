"""Review-stream ingestion, ratings matrix construction and fold splitting.

The wire format is the SNAP-style block layout used by the Amazon review
dumps: blank-line separated blocks of ``namespace/key: value`` lines, e.g.::

    product/productId: B001E4KFG0
    review/userId: A3SGXH7AUHU8GW
    review/profileName: delmartian
    review/helpfulness: 1/1
    review/score: 5.0
    review/time: 1303862400
    review/summary: Good Quality Dog Food
    review/text: I have bought several of the Vitality canned...
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_REQUIRED_FIELDS = ("product_id", "user_id", "score", "text")

# canonical serialization order (matches the published dumps)
_FIELD_KEYS = [
    ("product/productId", "product_id"),
    ("review/userId", "user_id"),
    ("review/profileName", "profile_name"),
    ("review/helpfulness", "helpfulness"),
    ("review/score", "score"),
    ("review/time", "time"),
    ("review/summary", "summary"),
    ("review/text", "text"),
]
_KEY_TO_FIELD = dict(_FIELD_KEYS)


class MalformedRecordError(ValueError):
    """A review block violates the record schema.

    Carries the byte offset of the offending block within the stream.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (block at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Review:
    """One parsed review record."""

    product_id: str
    user_id: str
    score: float
    text: str
    profile_name: str = ""
    helpfulness: tuple[int, int] = (0, 0)
    time: int = 0
    summary: str = ""

    def __post_init__(self):
        if not self.product_id or not self.user_id:
            raise ValueError("product_id and user_id must be non-empty")
        if not (1.0 <= self.score <= 5.0):
            raise ValueError(f"score {self.score} outside the 5-star scale")
        num, den = self.helpfulness
        if num < 0 or den < 0 or (den > 0 and num > den):
            raise ValueError(f"invalid helpfulness ratio {num}/{den}")


@dataclass
class RatingsMatrix:
    """Sparse user x item score triplets with id<->index maps.

    Only observed ratings are stored; indices are dense and assigned in
    first-appearance order.
    """

    n_users: int
    n_items: int
    user_idx: np.ndarray  # int array, one per entry
    item_idx: np.ndarray
    scores: np.ndarray  # float array
    user_ids: list[str]
    item_ids: list[str]
    entry_times: np.ndarray | None = None

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {v: j for j, v in enumerate(self.item_ids)}

    @property
    def n_entries(self):
        return len(self.scores)

    def subset(self, mask: np.ndarray) -> "RatingsMatrix":
        """Same index space, restricted entry set."""
        return RatingsMatrix(
            self.n_users,
            self.n_items,
            self.user_idx[mask],
            self.item_idx[mask],
            self.scores[mask],
            self.user_ids,
            self.item_ids,
            None if self.entry_times is None else self.entry_times[mask],
        )


@dataclass
class FoldPlan:
    """Assignment of every observed rating to one of k folds."""

    k: int
    assignment: np.ndarray  # fold label per matrix entry
    seed: int

    def test_mask(self, fold: int) -> np.ndarray:
        return self.assignment == fold

    def train_mask(self, fold: int) -> np.ndarray:
        return self.assignment != fold


@dataclass
class DatasetStats:
    n_reviews: int
    n_users: int
    n_products: int
    median_words_per_review: int


def _parse_block(lines, offset, strict_schema=True):
    fields = {}
    for ln in lines:
        if ":" not in ln:
            continue  # stray noise line inside a block
        key, _, value = ln.partition(":")
        name = _KEY_TO_FIELD.get(key.strip())
        if name is None:
            continue
        fields[name] = value.strip() if name != "text" else value.lstrip()
    for req in _REQUIRED_FIELDS:
        if req not in fields:
            raise MalformedRecordError(f"missing required field {req!r}", offset)
    try:
        score = float(fields["score"])
    except ValueError:
        raise MalformedRecordError(f"unparseable score {fields['score']!r}", offset)
    time = 0
    if "time" in fields:
        try:
            time = int(fields["time"])
        except ValueError:
            raise MalformedRecordError(f"unparseable time {fields['time']!r}", offset)
    helpfulness = (0, 0)
    if "helpfulness" in fields:
        try:
            num, _, den = fields["helpfulness"].partition("/")
            helpfulness = (int(num), int(den))
        except ValueError:
            raise MalformedRecordError(
                f"unparseable helpfulness {fields['helpfulness']!r}", offset
            )
    try:
        return Review(
            product_id=fields["product_id"],
            user_id=fields["user_id"],
            score=score,
            text=fields["text"],
            profile_name=fields.get("profile_name", ""),
            helpfulness=helpfulness,
            time=time,
            summary=fields.get("summary", ""),
        )
    except ValueError as exc:
        raise MalformedRecordError(str(exc), offset)


def parse_reviews(stream, on_error="skip", errors_out=None):
    """Parse a SNAP block stream into a list of :class:`Review`.

    ``stream`` may be a path, bytes, str, or a binary/text file object.
    ``on_error`` selects the malformed-block policy: ``"skip"`` (default)
    drops bad blocks, counts them and logs one summary warning;
    ``"raise"`` fails fast with :class:`MalformedRecordError`.
    ``errors_out``, when given a list, collects the skipped errors.
    """
    if on_error not in ("skip", "raise"):
        raise ValueError(f"unknown on_error policy {on_error!r}")
    data = _as_bytes(stream)

    reviews = []
    skipped = 0
    block_lines: list[str] = []
    block_offset = 0
    offset = 0

    def flush():
        nonlocal skipped
        if not block_lines:
            return
        try:
            reviews.append(_parse_block(block_lines, block_offset))
        except MalformedRecordError as exc:
            if on_error == "raise":
                raise
            skipped += 1
            if errors_out is not None:
                errors_out.append(exc)
        block_lines.clear()

    for raw_line in data.split(b"\n"):
        line = raw_line.decode("utf-8", errors="replace").rstrip("\r")
        if not line.strip():
            flush()
        else:
            if not block_lines:
                block_offset = offset
            block_lines.append(line)
        offset += len(raw_line) + 1
    flush()

    if skipped:
        logger.warning("parse_reviews: skipped %d malformed block(s)", skipped)
    return reviews


def _as_bytes(stream) -> bytes:
    if isinstance(stream, bytes):
        return stream
    if isinstance(stream, (str, Path)):
        # a path if it names an existing file, otherwise literal content
        if isinstance(stream, Path) or os.path.exists(stream):
            with open(stream, "rb") as f:
                return f.read()
        return stream.encode("utf-8")
    if isinstance(stream, io.TextIOBase):
        return stream.read().encode("utf-8")
    return stream.read()


def serialize_reviews(reviews) -> str:
    """Canonical re-serializer in the SNAP block format (round-trip safe)."""
    blocks = []
    for r in reviews:
        lines = [
            f"product/productId: {r.product_id}",
            f"review/userId: {r.user_id}",
            f"review/profileName: {r.profile_name}",
            f"review/helpfulness: {r.helpfulness[0]}/{r.helpfulness[1]}",
            f"review/score: {r.score}",
            f"review/time: {r.time}",
            f"review/summary: {r.summary}",
            f"review/text: {r.text}",
        ]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def build_matrix(reviews, dedup="latest") -> RatingsMatrix:
    """Materialize the sparse ratings matrix from parsed reviews.

    Duplicate (user, item) ratings are resolved by ``dedup``:
    ``"latest"`` keeps the most recent by timestamp (default, stream order
    breaks timestamp ties), ``"first"`` keeps the first seen, ``"mean"``
    averages the scores.
    """
    if dedup not in ("latest", "first", "mean"):
        raise ValueError(f"unknown dedup policy {dedup!r}")

    user_ids: list[str] = []
    item_ids: list[str] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    cells: dict[tuple[int, int], list] = {}

    for r in reviews:
        if r.user_id not in user_index:
            user_index[r.user_id] = len(user_ids)
            user_ids.append(r.user_id)
        if r.product_id not in item_index:
            item_index[r.product_id] = len(item_ids)
            item_ids.append(r.product_id)
        key = (user_index[r.user_id], item_index[r.product_id])
        if key not in cells:
            cells[key] = [r.score, r.time, 1]
        elif dedup == "latest":
            if r.time >= cells[key][1]:
                cells[key] = [r.score, r.time, 1]
        elif dedup == "mean":
            cells[key][0] += r.score
            cells[key][1] = max(cells[key][1], r.time)
            cells[key][2] += 1
        # "first": keep as is

    keys = list(cells)
    ui = np.array([k[0] for k in keys], dtype=np.int64)
    vi = np.array([k[1] for k in keys], dtype=np.int64)
    sc = np.array([cells[k][0] / cells[k][2] for k in keys], dtype=np.float64)
    ts = np.array([cells[k][1] for k in keys], dtype=np.int64)
    return RatingsMatrix(len(user_ids), len(item_ids), ui, vi, sc, user_ids, item_ids, ts)


def split_folds(matrix: RatingsMatrix, k: int, seed: int) -> FoldPlan:
    """Deal a seeded uniform permutation of the entries round-robin into k folds."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    n = matrix.n_entries
    if n < k:
        raise ValueError(f"cannot split {n} entries into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def export_folds_tsv(matrix: RatingsMatrix, plan: FoldPlan) -> str:
    """FoldPlan as TSV: user_id, item_id, score, fold."""
    lines = []
    for e in range(matrix.n_entries):
        lines.append(
            f"{matrix.user_ids[matrix.user_idx[e]]}\t"
            f"{matrix.item_ids[matrix.item_idx[e]]}\t"
            f"{matrix.scores[e]}\t{plan.assignment[e]}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def stats(reviews, tokenizer) -> DatasetStats:
    """Corpus dimensions: review/user/product counts and the median review length.

    The even-length median takes the lower central value so the result is
    always an integer token count.
    """
    n_reviews = len(reviews)
    users = {r.user_id for r in reviews}
    products = {r.product_id for r in reviews}
    lengths = sorted(len(tokenizer(r.text)) for r in reviews)
    median = lengths[(n_reviews - 1) // 2] if n_reviews else 0
    return DatasetStats(
        n_reviews=n_reviews,
        n_users=len(users),
        n_products=len(products),
        median_words_per_review=median,
    )
