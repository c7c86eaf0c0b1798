"""Hamming-ranking retrieval over binary codes, with MAP and NDCG metrics.

A gallery is indexed as sign codes plus per-item metadata (subject id and
binary attribute vector).  Queries are attribute masks: an item is a binary
match when it possesses every queried attribute, and its graded relevance is
the number of queried attributes it possesses.  Rankings sort the whole
gallery by Hamming distance ascending, breaking ties by ascending item id so
results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .hashing import sign_hash


class UndefinedMetricError(ValueError):
    """Raised when a requested metric has no valid query to average over."""


@dataclass(frozen=True)
class RetrievalIndex:
    codes: np.ndarray        # (n_items, c) int8 entries in {-1, +1}
    subject_ids: np.ndarray  # (n_items,)
    attributes: np.ndarray   # (n_items, d_attr) entries in {0, 1}

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def code_length(self) -> int:
        return self.codes.shape[1]

    @property
    def d_attr(self) -> int:
        return self.attributes.shape[1]


def build_index(values, subject_ids, attributes) -> RetrievalIndex:
    """Index a gallery; real-valued activations are sign-hashed first."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("gallery values must be a 2-D array")
    if np.issubdtype(values.dtype, np.floating):
        codes = sign_hash(values)
    else:
        codes = values.astype(np.int8)
        if codes.size and not np.isin(codes, (-1, 1)).all():
            raise ValueError("integer codes must have entries in {-1, +1}")
    subject_ids = np.asarray(subject_ids, dtype=np.int64)
    attributes = np.asarray(attributes)
    if attributes.ndim != 2:
        raise ValueError("attributes must be a 2-D array")
    if attributes.size and not np.isin(attributes, (0, 1)).all():
        raise ValueError("attribute entries must be 0 or 1")
    n = codes.shape[0]
    if subject_ids.shape != (n,) or attributes.shape[0] != n:
        raise ValueError(f"metadata count must match gallery size {n}")
    return RetrievalIndex(codes, subject_ids, attributes.astype(np.uint8))


def rank(query_code, index: RetrievalIndex):
    """Full-gallery ranking: (item ids, Hamming distances), distance
    ascending with ties broken by ascending id."""
    q = np.asarray(query_code)
    if q.shape != (index.code_length,):
        raise ValueError(f"query length {q.shape} does not match "
                         f"code length {index.code_length}")
    if not np.isin(q, (-1, 1)).all():
        raise ValueError("query code entries must be in {-1, +1}")
    dots = index.codes.astype(np.int64) @ q.astype(np.int64)
    distances = (index.code_length - dots) // 2
    order = np.argsort(distances, kind="stable")
    return order.astype(np.int64), distances[order]


# ---------------------------------------------------------------------------
# Relevance
# ---------------------------------------------------------------------------

def check_query_mask(mask, d_attr: int | None = None) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 1 or (m.size and not np.isin(m, (0, 1)).all()):
        raise ValueError("query mask must be a 1-D 0/1 vector")
    if not m.any():
        raise ValueError("query mask must select at least one attribute")
    if d_attr is not None and m.size != d_attr:
        raise ValueError(f"query mask length {m.size} does not match "
                         f"attribute dimension {d_attr}")
    return m.astype(np.uint8)


def relevance(mask, attributes) -> np.ndarray:
    """1 for items possessing every queried attribute, else 0."""
    attributes = np.asarray(attributes)
    m = check_query_mask(mask, attributes.shape[1])
    queried = np.nonzero(m)[0]
    return (attributes[:, queried] == 1).all(axis=1).astype(np.uint8)


def graded_relevance(mask, attributes) -> np.ndarray:
    """Number of queried attributes each item possesses."""
    attributes = np.asarray(attributes)
    m = check_query_mask(mask, attributes.shape[1])
    queried = np.nonzero(m)[0]
    return (attributes[:, queried] == 1).sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def average_precision(ranked_relevance) -> float:
    """AP of one binary relevance list given in rank order."""
    rels = np.asarray(ranked_relevance)
    hits = np.nonzero(rels)[0]
    if hits.size == 0:
        raise UndefinedMetricError("no relevant item in the gallery")
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def mean_average_precision(ranked_relevances) -> float:
    """Mean AP over queries; queries with no relevant item are skipped."""
    aps = []
    for rels in ranked_relevances:
        if np.asarray(rels).any():
            aps.append(average_precision(rels))
    if not aps:
        raise UndefinedMetricError("no query with a relevant item")
    return float(np.mean(aps))


def ndcg_at_k(ranked_grades, k: int) -> float:
    """NDCG truncated at k for one graded relevance list in rank order.

    Gains are 2^grade - 1 with 1/log2(rank+1) discounts; the normalizer is
    the same sum over the descending-sorted grades.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    grades = np.asarray(ranked_grades, dtype=np.int64)
    if (grades < 0).any():
        raise ValueError("relevance grades must be nonnegative")
    if not grades.any():
        raise UndefinedMetricError("all relevance grades are zero")
    depth = min(k, grades.size)
    discounts = 1.0 / np.log2(np.arange(2, depth + 2))
    gains = (2.0 ** grades - 1.0)
    dcg = float(gains[:depth] @ discounts)
    ideal = float(np.sort(gains)[::-1][:depth] @ discounts)
    return dcg / ideal


def enumerate_query_masks(d_attr: int, arity: int, max_queries=None,
                          seed=0) -> np.ndarray:
    """All attribute masks with `arity` ones, optionally subsampled."""
    if not 1 <= arity <= d_attr:
        raise ValueError(f"arity must be in [1, {d_attr}], got {arity}")
    combos = list(combinations(range(d_attr), arity))
    if max_queries is not None and len(combos) > max_queries:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(combos), size=max_queries, replace=False)
        combos = [combos[i] for i in sorted(chosen)]
    masks = np.zeros((len(combos), d_attr), dtype=np.uint8)
    for row, combo in enumerate(combos):
        masks[row, list(combo)] = 1
    return masks


@dataclass(frozen=True)
class QueryEvaluation:
    mean_average_precision: float
    ndcg: float
    queries: int
    skipped_map: int
    skipped_ndcg: int


def evaluate_queries(encode_attributes, index: RetrievalIndex, masks,
                     k=None) -> QueryEvaluation:
    """Run attribute-mask queries through an encoder and the index.

    encode_attributes maps a float attribute vector to a real activation
    (it is sign-hashed here).  Queries with no binary-relevant item are
    skipped for MAP, and queries with all-zero grades are skipped for NDCG;
    both skip counts are reported.
    """
    masks = np.atleast_2d(np.asarray(masks))
    if k is None:
        k = max(len(index), 1)
    aps = []
    ndcgs = []
    skipped_map = 0
    skipped_ndcg = 0
    for mask in masks:
        code = sign_hash(encode_attributes(mask.astype(np.float64)))
        ids, _ = rank(code, index)
        binary = relevance(mask, index.attributes)[ids]
        grades = graded_relevance(mask, index.attributes)[ids]
        if binary.any():
            aps.append(average_precision(binary))
        else:
            skipped_map += 1
        if grades.any():
            ndcgs.append(ndcg_at_k(grades, k))
        else:
            skipped_ndcg += 1
    if not aps:
        raise UndefinedMetricError("no query with a relevant item")
    if not ndcgs:
        raise UndefinedMetricError("no query with a nonzero relevance grade")
    return QueryEvaluation(float(np.mean(aps)), float(np.mean(ndcgs)),
                           len(masks), skipped_map, skipped_ndcg)


# ---------------------------------------------------------------------------
# Ranking and report files
# ---------------------------------------------------------------------------

def write_rankings(path, blocks) -> None:
    """One block per query: a `# query <mask>` line, then one
    `rank, item_id, hamming_distance, relevance` line per gallery item."""
    with open(path, "w") as fh:
        fh.write("# columns: rank, item_id, hamming_distance, relevance\n")
        for mask, item_ids, distances, relevances in blocks:
            mask = check_query_mask(mask)
            fh.write("# query " + "".join(str(int(b)) for b in mask) + "\n")
            for pos, (item, dist, rel) in enumerate(
                    zip(item_ids, distances, relevances), start=1):
                fh.write(f"{pos}, {int(item)}, {int(dist)}, {int(rel)}\n")


def read_rankings(path):
    """Parse a rankings file back into (mask, item_ids, distances,
    relevances) blocks."""
    blocks = []
    mask = None
    rows = []

    def flush():
        if mask is not None:
            if not rows:
                raise ValueError(f"{path}: query block with no rows")
            arr = np.array(rows, dtype=np.int64)
            blocks.append((mask, arr[:, 1], arr[:, 2], arr[:, 3]))

    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("# query "):
                flush()
                digits = line[len("# query "):].strip()
                if not digits or set(digits) - {"0", "1"}:
                    raise ValueError(f"{path}:{lineno}: bad query mask")
                mask = np.frombuffer(digits.encode(), dtype=np.uint8) - ord("0")
                rows = []
                continue
            if line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if mask is None or len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: malformed ranking line")
            try:
                row = [int(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed ranking line")
            if row[0] != len(rows) + 1:
                raise ValueError(f"{path}:{lineno}: rank out of sequence")
            rows.append(row)
    flush()
    return blocks


def write_metric_report(path, rows) -> None:
    """Rows of (metric name, query arity, value)."""
    with open(path, "w") as fh:
        fh.write("metric, query_arity, value\n")
        for metric, arity, value in rows:
            fh.write(f"{metric}, {int(arity)}, {value!r}\n")
