"""Gallery ranking, Prec@k / mAP@k, sign-projection hashing and distance histograms."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALL = "all"


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # (n, dim), unit rows
    labels: np.ndarray
    domains: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {self.vectors.shape}")
        self.labels = np.asarray(self.labels)
        n = len(self.vectors)
        if self.domains is None:
            self.domains = np.full(n, "", dtype="<U11")
        self.domains = np.asarray(self.domains)
        if len(self.labels) != n or len(self.domains) != n:
            raise ValueError("labels/domains length must match the number of embeddings")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rotated(self, rotation: np.ndarray) -> "EmbeddingSet":
        return EmbeddingSet(self.vectors @ rotation, self.labels, self.domains)


@dataclass
class RetrievalResult:
    ranking: np.ndarray  # (n_query, n_gallery) gallery indices, best first
    relevance: np.ndarray  # (n_query, n_gallery) bool, aligned with ranking
    scores: np.ndarray | None = None  # aligned with ranking
    metrics: dict = field(default_factory=dict)

    @property
    def n_relevant(self) -> np.ndarray:
        return self.relevance.sum(axis=1)


def _stable_order(keys: np.ndarray) -> np.ndarray:
    # ascending keys, ties by ascending column index
    return np.argsort(keys, axis=1, kind="stable")


def _result(order: np.ndarray, query_labels, gallery_labels, sorted_scores) -> RetrievalResult:
    relevance = np.asarray(gallery_labels)[order] == np.asarray(query_labels)[:, None]
    return RetrievalResult(order, relevance, sorted_scores)


def rank_gallery(queries: EmbeddingSet, gallery: EmbeddingSet) -> RetrievalResult:
    """Sort the gallery by descending dot product for every query."""
    if queries.dim != gallery.dim:
        raise ValueError(f"embedding dims differ: queries {queries.dim}, gallery {gallery.dim}")
    sim = queries.vectors.astype(np.float64) @ gallery.vectors.astype(np.float64).T
    order = _stable_order(-sim)
    return _result(order, queries.labels, gallery.labels, np.take_along_axis(sim, order, axis=1))


def precision_at_k(result: RetrievalResult, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = result.relevance[:, :k].sum(axis=1)
    return float(np.mean(hits / k))


def average_precision(relevance: np.ndarray, k: int | str = ALL, normalizer: str = "min") -> np.ndarray:
    """Per-query AP@k; NaN where the query has no relevant gallery item.

    ``normalizer="min"`` divides by min(R, k); ``"R"`` divides by R.
    """
    rel = np.asarray(relevance, dtype=bool)
    total_rel = rel.sum(axis=1)
    kk = rel.shape[1] if k == ALL else int(k)
    if kk < 1:
        raise ValueError(f"k must be >= 1 or 'all', got {k}")
    top = rel[:, :kk].astype(np.float64)
    ranks = np.arange(1, top.shape[1] + 1)
    prec = np.cumsum(top, axis=1) / ranks
    summed = (prec * top).sum(axis=1)
    if normalizer == "min":
        denom = np.minimum(total_rel, kk)
    elif normalizer == "R":
        denom = total_rel
    else:
        raise ValueError(f"normalizer must be 'min' or 'R', got {normalizer!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        ap = summed / denom
    ap[total_rel == 0] = np.nan
    return ap


def map_at_k(result: RetrievalResult, k: int | str = ALL, normalizer: str = "min") -> float:
    ap = average_precision(result.relevance, k, normalizer)
    if np.all(np.isnan(ap)):
        raise ValueError("mAP undefined: no query has a relevant gallery item")
    return float(np.nanmean(ap))


# -------------------------------------------------------------------- hashing
@dataclass
class HashCodes:
    words: np.ndarray  # (n, n_words) uint64
    bits: int
    projection: np.ndarray  # (dim, bits)


def hash_projection(dim: int, bits: int = 64, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(dim, bits))


def binarize_hash(embeddings: EmbeddingSet | np.ndarray, bits: int = 64, seed: int = 0,
                  projection: np.ndarray | None = None) -> HashCodes:
    """Bit b is set iff projected coordinate b is >= 0 (sign(0) counts as +)."""
    vecs = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else np.asarray(embeddings)
    if vecs.shape[1] < 1:
        raise ValueError("embedding dim must be >= 1")
    if projection is None:
        projection = hash_projection(vecs.shape[1], bits, seed)
    proj = vecs.astype(np.float64) @ projection
    on = proj >= 0
    n_words = (bits + 63) // 64
    padded = np.zeros((len(vecs), n_words * 64), dtype=bool)
    padded[:, :bits] = on
    weights = np.left_shift(np.uint64(1), np.arange(64, dtype=np.uint64))
    words = (padded.reshape(len(vecs), n_words, 64).astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
    return HashCodes(words, bits, projection)


def hamming_distances(query: HashCodes, gallery: HashCodes) -> np.ndarray:
    if query.bits != gallery.bits:
        raise ValueError(f"bit widths differ: {query.bits} vs {gallery.bits}")
    x = np.bitwise_xor(query.words[:, None, :], gallery.words[None, :, :])
    return np.bitwise_count(x).sum(axis=2).astype(np.int64)


def hamming_rank(query: HashCodes, gallery: HashCodes, query_labels, gallery_labels) -> RetrievalResult:
    dist = hamming_distances(query, gallery)
    order = _stable_order(dist)
    return _result(order, query_labels, gallery_labels, np.take_along_axis(-dist, order, axis=1))


# ---------------------------------------------------------------- evaluation
def chance_map(query_labels, gallery_labels, k: int | str = ALL, n_trials: int = 100, seed: int = 0,
               normalizer: str = "min") -> float:
    """Monte-Carlo mAP of uniformly random rankings on the same query/gallery labels."""
    rng = np.random.default_rng(seed)
    q = np.asarray(query_labels)
    g = np.asarray(gallery_labels)
    vals = []
    for _ in range(n_trials):
        order = np.argsort(rng.random((len(q), len(g))), axis=1)
        rel = g[order] == q[:, None]
        ap = average_precision(rel, k, normalizer)
        vals.append(np.nanmean(ap))
    return float(np.mean(vals))


def evaluate(result: RetrievalResult, map_ks=(ALL,), prec_ks=(10, 50), normalizer: str = "min") -> dict:
    out = {}
    for k in map_ks:
        out[f"mAP@{k}"] = map_at_k(result, k, normalizer)
    for k in prec_ks:
        out[f"Prec@{k}"] = precision_at_k(result, int(k))
    out["n_queries"] = int(result.relevance.shape[0])
    out["n_queries_without_relevant"] = int(np.sum(result.n_relevant == 0))
    return out


def write_report(metrics: dict, stem) -> tuple[Path, Path]:
    """Write ``stem.json`` and ``stem.csv`` with rows (metric, k, value, n_queries)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    csv_path = stem.with_suffix(".csv")
    n_q = metrics.get("n_queries", "")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "k", "value", "n_queries"])
        for key in sorted(metrics):
            if "@" not in key:
                continue
            name, k = key.split("@", 1)
            w.writerow([name, k, repr(float(metrics[key])), n_q])
    return json_path, csv_path


# ------------------------------------------------------------ embedding dump
EMB_MAGIC = b"ACNETEMB"


def save_embeddings(path, emb: EmbeddingSet) -> tuple[Path, Path]:
    """Binary dump plus a ``.tsv`` sidecar (index, label, domain).

    Binary layout, little-endian: magic ``ACNETEMB``; uint32 n; uint32 dim;
    uint32 n_classes; n_classes x int64 sorted label table; n x uint32 label
    positions into that table; n*dim float32 row-major vectors.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.unique(emb.labels.astype(np.int64))
    pos = np.searchsorted(table, emb.labels.astype(np.int64)).astype("<u4")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", len(emb), emb.dim, len(table)))
        fh.write(table.astype("<i8").tobytes())
        fh.write(pos.tobytes())
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())
    side = path.with_suffix(".tsv")
    with open(side, "w", encoding="utf-8") as fh:
        fh.write("index\tlabel\tdomain\n")
        for i, (y, d) in enumerate(zip(emb.labels, emb.domains)):
            fh.write(f"{i}\t{int(y)}\t{d}\n")
    return path, side


def load_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != EMB_MAGIC:
        raise ValueError(f"{path}: not an embedding dump")
    n, dim, n_cls = struct.unpack("<III", raw[8:20])
    off = 20
    table = np.frombuffer(raw, "<i8", n_cls, off)
    off += 8 * n_cls
    pos = np.frombuffer(raw, "<u4", n, off)
    off += 4 * n
    vecs = np.frombuffer(raw, "<f4", n * dim, off).reshape(n, dim).astype(np.float32)
    domains = None
    side = path.with_suffix(".tsv")
    if side.exists():
        rows = side.read_text(encoding="utf-8").splitlines()[1:]
        domains = np.array([r.split("\t")[2] if r.count("\t") >= 2 else "" for r in rows])
    return EmbeddingSet(vecs, table[pos], domains)


# -------------------------------------------------------- distance histogram
@dataclass
class DistanceHistogram:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    distances: np.ndarray


def distance_histogram(images_a: np.ndarray, labels_a, images_b: np.ndarray, labels_b,
                       samples_per_class: int = 50, bins=20, seed: int = 0,
                       seed_b: int | None = None, value_range=(0.0, 2.0)) -> DistanceHistogram:
    """Mean per-pixel L1 distances between same-class pairs drawn from two sets.

    For every class present in both sets, ``samples_per_class`` items are drawn
    (with replacement) from each set and paired position by position.  The two
    draws use ``seed`` and ``seed_b`` (default ``seed + 1``); passing the same
    seed for identical sets yields identical samples.
    """
    la, lb = np.asarray(labels_a), np.asarray(labels_b)
    if len(la) == 0 or len(lb) == 0:
        raise ValueError("both image sets must be non-empty")
    rng_a = np.random.default_rng(seed)
    rng_b = np.random.default_rng(seed + 1 if seed_b is None else seed_b)
    dists = []
    for c in sorted(set(la.tolist()) & set(lb.tolist())):
        ia = rng_a.choice(np.nonzero(la == c)[0], size=samples_per_class)
        ib = rng_b.choice(np.nonzero(lb == c)[0], size=samples_per_class)
        diff = np.abs(images_a[ia].astype(np.float64) - images_b[ib].astype(np.float64))
        dists.append(diff.reshape(samples_per_class, -1).mean(axis=1))
    if not dists:
        raise ValueError("the two sets share no class")
    d = np.concatenate(dists)
    counts, edges = np.histogram(d, bins=bins, range=value_range)
    return DistanceHistogram(counts, edges, float(d.mean()), d)
