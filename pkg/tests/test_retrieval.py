import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from acnet.data import generate_synthetic_dataset
from acnet.retrieval import (
    ALL,
    EmbeddingSet,
    RetrievalResult,
    average_precision,
    binarize_hash,
    chance_map,
    distance_histogram,
    evaluate,
    hamming_distances,
    hamming_rank,
    load_embeddings,
    map_at_k,
    precision_at_k,
    rank_gallery,
    save_embeddings,
    write_report,
)


def unit_rows(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_sets(rng, n_max=50, dim_max=16, n_classes=None):
    nq, ng, dim = rng.integers(1, n_max + 1), rng.integers(1, n_max + 1), rng.integers(1, dim_max + 1)
    k = n_classes or rng.integers(1, 6)
    q = EmbeddingSet(unit_rows(rng, nq, dim), rng.integers(0, k, nq))
    g = EmbeddingSet(unit_rows(rng, ng, dim), rng.integers(0, k, ng))
    return q, g


# ------------------------------------------------------- brute-force oracles
def brute_rank(qv, gv):
    """Selection sort by (descending score, ascending index), one query at a time."""
    out = []
    for q in qv:
        scores = [float(np.dot(q, g)) for g in gv]
        remaining = list(range(len(gv)))
        order = []
        while remaining:
            best = remaining[0]
            for j in remaining[1:]:
                if scores[j] > scores[best]:
                    best = j
            order.append(best)
            remaining.remove(best)
        out.append(order)
    return out


def brute_ap(rel, k, normalizer="min"):
    n_rel = sum(rel)
    if n_rel == 0:
        return None
    kk = len(rel) if k == ALL else k
    hits, total = 0, 0.0
    for i, r in enumerate(rel[:kk], 1):
        if r:
            hits += 1
            total += hits / i
    return total / (min(n_rel, kk) if normalizer == "min" else n_rel)


def brute_metrics(q, g, k_map, k_prec, normalizer="min"):
    orders = brute_rank(q.vectors.astype(np.float64), g.vectors.astype(np.float64))
    aps, precs = [], []
    for qi, order in enumerate(orders):
        rel = [bool(g.labels[j] == q.labels[qi]) for j in order]
        ap = brute_ap(rel, k_map, normalizer)
        if ap is not None:
            aps.append(ap)
        precs.append(sum(rel[:k_prec]) / k_prec)
    return orders, (sum(aps) / len(aps) if aps else None), sum(precs) / len(precs)


def test_metrics_match_brute_force_on_500_instances():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(500):
        q, g = random_sets(rng)
        k_map = ALL if rng.random() < 0.3 else int(rng.integers(1, 60))
        k_prec = int(rng.integers(1, 60))
        norm = "min" if rng.random() < 0.8 else "R"
        res = rank_gallery(q, g)
        orders, ref_map, ref_prec = brute_metrics(q, g, k_map, k_prec, norm)
        assert res.ranking.tolist() == orders
        assert precision_at_k(res, k_prec) == pytest.approx(ref_prec, abs=1e-12)
        if ref_map is None:
            with pytest.raises(ValueError, match="undefined"):
                map_at_k(res, k_map, norm)
        else:
            assert map_at_k(res, k_map, norm) == pytest.approx(ref_map, abs=1e-12)
            checked += 1
    assert checked > 400


def test_ranking_breaks_ties_by_index():
    g = EmbeddingSet(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]), [0, 1, 0, 1])
    q = EmbeddingSet(np.array([[1.0, 0.0]]), [0])
    res = rank_gallery(q, g)
    assert res.ranking[0].tolist() == [0, 2, 1, 3]
    assert np.all(np.diff(res.scores[0]) <= 0)


def test_query_equal_to_row_ranks_it_first():
    rng = np.random.default_rng(0)
    gv = unit_rows(rng, 20, 8)
    res = rank_gallery(EmbeddingSet(gv[7:8], [0]), EmbeddingSet(gv, np.zeros(20)))
    assert res.ranking[0, 0] == 7
    assert sorted(res.ranking[0].tolist()) == list(range(20))


def test_orthonormal_gallery_indicator():
    res = rank_gallery(EmbeddingSet(np.eye(6)[3:4], [0]), EmbeddingSet(np.eye(6), np.arange(6)))
    sim = np.zeros(6)
    sim[res.ranking[0]] = res.scores[0]
    assert np.array_equal(sim, np.eye(6)[3])


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError, match="dims differ"):
        rank_gallery(EmbeddingSet(np.ones((1, 3)), [0]), EmbeddingSet(np.ones((2, 4)), [0, 1]))


# --------------------------------------------------------------- fixtures
def test_ap_five_sixths():
    rel = np.array([[True, False, True, False, False]])
    assert average_precision(rel, ALL)[0] == pytest.approx(5 / 6)


def test_single_relevant_at_top():
    assert average_precision(np.array([[True, False, False]]), ALL)[0] == 1.0


def test_truncated_ap_normalizers():
    rel = np.array([[False, True, False, True, True]])  # R = 3
    # k = 2: one hit at rank 2, P = 1/2
    assert average_precision(rel, 2, "min")[0] == pytest.approx(0.5 / 2)
    assert average_precision(rel, 2, "R")[0] == pytest.approx(0.5 / 3)


def crafted(rel_rows):
    rel = np.array(rel_rows, dtype=bool)
    return RetrievalResult(np.tile(np.arange(rel.shape[1]), (len(rel), 1)), rel)


def test_precision_hand_count():
    # 10-item ranking, relevant at ranks 1, 2, 5, 9
    res = crafted([[1, 1, 0, 0, 1, 0, 0, 0, 1, 0]])
    assert precision_at_k(res, 1) == 1.0
    assert precision_at_k(res, 4) == 0.5
    assert precision_at_k(res, 5) == 0.6
    assert precision_at_k(res, 10) == 0.4
    # k beyond the gallery still divides by k
    assert precision_at_k(res, 20) == 0.2


def test_precision_extremes():
    assert precision_at_k(crafted([[1, 1, 1, 0]]), 3) == 1.0
    assert precision_at_k(crafted([[0, 0, 0, 0]]), 3) == 0.0
    with pytest.raises(ValueError):
        precision_at_k(crafted([[1]]), 0)


def test_queries_without_relevant_are_excluded():
    res = crafted([[1, 0, 1, 0, 0], [0, 0, 0, 0, 0]])
    assert map_at_k(res) == pytest.approx(5 / 6)
    m = evaluate(res, (ALL,), (2,))
    assert m["n_queries"] == 2 and m["n_queries_without_relevant"] == 1
    with pytest.raises(ValueError, match="undefined"):
        map_at_k(crafted([[0, 0]]))


def test_bad_arguments_rejected():
    with pytest.raises(ValueError):
        average_precision(np.ones((1, 3), bool), 0)
    with pytest.raises(ValueError, match="normalizer"):
        average_precision(np.ones((1, 3), bool), ALL, "mean")


def test_gallery_of_only_relevant_items_is_perfect():
    rng = np.random.default_rng(1)
    q = EmbeddingSet(unit_rows(rng, 5, 4), np.zeros(5))
    g = EmbeddingSet(unit_rows(rng, 9, 4), np.zeros(9))
    assert map_at_k(rank_gallery(q, g)) == 1.0


def test_metric_bounds_hold():
    rng = np.random.default_rng(3)
    for _ in range(50):
        q, g = random_sets(rng)
        res = rank_gallery(q, g)
        for k in (1, 5, 20):
            hits = res.relevance[:, :k].sum(axis=1)
            assert np.all(hits <= res.n_relevant)
            ap = average_precision(res.relevance, k)
            assert np.all(ap[~np.isnan(ap)] <= 1.0 + 1e-12)


def test_rotation_leaves_metrics_unchanged():
    rng = np.random.default_rng(5)
    q, g = random_sets(rng, n_max=40, dim_max=12, n_classes=4)
    rot, _ = np.linalg.qr(rng.normal(size=(q.dim, q.dim)))
    a, b = rank_gallery(q, g), rank_gallery(q.rotated(rot), g.rotated(rot))
    assert np.array_equal(a.ranking, b.ranking)
    ka, kb = evaluate(a, (ALL, 5), (1, 5)), evaluate(b, (ALL, 5), (1, 5))
    assert ka == kb


def test_chance_map_matches_closed_form_extremes():
    # every gallery item relevant: any ranking is perfect
    assert chance_map([0, 0], [0, 0, 0], n_trials=5) == 1.0
    # one relevant in n: E[AP] = mean over positions of 1/pos
    n = 10
    expected = np.mean(1.0 / np.arange(1, n + 1))
    assert chance_map([0], [0] + [1] * (n - 1), n_trials=4000, seed=0) == pytest.approx(expected, abs=0.01)


# ----------------------------------------------------------------- hashing
def popcount_loop(a: int, b: int) -> int:
    x, count = a ^ b, 0
    while x:
        count += x & 1
        x >>= 1
    return count


def test_bits_follow_projection_signs():
    rng = np.random.default_rng(0)
    v = unit_rows(rng, 30, 16)
    codes = binarize_hash(v, 64, seed=4)
    proj = v @ codes.projection
    for i in range(30):
        word = int(codes.words[i, 0])
        for b in range(64):
            assert bool((word >> b) & 1) == (proj[i, b] >= 0)


def test_sign_of_zero_is_positive():
    codes = binarize_hash(np.zeros((1, 5)), 64)
    assert int(codes.words[0, 0]) == 2**64 - 1


def test_identical_and_negated_embeddings():
    rng = np.random.default_rng(1)
    v = unit_rows(rng, 10, 32)
    a, b = binarize_hash(v, 64, 2), binarize_hash(v.copy(), 64, 2)
    assert np.array_equal(a.words, b.words)
    neg = binarize_hash(-v, projection=a.projection)
    assert np.array_equal(neg.words, ~a.words)


def test_multiword_codes():
    rng = np.random.default_rng(2)
    v = unit_rows(rng, 6, 8)
    codes = binarize_hash(v, 100, 0)
    assert codes.words.shape == (6, 2)
    assert np.all(codes.words[:, 1] >> np.uint64(36) == 0)
    d = hamming_distances(codes, codes)
    proj = (v @ codes.projection) >= 0
    assert np.array_equal(d, (proj[:, None, :] != proj[None, :, :]).sum(axis=2))


def test_hamming_matches_popcount_loop():
    rng = np.random.default_rng(6)
    q = binarize_hash(unit_rows(rng, 15, 16), 64, 1)
    g = binarize_hash(unit_rows(rng, 25, 16), projection=q.projection)
    d = hamming_distances(q, g)
    for i in range(15):
        for j in range(25):
            assert d[i, j] == popcount_loop(int(q.words[i, 0]), int(g.words[j, 0]))


def test_hamming_rank_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(50):
        q, g = random_sets(rng, n_max=30, dim_max=16)
        qc = binarize_hash(q, 64, 3)
        gc = binarize_hash(g, projection=qc.projection)
        res = hamming_rank(qc, gc, q.labels, g.labels)
        for i in range(len(q)):
            d = [popcount_loop(int(qc.words[i, 0]), int(w)) for w in gc.words[:, 0]]
            assert res.ranking[i].tolist() == sorted(range(len(g)), key=lambda j: (d[j], j))
            assert sorted(res.ranking[i].tolist()) == list(range(len(g)))


def test_identical_code_ranks_first():
    rng = np.random.default_rng(8)
    g = unit_rows(rng, 12, 16)
    gc = binarize_hash(g, 64, 0)
    qc = binarize_hash(g[5:6], projection=gc.projection)
    assert hamming_rank(qc, gc, [0], np.arange(12)).ranking[0, 0] == 5


def test_bit_width_mismatch_rejected():
    v = np.ones((1, 4))
    with pytest.raises(ValueError, match="bit widths"):
        hamming_distances(binarize_hash(v, 64), binarize_hash(v, 32))


def test_hamming_anticorrelates_with_cosine():
    rng = np.random.default_rng(9)
    a, b = unit_rows(rng, 1000, 64), unit_rows(rng, 1000, 64)
    # spread the similarities over [-1, 1] by mixing partners toward their anchor
    mix = rng.uniform(-1, 1, size=(1000, 1))
    b = mix * a + (1 - np.abs(mix)) * b
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    ca = binarize_hash(a, 64, 0)
    cb = binarize_hash(b, projection=ca.projection)
    ham = np.bitwise_count(ca.words[:, 0] ^ cb.words[:, 0])
    cos = np.sum(a * b, axis=1)
    assert spearmanr(ham, cos).statistic < -0.5


# ---------------------------------------------------------------- reports
def test_report_files(tmp_path):
    metrics = {"mAP@all": 0.5, "mAP@10": 0.25, "Prec@10": 0.125, "n_queries": 7}
    jp, cp = write_report(metrics, tmp_path / "r" / "rep")
    assert json.loads(jp.read_text()) == metrics
    rows = cp.read_text().splitlines()
    assert rows[0] == "metric,k,value,n_queries"
    assert "mAP,all,0.5,7" in rows and "Prec,10,0.125,7" in rows
    assert len(rows) == 4


def test_embedding_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    emb = EmbeddingSet(unit_rows(rng, 9, 5).astype(np.float32), [3, 7, 3, 11, 7, 3, 11, 11, 7],
                       ["photo"] * 4 + ["sketch"] * 5)
    path, side = save_embeddings(tmp_path / "e.emb", emb)
    raw = path.read_bytes()
    assert raw[:8] == b"ACNETEMB"
    assert np.frombuffer(raw, "<u4", 3, 8).tolist() == [9, 5, 3]
    assert np.frombuffer(raw, "<i8", 3, 20).tolist() == [3, 7, 11]
    back = load_embeddings(path)
    assert np.array_equal(back.vectors, emb.vectors)
    assert np.array_equal(back.labels, emb.labels)
    assert back.domains.tolist() == emb.domains.tolist()
    assert side.read_text().splitlines()[1] == "0\t3\tphoto"


def test_embedding_dump_rejects_foreign_file(tmp_path):
    (tmp_path / "x.emb").write_bytes(b"NOTMAGIC" + bytes(12))
    with pytest.raises(ValueError, match="not an embedding dump"):
        load_embeddings(tmp_path / "x.emb")


def test_embedding_set_validates_shapes():
    with pytest.raises(ValueError):
        EmbeddingSet(np.ones(3), [0, 1, 2])
    with pytest.raises(ValueError):
        EmbeddingSet(np.ones((3, 2)), [0, 1])


# --------------------------------------------------------- distance histogram
def test_histogram_identical_sampling_is_zero():
    rng = np.random.default_rng(0)
    imgs = rng.uniform(-1, 1, size=(20, 3, 4, 4))
    labels = np.repeat([0, 1], 10)
    h = distance_histogram(imgs, labels, imgs, labels, samples_per_class=50, seed=3, seed_b=3)
    assert h.mean == 0.0 and h.counts[0] == 100


def test_histogram_constant_offset_lands_in_one_bin():
    rng = np.random.default_rng(1)
    imgs = rng.uniform(-0.4, 0.4, size=(10, 3, 4, 4))
    labels = np.zeros(10)
    # bins of width 0.25 with 0.5 in the middle of [0.375, 0.625)
    h = distance_histogram(imgs, labels, imgs + 0.5, labels, samples_per_class=30, bins=np.linspace(-0.125, 1.875, 9),
                           seed=0, seed_b=0)
    assert h.mean == pytest.approx(0.5)
    assert h.counts.tolist() == [0, 0, 30, 0, 0, 0, 0, 0]


def test_histogram_sketch_photo_gap():
    ds = generate_synthetic_dataset(n_classes=4, per_class_sketches=10, per_class_photos=10, side=32)
    s, p = ds.indices("sketch"), ds.indices("photo")
    cross = distance_histogram(ds.images[s], ds.labels[s], ds.images[p], ds.labels[p])
    within = distance_histogram(ds.images[p], ds.labels[p], ds.images[p], ds.labels[p])
    assert cross.mean > within.mean
    assert cross.counts.sum() == 4 * 50


def test_histogram_errors():
    with pytest.raises(ValueError, match="non-empty"):
        distance_histogram(np.zeros((0, 3, 2, 2)), [], np.zeros((1, 3, 2, 2)), [0])
    with pytest.raises(ValueError, match="share no class"):
        distance_histogram(np.zeros((1, 3, 2, 2)), [0], np.zeros((1, 3, 2, 2)), [1])
