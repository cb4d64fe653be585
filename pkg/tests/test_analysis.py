import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bshape.analysis import (
    AnalysisError,
    GeneAnnotation,
    ProfileGrid,
    adjusted_rand_index,
    canonical_labels,
    colocalization_probs,
    genome_distance,
    grid_points,
    group_ton_tmax,
    kmeans,
    kmeans_profiles,
    motif_onset_tests,
    neighbor_rank_tests,
    rank_correlation,
    rank_correlation_matrix,
    rank_sum_distribution,
    topk_odds_ratio,
    wilcoxon_rank_sum,
    wilcoxon_signed,
    within_group_similarity,
)


def brute_spearman(a, b):
    def ranks(v):
        return np.array([sum(1 for w in v if w < x) + (sum(1 for w in v if w == x) + 1) / 2 for x in v])

    ra, rb = ranks(a), ranks(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    return float(np.sum(ra * rb) / math.sqrt(np.sum(ra ** 2) * np.sum(rb ** 2)))


def test_rank_correlation_small_vectors():
    assert rank_correlation([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(brute_spearman([1, 2, 3, 4], [1, 3, 2, 4]))
    assert rank_correlation([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert rank_correlation([1, 2, 2, 5], [3, 1, 1, 0]) == pytest.approx(brute_spearman([1, 2, 2, 5], [3, 1, 1, 0]))


def test_rank_correlation_transforms():
    p = np.sin(3 * grid_points()) + grid_points()
    assert rank_correlation(p, p) == pytest.approx(1.0)
    assert rank_correlation(p, np.exp(p)) == pytest.approx(1.0)
    assert rank_correlation(p, -p ** 3) == pytest.approx(-1.0)
    assert math.isnan(rank_correlation(p, np.ones_like(p)))
    with pytest.raises(ValueError):
        rank_correlation(p, p[:10])


def test_profile_grid_minimum_size():
    with pytest.raises(ValueError):
        ProfileGrid("a", np.zeros(10))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=5, max_size=30).filter(lambda v: len(set(v)) > 1), st.data())
def test_rank_correlation_symmetry_and_monotone_invariance(a, data):
    b = data.draw(st.lists(st.integers(-1000, 1000), min_size=len(a), max_size=len(a)).filter(lambda v: len(set(v)) > 1))
    a, b = np.array(a), np.array(b)
    r = rank_correlation(a, b)
    assert r == pytest.approx(rank_correlation(b, a), abs=1e-12)
    assert r == pytest.approx(rank_correlation(np.arctan(a), 2 * b + 1), abs=1e-12)
    assert -1 - 1e-12 <= r <= 1 + 1e-12


def test_rank_correlation_matrix_matches_pairs():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(5, 70))
    R = rank_correlation_matrix(P)
    for i, j in itertools.product(range(5), repeat=2):
        assert R[i, j] == pytest.approx(rank_correlation(P[i], P[j]), abs=1e-12)


def two_families(n_each=6, seed=0):
    rng = np.random.default_rng(seed)
    x = grid_points()
    rising = [x ** rng.uniform(0.5, 2) for _ in range(n_each)]
    bumps = [np.exp(-((x - rng.uniform(0.3, 0.5)) / 0.1) ** 2) for _ in range(n_each)]
    return rising + bumps, np.repeat([0, 1], n_each)


def test_kmeans_profiles_planted_partition():
    profiles, truth = two_families()
    labels = kmeans_profiles(profiles, k=2, seed=1)
    assert adjusted_rand_index(labels, truth) == 1.0


def test_kmeans_profiles_k_equals_g():
    x = grid_points()
    profiles = [np.exp(-((x - c) / 0.1) ** 2) for c in (0.2, 0.3, 0.45, 0.5, 0.7, 0.9)]
    labels = kmeans_profiles(profiles, k=6, seed=0)
    assert sorted(labels) == list(range(6))


def test_kmeans_profiles_duplicates_share_labels():
    profiles, _ = two_families(4)
    labels = kmeans_profiles(profiles + profiles, k=3, seed=2)
    assert np.array_equal(labels[:8], labels[8:])


def test_kmeans_profiles_errors_and_determinism():
    profiles, _ = two_families(3)
    with pytest.raises(AnalysisError):
        kmeans_profiles([profiles[0]] * 4, k=2)
    with pytest.raises(AnalysisError):
        kmeans_profiles(profiles, k=1)
    assert np.array_equal(kmeans_profiles(profiles, k=3, seed=5), kmeans_profiles(profiles, k=3, seed=5))
    labels = kmeans_profiles(profiles, k=3, seed=5)
    assert np.array_equal(labels, canonical_labels(labels))


def planted_blobs(seed=0, per=15):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.1, 0.2], [0.1, 0.6], [0.4, 0.5], [0.4, 0.9], [0.7, 0.8], [0.2, 0.95]])
    X = np.concatenate([c + 0.015 * rng.normal(size=(per, 2)) for c in centers])
    return X, np.repeat(np.arange(6), per)


def test_group_ton_tmax_recovers_blobs():
    X, truth = planted_blobs()
    assert adjusted_rand_index(group_ton_tmax(X, k=6, seed=0), truth) > 0.9


def test_group_ton_tmax_scale_invariance_and_degenerate():
    X, _ = planted_blobs(1)
    assert np.array_equal(group_ton_tmax(X, seed=3), group_ton_tmax(7.5 * X, seed=3))
    with pytest.raises(AnalysisError):
        group_ton_tmax(np.tile([0.2, 0.5], (10, 1)))


def test_kmeans_refills_empty_clusters():
    X = np.array([[0.0], [0.0], [0.0], [1.0], [10.0]])
    labels = kmeans(X, 3, seed=0)
    assert len(set(labels.tolist())) == 3


def test_adjusted_rand_index_values():
    assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    # hand value: contingency [[1, 1], [1, 1]] gives -0.5
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)


def test_within_group_similarity():
    x = grid_points()
    p = x ** 2
    q = np.sin(6 * x)
    rows = within_group_similarity([0, 0, 0, 1, 1, 2], [p, p, 2 * p, p, q, q])
    by = {r.group: r for r in rows}
    assert by["0"].mean == pytest.approx(1.0) and by["0"].stdv == pytest.approx(0.0)
    assert by["1"].mean == pytest.approx(rank_correlation(p, q)) and by["1"].stdv == 0.0
    assert by["2"].size == 1 and math.isnan(by["2"].mean) and not by["2"].applicable
    assert rows[-1].group == "All" and rows[-1].size == 6


def enumerate_p(a, b, alternative):
    pooled = np.concatenate([a, b])
    order = np.argsort(np.argsort(pooled)) + 1
    w = order[: len(a)].sum()
    hits = 0
    total = 0
    for subset in itertools.combinations(range(1, len(pooled) + 1), len(a)):
        s = sum(subset)
        hits += s <= w if alternative == "less" else s >= w
        total += 1
    return hits / total


def test_wilcoxon_exact_small_example():
    res = wilcoxon_rank_sum([1, 2], [3, 4], "less")
    assert res.p_exact == 1 / 6
    assert res.statistic == 3.0


def test_wilcoxon_identical_samples():
    res = wilcoxon_rank_sum([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], "less")
    assert abs(res.z) < 0.25
    assert res.p == pytest.approx(0.5, abs=0.1)
    assert math.isnan(res.p_exact)


def test_wilcoxon_all_tied():
    res = wilcoxon_rank_sum([2.0, 2.0], [2.0], "greater")
    assert math.isnan(res.z) and math.isnan(res.p)


def test_wilcoxon_exact_matches_enumeration():
    rng = np.random.default_rng(3)
    for n in range(1, 6):
        for m in range(1, 6):
            v = rng.permutation(n + m).astype(float)
            for alt in ("less", "greater"):
                assert wilcoxon_rank_sum(v[:n], v[n:], alt).p_exact == enumerate_p(v[:n], v[n:], alt)


def test_wilcoxon_exact_tails_overlap_at_observed():
    rng = np.random.default_rng(4)
    for n, m in [(3, 4), (5, 5), (2, 8)]:
        v = rng.normal(size=n + m)
        lo = wilcoxon_rank_sum(v[:n], v[n:], "less")
        hi = wilcoxon_rank_sum(v[:n], v[n:], "greater")
        w = int(lo.statistic)
        point = rank_sum_distribution(n, m)[w - n * (n + 1) // 2] / math.comb(n + m, n)
        assert lo.p_exact + hi.p_exact - point == pytest.approx(1.0, abs=1e-15)


def test_rank_sum_distribution_sums():
    for n, m in [(1, 1), (3, 7), (10, 2), (10, 30)]:
        counts = rank_sum_distribution(n, m)
        assert counts.sum() == math.comb(n + m, n)
        assert counts.size == n * m + 1
        assert np.array_equal(counts, counts[::-1])


def test_wilcoxon_tie_corrected_normal_hand_value():
    a, b = [1.0, 2.0, 2.0, 4.0], [2.0, 5.0, 6.0]
    # ranks: 1, 3, 3, 5 | 3, 6, 7 -> W = 12; ties: one triple
    N, n, m = 7, 4, 3
    var = n * m / 12 * (N + 1 - (27 - 3) / (N * (N - 1)))
    z = (12 - n * (N + 1) / 2 + 0.5) / math.sqrt(var)
    res = wilcoxon_rank_sum(a, b, "less")
    assert res.statistic == 12.0 and res.z == pytest.approx(z, rel=1e-12)


def test_wilcoxon_signed_direction():
    lo = wilcoxon_signed([1, 2, 3], [4, 5, 6, 7])
    hi = wilcoxon_signed([8, 9, 10], [4, 5, 6, 7])
    assert lo.z < 0 and lo.alternative == "less"
    assert hi.z > 0 and hi.alternative == "greater"
    assert lo.p == pytest.approx(hi.p)


def annotations(G, rng, flags=None):
    out = []
    for g in range(G):
        f = rng.random(4) < 0.5 if flags is None else flags[g]
        out.append(GeneAnnotation(f"g{g}", g, bool(f[0]), bool(f[1]), bool(f[2]), bool(f[3])))
    return out


def test_motif_table_sign_convention():
    rng = np.random.default_rng(0)
    ann = annotations(40, rng)
    onsets = {a.gene_id: (0.1 if a.taag else 0.3) + 0.01 * rng.random() for a in ann}
    rows = {r.motif: r for r in motif_onset_tests(ann, onsets)}
    assert rows["TAAG"].z < -3
    assert rows["TAAG"].n_with + rows["TAAG"].n_without == 40
    assert set(rows) == {"Early", "TAAG", "CATG", "Early/CATG"}


def test_motif_skips_universal_class():
    rng = np.random.default_rng(1)
    ann = [GeneAnnotation(f"g{g}", g, True, bool(g % 2), bool(g % 3 == 0), False) for g in range(12)]
    onsets = {a.gene_id: rng.random() for a in ann}
    with pytest.warns(UserWarning, match="Early"):
        rows = motif_onset_tests(ann, onsets)
    assert [r.motif for r in rows] == ["TAAG", "CATG"]


def test_motif_null_calibration():
    small = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ann = annotations(60, rng)
        onsets = {a.gene_id: rng.random() for a in ann}
        rows = motif_onset_tests(ann, onsets)
        small += abs(rows[1].z) < 2
    assert small >= 90


def test_colocalization_single_cluster():
    for N in (2, 3, 5):
        assert colocalization_probs(np.zeros(8, dtype=int), np.arange(8), N) == (1.0, 1.0)


def test_colocalization_brute_force():
    labels = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2])
    pos = np.arange(9)
    for N in (2, 3):
        subsets = list(itertools.combinations(range(9), N))
        brute = sum(len(set(labels[list(s)])) == 1 for s in subsets) / len(subsets)
        windows = [labels[[(s + j) % 9 for j in range(N)]] for s in range(9)]
        brute_nb = sum(len(set(w)) == 1 for w in windows) / 9
        pr, pn = colocalization_probs(labels, pos, N)
        assert pr == pytest.approx(brute) and pn == pytest.approx(brute_nb)
        assert pn > pr
    assert colocalization_probs(labels, pos, 5)[0] == 0.0


def test_colocalization_label_permutation_invariance():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, 30)
    pos = rng.permutation(30)
    relabeled = (labels + 2) % 4
    assert colocalization_probs(labels, pos, 2) == colocalization_probs(relabeled, pos, 2)
    assert colocalization_probs(labels, pos, 2)[0] == colocalization_probs(rng.permutation(labels), pos, 2)[0]


def test_genome_distance_circular():
    d = genome_distance(np.arange(10))
    assert d[0, 1] == 0 and d[0, 9] == 0 and d[0, 5] == 4 and d[2, 8] == 3 and d[3, 3] == -1
    assert genome_distance(np.arange(10), circular=False)[0, 9] == 8


def test_neighbor_tests_null_calibration():
    rng = np.random.default_rng(0)
    x = grid_points(64)
    profiles = [np.exp(-((x - c) / 0.2) ** 2) for c in rng.uniform(0, 1, 30)]
    rho = rank_correlation_matrix(profiles)
    small = 0
    for t in range(100):
        res = neighbor_rank_tests(rho, np.random.default_rng(t).permutation(30), 2, 8)
        small += abs(res.z) < 2
    assert small >= 90


def test_neighbor_tests_detect_locality_and_markers():
    x = grid_points(64)
    centers = np.linspace(0.05, 0.95, 25)
    profiles = [np.exp(-((x - c) / 0.15) ** 2) for c in centers]
    res = neighbor_rank_tests(profiles, np.arange(25), 2, 6, circular=False)
    assert res.z > 3 and res.p < 1e-3
    rho = np.ones((6, 6))
    eq = neighbor_rank_tests(rho, np.arange(6), 1, 1)
    assert math.isnan(eq.z) or abs(eq.z) < 1e-12
    empty = neighbor_rank_tests(rank_correlation_matrix(profiles[:5]), np.arange(5), 2, 2)
    assert math.isnan(empty.z) and empty.n_b == 0
    with pytest.raises(ValueError):
        neighbor_rank_tests(profiles, np.arange(25), 13, 2)


def test_topk_odds_ratio_fixture():
    values = np.arange(74, 0, -1).astype(float)
    labels = np.zeros(74, dtype=bool)
    labels[[0, 1, 2, 4]] = True
    labels[10:21] = True
    res = topk_odds_ratio(values, labels, 5)
    assert res.table == ((4, 1), (11, 58))
    assert res.odds_ratio == pytest.approx(21.0909, abs=1e-4)
    assert not res.degenerate


def test_topk_odds_ratio_ties_and_zero_cells():
    values = np.array([1.0, 5.0, 5.0, 2.0, 0.5])
    labels = np.array([False, False, True, True, False])
    # 5.0 is tied; the lower id wins the single top slot
    res = topk_odds_ratio(values, labels, 1, gene_ids=["e", "b", "a", "d", "c"])
    assert res.table[0] == (1, 0) and res.odds_ratio == math.inf and res.degenerate
    res = topk_odds_ratio(values, labels, 1, gene_ids=["e", "a", "b", "d", "c"])
    assert res.table[0] == (0, 1)
    with pytest.raises(ValueError):
        topk_odds_ratio(values, np.ones(5, dtype=bool), 2)


def test_topk_odds_ratio_null_median():
    rng = np.random.default_rng(0)
    ratios = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(10_000):
            values = rng.random(60)
            labels = rng.random(60) < 0.5
            if labels.all() or not labels.any():
                continue
            ratios.append(topk_odds_ratio(values, labels, 30).odds_ratio)
    assert 0.8 < np.nanmedian(ratios) < 1.25
