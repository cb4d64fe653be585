"""Genome-wide analyses of fitted profiles.

Similarity of profiles is the Spearman correlation of curve values on a
shared uniform grid.  Clustering is Lloyd's K-means, either on a classical
multidimensional-scaling embedding of ``1 - rho`` or on standardized
(Ton, Tmax) pairs.  Association tests use the Wilcoxon rank-sum statistic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .bernstein import BernsteinCurve, curve_eval

DEFAULT_GRID = 256
MIN_GRID = 64
EXACT_MAX_SIZE = 10
MOTIFS = ("early", "taag", "catg", "early_catg")
MOTIF_LABELS = {"early": "Early", "taag": "TAAG", "catg": "CATG", "early_catg": "Early/CATG"}


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileGrid:
    gene_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < MIN_GRID:
            raise ValueError(f"profiles need a grid of at least {MIN_GRID} points")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class GeneAnnotation:
    gene_id: str
    genome_pos: int
    early: bool
    taag: bool
    catg: bool
    structural: bool
    name: str = ""

    @property
    def early_catg(self) -> bool:
        return self.early or self.catg


def grid_points(size: int = DEFAULT_GRID) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def profile_grid(curve: BernsteinCurve, gene_id: str, size: int = DEFAULT_GRID) -> ProfileGrid:
    return ProfileGrid(gene_id, curve_eval(curve, grid_points(size)))


def _values(p) -> np.ndarray:
    return p.values if isinstance(p, ProfileGrid) else np.asarray(p, dtype=float)


def rank_correlation(p, q) -> float:
    """Spearman correlation with average ranks for ties; ``nan`` for a constant profile."""
    a, b = _values(p), _values(q)
    if a.shape != b.shape:
        raise ValueError("profiles must share one grid")
    ra, rb = rankdata(a) - (a.size + 1) / 2.0, rankdata(b) - (b.size + 1) / 2.0
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        return math.nan
    return float(ra @ rb) / den


def rank_correlation_matrix(profiles: Sequence) -> np.ndarray:
    vals = np.array([_values(p) for p in profiles], dtype=float)
    r = rankdata(vals, axis=1) - (vals.shape[1] + 1) / 2.0
    norms = np.sqrt(np.sum(r * r, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = r / norms[:, None]
    out = z @ z.T
    out[norms == 0.0, :] = np.nan
    out[:, norms == 0.0] = np.nan
    np.fill_diagonal(out, np.where(norms == 0.0, np.nan, 1.0))
    return np.clip(out, -1.0, 1.0)


# ---------------------------------------------------------------------------
# K-means


def _kmeans_once(X, k, rng, max_iter):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = d2.sum()
        pick = int(rng.choice(n, p=d2 / tot)) if tot > 0 else int(rng.integers(n))
        centers[j] = X[pick]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    labels = None
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        for j in range(k):
            if not np.any(new == j):
                # refill an empty cluster with the point farthest from its centre
                far = int(np.argmax(dist[np.arange(n), new]))
                new[far] = j
                dist[far] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
    inertia = float(np.sum((X - centers[labels]) ** 2))
    return labels, inertia


def canonical_labels(labels) -> np.ndarray:
    """Relabel clusters 0, 1, ... in order of their smallest member index."""
    labels = np.asarray(labels)
    out = np.empty(labels.size, dtype=np.int64)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def kmeans(X, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> np.ndarray:
    """Lloyd's algorithm with k-means++ starts; best of ``n_init`` runs, canonical labels."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 2:
        raise AnalysisError("k must be at least 2")
    if X.shape[0] < k:
        raise AnalysisError("fewer points than clusters")
    if np.unique(X, axis=0).shape[0] < k:
        raise AnalysisError("fewer distinct points than clusters")
    rng = np.random.default_rng(seed)
    best, best_inertia = None, math.inf
    for _ in range(n_init):
        labels, inertia = _kmeans_once(X, k, rng, max_iter)
        if inertia < best_inertia:
            best, best_inertia = labels, inertia
    return canonical_labels(best)


def mds_embedding(dist: np.ndarray) -> np.ndarray:
    """Classical multidimensional scaling of a distance matrix (all positive dimensions)."""
    D = np.asarray(dist, dtype=float)
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    w, V = np.linalg.eigh((B + B.T) / 2.0)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    keep = w > 1e-12 * max(1.0, w[0] if w.size else 1.0)
    w, V = w[keep], V[:, keep]
    # fix eigenvector signs so the embedding is reproducible
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    return V * np.sqrt(w)


def kmeans_profiles(profiles: Sequence, k: int = 5, seed: int = 0, n_init: int = 10) -> np.ndarray:
    """Cluster profiles on the MDS embedding of ``1 - rank_correlation``."""
    rho = rank_correlation_matrix(profiles)
    if np.isnan(rho).any():
        raise AnalysisError("constant profiles have no rank correlation")
    G = rho.shape[0]
    if k < 2 or G < k:
        raise AnalysisError("need 2 <= k <= number of profiles")
    ranks = rankdata(np.array([_values(p) for p in profiles]), axis=1)
    if np.unique(ranks, axis=0).shape[0] < k:
        raise AnalysisError("fewer distinct profiles than clusters")
    X = mds_embedding(1.0 - rho)
    if X.shape[1] == 0:
        raise AnalysisError("profiles are indistinguishable")
    return kmeans(X, k, seed=seed, n_init=n_init)


def group_ton_tmax(features, k: int = 6, seed: int = 0, n_init: int = 10) -> np.ndarray:
    """K-means on (Ton, Tmax) standardized to zero mean and unit variance per column."""
    X = np.asarray(features, dtype=float).reshape(-1, 2)
    sd = X.std(axis=0)
    X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return kmeans(X, k, seed=seed, n_init=n_init)


def adjusted_rand_index(a, b) -> float:
    a, b = canonical_labels(a), canonical_labels(b)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    def pairs(x):
        return float(np.sum(x * (x - 1) / 2.0))
    n = a.size
    s_ij, s_a, s_b = pairs(table), pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    expected = s_a * s_b / (n * (n - 1) / 2.0)
    top = (s_a + s_b) / 2.0
    if top == expected:
        return 1.0
    return (s_ij - expected) / (top - expected)


@dataclass(frozen=True)
class GroupSimilarity:
    group: str
    size: int
    mean: float
    stdv: float

    @property
    def applicable(self) -> bool:
        return self.size >= 2


def within_group_similarity(labels, profiles) -> list:
    """Mean and standard deviation of pairwise rank correlations per group, then over all genes.

    Singleton groups get ``nan`` entries (not applicable).
    """
    labels = np.asarray(labels)
    rho = rank_correlation_matrix(profiles)
    if labels.size != rho.shape[0]:
        raise ValueError("one label per profile is required")

    def summarize(name, idx):
        if idx.size < 2:
            return GroupSimilarity(name, int(idx.size), math.nan, math.nan)
        iu = np.triu_indices(idx.size, 1)
        vals = rho[np.ix_(idx, idx)][iu]
        return GroupSimilarity(name, int(idx.size), float(vals.mean()), float(vals.std()))

    rows = [summarize(str(lab), np.flatnonzero(labels == lab)) for lab in sorted(set(labels.tolist()))]
    rows.append(summarize("All", np.arange(labels.size)))
    return rows


# ---------------------------------------------------------------------------
# Wilcoxon rank sum


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float      # rank sum of the first sample
    z: float
    p: float
    p_exact: float
    n_a: int
    n_b: int
    alternative: str


def rank_sum_distribution(n: int, m: int) -> np.ndarray:
    """Counts of each rank sum of an n-subset of {1..n+m}, indexed from the minimum n(n+1)/2."""
    N = n + m
    small = min(n, m)
    top = small * (2 * N - small + 1) // 2
    dtype = np.int64 if math.comb(N, small) < 2 ** 62 else float
    # ways[j, s]: subsets of size j of the ranks seen so far with sum s
    ways = np.zeros((small + 1, top + 1), dtype=dtype)
    ways[0, 0] = 1
    for r in range(1, N + 1):
        for j in range(min(small, r), 0, -1):
            ways[j, r:] += ways[j - 1, : top + 1 - r]
    lo = small * (small + 1) // 2
    counts = ways[small, lo : top + 1]
    if small != n:
        # distribution of the other sample's rank sum reflects around the total
        counts = counts[::-1]
    return counts


def _exact_p(w, n, m, alternative):
    counts = rank_sum_distribution(n, m)
    lo = n * (n + 1) // 2
    i = int(round(w)) - lo
    total = math.comb(n + m, n)
    hits = int(counts[: i + 1].sum()) if alternative == "less" else int(counts[i:].sum())
    return hits / total


def wilcoxon_rank_sum(a, b, alternative: str = "less") -> WilcoxonResult:
    """One-sided rank-sum test that ``a`` tends to be smaller ("less") or larger ("greater") than ``b``.

    The normal approximation uses the tie-corrected variance and a 0.5
    continuity correction.  For tie-free data with ``min(len(a), len(b)) <= 10``
    the exact permutation p-value is filled in as well (``nan`` otherwise).
    An all-tied pooled sample yields ``nan`` for ``z`` and ``p``.
    """
    if alternative not in ("less", "greater"):
        raise ValueError("alternative must be 'less' or 'greater'")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n, m = a.size, b.size
    if n < 1 or m < 1:
        raise ValueError("both samples need at least one value")
    N = n + m
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    w = float(ranks[:n].sum())
    _, ties = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(ties ** 3 - ties)) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12.0 * (N + 1 - tie_term)
    mean = n * (N + 1) / 2.0
    if var <= 0.0:
        z = p = math.nan
    elif alternative == "less":
        z = (w - mean + 0.5) / math.sqrt(var)
        p = float(ndtr(z))
    else:
        z = (w - mean - 0.5) / math.sqrt(var)
        p = float(ndtr(-z))
    p_exact = math.nan
    if min(n, m) <= EXACT_MAX_SIZE and np.all(ties == 1):
        p_exact = _exact_p(w, n, m, alternative)
    return WilcoxonResult(w, z, p, p_exact, n, m, alternative)


def wilcoxon_signed(a, b) -> WilcoxonResult:
    """Rank-sum test in the direction the data point to: negative z means ``a`` is smaller."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ranks = rankdata(np.concatenate([a, b]))
    direction = "less" if ranks[: a.size].sum() <= a.size * (a.size + b.size + 1) / 2.0 else "greater"
    return wilcoxon_rank_sum(a, b, direction)


@dataclass(frozen=True)
class MotifTest:
    motif: str
    n_with: int
    n_without: int
    z: float
    p: float


def motif_onset_tests(annotations: Sequence[GeneAnnotation], onsets: dict) -> list:
    """Onset times of genes with each motif class against those without.

    ``onsets`` maps gene id to onset time; annotated genes without an onset
    are ignored.  A class held by all or none of the genes is skipped with a
    warning.
    """
    rows = []
    annotated = [a for a in annotations if a.gene_id in onsets]
    for motif in MOTIFS:
        with_ = [onsets[a.gene_id] for a in annotated if getattr(a, motif)]
        without = [onsets[a.gene_id] for a in annotated if not getattr(a, motif)]
        if not with_ or not without:
            warnings.warn(f"motif {MOTIF_LABELS[motif]}: one side is empty; skipped", stacklevel=2)
            continue
        res = wilcoxon_signed(with_, without)
        rows.append(MotifTest(MOTIF_LABELS[motif], len(with_), len(without), res.z, res.p))
    return rows


# ---------------------------------------------------------------------------
# genome position analyses


def _check_positions(positions, G):
    pos = np.asarray(positions, dtype=np.int64)
    if pos.size != G or not np.array_equal(np.sort(pos), np.arange(G)):
        raise AnalysisError("genome positions must be a permutation of 0..G-1")
    return pos


def colocalization_probs(labels, positions, N: int, circular: bool = True) -> tuple:
    """Probability that N random genes, or N consecutive genes, share one cluster label.

    Returns ``(p_random, p_neighbor)``.
    """
    labels = np.asarray(labels)
    G = labels.size
    if not 2 <= N <= G:
        raise ValueError("need 2 <= N <= number of genes")
    pos = _check_positions(positions, G)
    _, sizes = np.unique(labels, return_counts=True)
    p_random = sum(math.comb(int(s), N) for s in sizes) / math.comb(G, N)
    seq = labels[np.argsort(pos)]
    starts = range(G) if circular else range(G - N + 1)
    hits = 0
    for s in starts:
        window = seq[np.arange(s, s + N) % G]
        hits += bool(np.all(window == window[0]))
    return p_random, hits / len(starts)


def genome_distance(positions, circular: bool = True) -> np.ndarray:
    """Number of genes strictly between each pair, shape (G, G); -1 on the diagonal."""
    pos = np.asarray(positions, dtype=np.int64)
    G = pos.size
    gap = np.abs(pos[:, None] - pos[None, :])
    if circular:
        gap = np.minimum(gap, G - gap)
    return gap - 1


def neighbor_rank_tests(profiles, positions, z1: int, z2: int, circular: bool = True) -> WilcoxonResult:
    """Test that rank correlations of nearby pairs (distance <= z1) exceed those of far pairs (> z2)."""
    rho = profiles if isinstance(profiles, np.ndarray) and profiles.ndim == 2 and profiles.shape[0] == profiles.shape[1] \
        else rank_correlation_matrix(profiles)
    G = rho.shape[0]
    pos = _check_positions(positions, G)
    if not (0 <= z1 <= (G - 1) / 2 and 0 <= z2 <= (G - 1) / 2):
        raise ValueError("z1 and z2 must lie in [0, (G - 1) / 2]")
    dist = genome_distance(pos, circular)
    iu = np.triu_indices(G, 1)
    d, r = dist[iu], rho[iu]
    near, far = r[d <= z1], r[d > z2]
    if near.size == 0 or far.size == 0:
        return WilcoxonResult(math.nan, math.nan, math.nan, math.nan, near.size, far.size, "greater")
    return wilcoxon_rank_sum(near, far, "greater")


@dataclass(frozen=True)
class OddsRatioResult:
    odds_ratio: float
    table: tuple          # ((labeled in top, unlabeled in top), (labeled outside, unlabeled outside))
    degenerate: bool


def topk_odds_ratio(values, labels, m: int, gene_ids: Sequence | None = None) -> OddsRatioResult:
    """Odds ratio of carrying the label inside versus outside the top ``m`` genes by value.

    Ties in value are broken by gene id (ascending).  A zero cell gives an
    infinite or zero ratio (``nan`` if both products vanish) with ``degenerate``
    set.
    """
    v = np.asarray(values, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    G = v.size
    if lab.size != G:
        raise ValueError("one label per value is required")
    if not 0 < m < G:
        raise ValueError("need 0 < m < number of genes")
    if lab.all() or not lab.any():
        raise ValueError("need at least one labeled and one unlabeled gene")
    ids = [str(i) for i in (range(G) if gene_ids is None else gene_ids)]
    order = sorted(range(G), key=lambda i: (-v[i], ids[i]))
    top = np.zeros(G, dtype=bool)
    top[order[:m]] = True
    a = int(np.sum(top & lab))
    b = int(np.sum(top & ~lab))
    c = int(np.sum(~top & lab))
    d = int(np.sum(~top & ~lab))
    num, den = a * d, b * c
    degenerate = 0 in (a, b, c, d)
    if den == 0:
        ratio = math.nan if num == 0 else math.inf
    else:
        ratio = num / den
    return OddsRatioResult(ratio, ((a, b), (c, d)), degenerate)
