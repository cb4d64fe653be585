"""Posterior summaries, shape probabilities, Bayes factors and predictive checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import _kernels as K
from .bernstein import FEATURE_NAMES, BernsteinCurve, CurveBatch, increasing_before_max, is_unimodal_on
from .model import DEFAULT_ORDER, HierarchicalModel, ModelState, design_curves, plugin_variance, sample_prior_batch
from .sampler import SampleStore

# column of each reported feature in the raw feature table (ton comes from the onsets)
_COLUMNS = {"tmax": 0, "max_val": 1, "tslope": 2, "slope": 3, "tend": 4, "l1_norm": 5}


@dataclass(frozen=True)
class FeaturePosterior:
    """Sample mean, standard deviation and sample support (min, max) of one feature."""

    name: str
    sample_mean: float
    sample_stdv: float
    support: tuple
    draws: np.ndarray

    @classmethod
    def from_draws(cls, name: str, draws) -> "FeaturePosterior":
        x = np.asarray(draws, dtype=float)
        if x.size == 0:
            raise ValueError("no draws")
        sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
        return cls(name, float(x.mean()), sd, (float(x.min()), float(x.max())), x)


@dataclass(frozen=True)
class ShapeTestResult:
    posterior_prob: float
    prior_prob: float
    ratio: float
    bayes_factor: float
    prior_se: float = math.nan


def feature_posteriors(store: SampleStore, gene) -> dict:
    """Posterior summaries of the seven curve features of one gene over all retained draws."""
    if store.n_draws == 0:
        raise ValueError("empty sample store")
    g = store.gene_index(gene)
    tab = store.feature_table(g).reshape(store.n_draws, -1)
    out = {}
    for name in FEATURE_NAMES:
        vals = store.onset[:, :, g].reshape(-1) if name == "ton" else tab[:, _COLUMNS[name]]
        out[name] = FeaturePosterior.from_draws(name, vals)
    return out


def batch_features_summary(batch: CurveBatch) -> dict:
    """Feature summaries for an arbitrary stack of curves (e.g. prior draws)."""
    feats = batch.features()
    return {name: FeaturePosterior.from_draws(name, feats[name]) for name in FEATURE_NAMES}


def draw_log_posteriors(store: SampleStore, model: HierarchicalModel) -> np.ndarray:
    """Log posterior of every retained draw, chain-major, plug-in variance at the draw itself."""
    a = model.arrays
    C, D = store.n_chains, store.draws_per_chain
    G = store.n_genes
    return K.batch_log_posterior_terms(
        np.ascontiguousarray(store.phi.reshape(C * D, 4)),
        np.ascontiguousarray(store.onset.reshape(C * D, G)),
        np.ascontiguousarray(store.coeffs.reshape(C * D, G, -1)),
        np.ascontiguousarray(store.background.reshape(C * D, G)),
        a["x"], a["m"], a["ybar"], a["ss"], a["xhat"], a["scale"], a["mub"], a["sigma2"], a["xi"],
        a["bounds"], bool(model.use_likelihood),
    )


def posterior_mode(store: SampleStore, model: HierarchicalModel, dataset=None) -> ModelState:
    """The retained draw of highest log posterior (first occurrence on ties)."""
    if store.n_draws == 0:
        raise ValueError("empty sample store")
    lp = draw_log_posteriors(store, model)
    j = int(np.argmax(lp))
    c, d = divmod(j, store.draws_per_chain)
    return store.state(c, d)


# ---------------------------------------------------------------------------
# shape predicates


class UnimodalOn:
    """The curve is unimodal on [0, tau]."""

    def __init__(self, tau: float = 1.0):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        self.tau = float(tau)

    def __call__(self, curve: BernsteinCurve) -> bool:
        return is_unimodal_on(curve, self.tau)

    def batch(self, curves: CurveBatch) -> np.ndarray:
        feats = curves.features()
        return (self.tau <= feats["ton"]) | (self.tau <= feats["tend"])

    def __repr__(self):
        return f"UnimodalOn({self.tau:g})"


class IncreasingBeforeMax:
    """The curve never decreases between its onset and its global maximum."""

    def __call__(self, curve: BernsteinCurve) -> bool:
        return increasing_before_max(curve)

    def batch(self, curves: CurveBatch) -> np.ndarray:
        return curves.features()["increasing_before_max"]

    def __repr__(self):
        return "IncreasingBeforeMax()"


def _satisfied(draws, predicate: Callable) -> np.ndarray:
    if isinstance(draws, CurveBatch) and hasattr(predicate, "batch"):
        return np.asarray(predicate.batch(draws), dtype=bool)
    return np.array([bool(predicate(c)) for c in draws], dtype=bool)


def shape_probability(draws: Iterable, predicate: Callable) -> float:
    """Fraction of curves satisfying ``predicate``."""
    ok = _satisfied(draws, predicate)
    if ok.size == 0:
        raise ValueError("no draws")
    return float(ok.mean())


def bayes_factor(po: float, pr: float) -> float:
    """Posterior odds over prior odds; ``inf`` when ``po == 1``."""
    if not 0.0 < pr < 1.0:
        raise ValueError("prior probability must lie strictly inside (0, 1)")
    if not 0.0 <= po <= 1.0:
        raise ValueError("posterior probability must lie in [0, 1]")
    if po == 1.0:
        return math.inf
    return (po / (1.0 - po)) / (pr / (1.0 - pr))


def prior_shape_probability(specs, phi_bounds, predicate: Callable, n_draws: int, rng: np.random.Generator,
                            order: int = DEFAULT_ORDER):
    """Monte Carlo prior probability of a shape predicate, per gene.

    Returns
    -------
    p, se : ndarray of shape (n_genes,)
        Estimates and their binomial standard errors.
    """
    if n_draws < 1000:
        raise ValueError("use at least 1000 prior draws")
    _, onset, coeffs, _ = sample_prior_batch(specs, phi_bounds, rng, n_draws, order)
    p = np.empty(len(specs))
    for g in range(len(specs)):
        p[g] = shape_probability(CurveBatch(onset[:, g], coeffs[:, g]), predicate)
    return p, np.sqrt(p * (1.0 - p) / n_draws)


def prior_curves(specs, phi_bounds, rng: np.random.Generator, n_draws: int, order: int = DEFAULT_ORDER) -> list:
    """One :class:`CurveBatch` of prior draws per gene."""
    _, onset, coeffs, _ = sample_prior_batch(specs, phi_bounds, rng, n_draws, order)
    return [CurveBatch(onset[:, g], coeffs[:, g]) for g in range(len(specs))]


def shape_test(store: SampleStore, gene, predicate: Callable, prior_prob: float, prior_se: float = math.nan):
    po = shape_probability(store.curves(gene), predicate)
    return ShapeTestResult(po, prior_prob, po / prior_prob, bayes_factor(po, prior_prob), prior_se)


# ---------------------------------------------------------------------------
# posterior predictive checking


def standardized_rss(y: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Per-gene sum of squared standardized residuals; arrays have shape (G, n_obs)."""
    return np.sum((y - mean) ** 2 / var, axis=1)


def posterior_predictive_check(store: SampleStore, model: HierarchicalModel, dataset=None,
                               discrepancy: Callable = standardized_rss, rng: np.random.Generator | None = None,
                               n_draws: int | None = None) -> np.ndarray:
    """Per-gene posterior predictive p-values.

    For each used draw, replicate data are simulated from the normal model at
    the drawn parameters and ``T(y_rep) >= T(y)`` is counted (ties count).

    Parameters
    ----------
    discrepancy : callable
        ``T(y, mean, var) -> (G,)`` on flat per-gene observation arrays.
    n_draws : int, optional
        Use this many evenly spaced draws instead of all of them.
    """
    if store.n_draws == 0:
        raise ValueError("empty sample store")
    rng = np.random.default_rng(0) if rng is None else rng
    ds = model.dataset if dataset is None else dataset
    x = ds.design_points
    idx = np.repeat(np.arange(ds.n_times), ds.replicate_counts)
    y = np.concatenate(ds.values, axis=1)
    picks = np.arange(store.n_draws)
    if n_draws is not None and n_draws < store.n_draws:
        picks = np.linspace(0, store.n_draws - 1, n_draws).round().astype(int)
    hits = np.zeros(ds.n_genes)
    for j in picks:
        c, d = divmod(int(j), store.draws_per_chain)
        state = store.state(c, d)
        mean = (design_curves(state, x) + state.background[:, None])[:, idx]
        var = plugin_variance(state, model)[:, idx]
        y_rep = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        hits += np.asarray(discrepancy(y_rep, mean, var)) >= np.asarray(discrepancy(y, mean, var))
    return hits / picks.size
