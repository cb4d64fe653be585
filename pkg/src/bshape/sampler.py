"""Metropolis-within-Gibbs sampling over the hierarchical shape model.

One iteration is a full sweep of five update families in a fixed order:

1. ``(phi1, phi2)`` jointly, proposed uniformly on the hyperprior box;
2. ``(phi3, phi4)`` likewise;
3. every onset ``c_g`` in gene order, from the scaled-beta conditional prior;
4. every coefficient ``a_ig`` in gene-then-index order, from its conditional prior;
5. every background ``mu_g``, from its uniform prior.

Each chain owns a xoshiro256** stream derived from the master seed, so the
draws do not depend on how chains are scheduled over threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .bernstein import CurveBatch, batch_features, binomials
from .model import HierarchicalModel, ModelState, TimeCourseDataset, sample_prior
from .rng import Xoshiro256, seed_state

FAMILIES = ("phi12", "phi34", "onset", "coeff", "background")
ESTIMANDS = ("ton", "tmax", "max", "tslope", "slope", "area")
_FEATURE_COLUMN = {"tmax": 0, "max": 1, "tslope": 2, "slope": 3, "area": 6}


class ChainError(RuntimeError):
    """A chain left the prior support (only raised with support checking on)."""


class DegenerateChainWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    n_chains: int = 5
    order: int = 15
    check_support: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must lie in [0, iterations)")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def _stored_between(start: int, stop: int, burn_in: int, thin: int) -> int:
    """Number of iterations t in (start, stop] with t > burn_in and thin | (t - burn_in)."""
    def upto(t):
        return max(t - burn_in, 0) // thin
    return upto(stop) - upto(start)


@dataclass
class SampleStore:
    """Thinned post-burn-in draws of every chain.

    Arrays are indexed ``[chain, draw, ...]``.  ``final_*`` and
    ``rng_states`` hold the last state of each chain so that sampling can be
    resumed bit-exactly.
    """

    phi: np.ndarray
    onset: np.ndarray
    coeffs: np.ndarray
    background: np.ndarray
    counts: np.ndarray
    gene_ids: tuple
    config: ChainConfig
    iterations_done: int
    final_states: list = field(default_factory=list)
    rng_states: np.ndarray | None = None
    _features: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_chains(self) -> int:
        return self.phi.shape[0]

    @property
    def draws_per_chain(self) -> int:
        return self.phi.shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.draws_per_chain

    @property
    def n_genes(self) -> int:
        return self.onset.shape[2]

    @property
    def order(self) -> int:
        return self.coeffs.shape[3] + 1

    def state(self, chain: int, draw: int) -> ModelState:
        return ModelState(
            self.phi[chain, draw], self.onset[chain, draw], self.coeffs[chain, draw], self.background[chain, draw]
        )

    @property
    def draws(self) -> list:
        """All retained states, chain-major."""
        return [self.state(c, d) for c in range(self.n_chains) for d in range(self.draws_per_chain)]

    def gene_index(self, gene) -> int:
        if isinstance(gene, (int, np.integer)):
            if not 0 <= gene < self.n_genes:
                raise IndexError(f"gene index {gene} out of range")
            return int(gene)
        try:
            return self.gene_ids.index(str(gene))
        except ValueError:
            raise KeyError(f"unknown gene {gene!r}") from None

    def curves(self, gene, chain: int | None = None) -> CurveBatch:
        g = self.gene_index(gene)
        if chain is None:
            return CurveBatch(self.onset[:, :, g].reshape(-1), self.coeffs[:, :, g].reshape(-1, self.order - 1))
        return CurveBatch(self.onset[chain, :, g], self.coeffs[chain, :, g])

    def feature_table(self, gene) -> np.ndarray:
        """Raw feature rows of every draw of one gene, shape (C, D, 8)."""
        g = self.gene_index(gene)
        if g not in self._features:
            C, D = self.n_chains, self.draws_per_chain
            tab = batch_features(
                np.ascontiguousarray(self.onset[:, :, g].reshape(-1)),
                np.ascontiguousarray(self.coeffs[:, :, g].reshape(C * D, -1)),
            )
            self._features[g] = tab.reshape(C, D, -1)
        return self._features[g]

    def estimand(self, gene, name: str) -> np.ndarray:
        """Per-chain draws of one scalar estimand, shape (C, D)."""
        if name == "ton":
            return self.onset[:, :, self.gene_index(gene)]
        if name not in _FEATURE_COLUMN:
            raise ValueError(f"unknown estimand {name!r}; choose from {ESTIMANDS}")
        return self.feature_table(gene)[:, :, _FEATURE_COLUMN[name]]

    def acceptance_rates(self) -> dict:
        acc = self.counts[:, :, 0].sum(axis=0)
        tried = self.counts[:, :, 1].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = acc / tried
        return {f: float(r) for f, r in zip(FAMILIES, rate)}


class _Work:
    """Kernel-side arrays for one state (used by the single-family wrappers)."""

    def __init__(self, state: ModelState, model: HierarchicalModel):
        if state.order != model.order or state.n_genes != model.n_genes:
            raise ValueError("state does not match the model dimensions")
        self.a = model.arrays
        self.lik = bool(model.use_likelihood)
        G, K1, n = model.n_genes, model.dataset.n_times, model.order
        self.binom = binomials(n)
        self.basis = np.zeros((G, K1, n - 1))
        self.fval = np.zeros((G, K1))
        self.var = np.zeros((G, K1))
        self.tmp_basis = np.zeros((K1, n - 1))
        self.tmp_f = np.zeros(K1)
        self.counts = np.zeros((K.N_FAMILIES, 2), dtype=np.int64)
        a = self.a
        K.init_work(state.onset, state.coeffs, state.background, a["x"], a["sigma2"], a["xi"],
                    self.binom, self.basis, self.fval, self.var)


def _rng_state(rng):
    if isinstance(rng, Xoshiro256):
        return rng.state
    raise TypeError("sampler updates need a Xoshiro256 generator")


def update_phi12(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    """Independence update of ``(phi1, phi2)``; returns the new state."""
    s = state.copy()
    a = model.arrays
    with np.errstate(over="ignore"):
        K.update_phi12(s.phi, s.onset, a["xhat"], a["bounds"], _rng_state(rng), np.zeros((K.N_FAMILIES, 2), np.int64))
    return s


def update_phi34(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    s = state.copy()
    a = model.arrays
    with np.errstate(over="ignore"):
        K.update_phi34(s.phi, s.coeffs, a["scale"], a["bounds"], _rng_state(rng), np.zeros((K.N_FAMILIES, 2), np.int64))
    return s


def update_onsets(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    s = state.copy()
    w = _Work(s, model)
    a = w.a
    with np.errstate(over="ignore"):
        K.update_onsets(s.phi, s.onset, s.coeffs, s.background, w.basis, w.fval, w.var, a["x"], a["m"], a["ybar"],
                        a["xhat"], a["sigma2"], a["xi"], w.binom, w.lik, _rng_state(rng), w.counts,
                        w.tmp_basis, w.tmp_f)
    return s


def update_coeffs(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    s = state.copy()
    w = _Work(s, model)
    a = w.a
    with np.errstate(over="ignore"):
        K.update_coeffs(s.phi, s.coeffs, s.background, w.basis, w.fval, w.var, a["m"], a["ybar"], a["scale"],
                        a["sigma2"], a["xi"], w.lik, _rng_state(rng), w.counts)
    return s


def update_backgrounds(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    s = state.copy()
    w = _Work(s, model)
    a = w.a
    with np.errstate(over="ignore"):
        K.update_backgrounds(s.background, w.fval, w.var, a["m"], a["ybar"], a["mub"], a["sigma2"], a["xi"],
                             w.lik, _rng_state(rng), w.counts)
    return s


def sweep(state: ModelState, model: HierarchicalModel, rng: Xoshiro256) -> ModelState:
    """One full iteration (all five families in order)."""
    for update in (update_phi12, update_phi34, update_onsets, update_coeffs, update_backgrounds):
        state = update(state, model, rng)
    return state


# log acceptance ratios as the kernels compute them, for checking against
# the literal density ratio


def log_acceptance_phi12(state, model, p1, p2) -> float:
    a = model.arrays
    return float(K.phi12_log_ratio(state.onset, a["xhat"], state.phi[0], state.phi[1], p1, p2))


def log_acceptance_phi34(state, model, p3, p4) -> float:
    a = model.arrays
    return float(K.phi34_log_ratio(state.coeffs, a["scale"], state.phi[2], state.phi[3], p3, p4))


def log_acceptance_onset(state, model, g: int, c_new: float) -> float:
    w = _Work(state, model)
    a = w.a
    return float(K.onset_log_ratio(g, c_new, state.coeffs, state.background, w.fval, w.var, a["x"], a["m"],
                                   a["ybar"], w.binom, w.lik, w.tmp_basis, w.tmp_f))


def log_acceptance_coeff(state, model, g: int, i: int, a_new: float) -> float:
    """``i`` indexes the stored coefficients, so ``i = 0`` is b_2."""
    trial = state.coeffs[g].copy()
    trial[i] = a_new
    if not trial.max() > 0.0:
        return -math.inf
    w = _Work(state, model)
    a = w.a
    return float(K.coeff_log_ratio(g, i, a_new, state.coeffs, state.background, w.basis, w.fval, w.var,
                                   a["m"], a["ybar"], w.lik))


def log_acceptance_background(state, model, g: int, mu_new: float) -> float:
    w = _Work(state, model)
    a = w.a
    return float(K.background_log_ratio(g, mu_new, state.background, w.fval, w.var, a["m"], a["ybar"], w.lik))


# ---------------------------------------------------------------------------
# multi-chain runs


def _chain_seeds(seed: int, n_chains: int):
    """Per-chain (initial-state generator, kernel RNG state) pairs."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_chains):
        init_ss, stream_ss = child.spawn(2)
        out.append((np.random.default_rng(init_ss), seed_state(stream_ss)))
    return out


def _advance(model, state, rng_state, start, n_iter, burn_in, thin, check):
    a = model.arrays
    n_store = _stored_between(start, start + n_iter, burn_in, thin)
    G, n1 = state.n_genes, state.order - 1
    out_phi = np.zeros((n_store, 4))
    out_onset = np.zeros((n_store, G))
    out_coeffs = np.zeros((n_store, G, n1))
    out_mu = np.zeros((n_store, G))
    counts = np.zeros((K.N_FAMILIES, 2), dtype=np.int64)
    s = state.copy()
    with np.errstate(over="ignore"):
        d = K.run_chain(start, n_iter, burn_in, thin, s.phi, s.onset, s.coeffs, s.background, a["x"], a["m"],
                        a["ybar"], a["xhat"], a["scale"], a["mub"], a["sigma2"], a["xi"], a["bounds"],
                        bool(model.use_likelihood), rng_state, counts, bool(check),
                        out_phi, out_onset, out_coeffs, out_mu)
    if d < 0:
        raise ChainError("a sweep produced a state outside the prior support")
    return s, counts, (out_phi, out_onset, out_coeffs, out_mu)


def _collect(results, gene_ids, config, iterations_done, rng_states):
    return SampleStore(
        phi=np.stack([r[2][0] for r in results]),
        onset=np.stack([r[2][1] for r in results]),
        coeffs=np.stack([r[2][2] for r in results]),
        background=np.stack([r[2][3] for r in results]),
        counts=np.stack([r[1] for r in results]),
        gene_ids=tuple(gene_ids),
        config=config,
        iterations_done=iterations_done,
        final_states=[r[0] for r in results],
        rng_states=np.stack(rng_states),
    )


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda it: fn(*it), items))


def initial_states(config: ChainConfig, model: HierarchicalModel) -> list:
    """The sample_prior starting point of every chain."""
    return [sample_prior(model.specs, model.phi_bounds, init_rng, model.order)
            for init_rng, _ in _chain_seeds(config.seed, config.n_chains)]


def run_chains(config: ChainConfig, model: HierarchicalModel, dataset: TimeCourseDataset | None = None,
               workers: int | None = None) -> SampleStore:
    """Run ``config.n_chains`` independent chains from prior draws.

    Parameters
    ----------
    config : ChainConfig
    model : HierarchicalModel
    dataset : TimeCourseDataset, optional
        Must be the model's dataset if given; accepted for symmetry with the CLI.
    workers : int, optional
        Threads used to run chains concurrently.  Results do not depend on it.
    """
    if dataset is not None and dataset is not model.dataset and dataset.gene_ids != model.dataset.gene_ids:
        raise ValueError("dataset does not match the model")
    if config.order != model.order:
        raise ValueError(f"config order {config.order} differs from model order {model.order}")
    seeds = _chain_seeds(config.seed, config.n_chains)
    items = []
    rng_states = []
    for init_rng, stream in seeds:
        x0 = sample_prior(model.specs, model.phi_bounds, init_rng, model.order)
        rng_states.append(stream)
        items.append((model, x0, stream, 0, config.iterations, config.burn_in, config.thin, config.check_support))
    results = _map(_advance, items, workers)
    return _collect(results, model.dataset.gene_ids, config, config.iterations, rng_states)


def extend_chains(store: SampleStore, model: HierarchicalModel, extra_iterations: int,
                  workers: int | None = None) -> SampleStore:
    """Continue every chain for ``extra_iterations`` sweeps from its saved state.

    Running ``iterations = a`` then extending by ``b`` gives the same draws as
    a single run with ``iterations = a + b`` (same burn-in and thinning).
    """
    if not store.final_states or store.rng_states is None:
        raise ValueError("store carries no resumable chain state")
    cfg = store.config
    new_cfg = ChainConfig(cfg.iterations + extra_iterations, cfg.burn_in, cfg.thin, cfg.seed, cfg.n_chains,
                          cfg.order, cfg.check_support)
    rng_states = [s.copy() for s in store.rng_states]
    items = [(model, x, r, store.iterations_done, extra_iterations, cfg.burn_in, cfg.thin, cfg.check_support)
             for x, r in zip(store.final_states, rng_states)]
    results = _map(_advance, items, workers)
    ext = _collect(results, store.gene_ids, new_cfg, store.iterations_done + extra_iterations, rng_states)
    ext.phi = np.concatenate([store.phi, ext.phi], axis=1)
    ext.onset = np.concatenate([store.onset, ext.onset], axis=1)
    ext.coeffs = np.concatenate([store.coeffs, ext.coeffs], axis=1)
    ext.background = np.concatenate([store.background, ext.background], axis=1)
    ext.counts = store.counts + ext.counts
    return ext


# ---------------------------------------------------------------------------
# convergence


def gelman_rubin(chains, extractor: Callable | None = None) -> float:
    """Classic potential scale reduction factor of one scalar estimand.

    Parameters
    ----------
    chains : array_like of shape (n_chains, n_draws), or a sequence of objects
        Per-chain draws, or per-chain objects mapped to draws by ``extractor``.
    extractor : callable, optional

    Returns
    -------
    float
        ``sqrt(((n - 1) / n * W + B / n) / W)``; ``inf`` with a warning when the
        within-chain variance is zero.
    """
    if extractor is not None:
        chains = [np.asarray(extractor(c), dtype=float) for c in chains]
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected one row of draws per chain")
    m, n = x.shape
    if m < 2 or n < 10:
        raise ValueError("need at least 2 chains with 10 draws each")
    means = x.mean(axis=1)
    W = float(x.var(axis=1, ddof=1).mean())
    B = n * float(means.var(ddof=1))
    if not W > 0.0:
        warnings.warn("zero within-chain variance; chains are degenerate", DegenerateChainWarning, stacklevel=2)
        return math.inf
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def diagnose(store: SampleStore, genes: Sequence | None = None, estimands: Sequence[str] = ESTIMANDS) -> dict:
    """``{gene_id: {estimand: R-hat}}`` for the requested genes."""
    genes = range(store.n_genes) if genes is None else genes
    out = {}
    for gene in genes:
        g = store.gene_index(gene)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateChainWarning)
            out[store.gene_ids[g]] = {e: gelman_rubin(store.estimand(g, e)) for e in estimands}
    return out
