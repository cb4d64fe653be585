"""Time-course data, data-driven hierarchical priors and the joint posterior density."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import betaln

from .bernstein import basis_matrix, validate_shape

DEFAULT_ORDER = 15
# bounds for phi_3 and phi_4 (the coefficient hyperprior)
COEFF_PHI_BOUNDS = (0.5, 1.5)
SPREAD_FLOOR = 1e-8
VAR_BASE_FLOOR = 1e-8
SIGMA2_FLOOR = 1e-12
PHI_LOWER_FLOOR = 0.05
LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    """The data cannot support the prior construction or the model."""


class DegenerateGeneWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeCourseDataset:
    """Replicated intensities ``Y[g][k][j]`` on shared design points in [0, 1].

    ``values[k]`` is an array of shape ``(n_genes, m_k)``.
    """

    design_points: np.ndarray
    replicate_counts: np.ndarray
    values: tuple
    gene_ids: tuple

    def __post_init__(self):
        x = np.asarray(self.design_points, dtype=float)
        m = np.asarray(self.replicate_counts, dtype=np.int64)
        vals = tuple(np.asarray(v, dtype=float).reshape(len(self.gene_ids), -1) for v in self.values)
        object.__setattr__(self, "design_points", x)
        object.__setattr__(self, "replicate_counts", m)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        if x.ndim != 1 or x.size < 2:
            raise ValueError("need at least two design points")
        if np.any(np.diff(x) <= 0) or x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("design points must increase strictly from 0 to 1")
        if m.shape != x.shape or np.any(m < 1):
            raise ValueError("one positive replicate count per design point is required")
        if len(vals) != x.size:
            raise ValueError("values must hold one block per design point")
        for k, v in enumerate(vals):
            if v.shape[1] != m[k]:
                raise ValueError(f"time point {k}: expected {m[k]} replicates, got {v.shape[1]}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite intensity at time point {k}")
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise ValueError("gene ids must be unique")

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def n_times(self) -> int:
        return self.design_points.size

    def gene_values(self, g: int) -> list:
        return [v[g] for v in self.values]

    def subset(self, genes: Sequence[int]) -> "TimeCourseDataset":
        idx = list(genes)
        return TimeCourseDataset(
            self.design_points,
            self.replicate_counts,
            tuple(v[idx] for v in self.values),
            tuple(self.gene_ids[g] for g in idx),
        )

    def flat(self, g: int):
        """Observations of gene g as flat arrays ``(values, time_index)``."""
        ys = self.gene_values(g)
        return np.concatenate(ys), np.repeat(np.arange(self.n_times), self.replicate_counts)


@dataclass(frozen=True)
class GenePriorSpec:
    gene_id: str
    onset_scale: float       # upper end of the onset prior
    onset_floor_index: int   # first design index after the background stretch
    peak_index: int          # design index of the largest replicate mean
    coeff_scale: float       # coefficients live in [0, coeff_scale]
    mu_bound: float          # background lives in [0, mu_bound]
    xtilde: float            # design point at onset_floor_index


@dataclass(frozen=True)
class VarianceModel:
    """Per-gene plug-in variance ``sigma2 * (F + mu) ** xi``."""

    xi: np.ndarray
    sigma2: np.ndarray
    replicate_var: np.ndarray

    @classmethod
    def empty(cls, n_times: int = 2) -> "VarianceModel":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, n_times)))


@dataclass
class ModelState:
    """One point of the joint parameter space.

    ``coeffs[g]`` holds b_2..b_n of gene g; ``phi`` holds the four
    hyperparameters.
    """

    phi: np.ndarray
    onset: np.ndarray
    coeffs: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        self.phi = np.array(self.phi, dtype=float).reshape(4)
        self.onset = np.array(self.onset, dtype=float).reshape(-1)
        self.background = np.array(self.background, dtype=float).reshape(-1)
        self.coeffs = np.array(self.coeffs, dtype=float).reshape(self.onset.size, -1)

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] + 1

    @property
    def n_genes(self) -> int:
        return self.onset.size

    def copy(self) -> "ModelState":
        return ModelState(self.phi.copy(), self.onset.copy(), self.coeffs.copy(), self.background.copy())

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (
            np.array_equal(self.phi, other.phi)
            and np.array_equal(self.onset, other.onset)
            and np.array_equal(self.coeffs, other.coeffs)
            and np.array_equal(self.background, other.background)
        )


def replicate_means(dataset: TimeCourseDataset, g: int) -> np.ndarray:
    return np.array([v[g].mean() for v in dataset.values])


def beta_moment_match(mean: float, variance: float) -> tuple[float, float]:
    """Beta(alpha, beta) parameters with the given mean and variance."""
    if not 0.0 < mean < 1.0:
        raise ValueError("mean must lie strictly inside (0, 1)")
    if not 0.0 < variance < mean * (1.0 - mean):
        raise ValueError("variance must lie in (0, mean * (1 - mean))")
    k = mean * (1.0 - mean) / variance - 1.0
    return mean * k, (1.0 - mean) * k


def _gene_spec(dataset: TimeCourseDataset, g: int) -> GenePriorSpec | None:
    ybar = replicate_means(dataset, g)
    y0 = ybar[0]
    if not y0 > 0.0:
        return None
    peak = int(np.argmax(ybar))  # first index wins ties
    low = [k for k in range(peak + 1) if ybar[k] <= 2.0 * y0]
    k_floor = max(low) + 1
    if k_floor > peak:
        return None
    total = k_floor + peak
    xhat_index = total // 2 if total % 2 == 0 else (total + 1) // 2
    x = dataset.design_points
    return GenePriorSpec(
        gene_id=dataset.gene_ids[g],
        onset_scale=float(x[xhat_index]),
        onset_floor_index=k_floor,
        peak_index=peak,
        coeff_scale=float(2.0 * dataset.values[peak][g].max()),
        mu_bound=float(2.0 * y0),
        xtilde=float(x[k_floor]),
    )


def onset_hyperbounds(specs: Sequence[GenePriorSpec]) -> tuple[float, float, np.ndarray]:
    """(alpha1, alpha2, phi bounds) from the spread of xtilde / onset_scale over genes."""
    if not specs:
        raise ModelError("no usable genes to build the onset hyperprior")
    r = np.array([s.xtilde / s.onset_scale for s in specs])
    mean = float(r.mean())
    spread = float(r.max() - r.min())
    if mean >= 1.0:
        raise ModelError("every gene peaks right after its background stretch; onset prior undefined")
    var = (spread / 4.0) ** 2 if spread >= SPREAD_FLOOR else mean * (1.0 - mean) / 100.0
    try:
        a1, a2 = beta_moment_match(mean, var)
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    bounds = np.array(
        [
            [max(a1 - 0.5, PHI_LOWER_FLOOR), a1 + 0.5],
            [max(a2 - 0.5, PHI_LOWER_FLOOR), a2 + 0.5],
            COEFF_PHI_BOUNDS,
            COEFF_PHI_BOUNDS,
        ]
    )
    return a1, a2, bounds


def build_prior_specs(dataset: TimeCourseDataset):
    """Crude per-gene prior scales and the shared hyperprior box.

    Returns ``(specs, alpha1, alpha2, phi_bounds)``.  Genes whose mean never
    exceeds twice the first-time-point mean (or whose first mean is not
    positive) are left out of ``specs`` with a :class:`DegenerateGeneWarning`.
    """
    specs = []
    for g in range(dataset.n_genes):
        spec = _gene_spec(dataset, g)
        if spec is None:
            warnings.warn(
                f"gene {dataset.gene_ids[g]}: no time point exceeds twice the initial mean; excluded",
                DegenerateGeneWarning,
                stacklevel=2,
            )
            continue
        specs.append(spec)
    a1, a2, bounds = onset_hyperbounds(specs)
    return specs, a1, a2, bounds


def select_variance_exponent(dataset: TimeCourseDataset, g: int) -> tuple[int, float]:
    """Choose xi in {0, 1, 2} making ``s_k^2 / ybar_k^xi`` most nearly constant over time."""
    xi, sigma2, _ = _variance_exponent(dataset, g)
    return xi, sigma2


def _variance_exponent(dataset, g):
    if np.any(dataset.replicate_counts < 2):
        raise ValueError("replicate variances need at least two replicates per time point")
    ybar = replicate_means(dataset, g)
    var = np.array([v[g].var(ddof=1) for v in dataset.values])
    base = np.maximum(ybar, VAR_BASE_FLOOR)
    K = ybar.size - 1
    losses = []
    for xi in (0, 1, 2):
        q = var / base ** xi
        losses.append(float(np.sum((q - q.mean()) ** 2) / K))
    xi = int(np.argmin(losses))
    sigma2 = float(np.mean(var / base ** xi))
    return xi, max(sigma2, SIGMA2_FLOOR), var


def fit_variance_model(dataset: TimeCourseDataset) -> VarianceModel:
    xis, s2s, rv = [], [], []
    for g in range(dataset.n_genes):
        xi, s2, var = _variance_exponent(dataset, g)
        xis.append(xi)
        s2s.append(s2)
        rv.append(var)
    return VarianceModel(
        np.array(xis, dtype=np.int64),
        np.array(s2s, dtype=float),
        np.array(rv, dtype=float).reshape(len(xis), dataset.n_times),
    )


@dataclass
class HierarchicalModel:
    """Everything the sampler needs: data, prior scales, hyperprior box and variances.

    With ``use_likelihood=False`` the data terms are dropped and the posterior
    is the prior.
    """

    dataset: TimeCourseDataset
    specs: list
    phi_bounds: np.ndarray
    variance: VarianceModel
    order: int = DEFAULT_ORDER
    use_likelihood: bool = True
    alphas: tuple = field(default=(math.nan, math.nan))

    def __post_init__(self):
        self.phi_bounds = np.asarray(self.phi_bounds, dtype=float).reshape(4, 2)
        if self.order < 3:
            raise ValueError("order must be at least 3")
        if len(self.specs) != self.dataset.n_genes:
            raise ValueError("one prior spec per gene is required")
        if np.any(self.phi_bounds[:, 0] <= 0) or np.any(self.phi_bounds[:, 1] <= self.phi_bounds[:, 0]):
            raise ValueError("hyperparameter bounds must be positive, non-empty intervals")

    @classmethod
    def from_dataset(cls, dataset: TimeCourseDataset, order: int = DEFAULT_ORDER) -> "HierarchicalModel":
        specs, a1, a2, bounds = build_prior_specs(dataset)
        keep = [dataset.gene_ids.index(s.gene_id) for s in specs]
        if len(keep) != dataset.n_genes:
            dataset = dataset.subset(keep)
        return cls(dataset, specs, bounds, fit_variance_model(dataset), order=order, alphas=(a1, a2))

    @classmethod
    def prior_only(cls, specs, phi_bounds, order: int = DEFAULT_ORDER, design_points=(0.0, 1.0)):
        """A model without observations, for prior sampling through the MCMC machinery."""
        x = np.asarray(design_points, dtype=float)
        G = len(specs)
        ds = TimeCourseDataset(
            x,
            np.ones(x.size, dtype=np.int64),
            tuple(np.zeros((G, 1)) for _ in x),
            tuple(s.gene_id for s in specs),
        )
        var = VarianceModel(np.zeros(G, dtype=np.int64), np.ones(G), np.zeros((G, x.size)))
        return cls(ds, list(specs), phi_bounds, var, order=order, use_likelihood=False)

    @property
    def n_genes(self) -> int:
        return self.dataset.n_genes

    @cached_property
    def arrays(self) -> dict:
        """Contiguous arrays consumed by the sampling kernels."""
        ds = self.dataset
        G, K1 = ds.n_genes, ds.n_times
        ybar = np.zeros((G, K1))
        ss = np.zeros((G, K1))
        for k, v in enumerate(ds.values):
            if G:
                ybar[:, k] = v.mean(axis=1)
                ss[:, k] = ((v - ybar[:, k : k + 1]) ** 2).sum(axis=1)
        return {
            "x": ds.design_points.copy(),
            "m": ds.replicate_counts.astype(float),
            "ybar": ybar,
            "ss": ss,
            "xhat": np.array([s.onset_scale for s in self.specs], dtype=float),
            "scale": np.array([s.coeff_scale for s in self.specs], dtype=float),
            "mub": np.array([s.mu_bound for s in self.specs], dtype=float),
            "xi": np.ascontiguousarray(self.variance.xi, dtype=np.int64),
            "sigma2": np.ascontiguousarray(self.variance.sigma2, dtype=float),
            "bounds": self.phi_bounds.copy(),
        }

    def in_support(self, state: ModelState) -> bool:
        return bool(np.isfinite(log_prior(state, self)))


def sample_prior(specs, phi_bounds, rng: np.random.Generator, order: int = DEFAULT_ORDER) -> ModelState:
    """Draw hyperparameters then every gene's onset, coefficients and background."""
    bounds = np.asarray(phi_bounds, dtype=float)
    phi = rng.uniform(bounds[:, 0], bounds[:, 1])
    G = len(specs)
    onset = np.empty(G)
    coeffs = np.empty((G, order - 1))
    mu = np.empty(G)
    for g, spec in enumerate(specs):
        u = rng.beta(phi[0], phi[1])
        while not 0.0 < u < 1.0 or spec.onset_scale * u >= 1.0:
            u = rng.beta(phi[0], phi[1])
        onset[g] = spec.onset_scale * u
        v = rng.beta(phi[2], phi[3], size=order - 1)
        while not (np.all((v > 0.0) & (v < 1.0)) and validate_shape(v, onset[g])):
            v = rng.beta(phi[2], phi[3], size=order - 1)
        coeffs[g] = spec.coeff_scale * v
        mu[g] = rng.uniform(0.0, spec.mu_bound)
    return ModelState(phi, onset, coeffs, mu)


def _log_beta_pdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)
    return np.where((x > 0.0) & (x < 1.0), out, -np.inf)


def design_curves(state: ModelState, x: np.ndarray) -> np.ndarray:
    """``F_g(X_k)`` for every gene, shape (G, K + 1)."""
    G, n = state.n_genes, state.order
    out = np.zeros((G, x.size))
    for g in range(G):
        c = state.onset[g]
        s = np.clip((x - c) / (1.0 - c), 0.0, 1.0)
        B = basis_matrix(n, s)[:, 2:]
        out[g] = np.where(x > c, B @ state.coeffs[g], 0.0)
    return out


def plugin_variance(state: ModelState, model: HierarchicalModel) -> np.ndarray:
    """``sigma2_g (F_g(X_k) + mu_g) ** xi_g`` at the given state, shape (G, K + 1)."""
    f = design_curves(state, model.dataset.design_points) + state.background[:, None]
    base = np.maximum(f, VAR_BASE_FLOOR)
    return model.variance.sigma2[:, None] * base ** model.variance.xi[:, None]


def log_prior(state: ModelState, model: HierarchicalModel) -> float:
    """Log of the hierarchical prior density times the hyperprior density."""
    b = model.phi_bounds
    phi = state.phi
    if np.any(phi < b[:, 0]) or np.any(phi > b[:, 1]):
        return -math.inf
    if state.order != model.order or state.n_genes != model.n_genes:
        return -math.inf
    total = -float(np.sum(np.log(b[:, 1] - b[:, 0])))
    for g, spec in enumerate(model.specs):
        c, a, mu = state.onset[g], state.coeffs[g], state.background[g]
        if not (0.0 <= c <= spec.onset_scale and c < 1.0):
            return -math.inf
        if not (0.0 <= mu <= spec.mu_bound):
            return -math.inf
        if not validate_shape(a, c) or np.any(a > spec.coeff_scale):
            return -math.inf
        total += float(_log_beta_pdf(c / spec.onset_scale, phi[0], phi[1])) - math.log(spec.onset_scale)
        total += float(np.sum(_log_beta_pdf(a / spec.coeff_scale, phi[2], phi[3]))) - a.size * math.log(spec.coeff_scale)
        total -= math.log(spec.mu_bound)
    return total


def log_likelihood(state: ModelState, model: HierarchicalModel, variance_state: ModelState | None = None) -> float:
    """Normal log-likelihood of all observations.

    The variance is the plug-in ``sigma2 (F + mu)^xi`` evaluated at
    ``variance_state`` (default: ``state`` itself).
    """
    if not model.use_likelihood:
        return 0.0
    ds = model.dataset
    f = design_curves(state, ds.design_points) + state.background[:, None]
    v = plugin_variance(state if variance_state is None else variance_state, model)
    total = 0.0
    for k, vals in enumerate(ds.values):
        r = vals - f[:, k : k + 1]
        total += float(np.sum(-0.5 * (LOG_2PI + np.log(v[:, k : k + 1])) - 0.5 * r * r / v[:, k : k + 1]))
    return total


def log_posterior(state: ModelState, model: HierarchicalModel, variance_state: ModelState | None = None) -> float:
    """Unnormalised log posterior density; ``-inf`` outside the prior support."""
    lp = log_prior(state, model)
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(state, model, variance_state)


def sample_prior_batch(specs, phi_bounds, rng: np.random.Generator, n_draws: int, order: int = DEFAULT_ORDER):
    """Many independent joint prior draws at once.

    Returns ``(phi, onset, coeffs, background)`` with shapes ``(N, 4)``,
    ``(N, G)``, ``(N, G, order - 1)`` and ``(N, G)``.  Each row has the same
    distribution as one :func:`sample_prior` call.
    """
    bounds = np.asarray(phi_bounds, dtype=float)
    G = len(specs)
    phi = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n_draws, 4))
    onset = np.empty((n_draws, G))
    coeffs = np.empty((n_draws, G, order - 1))
    mu = np.empty((n_draws, G))
    for g, spec in enumerate(specs):
        u = rng.beta(phi[:, 0], phi[:, 1])
        bad = ~((u > 0.0) & (u < 1.0) & (spec.onset_scale * u < 1.0))
        while bad.any():
            u[bad] = rng.beta(phi[bad, 0], phi[bad, 1])
            bad = ~((u > 0.0) & (u < 1.0) & (spec.onset_scale * u < 1.0))
        onset[:, g] = spec.onset_scale * u
        v = rng.beta(phi[:, 2:3], phi[:, 3:4], size=(n_draws, order - 1))
        bad = ~(np.all((v > 0.0) & (v < 1.0), axis=1))
        while bad.any():
            v[bad] = rng.beta(phi[bad, 2:3], phi[bad, 3:4], size=(int(bad.sum()), order - 1))
            bad = ~(np.all((v > 0.0) & (v < 1.0), axis=1))
        coeffs[:, g] = spec.coeff_scale * v
        mu[:, g] = rng.uniform(0.0, spec.mu_bound, size=n_draws)
    return phi, onset, coeffs, mu
