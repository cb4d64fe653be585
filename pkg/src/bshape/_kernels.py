"""Metropolis-within-Gibbs sweep kernels.

All state lives in flat arrays that the kernels update in place:

    phi (4,), onset (G,), coeffs (G, n-1), mu (G,)
    basis (G, K1, n-1)  basis functions at the design points for the current onsets
    fval (G, K1)        F_g(X_k) for the current state
    var (G, K1)         plug-in variance at the current state

Every proposal is scored with the variance of the current state, so the
normalising constants and the within-replicate scatter cancel and only
``-0.5 * sum_k m_k (ybar_k - F_k - mu)^2 / var_k`` differs between the two
sides of an acceptance ratio.  Prior factors that the independence proposals
reproduce cancel analytically as well.
"""

import math

import numpy as np

from ._jit import njit
from .bernstein import binomials
from .rng import next_beta, next_double, next_open_double

PHI12, PHI34, ONSET, COEFF, BACKGROUND = 0, 1, 2, 3, 4
N_FAMILIES = 5
LOG_TINY = math.log(1e-300)
VAR_BASE_FLOOR = 1e-8


@njit
def log_beta_pdf(x, a, b):
    if x <= 0.0 or x >= 1.0:
        return -np.inf
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


@njit
def fill_basis(x, c, binom, out):
    n = out.shape[1] + 1
    w = 1.0 - c
    sp = np.empty(n + 1)
    qp = np.empty(n + 1)
    for k in range(x.shape[0]):
        if x[k] <= c:
            for i in range(n - 1):
                out[k, i] = 0.0
            continue
        s = (x[k] - c) / w
        if s > 1.0:
            s = 1.0
        q = 1.0 - s
        sp[0] = 1.0
        qp[0] = 1.0
        for i in range(1, n + 1):
            sp[i] = sp[i - 1] * s
            qp[i] = qp[i - 1] * q
        for i in range(2, n + 1):
            out[k, i - 2] = binom[i] * sp[i] * qp[n - i]


@njit
def curve_values(basis_g, coeffs_g, out):
    for k in range(basis_g.shape[0]):
        acc = 0.0
        for i in range(basis_g.shape[1]):
            acc += basis_g[k, i] * coeffs_g[i]
        out[k] = acc


@njit
def gene_variance(fval_g, mu_g, sigma2_g, xi_g, out):
    for k in range(fval_g.shape[0]):
        if xi_g == 0:
            out[k] = sigma2_g
        else:
            base = fval_g[k] + mu_g
            if base < VAR_BASE_FLOOR:
                base = VAR_BASE_FLOOR
            out[k] = sigma2_g * base if xi_g == 1 else sigma2_g * base * base


@njit
def quad(m, ybar_g, fval_g, mu_g, var_g):
    acc = 0.0
    for k in range(fval_g.shape[0]):
        r = ybar_g[k] - fval_g[k] - mu_g
        acc += m[k] * r * r / var_g[k]
    return -0.5 * acc


@njit
def accept(log_ratio, rng):
    u = next_open_double(rng)
    return math.log(u) < log_ratio


# ---------------------------------------------------------------------------
# log acceptance ratios (cancelled forms)


@njit
def phi12_log_ratio(onset, xhat, p1_old, p2_old, p1_new, p2_new):
    total = 0.0
    for g in range(onset.shape[0]):
        u = onset[g] / xhat[g]
        total += log_beta_pdf(u, p1_new, p2_new) - log_beta_pdf(u, p1_old, p2_old)
    return total


@njit
def phi34_log_ratio(coeffs, scale, p3_old, p4_old, p3_new, p4_new):
    total = 0.0
    for g in range(coeffs.shape[0]):
        for i in range(coeffs.shape[1]):
            v = coeffs[g, i] / scale[g]
            total += log_beta_pdf(v, p3_new, p4_new) - log_beta_pdf(v, p3_old, p4_old)
    return total


@njit
def onset_log_ratio(g, c_new, coeffs, mu, fval, var, x, m, ybar, binom, use_lik, tmp_basis, tmp_f):
    """Likelihood ratio for a new onset; fills ``tmp_basis``/``tmp_f`` for reuse on acceptance."""
    fill_basis(x, c_new, binom, tmp_basis)
    curve_values(tmp_basis, coeffs[g], tmp_f)
    if not use_lik:
        return 0.0
    return quad(m, ybar[g], tmp_f, mu[g], var[g]) - quad(m, ybar[g], fval[g], mu[g], var[g])


@njit
def coeff_log_ratio(g, i, a_new, coeffs, mu, basis, fval, var, m, ybar, use_lik):
    if not use_lik:
        return 0.0
    delta = a_new - coeffs[g, i]
    acc = 0.0
    for k in range(fval.shape[1]):
        r_old = ybar[g, k] - fval[g, k] - mu[g]
        r_new = r_old - delta * basis[g, k, i]
        acc += m[k] * (r_new * r_new - r_old * r_old) / var[g, k]
    return -0.5 * acc


@njit
def background_log_ratio(g, mu_new, mu, fval, var, m, ybar, use_lik):
    if not use_lik:
        return 0.0
    return quad(m, ybar[g], fval[g], mu_new, var[g]) - quad(m, ybar[g], fval[g], mu[g], var[g])


# ---------------------------------------------------------------------------
# update families


@njit
def update_phi12(phi, onset, xhat, bounds, rng, counts):
    p1 = bounds[0, 0] + (bounds[0, 1] - bounds[0, 0]) * next_double(rng)
    p2 = bounds[1, 0] + (bounds[1, 1] - bounds[1, 0]) * next_double(rng)
    lr = phi12_log_ratio(onset, xhat, phi[0], phi[1], p1, p2)
    counts[PHI12, 1] += 1
    if accept(lr, rng):
        phi[0] = p1
        phi[1] = p2
        counts[PHI12, 0] += 1


@njit
def update_phi34(phi, coeffs, scale, bounds, rng, counts):
    p3 = bounds[2, 0] + (bounds[2, 1] - bounds[2, 0]) * next_double(rng)
    p4 = bounds[3, 0] + (bounds[3, 1] - bounds[3, 0]) * next_double(rng)
    lr = phi34_log_ratio(coeffs, scale, phi[2], phi[3], p3, p4)
    counts[PHI34, 1] += 1
    if accept(lr, rng):
        phi[2] = p3
        phi[3] = p4
        counts[PHI34, 0] += 1


@njit
def update_onsets(phi, onset, coeffs, mu, basis, fval, var, x, m, ybar, xhat, sigma2, xi, binom,
                  use_lik, rng, counts, tmp_basis, tmp_f):
    for g in range(onset.shape[0]):
        u = next_beta(rng, phi[0], phi[1])
        c_new = xhat[g] * u
        ok = 0.0 < u < 1.0 and c_new < 1.0 and log_beta_pdf(u, phi[0], phi[1]) >= LOG_TINY
        lr = -np.inf
        if ok:
            lr = onset_log_ratio(g, c_new, coeffs, mu, fval, var, x, m, ybar, binom, use_lik, tmp_basis, tmp_f)
        counts[ONSET, 1] += 1
        if accept(lr, rng):
            onset[g] = c_new
            basis[g, :, :] = tmp_basis
            fval[g, :] = tmp_f
            gene_variance(fval[g], mu[g], sigma2[g], xi[g], var[g])
            counts[ONSET, 0] += 1


@njit
def update_coeffs(phi, coeffs, mu, basis, fval, var, m, ybar, scale, sigma2, xi, use_lik, rng, counts):
    for g in range(coeffs.shape[0]):
        for i in range(coeffs.shape[1]):
            v = next_beta(rng, phi[2], phi[3])
            # v > 0 keeps the coefficient vector admissible (its maximum stays positive)
            ok = 0.0 < v < 1.0 and log_beta_pdf(v, phi[2], phi[3]) >= LOG_TINY
            a_new = scale[g] * v
            lr = -np.inf
            if ok:
                lr = coeff_log_ratio(g, i, a_new, coeffs, mu, basis, fval, var, m, ybar, use_lik)
            counts[COEFF, 1] += 1
            if accept(lr, rng):
                coeffs[g, i] = a_new
                curve_values(basis[g], coeffs[g], fval[g])
                gene_variance(fval[g], mu[g], sigma2[g], xi[g], var[g])
                counts[COEFF, 0] += 1


@njit
def update_backgrounds(mu, fval, var, m, ybar, mub, sigma2, xi, use_lik, rng, counts):
    for g in range(mu.shape[0]):
        mu_new = mub[g] * next_double(rng)
        lr = background_log_ratio(g, mu_new, mu, fval, var, m, ybar, use_lik)
        counts[BACKGROUND, 1] += 1
        if accept(lr, rng):
            mu[g] = mu_new
            gene_variance(fval[g], mu[g], sigma2[g], xi[g], var[g])
            counts[BACKGROUND, 0] += 1


@njit
def init_work(onset, coeffs, mu, x, sigma2, xi, binom, basis, fval, var):
    for g in range(onset.shape[0]):
        fill_basis(x, onset[g], binom, basis[g])
        curve_values(basis[g], coeffs[g], fval[g])
        gene_variance(fval[g], mu[g], sigma2[g], xi[g], var[g])


@njit
def state_ok(phi, onset, coeffs, mu, xhat, scale, mub, bounds):
    for j in range(4):
        if phi[j] < bounds[j, 0] or phi[j] > bounds[j, 1]:
            return False
    for g in range(onset.shape[0]):
        if onset[g] < 0.0 or onset[g] > xhat[g] or onset[g] >= 1.0:
            return False
        if mu[g] < 0.0 or mu[g] > mub[g]:
            return False
        top = 0.0
        for i in range(coeffs.shape[1]):
            if coeffs[g, i] < 0.0 or coeffs[g, i] > scale[g]:
                return False
            top = max(top, coeffs[g, i])
        if top <= 0.0:
            return False
    return True


@njit
def sweep(phi, onset, coeffs, mu, basis, fval, var, x, m, ybar, xhat, scale, mub, sigma2, xi, bounds,
          binom, use_lik, rng, counts, tmp_basis, tmp_f):
    update_phi12(phi, onset, xhat, bounds, rng, counts)
    update_phi34(phi, coeffs, scale, bounds, rng, counts)
    update_onsets(phi, onset, coeffs, mu, basis, fval, var, x, m, ybar, xhat, sigma2, xi, binom,
                  use_lik, rng, counts, tmp_basis, tmp_f)
    update_coeffs(phi, coeffs, mu, basis, fval, var, m, ybar, scale, sigma2, xi, use_lik, rng, counts)
    update_backgrounds(mu, fval, var, m, ybar, mub, sigma2, xi, use_lik, rng, counts)


@njit
def run_chain(start, n_iter, burn_in, thin, phi, onset, coeffs, mu, x, m, ybar, xhat, scale, mub, sigma2,
              xi, bounds, use_lik, rng, counts, check, out_phi, out_onset, out_coeffs, out_mu):
    """Advance one chain by ``n_iter`` sweeps, storing thinned post-burn-in states.

    Iterations are numbered ``start + 1 .. start + n_iter``; iteration ``t``
    is stored when ``t > burn_in`` and ``(t - burn_in) % thin == 0``.
    Returns the number of stored draws, or -1 if a support check failed.
    """
    G, K1 = onset.shape[0], x.shape[0]
    n = coeffs.shape[1] + 1
    binom = binomials(n)
    basis = np.zeros((G, K1, n - 1))
    fval = np.zeros((G, K1))
    var = np.zeros((G, K1))
    tmp_basis = np.zeros((K1, n - 1))
    tmp_f = np.zeros(K1)
    init_work(onset, coeffs, mu, x, sigma2, xi, binom, basis, fval, var)
    d = 0
    for t in range(start + 1, start + n_iter + 1):
        sweep(phi, onset, coeffs, mu, basis, fval, var, x, m, ybar, xhat, scale, mub, sigma2, xi, bounds,
              binom, use_lik, rng, counts, tmp_basis, tmp_f)
        if check and not state_ok(phi, onset, coeffs, mu, xhat, scale, mub, bounds):
            return -1
        if t > burn_in and (t - burn_in) % thin == 0 and d < out_phi.shape[0]:
            out_phi[d] = phi
            out_onset[d] = onset
            out_coeffs[d] = coeffs
            out_mu[d] = mu
            d += 1
    return d


@njit
def batch_log_posterior_terms(phis, onsets, coeffs, mus, x, m, ybar, ss, xhat, scale, mub, sigma2, xi,
                              bounds, use_lik):
    """Log posterior of many states (variance plugged in at each state itself)."""
    D = phis.shape[0]
    G, K1 = onsets.shape[1], x.shape[0]
    n = coeffs.shape[2] + 1
    binom = binomials(n)
    basis = np.zeros((K1, n - 1))
    f = np.zeros(K1)
    v = np.zeros(K1)
    out = np.empty(D)
    logpsi = 0.0
    for j in range(4):
        logpsi -= math.log(bounds[j, 1] - bounds[j, 0])
    for d in range(D):
        total = logpsi
        phi = phis[d]
        for g in range(G):
            c = onsets[d, g]
            total += log_beta_pdf(c / xhat[g], phi[0], phi[1]) - math.log(xhat[g])
            for i in range(n - 1):
                total += log_beta_pdf(coeffs[d, g, i] / scale[g], phi[2], phi[3]) - math.log(scale[g])
            total -= math.log(mub[g])
            if use_lik:
                fill_basis(x, c, binom, basis)
                curve_values(basis, coeffs[d, g], f)
                gene_variance(f, mus[d, g], sigma2[g], xi[g], v)
                for k in range(K1):
                    r = ybar[g, k] - f[k] - mus[d, g]
                    total += -0.5 * m[k] * (math.log(2.0 * math.pi * v[k])) - 0.5 * (ss[g, k] + m[k] * r * r) / v[k]
        out[d] = total
    return out
