"""Bernstein-form profile curves.

A profile curve with onset ``c`` and order ``n`` is

    F(t) = sum_{i=2..n} b_i * phi_{i,n}((t - c) / (1 - c))   for t > c,
    F(t) = 0                                                  for t <= c,

with ``phi_{i,n}(s) = C(n, i) s^i (1 - s)^(n - i)``.  All evaluations below
work in the rescaled coordinate ``s`` and map back to ``t`` at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._jit import njit

ROOT_GRID = 4096
ROOT_XTOL = 1e-12
ZERO_TOL = 1e-10
# Relative tolerance when comparing candidate maxima; earlier candidates win ties.
_TIE_RTOL = 1e-13

FEATURE_NAMES = ("ton", "tmax", "max_val", "tslope", "slope", "l1_norm", "tend")


# ---------------------------------------------------------------------------
# kernels


@njit
def binomials(n):
    out = np.empty(n + 1)
    out[0] = 1.0
    for i in range(1, n // 2 + 1):
        out[i] = out[i - 1] * (n - i + 1) / i
    # symmetric by construction; exact while the values fit in 53 bits
    for i in range(n // 2 + 1, n + 1):
        out[i] = out[n - i]
    return out


@njit
def ipow(x, k):
    """``x ** k`` for integer k >= 0 by repeated multiplication (same bits with or without numba)."""
    r = 1.0
    for _ in range(k):
        r *= x
    return r


@njit
def bern_eval(coef, binom, s):
    """Evaluate sum_i coef[i] phi_{i,n}(s) for scalar s in [0, 1] (Horner in s/(1-s))."""
    n = coef.shape[0] - 1
    if n == 0:
        return coef[0]
    if s <= 0.5:
        u = s / (1.0 - s)
        acc = coef[n] * binom[n]
        for i in range(n - 1, -1, -1):
            acc = acc * u + coef[i] * binom[i]
        return acc * ipow(1.0 - s, n)
    u = (1.0 - s) / s
    acc = coef[0] * binom[0]
    for i in range(1, n + 1):
        acc = acc * u + coef[i] * binom[i]
    return acc * ipow(s, n)


@njit
def full_coeffs(b):
    """Prepend the two implicit zero coefficients b_0 = b_1 = 0."""
    a = np.zeros(b.shape[0] + 2)
    a[2:] = b
    return a


@njit
def diff_coeffs(a):
    """Bernstein coefficients (in s) of the derivative of a degree-n polynomial."""
    n = a.shape[0] - 1
    d = np.empty(n)
    for i in range(n):
        d[i] = n * (a[i + 1] - a[i])
    return d


@njit
def antideriv_coeffs(a):
    """Coefficients of the antiderivative vanishing at s = 0 (degree n + 1)."""
    n = a.shape[0] - 1
    out = np.zeros(n + 2)
    acc = 0.0
    for j in range(1, n + 2):
        acc += a[j - 1]
        out[j] = acc / (n + 1)
    return out


@njit
def _bisect(coef, binom, lo, hi, sign_lo):
    while hi - lo > ROOT_XTOL:
        mid = 0.5 * (lo + hi)
        v = bern_eval(coef, binom, mid)
        if v == 0.0:
            return mid
        if (v > 0.0) == (sign_lo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit
def grid_basis(n):
    """Degree-n Bernstein basis on the root-isolation grid, shape (n + 1, ROOT_GRID + 1)."""
    binom = binomials(n)
    out = np.empty((n + 1, ROOT_GRID + 1))
    for j in range(ROOT_GRID + 1):
        s = j / ROOT_GRID
        for i in range(n + 1):
            out[i, j] = binom[i] * ipow(s, i) * ipow(1.0 - s, n - i)
    return out


@njit
def sign_changes(coef, binom, grid, roots, directions):
    """Isolate sign changes of a Bernstein polynomial on (0, 1).

    ``grid`` is :func:`grid_basis` for the polynomial's degree.  Values within
    ``ZERO_TOL`` of zero carry no sign.  Writes root locations into ``roots``
    and +1 (rising through zero) / -1 (falling) into ``directions``; returns
    the number found.
    """
    count = 0
    prev_sign = 0
    prev_s = 0.0
    cap = roots.shape[0]
    vals = np.zeros(ROOT_GRID + 1)
    for i in range(coef.shape[0]):
        ci = coef[i]
        for j in range(ROOT_GRID + 1):
            vals[j] += grid[i, j] * ci
    for j in range(ROOT_GRID + 1):
        v = vals[j]
        if v > ZERO_TOL:
            sg = 1
        elif v < -ZERO_TOL:
            sg = -1
        else:
            sg = 0
        if sg != 0:
            s = j / ROOT_GRID
            if prev_sign != 0 and sg != prev_sign and count < cap:
                roots[count] = _bisect(coef, binom, prev_s, s, prev_sign)
                directions[count] = sg
                count += 1
            prev_sign = sg
            prev_s = s
    return count


@njit
def curve_features(onset, b):
    n = b.shape[0] + 1
    return features_on_grid(onset, b, grid_basis(n - 1), grid_basis(n - 2))


@njit
def features_on_grid(onset, b, grid1, grid2):
    """Feature vector of one curve.

    Returns ``[tmax, max_val, tslope, slope, tend, l1_norm, area, incr]`` where
    ``area`` is the integral over [0, 1] and ``incr`` is 1.0 when the curve
    never decreases before its global maximum.
    """
    a = full_coeffs(b)
    n = a.shape[0] - 1
    w = 1.0 - onset
    bn = binomials(n)
    bn1 = binomials(n - 1)
    bn2 = binomials(n - 2)
    bn3 = binomials(n + 1)
    d = diff_coeffs(a)
    d2 = diff_coeffs(d)
    roots = np.empty(n + 2)
    dirs = np.empty(n + 2, dtype=np.int64)

    nr = sign_changes(d, bn1, grid1, roots, dirs)
    # global maximum: local maxima of F plus the right endpoint
    # candidates scanned in ascending s, so ties go to the smallest maximiser
    first_peak = 1.0
    have_peak = False
    s_max = -1.0
    max_val = 0.0
    for r in range(nr):
        if dirs[r] == -1:
            v = bern_eval(a, bn, roots[r])
            if not have_peak:
                first_peak = roots[r]
                have_peak = True
            if s_max < 0.0 or v > max_val * (1.0 + _TIE_RTOL):
                s_max = roots[r]
                max_val = v
    v_end = bern_eval(a, bn, 1.0)
    if s_max < 0.0 or v_end > max_val * (1.0 + _TIE_RTOL):
        s_max = 1.0
        max_val = v_end

    tend_s = 1.0
    for r in range(nr):
        if dirs[r] == 1:
            tend_s = roots[r]
            break

    incr = 1.0
    if have_peak and first_peak < s_max - 1e-9:
        incr = 0.0

    # steepest ascent: local maxima of F' plus the right endpoint
    nr2 = sign_changes(d2, bn2, grid2, roots, dirs)
    sl_s = -1.0
    sl_v = 0.0
    for r in range(nr2):
        if dirs[r] == -1:
            v = bern_eval(d, bn1, roots[r])
            if sl_s < 0.0 or v > sl_v * (1.0 + _TIE_RTOL):
                sl_s = roots[r]
                sl_v = v
    v1 = bern_eval(d, bn1, 1.0)
    if sl_s < 0.0 or v1 > sl_v * (1.0 + _TIE_RTOL):
        sl_s = 1.0
        sl_v = v1

    A = antideriv_coeffs(a)
    out = np.empty(8)
    out[0] = onset + w * s_max
    out[1] = max_val
    out[2] = onset + w * sl_s
    out[3] = sl_v / w
    out[4] = onset + w * tend_s
    out[5] = w * bern_eval(A, bn3, tend_s)
    out[6] = w * bern_eval(A, bn3, 1.0)
    out[7] = incr
    return out


@njit
def batch_features(onsets, coeffs):
    m = onsets.shape[0]
    n = coeffs.shape[1] + 1
    grid1 = grid_basis(n - 1)
    grid2 = grid_basis(n - 2)
    out = np.empty((m, 8))
    for j in range(m):
        out[j] = features_on_grid(onsets[j], coeffs[j], grid1, grid2)
    return out


# ---------------------------------------------------------------------------
# public API


def basis_eval(i: int, n: int, t: float) -> float:
    """Bernstein basis polynomial ``C(n, i) t^i (1 - t)^(n - i)``.

    Evaluated in log space so large orders neither overflow nor underflow
    prematurely.
    """
    if not 0 <= i <= n:
        raise ValueError(f"basis index {i} outside [0, {n}]")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    if t == 0.0:
        return 1.0 if i == 0 else 0.0
    if t == 1.0:
        return 1.0 if i == n else 0.0
    logc = math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
    return math.exp(logc + i * math.log(t) + (n - i) * math.log1p(-t))


def basis_matrix(n: int, s) -> np.ndarray:
    """Matrix ``B[j, i] = phi_{i,n}(s_j)`` for an array of s in [0, 1]."""
    s = np.asarray(s, dtype=float)
    i = np.arange(n + 1)
    binom = np.array([math.comb(n, k) for k in i], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = binom * s[..., None] ** i * (1.0 - s[..., None]) ** (n - i)
    return out


def validate_shape(coeffs, onset: float) -> bool:
    """Membership of (onset, coeffs) in the admissible set.

    True iff ``0 <= onset < 1``, every coefficient is non-negative and the
    coefficients are not all equal (the implicit b_0 = b_1 = 0 make the
    minimum 0).
    """
    b = np.asarray(coeffs, dtype=float)
    if b.ndim != 1 or b.size < 2 or not np.all(np.isfinite(b)):
        return False
    if not 0.0 <= onset < 1.0:
        return False
    return bool(b.min() >= 0.0 and min(b.min(), 0.0) < b.max())


@dataclass(frozen=True)
class BernsteinCurve:
    """An admissible profile curve: zero up to ``onset``, positive after it."""

    onset: float
    coeffs: np.ndarray

    def __post_init__(self):
        b = np.array(self.coeffs, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "coeffs", b)
        object.__setattr__(self, "onset", float(self.onset))
        if not validate_shape(b, self.onset):
            raise ValueError("coefficients/onset do not define an admissible curve")

    @property
    def order(self) -> int:
        return self.coeffs.size + 1

    @property
    def full_coeffs(self) -> np.ndarray:
        return np.concatenate(([0.0, 0.0], self.coeffs))

    def __call__(self, t):
        return curve_eval(self, t)


@dataclass(frozen=True)
class BernsteinDerivative:
    """Derivative of a profile curve, in Bernstein form on (onset, 1].

    ``coeffs`` are already divided by ``1 - onset`` so that evaluation gives
    dF/dt directly.
    """

    onset: float
    coeffs: np.ndarray

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, t):
        return _eval_on_support(self.coeffs, self.onset, t)


@dataclass(frozen=True)
class FeatureSet:
    ton: float
    tmax: float
    max_val: float
    tslope: float
    slope: float
    l1_norm: float
    tend: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in FEATURE_NAMES}


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)) or np.any(np.isnan(t)):
        raise ValueError("t must lie in [0, 1]")
    return t


def _eval_on_support(full, onset, t):
    t = _check_t(t)
    n = full.size - 1
    s = np.clip((t - onset) / (1.0 - onset), 0.0, 1.0)
    vals = basis_matrix(n, s) @ full
    vals = np.where(t > onset, vals, 0.0)
    return float(vals) if vals.ndim == 0 else vals


def curve_eval(curve: BernsteinCurve, t):
    """Evaluate the curve at scalar or array ``t``; exactly 0 on [0, onset]."""
    return _eval_on_support(curve.full_coeffs, curve.onset, t)


def curve_derivative(curve: BernsteinCurve) -> BernsteinDerivative:
    d = diff_coeffs(curve.full_coeffs) / (1.0 - curve.onset)
    d.setflags(write=False)
    return BernsteinDerivative(curve.onset, d)


def curve_integral(curve: BernsteinCurve, t0: float, t1: float) -> float:
    """Exact integral of the curve over [t0, t1] via the Bernstein antiderivative."""
    if t0 > t1:
        raise ValueError("t0 must not exceed t1")
    _check_t([t0, t1])
    c = curve.onset
    A = antideriv_coeffs(curve.full_coeffs)
    bn = binomials(A.size - 1)
    s0 = max(0.0, (t0 - c) / (1.0 - c))
    s1 = max(0.0, (t1 - c) / (1.0 - c))
    if s1 <= 0.0:
        return 0.0
    return (1.0 - c) * (bern_eval(A, bn, min(s1, 1.0)) - bern_eval(A, bn, min(s0, 1.0)))


def approximate_in_A(f: Callable[[float], float], f_onset: float, order: int) -> BernsteinCurve:
    """Bernstein approximant of a shape-class function.

    The onset is copied from ``f`` and ``b_i = f(c + i (1 - c) / order)`` for
    i = 2..order.  The error in sup-norm of the function and its derivative
    shrinks as the order grows.
    """
    if order < 3:
        raise ValueError("order must be at least 3")
    c = float(f_onset)
    b = [float(f(c + i * (1.0 - c) / order)) for i in range(2, order + 1)]
    return BernsteinCurve(c, np.array(b))


def e_distance(f, curve: BernsteinCurve, fprime=None, n_grid: int = 20001) -> float:
    """``sup|f - F| + sup|f' - F'|`` on a uniform grid of [0, 1].

    ``f`` must accept arrays.  Without ``fprime`` the derivative of ``f`` is
    taken by central differences.
    """
    t = np.linspace(0.0, 1.0, n_grid)
    fv = np.asarray(f(t), dtype=float)
    if fprime is None:
        h = 1e-6
        lo = np.clip(t - h, 0.0, 1.0)
        hi = np.clip(t + h, 0.0, 1.0)
        fp = (np.asarray(f(hi)) - np.asarray(f(lo))) / (hi - lo)
    else:
        fp = np.asarray(fprime(t), dtype=float)
    dF = curve_derivative(curve)
    return float(np.max(np.abs(fv - curve_eval(curve, t))) + np.max(np.abs(fp - dF(t))))


def _features_array(curve: BernsteinCurve) -> np.ndarray:
    return curve_features(curve.onset, np.ascontiguousarray(curve.coeffs))


def extract_features(curve: BernsteinCurve) -> FeatureSet:
    """Onset, peak, steepest ascent, unimodal horizon and L1 mass of a curve."""
    v = _features_array(curve)
    return FeatureSet(
        ton=curve.onset,
        tmax=float(v[0]),
        max_val=float(v[1]),
        tslope=float(v[2]),
        slope=float(v[3]),
        l1_norm=float(v[5]),
        tend=float(v[4]),
    )


def tend(curve: BernsteinCurve) -> float:
    """Largest t such that the curve is unimodal on [0, t]."""
    return float(_features_array(curve)[4])


def is_unimodal_on(curve: BernsteinCurve, tau: float) -> bool:
    """Whether the curve rises then falls (either phase possibly empty) on [0, tau].

    The zero stretch before the onset counts as part of the rising phase, so
    ``tau <= onset`` is trivially unimodal.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if tau <= curve.onset:
        return True
    return tau <= tend(curve)


def increasing_before_max(curve: BernsteinCurve) -> bool:
    """Whether the derivative stays non-negative between the onset and the global maximum."""
    return bool(_features_array(curve)[7] > 0.5)


@dataclass(frozen=True)
class CurveBatch:
    """A stack of curves sharing one order, e.g. all posterior draws for a gene."""

    onsets: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "onsets", np.ascontiguousarray(self.onsets, dtype=float))
        object.__setattr__(self, "coeffs", np.ascontiguousarray(self.coeffs, dtype=float))
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.onsets.shape[0]:
            raise ValueError("coeffs must have shape (n_curves, order - 1)")

    def __len__(self):
        return self.onsets.shape[0]

    def __getitem__(self, j) -> BernsteinCurve:
        return BernsteinCurve(self.onsets[j], self.coeffs[j])

    def __iter__(self):
        for j in range(len(self)):
            yield self[j]

    def feature_table(self) -> np.ndarray:
        """Rows of ``[tmax, max_val, tslope, slope, tend, l1_norm, area, incr]``."""
        if len(self) == 0:
            return np.empty((0, 8))
        return batch_features(self.onsets, self.coeffs)

    def features(self) -> dict:
        """Feature name -> array over the batch (the seven reported features plus ``area``)."""
        tab = self.feature_table()
        return {
            "ton": self.onsets.copy(),
            "tmax": tab[:, 0],
            "max_val": tab[:, 1],
            "tslope": tab[:, 2],
            "slope": tab[:, 3],
            "l1_norm": tab[:, 5],
            "tend": tab[:, 4],
            "area": tab[:, 6],
            "increasing_before_max": tab[:, 7] > 0.5,
        }
