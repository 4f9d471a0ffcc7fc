"""Super-patch scoring and human/machine concordance statistics.

Implements the latent bivariate-normal machinery behind ordinal rating
comparisons: a quadrature bivariate normal CDF, two-step polychoric and
polyserial maximum-likelihood estimators, and seeded percentile bootstrap
intervals.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr, ndtri

from .errors import BootstrapFailureError, UndefinedEstimateError
from .gridmap import POSITIVE, LabelMap

SUPER_PATCH_BLOCK = 8
ORDINAL_LEVELS = {"low": 1, "medium": 2, "high": 3}

# Beyond this many standard deviations the normal CDF is 0/1 to ~1e-16, so
# infinite thresholds can be clipped without affecting any stated tolerance.
_Z_CLIP = 8.5

# Likelihood cell floor keeping log pi finite on sparse tables.
_CELL_FLOOR = 1e-12

_RHO_BOUND = 0.9999


@dataclass(frozen=True)
class SuperPatchScore:
    block_i: int
    block_j: int
    machine_count: int
    n_cells: int

    def __post_init__(self):
        if not 0 <= self.machine_count <= self.n_cells:
            raise ValueError("machine_count outside [0, cells in block]")
        if self.n_cells > SUPER_PATCH_BLOCK * SUPER_PATCH_BLOCK:
            raise ValueError("block larger than 8x8")


def super_patch_scores(til_labels: LabelMap,
                       block: int = SUPER_PATCH_BLOCK) -> list[SuperPatchScore]:
    """Count TIL-positive patches per block, blocks anchored at multiples of block."""
    if block < 1:
        raise ValueError("block must be >= 1")
    positive = til_labels.labels == POSITIVE
    rows, cols = til_labels.geometry.shape
    scores = []
    for bi in range(0, rows, block):
        for bj in range(0, cols, block):
            cell = positive[bi:bi + block, bj:bj + block]
            scores.append(SuperPatchScore(
                bi // block, bj // block, int(cell.sum()), int(cell.size)
            ))
    return scores


def _phi2_integrand(theta: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # theta: (k,) quadrature nodes; a, b: (m,) point pairs -> (m, k) values.
    sin_t = np.sin(theta)[None, :]
    cos2 = np.cos(theta)[None, :] ** 2
    aa = a[:, None]
    bb = b[:, None]
    return np.exp(-(aa * aa + bb * bb - 2.0 * aa * bb * sin_t) / (2.0 * cos2))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(21)


def _gl_segment(a: np.ndarray, b: np.ndarray, lo: float, hi: float) -> np.ndarray:
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    vals = _phi2_integrand(mid + half * _GL_NODES, a, b)
    return half * (vals @ _GL_WEIGHTS)


def bivariate_normal_cdf(a, b, rho: float):
    """P(X <= a, Y <= b) for standard bivariate normal with correlation rho.

    Uses the single-integral reduction over the correlation angle,

        Phi2(a, b; rho) = Phi(a) Phi(b)
            + (1 / 2 pi) * int_0^{asin rho} exp(-(a^2 + b^2 - 2 a b sin t)
                                                 / (2 cos^2 t)) dt,

    evaluated by adaptive Gauss-Legendre quadrature (segments split until the
    whole-vs-halves difference is below 1e-12). The integrand is smooth and
    bounded on the open interval, so no endpoint singularity handling is
    needed. Vectorized over a and b; rho is scalar. |rho| = 1 is handled by
    the exact comonotone/antithetic limits.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho outside [-1, 1]")
    a_arr, b_arr = np.broadcast_arrays(
        np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    )
    scalar = a_arr.ndim == 0
    a_flat = np.clip(a_arr.ravel(), -_Z_CLIP, _Z_CLIP)
    b_flat = np.clip(b_arr.ravel(), -_Z_CLIP, _Z_CLIP)

    if rho == 1.0:
        out = ndtr(np.minimum(a_flat, b_flat))
    elif rho == -1.0:
        out = np.maximum(0.0, ndtr(a_flat) + ndtr(b_flat) - 1.0)
    elif rho == 0.0:
        out = ndtr(a_flat) * ndtr(b_flat)
    else:
        upper = math.asin(rho)
        total = np.zeros_like(a_flat)
        stack = [(0.0, upper, _gl_segment(a_flat, b_flat, 0.0, upper))]
        while stack:
            lo, hi, whole = stack.pop()
            mid = 0.5 * (lo + hi)
            left = _gl_segment(a_flat, b_flat, lo, mid)
            right = _gl_segment(a_flat, b_flat, mid, hi)
            err = np.abs(whole - (left + right)).max()
            if err < 1e-12 or abs(hi - lo) < 1e-10:
                total += left + right
            else:
                stack.append((lo, mid, left))
                stack.append((mid, hi, right))
        out = ndtr(a_flat) * ndtr(b_flat) + total / (2.0 * math.pi)
        np.clip(out, 0.0, 1.0, out=out)

    if scalar:
        return float(out[0])
    return out.reshape(a_arr.shape)


@dataclass(frozen=True)
class ConcordanceEstimate:
    rho: float
    row_thresholds: tuple[float, ...]
    col_thresholds: tuple[float, ...]
    method: str
    n: int
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    n_resamples: int = 0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho outside [-1, 1]")
        for taus in (self.row_thresholds, self.col_thresholds):
            if any(t2 <= t1 for t1, t2 in zip(taus, taus[1:])):
                raise ValueError("thresholds must be strictly increasing")
        if self.ci_low is not None and self.ci_high is not None:
            if not -1.0 <= self.ci_low <= self.rho <= self.ci_high <= 1.0:
                raise ValueError("interval must bracket the point estimate")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "rho": self.rho,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n": self.n,
            "n_resamples": self.n_resamples,
            "row_thresholds": list(self.row_thresholds),
            "col_thresholds": list(self.col_thresholds),
        }


def _marginal_thresholds(margin: np.ndarray) -> np.ndarray:
    # Interior cut points from cumulative proportions; endpoints stay open.
    cum = np.cumsum(margin[:-1]) / margin.sum()
    return ndtri(cum)


def _optimize_rho(neg_loglik: Callable[[float], float]) -> float:
    res = minimize_scalar(
        neg_loglik,
        bounds=(-_RHO_BOUND, _RHO_BOUND),
        method="bounded",
        options={"xatol": 1e-6},
    )
    return float(res.x)


def polychoric(table) -> ConcordanceEstimate:
    """Two-step polychoric correlation from an r x c contingency table.

    Thresholds come from the cumulative marginals through the inverse normal
    CDF; rho then maximizes the multinomial log-likelihood whose cell
    probabilities are bivariate-normal rectangle masses. All-zero rows and
    columns are dropped first.
    """
    counts = np.asarray(table, dtype=np.float64)
    if counts.ndim != 2 or (counts < 0).any():
        raise ValueError("table must be a 2-D array of non-negative counts")
    counts = counts[counts.sum(axis=1) > 0][:, counts.sum(axis=0) > 0]
    if counts.shape[0] < 2 or counts.shape[1] < 2:
        raise UndefinedEstimateError(
            "polychoric needs at least 2 nonempty rows and columns"
        )
    n = counts.sum()
    tau_r = _marginal_thresholds(counts.sum(axis=1))
    tau_c = _marginal_thresholds(counts.sum(axis=0))
    edges_r = np.concatenate(([-np.inf], tau_r, [np.inf]))
    edges_c = np.concatenate(([-np.inf], tau_c, [np.inf]))
    grid_a, grid_b = np.meshgrid(edges_r, edges_c, indexing="ij")

    def neg_loglik(rho: float) -> float:
        cdf = bivariate_normal_cdf(grid_a, grid_b, rho)
        pi = cdf[1:, 1:] - cdf[:-1, 1:] - cdf[1:, :-1] + cdf[:-1, :-1]
        pi = np.maximum(pi, _CELL_FLOOR)
        return -float((counts * np.log(pi)).sum())

    rho = _optimize_rho(neg_loglik)
    return ConcordanceEstimate(
        rho=rho,
        row_thresholds=tuple(tau_r),
        col_thresholds=tuple(tau_c),
        method="polychoric",
        n=int(n),
    )


def contingency_table(a_levels: Sequence[int], b_levels: Sequence[int],
                      n_levels: int = 3) -> np.ndarray:
    a = np.asarray(a_levels, dtype=np.intp)
    b = np.asarray(b_levels, dtype=np.intp)
    if a.shape != b.shape:
        raise ValueError("paired level lists must have equal length")
    if ((a < 1) | (a > n_levels) | (b < 1) | (b > n_levels)).any():
        raise ValueError(f"levels must lie in 1..{n_levels}")
    table = np.zeros((n_levels, n_levels), dtype=np.int64)
    np.add.at(table, (a - 1, b - 1), 1)
    return table


def polyserial(x: Sequence[float], y: Sequence[int]) -> ConcordanceEstimate:
    """Polyserial correlation between continuous x and ordinal y.

    x is standardized to mean 0, std 1 first, which makes the estimate
    invariant under positive affine transforms of x. The conditional
    likelihood sums log differences of normal CDFs at the ordinal cut points
    shifted by rho * x; the marginal density of x is constant in rho and
    dropped.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D sequences")
    if x.size < 2:
        raise UndefinedEstimateError("polyserial needs at least 2 observations")
    std = x.std()
    if std == 0:
        raise UndefinedEstimateError("x is constant")
    levels, y_idx = np.unique(y, return_inverse=True)
    if levels.size < 2:
        raise UndefinedEstimateError("y has a single ordinal level")
    z = (x - x.mean()) / std
    counts = np.bincount(y_idx, minlength=levels.size).astype(np.float64)
    tau = _marginal_thresholds(counts)
    edges = np.concatenate(([-np.inf], tau, [np.inf]))
    upper = edges[y_idx + 1]
    lower = edges[y_idx]

    def neg_loglik(rho: float) -> float:
        s = math.sqrt(1.0 - rho * rho)
        p = ndtr((upper - rho * z) / s) - ndtr((lower - rho * z) / s)
        return -float(np.log(np.maximum(p, _CELL_FLOOR)).sum())

    rho = _optimize_rho(neg_loglik)
    return ConcordanceEstimate(
        rho=rho,
        row_thresholds=tuple(tau),
        col_thresholds=(),
        method="polyserial",
        n=int(x.size),
    )


def median_rating(
    ratings: Mapping[str, Sequence[Optional[int]]],
) -> tuple[dict[str, int], int]:
    """Per-super-patch median ordinal code across raters; incomplete rows dropped."""
    medians: dict[str, int] = {}
    excluded = 0
    for key, row in ratings.items():
        if any(r is None for r in row):
            excluded += 1
            continue
        if len(row) % 2 == 0:
            raise ValueError("median_rating needs an odd number of raters")
        medians[key] = int(statistics.median(row))
    return medians, excluded


def bootstrap_ci(
    estimator: Callable[[Sequence], float],
    data: Sequence,
    n_resamples: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    max_retries: int = 8,
) -> tuple[float, float]:
    """Seeded percentile bootstrap over case resampling.

    Each resample slot derives its own generator from (seed, slot, attempt),
    so results do not depend on evaluation order. Slots whose estimator is
    undefined are redrawn up to max_retries; more than half the slots failing
    aborts the interval.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    n = len(data)
    if n == 0:
        raise ValueError("bootstrap_ci needs non-empty data")
    estimates = []
    failed = 0
    for slot in range(n_resamples):
        value = None
        for attempt in range(max_retries + 1):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(slot, attempt))
            )
            idx = rng.integers(0, n, size=n)
            try:
                value = float(estimator([data[k] for k in idx]))
                break
            except UndefinedEstimateError:
                continue
        if value is None:
            failed += 1
        else:
            estimates.append(value)
    if failed > n_resamples // 2:
        raise BootstrapFailureError(
            f"{failed}/{n_resamples} bootstrap resamples were undefined"
        )
    lo_q = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(estimates, [lo_q, 100.0 - lo_q])
    return float(lo), float(hi)


def _with_ci(estimate: ConcordanceEstimate, pairs, estimator,
             n_resamples: int, level: float, seed: int) -> ConcordanceEstimate:
    lo, hi = bootstrap_ci(estimator, pairs, n_resamples, level, seed)
    # Percentile intervals can miss the point estimate on skewed resample
    # distributions; widen so the bracket invariant always holds.
    lo = min(lo, estimate.rho)
    hi = max(hi, estimate.rho)
    return ConcordanceEstimate(
        rho=estimate.rho,
        row_thresholds=estimate.row_thresholds,
        col_thresholds=estimate.col_thresholds,
        method=estimate.method,
        n=estimate.n,
        ci_low=lo,
        ci_high=hi,
        n_resamples=n_resamples,
    )


def polychoric_with_ci(a_levels: Sequence[int], b_levels: Sequence[int],
                       n_levels: int = 3, n_resamples: int = 2000,
                       level: float = 0.95, seed: int = 0) -> ConcordanceEstimate:
    estimate = polychoric(contingency_table(a_levels, b_levels, n_levels))
    pairs = list(zip(a_levels, b_levels))

    def estimator(sample):
        a, b = zip(*sample)
        return polychoric(contingency_table(a, b, n_levels)).rho

    return _with_ci(estimate, pairs, estimator, n_resamples, level, seed)


def polyserial_with_ci(x: Sequence[float], y: Sequence[int],
                       n_resamples: int = 2000, level: float = 0.95,
                       seed: int = 0) -> ConcordanceEstimate:
    estimate = polyserial(x, y)
    pairs = list(zip(x, y))

    def estimator(sample):
        xs, ys = zip(*sample)
        return polyserial(xs, ys).rho

    return _with_ci(estimate, pairs, estimator, n_resamples, level, seed)


@dataclass(frozen=True)
class BinSummary:
    level: int
    n: int
    median: Optional[float]
    q1: Optional[float]
    q3: Optional[float]


def ordinal_vs_machine_summary(
    median_levels: Sequence[int], machine_counts: Sequence[float],
    n_levels: int = 3,
) -> list[BinSummary]:
    """Machine-score distribution per ordinal bin (the box-plot summary)."""
    levels = np.asarray(median_levels, dtype=np.intp)
    counts = np.asarray(machine_counts, dtype=np.float64)
    if levels.shape != counts.shape:
        raise ValueError("levels and counts must pair up")
    out = []
    for lv in range(1, n_levels + 1):
        vals = counts[levels == lv]
        if vals.size == 0:
            out.append(BinSummary(lv, 0, None, None, None))
        else:
            q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
            out.append(BinSummary(lv, int(vals.size), float(med), float(q1), float(q3)))
    return out
