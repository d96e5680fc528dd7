"""Monte Carlo estimators: terminal expectations, coupled weak-error sweeps,
ergodic time averages, log-log rate fits and empirical densities.

Ensembles are cut into fixed chunks of trajectory indices. Each chunk writes
its per-trajectory values into an index-addressed buffer and the buffer is
reduced with :func:`math.fsum` (correctly rounded, hence order-free), so the
number of worker threads never changes a result bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from .paths import generate, tree_sum
from .scheme import SchemeParams, StepFailure, _resolve_steps, iterate_states, make_stepper

__all__ = [
    "TEST_FUNCTIONS",
    "resolve_phis",
    "EnsembleStats",
    "run_chunks",
    "Estimate",
    "expectation",
    "terminal_samples",
    "WeakErrorResult",
    "weak_error_sweep",
    "RateFit",
    "fit_rate",
    "ergodic_average",
    "DensityCurve",
    "empirical_density",
    "density_distance",
    "DensityComparison",
    "compare_densities",
]

Z95 = 1.959963984540054
DEFAULT_CHUNK = 2048


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


TEST_FUNCTIONS = {
    "atan_norm": lambda x: np.arctan(_norm(x)),
    "gauss": lambda x: np.exp(-np.sum(x * x, axis=-1)),
    "cos_norm": lambda x: np.cos(_norm(x)),
    "sin_norm_sq": lambda x: np.sin(np.sum(x * x, axis=-1)),
}


def resolve_phis(phi):
    """Names of test functions from a name, ``"all"`` or a sequence of names."""
    if isinstance(phi, str):
        names = list(TEST_FUNCTIONS) if phi == "all" else [p.strip() for p in phi.split(",")]
    else:
        names = list(phi)
    unknown = [p for p in names if p not in TEST_FUNCTIONS]
    if unknown:
        raise ValueError(f"unknown test function(s) {unknown}; choose from {list(TEST_FUNCTIONS)}")
    return names


def exact_mean(values):
    return math.fsum(values) / len(values) if len(values) else math.nan


def exact_var(values):
    # two-pass with fsum: independent of chunking and ordering
    n = len(values)
    if n < 2:
        return 0.0
    mu = exact_mean(values)
    return math.fsum((np.asarray(values) - mu) ** 2) / (n - 1)


@dataclass
class EnsembleStats:
    """Per-trajectory values over a contiguous block of trajectory indices.

    ``values`` maps a key (test-function name, moment label, ...) to an array
    whose last axis runs over trajectories ``start .. start + count - 1``.
    Merging concatenates in index order, so any partition merges to the same
    object.
    """

    start: int
    count: int
    values: dict = field(default_factory=dict)
    seed: int | None = None
    digest: str = ""

    def merge(self, other):
        a, b = (self, other) if self.start <= other.start else (other, self)
        if a.start + a.count != b.start:
            raise ValueError("can only merge adjacent trajectory blocks")
        if set(a.values) != set(b.values):
            raise ValueError("cannot merge stats with different keys")
        values = {k: np.concatenate([a.values[k], b.values[k]], axis=-1) for k in a.values}
        return EnsembleStats(a.start, a.count + b.count, values, a.seed, a.digest)

    def mean(self, key):
        v = np.asarray(self.values[key])
        if v.ndim == 1:
            return exact_mean(v)
        return np.array([exact_mean(row) for row in v.reshape(-1, v.shape[-1])]).reshape(v.shape[:-1])

    def variance(self, key):
        return exact_var(self.values[key])

    def half_width(self, key):
        return Z95 * math.sqrt(self.variance(key) / self.count) if self.count > 1 else 0.0


def _chunks(M, chunk_size):
    return [np.arange(s, min(s + chunk_size, M)) for s in range(0, M, chunk_size)]


def run_chunks(worker, M, chunk_size=DEFAULT_CHUNK, threads=1):
    """Run ``worker(path_indices) -> dict of arrays`` over fixed chunks.

    Returns the chunk results in index order. The chunk layout depends only on
    ``M`` and ``chunk_size``.
    """
    chunks = _chunks(int(M), int(chunk_size))
    if threads <= 1 or len(chunks) == 1:
        results = [worker(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(worker, chunks))
    return results


def _ensemble(worker, M, chunk_size=DEFAULT_CHUNK, threads=1, seed=None):
    def indexed(paths):
        return int(paths[0]), paths.size, worker(paths)

    merged = None
    for start, count, res in run_chunks(indexed, M, chunk_size, threads):
        block = EnsembleStats(start, count, res, seed)
        merged = block if merged is None else merged.merge(block)
    return merged


# ---------------------------------------------------------------------------
# terminal expectations

@dataclass
class Estimate:
    mean: float
    half_width: float
    n_failed: int
    M: int

    def __iter__(self):
        return iter((self.mean, self.half_width))


def terminal_samples(model, params, M, T, seed=0, h_fine=None, method="ltpe",
                     chunk_size=DEFAULT_CHUNK, threads=1, x0=None):
    """Terminal states ``Y_N`` of ``M`` trajectories, shape ``(M, d)``, and failure steps."""
    def worker(paths):
        final, failed = None, None
        for _, y, failed in iterate_states(model, params.theta, params.h, T, seed, paths,
                                           x0=x0, method=method, h_fine=h_fine):
            final = y
        return {"state": final.T.copy(), "failed": failed.astype(float)}

    st = _ensemble(worker, M, chunk_size, threads, seed)
    return st.values["state"].T, st.values["failed"].astype(np.int64)


def expectation(model, params, phi, M, T, seed=0, h_fine=None, method="ltpe",
                chunk_size=DEFAULT_CHUNK, threads=1):
    """Monte Carlo mean of ``phi(Y_N)`` with a 95% normal half-width."""
    fn = TEST_FUNCTIONS[phi] if isinstance(phi, str) else phi
    states, failed = terminal_samples(model, params, M, T, seed, h_fine, method,
                                      chunk_size, threads)
    n_failed = int(np.sum(failed >= 0))
    if n_failed and method == "ltpe":
        raise StepFailure(int(failed[failed >= 0].min()), np.flatnonzero(failed >= 0))
    ok = failed < 0
    vals = fn(states[ok])
    hw = Z95 * math.sqrt(exact_var(vals) / vals.size) if vals.size > 1 else 0.0
    return Estimate(exact_mean(vals), hw, n_failed, int(M))


# ---------------------------------------------------------------------------
# weak error against a fine reference on shared paths

@dataclass
class WeakErrorResult:
    model: str
    theta: float
    theta_ref: float
    h_ref: float
    T: float
    M: int
    seed: int
    phis: list
    h_list: list
    errors: dict          # phi -> array over h_list
    half_widths: dict     # phi -> array over h_list
    means: dict           # phi -> array over h_list
    reference: dict       # phi -> reference mean

    def rows(self):
        for phi in self.phis:
            for i, h in enumerate(self.h_list):
                yield phi, h, float(self.errors[phi][i]), float(self.half_widths[phi][i])

    def rate(self, phi):
        return fit_rate(list(zip(self.h_list, self.errors[phi])))


def weak_error_sweep(model, theta, h_list, h_ref, T, M, phi="all", seed=0,
                     theta_ref=None, chunk_size=DEFAULT_CHUNK, threads=1, x0=None):
    """Weak errors ``|E phi(Y^h_N) - E phi(Y^ref_N)|`` on common Brownian paths.

    Every level and the reference are driven by the same fine increments at
    ``h_ref`` (tree-summed to each coarse step), path by path.
    """
    phis = resolve_phis(phi)
    theta = float(theta)
    theta_ref = theta if theta_ref is None else float(theta_ref)
    h_list = [float(h) for h in h_list]
    n_ref, _ = _resolve_steps(T, h_ref, h_ref)
    factors = []
    for h in h_list:
        _, f = _resolve_steps(T, h, h_ref)
        factors.append(f)
    block = max(factors)
    if n_ref % block:
        raise ValueError("largest step must divide the horizon")
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)

    def worker(paths):
        grid = generate(seed, model.noise_dim, T, h_ref, paths)
        ref = make_stepper(model, theta_ref, h_ref)
        levels = [make_stepper(model, theta, h) for h in h_list]
        start = np.array(np.broadcast_to(x0, (paths.size, model.dim)), dtype=float)
        y_ref = start.copy()
        ys = [start.copy() for _ in h_list]
        for fine in grid.blocks(block):
            for dW in fine:
                y_ref = ref(y_ref, dW)
            for i, f in enumerate(factors):
                coarse = tree_sum(fine, f)
                y = ys[i]
                for dW in coarse:
                    y = levels[i](y, dW)
                ys[i] = y
        bad = ~np.isfinite(y_ref).all(axis=-1)
        for y in ys:
            bad |= ~np.isfinite(y).all(axis=-1)
        if np.any(bad):
            raise StepFailure(n_ref, paths[bad])
        out = {}
        for name in phis:
            fn = TEST_FUNCTIONS[name]
            out[f"ref:{name}"] = fn(y_ref)
            out[f"lvl:{name}"] = np.stack([fn(y) for y in ys])
        return out

    st = _ensemble(worker, M, chunk_size, threads, seed)
    errors, hws, means, reference = {}, {}, {}, {}
    for name in phis:
        r = st.values[f"ref:{name}"]
        lv = st.values[f"lvl:{name}"]
        reference[name] = exact_mean(r)
        means[name] = np.array([exact_mean(row) for row in lv])
        errors[name] = np.abs(means[name] - reference[name])
        hws[name] = np.array(
            [Z95 * math.sqrt(exact_var(row - r) / len(r)) if len(r) > 1 else 0.0 for row in lv]
        )
    return WeakErrorResult(model.name, theta, theta_ref, float(h_ref), float(T), int(M),
                           int(seed), phis, h_list, errors, hws, means, reference)


# ---------------------------------------------------------------------------
# rate regression

@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def loglog_fit(x, y):
    """Least-squares line through ``(log2 x, log2 y)``."""
    lx, ly = np.log2(np.asarray(x, dtype=float)), np.log2(np.asarray(y, dtype=float))
    xm, ym = lx.mean(), ly.mean()
    sxx = np.sum((lx - xm) ** 2)
    slope = np.sum((lx - xm) * (ly - ym)) / sxx
    intercept = ym - slope * xm
    resid = ly - (intercept + slope * lx)
    syy = np.sum((ly - ym) ** 2)
    r2 = 1.0 - np.sum(resid**2) / syy if syy > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def fit_rate(points):
    """Fit ``log2(error) = slope * log2(h) + intercept``."""
    points = list(points)
    if len(points) < 2:
        raise ValueError("need at least two (h, error) points")
    h = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    bad = np.flatnonzero(~(err > 0))
    if bad.size:
        raise ValueError(f"errors must be positive; offending indices {bad.tolist()}")
    if np.any(h <= 0):
        raise ValueError("step sizes must be positive")
    return RateFit(*loglog_fit(h, err))


# ---------------------------------------------------------------------------
# ergodic averages

def ergodic_average(model, params, phi, burn_in, N, M, seed=0, chunk_size=DEFAULT_CHUNK,
                    threads=1):
    """Average of ``phi(Y_k)`` over ``burn_in <= k <= N`` and ``M`` trajectories.

    Returns ``(average, standard_error)``; the standard error is that of the
    per-trajectory time averages.
    """
    if not 0 <= burn_in < N:
        raise ValueError("need 0 <= burn_in < N")
    fn = TEST_FUNCTIONS[phi] if isinstance(phi, str) else phi
    T = N * params.h

    def worker(paths):
        acc = np.zeros(paths.size)
        comp = np.zeros(paths.size)
        if burn_in == 0:
            acc += fn(np.broadcast_to(model.x0, (paths.size, model.dim)))
        failed = None
        for n, y, failed in iterate_states(model, params.theta, params.h, T, seed, paths):
            if n >= burn_in:
                # Kahan summation keeps long time sums accurate
                v = fn(y) - comp
                t = acc + v
                comp = (t - acc) - v
                acc = t
        if np.any(failed >= 0):
            raise StepFailure(int(failed[failed >= 0].min()))
        return {"avg": acc / (N - burn_in + 1)}

    st = _ensemble(worker, M, chunk_size, threads, seed)
    v = st.values["avg"]
    se = math.sqrt(exact_var(v) / v.size) if v.size > 1 else 0.0
    return exact_mean(v), se


# ---------------------------------------------------------------------------
# densities

@dataclass
class DensityCurve:
    edges: np.ndarray
    heights: np.ndarray

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def mass(self):
        return float(math.fsum(self.widths * self.heights))


def empirical_density(samples, bins=100, bandwidth=None, range=None, quantiles=(0.005, 0.995)):
    """Normalised histogram over the central quantile range, or a Gaussian KDE.

    ``bandwidth`` may be ``"silverman"`` or a number to smooth with a Gaussian
    kernel; the result is always a piecewise-constant curve on ``bins`` cells.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot estimate a density from an empty sample")
    if range is None:
        # snap to order statistics so the window always holds samples
        lo = np.quantile(x, quantiles[0], method="lower")
        hi = np.quantile(x, quantiles[1], method="higher")
    else:
        lo, hi = range
    if not hi > lo:
        lo, hi = lo - 0.5, lo + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    inside = x[(x >= lo) & (x <= hi)]
    if inside.size == 0:
        raise ValueError(f"no samples inside the window [{lo:g}, {hi:g}]")
    if bandwidth is None or np.ptp(inside) == 0:
        counts, _ = np.histogram(inside, bins=edges)
        heights = counts / (counts.sum() * np.diff(edges))
    else:
        kde = stats.gaussian_kde(inside, bw_method=bandwidth)
        cdf = np.array([kde.integrate_box_1d(-np.inf, e) for e in edges])
        mass = np.diff(cdf)
        heights = mass / (mass.sum() * np.diff(edges))
    curve = DensityCurve(edges, heights)
    # renormalise against rounding so the mass is 1 to machine precision
    curve.heights = heights / curve.mass()
    return curve


def _union_grid(a, b):
    return np.union1d(a.edges, b.edges)


def _evaluate(curve, points):
    idx = np.searchsorted(curve.edges, points, side="right") - 1
    ok = (idx >= 0) & (idx < curve.heights.size)
    out = np.zeros_like(points)
    out[ok] = curve.heights[idx[ok]]
    return out


def density_distance(a, b):
    """L1 distance between two piecewise-constant density curves."""
    if a.edges.shape == b.edges.shape and np.array_equal(a.edges, b.edges):
        return float(math.fsum(np.abs(a.heights - b.heights) * a.widths))
    grid = _union_grid(a, b)
    mid = 0.5 * (grid[:-1] + grid[1:])
    return float(math.fsum(np.abs(_evaluate(a, mid) - _evaluate(b, mid)) * np.diff(grid)))


@dataclass
class DensityComparison:
    curves: dict          # theta -> DensityCurve
    baseline: float       # distance between two independent draws at baseline_theta
    baseline_theta: float
    distances: dict       # (theta_a, theta_b) -> distance

    def within(self, factor):
        return all(d <= factor * self.baseline for d in self.distances.values())


def compare_densities(model, thetas, h, T, M, seed=0, bins=100, threads=1):
    """Terminal first-component densities for several ``theta`` on one common grid.

    Each ``theta`` gets its own seed (``seed + i``) so that the comparison is
    between independent samples, just like the same-law baseline, which
    redraws the last ``theta`` with ``seed + len(thetas)``. All histograms
    share a window from the pooled 0.5% and 99.5% quantiles.
    """
    samples = {}
    for i, th in enumerate(thetas):
        states, _ = terminal_samples(model, SchemeParams(th, h), M, T, seed + i, threads=threads)
        samples[th] = states[:, 0]
    base = thetas[-1]
    twin, _ = terminal_samples(model, SchemeParams(base, h), M, T, seed + len(thetas),
                               threads=threads)
    pooled = np.concatenate(list(samples.values()) + [twin[:, 0]])
    window = tuple(np.quantile(pooled, (0.005, 0.995)))
    curves = {th: empirical_density(x, bins, range=window) for th, x in samples.items()}
    baseline = density_distance(curves[base], empirical_density(twin[:, 0], bins, range=window))
    distances = {(a, b): density_distance(curves[a], curves[b])
                 for a, b in combinations(thetas, 2)}
    return DensityComparison(curves, baseline, base, distances)
