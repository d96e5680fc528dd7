"""Empirical checks of the scheme's long-time properties.

Each check returns a small result object with a ``verdict`` string so that the
CLI can turn it into a CSV row and an exit status. Verdicts never rely on the
generic constants of the convergence theory; they compare the simulation
against itself (second half vs first half, fitted decay rates, slopes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimate import DEFAULT_CHUNK, _ensemble, exact_mean, loglog_fit
from .linop import apply
from .paths import generate, tree_sum
from .scheme import (InadmissibleStepError, SchemeParams, _resolve_steps, iterate_states,
                     make_stepper, project, stepsize_bounds)

__all__ = [
    "MomentResult",
    "moment_trajectory",
    "moment_stepsize_bound",
    "DecayFit",
    "fit_decay",
    "contractivity_decay",
    "sde_contractivity",
    "ProjectionErrorResult",
    "projection_error",
    "HolderResult",
    "moment_increment_slope",
    "holder_check",
]


# ---------------------------------------------------------------------------
# uniform moment bounds

@dataclass
class MomentResult:
    times: np.ndarray
    steps: np.ndarray
    means: np.ndarray
    p: int
    verdict: str
    failed_step: int | None = None

    def rows(self):
        return zip(self.steps.tolist(), self.times.tolist(), self.means.tolist())


def moment_stepsize_bound(model, theta, p):
    """Step-size restriction for uniform ``2p``-th moment bounds (no contractivity terms)."""
    b = stepsize_bounds(model, theta, 1.0, p)
    return min(b["linear_decay"], b["moment_order"], b["stiffness"], b["unit"])


def _bounded_verdict(times, means, T):
    first = means[times <= 0.5 * T]
    second = means[times > 0.5 * T]
    if not np.all(np.isfinite(means)):
        return "diverged"
    if second.size == 0 or second.max() <= 1.1 * first.max():
        return "bounded"
    return "unbounded"


def moment_trajectory(model, params, p, T, M, seed=0, method="ltpe", x0=None,
                      record_every=None, check_stepsize=True, chunk_size=DEFAULT_CHUNK,
                      threads=1):
    """Per-step empirical ``E|Y_n|^(2p)`` and a boundedness verdict.

    The verdict is ``"bounded"`` when the largest moment over the second half
    of ``[0, T]`` exceeds the first-half maximum by at most 10%, and
    ``"diverged"`` when any trajectory produced non-finite values.
    """
    c = model.constants
    if method == "ltpe" and check_stepsize:
        if not p < c.p0:
            raise InadmissibleStepError(f"need p < p0 = {c.p0}")
        bound = moment_stepsize_bound(model, params.theta, p)
        if not params.h < bound:
            raise InadmissibleStepError(
                f"h = {params.h:g} violates the moment step-size bound {bound:g}"
            )
    n_steps, _ = _resolve_steps(T, params.h, params.h)
    if record_every is None:
        record_every = 1 if T <= 10 else 64
    rec = [0] + [n for n in range(1, n_steps + 1) if n % record_every == 0 or n == n_steps]
    rec_index = {n: i for i, n in enumerate(rec)}
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)

    def worker(paths):
        out = np.empty((len(rec), paths.size))
        out[0] = np.sum(np.broadcast_to(x0, (paths.size, model.dim)) ** 2, axis=-1) ** p
        failed = None
        for n, y, failed in iterate_states(model, params.theta, params.h, T, seed, paths,
                                           x0=x0, method=method):
            i = rec_index.get(n)
            if i is not None:
                with np.errstate(over="ignore", invalid="ignore"):
                    out[i] = np.sum(y * y, axis=-1) ** p
        return {"norm2p": out, "failed": failed.astype(float)}

    st = _ensemble(worker, M, chunk_size, threads, seed)
    failed = st.values["failed"]
    steps = np.asarray(rec)
    times = steps * params.h
    if np.any(failed >= 0):
        first = int(failed[failed >= 0].min())
        means = np.array([exact_mean(r) if np.all(np.isfinite(r)) else np.inf
                          for r in st.values["norm2p"]])
        return MomentResult(times, steps, means, p, "diverged", first)
    means = np.array([exact_mean(r) for r in st.values["norm2p"]])
    return MomentResult(times, steps, means, p, _bounded_verdict(times, means, T))


# ---------------------------------------------------------------------------
# contractivity

@dataclass
class DecayFit:
    times: np.ndarray
    values: np.ndarray
    rate: float
    r2: float
    verdict: str
    h: float = math.nan

    @property
    def initial(self):
        return float(self.values[0])

    @property
    def terminal(self):
        return float(self.values[-1])


def fit_decay(times, values, burn_in_frac=0.1):
    """Fit ``values ~ v0 exp(-rate t)`` by least squares on ``log(values)``.

    Points before ``burn_in_frac`` of the horizon and non-positive values are
    excluded. Returns ``(rate, r2)``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (times >= times[0] + burn_in_frac * (times[-1] - times[0])) & (values > 0)
    t, lv = times[keep], np.log(values[keep])
    if t.size < 2:
        return math.nan, math.nan
    tm, lm = t.mean(), lv.mean()
    stt = np.sum((t - tm) ** 2)
    slope = np.sum((t - tm) * (lv - lm)) / stt
    resid = lv - (lm + slope * (t - tm))
    syy = np.sum((lv - lm) ** 2)
    r2 = 1.0 - np.sum(resid**2) / syy if syy > 0 else 1.0
    return float(-slope), float(r2)


def contractivity_decay(model, params, x0_a, x0_b, T, M, seed=0, record_every=None,
                        burn_in_frac=0.1, chunk_size=DEFAULT_CHUNK, threads=1):
    """Mean squared gap between two trajectories driven by the same noise.

    Both copies of trajectory ``i`` share path index ``i``, hence identical
    Brownian increments; only the initial states differ.
    """
    xa = np.broadcast_to(np.asarray(x0_a, dtype=float), (model.dim,))
    xb = np.broadcast_to(np.asarray(x0_b, dtype=float), (model.dim,))
    if np.array_equal(xa, xb):
        raise ValueError("initial states must differ")
    n_steps, _ = _resolve_steps(T, params.h, params.h)
    if record_every is None:
        record_every = max(1, n_steps // 512)
    rec = [0] + [n for n in range(1, n_steps + 1) if n % record_every == 0 or n == n_steps]
    rec_index = {n: i for i, n in enumerate(rec)}

    def worker(paths):
        both = np.concatenate([paths, paths])
        x0 = np.concatenate([np.tile(xa, (paths.size, 1)), np.tile(xb, (paths.size, 1))])
        out = np.empty((len(rec), paths.size))
        out[0] = np.sum((xa - xb) ** 2)
        failed = None
        for n, y, failed in iterate_states(model, params.theta, params.h, T, seed, both, x0=x0):
            i = rec_index.get(n)
            if i is not None:
                diff = y[: paths.size] - y[paths.size:]
                out[i] = np.sum(diff * diff, axis=-1)
        if np.any(failed >= 0):
            raise ArithmeticError(f"non-finite state at step {int(failed[failed >= 0].min())}")
        return {"gap2": out}

    st = _ensemble(worker, M, chunk_size, threads, seed)
    values = np.array([exact_mean(r) for r in st.values["gap2"]])
    times = np.asarray(rec) * params.h
    rate, r2 = fit_decay(times, values, burn_in_frac)
    verdict = "contractive" if rate > 0 and r2 >= 0.9 else "not-contractive"
    return DecayFit(times, values, rate, r2, verdict, params.h)


def sde_contractivity(model, x0_a, x0_b, T, M, h_fine=2.0**-12, seed=0, **kwargs):
    """Contractivity of the SDE itself, proxied by the implicit scheme at a fine step."""
    return contractivity_decay(model, SchemeParams(theta=1.0, h=h_fine), x0_a, x0_b, T, M,
                               seed=seed, **kwargs)


# ---------------------------------------------------------------------------
# projection error

@dataclass
class ProjectionErrorResult:
    h_list: list
    errors: np.ndarray
    bounds: np.ndarray
    tail_moment: float
    verdict: str

    def rows(self):
        return zip(self.h_list, self.errors.tolist(), self.bounds.tolist())


def _draw(dist, M, d, seed, df):
    rng = np.random.default_rng(seed)
    if dist == "gaussian":
        return rng.standard_normal((M, d))
    if dist == "student_t":
        return rng.standard_t(df, size=(M, d))
    raise ValueError(f"unknown distribution {dist!r}")


def projection_error(dist, gamma, h_list, M=10**6, seed=0, df=None, d=1):
    """Monte Carlo ``E|zeta - P(zeta)|^2`` per step size against ``2 E|zeta|^(8 gamma + 2) h^2``.

    ``dist`` is ``"gaussian"``, ``"student_t"`` (with ``df`` degrees of freedom)
    or an explicit ``(M, d)`` sample array.
    """
    order = 8 * gamma + 2
    if isinstance(dist, str):
        if dist == "student_t" and (df is None or df <= order):
            raise ValueError(f"Student-t needs df > {order:g} for a finite tail moment, got {df}")
        zeta = _draw(dist, int(M), d, seed, df)
    else:
        zeta = np.asarray(dist, dtype=float)
        if zeta.ndim == 1:
            zeta = zeta[:, None]
    norm2 = np.sum(zeta * zeta, axis=-1)
    tail = exact_mean(norm2 ** (order / 2.0))
    errors, bounds = [], []
    for h in h_list:
        diff = zeta - project(zeta, h, gamma)
        errors.append(exact_mean(np.sum(diff * diff, axis=-1)))
        bounds.append(2.0 * tail * h * h)
    errors, bounds = np.array(errors), np.array(bounds)
    verdict = "bounded" if np.all(errors <= bounds) else "violated"
    return ProjectionErrorResult(list(h_list), errors, bounds, tail, verdict)


# ---------------------------------------------------------------------------
# Hölder continuity of the lifted process

@dataclass
class HolderResult:
    deltas: np.ndarray
    moments: np.ndarray
    slope: float
    r2: float
    p: int
    verdict: str


def moment_increment_slope(deltas, increments, p):
    """Log-log slope of ``E|increment|^(2p)`` against the time lag.

    ``increments`` has shape ``(len(deltas), M, d)``.
    """
    moments = np.array([exact_mean(np.sum(z * z, axis=-1) ** p) for z in increments])
    slope, _, r2 = loglog_fit(deltas, moments)
    return moments, slope, r2


def holder_check(model, params, p=1, sub_steps=16, M=10**4, seed=0, T=1.0,
                 chunk_size=DEFAULT_CHUNK, threads=1):
    """Increment moments of the lifted process inside one macro step.

    Runs the scheme to ``t_n = T``, then evaluates
    ``Z(t) - Z(t_n) = F(P(Y_n)) (t - t_n) + g(P(Y_n)) (W_t - W_{t_n})`` at
    ``sub_steps`` equally spaced points of ``(t_n, t_n + h]``. The verdict
    holds when the fitted slope is at least ``0.85 p``.
    """
    c = model.constants
    if p > c.p0 / model.gamma:
        raise ValueError(f"need p <= p0 / gamma = {c.p0 / model.gamma:g}")
    if sub_steps < 4 or sub_steps & (sub_steps - 1):
        raise ValueError("sub_steps must be a power of two and at least 4")
    h = params.h
    n_macro, _ = _resolve_steps(T, h, h)
    delta = h / sub_steps
    deltas = delta * np.arange(1, sub_steps + 1)
    stepper_theta, x0 = params.theta, model.x0

    def worker(paths):
        grid = generate(seed, model.noise_dim, T + h, delta, paths)
        step = make_stepper(model, stepper_theta, h)
        y = np.array(np.broadcast_to(x0, (paths.size, model.dim)), dtype=float)
        for k in range(n_macro):
            dW = tree_sum(grid.block(k * sub_steps, (k + 1) * sub_steps), sub_steps)[0]
            y = step(y, dW)
        py = project(y, h, model.gamma)
        drift = apply(model.linear, py) + model.drift(py)
        g = model.diffusion(py)
        w = np.cumsum(grid.block(n_macro * sub_steps, (n_macro + 1) * sub_steps), axis=0)
        inc = drift[None] * deltas[:, None, None] + np.einsum("pdm,kpm->kpd", g, w)
        return {"norm2p": np.sum(inc * inc, axis=-1) ** p}

    st = _ensemble(worker, M, chunk_size, threads, seed)
    moments = np.array([exact_mean(r) for r in st.values["norm2p"]])
    slope, _, r2 = loglog_fit(deltas, moments)
    verdict = "holds" if slope >= p * (1 - 0.15) else "fails"
    return HolderResult(deltas, moments, slope, r2, p, verdict)
