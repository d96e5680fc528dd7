"""Linear-theta-projected Euler (LTPE) stepping, the Euler-Maruyama baseline,
and the step-size admissibility calculus.

One LTPE step solves

    (I - theta h A) Y_{n+1} = P(Y_n) + (1 - theta) h A P(Y_n)
                              + h f(P(Y_n)) + g(P(Y_n)) dW_n

where ``P`` radially truncates its argument to the ball of radius
``h ** (-1 / (2 gamma))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linop import ShiftedSolver, apply, solve_shifted
from .model import dissipativity_gap
from .paths import generate, tree_sum

__all__ = [
    "SchemeParams",
    "StepFailure",
    "InadmissibleStepError",
    "project",
    "ltpe_step",
    "em_step",
    "lifted_state",
    "drift_cap",
    "stepsize_bounds",
    "max_stable_stepsize",
    "admissibility",
    "ergodicity_warnings",
    "LTPEStepper",
    "EMStepper",
    "make_stepper",
    "Trajectory",
    "simulate",
    "simulate_path",
    "iterate_states",
    "default_record_every",
]


class StepFailure(ArithmeticError):
    """A step produced non-finite values."""

    def __init__(self, step, paths=None):
        self.step = step
        self.paths = paths
        super().__init__(f"non-finite state at step {step}")


class InadmissibleStepError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeParams:
    theta: float
    h: float
    kappa: float = 0.5
    p: int = 2

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.p < 1:
            raise ValueError(f"moment order p must be >= 1, got {self.p}")

    def lambda_f(self, C1):
        return C1 * (1.0 + 2.0 * math.sqrt(self.h))


_SHRINK = np.nextafter(1.0, 0.0)


def project(x, h, gamma):
    """Radial projection onto the ball of radius ``h ** (-1 / (2 gamma))``.

    Points inside (or on) the ball, including the origin, are returned
    unchanged. Projected points are nudged down by at most a few ulps so that
    their computed norm never exceeds the radius; this makes ``project``
    exactly idempotent.
    """
    x = np.asarray(x, dtype=float)
    radius = h ** (-1.0 / (2.0 * gamma))
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    outside = norm > radius
    if not np.any(outside):
        return x.copy()
    scale = np.where(outside, radius / np.where(outside, norm, 1.0), 1.0)
    y = x * scale
    for _ in range(8):
        over = np.sqrt(np.sum(y * y, axis=-1, keepdims=True)) > radius
        if not np.any(over):
            break
        y = np.where(over, y * _SHRINK, y)
    return y


def _g_dot(model, x, dW):
    if model.noise_dim == 1:
        return model.diffusion(x)[..., 0] * dW
    return np.einsum("...dm,...m->...d", model.diffusion(x), dW)


def _ltpe_rhs(model, theta, h, y, dW):
    py = project(y, h, model.gamma)
    rhs = py + h * model.drift(py) + _g_dot(model, py, dW)
    if theta != 1.0:
        rhs = rhs + (1.0 - theta) * h * apply(model.linear, py)
    return rhs


def ltpe_step(model, params, solver, y, dW, step=None):
    """One LTPE step; ``y`` may be ``(d,)`` or a batch ``(M, d)``."""
    if solver.theta != params.theta or solver.h != params.h:
        raise ValueError("solver was built for a different (theta, h)")
    with np.errstate(over="ignore", invalid="ignore"):
        out = solve_shifted(solver, _ltpe_rhs(model, params.theta, params.h, y, dW))
    if not np.all(np.isfinite(out)):
        raise StepFailure(step)
    return out


def em_step(model, h, y, dW, step=None):
    """Euler-Maruyama step ``y + h (A y + f(y)) + g(y) dW``."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = y + h * model.full_drift(y) + _g_dot(model, y, dW)
    if not np.all(np.isfinite(out)):
        raise StepFailure(step)
    return out


def lifted_state(model, theta, h, y):
    """``y - theta h A y``, the left-hand side of the implicit step."""
    y = np.asarray(y, dtype=float)
    if theta == 0.0:
        return y.copy()
    return y - theta * h * apply(model.linear, y)


def drift_cap(model, h):
    """``C2 (1 + sqrt(h)) h^(-1/2)``, bounding ``|f(P(x))|`` for all ``x``."""
    return model.constants.C2 * (1.0 + math.sqrt(h)) / math.sqrt(h)


# ---------------------------------------------------------------------------
# step-size admissibility

BOUND_NAMES = (
    "linear_decay",          # 1 / (2 (1-theta) lambda_1)
    "moment_order",          # (p0 - p) / ((1-theta)(2 p0 - p - 1) lambda_1)
    "stiffness",             # 1 / ((1-theta) lambda_d)
    "contractivity_linear",  # kappa^2 (2 lambda_1 - L2) / ((1-theta)^2 lambda_d^2)
    "contractivity_drift",   # (1-kappa)^(2 gamma) (2 lambda_1 - L2)^gamma / lambda_f^(2 gamma)
    "unit",                  # 1
)


def _div(num, den):
    return math.inf if den == 0 else num / den


def _drift_bound(model, kappa, h):
    c = model.constants
    gap = 2.0 * model.linear.lambda_min - c.L2
    g = model.gamma
    lam_f = c.C1 * (1.0 + 2.0 * math.sqrt(h))
    return (1.0 - kappa) ** (2 * g) * gap**g / lam_f ** (2 * g)


def _check_orders(model, p, kappa):
    c = model.constants
    if c is None:
        raise InadmissibleStepError(f"model {model.name!r} has no fitted constants")
    if not 1 <= p < c.p0:
        raise InadmissibleStepError(f"need 1 <= p < p0 = {c.p0}, got p = {p}")
    if not 0.0 < kappa < 1.0:
        raise InadmissibleStepError(f"kappa must lie in (0, 1), got {kappa}")
    gap = 2.0 * model.linear.lambda_min - c.L2
    if gap <= 0:
        raise InadmissibleStepError(
            f"no admissible h: 2 lambda_1 - L2 = {gap:g} is not positive"
        )


def stepsize_bounds(model, theta, h, p=2, kappa=0.5):
    """The six step-size upper bounds; the drift bound is evaluated at ``h``."""
    _check_orders(model, p, kappa)
    c = model.constants
    lam1, lamd = model.linear.lambda_min, model.linear.lambda_max
    one_m = 1.0 - theta
    gap = 2.0 * lam1 - c.L2
    return {
        "linear_decay": _div(1.0, 2.0 * one_m * lam1),
        "moment_order": _div(c.p0 - p, one_m * (2.0 * c.p0 - p - 1.0) * lam1),
        "stiffness": _div(1.0, one_m * lamd),
        "contractivity_linear": _div(kappa**2 * gap, one_m**2 * lamd**2),
        "contractivity_drift": _drift_bound(model, kappa, h),
        "unit": 1.0,
    }


def _drift_root(model, kappa, tol=1e-12):
    # h - bound(h) is increasing in h; find where it changes sign on (0, 1]
    def excess(h):
        return h - _drift_bound(model, kappa, h)

    if excess(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo


def max_stable_stepsize(model, theta, p=2, kappa=0.5):
    """Largest ``h <= 1`` inside all six admissibility bounds.

    The admissible set is the open interval ``(0, h_max)``; ``h_max`` itself
    is its supremum.
    """
    bounds = stepsize_bounds(model, theta, 1.0, p, kappa)
    fixed = min(v for k, v in bounds.items() if k != "contractivity_drift")
    h = min(fixed, _drift_root(model, kappa))
    if not h > 0:
        raise InadmissibleStepError("no admissible h")
    return h


def admissibility(model, theta, h, p=2, kappa=0.5):
    """Names of the bounds that ``h`` violates (empty when admissible)."""
    bounds = stepsize_bounds(model, theta, h, p, kappa)
    return [name for name in BOUND_NAMES if not h < bounds[name]]


def ergodicity_warnings(model):
    gap1, gap2 = dissipativity_gap(model)
    out = []
    if gap1 <= 0:
        out.append(f"coercivity gap 2*lambda_1 - L1 = {gap1:.4g} is not positive")
    if gap2 <= 0:
        out.append(f"monotonicity gap 2*lambda_1 - L2 = {gap2:.4g} is not positive")
    return out


# ---------------------------------------------------------------------------
# batched steppers and trajectory simulation

class LTPEStepper:
    """Batched LTPE stepping that marks failed rows instead of raising."""

    method = "ltpe"

    def __init__(self, model, theta, h):
        self.model = model
        self.theta = float(theta)
        self.h = float(h)
        self.solver = ShiftedSolver(model.linear, self.theta, self.h)

    def __call__(self, y, dW):
        with np.errstate(over="ignore", invalid="ignore"):
            return solve_shifted(self.solver, _ltpe_rhs(self.model, self.theta, self.h, y, dW))


class EMStepper:
    method = "em"

    def __init__(self, model, theta, h):
        self.model = model
        self.theta = float(theta)
        self.h = float(h)

    def __call__(self, y, dW):
        with np.errstate(over="ignore", invalid="ignore"):
            return y + self.h * self.model.full_drift(y) + _g_dot(self.model, y, dW)


def make_stepper(model, theta, h, method="ltpe"):
    if method == "ltpe":
        return LTPEStepper(model, theta, h)
    if method == "em":
        return EMStepper(model, theta, h)
    raise ValueError(f"unknown method {method!r}")


def simulate_path(model, params, solver, y0, increments, record_every=1):
    """Apply :func:`ltpe_step` once per increment; returns the recorded states.

    ``increments`` has shape ``(N, m)`` (or ``(N, P, m)`` for a batch); the
    result stacks ``y0`` and every ``record_every``-th state after it.
    """
    y = np.asarray(y0, dtype=float).copy()
    out = [y.copy()]
    for n, dW in enumerate(np.asarray(increments, dtype=float), start=1):
        y = ltpe_step(model, params, solver, y, dW, step=n)
        if n % record_every == 0:
            out.append(y)
    return np.stack(out)


def default_record_every(T, n_steps):
    return 1 if T <= 10 else min(64, n_steps)


@dataclass
class Trajectory:
    times: np.ndarray
    steps: np.ndarray
    states: np.ndarray         # (n_records, P, d)
    failed_step: np.ndarray    # (P,), -1 when the path never failed
    paths: np.ndarray

    @property
    def final(self):
        return self.states[-1]

    @property
    def n_failed(self):
        return int(np.sum(self.failed_step >= 0))


def _resolve_steps(T, h, h_fine):
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * T:
        raise ValueError(f"T/h must be a positive integer (T={T}, h={h})")
    factor = int(round(h / h_fine))
    if factor < 1 or abs(factor * h_fine - h) > 1e-12 * h or factor & (factor - 1):
        raise ValueError(f"h/h_fine must be a power of two (h={h}, h_fine={h_fine})")
    return n, factor


def iterate_states(model, theta, h, T, seed=0, paths=(0,), x0=None, method="ltpe",
                   h_fine=None, block_steps=256):
    """Yield ``(n, y, failed)`` after every step ``n = 1..N``.

    Trajectory ``i`` is driven by the fine grid of path index ``paths[i]`` at
    step ``h_fine`` (default ``h``), coarsened to ``h``. Non-finite rows are
    frozen as NaN and ``failed[i]`` holds their first failing step (-1 if
    none). ``y`` is owned by the generator; copy it to keep it.
    """
    h_fine = h if h_fine is None else h_fine
    n_steps, factor = _resolve_steps(T, h, h_fine)
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    grid = generate(seed, model.noise_dim, T, h_fine, paths)
    stepper = make_stepper(model, theta, h, method)
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    y = np.array(np.broadcast_to(x0, (paths.size, model.dim)), dtype=float)
    failed = np.full(paths.size, -1, dtype=np.int64)
    block = max(1, min(block_steps, n_steps))
    n = 0
    while n < n_steps:
        stop = min(n + block, n_steps)
        dW = tree_sum(grid.block(n * factor, stop * factor), factor)
        for k in range(stop - n):
            y = stepper(y, dW[k])
            n += 1
            bad = ~np.all(np.isfinite(y), axis=-1)
            if np.any(bad):
                failed[bad & (failed < 0)] = n
                y[bad] = np.nan
            yield n, y, failed


def simulate(model, theta, h, T, seed=0, paths=(0,), x0=None, record_every=None,
             method="ltpe", h_fine=None):
    """Integrate a batch of trajectories and record states every ``record_every`` steps."""
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    n_steps = int(round(T / h))
    if record_every is None:
        record_every = default_record_every(T, n_steps)
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    rec_steps = [0]
    states = [np.array(np.broadcast_to(x0, (paths.size, model.dim)), dtype=float)]
    failed = np.full(paths.size, -1, dtype=np.int64)
    for n, y, failed in iterate_states(model, theta, h, T, seed, paths, x0, method, h_fine):
        if n % record_every == 0 or n == n_steps:
            rec_steps.append(n)
            states.append(y.copy())
    steps = np.asarray(rec_steps)
    return Trajectory(steps * h, steps, np.stack(states), failed.copy(), paths)
