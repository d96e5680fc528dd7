"""Semi-linear SDE models ``dX = (A X + f(X)) dt + g(X) dW``.

Drift and diffusion callables are vectorised: ``drift`` maps ``(..., d)`` to
``(..., d)`` and ``diffusion`` maps ``(..., d)`` to ``(..., d, m)`` (column
``j`` is ``g_j``).

The structural constants (coercivity ``L1``, monotonicity ``L2``, drift
growth ``C1``/``C2``) are not known in closed form for most models, so they
are fitted as empirical suprema over a deterministic sample cloud and frozen
with a safety margin.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .linop import SpectralOperator, apply

__all__ = [
    "ModelConstants",
    "SemiLinearModel",
    "AssumptionReport",
    "ModelError",
    "builtin_ginzburg_landau",
    "builtin_mean_reverting",
    "builtin_allen_cahn",
    "BUILTIN_MODELS",
    "make_model",
    "fitting_cloud",
    "empirical_suprema",
    "fit_constants",
    "check_assumptions",
    "dissipativity_gap",
]

FIT_RADIUS = 20.0
FIT_SAMPLES = 10**6
FIT_SEED = 20240101
FIT_MARGIN = 0.05


class ModelError(ValueError):
    """Invalid model parameters (e.g. a linear part that is not dissipative)."""


@dataclass(frozen=True)
class ModelConstants:
    L1: float
    L2: float
    p0: float
    p1: float
    C1: float
    C2: float

    def __post_init__(self):
        if self.p0 < 1:
            raise ModelError(f"p0 must be >= 1, got {self.p0}")
        if self.p1 <= 1:
            raise ModelError(f"p1 must be > 1, got {self.p1}")
        if self.C1 <= 0 or self.C2 <= 0:
            raise ModelError("C1 and C2 must be positive")


@dataclass(frozen=True, eq=False)
class SemiLinearModel:
    name: str
    linear: SpectralOperator
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    noise_dim: int
    gamma: float
    x0: np.ndarray
    constants: ModelConstants | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma < 1:
            raise ModelError(f"gamma must be >= 1, got {self.gamma}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != self.linear.dim:
            raise ModelError("initial state does not match the operator dimension")
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self):
        return self.linear.dim

    def full_drift(self, x):
        """``F(x) = A x + f(x)``."""
        return apply(self.linear, x) + self.drift(x)

    def describe(self):
        c = self.constants
        out = {"model": self.name, "d": self.dim, "m": self.noise_dim,
               "gamma": self.gamma, "lambda_1": self.linear.lambda_min,
               "lambda_d": self.linear.lambda_max, **self.params}
        if c is not None:
            out.update(L1=c.L1, L2=c.L2, p0=c.p0, p1=c.p1, C1=c.C1, C2=c.C2)
        return out


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def _ball(rng, n, d, radius, volume=True):
    direction = rng.standard_normal((n, d))
    direction /= np.maximum(_norm(direction), 1e-300)[:, None]
    u = rng.random(n)
    r = radius * (u ** (1.0 / d) if volume else u)
    return direction * r[:, None]


def _far_field(rng, n, d, radius, reach=1e4):
    direction = rng.standard_normal((n, d))
    axis = rng.integers(0, d, n // 2)
    direction[: n // 2] = 0.0
    direction[np.arange(n // 2), axis] = rng.choice([-1.0, 1.0], n // 2)
    direction /= np.maximum(_norm(direction), 1e-300)[:, None]
    r = radius * reach ** rng.random(n)
    return direction * r[:, None]


def fitting_cloud(d, radius=FIT_RADIUS, n=FIT_SAMPLES, seed=FIT_SEED):
    """Deterministic ``(x, y)`` pairs used to fit the structural constants.

    Three eighths of the pairs are volume-uniform in the ball and a quarter
    are uniform in radius (dense near the origin, where several suprema sit).
    An eighth lie far outside the ball at log-uniform radii up to
    ``1e4 * radius``, half of them along coordinate axes, so growth ratios
    that peak at infinity are still captured. The last quarter are
    near-diagonal pairs ``y = x + small`` probing the local one-sided
    Lipschitz constant.
    """
    rng = np.random.default_rng(seed)
    n_vol, n_rad, n_far = 3 * n // 8, n // 4, n // 8
    n_diag = n - n_vol - n_rad - n_far
    x = np.concatenate([_ball(rng, n_vol, d, radius),
                        _ball(rng, n_rad, d, radius, volume=False),
                        _far_field(rng, n_far, d, radius),
                        _ball(rng, n_diag, d, radius, volume=False)])
    y = np.concatenate([_ball(rng, n_vol, d, radius),
                        _ball(rng, n_rad, d, radius, volume=False),
                        _far_field(rng, n_far, d, radius),
                        np.zeros((n_diag, d))])
    eps = _ball(rng, n_diag, d, 1.0) * (1e-3 * (1.0 + _norm(x[-n_diag:])))[:, None]
    y[-n_diag:] = x[-n_diag:] + eps
    return x, y


def _ratios(model, x, y, p0, p1):
    fx, fy = model.drift(x), model.drift(y)
    gx, gy = model.diffusion(x), model.diffusion(y)
    nx, ny = _norm(x), _norm(y)
    dx = x - y
    dist2 = np.sum(dx * dx, axis=-1)
    keep = dist2 > 0
    g2 = np.sum(gx * gx, axis=(-2, -1))
    dg2 = np.sum((gx - gy) ** 2, axis=(-2, -1))
    coercive = (2.0 * np.sum(x * fx, axis=-1) + (2 * p0 - 1) * g2) / (1.0 + nx**2)
    monotone = (2.0 * np.sum(dx * (fx - fy), axis=-1)[keep]
                + (2 * p1 - 1) * dg2[keep]) / dist2[keep]
    lipschitz = (_norm(fx - fy)[keep]
                 / ((1.0 + nx + ny)[keep] ** (model.gamma - 1) * np.sqrt(dist2[keep])))
    growth = _norm(fx) / (1.0 + nx) ** model.gamma
    return {"L1": coercive, "L2": monotone, "C1": lipschitz, "C2": growth}


def empirical_suprema(model, x, y, p0, p1):
    """Raw (un-inflated) sample maxima of the four constant-defining ratios."""
    return {k: float(np.max(v)) for k, v in _ratios(model, x, y, p0, p1).items()}


def _inflate(value, positive=False):
    if positive:
        return value * (1.0 + FIT_MARGIN)
    return value + FIT_MARGIN * max(abs(value), 1.0)


def fit_constants(model, p0, p1, radius=FIT_RADIUS, n=FIT_SAMPLES, seed=FIT_SEED):
    """Return ``model`` with fitted and frozen :class:`ModelConstants`."""
    x, y = fitting_cloud(model.dim, radius, n, seed)
    sup = empirical_suprema(model, x, y, p0, p1)
    tiny = 1e-12
    constants = ModelConstants(
        L1=_inflate(sup["L1"]),
        L2=_inflate(sup["L2"]),
        p0=float(p0),
        p1=float(p1),
        C1=max(_inflate(sup["C1"], positive=True), tiny),
        C2=max(_inflate(sup["C2"], positive=True), tiny),
    )
    return replace(model, constants=constants)


@dataclass
class AssumptionReport:
    model: str
    n_samples: int
    radius: float
    seed: int
    maxima: dict
    stored: dict
    violations: list

    @property
    def ok(self):
        return not self.violations


def check_assumptions(model, n_samples=10**5, radius=10.0, seed=0):
    """Spot-check coercivity, monotonicity and drift growth on random pairs.

    Pairs are volume-uniform in the ball of ``radius``. A check is violated
    when its sample maximum exceeds the stored constant by more than 1e-9
    relative. The linear part is checked too (``<x, Ax> <= -lambda_1 |x|^2``).
    """
    if n_samples < 1 or not radius > 0:
        raise ValueError("need n_samples >= 1 and radius > 0")
    c = model.constants
    if c is None:
        raise ModelError(f"model {model.name!r} has no constants; call fit_constants first")
    rng = np.random.default_rng(seed)
    x = _ball(rng, n_samples, model.dim, radius)
    y = _ball(rng, n_samples, model.dim, radius)
    ratios = _ratios(model, x, y, c.p0, c.p1)
    maxima = {"L1": float(np.max(ratios["L1"])),
              "L2": float(np.max(ratios["L2"])) if ratios["L2"].size else -np.inf,
              "C2": float(np.max(ratios["C2"]))}
    nx2 = np.sum(x * x, axis=-1)
    keep = nx2 > 0
    lin = (np.sum(x * apply(model.linear, x), axis=-1)[keep] / nx2[keep]
           + model.linear.lambda_min)
    maxima["A"] = float(np.max(lin)) if lin.size else -np.inf
    stored = {"L1": c.L1, "L2": c.L2, "C2": c.C2, "A": 0.0}
    violations = [k for k in ("L1", "L2", "C2", "A")
                  if maxima[k] > stored[k] + 1e-9 * max(1.0, abs(stored[k]))]
    return AssumptionReport(model.name, n_samples, radius, seed, maxima, stored, violations)


def dissipativity_gap(model):
    """``(2 lambda_1 - L1, 2 lambda_1 - L2)``."""
    c = model.constants
    two_lam = 2.0 * model.linear.lambda_min
    return two_lam - c.L1, two_lam - c.L2


@functools.lru_cache(maxsize=32)
def builtin_ginzburg_landau(alpha=-2.0, sigma=0.5, x0=1.0, p0=13.0, p1=2.0):
    """Stochastic Ginzburg-Landau: ``dX = (-X^3 + (alpha + sigma^2/2) X) dt + sigma X dW``."""
    a = alpha + 0.5 * sigma**2
    if a >= 0:
        raise ModelError(
            f"not dissipative: alpha + sigma^2/2 = {a:g} must be negative"
        )

    def drift(x):
        return -(x * x * x)

    def diffusion(x):
        return (sigma * x)[..., None]

    model = SemiLinearModel(
        name="ginzburg_landau",
        linear=SpectralOperator.scalar(a),
        drift=drift,
        diffusion=diffusion,
        noise_dim=1,
        gamma=3.0,
        x0=np.array([x0], dtype=float),
        params={"alpha": alpha, "sigma": sigma, "x0": x0},
    )
    return fit_constants(model, p0, p1)


@functools.lru_cache(maxsize=32)
def builtin_mean_reverting(b=0.3, alpha=1.0, beta=0.6, sigma=0.2, x0=1.0, p0=13.0, p1=2.0):
    """Mean-reverting model ``dX = (b - alpha X - beta X^3) dt + sigma X^2 dW``."""
    if alpha <= 0 or beta <= 0:
        raise ModelError(f"need alpha > 0 and beta > 0, got alpha={alpha}, beta={beta}")

    def drift(x):
        return b - beta * (x * x * x)

    def diffusion(x):
        return (sigma * (x * x))[..., None]

    model = SemiLinearModel(
        name="mean_reverting",
        linear=SpectralOperator.scalar(-alpha),
        drift=drift,
        diffusion=diffusion,
        noise_dim=1,
        gamma=3.0,
        x0=np.array([x0], dtype=float),
        params={"b": b, "alpha": alpha, "beta": beta, "sigma": sigma, "x0": x0},
    )
    return fit_constants(model, p0, p1)


@functools.lru_cache(maxsize=32)
def builtin_allen_cahn(K=4, p0=13.0, p1=2.0):
    """Finite-difference stochastic Allen-Cahn system on ``K - 1`` interior nodes.

    ``A = K^2 tridiag(1, -2, 1)``, ``f_i(X) = X_i - X_i^3``, one noise column
    with entries ``sin(X_i) + 1``, initial state all ones.
    """
    K = int(K)
    if K < 2:
        raise ModelError(f"need K >= 2 grid intervals, got {K}")
    k2 = float(K * K)

    def drift(x):
        return x - x * x * x

    def diffusion(x):
        return (np.sin(x) + 1.0)[..., None]

    model = SemiLinearModel(
        name="allen_cahn",
        linear=SpectralOperator.tridiagonal(K - 1, -2.0 * k2, k2),
        drift=drift,
        diffusion=diffusion,
        noise_dim=1,
        gamma=3.0,
        x0=np.ones(K - 1),
        params={"K": K},
    )
    return fit_constants(model, p0, p1)


BUILTIN_MODELS = {
    "ginzburg_landau": builtin_ginzburg_landau,
    "mean_reverting": builtin_mean_reverting,
    "allen_cahn": builtin_allen_cahn,
}


def make_model(name, **params):
    """Look up a built-in model by name and build it with ``params``."""
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ModelError(
            f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}"
        ) from None
    return factory(**params)
