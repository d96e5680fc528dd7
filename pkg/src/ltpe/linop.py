"""Structured negative-definite operators and the shifted solve ``(I - theta h A) y = b``.

All kernels act on the trailing axis, so a batch of states with shape
``(M, d)`` is handled in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpectralOperator",
    "ShiftedSolver",
    "apply",
    "apply_shifted",
    "solve_shifted",
    "thomas_solve",
]

STRUCTURES = ("scalar", "diagonal", "tridiagonal-toeplitz", "dense-symmetric")


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Self-adjoint negative-definite matrix ``A`` stored by structure.

    ``eig_mags`` holds the eigenvalues of ``-A`` in non-decreasing order.
    Use the ``scalar``/``diagonal``/``tridiagonal``/``dense`` constructors
    rather than the raw initialiser.
    """

    dim: int
    structure: str
    eig_mags: np.ndarray
    data: dict = field(repr=False)

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown operator structure {self.structure!r}")
        mags = np.asarray(self.eig_mags, dtype=float)
        if mags.shape != (self.dim,):
            raise ValueError("need one eigenvalue magnitude per dimension")
        if not mags[0] > 0:
            raise ValueError(
                f"operator is not negative definite: smallest magnitude {mags[0]:g}"
            )
        if np.any(np.diff(mags) < 0):
            raise ValueError("eigenvalue magnitudes must be non-decreasing")

    @classmethod
    def scalar(cls, a):
        a = float(a)
        return cls(1, "scalar", np.array([-a]), {"a": a})

    @classmethod
    def diagonal(cls, diag):
        diag = np.asarray(diag, dtype=float)
        return cls(diag.size, "diagonal", np.sort(-diag), {"diag": diag})

    @classmethod
    def tridiagonal(cls, dim, main, off):
        """Symmetric Toeplitz tridiagonal matrix with constant diagonals."""
        dim = int(dim)
        i = np.arange(1, dim + 1)
        eig = main + 2.0 * off * np.cos(i * np.pi / (dim + 1))
        return cls(dim, "tridiagonal-toeplitz", np.sort(-eig),
                   {"main": float(main), "off": float(off)})

    @classmethod
    def dense(cls, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("dense operator must be a square matrix")
        if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * np.abs(matrix).max()):
            raise ValueError("dense operator must be symmetric")
        w, v = np.linalg.eigh(matrix)
        # eigh sorts w ascending, so -w is descending
        return cls(matrix.shape[0], "dense-symmetric", (-w)[::-1].copy(),
                   {"matrix": matrix, "eigvals": w, "eigvecs": v})

    @property
    def lambda_min(self):
        return float(self.eig_mags[0])

    @property
    def lambda_max(self):
        return float(self.eig_mags[-1])

    def to_dense(self):
        if self.structure == "scalar":
            return np.array([[self.data["a"]]])
        if self.structure == "diagonal":
            return np.diag(self.data["diag"])
        if self.structure == "tridiagonal-toeplitz":
            d, main, off = self.dim, self.data["main"], self.data["off"]
            return main * np.eye(d) + off * (np.eye(d, k=1) + np.eye(d, k=-1))
        return self.data["matrix"].copy()


def _check_dim(op, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != op.dim:
        raise ValueError(f"dimension mismatch: operator has d={op.dim}, vector has {x.shape[-1]}")
    return x


def apply(operator, x):
    """``A x`` along the last axis."""
    x = _check_dim(operator, x)
    s = operator.structure
    if s == "scalar":
        return operator.data["a"] * x
    if s == "diagonal":
        return operator.data["diag"] * x
    if s == "tridiagonal-toeplitz":
        out = operator.data["main"] * x
        off = operator.data["off"]
        out[..., 1:] += off * x[..., :-1]
        out[..., :-1] += off * x[..., 1:]
        return out
    return x @ operator.data["matrix"].T


def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system along the last axis of ``rhs``.

    ``lower[i]`` multiplies ``x[i-1]`` and ``upper[i]`` multiplies ``x[i+1]``;
    ``lower[0]`` and ``upper[-1]`` are ignored. Plain Thomas elimination, no
    pivoting: the callers only pass diagonally dominant systems.
    """
    cp, inv = _thomas_factor(lower, diag, upper)
    return _thomas_apply(lower, cp, inv, rhs)


def _thomas_factor(lower, diag, upper):
    n = len(diag)
    cp = np.zeros(n)
    inv = np.zeros(n)
    inv[0] = 1.0 / diag[0]
    cp[0] = upper[0] * inv[0] if n > 1 else 0.0
    for i in range(1, n):
        inv[i] = 1.0 / (diag[i] - lower[i] * cp[i - 1])
        cp[i] = upper[i] * inv[i] if i < n - 1 else 0.0
    return cp, inv


def _thomas_apply(lower, cp, inv, rhs):
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[-1]
    y = np.empty_like(rhs)
    y[..., 0] = rhs[..., 0] * inv[0]
    for i in range(1, n):
        y[..., i] = (rhs[..., i] - lower[i] * y[..., i - 1]) * inv[i]
    for i in range(n - 2, -1, -1):
        y[..., i] -= cp[i] * y[..., i + 1]
    return y


@dataclass(frozen=True, eq=False)
class ShiftedSolver:
    """Factorisation of ``I - theta h A``, built once per ``(theta, h)``."""

    operator: SpectralOperator
    theta: float
    h: float
    factors: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        op, c = self.operator, self.theta * self.h
        f = self.factors
        if op.structure == "scalar":
            f["inv"] = 1.0 / (1.0 - c * op.data["a"])
        elif op.structure == "diagonal":
            f["inv"] = 1.0 / (1.0 - c * op.data["diag"])
        elif op.structure == "tridiagonal-toeplitz":
            n = op.dim
            lower = np.full(n, -c * op.data["off"])
            diag = np.full(n, 1.0 - c * op.data["main"])
            f["lower"] = lower
            f["cp"], f["inv"] = _thomas_factor(lower, diag, lower)
        else:
            v = op.data["eigvecs"]
            f["eigvecs"] = v
            f["inv"] = 1.0 / (1.0 - c * op.data["eigvals"])

    @property
    def condition_number(self):
        return (1.0 + self.theta * self.h * self.operator.lambda_max) / (
            1.0 + self.theta * self.h * self.operator.lambda_min
        )


def apply_shifted(solver, y):
    """``(I - theta h A) y``."""
    y = _check_dim(solver.operator, y)
    if solver.theta == 0.0:
        return y.copy()
    return y - solver.theta * solver.h * apply(solver.operator, y)


def solve_shifted(solver, b):
    """Solve ``(I - theta h A) y = b`` exactly for the operator's structure."""
    b = _check_dim(solver.operator, b)
    if solver.theta == 0.0:
        return b.copy()
    f = solver.factors
    s = solver.operator.structure
    if s in ("scalar", "diagonal"):
        return b * f["inv"]
    if s == "tridiagonal-toeplitz":
        return _thomas_apply(f["lower"], f["cp"], f["inv"], b)
    v = f["eigvecs"]
    return ((b @ v) * f["inv"]) @ v.T
