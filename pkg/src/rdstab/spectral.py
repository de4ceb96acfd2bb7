"""Dirichlet eigenproblem for ``A = d^2/dx^2 + c(x)`` on ``(0, L)``.

The operator is discretized with second-order central differences on a
uniform grid; the interior tridiagonal matrix is symmetric, so the modes are
obtained from a symmetric tridiagonal eigen-solve and are orthonormal in the
trapezoid inner product used everywhere else in the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .exceptions import SpectralError

MIN_GRID = 16


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def trapezoid(values, grid):
    """Composite trapezoid rule along the last axis on a uniform grid."""
    return np.trapezoid(values, grid, axis=-1)


@dataclass(frozen=True)
class OperatorSpec:
    """Length of the interval and reaction coefficient sampled on a uniform grid.

    ``c`` holds ``G + 1`` samples on ``linspace(0, L, G + 1)``; values between
    samples are linearly interpolated.
    """

    L: float
    c: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be a positive finite length, got {self.L}")
        c = _frozen(np.atleast_1d(self.c))
        if c.ndim != 1 or c.size < MIN_GRID + 1:
            raise ValueError(f"c needs at least {MIN_GRID + 1} samples, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("c samples must be finite")
        object.__setattr__(self, "c", c)

    @classmethod
    def constant(cls, L: float, value: float, samples: int = MIN_GRID):
        return cls(L, np.full(samples + 1, float(value)))

    @classmethod
    def from_function(cls, L: float, func: Callable, samples: int = 1024):
        x = np.linspace(0.0, L, samples + 1)
        return cls(L, np.broadcast_to(np.asarray(func(x), dtype=float), x.shape))

    @classmethod
    def from_csv(cls, path, L: float | None = None):
        """Read a two-column ``x, c(x)`` table and resample it on a uniform grid.

        The first column must start at 0; its last entry is the interval length
        unless ``L`` is given, in which case it must agree.
        """
        xs, cs = [], []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    xs.append(float(row[0]))
                    cs.append(float(row[1]))
                except (ValueError, IndexError):
                    if not xs:  # header line
                        continue
                    raise ValueError(f"{path}:{lineno}: expected two numeric columns")
        xs, cs = np.asarray(xs), np.asarray(cs)
        if xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError(f"{path}: x column must be strictly increasing with >= 2 rows")
        if abs(xs[0]) > 1e-12:
            raise ValueError(f"{path}: x column must start at 0")
        length = xs[-1] if L is None else float(L)
        if abs(xs[-1] - length) > 1e-9 * max(1.0, length):
            raise ValueError(f"{path}: table ends at x={xs[-1]}, expected L={length}")
        samples = max(MIN_GRID, xs.size - 1)
        grid = np.linspace(0.0, length, samples + 1)
        return cls(length, np.interp(grid, xs, cs))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.c.size)

    def c_on(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of ``c`` at the points ``x``."""
        return np.interp(x, self.grid, self.c)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.c == self.c[0]))


@dataclass(frozen=True)
class EigenMode:
    index: int
    lam: float
    samples: np.ndarray
    a_coef: float
    b_coef: float
    flux_L: float


@dataclass(frozen=True)
class SpectralBasis:
    spec: OperatorSpec
    modes: tuple
    grid: np.ndarray = field(repr=False)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([m.lam for m in self.modes])

    @property
    def a(self) -> np.ndarray:
        return np.array([m.a_coef for m in self.modes])

    @property
    def b(self) -> np.ndarray:
        return np.array([m.b_coef for m in self.modes])

    @property
    def functions(self) -> np.ndarray:
        """Eigenfunction samples as a ``(num_modes, grid size)`` array."""
        return np.array([m.samples for m in self.modes])

    @property
    def c_grid(self) -> np.ndarray:
        return self.spec.c_on(self.grid)

    def gram(self) -> np.ndarray:
        E = self.functions
        return trapezoid(E[:, None, :] * E[None, :, :], self.grid)

    def project(self, profile) -> np.ndarray:
        """Modal coefficients ``<profile, e_j>`` of a profile sampled on the grid."""
        profile = np.asarray(profile, dtype=float)
        if profile.shape != self.grid.shape:
            raise ValueError(f"profile has shape {profile.shape}, grid has {self.grid.shape}")
        return trapezoid(self.functions * profile, self.grid)

    def synthesize(self, coefficients) -> np.ndarray:
        """Profile ``sum_j w_j e_j`` on the grid (rows for a batch of coefficients)."""
        return np.asarray(coefficients) @ self.functions


def _one_sided_slopes(v, h):
    # second-order one-sided differences at x = 0 and x = L
    left = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    right = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return left, right


def modal_coefficients(mode: EigenMode | np.ndarray, spec: OperatorSpec, grid=None):
    """Coupling coefficients ``(a_j, b_j)`` of a normalized eigenfunction.

    ``a_j = (1/L) int x c(x) e_j(x) dx`` and ``b_j = -(1/L) int x e_j(x) dx``,
    both by the composite trapezoid rule on ``grid`` (default: a uniform grid
    matching the number of samples).
    """
    samples = mode.samples if isinstance(mode, EigenMode) else np.asarray(mode, dtype=float)
    if grid is None:
        grid = np.linspace(0.0, spec.L, samples.size)
    grid = np.asarray(grid, dtype=float)
    if grid.shape != samples.shape:
        raise ValueError(f"mode has {samples.size} samples but grid has {grid.size} points")
    if abs(grid[0]) > 1e-12 or abs(grid[-1] - spec.L) > 1e-9 * spec.L:
        raise ValueError("grid does not span [0, L] of the operator")
    L = spec.L
    a = trapezoid(grid * spec.c_on(grid) * samples, grid) / L
    b = -trapezoid(grid * samples, grid) / L
    return float(a), float(b)


def solve_eigen(spec: OperatorSpec, num_modes: int, grid_points: int) -> SpectralBasis:
    """Largest ``num_modes`` Dirichlet eigenpairs of ``d^2/dx^2 + c``.

    Parameters
    ----------
    spec : OperatorSpec
    num_modes : int
        Number of modes returned, ordered by decreasing eigenvalue.
    grid_points : int
        Number of grid intervals ``G``; the grid has ``G + 1`` nodes.

    Returns
    -------
    SpectralBasis
        Eigenfunctions are L2-normalized by the trapezoid rule, vanish at both
        ends and have positive slope at ``x = 0``.

    Raises
    ------
    ValueError
        If ``num_modes > grid_points / 8`` or the grid is too coarse.
    SpectralError
        If the eigen-solver fails or two eigenvalues coincide.
    """
    G = int(grid_points)
    num_modes = int(num_modes)
    if G < MIN_GRID:
        raise ValueError(f"grid_points must be >= {MIN_GRID}, got {G}")
    if num_modes < 1 or num_modes > G / 8:
        raise ValueError(f"num_modes={num_modes} violates 1 <= num_modes <= grid_points/8 = {G / 8}")
    x = np.linspace(0.0, spec.L, G + 1)
    h = spec.L / G
    c = spec.c_on(x)
    diag = -2.0 / h**2 + c[1:-1]
    off = np.full(G - 2, 1.0 / h**2)
    interior = G - 1
    try:
        lam, vecs = eigh_tridiagonal(diag, off, select="i",
                                     select_range=(interior - num_modes, interior - 1))
    except (LinAlgError, ValueError) as exc:
        raise SpectralError(f"tridiagonal eigen-solve failed: {exc}") from exc
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    tol = 1e-9 * max(1.0, abs(lam[0]))
    if np.any(np.abs(np.diff(lam)) <= tol):
        raise SpectralError("duplicate eigenvalues within tolerance; discretization is degenerate")

    modes = []
    for j in range(num_modes):
        v = np.zeros(G + 1)
        v[1:-1] = vecs[:, j]
        slope0, _ = _one_sided_slopes(v, h)
        if slope0 < 0:
            v = -v
        v /= np.sqrt(trapezoid(v * v, x))
        _, flux = _one_sided_slopes(v, h)
        v = _frozen(v)
        a, b = modal_coefficients(v, spec, x)
        modes.append(EigenMode(j + 1, float(lam[j]), v, a, b, float(flux)))
    return SpectralBasis(spec, tuple(modes), _frozen(x))


def count_unstable(basis: SpectralBasis | Sequence[float]):
    """Number ``n`` of nonnegative eigenvalues and the margin ``-lambda_{n+1}/2``.

    Raises
    ------
    SpectralError
        If no computed eigenvalue is strictly negative, so the stable tail is
        not separated.
    """
    lam = basis.lambdas if isinstance(basis, SpectralBasis) else np.asarray(basis, dtype=float)
    lam = np.sort(lam)[::-1]
    n = int(np.count_nonzero(lam >= 0.0))
    if n >= lam.size:
        raise SpectralError("all computed eigenvalues are nonnegative; increase num_modes")
    return n, float(-lam[n] / 2.0)


def coupling_norms(basis: SpectralBasis):
    """L2 norms of ``a(x) = x c(x) / L`` and ``b(x) = -x / L`` on the basis grid."""
    x = basis.grid
    L = basis.spec.L
    a = x * basis.c_grid / L
    b = -x / L
    return float(np.sqrt(trapezoid(a * a, x))), float(np.sqrt(trapezoid(b * b, x)))


def sign_changes(samples) -> int:
    """Interior sign changes of a sampled function (exact zeros skipped)."""
    s = np.sign(np.asarray(samples)[1:-1])
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def basis_to_dict(basis: SpectralBasis) -> dict:
    n, eta = count_unstable(basis)
    return {
        "L": basis.spec.L,
        "grid_points": basis.grid.size - 1,
        "eigenvalues": basis.lambdas.tolist(),
        "a": basis.a.tolist(),
        "b": basis.b.tolist(),
        "flux_L": [m.flux_L for m in basis.modes],
        "n_unstable": n,
        "margin": eta,
    }


def write_modes_csv(basis: SpectralBasis, path) -> None:
    """Eigenfunction samples in wide form: ``x, e_1, ..., e_m``."""
    path = Path(path)
    data = np.column_stack([basis.grid, basis.functions.T])
    header = ",".join(["x"] + [f"e_{m.index}" for m in basis.modes])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
