"""Finite-dimensional input-delay model for the unstable modes.

The state is ``X1 = (u_D, w_1, ..., w_n)`` and the model reads
``X1' = A1 X1 + B1 alpha(t - D)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .expm import mat_exp
from .spectral import SpectralBasis, count_unstable


@dataclass(frozen=True)
class ReducedModel:
    n: int
    A1: np.ndarray
    B1: np.ndarray
    D: float
    lambdas: np.ndarray
    margin: float

    def __post_init__(self):
        if self.D < 0 or not np.isfinite(self.D):
            raise ValueError(f"delay must be finite and >= 0, got {self.D}")
        for name in ("A1", "B1", "lambdas"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        k = self.n + 1
        if self.A1.shape != (k, k) or self.B1.shape != (k,):
            raise ValueError(f"A1/B1 shapes {self.A1.shape}/{self.B1.shape} do not match n={self.n}")

    @property
    def size(self) -> int:
        return self.n + 1

    @property
    def a(self) -> np.ndarray:
        return self.A1[1:, 0].copy()

    @property
    def b(self) -> np.ndarray:
        return self.B1[1:].copy()

    def delayed_input(self, D: float | None = None) -> np.ndarray:
        """``exp(-D A1) B1``, the input vector of the delay-free Artstein system."""
        D = self.D if D is None else D
        return mat_exp(self.A1, -D) @ self.B1

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "D": self.D,
            "A1": self.A1.tolist(),
            "B1": self.B1.tolist(),
            "lambdas": self.lambdas.tolist(),
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReducedModel":
        return cls(int(data["n"]), np.array(data["A1"]), np.array(data["B1"]),
                   float(data["D"]), np.array(data["lambdas"]), float(data["margin"]))


def model_from_coefficients(lambdas, a, b, D=0.0, margin=float("nan")) -> ReducedModel:
    """Assemble ``(A1, B1)`` directly from eigenvalues and coupling coefficients."""
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = lambdas.size
    if a.size != n or b.size != n:
        raise ValueError("lambdas, a and b must have the same length")
    A1 = np.zeros((n + 1, n + 1))
    A1[1:, 0] = a
    A1[1:, 1:] = np.diag(lambdas)
    B1 = np.concatenate([[1.0], b])
    return ReducedModel(n, A1, B1, float(D), lambdas, margin)


def build_reduced(basis: SpectralBasis, D: float) -> ReducedModel:
    """Reduced model built from the nonnegative eigenvalues of ``basis``.

    Raises
    ------
    SpectralError
        Propagated from :func:`count_unstable` when the basis does not reach
        the stable tail.
    """
    n, eta = count_unstable(basis)
    if n + 1 > len(basis.modes):
        raise ValueError(f"model needs {n + 1} modes, basis has {len(basis.modes)}")
    return model_from_coefficients(basis.lambdas[:n], basis.a[:n], basis.b[:n], D, eta)


def controllability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    col = np.asarray(B, dtype=float)
    cols = [col]
    for _ in range(A.shape[0] - 1):
        col = A @ col
        cols.append(col)
    return np.column_stack(cols)


def kalman_check(model: ReducedModel):
    """Kalman rank test on ``(A1, B1)`` by determinant magnitude.

    The test uses the undelayed pair: ``exp(-D A1)`` commutes with ``A1`` and
    is invertible, so the rank does not depend on ``D``.

    Returns
    -------
    rank_ok : bool
    det_value : float
    """
    C = controllability_matrix(model.A1, model.B1)
    det = float(np.linalg.det(C))
    scale = max(1.0, float(np.prod(np.linalg.norm(C, axis=0))))
    return abs(det) > 1e-10 * scale, det


def vandermonde_det(model: ReducedModel) -> float:
    """Closed form of ``det(B1, A1 B1, ..., A1^n B1)``.

    Equal to ``prod_j (a_j + lambda_j b_j) * prod_{i<j} (lambda_j - lambda_i)``.

    Raises
    ------
    ValueError
        If two retained eigenvalues coincide within tolerance.
    """
    lam = model.lambdas
    gains = model.a + lam * model.b
    tol = 1e-9 * max(1.0, float(np.max(np.abs(lam), initial=0.0)))
    vdm = 1.0
    for i, j in combinations(range(lam.size), 2):
        diff = lam[j] - lam[i]
        if abs(diff) <= tol:
            raise ValueError(f"eigenvalues {i + 1} and {j + 1} coincide; Vandermonde factor vanishes")
        vdm *= diff
    return float(np.prod(gains) * vdm)


def delayed_rank(model: ReducedModel, D: float) -> int:
    """Rank of the controllability matrix of ``(A1, exp(-D A1) B1)``."""
    C = controllability_matrix(model.A1, model.delayed_input(D))
    return int(np.linalg.matrix_rank(C))
