"""Gain design for the Artstein-reduced pair and the associated certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ControllabilityError, NotHurwitzError
from .expm import mat_exp
from .reduction import ReducedModel, controllability_matrix, kalman_check

__all__ = ["GainSet", "mat_exp", "parse_poles", "place_poles", "solve_lyapunov",
           "compute_M", "design_gains", "spectrum_error", "charpoly_error"]

M_SAFETY = 1.1
M_FLOOR = 1e-6


@dataclass(frozen=True)
class GainSet:
    D: float
    K1: np.ndarray
    P: np.ndarray
    poles: tuple
    M: float
    Acl: np.ndarray
    a_norm: float = float("nan")
    b_norm: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("K1", "P", "Acl"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "K1": self.K1.tolist(),
            "P": self.P.tolist(),
            "poles": [[p.real, p.imag] for p in self.poles],
            "M": self.M,
            "Acl": self.Acl.tolist(),
            "a_norm": self.a_norm,
            "b_norm": self.b_norm,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GainSet":
        poles = tuple(complex(re_, im) for re_, im in data["poles"])
        return cls(float(data["D"]), np.array(data["K1"]), np.array(data["P"]), poles,
                   float(data["M"]), np.array(data["Acl"]), float(data["a_norm"]),
                   float(data["b_norm"]), dict(data.get("meta", {})))


def parse_poles(text: str) -> list:
    """Parse ``"-0.5,-1"`` or ``"-1,-2±3i"`` into a list of complex poles.

    A token ``a±bi`` (also ``a+-bi`` or ``a+/-bi``) expands into the
    conjugate pair.
    """
    poles = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            for sep in ("±", "+/-", "+-"):
                if sep in token:
                    re_part, im_part = token.split(sep, 1)
                    re_, im = float(re_part), float(im_part.strip().rstrip("ij"))
                    poles.extend([complex(re_, im), complex(re_, -im)])
                    break
            else:
                poles.append(complex(token.replace("i", "j")))
        except ValueError:
            raise ValueError(f"cannot parse pole {token!r}") from None
    if not poles:
        raise ValueError("no poles given")
    return poles


def _check_conjugate_closed(poles, tol=1e-12):
    p = np.asarray(poles, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(p))))
    cost = np.abs(p[:, None] - np.conj(p)[None, :])
    rows, cols = linear_sum_assignment(cost)
    if np.max(cost[rows, cols]) > tol * scale:
        raise ValueError("poles are not closed under complex conjugation")


def _poly_at_matrix(coeffs, A):
    # Horner evaluation of a monic polynomial (highest degree first)
    result = np.zeros_like(A)
    ident = np.eye(A.shape[0])
    for c in coeffs:
        result = result @ A + c * ident
    return result


def place_poles(model: ReducedModel, poles, D: float | None = None) -> np.ndarray:
    """Gain ``K1`` with ``spectrum(A1 + exp(-D A1) B1 K1) = poles``.

    Single-input Ackermann formula on the pair ``(A1, exp(-D A1) B1)``; the
    closed loop is written with a plus sign, ``A + B K``.

    Parameters
    ----------
    model : ReducedModel
    poles : sequence of complex
        ``n + 1`` values closed under conjugation, each with negative real part.
        Repeated values are allowed.
    D : float, optional
        Delay; defaults to ``model.D``.

    Returns
    -------
    (n + 1,) ndarray

    Raises
    ------
    ControllabilityError
        If the pair fails the Kalman test.
    ValueError
        If the pole list has the wrong length, is not conjugate-closed or has
        a pole with nonnegative real part.
    """
    poles = [complex(p) for p in poles]
    k = model.size
    if len(poles) != k:
        raise ValueError(f"expected {k} poles, got {len(poles)}")
    if any(p.real >= 0 for p in poles):
        raise ValueError("all requested poles must have negative real part")
    _check_conjugate_closed(poles)
    rank_ok, _ = kalman_check(model)
    if not rank_ok:
        raise ControllabilityError("(A1, B1) is not controllable")
    B = model.delayed_input(D)
    C = controllability_matrix(model.A1, B)
    coeffs = np.real(np.poly(poles))
    last_row = np.linalg.solve(C.T, np.eye(k)[-1])
    return -last_row @ _poly_at_matrix(coeffs, model.A1)


def closed_loop(model: ReducedModel, K1, D: float | None = None) -> np.ndarray:
    return model.A1 + np.outer(model.delayed_input(D), np.asarray(K1, dtype=float))


def spectrum_error(Acl, poles) -> float:
    """Largest distance between eigenvalues of ``Acl`` and the optimally matched poles."""
    ev = np.linalg.eigvals(np.asarray(Acl, dtype=float))
    p = np.asarray(poles, dtype=complex)
    cost = np.abs(ev[:, None] - p[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(np.max(cost[rows, cols]))


def charpoly_error(Acl, poles) -> float:
    """Largest coefficient mismatch between ``det(sI - Acl)`` and ``prod (s - p)``.

    Insensitive to the ill-conditioning of repeated eigenvalues.
    """
    return float(np.max(np.abs(np.poly(np.asarray(Acl, dtype=float)) - np.real(np.poly(poles)))))


def solve_lyapunov(Acl) -> np.ndarray:
    """Symmetric ``P`` with ``P Acl + Acl^T P = -I`` via the Kronecker form.

    Raises
    ------
    NotHurwitzError
        If ``Acl`` has an eigenvalue with nonnegative real part or the
        computed ``P`` is not positive definite.
    """
    A = np.asarray(Acl, dtype=float)
    k = A.shape[0]
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise NotHurwitzError("closed-loop matrix is not Hurwitz")
    ident = np.eye(k)
    # vec(P A) = (A^T kron I) vec P, vec(A^T P) = (I kron A^T) vec P, column-major vec
    op = np.kron(A.T, ident) + np.kron(ident, A.T)
    vecP = np.linalg.solve(op, -ident.reshape(-1, order="F"))
    P = vecP.reshape(k, k, order="F")
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise NotHurwitzError("Lyapunov solution is not positive definite")
    return P


def lyapunov_residual(P, Acl) -> float:
    P = np.asarray(P)
    A = np.asarray(Acl)
    return float(np.linalg.norm(P @ A + A.T @ P + np.eye(A.shape[0]), "fro"))


def compute_M(model: ReducedModel, K1, P, a_norm: float, b_norm: float,
              safety: float = M_SAFETY) -> float:
    """Weight of the finite-dimensional part in the closed-loop Lyapunov functional.

    ``safety`` times the lower bound built from ``||b||^2 ||K1||^2``,
    ``2 ||a||^2``, ``max(lambda_j) / lambda_min(P)`` and
    ``D exp(2 D ||A1||) ||B1||^2 ||K1||^2``; never below ``1e-6``.
    """
    lam_min = float(np.min(np.linalg.eigvalsh(np.asarray(P, dtype=float))))
    if lam_min <= 0:
        raise NotHurwitzError("P must be positive definite")
    K1 = np.asarray(K1, dtype=float)
    k2 = float(K1 @ K1)
    b2 = float(model.B1 @ model.B1)
    lam_max = float(np.max(model.lambdas)) if model.n else 0.0
    norm_A = float(np.linalg.norm(model.A1, 2))
    D = model.D
    bound = (b_norm**2 * k2
             + max(2.0 * a_norm**2, lam_max / lam_min)
             * max(1.0, D * np.exp(2.0 * D * norm_A) * b2 * k2))
    return max(safety * bound, M_FLOOR)


def design_gains(model: ReducedModel, poles=None, a_norm: float = 0.0, b_norm: float = 0.0,
                 safety: float = M_SAFETY) -> GainSet:
    """Gain, Lyapunov matrix and weight ``M`` for the model's delay.

    ``poles`` defaults to ``-1`` repeated ``n + 1`` times.
    """
    if poles is None:
        poles = [-1.0] * model.size
    poles = tuple(complex(p) for p in poles)
    K1 = place_poles(model, poles)
    Acl = closed_loop(model, K1)
    P = solve_lyapunov(Acl)
    M = compute_M(model, K1, P, a_norm, b_norm, safety)
    meta = {
        "M_safety_factor": safety,
        "lyapunov_residual": lyapunov_residual(P, Acl),
        "charpoly_error": charpoly_error(Acl, poles),
    }
    return GainSet(model.D, K1, P, poles, M, Acl, a_norm, b_norm, meta)
