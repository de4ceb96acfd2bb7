"""Matrix exponential by scaling and squaring with diagonal Pade approximants.

Follows the degree selection of Higham (2005): the smallest Pade degree in
(3, 5, 7, 9, 13) whose backward-error bound covers ``||A||_1`` is used, and
degree 13 with ``2**s`` scaling otherwise.
"""

from math import factorial

import numpy as np
from scipy.linalg import lu_factor, lu_solve

_DEGREES = (3, 5, 7, 9, 13)
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
# ||tA||_1 beyond this overflows double precision in the squaring phase
_OVERFLOW_NORM = 700.0


def _pade_coefficients(m):
    fm = factorial(m)
    f2m = factorial(2 * m)
    return [factorial(2 * m - k) * fm / (f2m * factorial(k) * factorial(m - k))
            for k in range(m + 1)]


def _pade(A, m):
    n = A.shape[0]
    ident = np.eye(n)
    b = _pade_coefficients(m)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    else:
        powers = [ident, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        U = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        U = A @ U
        V = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
    return lu_solve(lu_factor(V - U), V + U)


def mat_exp(A, t=1.0):
    """Return ``exp(t * A)`` for a real square matrix.

    Parameters
    ----------
    A : (n, n) array_like
        Square matrix with finite entries.
    t : float, optional
        Time scaling applied before exponentiation.

    Returns
    -------
    (n, n) ndarray

    Raises
    ------
    ValueError
        If ``A`` is not square or has non-finite entries.
    OverflowError
        If ``||t A||_1`` is so large the result cannot be represented.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"mat_exp expects a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or not np.isfinite(t):
        raise ValueError("mat_exp requires finite entries")
    M = t * A
    if M.shape[0] == 0:
        return M.copy()
    norm = np.linalg.norm(M, 1)
    if norm > _OVERFLOW_NORM:
        raise OverflowError(f"||tA||_1 = {norm:.3g} overflows the exponential")
    if norm == 0.0:
        return np.eye(M.shape[0])
    for m in _DEGREES[:-1]:
        if norm <= _THETA[m]:
            return _pade(M, m)
    s = max(0, int(np.ceil(np.log2(norm / _THETA[13]))))
    F = _pade(M / 2.0 ** s, 13)
    for _ in range(s):
        F = F @ F
    return F
