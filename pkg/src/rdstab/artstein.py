"""Artstein transform, predictor feedback and the explicit kernel inversion.

All integrals run on the uniform control grid ``t_k = t0 + k dt`` with
``D = K dt``. The composite trapezoid rule is used throughout, with the
active window ``(t - D, t) ∩ (D, +inf)`` of the predictor integrals:

* empty for ``t <= D``,
* ``(D, t)`` for ``D < t < 2D``,
* ``(t - D, t)`` for ``t >= 2D``.

The feedback integral contains ``alpha(t)`` itself at its upper end; that
trapezoid term is moved to the left-hand side and solved for in closed form,
so the discrete feedback satisfies ``alpha = K1 Z1`` to rounding error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import lgamma, log
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .exceptions import HistoryError
from .expm import mat_exp
from .gain import GainSet
from .reduction import ReducedModel

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 60
SERIES_DIVERGED = 1e-9
# terms below this fraction of ||K1|| max|X1| are at rounding level and exempt from the bound
BOUND_ROUNDOFF = 1e-14


def delay_steps(D: float, dt: float) -> int:
    """Number of grid steps ``K`` with ``K dt = D``; raises if ``dt`` does not divide ``D``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    K = int(round(D / dt))
    if abs(K * dt - D) > 1e-12 * max(1.0, D):
        raise ValueError(f"dt={dt} does not divide D={D}")
    return K


def active_window(t: float, D: float):
    """Integration window of the predictor integrals, or ``None`` when empty."""
    if t <= D:
        return None
    return (max(t - D, D), t)


class ControlHistory:
    """Chronological record of feedback values on a uniform grid.

    Values before ``D`` are zero by convention; the record is appended by a
    single writer and read by the predictor integrals.
    """

    def __init__(self, dt: float, D: float, t0: float = 0.0, capacity: int = 256):
        if t0 > D:
            raise ValueError("history must start no later than the delay")
        self.dt = float(dt)
        self.D = float(D)
        self.t0 = float(t0)
        self.K = delay_steps(D, dt)
        self.start = delay_steps(D - t0, dt) if D > t0 else 0
        self._buf = np.zeros(max(capacity, 16))
        self._len = 0

    def __len__(self):
        return self._len

    def append(self, value: float) -> None:
        if not np.isfinite(value):
            raise HistoryError(f"non-finite control value at step {self._len}")
        if self._len == self._buf.size:
            self._buf = np.concatenate([self._buf, np.zeros(self._buf.size)])
        self._buf[self._len] = value
        self._len += 1

    @property
    def values(self) -> np.ndarray:
        view = self._buf[:self._len]
        view.flags.writeable = False
        return view

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self._len)

    def index_of(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if abs(self.t0 + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise HistoryError(f"t={t} is not on the control grid (dt={self.dt})")
        return k

    def delayed(self, k: int) -> float:
        """``alpha(t_k - D)``; zero before the start of the record."""
        j = k - self.K
        return float(self._buf[j]) if 0 <= j < self._len else 0.0

    @classmethod
    def from_samples(cls, dt, D, samples, t0=0.0):
        hist = cls(dt, D, t0, capacity=len(samples))
        for v in samples:
            hist.append(float(v))
        return hist


def input_columns(model: ReducedModel, dt: float) -> np.ndarray:
    """Rows ``exp((i dt - D) A1) B1`` for ``i = 0..K``, the predictor kernel on the grid."""
    K = delay_steps(model.D, dt)
    cols = np.empty((K + 1, model.size))
    cols[0] = model.delayed_input()
    step = mat_exp(model.A1, dt)
    for i in range(1, K + 1):
        cols[i] = step @ cols[i - 1]
    return cols


def _window_nodes(k: int, K: int, start: int):
    """First node of the trapezoid window ending at node ``k`` (``lo == k``: empty)."""
    if k <= start:
        return k
    return max(k - K, start)


def _trapezoid_sum(values, columns, k, lo, dt, include_end: bool):
    # sum over nodes lo..k-1 (and k if include_end) of w_i * columns[k - i] * values[i]
    if lo >= k:
        return np.zeros(columns.shape[1])
    idx = np.arange(lo, k)
    w = np.full(idx.size, dt)
    w[0] *= 0.5
    total = (w * values[lo:k]) @ columns[k - idx]
    if include_end:
        total = total + 0.5 * dt * values[k] * columns[0]
    return total


def forward_transform(X1, history: ControlHistory, model: ReducedModel, t: float,
                      columns=None) -> np.ndarray:
    """Artstein state ``Z1(t) = X1(t) + int exp((t - s - D) A1) B1 alpha(s) ds``.

    Raises
    ------
    HistoryError
        If ``alpha`` is not recorded up to and including ``t``.
    """
    X1 = np.asarray(X1, dtype=float)
    k = history.index_of(t)
    lo = _window_nodes(k, history.K, history.start)
    if lo == k:
        return X1.copy()
    if len(history) <= k:
        raise HistoryError(f"history ends at step {len(history) - 1}, need step {k}")
    cols = input_columns(model, history.dt) if columns is None else columns
    return X1 + _trapezoid_sum(history.values, cols, k, lo, history.dt, include_end=True)


def feedback_alpha(X1, history: ControlHistory, gains: GainSet, model: ReducedModel,
                   t: float, columns=None) -> float:
    """Predictor feedback ``alpha(t)`` from the current state and past controls.

    Zero for ``t < D``; otherwise
    ``K1 X1(t) + K1 int_{max(t-D, D)}^t exp((t - D - s) A1) B1 alpha(s) ds``
    with the ``s = t`` trapezoid term solved for exactly.

    Raises
    ------
    HistoryError
        If the history has a gap before ``t``.
    """
    k = history.index_of(t)
    start = history.start
    if k < start:
        return 0.0
    K1 = gains.K1
    base = float(K1 @ np.asarray(X1, dtype=float))
    lo = _window_nodes(k, history.K, start)
    if lo == k:
        return base
    if len(history) < k:
        raise HistoryError(f"history ends at step {len(history) - 1}, need steps up to {k - 1}")
    cols = input_columns(model, history.dt) if columns is None else columns
    past = float(K1 @ _trapezoid_sum(history.values, cols, k, lo, history.dt, include_end=False))
    return (base + past) / (1.0 - 0.5 * history.dt * float(K1 @ cols[0]))


# --- Neumann series of the feedback -------------------------------------------------


def apply_TD(g, h, K: int, start: int, dt: float) -> np.ndarray:
    """Trapezoid realization of ``(T_D g)(t) = K1 int_{max(t-D,D)}^t exp((t-D-s)A1) B1 g(s) ds``.

    ``h[i] = K1 exp((i dt - D) A1) B1`` is the scalar kernel on the lag grid
    and ``start`` the grid index of ``t = D``.
    """
    g = np.array(g, dtype=float)
    out = np.zeros_like(g)
    if K == 0 or start >= g.size:
        return out
    g[:start] = 0.0
    hw = dt * np.asarray(h, dtype=float)
    hw[0] *= 0.5
    hw[K] *= 0.5
    out = np.convolve(g, hw)[:g.size]
    # the node t = D is the lower end of the window for t in [D, 2D): half weight,
    # and the window is empty at t = D itself
    stop = min(K, g.size - start)
    out[start:start + stop] -= 0.5 * dt * h[:stop] * g[start]
    return out


@dataclass(frozen=True)
class SeriesResult:
    value: float
    terms: int
    last_term_norm: float
    converged: bool
    term_values: np.ndarray = field(repr=False)
    term_norms: np.ndarray = field(repr=False)
    bound_violations: int = 0
    strict_bound_violations: int = 0
    partial_sums: np.ndarray = field(default=None, repr=False)
    path_values: np.ndarray = field(default=None, repr=False)


def series_term_bound_log(j: int, s, D: float, model: ReducedModel, K1, xmax):
    """Log of the factorial bound on ``|(T_D^j K1 X1)(s)|``.

    For ``j >= 1``: ``||B1||^j ||K1||^(j+1) (s - D)^j / (j - 1)! * xmax *
    exp((s - j D) ||A1||)``; for ``j = 0`` simply ``||K1|| xmax``.
    """
    s = np.asarray(s, dtype=float)
    nk = float(np.linalg.norm(K1))
    nb = float(np.linalg.norm(model.B1))
    na = float(np.linalg.norm(model.A1, 2))
    with np.errstate(divide="ignore"):
        lx = np.log(np.asarray(xmax, dtype=float))
        if j == 0:
            return log(nk) + lx
        return (j * log(nb) + (j + 1) * log(nk) + j * np.log(np.maximum(s - D, 0.0))
                - lgamma(j) + lx + (s - j * D) * na)


def series_alpha(X1_path, dt: float, gains: GainSet, model: ReducedModel, t: float,
                 max_terms: int = SERIES_MAX_TERMS, tol: float = SERIES_TOL,
                 check_bound: bool = True) -> SeriesResult:
    """Feedback at ``t`` from the Neumann series ``sum_j T_D^j (K1 X1)``.

    ``X1_path`` holds samples of ``X1`` at ``0, dt, ..., t``. Terms are added
    until the sup-norm of the newest term over the grid is ``<= tol`` or
    ``max_terms`` terms have been used; ``converged`` is false when the cap is
    hit with a last term above ``1e-9``.

    Every term is checked against :func:`series_term_bound_log` at all grid
    times in ``[D, t]``. Close to ``s = D`` the implicit trapezoid endpoint
    makes the discrete terms decay geometrically rather than factorially, so
    ``bound_violations`` ignores excesses below ``1e-14 ||K1|| max|X1|``;
    ``strict_bound_violations`` counts them all.
    """
    X1_path = np.asarray(X1_path, dtype=float)
    K = delay_steps(model.D, dt)
    k = int(round(t / dt))
    if X1_path.shape[0] <= k:
        raise HistoryError(f"X1 path covers {X1_path.shape[0]} samples, need {k + 1}")
    path = X1_path[:k + 1]
    if t < model.D:
        zero = np.zeros(1)
        return SeriesResult(0.0, 0, 0.0, True, zero, zero, path_values=np.zeros(k + 1))
    start = K
    h = input_columns(model, dt) @ gains.K1
    term = path @ gains.K1
    term[:start] = 0.0
    total = term.copy()
    values, norms, partial = [term[k]], [np.max(np.abs(term))], [total[k]]
    violations = strict = 0
    if check_bound:
        times = dt * np.arange(k + 1)
        xnorm = np.linalg.norm(path, axis=1)
        xmax = np.maximum.accumulate(np.where(times >= model.D - 1e-12, xnorm, 0.0))
        active = times >= model.D - 1e-12
        floor_scale = float(np.linalg.norm(gains.K1)) * xmax[active]
    j = 0
    while norms[-1] > tol and j + 1 < max_terms:
        j += 1
        term = apply_TD(term, h, K, start, dt)
        total += term
        values.append(term[k])
        norms.append(np.max(np.abs(term)))
        partial.append(total[k])
        if check_bound:
            bound = series_term_bound_log(j, times[active], model.D, model, gains.K1, xmax[active])
            mag = np.abs(term[active])
            with np.errstate(divide="ignore", over="ignore"):
                strict += int(np.count_nonzero(np.log(mag) > bound + 1e-9))
                limit = np.exp(bound) + BOUND_ROUNDOFF * floor_scale
            violations += int(np.count_nonzero(mag > limit))
    last = norms[-1]
    return SeriesResult(float(total[k]), j + 1, float(last), bool(last <= SERIES_DIVERGED),
                        np.array(values), np.array(norms), violations, strict, np.array(partial), total)


# --- kernel of the inverse transform -----------------------------------------------


@dataclass(frozen=True)
class KernelTable:
    """Inversion kernel ``f`` on the lag grid ``r = 0, dt, ..., horizon``.

    ``values[i]`` approximates ``f(i dt)`` to second order (left limit at the
    jump ``r = D``). ``inverse_weights`` and ``start_weights`` are the
    quadrature weights of the exact inverse of the trapezoid transform
    computed by :func:`forward_transform`: ``inverse_weights[i]`` multiplies
    ``X1`` at lag ``i``, ``start_weights[p]`` multiplies ``X1(D)`` when the
    window reaches back to ``D``. Both are ``dt f`` up to ``O(dt^2)``.
    """

    dt: float
    D: float
    horizon: float
    values: np.ndarray = field(repr=False)
    inverse_weights: np.ndarray = field(repr=False)
    start_weights: np.ndarray = field(repr=False)
    series_values: np.ndarray = field(repr=False)
    series_terms: int = 0
    series_last_norm: float = 0.0
    series_discrepancy: float = 0.0

    @property
    def K(self) -> int:
        return delay_steps(self.D, self.dt)

    def value_at(self, r: float) -> np.ndarray:
        if r < 0:
            return np.zeros(self.values.shape[1:])
        i = int(round(r / self.dt))
        if i >= self.values.shape[0]:
            raise ValueError(f"lag {r} beyond kernel horizon {self.horizon}")
        return self.values[i]


def _lag_matrices(gains: GainSet, model: ReducedModel, dt: float):
    cols = input_columns(model, dt)
    return cols[:, :, None] * gains.K1[None, None, :]


def _march(lead, weights, n_steps, first=0):
    """Solve ``(I - w_0) y_i = lead_i + sum_{0 < l <= K, i - l >= first} w_l y_{i-l}``."""
    K = weights.shape[0] - 1
    size = weights.shape[1]
    out = np.zeros((n_steps, size, size))
    lhs = np.linalg.inv(np.eye(size) - weights[0])
    rev = weights[::-1]  # rev[K - l] = w_l
    for i in range(first, n_steps):
        rhs = lead[i].copy()
        lo = max(first, i - K)
        if lo < i:
            rhs += np.einsum("lab,lbc->ac", rev[K - (i - lo):K], out[lo:i])
        out[i] = lhs @ rhs
    return out


def _causal_conv(a, b, n):
    # (a * b)_i = sum_l a_l @ b_{i-l}, i < n, for stacks of square matrices
    size = a.shape[1]
    out = np.zeros((n, size, size))
    for p in range(size):
        for q in range(size):
            for r in range(size):
                out[:, p, q] += fftconvolve(a[:, p, r], b[:, r, q])[:n]
    return out


def _march_continuous(G, dt, K, n):
    # trapezoid solution of f = f0 + int_{max(0,r-D)}^r G(r - tau) f(tau) dtau
    size = G.shape[1]
    f = np.zeros((n, size, size))
    for i in range(n):
        rhs = G[i].copy() if i <= K else np.zeros((size, size))
        if i == 0:
            f[0] = rhs
            continue
        hi = min(i, K)
        lags = np.arange(1, hi + 1)
        wts = np.full(hi, dt)
        wts[-1] *= 0.5
        rhs += np.einsum("l,lab,lbc->ac", wts, G[lags], f[i - lags])
        f[i] = np.linalg.solve(np.eye(size) - 0.5 * dt * G[0], rhs)
    return f


def kernel_table(gains: GainSet, model: ReducedModel, dt: float, horizon: float,
                 series_horizon: float | None = None, max_terms: int = SERIES_MAX_TERMS,
                 tol: float = SERIES_TOL) -> KernelTable:
    """Inversion kernel by Volterra time-marching, with a Neumann-series cross-check.

    ``f`` solves ``f(r) = exp((r - D) A1) B1 K1 [r <= D]
    + int_{max(0, r - D)}^r exp((r - tau - D) A1) B1 K1 f(tau) dtau``.
    On ``[0, D]`` this is the classical resolvent equation; past ``D`` the
    kernel keeps the lag-``D`` truncation of the transform, which is what
    makes the inversion exact on windows reaching back to ``D``.

    The series ``sum_j T^j f_0`` of the same trapezoid operator is summed on
    ``[0, series_horizon]`` (default ``min(horizon, 2 D)``) and its largest
    deviation from the marched values is stored.
    """
    K = delay_steps(model.D, dt)
    H = delay_steps(horizon, dt) if horizon > 0 else 0
    size = model.size
    n = H + 1
    if K == 0:
        zeros = np.zeros((n, size, size))
        return KernelTable(dt, model.D, horizon, zeros, zeros.copy(), zeros.copy(), zeros[:1].copy())
    G = _lag_matrices(gains, model, dt)
    values = _march_continuous(G, dt, K, n)

    # exact inverse of the discrete transform: resolvent of its lag weights
    weights = dt * G
    weights[0] *= 0.5
    weights[K] *= 0.5
    lead = np.zeros((n, size, size))
    m = min(n, K + 1)
    lead[:m] = weights[:m]
    rho = _march(lead, weights, n)
    lead_start = np.zeros((n, size, size))
    lead_start[1:m] = 0.5 * dt * G[1:m]
    sigma = _march(lead_start, weights, n, first=1)

    if series_horizon is None:
        series_horizon = min(horizon, 2.0 * model.D)
    ns = min(n, int(round(series_horizon / dt)) + 1)
    f0 = np.zeros((ns, size, size))
    f0[:min(ns, K + 1)] = G[:min(ns, K + 1)]
    # T f = (I - dt/2 G_0)^{-1} [trapezoid sum without the diagonal]; the series
    # is summed for the equivalent explicit operator S = (I - dt/2 G_0)^{-1} (f0 + T' .)
    inv0 = np.linalg.inv(np.eye(size) - 0.5 * dt * G[0])
    term = np.einsum("ab,ibc->iac", inv0, f0)
    term[0] = f0[0]
    total = term.copy()
    terms, last = 1, float(np.max(np.abs(term)))
    while last > tol and terms < max_terms:
        term = np.einsum("ab,ibc->iac", inv0, _apply_tilde(G, dt, K, term))
        total += term
        terms += 1
        last = float(np.max(np.abs(term)))
    discrepancy = float(np.max(np.abs(total - values[:ns])))
    return KernelTable(dt, model.D, horizon, values, rho, sigma, total,
                       terms, last, discrepancy)


def _apply_tilde(G, dt, K, f):
    """Off-diagonal trapezoid part of ``int_{max(0,r-D)}^r G(r - tau) f(tau) dtau``."""
    n = f.shape[0]
    out = np.zeros_like(f)
    if n < 2:
        return out
    wG = dt * G.copy()
    wG[0] = 0.0
    wG[K] *= 0.5
    # full-weight causal convolution, then fix the lower-end half weight at tau = 0 for r < D
    out[:] = _causal_conv(wG, f, n)
    hi = min(n, K)
    out[1:hi] -= 0.5 * dt * np.einsum("iab,bc->iac", G[1:hi], f[0])
    return out


def closed_form_kernel(gains: GainSet, model: ReducedModel, r) -> np.ndarray:
    """``f(r) = exp(r Acl) exp(-D A1) B1 K1`` for ``0 <= r <= D``.

    Differentiating the resolvent equation gives ``f' = Acl f`` on ``[0, D]``,
    which yields this closed form; used as an independent oracle.
    """
    base = np.outer(model.delayed_input(), gains.K1)
    return np.array([mat_exp(gains.Acl, float(ri)) @ base for ri in np.atleast_1d(r)])


def invert_path(Z1_path, kernel: KernelTable, window: str = "full") -> np.ndarray:
    """Recover ``X1`` on the whole grid from samples of ``Z1``.

    Marches ``X1(t) = Z1(t) - int f(t - s) X1(s) ds`` forward in time. With
    ``window="full"`` the integral covers ``(D, t)``; ``window="lag"``
    restricts it to ``(t - D, t) ∩ (D, +inf)`` and the kernel to ``[0, D]``,
    which is exact only while ``t <= 2D``.
    """
    if window not in ("full", "lag"):
        raise ValueError("window must be 'full' or 'lag'")
    Z = np.asarray(Z1_path, dtype=float)
    X = Z.copy()
    K = kernel.K
    dt = kernel.dt
    if K == 0:
        return X
    m = Z.shape[0]
    start = K
    if window == "full" and m - 1 - start >= kernel.values.shape[0]:
        raise ValueError(f"kernel horizon {kernel.horizon} shorter than path span {(m - 1 - start) * dt}")
    rho = kernel.inverse_weights
    sigma = kernel.start_weights
    lhs = np.linalg.inv(np.eye(Z.shape[1]) + rho[0])
    for k in range(start + 1, m):
        p = k - start
        q_lo = 1 if window == "full" else max(1, p - K)
        acc = Z[k].copy()
        if q_lo < p:
            lags = p - np.arange(q_lo, p)
            acc -= np.einsum("lab,lb->a", rho[lags], X[start + q_lo:k])
        if window == "full" or p <= K:
            acc -= sigma[p] @ X[start]
        X[k] = lhs @ acc
    return X


def invert_transform(Z1_path, kernel: KernelTable, t: float, window: str = "full") -> np.ndarray:
    """``X1(t)`` reconstructed from ``Z1`` samples on ``[0, t]``.

    Raises
    ------
    HistoryError
        If ``Z1_path`` does not reach ``t``.
    """
    Z = np.asarray(Z1_path, dtype=float)
    k = int(round(t / kernel.dt))
    if Z.shape[0] <= k:
        raise HistoryError(f"Z1 path covers {Z.shape[0]} samples, need {k + 1}")
    return invert_path(Z[:k + 1], kernel, window)[k]


def kernel_to_csv(kernel: KernelTable, path) -> None:
    """Write ``r, f_00, f_01, ...`` (row-major matrix entries), 17 significant digits."""
    size = kernel.values.shape[1]
    r = kernel.dt * np.arange(kernel.values.shape[0])
    data = np.column_stack([r, kernel.values.reshape(len(r), -1)])
    header = ",".join(["r"] + [f"f_{i}{j}" for i in range(size) for j in range(size)])
    np.savetxt(Path(path), data, delimiter=",", header=header, comments="", fmt="%.17g")


def history_to_csv(history: ControlHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha"])
        for t, a in zip(history.times, history.values):
            writer.writerow([f"{t:.17g}", f"{a:.17g}"])
