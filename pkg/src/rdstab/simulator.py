"""Closed-loop simulation of the modal system with delayed predictor feedback.

The boundary value obeys ``u_D' = alpha(t - D)`` and the modal coefficients
``w_j' = lambda_j w_j + a_j u_D + b_j u_D'``. Both ends of ``alpha(t - D)``
on a step are already in the control history when ``D > 0``, so ``u_D`` is
integrated exactly for linear ``alpha(t - D)`` and each ``w_j`` is advanced
by the exponential of its scalar ODE with the forcing sampled at the step
midpoint. The scheme is second order; with ``D = 0`` it falls back to
holding ``alpha`` over the step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import linregress

from .artstein import (ControlHistory, _window_nodes, delay_steps, feedback_alpha,
                       forward_transform, input_columns)
from .exceptions import SimulationError
from .gain import GainSet
from .reduction import ReducedModel
from .spectral import SpectralBasis, trapezoid

H1_NEG_TOL = 1e-10


def phi1(z):
    """``(exp(z) - 1) / z`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


@dataclass(frozen=True)
class SimConfig:
    N: int
    dt: float
    T: float
    y0: np.ndarray = field(repr=False)
    record_every: int = 1

    def validate(self, model: ReducedModel, basis: SpectralBasis) -> None:
        if self.N < model.size:
            raise ValueError(f"N={self.N} must be at least n + 1 = {model.size}")
        if self.N > len(basis.modes):
            raise ValueError(f"N={self.N} exceeds the {len(basis.modes)} modes of the basis")
        if self.T <= 0 or self.record_every < 1:
            raise ValueError("T must be positive and record_every >= 1")
        delay_steps(model.D, self.dt)
        delay_steps(self.T, self.dt)
        if np.shape(self.y0) != basis.grid.shape:
            raise ValueError(f"y0 has shape {np.shape(self.y0)}, grid has {basis.grid.shape}")


@dataclass(frozen=True)
class SimState:
    k: int
    t: float
    uD: float
    w: np.ndarray
    history: ControlHistory = field(repr=False)

    def X1(self, n: int) -> np.ndarray:
        return np.concatenate([[self.uD], self.w[:n]])


def initial_state(config: SimConfig, model: ReducedModel, basis: SpectralBasis) -> SimState:
    """State at ``t = 0``: ``u_D = 0`` and ``w`` the projection of ``y0``."""
    w0 = basis.project(config.y0)[:config.N]
    steps = delay_steps(config.T, config.dt) + 1
    history = ControlHistory(config.dt, model.D, capacity=steps)
    return SimState(0, 0.0, 0.0, w0, history)


def delayed_pair(history: ControlHistory, k: int):
    """``alpha(t - D)`` at the two ends of ``[t_k, t_k+1]`` as seen from inside the step.

    The start value is the right limit and the end value the left limit, so
    the jump of ``alpha`` at ``t = D`` only enters steps after ``2D``. With
    ``D = 0`` the end value is not yet known and the start value is held.
    """
    K = history.K
    start = history.delayed(k)
    if K == 0:
        return start, start
    j = k + 1 - K
    end = float(history.values[j]) if history.start < j < len(history) else 0.0
    return start, end


def step(state: SimState, gains: GainSet, model: ReducedModel, basis: SpectralBasis,
         dt: float, columns=None) -> SimState:
    """Evaluate ``alpha(t)``, append it to the history and advance by ``dt``.

    Raises
    ------
    SimulationError
        If the state or the feedback stops being finite.
    """
    N = state.w.size
    lam = basis.lambdas[:N]
    a = basis.a[:N]
    b = basis.b[:N]
    hist = state.history
    if len(hist) != state.k:
        raise SimulationError(f"history length {len(hist)} out of sync with step {state.k}")
    alpha = feedback_alpha(state.X1(model.n), hist, gains, model, state.t, columns)
    if not np.isfinite(alpha):
        raise SimulationError(f"non-finite feedback at t={state.t:.6g}")
    hist.append(alpha)
    a0, a1 = delayed_pair(hist, state.k)
    # alpha_D is linear on the step, so u_D is quadratic; sample both at the midpoint
    u_mid = state.uD + 0.5 * dt * a0 + 0.125 * dt * (a1 - a0)
    z = lam * dt
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.exp(z) * state.w + dt * phi1(z) * (a * u_mid + b * 0.5 * (a0 + a1))
        u = state.uD + 0.5 * dt * (a0 + a1)
    if not (np.isfinite(u) and np.all(np.isfinite(w))):
        raise SimulationError(f"state overflow at t={state.t + dt:.6g}")
    return SimState(state.k + 1, (state.k + 1) * dt, u, w, hist)


# --- norms and certificate -----------------------------------------------------------


def h1_spectral(w, basis: SpectralBasis) -> np.ndarray:
    """``||w||_{H1_0}`` from ``int c w^2 - sum lambda_j w_j^2`` on the truncated sum.

    Works row-wise on a ``(times, N)`` array of modal coefficients.

    Raises
    ------
    ValueError
        If the squared norm is below ``-1e-10`` (inconsistent inputs).
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    N = w.shape[1]
    prof = w @ basis.functions[:N]
    sq = trapezoid(basis.c_grid * prof * prof, basis.grid) - (w * w) @ basis.lambdas[:N]
    scale = np.maximum(1.0, np.sum(w * w, axis=1))
    if np.any(sq < -H1_NEG_TOL * scale):
        raise ValueError(f"negative squared H1 norm {sq.min():.3g}")
    return np.sqrt(np.maximum(sq, 0.0))


def h1_grid(profiles, grid) -> np.ndarray:
    """Finite-difference H1 seminorm ``sqrt(sum (dy)^2 / h)`` of sampled profiles."""
    y = np.atleast_2d(np.asarray(profiles, dtype=float))
    h = np.diff(grid)
    return np.sqrt(np.sum(np.diff(y, axis=1) ** 2 / h, axis=1))


def h1_norm(w, basis: SpectralBasis):
    """Spectral and grid evaluations of ``||w||_{H1_0}`` for modal coefficients ``w``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    prof = w @ basis.functions[:w.shape[1]]
    return h1_spectral(w, basis), h1_grid(prof, basis.grid)


def lyapunov_VD(Z1, w, gains: GainSet, lambdas, dt: float, D: float) -> np.ndarray:
    """Certificate ``V_D`` on the whole time grid.

    ``(M/2) Z1^T P Z1 + (M/2) int_window Z1^T P Z1 ds - (1/2) sum lambda_j w_j^2``
    with the window ``(t - D, t) ∩ (D, +inf)`` and trapezoid quadrature.
    """
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    q = np.einsum("ka,ab,kb->k", Z1, gains.P, Z1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (q[1:] + q[:-1]))])
    K = delay_steps(D, dt)
    ks = np.arange(q.size)
    lo = np.array([_window_nodes(k, K, K) for k in ks])
    integral = cum - cum[lo]
    lam = np.asarray(lambdas, dtype=float)[:w.shape[1]]
    return 0.5 * gains.M * (q + integral) - 0.5 * (w * w) @ lam


def decay_fit(times, values, window):
    """Slope of ``log(values)`` against time on ``window`` and the fit's ``r^2``.

    Raises
    ------
    ValueError
        If a value in the window is not positive or fewer than two samples fall in it.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"fewer than two samples in window {window}")
    v = values[sel]
    if np.any(v <= 0):
        raise ValueError("decay fit needs positive values")
    y = np.log(v)
    if np.ptp(y) == 0:
        return 0.0, 1.0
    fit = linregress(times[sel], y)
    return float(fit.slope), float(fit.rvalue ** 2)


# --- trajectories ------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Full-resolution closed-loop record on ``t_k = k dt``.

    Profiles ``y(t, x) = w(t, x) + (x / L) u_D(t)`` are rebuilt on demand from
    the stored modal coefficients.
    """

    times: np.ndarray
    uD: np.ndarray
    alpha: np.ndarray
    w: np.ndarray
    X1: np.ndarray
    Z1: np.ndarray
    V_D: np.ndarray
    L2_norm: np.ndarray
    H1_norm: np.ndarray
    H1_grid: np.ndarray
    grid: np.ndarray = field(repr=False)
    functions: np.ndarray = field(repr=False)
    record_every: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def record_index(self) -> np.ndarray:
        idx = np.arange(0, self.times.size, self.record_every)
        if idx[-1] != self.times.size - 1:
            idx = np.append(idx, self.times.size - 1)
        return idx

    def profiles(self, index=None) -> np.ndarray:
        idx = self.record_index if index is None else np.atleast_1d(index)
        L = self.grid[-1]
        return self.w[idx] @ self.functions + np.outer(self.uD[idx], self.grid / L)

    def write_csv(self, path) -> None:
        """Decimated trajectory table with 17 significant digits."""
        N = self.w.shape[1]
        m = self.Z1.shape[1]
        header = (["t", "uD", "alpha"] + [f"w_{j + 1}" for j in range(N)]
                  + [f"Z1_{i}" for i in range(m)] + ["V_D", "L2_norm", "H1_norm"])
        idx = self.record_index
        data = np.column_stack([self.times, self.uD, self.alpha, self.w, self.Z1,
                                self.V_D, self.L2_norm, self.H1_norm])[idx]
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")

    def write_profiles_csv(self, path, stride: int = 1) -> None:
        """Long-form ``t, x, y`` table at the recorded times, every ``stride``-th grid node."""
        idx = self.record_index
        cols = np.arange(0, self.grid.size, stride)
        if cols[-1] != self.grid.size - 1:
            cols = np.append(cols, self.grid.size - 1)
        y = self.profiles(idx)[:, cols]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y"])
            for row, k in enumerate(idx):
                t = f"{self.times[k]:.17g}"
                for c, x in enumerate(self.grid[cols]):
                    writer.writerow([t, f"{x:.17g}", f"{y[row, c]:.17g}"])


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory CSV as a dict of arrays (``w`` and ``Z1`` stacked)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    out = {k: cols[k] for k in ("t", "uD", "alpha", "V_D", "L2_norm", "H1_norm")}
    out["w"] = np.column_stack([cols[h] for h in header if h.startswith("w_")])
    out["Z1"] = np.column_stack([cols[h] for h in header if h.startswith("Z1_")])
    return out


def zero_gains(model: ReducedModel) -> GainSet:
    """Open-loop gain set (``K1 = 0``); the certificate is undefined and reported as NaN."""
    k = model.size
    nan = np.full((k, k), np.nan)
    return GainSet(model.D, np.zeros(k), nan, (), float("nan"), model.A1.copy(),
                   meta={"open_loop": True})


def run(config: SimConfig, gains: GainSet, model: ReducedModel, basis: SpectralBasis) -> Trajectory:
    """Simulate ``[0, T]`` and evaluate transform, norms and certificate at every step.

    Raises
    ------
    SimulationError
        Propagated from :func:`step`.
    """
    config.validate(model, basis)
    dt = config.dt
    steps = delay_steps(config.T, dt)
    cols = input_columns(model, dt)
    state = initial_state(config, model, basis)
    N, n = config.N, model.n
    uD = np.empty(steps + 1)
    W = np.empty((steps + 1, N))
    uD[0], W[0] = state.uD, state.w
    for k in range(steps):
        state = step(state, gains, model, basis, dt, cols)
        uD[k + 1], W[k + 1] = state.uD, state.w
    hist = state.history
    hist.append(feedback_alpha(state.X1(n), hist, gains, model, state.t, cols))
    alpha = np.array(hist.values)
    X1 = np.column_stack([uD, W[:, :n]])
    Z1 = np.array([forward_transform(X1[k], hist, model, k * dt, cols) for k in range(steps + 1)])
    times = dt * np.arange(steps + 1)

    grid = basis.grid
    L = basis.spec.L
    funcs = basis.functions[:N]
    prof = W @ funcs + np.outer(uD, grid / L)
    l2 = np.sqrt(trapezoid(prof * prof, grid))
    h1w = h1_spectral(W, basis)
    h1g = h1_grid(W @ funcs, grid)
    # |y|_{H1}^2 = |w|_{H1_0}^2 + u_D^2 / L since int w' = 0
    h1y = np.sqrt(l2 ** 2 + h1w ** 2 + uD ** 2 / L)
    if np.all(np.isfinite(gains.P)):
        vd = lyapunov_VD(Z1, W, gains, basis.lambdas, dt, model.D)
    else:
        vd = np.full(steps + 1, np.nan)
    meta = {
        "N": N, "dt": dt, "T": config.T, "D": model.D, "M": gains.M,
        "initial_w_nonzero": bool(np.any(W[0] != 0)),
        "note": "V_D evaluated for a general initial profile; the certificate argument assumes w(0) = 0",
    }
    return Trajectory(times, uD, alpha, W, X1, Z1, vd, l2, h1y, h1g, grid, funcs,
                      config.record_every, meta)


def with_record_every(traj: Trajectory, record_every: int) -> Trajectory:
    return replace(traj, record_every=int(record_every))
