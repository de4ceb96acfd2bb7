"""Command-line front end: eig, reduce, gain, simulate, verify, pipeline, sweep.

Exit codes: 0 ok, 2 configuration, 3 eigenproblem, 4 gain design,
5 simulation, 6 verification failed, 7 file system error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .artstein import ControlHistory, history_to_csv, kernel_table, kernel_to_csv
from .config import RunConfig, eval_expression, load_config
from .exceptions import (ConfigError, ControllabilityError, HistoryError, NotHurwitzError,
                         SimulationError, SpectralError)
from .gain import (GainSet, charpoly_error, closed_loop, compute_M, design_gains,
                   lyapunov_residual, spectrum_error)
from .reduction import ReducedModel, build_reduced, kalman_check, vandermonde_det
from .simulator import SimConfig, decay_fit, h1_grid, read_trajectory_csv, run
from .spectral import basis_to_dict, coupling_norms, solve_eigen, trapezoid, write_modes_csv

EXIT_OK, EXIT_CONFIG, EXIT_EIG, EXIT_GAIN, EXIT_SIM, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4, 5, 6, 7

SPECTRUM_TOL = 1e-8
LYAP_TOL = 1e-8
H1_REL_TOL = 0.01
VD_SLACK = 1e-6


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _stage(code, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except OSError as exc:
        raise StageError(EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}") from exc
    except (SpectralError, ControllabilityError, NotHurwitzError, SimulationError,
            HistoryError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(code, f"{type(exc).__name__}: {exc}") from exc


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _prepare_out(directory: Path) -> Path:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise StageError(EXIT_IO, f"cannot write to {directory}: {exc.strerror or exc}") from exc
    return directory


# --- stages --------------------------------------------------------------------------


def stage_eig(cfg: RunConfig, out: Path):
    spec = _stage(EXIT_EIG, cfg.operator)
    basis = _stage(EXIT_EIG, solve_eigen, spec, cfg.num_modes, cfg.grid_points)
    summary = _stage(EXIT_EIG, basis_to_dict, basis)
    _stage(EXIT_IO, _write_json, out / "eigen.json", summary)
    _stage(EXIT_IO, write_modes_csv, basis, out / "modes.csv")
    return basis


def stage_reduce(cfg: RunConfig, out: Path, basis):
    model = _stage(EXIT_EIG, build_reduced, basis, cfg.D)
    _stage(EXIT_IO, _write_json, out / "model.json", model.to_dict())
    return model


def stage_gain(cfg: RunConfig, out: Path, basis, model: ReducedModel) -> GainSet:
    a_norm, b_norm = coupling_norms(basis)
    gains = _stage(EXIT_GAIN, design_gains, model, cfg.poles, a_norm, b_norm)
    _stage(EXIT_IO, _write_json, out / "gains.json", gains.to_dict())
    return gains


def stage_simulate(cfg: RunConfig, out: Path, basis, model, gains):
    sim = SimConfig(cfg.N, cfg.dt, cfg.T, cfg.y0_on(basis.grid), cfg.record_every)
    traj = _stage(EXIT_SIM, run, sim, gains, model, basis)
    _stage(EXIT_IO, traj.write_csv, out / "trajectory.csv")
    _stage(EXIT_IO, traj.write_profiles_csv, out / "profiles.csv", cfg.profile_stride)
    hist = ControlHistory.from_samples(cfg.dt, cfg.D, traj.alpha)
    _stage(EXIT_IO, history_to_csv, hist, out / "alpha_history.csv")
    if model.D > 0:
        kern = _stage(EXIT_SIM, kernel_table, gains, model, cfg.dt, 2.0 * model.D)
        _stage(EXIT_IO, kernel_to_csv, kern, out / "kernel.csv")
    if cfg.plot:
        _stage(EXIT_IO, (out / "plot_figures.py").write_text, PLOT_SCRIPT)
    return traj


# --- verification from written artifacts ----------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _read_json(path: Path):
    return json.loads(path.read_text())


def verify_outputs(out: Path):
    """Rebuild every report quantity from the files in ``out``.

    Returns the report lines and the list of checks.
    """
    cfg = load_config(out / "config.ini")
    eigen = _read_json(out / "eigen.json")
    model = ReducedModel.from_dict(_read_json(out / "model.json"))
    gains = GainSet.from_dict(_read_json(out / "gains.json"))
    traj = read_trajectory_csv(out / "trajectory.csv")
    modes = np.loadtxt(out / "modes.csv", delimiter=",", skiprows=1, ndmin=2)

    lines, checks = [], []
    lam = np.array(eigen["eigenvalues"])
    lines.append("eigenvalues: " + ", ".join(f"{v:.10g}" for v in lam))
    lines.append(f"n (nonnegative eigenvalues): {model.n}")
    lines.append(f"stability margin eta: {eigen['margin']:.10g}")
    rank_ok, det = kalman_check(model)
    lines.append(f"Kalman determinant: {det:.12g}")
    if model.n:
        lines.append(f"closed-form determinant: {vandermonde_det(model):.12g}")
    checks.append(Check("rank_ok", bool(rank_ok), f"det = {det:.6g}"))

    Acl = closed_loop(model, gains.K1)
    placed = np.sort_complex(np.linalg.eigvals(Acl))
    lines.append("K1: " + ", ".join(f"{v:.12g}" for v in gains.K1))
    lines.append("placed spectrum: " + ", ".join(f"{z.real:.10g}{z.imag:+.3g}j" for z in placed))
    poles = list(gains.poles)
    distinct = len({complex(round(p.real, 9), round(p.imag, 9)) for p in poles}) == len(poles)
    if distinct:
        err = spectrum_error(Acl, poles)
        checks.append(Check("spectrum", err <= SPECTRUM_TOL, f"max pole error {err:.3g}"))
    else:
        err = charpoly_error(Acl, poles)
        checks.append(Check("spectrum", err <= SPECTRUM_TOL,
                            f"repeated poles, characteristic polynomial error {err:.3g}"))
    res = lyapunov_residual(gains.P, Acl)
    pd = bool(np.min(np.linalg.eigvalsh(gains.P)) > 0)
    lines.append(f"Lyapunov residual: {res:.3g}")
    checks.append(Check("lyapunov", res <= LYAP_TOL and pd, f"residual {res:.3g}, P positive definite: {pd}"))
    M = compute_M(model, gains.K1, gains.P, gains.a_norm, gains.b_norm,
                  gains.meta.get("M_safety_factor", 1.1))
    lines.append(f"M(D): {gains.M:.10g}")
    checks.append(Check("M(D)", abs(M - gains.M) <= 1e-9 * abs(M), f"recomputed {M:.10g}"))

    t = traj["t"]
    D = model.D
    pre = t < D - 1e-12
    checks.append(Check("alpha zero before D", bool(np.all(traj["alpha"][pre] == 0)),
                        f"max |alpha| on [0, D) = {np.max(np.abs(traj['alpha'][pre]), initial=0.0):.3g}"))

    # H1 identity from the written modes and coefficients
    grid, funcs = modes[:, 0], modes[:, 1:1 + traj["w"].shape[1]].T
    c = np.broadcast_to(np.asarray(eval_expression(cfg.c_expr, x=grid, L=cfg.L), dtype=float), grid.shape) \
        if cfg.c_file is None else cfg.operator().c_on(grid)
    prof = traj["w"] @ funcs
    spec_sq = trapezoid(c * prof * prof, grid) - traj["w"] ** 2 @ lam[:traj["w"].shape[1]]
    h1s = np.sqrt(np.maximum(spec_sq, 0.0))
    h1g = h1_grid(prof, grid)
    mask = h1g > 1e-12 * max(1.0, h1g.max())
    rel = float(np.max(np.abs(h1s[mask] - h1g[mask]) / h1g[mask])) if mask.any() else 0.0
    checks.append(Check("H1 identity", rel <= H1_REL_TOL, f"max relative gap {rel:.3g}"))

    window = (max(2 * D, t[-1] / 2), t[-1])
    rate, r2 = decay_fit(t, traj["H1_norm"], window)
    lines.append(f"H1 decay fit on [{window[0]:.6g}, {window[1]:.6g}]: rate {rate:.6g}, r2 {r2:.6g}")
    checks.append(Check("H1 decay", rate < 0 and r2 >= 0.99, f"rate {rate:.4g}, r2 {r2:.4g}"))

    vd = traj["V_D"]
    state = np.abs(traj["uD"]) + np.max(np.abs(traj["w"]), axis=1)
    nonzero = state > 0
    checks.append(Check("V_D positive", bool(np.all(vd[nonzero] > 0)),
                        f"min V_D = {np.min(vd[nonzero], initial=np.inf):.6g}"))
    after = t >= 2 * D - 1e-12
    v_after = vd[after]
    slack = VD_SLACK * v_after[0] if v_after.size else 0.0
    rise = float(np.max(np.diff(v_after), initial=0.0))
    checks.append(Check("V_D nonincreasing after 2D", rise <= slack, f"largest increase {rise:.3g}, slack {slack:.3g}"))
    vwin = (min(2 * D + 5, t[-1] / 2), t[-1])
    if np.all(vd[(t >= vwin[0]) & (t <= vwin[1])] > 0):
        vrate, vr2 = decay_fit(t, vd, vwin)
        lines.append(f"V_D decay fit on [{vwin[0]:.6g}, {vwin[1]:.6g}]: rate {vrate:.6g}, r2 {vr2:.6g}")
        checks.append(Check("V_D exponential decay", vrate < 0 and vr2 >= 0.98, f"rate {vrate:.4g}, r2 {vr2:.4g}"))
    else:
        checks.append(Check("V_D exponential decay", False, "V_D not positive on the fit window"))
    if traj["w"].shape[0] and np.any(traj["w"][0] != 0):
        lines.append("note: nonzero initial profile; the certificate is evaluated for a general w(0)")
    return lines, checks


def write_report(out: Path, lines, checks) -> bool:
    ok = all(c.passed for c in checks)
    body = lines + [""] + [c.line() for c in checks] + ["", f"overall: {'PASS' if ok else 'FAIL'}", ""]
    (out / "report.txt").write_text("\n".join(body))
    print("\n".join(body), end="")
    return ok


def stage_verify(out: Path) -> bool:
    try:
        lines, checks = verify_outputs(out)
    except OSError as exc:
        raise StageError(EXIT_IO, f"cannot read outputs: {exc}") from exc
    except (KeyError, ValueError, ConfigError, IndexError) as exc:
        raise StageError(EXIT_VERIFY, f"inconsistent outputs in {out}: {exc}") from exc
    try:
        return write_report(out, lines, checks)
    except OSError as exc:
        raise StageError(EXIT_IO, f"cannot write report: {exc}") from exc


def run_pipeline(cfg: RunConfig, out: Path) -> int:
    """All stages in order; returns the exit code."""
    try:
        _prepare_out(out)
        _stage(EXIT_IO, (out / "config.ini").write_text, replace(cfg, directory=Path(".")).to_ini())
        basis = stage_eig(cfg, out)
        model = stage_reduce(cfg, out, basis)
        gains = stage_gain(cfg, out, basis, model)
        stage_simulate(cfg, out, basis, model, gains)
        return EXIT_OK if stage_verify(out) else EXIT_VERIFY
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def _sweep_one(args):
    cfg, out = args
    return str(out), run_pipeline(cfg, out)


# --- argument handling ---------------------------------------------------------------


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    out = Path(args.out) if getattr(args, "out", None) else cfg.directory
    return cfg.with_overrides(poles=args.poles, dt=args.dt, modes=args.modes, directory=out)


def _cmd_staged(args, upto: str) -> int:
    cfg = _load(args)
    out = cfg.directory
    try:
        _prepare_out(out)
        _stage(EXIT_IO, (out / "config.ini").write_text, replace(cfg, directory=Path(".")).to_ini())
        basis = stage_eig(cfg, out)
        n = len([v for v in basis.lambdas if v >= 0])
        print(f"eigenvalues: {', '.join(f'{v:.8g}' for v in basis.lambdas)}")
        if upto == "eig":
            return EXIT_OK
        model = stage_reduce(cfg, out, basis)
        print(f"n = {n}, Kalman determinant = {kalman_check(model)[1]:.10g}")
        if upto == "reduce":
            return EXIT_OK
        gains = stage_gain(cfg, out, basis, model)
        print(f"K1 = {gains.K1.tolist()}, M = {gains.M:.8g}")
        if upto == "gain":
            return EXIT_OK
        traj = stage_simulate(cfg, out, basis, model, gains)
        print(f"simulated {traj.times.size - 1} steps to t = {traj.times[-1]:g}")
        return EXIT_OK
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def _cmd_verify(args) -> int:
    out = Path(args.out) if args.out else load_config(args.config).directory
    try:
        return EXIT_OK if stage_verify(out) else EXIT_VERIFY
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def _cmd_pipeline(args) -> int:
    cfg = _load(args)
    return run_pipeline(cfg, cfg.directory)


def _cmd_sweep(args) -> int:
    configs = args.configs or ([args.config] if args.config else [])
    if not configs:
        raise ConfigError("sweep needs at least one configuration")
    root = Path(args.out or "sweep")
    jobs = []
    for path in configs:
        base = load_config(path).with_overrides(poles=args.poles, dt=args.dt, modes=args.modes)
        delays = [float(d) for d in args.delays.split(",")] if args.delays else [base.D]
        for D in delays:
            cfg = replace(base, D=D, dt=args.dt or (D / 100 if D > 0 else base.dt))
            cfg = cfg.with_overrides()
            name = f"{Path(str(path)).stem}_D{D:g}"
            jobs.append((replace(cfg, directory=root / name), root / name))
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_sweep_one, jobs))
    worst = 0
    for out, code in results:
        print(f"{out}: exit {code}")
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdstab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("eig", "reduce", "gain", "simulate", "verify", "pipeline", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", default="reference" if name != "sweep" else None,
                       help="configuration file or preset name (default: reference)")
        p.add_argument("--out", help="output directory (overrides the configuration)")
        p.add_argument("--poles", help="closed-loop poles, e.g. --poles=-0.5,-1 or --poles=-1,-2+-1i")
        p.add_argument("--dt", type=float, help="time step; must divide D")
        p.add_argument("--modes", type=int, help="number of simulated modes N")
        p.add_argument("--seedless", action="store_true",
                       help="assert that no random numbers are used (always true)")
        if name == "sweep":
            p.add_argument("configs", nargs="*", help="further configuration files")
            p.add_argument("--delays", help="comma-separated delays to run for each configuration")
            p.add_argument("--jobs", type=int, default=None, help="worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("eig", "reduce", "gain", "simulate"):
            return _cmd_staged(args, args.command)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "pipeline":
            return _cmd_pipeline(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


PLOT_SCRIPT = '''"""Surface of y(t, x) and the boundary value u_D(t) from the CSV outputs."""
import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).parent
prof = np.loadtxt(here / "profiles.csv", delimiter=",", skiprows=1)
t = np.unique(prof[:, 0])
x = np.unique(prof[:, 1])
Y = prof[:, 2].reshape(t.size, x.size)

fig = plt.figure(figsize=(7, 5))
ax = fig.add_subplot(projection="3d")
T, X = np.meshgrid(t, x, indexing="ij")
ax.plot_surface(T, X, Y, cmap="viridis", linewidth=0)
ax.set_xlabel("t")
ax.set_ylabel("x")
ax.set_zlabel("y(t, x)")
fig.savefig(here / "solution_surface.png", dpi=150)

with open(here / "trajectory.csv") as fh:
    header = next(csv.reader(fh))
traj = np.loadtxt(here / "trajectory.csv", delimiter=",", skiprows=1)
fig, ax = plt.subplots(figsize=(7, 3.5))
ax.plot(traj[:, header.index("t")], traj[:, header.index("uD")])
ax.set_xlabel("t")
ax.set_ylabel("u_D(t)")
fig.tight_layout()
fig.savefig(here / "boundary_control.png", dpi=150)
'''


if __name__ == "__main__":
    sys.exit(main())
