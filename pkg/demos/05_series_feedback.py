"""
Feedback as a Neumann series
============================

The feedback solves ``alpha = K1 X1 + T_D alpha`` with ``T_D`` a Volterra
operator of lag ``D``. Its Neumann series converges in exact arithmetic, but
terms first grow geometrically before the factorial wins, so in floating
point a fixed number of terms only reaches a few delays.
"""

import numpy as np

from rdstab.artstein import series_alpha
from rdstab.gain import design_gains
from rdstab.reduction import build_reduced
from rdstab.simulator import SimConfig, run
from rdstab.spectral import OperatorSpec, coupling_norms, solve_eigen

L = 2 * np.pi
basis = solve_eigen(OperatorSpec.constant(L, 0.5), 8, 2000)
model = build_reduced(basis, 1.0)
gains = design_gains(model, [-0.5, -1.0], *coupling_norms(basis))
traj = run(SimConfig(6, 0.01, 40.0, basis.grid * (L - basis.grid)), gains, model, basis)

for t in (2.0, 5.0, 8.0, 10.0, 12.0, 20.0):
    res = series_alpha(traj.X1, 0.01, gains, model, t)
    err = abs(res.value - traj.alpha[int(round(t / 0.01))])
    print(f"t = {t:4.1f}  terms {res.terms:2d}  largest term {res.term_norms.max():.1e}  "
          f"last {res.last_term_norm:.1e}  error {err:.1e}  bound violations {res.bound_violations}")

###############################################################################
# The history form evaluates the same feedback with one implicit quadrature
# per step, and is what the simulator uses.

res = series_alpha(traj.X1, 0.01, gains, model, 20.0, max_terms=60)
print("term norms at t = 20:", np.array2string(res.term_norms[::6], precision=1))
