"""
Inverting the predictor transform
=================================

``Z1 = X1 + int exp((s - t) A1) B1 alpha(s) ds`` is inverted by a Volterra
kernel ``f`` so that ``X1(t) = Z1(t) + int f(t - s) Z1(s) ds``. On ``[0, D]``
the kernel has the closed form ``exp(r Acl) exp(-D A1) B1 K1``; beyond ``D``
it is marched numerically and jumps by ``-B1 K1`` at ``r = D``.
"""

import numpy as np

from rdstab.artstein import closed_form_kernel, invert_path, kernel_table
from rdstab.gain import design_gains
from rdstab.reduction import build_reduced
from rdstab.simulator import SimConfig, run
from rdstab.spectral import OperatorSpec, coupling_norms, solve_eigen

L = 2 * np.pi
basis = solve_eigen(OperatorSpec.constant(L, 0.5), 8, 2000)
model = build_reduced(basis, 1.0)
gains = design_gains(model, [-0.5, -1.0], *coupling_norms(basis))
traj = run(SimConfig(6, 0.01, 40.0, basis.grid * (L - basis.grid)), gains, model, basis)

kt = kernel_table(gains, model, 0.01, 40.0)
r = 0.01 * np.arange(101)
print("marched vs closed form on [0, D]:", np.max(np.abs(kt.values[:101] - closed_form_kernel(gains, model, r))))
print("marched vs Neumann series on [0, 2D]:", kt.series_discrepancy)
print("jump at D:\n", kt.value_at(1.01) - kt.value_at(1.0))

###############################################################################
# Convolving over the full past recovers X1 to round-off. Keeping only the
# last D of the past is exact until 2D and drifts afterwards.

full = invert_path(traj.Z1, kt)
window = invert_path(traj.Z1, kt, window="lag")
print("full past:   ", np.max(np.abs(full - traj.X1)))
print("lag-D window up to 2D:", np.max(np.abs(window[:201] - traj.X1[:201])))
print("lag-D window on [0, 40]:", np.max(np.abs(window - traj.X1)))
