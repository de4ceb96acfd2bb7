"""
Predictor gain for the reduced model
====================================

The unstable modes plus the boundary input form a finite system
``X1' = A1 X1 + B1 u(t - D)``. The gain places the spectrum of
``A1 + exp(-D A1) B1 K1``, and a Lyapunov matrix certifies it.
"""

import numpy as np

from rdstab.gain import design_gains, lyapunov_residual
from rdstab.reduction import build_reduced, kalman_check
from rdstab.spectral import OperatorSpec, coupling_norms, solve_eigen

basis = solve_eigen(OperatorSpec.constant(2 * np.pi, 0.5), 8, 2000)
model = build_reduced(basis, D=1.0)
print("A1 =\n", model.A1)
print("B1 =", model.B1)

ok, det = kalman_check(model)
print("controllable:", ok, " det =", det, " 1/(2 sqrt(pi)) =", 1 / (2 * np.sqrt(np.pi)))

gains = design_gains(model, [-0.5, -1.0], *coupling_norms(basis))
print("K1 =", gains.K1)
print("closed-loop spectrum:", np.sort(np.linalg.eigvals(gains.Acl).real))
print("Lyapunov residual:", lyapunov_residual(gains.P, gains.Acl))
print("weight M =", gains.M)

###############################################################################
# The gain grows like exp(lambda D): longer delays cost more actuation.

for D in (0.0, 0.5, 1.0, 2.0, 4.0):
    g = design_gains(build_reduced(basis, D), [-0.5, -1.0])
    print(f"D = {D:3.1f}  |K1| = {np.linalg.norm(g.K1):8.3f}")
