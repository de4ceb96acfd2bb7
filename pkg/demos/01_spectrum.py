"""
Spectrum of the reaction-diffusion operator
===========================================

Eigenpairs of ``phi'' + c(x) phi`` with Dirichlet ends, computed by finite
differences, against the constant-coefficient closed form.
"""

import numpy as np

from rdstab.spectral import OperatorSpec, count_unstable, solve_eigen

L = 2 * np.pi
basis = solve_eigen(OperatorSpec.constant(L, 0.5), 8, 2000)

# for constant c the eigenvalues are c - (j pi / L)^2
j = np.arange(1, 9)
exact = 0.5 - (j / 2) ** 2
for lam, ref in zip(basis.lambdas, exact):
    print(f"{lam: .6f}  {ref: .6f}  {abs(lam - ref):.1e}")

n, margin = count_unstable(basis)
print("nonnegative eigenvalues:", n, " stability margin of the rest:", margin)

# the boundary couplings a_j, b_j enter the reduced model
print("a:", np.round(basis.a[:4], 5))
print("b:", np.round(basis.b[:4], 5))

###############################################################################
# A spatially varying coefficient only changes the input to the solver.

bumpy = OperatorSpec.from_function(L, lambda x: 0.5 + 0.4 * np.sin(x), 2000)
print("variable c, leading eigenvalues:", np.round(solve_eigen(bumpy, 8, 2000).lambdas[:3], 5))
