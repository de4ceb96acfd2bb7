import numpy as np
import pytest

from rdstab.gain import design_gains
from rdstab.reduction import build_reduced
from rdstab.simulator import SimConfig, run
from rdstab.spectral import OperatorSpec, coupling_norms, solve_eigen

L_REF = 2 * np.pi


@pytest.fixture(scope="session")
def ref_basis():
    return solve_eigen(OperatorSpec.constant(L_REF, 0.5), 8, 2000)


@pytest.fixture(scope="session")
def ref_model(ref_basis):
    return build_reduced(ref_basis, 1.0)


@pytest.fixture(scope="session")
def ref_gains(ref_basis, ref_model):
    return design_gains(ref_model, [-0.5, -1.0], *coupling_norms(ref_basis))


@pytest.fixture(scope="session")
def ref_traj(ref_basis, ref_model, ref_gains):
    x = ref_basis.grid
    cfg = SimConfig(6, 0.01, 40.0, x * (L_REF - x), record_every=10)
    return run(cfg, ref_gains, ref_model, ref_basis)
