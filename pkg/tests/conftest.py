import numpy as np
import pytest

import pta


@pytest.fixture(scope="session")
def exi_bundle():
    return pta.build_model("rotating_planes")


@pytest.fixture(scope="session")
def exi_runs(exi_bundle):
    b = exi_bundle
    rep = pta.run_pta(b.system, b.x0, b.l0, b.config, b.measurements)
    fine = pta.run_fine_reference(b.system, b.x0, b.l0, b.config, b.measurements)
    return rep, fine


@pytest.fixture(scope="session")
def springs1_bundle():
    return pta.build_model("springs_case1")


@pytest.fixture(scope="session")
def springs1_run(springs1_bundle):
    b = springs1_bundle
    return pta.run_pta(b.system, b.x0, b.l0, b.config, b.measurements)


@pytest.fixture(scope="session")
def relax_bundle():
    return pta.build_model("relaxation")


@pytest.fixture(scope="session")
def relax_runs(relax_bundle):
    b = relax_bundle
    rep = pta.run_pta(b.system, b.x0, b.l0, b.config, b.measurements)
    fine = pta.run_fine_reference(b.system, b.x0, b.l0, b.config, b.measurements)
    return rep, fine


def fine_jump_indices(fine_y, threshold=0.5):
    return np.where(np.abs(np.diff(fine_y)) > threshold)[0]
