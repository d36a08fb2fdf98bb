import numpy as np
import pytest

from strainsim.model import RobotModel


@pytest.fixture(scope="session")
def model():
    return RobotModel()


@pytest.fixture(scope="session")
def damped_model():
    return RobotModel(damping_beta=0.3)


@pytest.fixture(scope="session")
def frictionless_model(model):
    return model.with_updates(friction_scale=0.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def draw_q(rng, model, scale=0.4):
    """Random configuration with per-column spreads keeping the strain
    field within the slender-rod regime (curvature well below 2*pi/L)."""
    spread = []
    for row, deg in model.basis.columns:
        if row in (0, 1):  # bending
            spread.append(5.0 / (deg + 1))
        elif row == 2:  # torsion
            spread.append(2.5 / (deg + 1))
        elif row == 5:  # axial
            spread.append(0.05)
        else:  # shear
            spread.append(0.02)
    return rng.normal(size=model.n) * np.asarray(spread) * scale
