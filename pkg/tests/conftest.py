import warnings

import pytest

from ghostbeam import SourceParams, fig1_scene
from ghostbeam.joint import build_joint_state


@pytest.fixture(scope="session")
def params():
    return SourceParams.from_photon_energy(200.0, 2.0, 200.0)


@pytest.fixture(scope="session")
def scene():
    return fig1_scene()


@pytest.fixture(scope="session")
def state(scene, params):
    return build_joint_state(scene, params)


@pytest.fixture(scope="session")
def bucket_x(scene):
    return scene.bucket_center[0]


@pytest.fixture(autouse=True)
def _quiet_regime():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield
