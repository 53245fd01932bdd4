import pytest


@pytest.fixture(scope="session")
def standard_xrt():
    from rtroom.machine import standard_geometry
    return standard_geometry("xrt")


@pytest.fixture(scope="session")
def demo_setup():
    """Machine + patient with known colliding / clear gantry poses."""
    from rtroom.fixtures import collision_demo_setup
    return collision_demo_setup()


@pytest.fixture(scope="session")
def scenario_fixture():
    from rtroom.fixtures import make_scenario_fixture
    return make_scenario_fixture(seed=0)


@pytest.fixture(scope="session")
def mannequin_scene():
    from rtroom.shapes import mannequin_scan_scene
    return mannequin_scan_scene()


@pytest.fixture(scope="session")
def torso_160k():
    from rtroom.shapes import torso_mesh_with_count
    return torso_mesh_with_count(160_000)
