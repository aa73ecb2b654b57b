import pytest

from evselca.domain import save_instance
from evselca.transform import build_cluster_instance

from builders import make_instance


@pytest.fixture
def instance():
    return make_instance()

@pytest.fixture
def ci(instance):
    return build_cluster_instance(instance)

@pytest.fixture
def two_route_ci():
    return build_cluster_instance(make_instance(2))

@pytest.fixture
def instance_file(tmp_path, instance):
    return save_instance(instance, tmp_path / 'instance.json')
