import pytest

from pfqsim.simulator import available_backends


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture
def add_source():
    from pfqsim.scenarios import ADD_SEQUENCE

    return ADD_SEQUENCE + "bkpt #0\n"
