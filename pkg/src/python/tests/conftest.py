import numpy as np
import pytest

from .degkit_tst_utils import TempDirectory, RunnerContext, thread_pool


@pytest.fixture
def runtmp():
    with TempDirectory() as location:
        yield RunnerContext(location)


@pytest.fixture
def rng():
    return np.random.default_rng(20200901)


@pytest.fixture(params=["ward", "average"])
def linkage_method(request):
    return request.param


@pytest.fixture(params=[1, 4])
def n_threads(request):
    with thread_pool(request.param):
        yield request.param
