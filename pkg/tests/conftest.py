import pytest

from rail import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compile once so timing-sensitive tests measure steady state.
    kernels.warmup()
