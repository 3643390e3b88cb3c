import pytest

from elkpp.tensor import set_verification_mode


@pytest.fixture(autouse=True)
def _reset_precision():
    yield
    set_verification_mode(False)
