"""Shared test fixtures: keep global state (default dtype) from leaking."""

import numpy as np
import pytest

import metaphora.tensor as T


@pytest.fixture(autouse=True)
def restore_default_dtype():
    before = T.get_default_dtype()
    yield
    T.set_default_dtype(before)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
