"""Shared fixtures: moment kernels are expensive, so build each size once."""

import pytest

from renyidi.keyrate import ProtocolConfig, build_program_kernel


@pytest.fixture(scope="session")
def m1_kernel():
    return build_program_kernel(ProtocolConfig(n=1e9, gamma=0.01, m=1))


@pytest.fixture(scope="session")
def m2_kernel():
    return build_program_kernel(ProtocolConfig(n=1e9, gamma=0.01, m=2))
