import numpy as np
import pytest

from ltpe.linop import SpectralOperator
from ltpe.model import ModelConstants, SemiLinearModel


def linear_model(lam=2.0, noise=0.0, x0=1.0, drift=None, constants=None):
    """Scalar ``dX = (-lam X + drift(X)) dt + noise dW``."""
    f = drift if drift is not None else (lambda x: np.zeros_like(x))
    return SemiLinearModel(
        name="linear",
        linear=SpectralOperator.scalar(-lam),
        drift=f,
        diffusion=lambda x: np.full(np.shape(x) + (1,), float(noise)),
        noise_dim=1,
        gamma=1.0,
        x0=np.array([x0]),
        constants=constants or ModelConstants(L1=1e-12 + noise**2 * 25, L2=1e-12, p0=13,
                                             p1=2, C1=1e-12, C2=1e-12),
    )


@pytest.fixture
def scalar_linear():
    return linear_model


# (criterion, passed, detail) lines gathered by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
