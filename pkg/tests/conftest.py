import numpy as np
import pytest

from tsobserver import lmi, model, synth
from tsobserver.lipschitz import estimate_constants


def lyapunov_problem(A: np.ndarray) -> lmi.AffineLmiProblem:
    """A^T P + P A < 0 with P > 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = lmi.symmetric("P", A.shape[0], positive=True)
    return lmi.AffineLmiProblem([P], [lmi.LmiConstraint("lyap", A.T @ P.x + P.x @ A)],
                                strict_margin=1e-6 * (1.0 + np.abs(A).max()))


@pytest.fixture(scope="session")
def ex1():
    return model.load_model("example1")


@pytest.fixture(scope="session")
def ex2():
    return model.load_model("example2")


@pytest.fixture(scope="session")
def cert1(ex1):
    return synth.synthesize_theorem1(ex1)


@pytest.fixture(scope="session")
def bounds2(ex2):
    return estimate_constants(ex2, model.Box.uniform(-2, 2, 3), safety=1.05).with_beta1(0.5)


@pytest.fixture(scope="session")
def cert2(ex2, bounds2):
    return synth.synthesize_theorem2(ex2, bounds2, "mean", "descriptor")
