import numpy as np
import pytest

from deuteropt.dataset import fc_like_truth, select_training_set, synth_dataset
from deuteropt.hamiltonian import QuboModel, combine, penalty_qubo_exact, qubo_to_ising, scale_qubo
from deuteropt.surrogate import TrainConfig, fm_to_qubo, fm_train


@pytest.fixture
def toy_qubo():
    # Q11 = 1, Q22 = -2, Q12 = 3
    return QuboModel.from_terms(2, {0: 1.0, 1: -2.0}, {(0, 1): 3.0})


def random_qubo(n, seed, offset=0.0):
    rng = np.random.default_rng(seed)
    return QuboModel(n, rng.uniform(-1, 1, n), np.triu(rng.uniform(-1, 1, (n, n)), 1), offset)


def surrogate_hamiltonians(seed=0, n0=3, beta0=10.0):
    """(unconstrained, constrained) Ising models from an FM fit on FC-like synthetic data."""
    ds = synth_dataset(fc_like_truth(6, seed))
    train, _ = select_training_set(ds, 5, seed)
    model, _ = fm_train(train, TrainConfig(seed=seed))
    scaled = scale_qubo(fm_to_qubo(model))
    return qubo_to_ising(scaled), qubo_to_ising(combine(scaled, penalty_qubo_exact(6, n0), beta0))


@pytest.fixture(scope="session")
def hamiltonians():
    return surrogate_hamiltonians(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
