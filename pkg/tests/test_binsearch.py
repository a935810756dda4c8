import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deuteropt.binsearch import Solver, binary_search_solve, fix_qubits, marginals, render_assignment
from deuteropt.dataset import bits_of_index
from deuteropt.hamiltonian import IsingModel, exact_solve, ising_energy, qubo_to_ising
from deuteropt.optim import OptimizerConfig
from deuteropt.qsim import NoiseModel
from deuteropt.vqa import ShotMode

from conftest import random_qubo


def test_marginals_examples():
    m = marginals({"000000": 0.9, "000010": 0.1}, list(range(6)))
    assert m[4] == pytest.approx((0.9, 0.1))
    assert all(m[i] == (1.0, 0.0) for i in (0, 1, 2, 3, 5))
    uniform = {"".join(b): 0.125 for b in itertools.product("01", repeat=3)}
    assert all(v == (0.5, 0.5) for v in marginals(uniform, [0, 1, 2]).values())
    assert marginals({"101": 1.0}, [3, 4, 5]) == {3: (0.0, 1.0), 4: (1.0, 0.0), 5: (0.0, 1.0)}


def test_marginals_errors():
    with pytest.raises(ValueError, match="sums"):
        marginals({"01": 0.5}, [0, 1])
    with pytest.raises(ValueError):
        marginals({"011": 1.0}, [0, 1])


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_marginals_sum_to_one(n, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(2**n))
    dist = {"".join(map(str, bits_of_index(b, n))): float(p[b]) for b in range(2**n)}
    for p0, p1 in marginals(dist, list(range(n))).values():
        assert 0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0
        assert abs(p0 + p1 - 1.0) < 1e-9


def test_fix_qubits_examples(toy_qubo):
    H = qubo_to_ising(toy_qubo)
    R, keep = fix_qubits(H, {0: 0})
    assert keep == [1]
    assert R.h[0] == pytest.approx(-1.0) and R.offset == pytest.approx(-1.0)
    assert ising_energy(R, (1,)) == pytest.approx(-2.0) == ising_energy(H, (0, 1))
    same, keep = fix_qubits(H, {})
    assert same == H and keep == [0, 1]
    empty, keep = fix_qubits(H, {0: 1, 1: 0})
    assert empty.n == 0 and keep == []
    assert empty.offset == pytest.approx(ising_energy(H, (1, 0)))


def test_fix_qubits_errors(toy_qubo):
    H = qubo_to_ising(toy_qubo)
    with pytest.raises(ValueError, match="range"):
        fix_qubits(H, {2: 0})
    with pytest.raises(ValueError, match="twice"):
        fix_qubits(H, [(0, 1), (0, 0)])
    with pytest.raises(ValueError):
        fix_qubits(H, {0: 2})


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_fix_energy_identity(n, seed, data):
    H = qubo_to_ising(random_qubo(n, seed, offset=0.5))
    sites = data.draw(st.lists(st.integers(0, n - 1), unique=True, max_size=n))
    fixes = {s: data.draw(st.integers(0, 1)) for s in sites}
    R, keep = fix_qubits(H, fixes)
    assert R.meta["fixed"] == {str(k): v for k, v in sorted(fixes.items())}
    for rest in itertools.product((0, 1), repeat=len(keep)):
        full = [0] * n
        for s, b in fixes.items():
            full[s] = b
        for k, b in zip(keep, rest):
            full[k] = b
        assert abs(ising_energy(H, full) - ising_energy(R, rest)) < 1e-12


def test_single_site_positive_field():
    bits, trace = binary_search_solve(IsingModel(1, [1.0], None))
    assert bits == (0,) and len(trace.rounds) == 1


def test_exact_mode_vqe_one_round(hamiltonians):
    Hu, Hc = hamiltonians
    bits, trace = binary_search_solve(Hu, Solver("vqe", 1), delta=0.7)
    assert bits in exact_solve(Hu)[1]
    assert len(trace.rounds) == 1
    # loose settings need not find the constrained optimum, but the penalty still holds
    bits_c, _ = binary_search_solve(Hc, Solver("vqe", 1))
    assert bits_c.count(0) == 3


def test_progress_and_termination():
    # H = 0 gives uniform marginals, so every round is forced to fix exactly one site
    bits, trace = binary_search_solve(IsingModel.zeros(4), Solver("qaoa", 1))
    sizes = [r.size for r in trace.rounds]
    assert sizes == [4, 3, 2, 1]
    assert all(r.forced and len(r.fixed) == 1 for r in trace.rounds)
    # ties go to the lowest remaining site
    assert [next(iter(r.fixed)) for r in trace.rounds] == [0, 1, 2, 3]
    assert len(bits) == 4


@pytest.mark.parametrize("seed", range(3))
def test_rounds_shrink_strictly(seed, hamiltonians):
    Hu, _ = hamiltonians
    mode = ShotMode(shots=1024, noise=NoiseModel.uniform(6, 0.1, 0.1, 0.05), trajectories=4)
    bits, trace = binary_search_solve(Hu, Solver("qaoa", 1), mode=mode, seed=seed)
    sizes = [r.size for r in trace.rounds]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))
    assert len(trace.rounds) <= 6
    covered = [s for r in trace.rounds for s in r.fixed]
    assert sorted(covered) == list(range(6))
    assert tuple(bits) == tuple(dict(sorted({s: b for r in trace.rounds for s, b in r.fixed.items()}.items())).values())


def test_delta_validation(hamiltonians):
    with pytest.raises(ValueError):
        binary_search_solve(hamiltonians[0], delta=0.5)
    with pytest.raises(ValueError):
        Solver("annealer")


def test_trace_serialization(hamiltonians):
    Hu, _ = hamiltonians
    bits, trace = binary_search_solve(Hu, Solver("vqe"), loose_opt=OptimizerConfig(max_iter=30, rho_end=0.05, restarts=1))
    d = json.loads(trace.to_json())
    assert d["config"]["delta"] == 0.7 and len(d["rounds"]) == len(trace.rounds)
    lines = trace.marginals_csv().splitlines()
    assert lines[0] == "round,site,p0,p1,fixed_bit"
    assert len(lines) == 1 + sum(r.size for r in trace.rounds)
    assert trace.evaluations == sum(r.evaluations for r in trace.rounds) > 0
    assert render_assignment(bits) == "".join(map(str, bits))
