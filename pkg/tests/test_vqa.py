import math

import numpy as np
import pytest

from deuteropt.dataset import render_feature_vector
from deuteropt.hamiltonian import IsingModel, exact_solve, ising_energies, qubo_to_ising
from deuteropt.optim import OptimizerConfig
from deuteropt.qsim import NoiseModel, run_circuit
from deuteropt.vqa import (
    ExactMode,
    ShotMode,
    VqaResult,
    build_qaoa_ansatz,
    build_ry_ansatz,
    qaoa_linear_ramp,
    qaoa_run,
    top_k,
    uniform_energy,
    vqe_run,
)

from conftest import random_qubo

FAST = OptimizerConfig(max_iter=300, restarts=2)


def fully_coupled(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return IsingModel(n, rng.uniform(0.5, 1, n), np.triu(rng.uniform(0.5, 1, (n, n)), 1))


@pytest.mark.parametrize("n, depth", [(2, 1), (3, 2), (6, 1), (6, 3), (8, 2)])
def test_ry_statistics(n, depth):
    c, spec = build_ry_ansatz(n, depth)
    assert spec.param_count == c.param_count == n * (depth + 1)
    assert spec.cnot_count == c.cnot_count == (n - 1) * depth


def test_ry_table_row():
    _, spec = build_ry_ansatz(6, 1)
    assert (spec.cnot_count, spec.param_count) == (5, 12)
    _, spec = build_ry_ansatz(2, 1)
    assert (spec.cnot_count, spec.param_count) == (1, 4)


def test_ry_zero_angles_gives_zero_state():
    c, spec = build_ry_ansatz(6, 1)
    p = run_circuit(c, np.zeros(spec.param_count)).probabilities()
    assert p[0] == pytest.approx(1.0, abs=1e-15)


def test_ry_invalid():
    with pytest.raises(ValueError):
        build_ry_ansatz(1, 1)
    with pytest.raises(ValueError):
        build_ry_ansatz(3, 0)


@pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
def test_qaoa_statistics(p):
    _, spec = build_qaoa_ansatz(fully_coupled(), p)
    assert (spec.cnot_count, spec.param_count) == (30 * p, 2 * p)


def test_qaoa_statistics_sparse():
    J = np.zeros((4, 4))
    J[0, 1], J[2, 3] = 1.0, -0.5
    H = IsingModel(4, [1, 0, 0, 1], J)
    for p in (1, 3):
        c, spec = build_qaoa_ansatz(H, p)
        assert spec.cnot_count == c.cnot_count == 2 * 2 * p
        assert spec.param_count == c.param_count == 2 * p
    c, spec = build_qaoa_ansatz(IsingModel.zeros(3), 2)
    assert spec.cnot_count == 0 and c.param_count == 4
    with pytest.raises(ValueError):
        build_qaoa_ansatz(H, 0)


def test_qaoa_zero_angles_uniform():
    H = fully_coupled()
    c, spec = build_qaoa_ansatz(H, 2)
    p = run_circuit(c, np.zeros(4)).probabilities()
    np.testing.assert_allclose(p, 1 / 64, atol=1e-14)
    assert float(p @ H.energies()) == pytest.approx(uniform_energy(H), abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_qaoa_cost_layer_phase(seed):
    # one cost layer then nothing: phases must be exp(-i g E(b)) up to a global phase
    H = qubo_to_ising(random_qubo(4, seed))
    c, _ = build_qaoa_ansatz(H, 1)
    g = 0.37
    amps = run_circuit(c, [g, 0.0]).amplitudes
    expected = np.exp(-1j * g * H.energies()) / 4
    ratio = amps / expected
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)


def test_linear_ramp():
    np.testing.assert_allclose(qaoa_linear_ramp(2, 0.8, 0.6), [0.4, 0.3, 0.8, 0.0])


def test_top_k_ordering():
    dist = {"01": 0.3, "10": 0.3, "00": 0.1, "11": 0.3}
    assert top_k(dist, 3) == [("01", 0.3), ("10", 0.3), ("11", 0.3)]
    assert top_k(dist)[-1] == ("00", 0.1)


def test_vqe_examples(hamiltonians):
    Hu, Hc = hamiltonians
    res = vqe_run(Hu, FAST)
    assert res.top_bitstring == "000000" and res.top_probability >= 0.99
    res_c = vqe_run(Hc, FAST)
    assert res_c.top_bitstring.count("0") == 3
    e0, ground = exact_solve(Hc)
    assert res_c.top_bitstring == render_feature_vector(ground[0])
    for r, H in ((res, Hu), (res_c, Hc)):
        assert abs(sum(r.final_distribution.values()) - 1.0) < 1e-9
        assert min(e for _, e in r.energy_trace) >= exact_solve(H)[0] - 1e-9


def test_vqe_constant_hamiltonian():
    res = vqe_run(IsingModel.zeros(3, offset=0.4), OptimizerConfig(max_iter=30, restarts=1))
    assert all(e == pytest.approx(0.4, abs=1e-12) for _, e in res.energy_trace)


def test_vqe_single_qubit():
    res = vqe_run(IsingModel(1, [0.5], None), OptimizerConfig(max_iter=200, restarts=1))
    assert res.top_bitstring == "0" and res.energy == pytest.approx(-0.5, abs=1e-6)


def test_qaoa_unconstrained_p3_finds_ground(hamiltonians):
    Hu, _ = hamiltonians
    res = qaoa_run(Hu, 3, OptimizerConfig(restarts=2))
    assert res.top_bitstring == "000000"
    e0 = exact_solve(Hu)[0]
    assert all(e >= e0 - 1e-9 for _, e in res.energy_trace)
    assert len(res.best_params) == 6


def test_qaoa_zero_padding_cannot_hurt(hamiltonians):
    Hu, _ = hamiltonians
    r1 = qaoa_run(Hu, 1, FAST)
    r2 = qaoa_run(Hu, 2, FAST, x0=list(r1.best_params) + [0.0, 0.0])
    assert r2.energy <= r1.energy + 1e-9


def test_determinism(hamiltonians):
    Hu, _ = hamiltonians
    cfg = OptimizerConfig(max_iter=60, restarts=2, seed=5)
    assert vqe_run(Hu, cfg).to_json() == vqe_run(Hu, cfg).to_json()
    mode = ShotMode(shots=512, noise=NoiseModel.uniform(6, 0.03, 0.05, 0.01), trajectories=4)
    a = qaoa_run(Hu, 1, cfg, mode)
    b = qaoa_run(Hu, 1, cfg, mode)
    assert a.to_json() == b.to_json()


def test_shot_mode_mitigation_flags(hamiltonians):
    Hu, _ = hamiltonians
    cfg = OptimizerConfig(max_iter=40, restarts=1)
    noise = NoiseModel.uniform(6, 0.03, 0.05)
    res = vqe_run(Hu, cfg, ShotMode(shots=2048, noise=noise, mitigate=True, calibration_shots=2000))
    assert res.mitigated
    assert abs(sum(res.final_distribution.values()) - 1.0) < 1e-9
    assert all(v >= 0 for v in res.final_distribution.values())
    raw = vqe_run(Hu, cfg, ShotMode(shots=2048, noise=noise))
    assert not raw.mitigated
    assert all(float(v * 2048).is_integer() for v in raw.final_distribution.values())


def test_shot_mode_validation():
    with pytest.raises(ValueError):
        ShotMode(shots=0)
    with pytest.raises(ValueError):
        ShotMode(trajectories=0)


def test_result_serialization(hamiltonians):
    Hu, _ = hamiltonians
    res = vqe_run(Hu, OptimizerConfig(max_iter=20, restarts=1))
    back = VqaResult.from_dict(__import__("json").loads(res.to_json()))
    assert back.to_json() == res.to_json()
    csv = res.trace_csv().splitlines()
    assert csv[0] == "iteration,energy" and len(csv) == len(res.energy_trace) + 1
    assert res.config["optimizer"]["max_iter"] == 20 and res.config["mode"] == {"kind": "exact"}
