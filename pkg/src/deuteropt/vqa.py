"""Ry and QAOA ansätze, and VQE/QAOA drivers over the statevector simulator.

Sign convention: a measured bit ``b`` is the QUBO variable itself, so the spin
is ``s = 2b - 1``. Because |0> is the +1 eigenstate of Pauli Z, the spin
observable is ``-Z``; the QAOA cost layer is built accordingly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hamiltonian import IsingModel
from .optim import OptimizerConfig, cobyla_minimize
from .qsim import (
    DEFAULT_SHOTS,
    Circuit,
    ConfusionMatrix,
    NoiseModel,
    build_confusion_matrix,
    mitigate_vector,
    run_trajectories,
    sample_probabilities,
    vector_to_distribution,
)


@dataclass(frozen=True)
class AnsatzSpec:
    kind: str  # "ry" or "qaoa"
    n: int
    reps: int  # depth for Ry, p for QAOA
    param_count: int
    cnot_count: int


def build_ry_ansatz(n: int, depth: int = 1) -> tuple[Circuit, AnsatzSpec]:
    """RY layer, then ``depth`` x (linear CNOT chain, RY layer)."""
    if n < 2:
        raise ValueError("Ry ansatz needs n >= 2")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    c = Circuit(n)
    slot = 0
    for q in range(n):
        c.ry(q, slot)
        slot += 1
    for _ in range(depth):
        for q in range(n - 1):
            c.cnot(q, q + 1)
        for q in range(n):
            c.ry(q, slot)
            slot += 1
    return c, AnsatzSpec("ry", n, depth, c.param_count, c.cnot_count)


def build_single_qubit_ansatz() -> tuple[Circuit, AnsatzSpec]:
    """One RY rotation; what the Ry family degenerates to when only one site remains."""
    c = Circuit(1).ry(0, 0)
    return c, AnsatzSpec("ry", 1, 0, 1, 0)


def build_qaoa_ansatz(H: IsingModel, p: int) -> tuple[Circuit, AnsatzSpec]:
    """``|+>^n`` followed by p (cost, mixer) layers; parameters are (g1, b1, ..., gp, bp).

    Cost layer ``exp(-i g H(s))`` with ``s = -Z``: each coupling becomes
    ``ZZ(2 g J_ij)`` and each field ``RZ(-2 g h_i)``. Mixer is ``RX(2 b)`` on every qubit.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    n = H.n
    c = Circuit(n)
    for q in range(n):
        c.h(q)
    couplings = H.couplings()
    for layer in range(p):
        g, b = 2 * layer, 2 * layer + 1
        for i, j, Jij in couplings:
            c.zz(i, j, g, coeff=2.0 * Jij)
        for i in range(n):
            if H.h[i] != 0.0:
                c.rz(i, g, coeff=-2.0 * float(H.h[i]))
        for q in range(n):
            c.rx(q, b, coeff=2.0)
    # parameters that no gate references still count (e.g. H = 0)
    c.n_params = max(c.n_params, 2 * p)
    return c, AnsatzSpec("qaoa", n, p, 2 * p, c.cnot_count)


@dataclass(frozen=True)
class ExactMode:
    pass


@dataclass(frozen=True)
class ShotMode:
    shots: int = DEFAULT_SHOTS
    noise: NoiseModel | None = None
    mitigate: bool = False
    trajectories: int = 32
    calibration_shots: int = 10_000

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")


Mode = ExactMode | ShotMode


def top_k(dist: dict[str, float], k: int = 5) -> list[tuple[str, float]]:
    """Descending probability; ties broken lexicographically by bitstring."""
    items = sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))
    return items[:k]


@dataclass
class VqaResult:
    method: str
    best_params: list[float]
    energy: float
    energy_trace: list[tuple[int, float]]
    final_distribution: dict[str, float]
    top_k: list[tuple[str, float]]
    mitigated: bool = False
    ansatz: dict = field(default_factory=dict)
    restart_energies: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    restart_params: list[list[float]] = field(default_factory=list)

    @property
    def top_bitstring(self) -> str:
        return self.top_k[0][0]

    @property
    def top_probability(self) -> float:
        return self.top_k[0][1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["energy_trace"] = [[i, e] for i, e in self.energy_trace]
        d["top_k"] = [[b, p] for b, p in self.top_k]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VqaResult":
        return cls(
            method=d["method"],
            best_params=list(d["best_params"]),
            energy=float(d["energy"]),
            energy_trace=[(int(i), float(e)) for i, e in d["energy_trace"]],
            final_distribution={k: float(v) for k, v in d["final_distribution"].items()},
            top_k=[(str(b), float(p)) for b, p in d["top_k"]],
            mitigated=bool(d.get("mitigated", False)),
            ansatz=dict(d.get("ansatz", {})),
            restart_energies=list(d.get("restart_energies", [])),
            config=dict(d.get("config", {})),
            restart_params=[list(map(float, r)) for r in d.get("restart_params", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def trace_csv(self) -> str:
        return "iteration,energy\n" + "".join(f"{i},{e!r}\n" for i, e in self.energy_trace)


class _Objective:
    """Energy of a parameterized circuit, exact or shot-estimated."""

    def __init__(self, circuit: Circuit, H: IsingModel, mode: Mode, seed: int):
        self.circuit = circuit
        self.n = H.n
        self.energies = H.energies()
        self.mode = mode
        self.seed = seed
        self.evaluations = 0
        self.calibration: ConfusionMatrix | None = None
        if isinstance(mode, ShotMode) and mode.mitigate:
            self.calibration = build_confusion_matrix(
                self.n, mode.noise, mode.calibration_shots, seed=_derive(seed, "calibration")
            )

    def distribution(self, params: np.ndarray, eval_seed: int | None = None) -> np.ndarray:
        mode = self.mode
        if isinstance(mode, ExactMode):
            psi = run_trajectories(self.circuit, params, None, 1, None)[0]
            p = np.abs(psi) ** 2
            return p / p.sum()
        seed = eval_seed if eval_seed is not None else _derive(self.seed, "eval", self.evaluations)
        noisy_gates = mode.noise is not None and mode.noise.cnot_depolarizing > 0
        T = mode.trajectories if noisy_gates else 1
        psi = run_trajectories(self.circuit, params, mode.noise, T, _derive(seed, "traj"))
        probs = (np.abs(psi) ** 2).mean(axis=0)
        rng = np.random.default_rng(_derive(seed, "shots"))
        counts = sample_probabilities(probs, self.n, mode.shots, mode.noise, rng)
        p = counts / counts.sum()
        if self.calibration is not None:
            p = mitigate_vector(p, self.calibration.M)
        return p

    def __call__(self, params: np.ndarray) -> float:
        p = self.distribution(np.asarray(params, dtype=float))
        self.evaluations += 1
        return float(p @ self.energies)


def _derive(seed: int, *keys) -> int:
    """Stable child seed from a master seed and a path of keys."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [_key_int(k) for k in keys])
    return int(ss.generate_state(1)[0])


def _key_int(k) -> int:
    if isinstance(k, int):
        return k & 0xFFFFFFFF
    return int.from_bytes(str(k).encode()[:8].ljust(8, b"\0"), "little") & 0xFFFFFFFF


def _energy_scale(H: IsingModel) -> float:
    coefs = np.concatenate([np.abs(H.h), np.abs(H.J[np.triu_indices(H.n, 1)])])
    m = float(coefs.max()) if coefs.size else 0.0
    return m if m > 0 else 1.0


def _run(method: str, circuit: Circuit, spec: AnsatzSpec, H: IsingModel, opt: OptimizerConfig,
         mode: Mode, initial_points: Callable[[int, np.random.Generator], np.ndarray],
         to_circuit: Callable[[np.ndarray], np.ndarray]) -> VqaResult:
    rng = np.random.default_rng(_derive(opt.seed, method, "init"))
    best = None
    restart_energies = []
    restart_params = []
    for r in range(opt.restarts):
        obj = _Objective(circuit, H, mode, _derive(opt.seed, method, "restart", r))
        x0 = initial_points(r, rng)
        x, fx, trace = cobyla_minimize(lambda u: obj(to_circuit(u)), x0, opt)
        restart_energies.append(fx)
        restart_params.append([float(v) for v in to_circuit(x)])
        if best is None or fx < best[1]:
            best = (x, fx, trace, obj)
    x, fx, trace, obj = best
    params = to_circuit(x)
    final = obj.distribution(params, eval_seed=_derive(opt.seed, method, "final"))
    dist = vector_to_distribution(final, H.n)
    return VqaResult(
        method=method,
        best_params=[float(v) for v in params],
        energy=float(fx),
        energy_trace=list(enumerate(trace)),
        final_distribution=dist,
        top_k=top_k(dist),
        mitigated=isinstance(mode, ShotMode) and mode.mitigate,
        ansatz=asdict(spec),
        restart_energies=restart_energies,
        config={"optimizer": asdict(opt), "mode": _mode_dict(mode)},
        restart_params=restart_params,
    )


def _mode_dict(mode: Mode) -> dict:
    if isinstance(mode, ExactMode):
        return {"kind": "exact"}
    d = {"kind": "shots", "shots": mode.shots, "mitigate": mode.mitigate,
         "trajectories": mode.trajectories, "calibration_shots": mode.calibration_shots}
    d["noise"] = mode.noise.to_dict() if mode.noise is not None else None
    return d


def vqe_run(H: IsingModel, opt: OptimizerConfig | None = None, mode: Mode | None = None,
            depth: int = 1) -> VqaResult:
    """Best-of-restarts VQE with the Ry ansatz; restarts draw angles uniformly in [0, 2pi)."""
    opt = opt or OptimizerConfig()
    mode = mode or ExactMode()
    if H.n == 1:
        circuit, spec = build_single_qubit_ansatz()
    else:
        circuit, spec = build_ry_ansatz(H.n, depth)

    def init(r, rng):
        return rng.uniform(0.0, 2 * math.pi, size=spec.param_count)

    return _run("vqe", circuit, spec, H, opt, mode, init, lambda u: u)


def qaoa_linear_ramp(p: int, gamma_max: float, beta_max: float) -> np.ndarray:
    """(g_l, b_l) = (l/p * gamma_max, (1 - l/p) * beta_max) for l = 1..p, interleaved."""
    out = np.empty(2 * p)
    for l in range(1, p + 1):
        out[2 * (l - 1)] = l / p * gamma_max
        out[2 * (l - 1) + 1] = (1 - l / p) * beta_max
    return out


QAOA_GAMMA_MAX = 0.8
QAOA_BETA_MAX = 0.8


def qaoa_run(H: IsingModel, p: int = 1, opt: OptimizerConfig | None = None, mode: Mode | None = None,
             x0: Sequence[float] | Sequence[Sequence[float]] | None = None) -> VqaResult:
    """Best-of-restarts QAOA.

    The optimizer works on ``gamma * scale`` where ``scale`` is the largest |h|, |J|,
    so one trust-region radius suits Hamiltonians of any magnitude; reported
    parameters are the physical angles. The first restart is a linear ramp and
    later restarts are random, unless ``x0`` (physical angles) is given: a single
    vector replaces the ramp, a list of vectors seeds the first ``len(x0)`` restarts.
    """
    opt = opt or OptimizerConfig()
    mode = mode or ExactMode()
    circuit, spec = build_qaoa_ansatz(H, p)
    scale = _energy_scale(H)
    unit = np.ones(2 * p)
    unit[0::2] = 1.0 / scale

    starts = None if x0 is None else np.atleast_2d(np.asarray(x0, dtype=float))
    if starts is not None and starts.shape[1] != 2 * p:
        raise ValueError(f"x0 must have {2 * p} angles per start")

    def init(r, rng):
        # draw unconditionally so random restarts do not depend on how many starts were given
        u = np.empty(2 * p)
        u[0::2] = rng.uniform(0.0, 2 * QAOA_GAMMA_MAX, size=p)
        u[1::2] = rng.uniform(0.0, math.pi / 2, size=p)
        if starts is not None and r < len(starts):
            return starts[r] / unit
        if r == 0:
            return qaoa_linear_ramp(p, QAOA_GAMMA_MAX, QAOA_BETA_MAX)
        return u

    return _run("qaoa", circuit, spec, H, opt, mode, init, lambda u: np.asarray(u) * unit)


def uniform_energy(H: IsingModel) -> float:
    return float(H.energies().mean())


def qaoa_interp(params: Sequence[float]) -> np.ndarray:
    """Level-p angles -> level-(p+1) start by linear interpolation of each schedule.

    ``x'_i = (i-1)/p * x_{i-1} + (p-i+1)/p * x_i`` for i = 1..p+1, with x_0 = x_{p+1} = 0,
    applied separately to the gammas and the betas.
    """
    params = np.asarray(params, dtype=float)
    p = params.size // 2
    out = np.empty(2 * (p + 1))
    for k in (0, 1):
        x = np.concatenate([[0.0], params[k::2], [0.0]])
        out[k::2] = [(i - 1) / p * x[i - 1] + (p - i + 1) / p * x[i] for i in range(1, p + 2)]
    return out


def qaoa_sweep(H: IsingModel, p_max: int, opt: OptimizerConfig | None = None,
               mode: Mode | None = None) -> list[VqaResult]:
    """QAOA at p = 1..p_max with warm starts.

    Every restart at level p+1 starts from the interpolated optimum of the same
    restart at level p, so each restart follows its own chain through the levels.
    """
    results: list[VqaResult] = []
    for p in range(1, p_max + 1):
        x0 = [qaoa_interp(x) for x in results[-1].restart_params] if results else None
        results.append(qaoa_run(H, p, opt, mode, x0=x0))
    return results
