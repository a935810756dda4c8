"""Dense statevector simulator with Pauli-trajectory gate noise and readout mitigation.

Basis index convention: qubit 0 is the most significant bit of the amplitude
index, so the bitstring of index ``b`` reads left to right as qubits 0..n-1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import bits_of_index, parse_feature_vector, render_feature_vector

DEFAULT_SHOTS = 8192

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULIS = (_I2, _X, _Y, _Z)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rz_phases(theta: float) -> np.ndarray:
    return np.array([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


class CircuitError(ValueError):
    pass


class MitigationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Op:
    """One gate. The rotation angle is ``const + coeff * params[slot]`` (slot None: const only)."""

    name: str
    qubits: tuple[int, ...]
    slot: int | None = None
    coeff: float = 1.0
    const: float = 0.0

    def angle(self, params: Sequence[float]) -> float:
        if self.slot is None:
            return self.const
        return self.const + self.coeff * float(params[self.slot])


_ARITY = {"ry": 1, "rx": 1, "rz": 1, "h": 1, "x": 1, "cnot": 2, "zz": 2}


@dataclass
class Circuit:
    n: int
    ops: list[Op] = field(default_factory=list)
    n_params: int = 0

    def _add(self, op: Op) -> "Circuit":
        if _ARITY[op.name] != len(op.qubits):
            raise CircuitError(f"{op.name} takes {_ARITY[op.name]} qubit(s)")
        for q in op.qubits:
            if not 0 <= q < self.n:
                raise CircuitError(f"qubit index {q} out of range for n={self.n}")
        if len(set(op.qubits)) != len(op.qubits):
            raise CircuitError(f"repeated qubit in {op}")
        if op.slot is not None:
            if op.slot < 0:
                raise CircuitError("negative parameter slot")
            self.n_params = max(self.n_params, op.slot + 1)
        self.ops.append(op)
        return self

    def ry(self, q: int, slot: int | None = None, *, coeff: float = 1.0, const: float = 0.0):
        return self._add(Op("ry", (q,), slot, coeff, const))

    def rx(self, q: int, slot: int | None = None, *, coeff: float = 1.0, const: float = 0.0):
        return self._add(Op("rx", (q,), slot, coeff, const))

    def rz(self, q: int, slot: int | None = None, *, coeff: float = 1.0, const: float = 0.0):
        return self._add(Op("rz", (q,), slot, coeff, const))

    def h(self, q: int):
        return self._add(Op("h", (q,)))

    def x(self, q: int):
        return self._add(Op("x", (q,)))

    def cnot(self, control: int, target: int):
        return self._add(Op("cnot", (control, target)))

    def zz(self, i: int, j: int, slot: int | None = None, *, coeff: float = 1.0, const: float = 0.0):
        """``exp(-i angle/2 Z_i Z_j)``, executed as CNOT(i,j) RZ(j) CNOT(i,j)."""
        return self._add(Op("zz", (i, j), slot, coeff, const))

    @property
    def cnot_count(self) -> int:
        return sum(1 for op in self.ops if op.name == "cnot") + 2 * sum(1 for op in self.ops if op.name == "zz")

    @property
    def param_count(self) -> int:
        return self.n_params


@dataclass(frozen=True)
class NoiseModel:
    """Per-qubit readout flips ``(p01, p10)`` and a two-qubit depolarizing rate per CNOT.

    ``p01`` is P(read 1 | prepared 0), ``p10`` is P(read 0 | prepared 1).
    """

    readout: tuple[tuple[float, float], ...] = ()
    cnot_depolarizing: float = 0.0

    def __post_init__(self):
        ro = tuple((float(a), float(b)) for a, b in self.readout)
        object.__setattr__(self, "readout", ro)
        for a, b in ro:
            if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
                raise ValueError(f"readout probabilities must be in [0, 1], got {(a, b)}")
        if not 0.0 <= self.cnot_depolarizing <= 1.0:
            raise ValueError("cnot_depolarizing must be in [0, 1]")

    @classmethod
    def uniform(cls, n: int, p01: float = 0.0, p10: float = 0.0, cnot_depolarizing: float = 0.0) -> "NoiseModel":
        return cls(tuple((p01, p10) for _ in range(n)), cnot_depolarizing)

    def readout_for(self, n: int) -> tuple[tuple[float, float], ...]:
        if not self.readout:
            return tuple((0.0, 0.0) for _ in range(n))
        if len(self.readout) == 1 and n > 1:
            return self.readout * n
        if len(self.readout) != n:
            raise ValueError(f"noise model covers {len(self.readout)} qubits, circuit has {n}")
        return self.readout

    def subset(self, qubits: Sequence[int]) -> "NoiseModel":
        """Restrict the readout channel to the given qubits (in that order)."""
        if not self.readout or len(self.readout) == 1:
            return self
        return NoiseModel(tuple(self.readout[q] for q in qubits), self.cnot_depolarizing)

    @property
    def has_readout(self) -> bool:
        return any(a > 0 or b > 0 for a, b in self.readout)

    def to_dict(self) -> dict:
        return {"readout": [list(p) for p in self.readout], "cnot_depolarizing": self.cnot_depolarizing}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseModel":
        unknown = set(d) - {"readout", "cnot_depolarizing"}
        if unknown:
            raise ValueError(f"unknown noise model keys: {sorted(unknown)}")
        return cls(tuple(tuple(p) for p in d.get("readout", ())), float(d.get("cnot_depolarizing", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NoiseModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class StateVector:
    n: int
    amplitudes: np.ndarray

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        amp = np.zeros(2**n, dtype=complex)
        amp[0] = 1.0
        return cls(n, amp)

    @classmethod
    def basis(cls, bits: Sequence[int]) -> "StateVector":
        from .dataset import index_of_bits

        amp = np.zeros(2 ** len(bits), dtype=complex)
        amp[index_of_bits(bits)] = 1.0
        return cls(len(bits), amp)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _apply_1q(psi: np.ndarray, U: np.ndarray, q: int, n: int) -> np.ndarray:
    T = psi.shape[0]
    view = psi.reshape(T * 2**q, 2, 2 ** (n - q - 1))
    return np.matmul(U, view).reshape(T, 2**n)


def _apply_diag(psi: np.ndarray, phases: np.ndarray, q: int, n: int) -> np.ndarray:
    T = psi.shape[0]
    view = psi.reshape(T * 2**q, 2, 2 ** (n - q - 1))
    return (view * phases[None, :, None]).reshape(T, 2**n)


def _apply_cnot(psi: np.ndarray, c: int, t: int, n: int) -> np.ndarray:
    T = psi.shape[0]
    full = psi.reshape((T,) + (2,) * n).copy()
    sl = [slice(None)] * (n + 1)
    sl[c + 1] = 1
    sub = full[tuple(sl)]
    axis = t + 1 if t < c else t
    sub[...] = np.flip(sub, axis=axis)
    return full.reshape(T, 2**n)


def _inject_pauli(psi: np.ndarray, rows: np.ndarray, codes: np.ndarray, qa: int, qb: int, n: int) -> np.ndarray:
    """Apply the two-qubit Pauli ``codes[r] = 4*a + b`` (a on qa, b on qb) to trajectory ``rows[r]``."""
    for row, code in zip(rows, codes):
        a, b = divmod(int(code), 4)
        sub = psi[row:row + 1]
        if a:
            sub = _apply_1q(sub, PAULIS[a], qa, n)
        if b:
            sub = _apply_1q(sub, PAULIS[b], qb, n)
        psi[row] = sub[0]
    return psi


def run_trajectories(c: Circuit, params: Sequence[float], noise: NoiseModel | None = None,
                     trajectories: int = 1, seed: int | None = 0,
                     initial: np.ndarray | None = None) -> np.ndarray:
    """Run ``trajectories`` independent noisy copies; returns a (trajectories, 2**n) array.

    After every CNOT (including the two inside each ZZ), each trajectory independently
    receives, with probability ``noise.cnot_depolarizing``, a uniformly random
    non-identity two-qubit Pauli on the CNOT's qubits.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (c.n_params,):
        raise CircuitError(f"expected {c.n_params} parameters, got {params.shape[0] if params.ndim else 0}")
    n = c.n
    lam = noise.cnot_depolarizing if noise is not None else 0.0
    rng = np.random.default_rng(seed) if lam > 0 else None
    if initial is None:
        psi = np.zeros((trajectories, 2**n), dtype=complex)
        psi[:, 0] = 1.0
    else:
        psi = np.tile(np.asarray(initial, dtype=complex).reshape(1, 2**n), (trajectories, 1))

    def after_cnot(psi, qa, qb):
        if rng is None:
            return psi
        hit = np.flatnonzero(rng.random(trajectories) < lam)
        if hit.size:
            codes = rng.integers(1, 16, size=hit.size)
            psi = _inject_pauli(psi, hit, codes, qa, qb, n)
        return psi

    for op in c.ops:
        name = op.name
        if name == "ry":
            psi = _apply_1q(psi, ry(op.angle(params)), op.qubits[0], n)
        elif name == "rx":
            psi = _apply_1q(psi, rx(op.angle(params)), op.qubits[0], n)
        elif name == "rz":
            psi = _apply_diag(psi, rz_phases(op.angle(params)), op.qubits[0], n)
        elif name == "h":
            psi = _apply_1q(psi, _H, op.qubits[0], n)
        elif name == "x":
            psi = _apply_1q(psi, _X, op.qubits[0], n)
        elif name == "cnot":
            qa, qb = op.qubits
            psi = after_cnot(_apply_cnot(psi, qa, qb, n), qa, qb)
        elif name == "zz":
            qa, qb = op.qubits
            psi = after_cnot(_apply_cnot(psi, qa, qb, n), qa, qb)
            psi = _apply_diag(psi, rz_phases(op.angle(params)), qb, n)
            psi = after_cnot(_apply_cnot(psi, qa, qb, n), qa, qb)
        else:  # pragma: no cover - guarded by Circuit._add
            raise CircuitError(f"unknown gate {name}")
    return psi


def run_circuit(c: Circuit, params: Sequence[float] = (), noise: NoiseModel | None = None,
                seed: int | None = 0) -> StateVector:
    """Single-trajectory execution from |0...0>."""
    psi = run_trajectories(c, params, noise, 1, seed)
    return StateVector(c.n, psi[0])


def expectation_ising(state: StateVector, H) -> float:
    """Exact <H>; H is diagonal in the computational basis."""
    if state.n != H.n:
        raise ValueError(f"dimension mismatch: state has {state.n} qubits, H has {H.n}")
    return float(state.probabilities() @ H.energies())


def readout_matrix(noise: NoiseModel | None, n: int) -> np.ndarray:
    """Exact 2**n x 2**n readout channel, column j = outcome distribution for prepared j."""
    A = np.ones((1, 1))
    pairs = noise.readout_for(n) if noise is not None else tuple((0.0, 0.0) for _ in range(n))
    for p01, p10 in pairs:
        A = np.kron(A, np.array([[1 - p01, p10], [p01, 1 - p10]]))
    return A


def _counts_vector_to_map(vec: np.ndarray, n: int) -> dict[str, int]:
    return {render_feature_vector(bits_of_index(int(b), n)): int(vec[b]) for b in np.flatnonzero(vec)}


def sample_probabilities(probs: np.ndarray, n: int, shots: int, noise: NoiseModel | None,
                         rng: np.random.Generator) -> np.ndarray:
    """Multinomial draw over basis indices followed by independent per-bit readout flips."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    ideal = rng.multinomial(shots, p)
    if noise is None or not noise.has_readout:
        return ideal
    A = readout_matrix(noise, n)
    out = np.zeros(2**n, dtype=np.int64)
    # shots sharing a true bitstring flip independently: a multinomial over that column
    for b in np.flatnonzero(ideal):
        out += rng.multinomial(int(ideal[b]), A[:, b])
    return out


def sample(state: StateVector, shots: int = DEFAULT_SHOTS, noise: NoiseModel | None = None,
           seed: int | None = 0) -> dict[str, int]:
    rng = np.random.default_rng(seed)
    vec = sample_probabilities(state.probabilities(), state.n, shots, noise, rng)
    return _counts_vector_to_map(vec, state.n)


def counts_to_vector(counts: Mapping[str, float], n: int) -> np.ndarray:
    from .dataset import index_of_bits

    vec = np.zeros(2**n)
    for key, c in counts.items():
        bits = parse_feature_vector(key)
        if len(bits) != n:
            raise ValueError(f"bitstring {key!r} does not have {n} bits")
        vec[index_of_bits(bits)] += c
    return vec


def vector_to_distribution(vec: np.ndarray, n: int, drop_zero: bool = True) -> dict[str, float]:
    return {
        render_feature_vector(bits_of_index(b, n)): float(vec[b])
        for b in range(2**n)
        if not (drop_zero and vec[b] == 0.0)
    }


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    n: int
    M: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float).reshape(2**self.n, 2**self.n)
        if np.any(M < 0):
            raise ValueError("confusion matrix has negative entries")
        if not np.allclose(M.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("confusion matrix columns must sum to 1")
        object.__setattr__(self, "M", M)

    def to_dict(self) -> dict:
        return {"n": self.n, "M": self.M.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionMatrix":
        return cls(int(d["n"]), np.array(d["M"]), dict(d.get("meta", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ConfusionMatrix":
        return cls.from_dict(json.loads(text))


def build_confusion_matrix(n: int, noise: NoiseModel | None, shots_per_state: int = 10_000,
                           seed: int | None = 0) -> ConfusionMatrix:
    """Prepare every basis state, measure through the readout channel, normalize into columns."""
    if shots_per_state < 1:
        raise ValueError("shots_per_state must be >= 1")
    rng = np.random.default_rng(seed)
    dim = 2**n
    M = np.zeros((dim, dim))
    for j in range(dim):
        basis = np.zeros(dim)
        basis[j] = 1.0
        M[:, j] = sample_probabilities(basis, n, shots_per_state, noise, rng) / shots_per_state
    return ConfusionMatrix(n, M, {"shots_per_state": shots_per_state, "seed": seed})


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def simplex_least_squares(M: np.ndarray, p: np.ndarray, max_iter: int = 20_000, tol: float = 1e-13) -> np.ndarray:
    """min ||M x - p||_2 over the probability simplex, by accelerated projected gradient."""
    x0 = project_simplex(np.linalg.lstsq(M, p, rcond=None)[0])
    L = float(np.linalg.norm(M, 2) ** 2)
    if L == 0.0:
        return x0
    step = 1.0 / L
    x = y = x0
    t = 1.0
    MtM = M.T @ M
    Mtp = M.T @ p
    for _ in range(max_iter):
        x_new = project_simplex(y - step * (MtM @ y - Mtp))
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x, t = x_new, t_new
    return x


def mitigate_vector(p_noisy: np.ndarray, M: np.ndarray, cond_limit: float = 1e10) -> np.ndarray:
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > cond_limit:
        raise MitigationError(f"calibration matrix is ill-conditioned (cond ~ {cond:.3g})")
    x = np.linalg.solve(M, p_noisy)
    if np.all(x >= -1e-15):
        # already feasible: the unconstrained optimum is the constrained one
        x = np.clip(x, 0.0, None)
        return x / x.sum()
    return simplex_least_squares(M, p_noisy)


def mitigate(counts: Mapping[str, float], M: ConfusionMatrix) -> dict[str, float]:
    """Readout-corrected distribution: simplex-constrained least squares against ``M``."""
    vec = counts_to_vector(counts, M.n)
    total = vec.sum()
    if total <= 0:
        raise ValueError("empty counts")
    x = mitigate_vector(vec / total, M.M)
    return vector_to_distribution(x, M.n)


def counts_to_csv(counts: Mapping[str, int]) -> str:
    lines = ["bitstring,count"]
    lines += [f"{k},{int(v)}" for k, v in sorted(counts.items())]
    return "\n".join(lines) + "\n"
