"""QUBO and Ising models, penalty construction, and exact enumeration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import all_bit_matrix, bits_of_index

MAX_EXACT_N = 24


def _strict_upper(mat, n: int) -> np.ndarray:
    a = np.zeros((n, n)) if mat is None else np.array(mat, dtype=float).reshape(n, n)
    return np.triu(a, 1)


@dataclass(frozen=True, eq=False)
class QuboModel:
    """``offset + sum_i diag[i] q_i + sum_{i<j} upper[i, j] q_i q_j``.

    ``upper`` is an (n, n) array whose entries on and below the diagonal are zero.
    """

    n: int
    diag: np.ndarray
    upper: np.ndarray
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        diag = np.array(self.diag, dtype=float).reshape(self.n)
        upper = _strict_upper(self.upper, self.n)
        if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(upper)) and np.isfinite(self.offset)):
            raise ValueError("QUBO coefficients must be finite")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def zeros(cls, n: int) -> "QuboModel":
        return cls(n, np.zeros(n), np.zeros((n, n)), 0.0)

    @classmethod
    def from_terms(cls, n: int, linear: dict[int, float] | None = None,
                   quadratic: dict[tuple[int, int], float] | None = None, offset: float = 0.0) -> "QuboModel":
        """0-based index terms; quadratic keys are folded into i < j."""
        diag = np.zeros(n)
        upper = np.zeros((n, n))
        for i, v in (linear or {}).items():
            diag[i] += v
        for (i, j), v in (quadratic or {}).items():
            if i == j:
                diag[i] += v
            else:
                upper[min(i, j), max(i, j)] += v
        return cls(n, diag, upper, offset)

    def coefficients(self) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return np.concatenate([self.diag, self.upper[iu]])

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuboModel):
            return NotImplemented
        return (self.n == other.n and self.offset == other.offset
                and np.array_equal(self.diag, other.diag) and np.array_equal(self.upper, other.upper))

    def to_dict(self) -> dict:
        iu = np.triu_indices(self.n, 1)
        return {
            "kind": "qubo",
            "n": self.n,
            "diag": self.diag.tolist(),
            "upper": {f"{i},{j}": float(self.upper[i, j]) for i, j in zip(*iu) if self.upper[i, j] != 0.0},
            "offset": self.offset,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuboModel":
        if d.get("kind", "qubo") != "qubo":
            raise ValueError(f"expected a qubo document, got kind={d.get('kind')!r}")
        n = int(d["n"])
        upper = np.zeros((n, n))
        for key, v in d.get("upper", {}).items():
            i, j = (int(t) for t in key.split(","))
            upper[i, j] = v
        return cls(n, d["diag"], upper, d.get("offset", 0.0), dict(d.get("meta", {})))


@dataclass(frozen=True, eq=False)
class IsingModel:
    """``offset + sum_i h[i] s_i + sum_{i<j} J[i, j] s_i s_j`` with ``s_i = 2 x_i - 1``."""

    n: int
    h: np.ndarray
    J: np.ndarray
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(self.n)
        J = _strict_upper(self.J, self.n)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(J)) and np.isfinite(self.offset)):
            raise ValueError("Ising coefficients must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def zeros(cls, n: int, offset: float = 0.0) -> "IsingModel":
        return cls(n, np.zeros(n), np.zeros((n, n)), offset)

    def couplings(self) -> list[tuple[int, int, float]]:
        iu = np.triu_indices(self.n, 1)
        return [(int(i), int(j), float(self.J[i, j])) for i, j in zip(*iu) if self.J[i, j] != 0.0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, IsingModel):
            return NotImplemented
        return (self.n == other.n and self.offset == other.offset
                and np.array_equal(self.h, other.h) and np.array_equal(self.J, other.J))

    def energies(self) -> np.ndarray:
        """Energy of every basis index, length 2**n."""
        return ising_energies(self)

    def to_dict(self) -> dict:
        return {
            "kind": "ising",
            "n": self.n,
            "h": self.h.tolist(),
            "J": {f"{i},{j}": v for i, j, v in self.couplings()},
            "offset": self.offset,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsingModel":
        if d.get("kind", "ising") != "ising":
            raise ValueError(f"expected an ising document, got kind={d.get('kind')!r}")
        n = int(d["n"])
        J = np.zeros((n, n))
        for key, v in d.get("J", {}).items():
            i, j = (int(t) for t in key.split(","))
            J[i, j] = v
        return cls(n, d["h"], J, d.get("offset", 0.0), dict(d.get("meta", {})))


def model_to_json(model: QuboModel | IsingModel) -> str:
    return json.dumps(model.to_dict(), indent=2, sort_keys=True)


def model_from_json(text: str) -> QuboModel | IsingModel:
    d = json.loads(text)
    return IsingModel.from_dict(d) if d.get("kind") == "ising" else QuboModel.from_dict(d)


def _check_len(n: int, x: Sequence[int]) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"length mismatch: expected {n} bits, got {arr.shape}")
    return arr


def qubo_eval(Q: QuboModel, x: Sequence[int]) -> float:
    q = _check_len(Q.n, x)
    return float(Q.offset + Q.diag @ q + q @ Q.upper @ q)


def qubo_energies(Q: QuboModel) -> np.ndarray:
    X = all_bit_matrix(Q.n).astype(float)
    return Q.offset + X @ Q.diag + np.einsum("bi,ij,bj->b", X, Q.upper, X)


def scale_qubo(Q: QuboModel, over: str = "linear") -> QuboModel:
    """Divide every coefficient and the offset by a positive magnitude ``s``.

    ``over="linear"``: ``s`` is the smallest nonzero ``|Q_ii|`` (falls back to all
    coefficients when every ``Q_ii`` is zero). ``over="all"``: smallest nonzero
    magnitude among all ``Q_ii`` and ``Q_ij``. Learned pair weights that the data
    does not pin down can sit arbitrarily close to zero, which makes ``"all"``
    blow the model up; hence the default.
    """
    if over not in ("linear", "all"):
        raise ValueError(f"unknown scaling basis {over!r}")
    coefs = np.abs(Q.coefficients())
    nonzero = coefs[coefs > 0]
    if nonzero.size == 0:
        raise ValueError("cannot scale an all-zero QUBO")
    lin = np.abs(Q.diag)
    lin = lin[lin > 0]
    s = float(lin.min()) if over == "linear" and lin.size else float(nonzero.min())
    meta = dict(Q.meta)
    meta["scale"] = s * meta.get("scale", 1.0)
    return QuboModel(Q.n, Q.diag / s, Q.upper / s, Q.offset / s, meta)


def penalty_qubo_exact(n: int, n0: int) -> QuboModel:
    """Exact expansion of ``(n_D - n0)**2`` where ``n_D`` counts zero bits."""
    if not 0 <= n0 <= n:
        raise ValueError(f"n0={n0} outside 0..{n}")
    m = n - n0
    upper = np.triu(np.full((n, n), 2.0), 1)
    return QuboModel(n, np.full(n, 1.0 - 2.0 * m), upper, float(m * m), {"n0": n0, "penalty": "exact"})


def penalty_targets(n: int, n0: int) -> np.ndarray:
    X = all_bit_matrix(n)
    nd = n - X.sum(axis=1)
    return ((nd - n0) ** 2).astype(float)


PENALTY_TRAIN = dict(learning_rate=0.01, epochs=4000)


def penalty_qubo_fm(n: int, n0: int, cfg=None) -> QuboModel:
    """Penalty learned by a factorization machine on all 2**n ``(x, (n_D - n0)**2)`` pairs."""
    from .dataset import Dataset, Record
    from .surrogate import TrainConfig, fm_to_qubo, fm_train

    if not 0 <= n0 <= n:
        raise ValueError(f"n0={n0} outside 0..{n}")
    y = penalty_targets(n, n0)
    ds = Dataset(tuple(Record(bits_of_index(b, n), float(y[b])) for b in range(2**n)), n)
    model, _ = fm_train(ds, cfg or TrainConfig(**PENALTY_TRAIN))
    Q = fm_to_qubo(model)
    return QuboModel(Q.n, Q.diag, Q.upper, Q.offset, {"n0": n0, "penalty": "fm"})


def combine(unconstrained: QuboModel, penalty: QuboModel, beta0: float = 10.0) -> QuboModel:
    """Constrained model: unconstrained + beta0 * penalty, coefficient-wise."""
    if unconstrained.n != penalty.n:
        raise ValueError(f"dimension mismatch: {unconstrained.n} vs {penalty.n}")
    meta = dict(unconstrained.meta)
    meta.update({"beta0": beta0, "n0": penalty.meta.get("n0")})
    return QuboModel(
        unconstrained.n,
        unconstrained.diag + beta0 * penalty.diag,
        unconstrained.upper + beta0 * penalty.upper,
        unconstrained.offset + beta0 * penalty.offset,
        meta,
    )


def qubo_to_ising(Q: QuboModel) -> IsingModel:
    """Substitute ``q_i = (s_i + 1) / 2``; the constant is kept so energies match exactly."""
    sym = Q.upper + Q.upper.T
    h = Q.diag / 2.0 + sym.sum(axis=1) / 4.0
    J = Q.upper / 4.0
    offset = Q.offset + Q.diag.sum() / 2.0 + Q.upper.sum() / 4.0
    return IsingModel(Q.n, h, J, offset, dict(Q.meta))


def ising_energy(H: IsingModel, x: Sequence[int]) -> float:
    s = 2.0 * _check_len(H.n, x) - 1.0
    return float(H.offset + H.h @ s + s @ H.J @ s)


def ising_energies(H: IsingModel) -> np.ndarray:
    if H.n == 0:
        return np.array([H.offset])
    S = 2.0 * all_bit_matrix(H.n).astype(float) - 1.0
    return H.offset + S @ H.h + np.einsum("bi,bi->b", S @ H.J, S)


def exact_solve(H: IsingModel, atol: float = 1e-9) -> tuple[float, list[tuple[int, ...]]]:
    """Enumerate all 2**n assignments; returns the minimum and every bitstring within ``atol`` of it."""
    if H.n > MAX_EXACT_N:
        raise ValueError(f"n={H.n} too large for enumeration (max {MAX_EXACT_N})")
    E = ising_energies(H)
    e0 = float(E.min())
    idx = np.flatnonzero(E <= e0 + atol)
    return e0, [bits_of_index(int(b), H.n) for b in idx]


@dataclass(frozen=True)
class Spectrum:
    levels: tuple[tuple[float, tuple[tuple[int, ...], ...]], ...]
    gap: float | None


def spectrum(H: IsingModel, window: float, atol: float = 1e-9) -> Spectrum:
    """Distinct levels with ``E - E0 <= window``; degenerate energies merged within ``atol``."""
    if window <= 0:
        raise ValueError("window must be positive")
    if H.n > MAX_EXACT_N:
        raise ValueError(f"n={H.n} too large for enumeration (max {MAX_EXACT_N})")
    E = ising_energies(H)
    order = np.argsort(E, kind="stable")
    e0 = float(E[order[0]])
    levels: list[tuple[float, list[tuple[int, ...]]]] = []
    for b in order:
        e = float(E[b])
        if e - e0 > window + atol:
            break
        if levels and e - levels[-1][0] <= atol:
            levels[-1][1].append(bits_of_index(int(b), H.n))
        else:
            levels.append((e, [bits_of_index(int(b), H.n)]))
    frozen = tuple((e, tuple(sorted(bs))) for e, bs in levels)
    # gap is defined by the full spectrum, not the window
    above = E[E > e0 + atol]
    gap = float(above.min() - e0) if above.size else None
    return Spectrum(frozen, gap)
