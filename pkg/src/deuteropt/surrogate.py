"""Second-order factorization machine trained by SGD, exported as a QUBO."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .dataset import Dataset, FeatureVector
from .hamiltonian import QuboModel


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    k: int = 8
    epochs: int = 2000
    learning_rate: float = 0.05
    l2: float = 1e-6
    init_scale: float = 0.01
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")


@dataclass(frozen=True, eq=False)
class FmModel:
    n: int
    k: int
    w: np.ndarray
    V: np.ndarray
    bias: float = 0.0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(self.n)
        V = np.array(self.V, dtype=float).reshape(self.n, self.k)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(V)) and math.isfinite(self.bias)):
            raise ValueError("FM parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "bias", float(self.bias))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "w": self.w.tolist(),
            "V": self.V.reshape(-1).tolist(),
            "bias": self.bias,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FmModel":
        return cls(int(d["n"]), int(d["k"]), d["w"], d["V"], d.get("bias", 0.0), dict(d.get("config", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FmModel":
        return cls.from_dict(json.loads(text))


def fm_predict(m: FmModel, x: FeatureVector) -> float:
    """``bias + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j``."""
    xv = np.asarray(x, dtype=float)
    if xv.shape != (m.n,):
        raise ValueError(f"length mismatch: expected {m.n}, got {xv.shape}")
    return float(fm_predict_many(m, xv[None, :])[0])


def fm_predict_many(m: FmModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    s = X @ m.V
    pair = 0.5 * ((s * s).sum(axis=1) - (X * X) @ (m.V * m.V).sum(axis=1))
    return m.bias + X @ m.w + pair


@njit(cache=True)
def _sgd_epoch(X, t, perm, w, V, b, lr, l2):
    """One pass of per-record SGD; updates ``w`` and ``V`` in place."""
    n, k = V.shape
    s = np.empty(k)
    sq = 0.0
    for r in perm:
        x = X[r]
        s[:] = 0.0
        vv = 0.0
        lin = 0.0
        for i in range(n):
            if x[i] != 0.0:
                lin += w[i] * x[i]
                for f in range(k):
                    s[f] += V[i, f] * x[i]
                    vv += V[i, f] * V[i, f] * x[i] * x[i]
        pair = 0.0
        for f in range(k):
            pair += s[f] * s[f]
        e = b + lin + 0.5 * (pair - vv) - t[r]
        sq += e * e
        b -= lr * e
        for i in range(n):
            if x[i] != 0.0:
                w[i] -= lr * (e * x[i] + l2 * w[i])
                for f in range(k):
                    g = e * x[i] * (s[f] - V[i, f] * x[i]) + l2 * V[i, f]
                    V[i, f] -= lr * g
    return b, sq


def fm_train(ds: Dataset, cfg: TrainConfig | None = None) -> tuple[FmModel, list[float]]:
    """Plain SGD over shuffled records minimizing squared error.

    Targets are standardized before training and the learned parameters mapped
    back afterwards, so the same learning rate works for FC factors (~1e-5) and
    integer penalties alike.
    """
    cfg = cfg or TrainConfig()
    if len(ds) == 0:
        raise ValueError("empty dataset")
    X = ds.X
    y = ds.y
    n, k = ds.n, cfg.k

    mu, sigma = 0.0, 1.0
    if cfg.standardize:
        mu = float(y.mean())
        sd = float(y.std())
        sigma = sd if sd > 0 else 1.0
    t = (y - mu) / sigma

    rng = np.random.default_rng(cfg.seed)
    V = rng.normal(0.0, cfg.init_scale, size=(n, k))
    w = np.zeros(n)
    b = 0.0
    lr, l2 = cfg.learning_rate, cfg.l2
    m = len(t)
    trace: list[float] = []
    Xb = np.ascontiguousarray(X, dtype=np.float64)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        b, sq = _sgd_epoch(Xb, t, perm, w, V, b, lr, l2)
        loss = sq / m * sigma * sigma
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, loss)
        trace.append(loss)

    model = FmModel(
        n, k, w * sigma, V * math.sqrt(sigma), mu + b * sigma,
        config=asdict(cfg),
    )
    return model, trace


def fm_to_qubo(m: FmModel) -> QuboModel:
    """``Q_ii = w_i``, ``Q_ij = <v_i, v_j>`` for i < j, offset = bias."""
    gram = m.V @ m.V.T
    return QuboModel(m.n, m.w.copy(), np.triu(gram, 1), m.bias, {"source": "fm", "k": m.k})
