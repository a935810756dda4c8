"""Derivative-free minimization (COBYLA) with a full evaluation trace."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize


class NonFiniteObjective(ArithmeticError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 1000
    rho_begin: float = 0.5
    rho_end: float = 1e-4
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.rho_end < self.rho_begin:
            raise ValueError("rho_end must be smaller than rho_begin")
        if self.rho_end <= 0:
            raise ValueError("rho_end must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


LOOSE = OptimizerConfig(max_iter=50, rho_begin=0.5, rho_end=1e-2, restarts=1)


def cobyla_minimize(f: Callable[[np.ndarray], float], x0: Sequence[float],
                    cfg: OptimizerConfig | None = None) -> tuple[np.ndarray, float, list[float]]:
    """Minimize ``f`` from ``x0`` with COBYLA's linear-model trust region.

    The radius shrinks from ``cfg.rho_begin`` to ``cfg.rho_end``; at most
    ``cfg.max_iter`` evaluations are spent. Returns the best evaluated point,
    its value (ties keep the earliest), and the value of every evaluation.
    """
    cfg = cfg or OptimizerConfig()
    x0 = np.asarray(x0, dtype=float).copy()
    trace: list[float] = []
    best = [x0.copy(), math.inf]

    def wrapped(x):
        v = float(f(x))
        if not math.isfinite(v):
            raise NonFiniteObjective(f"objective returned {v} at evaluation {len(trace)}")
        trace.append(v)
        if v < best[1]:
            best[0], best[1] = np.array(x, dtype=float), v
        return v

    if x0.size == 0:
        v = wrapped(x0)
        return x0, v, trace

    minimize(
        wrapped,
        x0,
        method="COBYLA",
        options={"rhobeg": cfg.rho_begin, "tol": cfg.rho_end, "maxiter": cfg.max_iter},
    )
    return best[0], best[1], trace
