"""Qubit fixing by marginal probabilities: solve loosely, freeze confident sites, shrink, repeat."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import parse_feature_vector, render_feature_vector
from .hamiltonian import IsingModel
from .optim import LOOSE, OptimizerConfig
from .qsim import NoiseModel
from .vqa import ExactMode, Mode, ShotMode, VqaResult, _derive, qaoa_run, vqe_run

DEFAULT_DELTA = 0.7


@dataclass(frozen=True)
class Solver:
    kind: str = "vqe"  # "vqe" or "qaoa"
    reps: int = 1  # Ry depth or QAOA p

    def __post_init__(self):
        if self.kind not in ("vqe", "qaoa"):
            raise ValueError(f"unknown solver {self.kind!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    def run(self, H: IsingModel, opt: OptimizerConfig, mode: Mode) -> VqaResult:
        if self.kind == "vqe":
            return vqe_run(H, opt, mode, depth=self.reps)
        return qaoa_run(H, self.reps, opt, mode)


def marginals(dist: Mapping[str, float], remaining: Sequence[int], atol: float = 1e-6) -> dict[int, tuple[float, float]]:
    """Per-site ``(p0, p1)``; bitstring position k refers to site ``remaining[k]``."""
    total = float(sum(dist.values()))
    if abs(total - 1.0) > atol:
        raise ValueError(f"distribution sums to {total}, not 1")
    m = len(remaining)
    p1 = np.zeros(m)
    for key, prob in dist.items():
        bits = parse_feature_vector(key)
        if len(bits) != m:
            raise ValueError(f"bitstring {key!r} does not cover {m} sites")
        p1 += prob * np.asarray(bits, dtype=float)
    p1 = np.clip(p1 / total, 0.0, 1.0)
    return {int(site): (float(1.0 - p1[k]), float(p1[k])) for k, site in enumerate(remaining)}


def fix_qubits(H: IsingModel, fixes: Mapping[int, int] | Sequence[tuple[int, int]]) -> tuple[IsingModel, list[int]]:
    """Substitute ``s_i = 2 b_i - 1`` for each fixed site.

    Returns the Hamiltonian over the remaining sites (densely reindexed) and the
    list mapping new index -> original site.
    """
    pairs = list(fixes.items()) if isinstance(fixes, Mapping) else [tuple(p) for p in fixes]
    fixes = {}
    for site, bit in pairs:
        if site in fixes:
            raise ValueError(f"site {site} fixed twice")
        fixes[site] = bit
    for site, bit in fixes.items():
        if not 0 <= site < H.n:
            raise ValueError(f"site {site} out of range for n={H.n}")
        if bit not in (0, 1):
            raise ValueError(f"site {site}: bit must be 0 or 1, got {bit!r}")
    fixed = sorted(fixes)
    keep = [i for i in range(H.n) if i not in fixes]
    s = np.zeros(H.n)
    for i in fixed:
        s[i] = 2.0 * fixes[i] - 1.0
    Jsym = H.J + H.J.T
    offset = H.offset
    for a, i in enumerate(fixed):
        offset += H.h[i] * s[i]
        for j in fixed[a + 1:]:
            offset += H.J[i, j] * s[i] * s[j]
    h_new = np.array([H.h[k] + sum(Jsym[k, f] * s[f] for f in fixed) for k in keep])
    J_new = H.J[np.ix_(keep, keep)]
    meta = dict(H.meta)
    merged = {int(k): int(v) for k, v in meta.get("fixed", {}).items()}
    merged.update(fixes)
    meta["fixed"] = {str(k): v for k, v in sorted(merged.items())}
    return IsingModel(len(keep), h_new, J_new, offset, meta), keep


@dataclass
class Round:
    remaining: list[int]
    marginals: dict[int, tuple[float, float]]
    fixed: dict[int, int]
    forced: bool
    energy: float
    top_k: list[tuple[str, float]]
    evaluations: int
    energy_trace: list[float] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.remaining)


@dataclass
class BinSearchTrace:
    rounds: list[Round] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = []
        for r in self.rounds:
            d = asdict(r)
            d["marginals"] = {str(k): list(v) for k, v in r.marginals.items()}
            d["fixed"] = {str(k): v for k, v in r.fixed.items()}
            d["top_k"] = [[b, p] for b, p in r.top_k]
            out.append(d)
        return {"rounds": out, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def marginals_csv(self) -> str:
        lines = ["round,site,p0,p1,fixed_bit"]
        for k, r in enumerate(self.rounds):
            for site, (p0, p1) in sorted(r.marginals.items()):
                fixed = r.fixed.get(site, "")
                lines.append(f"{k},{site},{p0!r},{p1!r},{fixed}")
        return "\n".join(lines) + "\n"

    @property
    def evaluations(self) -> int:
        return sum(r.evaluations for r in self.rounds)


def _mode_for(mode: Mode, remaining: Sequence[int]) -> Mode:
    if isinstance(mode, ShotMode) and mode.noise is not None:
        return replace(mode, noise=mode.noise.subset(remaining))
    return mode


def binary_search_solve(H: IsingModel, solver: Solver | None = None, delta: float = DEFAULT_DELTA,
                        loose_opt: OptimizerConfig | None = None, mode: Mode | None = None,
                        seed: int = 0) -> tuple[tuple[int, ...], BinSearchTrace]:
    """Iteratively fix every site whose marginal exceeds ``delta``.

    When no site clears ``delta`` the single most confident site is fixed, so
    each round fixes at least one site and the loop ends after at most n rounds.
    """
    if not 0.5 < delta <= 1.0:
        raise ValueError("delta must lie in (0.5, 1]")
    solver = solver or Solver()
    loose_opt = loose_opt or LOOSE
    mode = mode or ExactMode()
    trace = BinSearchTrace(config={
        "solver": asdict(solver), "delta": delta, "loose_opt": asdict(loose_opt), "seed": seed,
    })
    assignment: dict[int, int] = {}
    remaining = list(range(H.n))
    current = H
    k = 0
    while remaining:
        opt = replace(loose_opt, seed=_derive(seed, "round", k))
        result = solver.run(current, opt, _mode_for(mode, remaining))
        marg = marginals(result.final_distribution, remaining)
        confident = {site: int(p1 > p0) for site, (p0, p1) in marg.items() if max(p0, p1) > delta}
        forced = not confident
        if forced:
            # ties resolved toward the lowest site index
            site = max(marg, key=lambda s: (max(marg[s]), -s))
            p0, p1 = marg[site]
            confident = {site: int(p1 > p0)}
        assignment.update(confident)
        trace.rounds.append(Round(
            remaining=list(remaining), marginals=marg, fixed=dict(confident), forced=forced,
            energy=result.energy, top_k=result.top_k, evaluations=len(result.energy_trace),
            energy_trace=[e for _, e in result.energy_trace],
        ))
        current, remaining = fix_qubits(H, assignment)
        k += 1
    bits = tuple(assignment[i] for i in range(H.n))
    return bits, trace


def render_assignment(bits: Sequence[int]) -> str:
    return render_feature_vector(bits)
