"""Feature-vector datasets: parsing, CSV I/O, staged training selection and R²."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

DEFAULT_N = 6
MAX_SYNTH_N = 16

FeatureVector = tuple[int, ...]


class DatasetError(ValueError):
    pass


def parse_feature_vector(text: str) -> FeatureVector:
    """Parse ``"100110"`` or ``"[100110]"``; position 1 is the leftmost character."""
    s = text.strip()
    if s.startswith("[") and s.endswith("]"):
        s = s[1:-1]
    s = s.replace(" ", "")
    if not s:
        raise DatasetError("empty feature vector")
    bad = set(s) - {"0", "1"}
    if bad:
        raise DatasetError(f"non-binary character(s) {sorted(bad)!r} in {text!r}")
    return tuple(int(c) for c in s)


def render_feature_vector(x: Sequence[int], brackets: bool = False) -> str:
    s = "".join(str(int(b)) for b in x)
    return f"[{s}]" if brackets else s


def render_hd(x: Sequence[int]) -> str:
    """1 -> H (hydrogen), 0 -> D (deuterium)."""
    return "".join("H" if b else "D" for b in x)


def bits_of_index(index: int, n: int) -> FeatureVector:
    """Basis index -> bits, position 1 being the most significant bit."""
    return tuple((index >> (n - 1 - i)) & 1 for i in range(n))


def index_of_bits(x: Sequence[int]) -> int:
    out = 0
    for b in x:
        out = (out << 1) | int(b)
    return out


def all_bit_matrix(n: int) -> np.ndarray:
    """All 2**n assignments as a (2**n, n) int array, row b = bits_of_index(b)."""
    idx = np.arange(2**n)
    shifts = np.arange(n - 1, -1, -1)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


@dataclass(frozen=True)
class Record:
    x: FeatureVector
    y: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise DatasetError(f"non-finite target for {render_feature_vector(self.x)}")
        if any(b not in (0, 1) for b in self.x):
            raise DatasetError(f"non-binary feature vector {self.x!r}")


@dataclass(frozen=True)
class Dataset:
    records: tuple[Record, ...]
    n: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if len(r.x) != self.n:
                raise DatasetError(
                    f"length mismatch: {render_feature_vector(r.x)} has {len(r.x)} bits, expected {self.n}"
                )
            if r.x in seen:
                raise DatasetError(f"duplicate bitstring {render_feature_vector(r.x)}")
            seen.add(r.x)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, x) -> bool:
        return any(r.x == tuple(x) for r in self.records)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records], dtype=float).reshape(len(self.records), self.n)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=float)

    def lookup(self) -> dict[FeatureVector, float]:
        return {r.x: r.y for r in self.records}

    def subset(self, xs: Iterable[FeatureVector]) -> "Dataset":
        table = self.lookup()
        return Dataset(tuple(Record(x, table[x]) for x in xs), self.n)


def load_dataset(source: IO[bytes] | IO[str] | str | bytes, n: int | None = DEFAULT_N) -> Dataset:
    """Read a ``bitstring,value`` CSV. ``n=None`` infers the width from the first row."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise DatasetError("no records")
    header = [c.strip().lower() for c in rows[0]]
    if header != ["bitstring", "value"]:
        raise DatasetError(f"expected header 'bitstring,value', got {','.join(rows[0])!r}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DatasetError(f"line {lineno}: malformed row {row!r}")
        try:
            x = parse_feature_vector(row[0])
            y = float(row[1])
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        records.append(Record(x, y))
    if not records:
        raise DatasetError("no records")
    width = len(records[0].x) if n is None else n
    return Dataset(tuple(records), width)


def save_dataset(ds: Dataset, sink: IO[str] | None = None) -> str:
    """Write as CSV; reals use ``repr`` so a reload is bit-exact."""
    buf = io.StringIO()
    buf.write("bitstring,value\n")
    for r in ds.records:
        buf.write(f"{render_feature_vector(r.x)},{r.y!r}\n")
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


def one_hot(n: int, i: int) -> FeatureVector:
    return tuple(1 if j == i else 0 for j in range(n))


def one_cold(n: int, i: int) -> FeatureVector:
    return tuple(0 if j == i else 1 for j in range(n))


def complement(x: Sequence[int]) -> FeatureVector:
    return tuple(1 - b for b in x)


def max_stage(n: int) -> int:
    return n - 1


def staged_order(n: int, seed: int) -> list[int]:
    """Order in which the one-cold/one-hot pairs (indexed by the deuterated site) are added."""
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.permutation(n)]


def select_training_set(ds: Dataset, stage: int, seed: int) -> tuple[Dataset, Dataset]:
    """Incremental one-cold/one-hot selection.

    Stage 0 holds the all-ones vector plus one randomly chosen one-cold vector and
    its complement (a one-hot vector). Each further stage adds one more pair; stage
    ``n - 1`` holds all ``2n + 1`` structured vectors.
    """
    n = ds.n
    if stage < 0 or stage > max_stage(n):
        raise DatasetError(f"stage {stage} outside 0..{max_stage(n)}")
    present = set(ds.lookup())
    required = [tuple([1] * n)] + [one_cold(n, i) for i in range(n)] + [one_hot(n, i) for i in range(n)]
    missing = [render_feature_vector(x) for x in required if x not in present]
    if missing:
        raise DatasetError(f"dataset lacks required vectors: {', '.join(missing)}")

    order = staged_order(n, seed)
    chosen = [tuple([1] * n)]
    for site in order[: stage + 1]:
        chosen.append(one_cold(n, site))
        chosen.append(one_hot(n, site))
    chosen_set = set(chosen)
    train = ds.subset(chosen)
    test = Dataset(tuple(r for r in ds.records if r.x not in chosen_set), n)
    meta = {"stage": stage, "seed": seed, "order": order}
    object.__setattr__(train, "meta", dict(meta))
    object.__setattr__(test, "meta", dict(meta))
    return train, test


def r_squared(pred: Sequence[float], target: Sequence[float]) -> float:
    """Squared Pearson sample correlation."""
    a = np.asarray(pred, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    da = a - a.mean()
    db = b - b.mean()
    sa = float(np.dot(da, da))
    sb = float(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("zero variance in input")
    r = float(np.dot(da, db)) / math.sqrt(sa * sb)
    return min(1.0, r * r)


def synth_dataset(truth, noise_sigma: float = 0.0, seed: int = 0) -> Dataset:
    """All 2**n vectors labelled by a QUBO plus optional Gaussian noise."""
    from .hamiltonian import qubo_energies

    n = truth.n
    if n > MAX_SYNTH_N:
        raise DatasetError(f"n={n} too large to enumerate (max {MAX_SYNTH_N})")
    if noise_sigma < 0:
        raise DatasetError("noise_sigma must be >= 0")
    y = qubo_energies(truth)
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=y.shape)
    records = tuple(Record(bits_of_index(b, n), float(y[b])) for b in range(2**n))
    return Dataset(records, n, meta={"noise_sigma": noise_sigma, "seed": seed})


# Table 1 anchors: y([000000]) and the typical per-site increment of one-hot rows.
FC_BASELINE = 1.15e-5
FC_UNIT = 1e-6


def fc_like_truth(n: int = DEFAULT_N, seed: int = 0, linear: tuple[float, float] = (1.0, 4.0),
                  coupling: float = 0.15):
    """Synthetic FC-factor QUBO: positive per-site increments, weak pair terms.

    With ``coupling * (n - 1) < linear[0]`` every extra hydrogen strictly raises
    the value, so the all-deuterium vector is the unique minimum.
    """
    from .hamiltonian import QuboModel

    rng = np.random.default_rng(seed)
    diag = rng.uniform(*linear, size=n) * FC_UNIT
    upper = np.triu(rng.uniform(-coupling, coupling, size=(n, n)), 1) * FC_UNIT
    return QuboModel(n, diag, upper, FC_BASELINE, {"source": "fc_like", "seed": seed})
