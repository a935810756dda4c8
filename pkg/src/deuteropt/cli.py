"""Command-line pipeline: ``train`` -> ``build`` -> ``solve`` -> ``report``.

Each stage reads the previous stage's file and writes one artifact. Outputs are
written to a temporary file and renamed into place, and each embeds the full
run configuration.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .binsearch import Solver, binary_search_solve
from .dataset import (
    DatasetError,
    load_dataset,
    max_stage,
    parse_feature_vector,
    r_squared,
    render_feature_vector,
    render_hd,
    select_training_set,
)
from .hamiltonian import (
    IsingModel,
    combine,
    exact_solve,
    ising_energy,
    penalty_qubo_exact,
    penalty_qubo_fm,
    qubo_to_ising,
    scale_qubo,
)
from .optim import LOOSE, OptimizerConfig
from .qsim import NoiseModel
from .surrogate import FmModel, TrainConfig, fm_predict_many, fm_to_qubo, fm_train
from .vqa import ExactMode, ShotMode, _derive, qaoa_run, qaoa_sweep, top_k, vqe_run

BOOL_FLAGS = {"mitigate", "binary_search", "warm_start"}


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int
    paths: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace, path_keys: Sequence[str]) -> "RunConfig":
        values = {k: v for k, v in vars(args).items() if k not in ("func", "command", "config", "seed")}
        paths = {k: values.pop(k) for k in path_keys if k in values}
        return cls(args.command, args.seed, paths, values)


def atomic_write(path: str, text: str) -> None:
    """Write via a sibling temp file and ``os.replace`` so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="-" + os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _read_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed {what} file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(f"malformed {what} file {path}: expected an object")
    return doc


# ---------------------------------------------------------------- train

def cmd_train(args: argparse.Namespace) -> int:
    try:
        with open(args.data, "rb") as fh:
            ds = load_dataset(fh, n=args.n)
    except FileNotFoundError:
        raise CliError(f"dataset file not found: {args.data}") from None
    if not 0.0 <= args.threshold <= 1.0:
        raise CliError("threshold must lie in [0, 1]")
    cfg = TrainConfig(k=args.k, epochs=args.epochs, learning_rate=args.learning_rate, l2=args.l2,
                      seed=_derive(args.seed, "fm"))
    select_seed = _derive(args.seed, "select")

    stages = []
    model = None
    reached = False
    for stage in range(max_stage(ds.n) + 1):
        train, test = select_training_set(ds, stage, select_seed)
        model, _ = fm_train(train, cfg)
        if len(test) < 2:
            raise CliError(f"stage {stage}: held-out set too small to score ({len(test)} records)")
        r2 = r_squared(fm_predict_many(model, test.X), test.y)
        stages.append({"stage": stage, "train_size": len(train), "test_size": len(test), "r2": r2})
        if r2 >= args.threshold:
            reached = True
            break

    print("stage,train_size,test_size,r2")
    for s in stages:
        print(f"{s['stage']},{s['train_size']},{s['test_size']},{s['r2']:.6f}")
    if not reached:
        print(f"warning: R2 threshold {args.threshold} not reached by the final stage "
              f"(best {max(s['r2'] for s in stages):.4f}); model written anyway", file=sys.stderr)

    doc = {
        "kind": "fm_model",
        "model": model.to_dict(),
        "stages": stages,
        "threshold": args.threshold,
        "threshold_reached": reached,
        "order": train.meta["order"],
        "run_config": asdict(RunConfig.from_args(args, ("data", "out", "r2_csv"))),
    }
    if args.r2_csv:
        rows = "".join(f"{s['stage']},{s['train_size']},{s['test_size']},{s['r2']!r}\n" for s in stages)
        atomic_write(args.r2_csv, "stage,train_size,test_size,r2\n" + rows)
    atomic_write(args.out, _dump(doc))
    return 0


# ---------------------------------------------------------------- build

def _parse_penalty(text: str) -> int | None:
    if text == "none":
        return None
    key, _, value = text.partition("=")
    if key != "n0" or not value:
        raise CliError(f"--penalty expects 'none' or 'n0=K', got {text!r}")
    try:
        return int(value)
    except ValueError:
        raise CliError(f"--penalty: n0 must be an integer, got {value!r}") from None


def cmd_build(args: argparse.Namespace) -> int:
    doc = _read_json(args.model, "model")
    try:
        model = FmModel.from_dict(doc.get("model", doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed model file {args.model}: {exc}") from None
    n0 = _parse_penalty(args.penalty)
    if n0 is not None and not 0 <= n0 <= model.n:
        raise CliError(f"n0={n0} outside 0..{model.n}")
    if not args.beta0 >= 0:
        raise CliError("beta0 must be >= 0")

    Q = scale_qubo(fm_to_qubo(model), over=args.scale)
    if n0 is not None:
        P = penalty_qubo_exact(model.n, n0) if args.penalty_kind == "exact" else penalty_qubo_fm(model.n, n0)
        Q = combine(Q, P, args.beta0)
    H = qubo_to_ising(Q)
    e0, ground = exact_solve(H)
    print(f"n={H.n} scale={Q.meta.get('scale')!r} penalty={args.penalty} beta0={args.beta0}")
    for g in ground:
        print(f"exact ground {render_feature_vector(g)} ({render_hd(g)}) energy {e0:.10g}")

    out = H.to_dict()
    out["qubo"] = Q.to_dict()
    out["run_config"] = asdict(RunConfig.from_args(args, ("model", "out")))
    atomic_write(args.out, _dump(out))
    return 0


# ---------------------------------------------------------------- solve

def _mode(args: argparse.Namespace, n: int):
    if args.mode == "exact":
        if args.noise or args.mitigate:
            raise CliError("--noise and --mitigate require --mode shots")
        return ExactMode()
    noise = None
    if args.noise:
        try:
            with open(args.noise) as fh:
                noise = NoiseModel.from_json(fh.read())
        except FileNotFoundError:
            raise CliError(f"noise file not found: {args.noise}") from None
        noise.readout_for(n)
    if args.mitigate and noise is None:
        raise CliError("--mitigate needs a --noise model to calibrate against")
    return ShotMode(shots=args.shots, noise=noise, mitigate=args.mitigate,
                    trajectories=args.trajectories, calibration_shots=args.calibration_shots)


def _optimizer(args: argparse.Namespace, base: OptimizerConfig, seed: int) -> OptimizerConfig:
    overrides = {k: v for k, v in (("max_iter", args.max_iter), ("rho_begin", args.rho_begin),
                                   ("rho_end", args.rho_end), ("restarts", args.restarts)) if v is not None}
    return replace(base, seed=seed, **overrides)


def _distribution_doc(dist: dict, k: int) -> dict:
    return {"distribution": dist, "top_k": [[b, p] for b, p in top_k(dist, k)]}


def cmd_solve(args: argparse.Namespace) -> int:
    H = IsingModel.from_dict(_read_json(args.hamiltonian, "hamiltonian"))
    if args.method == "exact" and (args.binary_search or args.mode != "exact"):
        raise CliError("--method exact takes no --binary-search or --mode shots")
    if args.warm_start and (args.method != "qaoa" or args.binary_search):
        raise CliError("--warm-start applies to plain --method qaoa")
    if not 0.5 < args.delta <= 1.0:
        raise CliError("--delta must lie in (0.5, 1]")
    if args.p < 1 or args.depth < 1:
        raise CliError("--p and --depth must be >= 1")
    mode = _mode(args, H.n)
    seed = _derive(args.seed, "solve")
    doc: dict = {"kind": "result", "method": args.method, "binary_search": None, "details": None}

    if args.method == "exact":
        e0, ground = exact_solve(H)
        dist = {render_feature_vector(g): 1.0 / len(ground) for g in ground}
        doc.update(_distribution_doc(dist, args.top_k))
        doc.update(energy=e0, energy_trace=[])
    elif args.binary_search:
        reps = args.p if args.method == "qaoa" else args.depth
        bits, trace = binary_search_solve(H, Solver(args.method, reps), args.delta,
                                          _optimizer(args, LOOSE, 0), mode, seed)
        last = trace.rounds[-1]
        fixed = render_feature_vector(bits)
        dist = {}
        for key, p in last.top_k:
            full = list(fixed)
            for pos, site in enumerate(last.remaining):
                full[site] = key[pos]
            dist["".join(full)] = p
        doc.update(_distribution_doc(dist, args.top_k))
        doc["top_k"] = [[fixed, dist.get(fixed, 0.0)]] + [[b, p] for b, p in doc["top_k"] if b != fixed][: args.top_k - 1]
        flat = [e for r in trace.rounds for e in r.energy_trace]
        doc.update(energy=ising_energy(H, bits), energy_trace=list(enumerate(flat)),
                   binary_search=trace.to_dict())
    else:
        opt = _optimizer(args, OptimizerConfig(), seed)
        if args.method == "vqe":
            res = vqe_run(H, opt, mode, depth=args.depth)
            sweep = None
        elif args.warm_start:
            results = qaoa_sweep(H, args.p, opt, mode)
            res = results[-1]
            sweep = [{"p": r.ansatz["reps"], "energy": r.energy, "top_k": [list(t) for t in r.top_k]}
                     for r in results]
        else:
            res = qaoa_run(H, args.p, opt, mode)
            sweep = None
        doc.update(_distribution_doc(res.final_distribution, args.top_k))
        doc.update(energy=res.energy, energy_trace=[[i, e] for i, e in res.energy_trace],
                   details=res.to_dict(), sweep=sweep)

    doc["bitstring"] = doc["top_k"][0][0]
    doc["run_config"] = asdict(RunConfig.from_args(args, ("hamiltonian", "out", "noise")))
    doc["energy_trace"] = [[int(i), float(e)] for i, e in doc["energy_trace"]]
    b, p = doc["top_k"][0]
    print(f"{args.method}{' + binary search' if args.binary_search else ''}: "
          f"{b} ({render_hd(parse_feature_vector(b))}) probability {p:.4f} energy {doc['energy']:.10g}")
    atomic_write(args.out, _dump(doc))
    return 0


# ---------------------------------------------------------------- report

def _load_result(path: str) -> dict:
    doc = _read_json(path, "result")
    if doc.get("kind") != "result" or not isinstance(doc.get("top_k"), list):
        raise CliError(f"malformed result file {path}: not a solve result")
    if not doc["top_k"]:
        raise CliError(f"result file {path} has an empty top-k list")
    try:
        doc["top_k"] = [(str(b), float(p)) for b, p in doc["top_k"]]
        for b, _ in doc["top_k"]:
            parse_feature_vector(b)
    except (TypeError, ValueError) as exc:
        raise CliError(f"malformed result file {path}: {exc}") from None
    return doc


def _label(doc: dict, path: str) -> str:
    tag = doc.get("method", "?")
    if doc.get("binary_search"):
        tag += "+bs"
    return f"{os.path.basename(path)} [{tag}]"


def format_table(docs: Sequence[dict], labels: Sequence[str], k: int) -> str:
    cells = []
    for doc in docs:
        col = [f"{b} {render_hd(parse_feature_vector(b))} {p:.4f}" for b, p in doc["top_k"][:k]]
        cells.append(col)
    width = [max(len(lab), *(len(c) for c in col)) for lab, col in zip(labels, cells)]
    lines = ["rank  " + "  ".join(lab.ljust(w) for lab, w in zip(labels, width))]
    for r in range(max(len(c) for c in cells)):
        row = [(col[r] if r < len(col) else "").ljust(w) for col, w in zip(cells, width)]
        lines.append(f"{r + 1:<4}  " + "  ".join(row).rstrip())
    lines.append("energy" + "".join(f"  {doc.get('energy', float('nan')):<{w}.8g}" for doc, w in zip(docs, width)))
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    docs = [_load_result(p) for p in args.results]
    labels = [_label(d, p) for d, p in zip(docs, args.results)]
    sys.stdout.write(format_table(docs, labels, args.k))
    multi = len(docs) > 1
    if args.trace_csv:
        head = "result,iteration,energy\n" if multi else "iteration,energy\n"
        rows = "".join(
            (f"{j}," if multi else "") + f"{int(i)},{float(e)!r}\n"
            for j, d in enumerate(docs) for i, e in d.get("energy_trace", [])
        )
        atomic_write(args.trace_csv, head + rows)
    if args.dist_csv:
        head = "result,bitstring,probability\n" if multi else "bitstring,probability\n"
        rows = "".join(
            (f"{j}," if multi else "") + f"{b},{float(p)!r}\n"
            for j, d in enumerate(docs) for b, p in sorted(d.get("distribution", dict(d["top_k"])).items())
        )
        atomic_write(args.dist_csv, head + rows)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed; stage seeds derive from it")
    common.add_argument("--config", help="key=value file of defaults; command-line flags win")

    parser = argparse.ArgumentParser(prog="deuteropt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="fit the surrogate with staged training sets")
    t.add_argument("--data", required=True, help="CSV with header bitstring,value")
    t.add_argument("--out", required=True)
    t.add_argument("--n", type=int, default=None, help="bits per vector (default: from the data)")
    t.add_argument("--threshold", type=float, default=0.95)
    t.add_argument("--k", type=int, default=8)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--learning-rate", type=float, default=0.05)
    t.add_argument("--l2", type=float, default=1e-6)
    t.add_argument("--r2-csv", help="also write the per-stage R2 table here")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("build", parents=[common], help="compile a trained model into an Ising Hamiltonian")
    b.add_argument("--model", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--penalty", default="none", help="'none' or 'n0=K' (K deuterium sites)")
    b.add_argument("--beta0", type=float, default=10.0)
    b.add_argument("--scale", choices=("linear", "all"), default="linear")
    b.add_argument("--penalty-kind", choices=("exact", "fm"), default="exact")
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("solve", parents=[common], help="minimize a Hamiltonian")
    s.add_argument("--hamiltonian", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=("exact", "vqe", "qaoa"), default="exact")
    s.add_argument("--p", type=int, default=1, help="QAOA layers")
    s.add_argument("--depth", type=int, default=1, help="Ry entangling layers")
    s.add_argument("--mode", choices=("exact", "shots"), default="exact")
    s.add_argument("--shots", type=int, default=8192)
    s.add_argument("--noise", help="NoiseModel JSON")
    s.add_argument("--mitigate", action="store_true")
    s.add_argument("--trajectories", type=int, default=32)
    s.add_argument("--calibration-shots", type=int, default=10_000)
    s.add_argument("--binary-search", action="store_true")
    s.add_argument("--delta", type=float, default=0.7)
    s.add_argument("--warm-start", action="store_true", help="QAOA: sweep p = 1..P with interpolated starts")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--rho-begin", type=float)
    s.add_argument("--rho-end", type=float)
    s.add_argument("--restarts", type=int)
    s.add_argument("--top-k", type=int, default=5)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="tabulate results and export CSV plot data")
    r.add_argument("results", nargs="+")
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--trace-csv")
    r.add_argument("--dist-csv")
    r.set_defaults(func=cmd_report, seed=0, config=None)
    return parser


def _config_tokens(path: str) -> list[str]:
    """Turn a key=value file into flag tokens placed ahead of the real arguments."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_string("[config]\n" + fh.read())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise CliError(f"malformed config file {path}: {exc}") from None
    tokens = []
    for key, value in cp["config"].items():
        dest = key.replace("-", "_")
        flag = "--" + dest.replace("_", "-")
        if dest in BOOL_FLAGS:
            if cp["config"].getboolean(key):
                tokens.append(flag)
        else:
            tokens += [flag, value]
    return tokens


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config and argv:
            argv = argv[:1] + _config_tokens(known.config) + argv[1:]
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
