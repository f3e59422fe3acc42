"""Command-line entry point: propositions, audits, sketch statistics, training.

    python -m arctopk prop1
    python -m arctopk contract --m 8 --n 4 --K 2 --r 2 --trials 10000
    python -m arctopk comm-audit --method arc --m 4 --n 3 --N 2 --K 1 --r 1
    python -m arctopk sketch-stats --matrix "3,4;0,0;1,0" --r 1 --trials 10000
    python -m arctopk train --config run.cfg [--transport tcp --spawn]

Every command prints ``key=value`` lines and exits non-zero iff one of its
checks fails.
"""
from __future__ import annotations

import argparse
import math
import subprocess
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .collective import TcpCommunicator, audit_round, make_listener, run_spmd, selected_rows
from .collective.base import SoloCommunicator
from .compressor import (
    METHODS,
    RowCompressor,
    arc_topk_local,
    coord_topk,
    compression_error_sq,
    gaussian_matrix,
    row_importance,
    sketch_local,
)
from .core import NormalStream, derive_seed, frobenius_norm_sq, row_norms_sq
from .errors import AuditMismatch, ConfigError, NonFiniteIterate
from .optimizer import OPTIMIZERS, Ef21mConfig, TrainRecord, train_rank
from .workload import make_logistic, make_row_structured_quadratic

CSV_VERSION = "arctopk-train-csv v1"
CSV_COLUMNS = ("t", "loss", "grad_norm_sq", "cumulative_entries")

PROP1_LOCALS = ([-1.0, 0.1], [1.0, 0.1])

# derive_seed keys for bench-level streams
_KEY_CONTRACT_DATA, _KEY_CONTRACT_SEEDS = 201, 202
_KEY_SKETCH_DATA, _KEY_SKETCH_SEEDS = 203, 204
_KEY_AUDIT_DATA = 205


class CheckFailed(AssertionError):
    pass


def _emit(out, report: dict) -> None:
    for key, value in report.items():
        out.write(f"{key}={_fmt(value)}\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_fmt(v.item() if isinstance(v, np.generic) else v) for v in value)
    return str(value)


# --------------------------------------------------------------------- prop1

def prop1_report(compressor: str = "topk", K: int = 1, r: int = 8, seed: int = 0) -> dict:
    """Two-node counterexample: independent Top-K can lose the whole average."""
    locals_ = [np.array(g) for g in PROP1_LOCALS]
    g = (locals_[0] + locals_[1]) / 2
    d = g.size
    if not 1 <= K <= d:
        raise ValueError(f"K must lie in [1, {d}]")
    report = {"compressor": compressor, "K": K, "g": g, "g_norm_sq": float(g @ g)}
    if compressor == "topk":
        compressed_locals = [coord_topk(gi, K) for gi in locals_]
        compressed = (compressed_locals[0] + compressed_locals[1]) / 2
        aligned = all(np.array_equal(np.nonzero(c)[0], np.nonzero(compressed_locals[0])[0])
                      for c in compressed_locals)
    elif compressor == "arc":
        blocks = [gi.reshape(d, 1) for gi in locals_]

        def node(comm):
            return arc_topk_local(blocks[comm.rank], K, r, comm, seed if comm.rank == 0 else None)

        results = run_spmd(2, node)
        compressed = results[0].average.reshape(-1)
        aligned = all(np.array_equal(res.selection, results[0].selection) for res in results)
        report["selection"] = results[0].selection
    else:
        raise ValueError("compressor must be 'topk' or 'arc'")
    err = compression_error_sq(g.reshape(1, -1), compressed.reshape(1, -1))
    ratio = err / report["g_norm_sq"]
    report.update(compressed=compressed, error_sq=err, ratio=ratio, aligned=aligned)

    if compressor == "topk":
        expected = 0.0 if K == d else 1.0
        report["expected_ratio"] = expected
        report["pass"] = ratio == expected
    else:
        report["pass"] = bool(ratio <= 1.0 and aligned)
    return report


# ------------------------------------------------------------------ contract

def skewed_blocks(seed: int, m: int, n: int, nodes: int = 2, heavy_prob: float = 0.25,
                  heavy_scale: float = 10.0) -> list:
    """Node blocks whose average has a heavy-tailed mixture of row scales."""
    stream = NormalStream(seed)
    u = (stream.raw(m) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    scales = np.where(u < heavy_prob, heavy_scale, 1.0)
    common = stream.normal(m * n).reshape(m, n) * scales[:, None]
    return [common + 0.5 * stream.normal(m * n).reshape(m, n) for _ in range(nodes)]


def contraction_trials(blocks, K: int, r: int, trials: int, seed: int) -> np.ndarray:
    """Error ratio ||C(g) - g||^2 / ||g||^2 of ARC-Top-K over many sketch seeds."""
    seeds = NormalStream(seed)
    trial_seeds = [seeds.next_seed() for _ in range(trials)]

    def node(comm):
        G = blocks[comm.rank]
        return [arc_topk_local(G, K, r, comm, s if comm.rank == 0 else None).average
                for s in trial_seeds]

    averages = run_spmd(len(blocks), node)[0]
    g = sum(blocks[1:], blocks[0].copy()) / len(blocks)
    norm = frobenius_norm_sq(g)
    return np.array([compression_error_sq(g, c) / norm for c in averages])


def contract_report(m: int, n: int, K: int, r: int, trials: int = 10_000,
                    seed: int = 0, nodes: int = 2) -> dict:
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    if not 1 <= K <= m:
        raise ValueError(f"K must lie in [1, {m}]")
    blocks = skewed_blocks(derive_seed(seed, _KEY_CONTRACT_DATA), m, n, nodes)
    ratios = contraction_trials(blocks, K, r, trials, derive_seed(seed, _KEY_CONTRACT_SEEDS))
    mean = float(ratios.mean())
    stderr = float(ratios.std(ddof=1) / math.sqrt(trials))
    bound = 1.0 - K / m
    return {"m": m, "n": n, "K": K, "r": r, "nodes": nodes, "trials": trials,
            "mean_ratio": mean, "stderr": stderr, "bound": bound,
            "pass": mean <= bound + 3 * stderr}


# ---------------------------------------------------------------- comm-audit

def audit_blocks(seed: int, m: int, n: int, N: int) -> list:
    stream = NormalStream(derive_seed(seed, _KEY_AUDIT_DATA))
    return [stream.normal(m * n).reshape(m, n) for _ in range(N)]


def audit_rank(comm, method: str, m: int, n: int, K: int, r: int, seed: int = 0) -> int:
    """Run one compression round on this rank; return entries it was charged."""
    blocks = audit_blocks(seed, m, n, comm.world_size)
    before = comm.ledger.snapshot()
    RowCompressor(method, K, r)(blocks[comm.rank], comm, seed if comm.rank == 0 else None)
    return comm.ledger.since(before)


def comm_audit_report(method: str, m: int, n: int, N: int, K: int, r: int,
                      seed: int = 0, per_node=None) -> dict:
    if per_node is None:
        per_node = run_spmd(N, audit_rank, method, m, n, K, r, seed)
    report = {"method": method, "m": m, "n": n, "N": N, "K": K, "r": r,
              "observed_per_node": list(per_node)}
    try:
        expected = [audit_round(method, m, n, N, K, r, obs) for obs in per_node]
        report.update(expected=expected[0], **{"pass": True})
    except AuditMismatch as exc:
        report.update(expected=exc.expected, **{"pass": False})
    return report


# -------------------------------------------------------------- sketch-stats

def sketch_samples(G, r: int, trials: int, seed: int) -> np.ndarray:
    """Row-importance samples ``trials x m`` for independent sketch seeds."""
    G = np.asarray(G, dtype=np.float64)
    seeds = NormalStream(seed)
    out = np.empty((trials, G.shape[0]))
    for t in range(trials):
        V = gaussian_matrix(seeds.next_seed(), G.shape[1], r)
        out[t] = row_importance(sketch_local(G, V), 1)[0]
    return out


def sketch_stats_report(G, r: int = 1, trials: int = 10_000, seed: int = 0,
                        r_high: int | None = None, tolerance: float = 0.05) -> dict:
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    G = np.asarray(G, dtype=np.float64)
    r_high = 4 * r if r_high is None else r_high
    true = row_norms_sq(G)
    low = sketch_samples(G, r, trials, derive_seed(seed, _KEY_SKETCH_SEEDS, r))
    high = sketch_samples(G, r_high, trials, derive_seed(seed, _KEY_SKETCH_SEEDS, r_high))
    mean = low.mean(axis=0)
    nonzero = true > 0
    bias = np.zeros_like(true)
    bias[nonzero] = np.abs(mean[nonzero] - true[nonzero]) / true[nonzero]
    var_low, var_high = low.var(axis=0, ddof=1), high.var(axis=0, ddof=1)
    bias_ok = bool(np.all(bias <= tolerance))
    var_ok = bool(np.all(var_high[nonzero] < var_low[nonzero]))
    zero_ok = bool(np.all(low[:, ~nonzero] == 0) and np.all(high[:, ~nonzero] == 0))
    return {"m": G.shape[0], "n": G.shape[1], "r": r, "r_high": r_high, "trials": trials,
            "true_row_norm_sq": true, "mean_sigma": mean, "relative_bias": bias,
            "var_r": var_low, "var_r_high": var_high,
            "bias_ok": bias_ok, "variance_ok": var_ok, "zero_rows_ok": zero_ok,
            "pass": bias_ok and var_ok and zero_ok}


def parse_matrix(text: str) -> np.ndarray:
    """``"3,4;0,0;1,0"`` -> 3 x 2 matrix."""
    rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"malformed matrix {text!r}")
    return np.array(rows)


# --------------------------------------------------------------------- train

@dataclass
class RunConfig:
    method: str = "arc"
    optimizer: str = "ef21m"
    problem: str = "quadratic"
    d: int = 256
    m: int = 16
    mu: float = 0.25
    r: int = 4
    gamma: float | str = "auto"
    eta: float = 0.9
    beta: float = 0.9
    B_init: int = 1
    T: int = 100
    N: int = 4
    sigma: float = 0.0
    seed: int = 0
    condition: float = 10.0
    heterogeneity: float = 0.0
    row_decay: float = 1.5
    samples: int = 64
    lam: float = 0.01
    transport: str = "inproc"
    output: str = "train.csv"
    summary: str = ""

    def validate(self) -> "RunConfig":
        _choice("method", self.method, METHODS)
        _choice("optimizer", self.optimizer, OPTIMIZERS)
        _choice("problem", self.problem, ("quadratic", "logistic"))
        _choice("transport", self.transport, ("inproc", "tcp"))
        for key in ("d", "m", "r", "B_init", "N", "samples"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("T", "seed"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        if self.m > self.d:
            raise ConfigError("m must not exceed d")
        if self.problem == "quadratic" and self.d % self.m:
            raise ConfigError("quadratic problems need m to divide d")
        if not 0 < self.mu <= 1:
            raise ConfigError("mu must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if not 0 <= self.beta < 1:
            raise ConfigError("beta must lie in [0, 1)")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise ConfigError("gamma must be positive or 'auto'")
        if self.sigma < 0 or self.heterogeneity < 0 or self.lam < 0:
            raise ConfigError("sigma, heterogeneity and lam must be non-negative")
        if self.condition < 1:
            raise ConfigError("condition must be >= 1")
        return self

    @property
    def K(self) -> int:
        return selected_rows(self.mu, self.m)

    @property
    def summary_path(self) -> str:
        return self.summary or self.output + ".summary"


def _choice(key, value, options):
    if value not in options:
        raise ConfigError(f"{key} must be one of {options}, got {value!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if key == "gamma":
        return raw if raw == "auto" else float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (part.strip() for part in line.partition("="))
        where = f"{source}:{lineno}"
        if not sep or not key:
            raise ConfigError(f"{where}: expected key=value, got {line!r}")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError:
            raise ConfigError(f"{where}: bad value {raw!r} for {key}") from None
    try:
        return RunConfig(**values).validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=path)


def build_problem(cfg: RunConfig):
    pseed = derive_seed(cfg.seed, 1)
    if cfg.problem == "quadratic":
        return make_row_structured_quadratic(pseed, cfg.d, cfg.m, cfg.N, cfg.condition,
                                             cfg.heterogeneity, cfg.sigma, cfg.row_decay)
    return make_logistic(pseed, cfg.d, cfg.N, cfg.samples, cfg.lam, cfg.sigma, cfg.heterogeneity)


def optimizer_config(cfg: RunConfig, problem) -> Ef21mConfig:
    gamma = 1.0 / (4.0 * problem.L) if cfg.gamma == "auto" else float(cfg.gamma)
    return Ef21mConfig(gamma=gamma, eta=cfg.eta, B_init=cfg.B_init, T=cfg.T, beta=cfg.beta)


def train_config_rank(comm, cfg: RunConfig):
    """This rank's share of a training run; rank 0 returns (records, ledger)."""
    problem = build_problem(cfg)
    opt = optimizer_config(cfg, problem)
    records = train_rank(comm, problem, cfg.method, cfg.optimizer, opt,
                         cfg.m, cfg.K, cfg.r, cfg.seed)
    return records, comm.ledger.snapshot()


def write_csv(path: str, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {CSV_VERSION}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(f"{rec.t},{rec.loss!r},{rec.grad_norm_sq!r},{rec.cumulative_entries}\n")


def read_csv(path: str) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    if tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {lines[0]!r}")
    for ln in lines[1:]:
        t, loss, gn, entries = ln.split(",")
        records.append(TrainRecord(int(t), float(loss), float(gn), int(entries)))
    return records


def summarize(records, ledger_counts: dict, seconds: float) -> dict:
    """Summary report; the mean gradient norm runs over t = 0..T-1."""
    head = records[:-1] if len(records) > 1 else records
    total = records[-1].cumulative_entries
    if total != sum(ledger_counts.values()):
        raise CheckFailed("ledger and record stream disagree on total entries")
    report = {
        "iterations": records[-1].t,
        "final_loss": records[-1].loss,
        "mean_grad_norm_sq": float(np.mean([r.grad_norm_sq for r in head])),
        "total_entries": total,
    }
    report.update({f"entries_{k}": v for k, v in ledger_counts.items()})
    report["wall_clock_seconds"] = round(seconds, 3)
    return report


def write_summary(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _emit(fh, report)


def entries_to_reach(records, level: float):
    """Cumulative entries at the first record with ``loss <= level`` (or None)."""
    for rec in records:
        if rec.loss <= level:
            return rec.cumulative_entries
    return None


# ----------------------------------------------------------------- tcp glue

def _spawn_peers(argv_tail, world: int, address: str) -> list:
    procs = []
    for rank in range(1, world):
        cmd = [sys.executable, "-m", "arctopk", *argv_tail,
               "--transport", "tcp", "--rank", str(rank), "--world", str(world),
               "--addr", address]
        procs.append(subprocess.Popen(cmd))
    return procs


def _wait_peers(procs) -> int:
    worst = 0
    for p in procs:
        worst = max(worst, p.wait())
    return worst


def _tcp_run(args, argv_tail, world: int, fn):
    """Run ``fn(comm)`` as one TCP rank, spawning the peers if asked."""
    if world == 1:
        return fn(SoloCommunicator()), 0
    if args.rank == 0 and args.spawn:
        listener = make_listener("127.0.0.1", 0)
        address = f"127.0.0.1:{listener.getsockname()[1]}"
        procs = _spawn_peers(argv_tail, world, address)
        try:
            with TcpCommunicator.connect(0, world, address, listener=listener) as comm:
                result = fn(comm)
        finally:
            status = _wait_peers(procs)
        return result, status
    if args.addr is None:
        raise SystemExit("tcp transport needs --addr (or --spawn on rank 0)")
    with TcpCommunicator.connect(args.rank, world, args.addr) as comm:
        return fn(comm), 0


# ---------------------------------------------------------------------- CLI

def _add_tcp_flags(p):
    p.add_argument("--transport", choices=("inproc", "tcp"), default=None)
    p.add_argument("--spawn", action="store_true",
                   help="rank 0 launches ranks 1..N-1 as child processes")
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--world", type=int, default=None)
    p.add_argument("--addr", default=None, help="rendezvous host:port of rank 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arctopk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prop1", help="two-node Top-K counterexample")
    p.add_argument("--compressor", choices=("topk", "arc"), default="topk")
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("contract", help="Monte Carlo contraction check")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--nodes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("comm-audit", help="one round against the closed-form cost")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_tcp_flags(p)

    p = sub.add_parser("train", help="train from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--summary", default=None)
    _add_tcp_flags(p)

    p = sub.add_parser("sketch-stats", help="bias and variance of sketched row norms")
    p.add_argument("--matrix", default=None, help='rows separated by ";", e.g. "3,4;0,0;1,0"')
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--r-high", type=int, default=None)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_comm_audit(args, argv_tail, out):
    world = args.N
    fn = lambda comm: audit_rank(comm, args.method, args.m, args.n, args.K, args.r, args.seed)  # noqa: E731
    if (args.transport or "inproc") == "inproc":
        per_node = run_spmd(world, fn)
        status = 0
    else:
        observed, status = _tcp_run(args, argv_tail, world, fn)
        if args.rank != 0:
            return 0 if audit_round(args.method, args.m, args.n, world, args.K, args.r, observed) else 1
        per_node = [observed]
    report = comm_audit_report(args.method, args.m, args.n, world, args.K, args.r, args.seed, per_node)
    report["transport"] = args.transport or "inproc"
    _emit(out, report)
    return 0 if report["pass"] and status == 0 else 1


def _cmd_train(args, argv_tail, out):
    cfg = load_config(args.config)
    if args.transport:
        cfg.transport = args.transport
    if args.output:
        cfg.output = args.output
    if args.summary:
        cfg.summary = args.summary
    if args.world is not None and args.world != cfg.N:
        raise ConfigError(f"--world {args.world} disagrees with N={cfg.N} in {args.config}")

    start = time.perf_counter()
    status = 0
    try:
        if cfg.transport == "inproc":
            records, counts = run_spmd(cfg.N, train_config_rank, cfg)[0]
        else:
            (records, counts), status = _tcp_run(args, argv_tail, cfg.N,
                                                 lambda comm: train_config_rank(comm, cfg))
            if args.rank != 0:
                return 0
    except NonFiniteIterate as exc:
        if exc.records:
            write_csv(cfg.output, exc.records)
        out.write(f"error=non-finite iterate at t={exc.t}\n")
        return 1
    seconds = time.perf_counter() - start
    write_csv(cfg.output, records)
    report = summarize(records, counts, seconds)
    write_summary(cfg.summary_path, report)
    _emit(out, {"csv": cfg.output, "summary": cfg.summary_path, **report})
    return status


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    # peers re-run the same command without rank-0-only flags
    tail = [a for a in argv if a != "--spawn"]
    for flag in ("--transport", "--rank", "--world", "--addr"):
        while flag in tail:
            i = tail.index(flag)
            del tail[i:i + 2]

    try:
        if args.command == "prop1":
            report = prop1_report(args.compressor, args.K, args.r, args.seed)
        elif args.command == "contract":
            report = contract_report(args.m, args.n, args.K, args.r, args.trials, args.seed, args.nodes)
        elif args.command == "sketch-stats":
            if args.matrix:
                G = parse_matrix(args.matrix)
            else:
                G = NormalStream(derive_seed(args.seed, _KEY_SKETCH_DATA)).normal(args.m * args.n)
                G = G.reshape(args.m, args.n)
            report = sketch_stats_report(G, args.r, args.trials, args.seed, args.r_high)
        elif args.command == "comm-audit":
            return _cmd_comm_audit(args, tail, out)
        else:
            return _cmd_train(args, tail, out)
    except (ConfigError, ValueError) as exc:
        out.write(f"error={exc}\n")
        return 2
    except (AuditMismatch, CheckFailed) as exc:
        out.write(f"error={exc}\n")
        return 1
    _emit(out, report)
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
