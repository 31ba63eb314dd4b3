"""Command-line front end: ``plan``, ``spfd``, ``gradient-flow`` and ``duality-gap``.

Settings are merged as defaults < ``--config`` file < command-line flags.
Exit status: 0 on success, 1 for input errors, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _stdio
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .duality import duality_gap
from .errors import CertificateUnavailable, InputError, NumericalError
from .flow import FlowConfig, gradient_flow, two_cluster_toy
from .geometry import COST_KINDS, KERNEL_FAMILIES, KernelSpec, PointCloud, cost_matrix, gram_matrix, median_heuristic
from .greedy import ALGORITHMS, matroid_omp, run_algorithm
from .matroid import MatroidConstraint
from .problem import ProblemInstance, SolverConfig, objective, set_function_F
from .spfd import SpfdInstance, generate_spfd, solve_spfd

log = logging.getLogger("sparse_uot")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _opt_int(v):
    return None if v in (None, "", "none", "None") else int(v)


def _opt_str(v):
    return None if v in (None, "", "none", "None") else str(v)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _sigma2(v):
    if str(v).strip().lower() == "median":
        return "median"
    x = float(v)
    if not x > 0:
        raise ValueError("sigma2 must be positive or 'median'")
    return x


def _float_list(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


@dataclass
class RunConfig:
    """Every setting a subcommand may read. ``None`` means "not applicable / derive"."""

    source: str | None = None
    target: str | None = None
    cost: str = "sqeuclidean"        # a cost kind, or a path to a cost-matrix CSV
    normalize_cost: bool = True
    gram_source: str | None = None
    gram_target: str | None = None
    weights_source: str | None = None
    weights_target: str | None = None
    kernel: str = "rbf"
    sigma2: object = "median"
    lambda1: float = 1.0
    lambda2: float = 0.0
    algorithm: str = "omp"
    k: int | None = None
    k_per_column: int | None = None
    pick: str = "random"
    epsilon: float = 0.01
    seed: int = 0
    max_iter: int = 1000
    out: str | None = None
    report: str | None = None
    # spfd
    profit: str | None = None
    supplies: str | None = None
    demands: str | None = None
    m: int = 10
    n: int = 10
    z: int = 5
    l: int = 10
    # gradient-flow
    learning_rate: float = 0.01
    iterations: int = 200
    # duality-gap
    lambda1_grid: list = dataclasses.field(default_factory=lambda: [0.1, 1.0, 10.0])
    lambda2_grid: list = dataclasses.field(default_factory=lambda: [0.1, 1.0])

    def to_dict(self):
        return dataclasses.asdict(self)


CONVERTERS = {
    "source": _opt_str, "target": _opt_str, "cost": str, "normalize_cost": _bool,
    "gram_source": _opt_str, "gram_target": _opt_str,
    "weights_source": _opt_str, "weights_target": _opt_str,
    "kernel": str, "sigma2": _sigma2, "lambda1": float, "lambda2": float,
    "algorithm": str, "k": _opt_int, "k_per_column": _opt_int, "pick": str,
    "epsilon": float, "seed": int, "max_iter": int, "out": _opt_str, "report": _opt_str,
    "profit": _opt_str, "supplies": _opt_str, "demands": _opt_str,
    "m": int, "n": int, "z": int, "l": int,
    "learning_rate": float, "iterations": int,
    "lambda1_grid": _float_list, "lambda2_grid": _float_list,
}
assert set(CONVERTERS) == {f.name for f in fields(RunConfig)}


def resolve_config(flags: dict, config_file=None):
    """Merge defaults < file < flags. Returns the config and the set of keys set explicitly."""
    merged = RunConfig().to_dict()
    explicit = set()
    layers = []
    if config_file is not None:
        layers.append(("config file", io.read_config(config_file)))
    layers.append(("flag", {k: v for k, v in flags.items() if v is not None}))
    for origin, layer in layers:
        for key, raw in layer.items():
            if key not in CONVERTERS:
                raise InputError(f"unknown {origin} key {key!r}")
            try:
                merged[key] = CONVERTERS[key](raw)
            except (TypeError, ValueError) as exc:
                raise InputError(f"bad {origin} value for {key}: {exc}") from None
            explicit.add(key)
    cfg = RunConfig(**merged)
    _validate(cfg)
    return cfg, explicit


def _validate(cfg: RunConfig):
    if cfg.kernel not in KERNEL_FAMILIES:
        raise InputError(f"kernel must be one of {KERNEL_FAMILIES}")
    if cfg.algorithm not in ALGORITHMS:
        raise InputError(f"algorithm must be one of {ALGORITHMS}")
    if cfg.pick not in ("random", "max"):
        raise InputError("pick must be 'random' or 'max'")
    if cfg.k_per_column is not None and cfg.algorithm != "matroid-omp":
        raise InputError("--k-per-column requires --algorithm matroid-omp")


def solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(max_iter=cfg.max_iter, seed=cfg.seed, epsilon=cfg.epsilon)


# ---------------------------------------------------------------- inputs

def _read_cloud(path):
    return PointCloud(io.read_points(path))


def _weights(path, size, label):
    if path is None:
        return np.full(size, 1.0 / size)
    w = io.read_weights(path)
    if w.size != size:
        raise InputError(f"{label} weights have {w.size} entries, expected {size}")
    return w


def _resolve_kernel(cfg: RunConfig, src, tgt, resolved: dict):
    if cfg.sigma2 == "median":
        if src is None or tgt is None:
            raise InputError("--sigma2 median needs both point clouds")
        s2 = median_heuristic(src, tgt)
        resolved["sigma2_from"] = "median"
    else:
        s2 = float(cfg.sigma2)
        resolved["sigma2_from"] = "given"
    resolved["sigma2"] = s2
    return KernelSpec(cfg.kernel, s2)


def build_instance(cfg: RunConfig, lambda1=None, lambda2=None):
    """Instance from files plus the concrete settings actually used."""
    resolved = {}
    src = _read_cloud(cfg.source) if cfg.source else None
    tgt = _read_cloud(cfg.target) if cfg.target else None
    if cfg.cost in COST_KINDS:
        if src is None or tgt is None:
            raise InputError(f"cost kind {cfg.cost!r} needs --source and --target point clouds")
        C = cost_matrix(cfg.cost, src, tgt, normalize=cfg.normalize_cost)
    else:
        C = io.read_matrix(cfg.cost)
    m, n = C.shape
    kernel = None
    grams = []
    for path, cloud, size, label in ((cfg.gram_source, src, m, "source"), (cfg.gram_target, tgt, n, "target")):
        if path is not None:
            G = io.read_matrix(path)
        elif cloud is not None:
            kernel = kernel or _resolve_kernel(cfg, src, tgt, resolved)
            G = gram_matrix(kernel, cloud).entries
        else:
            raise InputError(f"need --gram-{label} or --{label} to build the {label} kernel")
        if G.shape != (size, size):
            raise InputError(f"{label} Gram matrix has shape {G.shape}, expected {(size, size)}")
        grams.append(G)
    mu = _weights(cfg.weights_source, m, "source")
    nu = _weights(cfg.weights_target, n, "target")
    inst = ProblemInstance(C, grams[0], grams[1], mu, nu,
                           cfg.lambda1 if lambda1 is None else lambda1,
                           cfg.lambda2 if lambda2 is None else lambda2)
    resolved["shape"] = [m, n]
    return inst, resolved


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _report_path(cfg: RunConfig, default_suffix):
    if cfg.report is not None:
        return cfg.report
    if cfg.out is not None:
        return str(cfg.out) + default_suffix
    return None


# ---------------------------------------------------------------- commands

def cmd_plan(cfg: RunConfig, explicit=frozenset()):
    inst, resolved = build_instance(cfg)
    scfg = solver_config(cfg)
    result = run_algorithm(cfg.algorithm, inst, scfg, K=cfg.k, K2=cfg.k_per_column, pick=cfg.pick)
    _emit(io.format_coo(result.plan, scfg.support_tol), cfg.out)
    report = {
        "F": set_function_F(inst, result.support, scfg),
        "objective": objective(inst, result.plan),
        "nnz": result.plan.nnz(scfg.support_tol),
        "seed": cfg.seed,
        "trace": result.trace.summary(),
        "config": cfg.to_dict(),
        "resolved": resolved,
    }
    path = _report_path(cfg, ".report.json")
    if path is not None:
        io.write_json(path, report)
    return report


def _load_spfd(cfg: RunConfig) -> SpfdInstance:
    if cfg.profit is None:
        return generate_spfd(cfg.m, cfg.n, cfg.z, cfg.l, seed=cfg.seed,
                             sigma2=None if cfg.sigma2 == "median" else float(cfg.sigma2))
    P = io.read_matrix(cfg.profit)
    if cfg.demands is None:
        raise InputError("--profit needs --demands (one demand sample per row)")
    demands = io.read_matrix(cfg.demands)
    mu = _weights(cfg.supplies, P.shape[0], "supply")
    return SpfdInstance(P, mu, demands, cfg.l)


def cmd_spfd(cfg: RunConfig, explicit=frozenset()):
    inst = _load_spfd(cfg)
    res = solve_spfd(inst, cfg.lambda1, cfg.lambda2, solver_config(cfg))
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "score"])
    for (i, j), s in zip(res.edges, res.scores):
        w.writerow([i, j, repr(s)])
    _emit(buf.getvalue(), cfg.out)
    report = {**res.report(), "l": inst.l, "z": inst.z, "seed": cfg.seed, "config": cfg.to_dict(),
              "note": "expected profit uses the averaged plans on the chosen edges without re-optimizing mass"}
    path = _report_path(cfg, ".report.json")
    if path is not None:
        io.write_json(path, report)
    return report


def cmd_gradient_flow(cfg: RunConfig, explicit=frozenset()):
    if (cfg.source is None) != (cfg.target is None):
        raise InputError("give both --source and --target, or neither for the built-in toy")
    if cfg.source is None:
        X, Y = two_cluster_toy(20, seed=cfg.seed)
    else:
        X, Y = _read_cloud(cfg.source).points, _read_cloud(cfg.target).points
    mu = None if cfg.weights_source is None else _weights(cfg.weights_source, len(X), "source")
    nu = None if cfg.weights_target is None else _weights(cfg.weights_target, len(Y), "target")
    kernel = None if cfg.sigma2 == "median" else KernelSpec(cfg.kernel, float(cfg.sigma2))
    fcfg = FlowConfig(cfg.learning_rate, cfg.iterations, cfg.k,
                      lambda1=cfg.lambda1 if "lambda1" in explicit else FlowConfig.lambda1,
                      lambda2=cfg.lambda2, kernel=kernel)
    solver = SolverConfig(max_iter=cfg.max_iter if "max_iter" in explicit else 50, kkt_tol=1e-6, seed=cfg.seed)
    traj = gradient_flow(X, Y, fcfg, mu, nu, solver)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = X.shape[1]
    w.writerow(["iteration", "point", *[f"x{k}" for k in range(d)], "mmd2"])
    for row in traj.rows():
        w.writerow([row[0], row[1], *map(repr, row[2:])])
    _emit(buf.getvalue(), cfg.out)
    report = {"initial_mmd2": traj.mmd2[0], "final_mmd2": traj.mmd2[-1],
              "ratio": traj.mmd2[-1] / traj.mmd2[0] if traj.mmd2[0] > 0 else 0.0,
              "mmd2": traj.mmd2, "sigma2": traj.kernel.sigma2, "config": cfg.to_dict()}
    path = _report_path(cfg, ".report.json")
    if path is not None:
        io.write_json(path, report)
    return report


def format_table(rows):
    header = ("lambda1", "lambda2", "primal", "dual", "gap")
    body = [(f"{r['lambda1']:g}", f"{r['lambda2']:g}", f"{r['primal']:.6e}", f"{r['dual']:.6e}", f"{r['gap']:.3e}")
            for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body)) for k, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def cmd_duality_gap(cfg: RunConfig, explicit=frozenset()):
    l1_grid = [cfg.lambda1] if "lambda1" in explicit else list(cfg.lambda1_grid)
    l2_grid = [cfg.lambda2] if "lambda2" in explicit else list(cfg.lambda2_grid)
    if any(not l2 > 0 for l2 in l2_grid):
        raise CertificateUnavailable(
            "duality-gap certificates need lambda2 > 0; with lambda2 = 0 the sparse conjugate is unbounded")
    base, resolved = build_instance(cfg, lambda1=l1_grid[0], lambda2=l2_grid[0])
    m, n = base.shape
    K2 = cfg.k_per_column if cfg.k_per_column is not None else m
    matroid = MatroidConstraint.partition(K2, m, n)
    scfg = solver_config(cfg)
    rows = []
    for l1 in l1_grid:
        for l2 in l2_grid:
            inst = base.with_lambdas(l1, l2)
            res = matroid_omp(inst, matroid, scfg, pick=cfg.pick)
            cert = duality_gap(inst, res.plan, K2, scfg.support_tol)
            rows.append({"lambda1": l1, "lambda2": l2, "primal": cert.primal, "dual": cert.dual,
                         "gap": cert.gap, "K2": K2, "converged": res.trace.converged})
    table = format_table(rows)
    report = {"rows": rows, "config": cfg.to_dict(), "resolved": resolved}
    if cfg.out is not None:
        io.write_json(cfg.out, report)
    sys.stdout.write(table)
    return report


COMMANDS = {
    "plan": cmd_plan,
    "spfd": cmd_spfd,
    "gradient-flow": cmd_gradient_flow,
    "duality-gap": cmd_duality_gap,
}


# ---------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser():
    shared = _Parser(add_help=False)
    S = argparse.SUPPRESS
    a = shared.add_argument
    a("--config", default=None, help="flat key=value file; flags override it")
    a("--source", default=S, help="source point-cloud CSV")
    a("--target", default=S, help="target point-cloud CSV")
    a("--cost", default=S, help=f"cost kind {COST_KINDS} or a cost-matrix CSV path")
    a("--normalize-cost", dest="normalize_cost", default=S, help="true/false (point-cloud costs only)")
    a("--gram-source", dest="gram_source", default=S, help="source Gram-matrix CSV")
    a("--gram-target", dest="gram_target", default=S, help="target Gram-matrix CSV")
    a("--weights-source", dest="weights_source", default=S)
    a("--weights-target", dest="weights_target", default=S)
    a("--kernel", default=S, choices=KERNEL_FAMILIES)
    a("--sigma2", default=S, help="bandwidth, or 'median'")
    a("--lambda1", default=S)
    a("--lambda2", default=S)
    a("--algorithm", default=S, choices=ALGORITHMS)
    a("--k", default=S, help="global sparsity K1")
    a("--k-per-column", dest="k_per_column", default=S, help="per-column sparsity K2 (matroid-omp)")
    a("--pick", default=S, choices=("random", "max"), help="matroid-omp member choice")
    a("--epsilon", default=S)
    a("--seed", default=S)
    a("--max-iter", dest="max_iter", default=S)
    a("--out", default=S)
    a("--report", default=S, help="JSON report path (default: <out>.report.json)")
    a("-v", "--verbose", action="store_true", default=False)

    parser = _Parser(prog="sparse-uot", description="Sparse unbalanced optimal transport via greedy selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("plan", parents=[shared], help="compute a sparse transport plan")
    sp = sub.add_parser("spfd", parents=[shared], help="sparse process flexibility design")
    for flag in ("--profit", "--supplies", "--demands", "--m", "--n", "--z", "--l"):
        sp.add_argument(flag, default=S)
    gf = sub.add_parser("gradient-flow", parents=[shared], help="particle flow toward the target")
    gf.add_argument("--learning-rate", "--lr", dest="learning_rate", default=S)
    gf.add_argument("--iterations", default=S)
    dg = sub.add_parser("duality-gap", parents=[shared], help="duality-gap table over a lambda grid")
    dg.add_argument("--lambda1-grid", dest="lambda1_grid", default=S, help="comma-separated values")
    dg.add_argument("--lambda2-grid", dest="lambda2_grid", default=S, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    try:
        ns = vars(build_parser().parse_args(argv))
        command = ns.pop("command")
        config_file = ns.pop("config", None)
        verbose = ns.pop("verbose", False)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s: %(message)s")
        cfg, explicit = resolve_config(ns, config_file)
        COMMANDS[command](cfg, explicit)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
