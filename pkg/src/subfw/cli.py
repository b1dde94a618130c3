"""``subfw`` command line: solve, bench, verify and matgen.

Exit codes: 0 success (converged / claim passed), 1 runtime error, 2 usage
error, 3 iteration budget exhausted without convergence, 4 claim failed,
5 negative control failed as designed.
"""

import argparse
import json
import sys

import numpy as np

from .core import ContractError, write_trace_csv
from .domains import FiniteAtoms, L1Ball, LatentGroupBall, make_overlapping_groups
from .objectives import FormatError, LeastSquares, read_chunked_matrix, read_fwmat, read_fwvec
from .solvers import ALGORITHMS, SolverConfig, solve

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MAXITER, EXIT_FAIL, EXIT_CONTROL = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _groups(text):
    try:
        size, overlap = (int(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--groups expects 'size,overlap'") from exc
    return size, overlap


def build_parser():
    parser = _Parser(prog="subfw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run one solver")
    s.add_argument("--algo", choices=ALGORITHMS, required=True)
    s.add_argument("--domain", choices=("l1", "lgl", "finite"), required=True)
    s.add_argument("--radius", type=float, default=1.0)
    rate = s.add_mutually_exclusive_group()
    rate.add_argument("--eta", type=float)
    rate.add_argument("--p", type=int)
    s.add_argument("--max-iters", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--checkpoint-k", type=int, default=2)
    s.add_argument("--curvature", type=float)
    s.add_argument("--seed", type=_seed, required=True)
    s.add_argument("--data", required=True, help="FWMAT1 design matrix")
    s.add_argument("--target", required=True, help="FWVEC1 target vector")
    s.add_argument("--chunk-cols", type=int, help="stream the matrix in column chunks of this width")
    s.add_argument("--groups", type=_groups, default=(10, 3), help="lgl groups as 'size,overlap'")
    s.add_argument("--atoms", help="FWMAT1 file whose columns are the atoms (finite domain)")
    s.add_argument("--trace", help="trace CSV output path")

    b = sub.add_parser("bench", help="run a multi-seed experiment")
    b.add_argument("--scenario", required=True, help="scenario JSON file")
    b.add_argument("--out", required=True, help="run directory")
    b.add_argument("--seed", type=_seed, required=True, help="offset added to every scenario seed")
    b.add_argument("--max-iters", type=int)

    v = sub.add_parser("verify", help="check one theoretical claim")
    v.add_argument("--claim", required=True)
    v.add_argument("--seed", type=_seed, required=True)
    v.add_argument("--trials", type=int)
    v.add_argument("--m", type=int)
    v.add_argument("--p", type=int)
    v.add_argument("--seeds", type=int)
    v.add_argument("--max-iters", type=int)
    v.add_argument("--negative-control", action="store_true")
    v.add_argument("--report", help="write the JSON report here as well as to stdout")

    m = sub.add_parser("matgen", help="write a scenario instance as FWMAT1/FWVEC1 files")
    m.add_argument("--scenario", default="lasso", help="'lasso', 'lgl' or a scenario JSON file")
    m.add_argument("--seed", type=_seed, required=True)
    m.add_argument("--out", required=True, help="path prefix")
    m.add_argument("--n", type=int)
    m.add_argument("--d", type=int)
    return parser


# -- solve --------------------------------------------------------------------


def _load_objective(args):
    if args.chunk_cols is not None:
        if args.chunk_cols < 1:
            raise UsageError("--chunk-cols must be at least 1")
        return read_chunked_matrix(args.data, args.chunk_cols, target=args.target)
    X = read_fwmat(args.data)
    return LeastSquares(X, read_fwvec(args.target, expected_len=X.shape[0]))


def _domain(args, dim):
    if args.domain == "l1":
        return L1Ball(dim, args.radius)
    if args.domain == "lgl":
        size, overlap = args.groups
        return LatentGroupBall(make_overlapping_groups(dim, size, overlap), args.radius)
    if args.atoms is None:
        return FiniteAtoms.simplex(dim, args.radius)
    from .core import Atom

    A = read_fwmat(args.atoms)
    if A.shape[0] != dim:
        raise UsageError(f"atoms have dimension {A.shape[0]}, data has {dim}")
    atoms = []
    for col in A.T:
        nz = np.flatnonzero(col)
        atoms.append(Atom(nz, col[nz]))
    return FiniteAtoms(atoms, dim)


def _check_solve_flags(args):
    if args.algo == "rafw" and args.domain == "lgl":
        raise UsageError("rafw needs a finite set of extreme atoms; the lgl domain is a continuous family")
    if args.algo == "afw" and args.domain == "lgl":
        raise UsageError("afw needs a finite set of extreme atoms; the lgl domain is a continuous family")
    if args.algo == "rfw-v2" and args.curvature is None:
        raise UsageError("--algo rfw-v2 requires --curvature")
    if args.curvature is not None and args.curvature <= 0:
        raise UsageError("--curvature must be positive")
    if args.radius <= 0:
        raise UsageError("--radius must be positive")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be at least 1")


def cmd_solve(args):
    _check_solve_flags(args)
    try:
        config = SolverConfig(
            args.algo,
            eta=args.eta,
            p=args.p,
            max_iters=args.max_iters,
            tol=args.tol,
            checkpoint_k=args.checkpoint_k,
            curvature=args.curvature,
            seed=args.seed,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    obj = _load_objective(args)
    domain = _domain(args, obj.dim)
    res = solve(obj, domain, config)
    if args.trace:
        write_trace_csv(res.trace, args.trace)
    last = res.trace[-1]
    print(
        json.dumps(
            {
                "algorithm": args.algo,
                "iterations": len(res.trace),
                "converged": res.converged,
                "last_full_gap": res.last_full_gap,
                "objective": last.objective,
                "support_size": res.active.support_size,
                "grad_coords": last.grad_coords_cum,
            }
        )
    )
    return EXIT_OK if res.converged else EXIT_MAXITER


# -- bench --------------------------------------------------------------------


def cmd_bench(args):
    from .bench import run_experiment, scenario_from_dict

    with open(args.scenario) as fh:
        spec = json.load(fh)
    try:
        scenario, algorithms, seeds = scenario_from_dict(spec)
    except (ContractError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    for a in algorithms:
        if a not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}")
    if scenario.name == "lgl" and ({"afw", "rafw"} & set(algorithms)):
        raise UsageError("away-step solvers need a finite set of extreme atoms; the lgl domain is a continuous family")
    seeds = [s + args.seed for s in seeds]
    summary = run_experiment(scenario, algorithms, seeds, args.out, max_iters=args.max_iters)
    for algo, stats in summary.items():
        print(f"{algo}: converged {stats['converged_runs']}/{len(stats['seeds'])}, cost to 1e-2: {stats['median_cost_to_reach']['0.01']}")
    return EXIT_OK


# -- verify -------------------------------------------------------------------

_VERIFY_FLAGS = {
    "lemma1": {"seeds": "seeds", "max_iters": "max_iters"},
    "lemma2": {"m": "m", "p": "p", "trials": "trials"},
    "lemma3": {"p": "p", "trials": "trials"},
    "theorem1": {"seeds": "seeds"},
    "theorem2": {"seeds": "seeds", "p": "p"},
    "dropbound": {"seeds": "seeds", "max_iters": "max_iters"},
}


def cmd_verify(args):
    from .verify import CLAIMS

    if args.claim not in CLAIMS:
        raise UsageError(f"unknown claim {args.claim!r}; choose from {', '.join(CLAIMS)}")
    kwargs = {"seed": args.seed, "negative_control": args.negative_control}
    for flag, name in _VERIFY_FLAGS[args.claim].items():
        value = getattr(args, flag)
        if value is not None:
            kwargs[name] = value
    report = CLAIMS[args.claim](**kwargs)
    report["negative_control"] = args.negative_control
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    if report["pass"]:
        return EXIT_OK
    return EXIT_CONTROL if args.negative_control else EXIT_FAIL


# -- matgen -------------------------------------------------------------------


def cmd_matgen(args):
    from .bench import LassoScenario, LglScenario, make_problem, scenario_from_dict, write_matrix_files
    from .objectives import write_fwvec

    if args.scenario == "lasso":
        scenario = LassoScenario()
    elif args.scenario == "lgl":
        scenario = LglScenario()
    else:
        with open(args.scenario) as fh:
            scenario = scenario_from_dict(json.load(fh))[0]
    if args.n is not None:
        scenario.n = args.n
    if args.d is not None:
        scenario.d = args.d
    obj, _, x_star, _ = make_problem(scenario, args.seed)
    mat, vec = write_matrix_files(obj, args.out)
    truth = write_fwvec(f"{args.out}.xstar.fwvec", x_star)
    print(json.dumps({"matrix": mat, "target": vec, "x_star": truth, "n": obj.n, "d": obj.dim}))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "verify": cmd_verify, "matgen": cmd_matgen}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"subfw: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ContractError, OSError, ValueError) as exc:
        print(f"subfw: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
