"""Command-line harness: gen, symbol, dag, factor, bench, sim.

Exit codes: 0 success, 2 numerical failure, 3 I/O error, 4 internal error.
"""

import os

# keep BLAS single-threaded: the solver parallelizes across panels itself
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import statistics
import sys

from . import kernels, pipeline, runtime, sim, sparse, taskgraph
from .errors import (DivergentSolveError, MatrixMarketError,
                     NotPositiveDefiniteError, SingularPivotError,
                     StructuralError)

SCHEMA_LINE = "# schema=1"

BENCH_HEADER = ("matrix,n,nnz_a,nnz_l,flops,scheduler,threads,reps,"
                "min_s,median_s,gflops_median,residual_max,status")
SIM_HEADER = "policy,gpus,streams,makespan,gflops"


def _add_matrix_args(p, multiple=False):
    kw = {"action": "append"} if multiple else {}
    p.add_argument("--mm", metavar="PATH", help="MatrixMarket input file", **kw)
    p.add_argument("--lap2d", nargs=2, type=int, metavar=("NX", "NY"),
                   help="2D 5-point Laplacian on an NX x NY grid", **kw)
    p.add_argument("--lap3d", nargs=3, type=int, metavar=("NX", "NY", "NZ"),
                   help="3D 7-point Laplacian", **kw)
    p.add_argument("--spd-shift", action="store_true",
                   help="revalue pattern input as SPD: off-diag -1, diag degree+1")


def _add_analysis_args(p):
    p.add_argument("--ordering", choices=["nd", "natural"], default="nd")
    p.add_argument("--nd-leaf", type=int, default=64,
                   help="nested-dissection leaf size (default 64)")
    p.add_argument("--amalgamation", type=float, default=0.12,
                   help="allowed extra fill fraction when merging panels (default 0.12)")
    p.add_argument("--split-width", type=int, default=128,
                   help="max panel width near the tree root (default 128)")
    p.add_argument("--split-levels", type=int, default=3,
                   help="tree levels from the root where splitting applies (default 3)")


def _add_numeric_args(p):
    p.add_argument("--format", choices=[kernels.LLT, kernels.LDLT],
                   default=kernels.LLT, dest="form")
    p.add_argument("--scheduler", choices=["static", "dynamic"], default="dynamic")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SOLVER_THREADS", "1")),
                   help="worker threads (default $SOLVER_THREADS or 1)")
    p.add_argument("--kernel", choices=[kernels.BUFFERED, kernels.DIRECT],
                   default=kernels.BUFFERED)
    p.add_argument("--deterministic", action="store_true",
                   help="force ascending-source update order (dynamic scheduler)")
    p.add_argument("--trace", metavar="PATH", help="write an execution trace CSV")


def _matrix_sources(args, multiple=False):
    """(name, SparseMatrix) pairs from the matrix flags."""
    out = []
    if multiple:
        for path in args.mm or []:
            out.append((os.path.splitext(os.path.basename(path))[0],
                        sparse.read_matrix_market(path)))
        for dims in args.lap2d or []:
            out.append((f"lap2d_{dims[0]}x{dims[1]}", sparse.gen_laplacian(2, dims)))
        for dims in args.lap3d or []:
            out.append((f"lap3d_{dims[0]}x{dims[1]}x{dims[2]}",
                        sparse.gen_laplacian(3, dims)))
    else:
        if args.mm:
            out.append((os.path.splitext(os.path.basename(args.mm))[0],
                        sparse.read_matrix_market(args.mm)))
        if args.lap2d:
            out.append((f"lap2d_{args.lap2d[0]}x{args.lap2d[1]}",
                        sparse.gen_laplacian(2, args.lap2d)))
        if args.lap3d:
            out.append((f"lap3d_{args.lap3d[0]}x{args.lap3d[1]}x{args.lap3d[2]}",
                        sparse.gen_laplacian(3, args.lap3d)))
    if not out:
        raise ValueError("no matrix source given (--mm, --lap2d or --lap3d)")
    if getattr(args, "spd_shift", False):
        out = [(name, sparse.spd_shift_values(A)) for name, A in out]
    return out


def _analysis_options(args, form=None):
    return pipeline.AnalyzeOptions(
        ordering=args.ordering, nd_leaf=args.nd_leaf,
        amalgamation=args.amalgamation, split_width=args.split_width,
        split_levels=args.split_levels, form=form or getattr(args, "form", kernels.LLT))


def _emit(lines, out_path):
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args):
    [(name, A)] = _matrix_sources(args)[:1]
    sparse.write_matrix_market(A, args.out)
    return 0


def cmd_symbol(args):
    [(name, A)] = _matrix_sources(args)[:1]
    an = pipeline.analyze(A, _analysis_options(args))
    lines = [f"# symbol n={an.symbol.n} panels={an.symbol.npanels} nnz_l={an.symbol.nnz_l}"]
    for panel in an.symbol.panels:
        lines.append(f"{panel.id} {panel.fc} {panel.lc} {panel.id}")
        for blk in panel.blocks:
            lines.append(f"{panel.id} {blk.fr} {blk.lr} {blk.facing}")
    _emit(lines, args.out)
    return 0


def cmd_dag(args):
    [(name, A)] = _matrix_sources(args)[:1]
    an = pipeline.analyze(A, _analysis_options(args, form=args.form))
    taskgraph.export_dag(an.graph, args.out)
    return 0


def cmd_factor(args):
    [(name, A)] = _matrix_sources(args)[:1]
    an = pipeline.analyze(A, _analysis_options(args))
    if args.verbose and an.separator_sizes:
        print(f"# separators: {an.separator_sizes}", file=sys.stderr)
    res = pipeline.factorize(an, scheduler=args.scheduler, threads=args.threads,
                             kernel=args.kernel, deterministic=args.deterministic,
                             collect_trace=bool(args.trace))
    if args.trace:
        runtime.trace_to_csv(res.events, args.trace)
    residual = None
    if args.check:
        S = sparse.symmetrize_pattern(A)
        residual, _ = pipeline.check_solve(S, res)
    report = pipeline.run_report(name, A, res, args.scheduler, args.threads,
                                 residual)
    _emit([SCHEMA_LINE, pipeline.RunReport.CSV_HEADER, report.csv_row()], args.out)
    return 0


def cmd_bench(args):
    sources = _matrix_sources(args, multiple=True)
    schedulers = [s.strip() for s in args.scheduler_list.split(",") if s.strip()]
    threads_list = [int(t) for t in args.threads_list.split(",") if t.strip()]
    rows = [SCHEMA_LINE, BENCH_HEADER]
    for name, A in sources:
        an = pipeline.analyze(A, _analysis_options(args))
        S = sparse.symmetrize_pattern(A) if args.check else None
        for scheduler in schedulers:
            for threads in threads_list:
                walls, residuals = [], []
                for _ in range(args.reps):
                    res = pipeline.factorize(an, scheduler=scheduler,
                                             threads=threads, kernel=args.kernel,
                                             deterministic=args.deterministic,
                                             collect_trace=False)
                    walls.append(res.wall_seconds)
                    if args.check:
                        r, _ = pipeline.check_solve(S, res)
                        residuals.append(r)
                med = statistics.median(walls)
                gflops = an.flops / med / 1e9 if med > 0 else 0.0
                res_max = f"{max(residuals):.3e}" if residuals else ""
                rows.append(f"{name},{an.symbol.n},{an.nnz_a},{an.symbol.nnz_l},"
                            f"{an.flops},{scheduler},{threads},{args.reps},"
                            f"{min(walls):.6f},{med:.6f},{gflops:.3f},{res_max},ok")
    _emit(rows, args.out)
    return 0


def cmd_sim(args):
    graph = sim.load_dag(args.dag)
    model = sim.ResourceModel(cpu_count=args.cpus, cpu_speed=args.cpu_speed,
                              gpu_count=args.gpus, gpu_peak=args.gpu_peak,
                              streams_per_gpu=args.streams,
                              pci_bandwidth=args.bandwidth,
                              pci_latency=args.latency, policy=args.policy,
                              saturation_area=args.saturation)
    rows = [SCHEMA_LINE, SIM_HEADER]
    if args.compare:
        for r in sim.compare_policies(graph, None, model):
            rows.append(f"{r['policy']},{r['gpus']},{r['streams']},"
                        f"{r['makespan']:.9g},{r['gflops']:.3f}")
    else:
        sched = sim.simulate(graph, None, model)
        total = sum(t.cost for t in graph.tasks)
        mk = float(sched.makespan)
        gflops = total / mk / 1e9 if mk > 0 else 0.0
        rows.append(f"{args.policy},{args.gpus},{args.streams},{mk:.9g},{gflops:.3f}")
    _emit(rows, args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="panelsolve",
        description="Task-graph supernodal sparse LLt/LDLt solver",
        epilog=("CSV schemas (all versioned by a leading '# schema=1' line): "
                f"factor: {pipeline.RunReport.CSV_HEADER}; "
                f"bench: {BENCH_HEADER}; sim: {SIM_HEADER}; "
                f"trace: {','.join(runtime.TRACE_FIELDS)}"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a generated matrix as MatrixMarket")
    _add_matrix_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("symbol", help="dump the block symbolic structure")
    _add_matrix_args(p)
    _add_analysis_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_symbol)

    p = sub.add_parser("dag", help="dump the factorization task DAG")
    _add_matrix_args(p)
    _add_analysis_args(p)
    p.add_argument("--format", choices=[kernels.LLT, kernels.LDLT],
                   default=kernels.LLT, dest="form")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dag)

    p = sub.add_parser("factor", help="factorize (and optionally solve/check)")
    _add_matrix_args(p)
    _add_analysis_args(p)
    _add_numeric_args(p)
    p.add_argument("--check", action="store_true",
                   help="solve against b = A*ones and report the residual")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_factor)

    p = sub.add_parser("bench", help="sweep schedulers and thread counts")
    _add_matrix_args(p, multiple=True)
    _add_analysis_args(p)
    p.add_argument("--format", choices=[kernels.LLT, kernels.LDLT],
                   default=kernels.LLT, dest="form")
    p.add_argument("--kernel", choices=[kernels.BUFFERED, kernels.DIRECT],
                   default=kernels.BUFFERED)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--scheduler-list", default="dynamic")
    p.add_argument("--threads-list", default="1")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--check", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sim", help="simulate a DAG on modeled CPU/GPU resources")
    p.add_argument("--dag", required=True)
    p.add_argument("--cpus", type=int, default=4)
    p.add_argument("--gpus", type=int, default=0)
    p.add_argument("--streams", type=int, default=1)
    p.add_argument("--policy", choices=[sim.DEDICATED, sim.SHARED],
                   default=sim.DEDICATED)
    p.add_argument("--cpu-speed", type=float, default=10e9)
    p.add_argument("--gpu-peak", type=float, default=300e9)
    p.add_argument("--bandwidth", type=float, default=6e9)
    p.add_argument("--latency", type=float, default=10e-6)
    p.add_argument("--saturation", type=float, default=1e6)
    p.add_argument("--compare", action="store_true",
                   help="sweep both policies, gpu counts and streams 1..3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sim)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NotPositiveDefiniteError, SingularPivotError, DivergentSolveError) as exc:
        print(f"panelsolve: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (MatrixMarketError, OSError) as exc:
        print(f"panelsolve: i/o error: {exc}", file=sys.stderr)
        return 3
    except StructuralError as exc:
        print(f"panelsolve: internal error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"panelsolve: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
