"""End-to-end pipeline: order, analyze, factorize, solve, report."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, runtime, sparse, symbolic, taskgraph
from .ordering import EliminationTree, Permutation, elimination_tree, \
    nested_dissection, postorder_permute


@dataclass
class AnalyzeOptions:
    ordering: str = "nd"            # nd | natural
    nd_leaf: int = 64
    amalgamation: float = 0.12
    split_width: int = 128
    split_levels: int = 3
    form: str = kernels.LLT


@dataclass
class Analysis:
    A_perm: sparse.SparseMatrix     # permuted symmetric-lower matrix
    perm: Permutation
    tree: EliminationTree
    symbol: symbolic.SymbolStructure
    graph: taskgraph.TaskGraph
    options: AnalyzeOptions
    nnz_a: int
    nnz_l_presplit: int
    flops: int
    separator_sizes: list = field(default_factory=list)


def analyze(A, options=None):
    """Ordering, symbolic factorization, panel construction and the task DAG."""
    opts = options or AnalyzeOptions()
    S = sparse.symmetrize_pattern(A)
    if opts.ordering == "nd":
        G = sparse.adjacency_from_pattern(S)
        P0, septree = nested_dissection(G, opts.nd_leaf)
        sep_sizes = [len(n.vertices) for n in septree.all_nodes() if not n.is_leaf()]
    elif opts.ordering == "natural":
        P0 = Permutation.identity(S.n)
        sep_sizes = []
    else:
        raise ValueError(f"unknown ordering '{opts.ordering}'")
    A1 = sparse.permute_symmetric(S, P0.perm)
    tree = elimination_tree(A1)
    P1, tree = postorder_permute(tree)
    P = P1.compose(P0)
    A2 = sparse.permute_symmetric(S, P.perm)

    cs, nnz_l = symbolic.symbolic_factorize(A2, tree)
    panels = symbolic.find_supernodes(cs, tree)
    if opts.amalgamation > 0:
        panels = symbolic.amalgamate(panels, nnz_l, opts.amalgamation)
    nnz_presplit = panels.total_entries()
    if opts.split_width and opts.split_width > 0:
        panels = symbolic.split_panels(panels, opts.split_width, opts.split_levels)
    symbol = symbolic.build_symbol(panels)
    graph = taskgraph.build_taskgraph(symbol)
    taskgraph.compute_costs_and_priorities(graph, symbol, opts.form)
    flops = kernels.total_flops(symbol, opts.form)
    return Analysis(A2, P, tree, symbol, graph, opts, S.nnz, nnz_presplit, flops,
                    sep_sizes)


@dataclass
class FactorResult:
    analysis: Analysis
    store: symbolic.PanelStore
    form: str
    events: list
    wall_seconds: float
    schedule: runtime.StaticSchedule | None = None

    def solve(self, b):
        return kernels.supernodal_solve(self.analysis.symbol, self.store, b,
                                        self.form, self.analysis.perm.perm)


def factorize(analysis, scheduler="dynamic", threads=1, kernel=kernels.BUFFERED,
              deterministic=False, collect_trace=True):
    """Numeric factorization of the analyzed matrix on a worker pool."""
    form = analysis.options.form
    config = kernels.KernelConfig(
        form=form, variant=kernel,
        pivot_threshold=kernels.default_pivot_threshold(analysis.A_perm))
    store = symbolic.allocate_panels(analysis.symbol, analysis.A_perm)
    kern = kernels.FactorKernels(analysis.symbol, store, config)
    run_task = lambda task, buf: kern.run(task, buf)
    t0 = time.perf_counter()
    schedule = None
    if threads == 0:
        raise ValueError("threads must be >= 1")
    if scheduler == "static":
        schedule = runtime.static_schedule(analysis.graph, threads)
        events = runtime.execute_static(analysis.graph, schedule, run_task,
                                        worker_init=kern.new_buffer,
                                        collect_trace=collect_trace)
    elif scheduler == "dynamic":
        events = runtime.execute_dynamic(analysis.graph, threads, run_task,
                                         worker_init=kern.new_buffer,
                                         deterministic=deterministic,
                                         collect_trace=collect_trace)
    elif scheduler == "sequential":
        kernels.factorize_sequential(analysis.symbol, store, config)
        events = []
    else:
        raise ValueError(f"unknown scheduler '{scheduler}'")
    wall = time.perf_counter() - t0
    return FactorResult(analysis, store, form, events, wall, schedule)


@dataclass
class RunReport:
    matrix: str
    n: int
    nnz_a: int
    nnz_l: int
    flops: int
    scheduler: str
    threads: int
    wall_seconds: float
    gflops: float
    residual: float | None
    status: str

    CSV_HEADER = ("matrix,n,nnz_a,nnz_l,flops,scheduler,threads,"
                  "wall_s,gflops,residual,status")

    def csv_row(self):
        res = "" if self.residual is None else f"{self.residual:.3e}"
        return (f"{self.matrix},{self.n},{self.nnz_a},{self.nnz_l},{self.flops},"
                f"{self.scheduler},{self.threads},{self.wall_seconds:.6f},"
                f"{self.gflops:.3f},{res},{self.status}")


def run_report(name, A, result, scheduler, threads, residual=None, status="ok"):
    an = result.analysis
    wall = result.wall_seconds
    gflops = an.flops / wall / 1e9 if wall > 0 else 0.0
    return RunReport(name, an.symbol.n, an.nnz_a, an.symbol.nnz_l, an.flops,
                     scheduler, threads, wall, gflops, residual, status)


def check_solve(A, result):
    """Residual of the self-validating system b = A @ ones."""
    b = sparse.spmv(A, np.ones(A.n))
    x = result.solve(b)
    return sparse.residual_norm(A, x, b), x
