"""panelsolve: task-graph supernodal sparse LLt/LDLt solver.

The factorization is expressed as a DAG of panel-factorize and panel-update
tasks executed by a static cost-model scheduler or a work-stealing runtime,
plus a discrete-event simulator for heterogeneous CPU/GPU schedules.
"""

from .kernels import supernodal_solve
from .ordering import elimination_tree, nested_dissection, postorder_permute
from .pipeline import AnalyzeOptions, analyze, check_solve, factorize
from .sparse import (SparseMatrix, gen_laplacian, read_matrix_market,
                     residual_norm, spmv, symmetrize_pattern,
                     write_matrix_market)
from .symbolic import (allocate_panels, amalgamate, build_symbol,
                       find_supernodes, split_panels, symbolic_factorize)
from .taskgraph import build_taskgraph, compute_costs_and_priorities, export_dag
from .runtime import execute_dynamic, execute_static, static_schedule, trace_to_csv
from .sim import ResourceModel, compare_policies, load_dag, simulate

__version__ = "0.1.0"

__all__ = [
    "AnalyzeOptions", "ResourceModel", "SparseMatrix", "allocate_panels",
    "amalgamate", "analyze", "build_symbol", "build_taskgraph", "check_solve",
    "compare_policies", "compute_costs_and_priorities", "elimination_tree",
    "execute_dynamic", "execute_static", "export_dag", "factorize",
    "find_supernodes", "gen_laplacian", "load_dag", "nested_dissection",
    "postorder_permute", "read_matrix_market", "residual_norm",
    "simulate", "split_panels", "spmv", "static_schedule", "supernodal_solve",
    "symbolic_factorize", "symmetrize_pattern", "trace_to_csv",
    "write_matrix_market",
]
