"""Factorization DAG: panel-factorize and panel-update tasks.

One factor task per panel (diagonal factorization plus the grouped panel
solve); one update task per (source, destination) panel couple with at least
one facing block. Edges: factor(p) -> update(p->q) -> factor(q).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import kernels
from .errors import StructuralError

FACTOR = "factor"
UPDATE = "update"


@dataclass
class Task:
    id: int
    kind: str
    p: int
    q: int                      # destination panel; equals p for factor tasks
    cost: int = 0
    priority: int = 0
    ndeps: int = 0
    successors: list = field(default_factory=list)


@dataclass
class TaskGraph:
    tasks: list
    factor_of: dict             # panel -> factor task id
    update_of: dict             # (p, q) -> update task id
    panel_dims: list            # (width, nrows) per panel, for the simulator

    def __len__(self):
        return len(self.tasks)

    @property
    def nedges(self):
        return sum(len(t.successors) for t in self.tasks)

    def roots(self):
        return [t.id for t in self.tasks if t.ndeps == 0]

    def check_acyclic(self):
        """Kahn's peeling; raises if any task is unreachable (cycle)."""
        indeg = [t.ndeps for t in self.tasks]
        stack = [t.id for t in self.tasks if indeg[t.id] == 0]
        seen = 0
        while stack:
            tid = stack.pop()
            seen += 1
            for s in self.tasks[tid].successors:
                indeg[s] -= 1
                if indeg[s] == 0:
                    stack.append(s)
        if seen != len(self.tasks):
            raise StructuralError("task graph contains a cycle")

    def topological_order(self):
        order = []
        indeg = [t.ndeps for t in self.tasks]
        stack = sorted((t.id for t in self.tasks if indeg[t.id] == 0), reverse=True)
        while stack:
            tid = stack.pop()
            order.append(tid)
            for s in sorted(self.tasks[tid].successors, reverse=True):
                indeg[s] -= 1
                if indeg[s] == 0:
                    stack.append(s)
        if len(order) != len(self.tasks):
            raise StructuralError("task graph contains a cycle")
        return order


def build_taskgraph(symbol):
    """Tasks and dependency edges from the block structure."""
    tasks = []
    factor_of = {}
    update_of = {}

    for panel in symbol.panels:
        tid = len(tasks)
        factor_of[panel.id] = tid
        tasks.append(Task(tid, FACTOR, panel.id, panel.id))

    for panel in symbol.panels:
        seen = set()
        for blk in panel.blocks:
            if blk.facing in seen:
                continue
            seen.add(blk.facing)
            tid = len(tasks)
            update_of[(panel.id, blk.facing)] = tid
            tasks.append(Task(tid, UPDATE, panel.id, blk.facing))

    for (p, q), utid in update_of.items():
        ftid = factor_of[p]
        tasks[ftid].successors.append(utid)
        tasks[utid].ndeps += 1
        tasks[utid].successors.append(factor_of[q])
        tasks[factor_of[q]].ndeps += 1

    dims = [(panel.width, panel.nrows) for panel in symbol.panels]
    graph = TaskGraph(tasks, factor_of, update_of, dims)
    graph.check_acyclic()
    return graph


def compute_costs_and_priorities(graph, symbol, form=kernels.LLT):
    """Flop costs per task and critical-path priorities (longest path to a sink)."""
    by_couple = {}
    for panel in symbol.panels:
        groups = {}
        for blk in panel.blocks:
            groups.setdefault(blk.facing, []).append(blk)
        by_couple[panel.id] = groups
    for task in graph.tasks:
        panel = symbol.panels[task.p]
        if task.kind == FACTOR:
            task.cost = kernels.factor_task_flops(panel, form)
        else:
            task.cost = kernels.update_task_flops(panel, by_couple[task.p][task.q], form)
    propagate_priorities(graph)


def propagate_priorities(graph):
    """priority(t) = cost(t) + max successor priority, in reverse topological order."""
    order = graph.topological_order()
    for tid in reversed(order):
        task = graph.tasks[tid]
        best = 0
        for s in task.successors:
            best = max(best, graph.tasks[s].priority)
        task.priority = task.cost + best


def export_dag(graph, path):
    """Plain-text DAG: task lines, edge lines, then panel dimension lines."""
    with open(path, "w") as fh:
        fh.write(f"tasks {len(graph.tasks)}\n")
        for t in graph.tasks:
            fh.write(f"{t.id} {t.kind} {t.p} {t.q} {t.cost}\n")
        fh.write(f"edges {graph.nedges}\n")
        for t in graph.tasks:
            for s in t.successors:
                fh.write(f"{t.id} {s}\n")
        fh.write(f"panels {len(graph.panel_dims)}\n")
        for p, (w, m) in enumerate(graph.panel_dims):
            fh.write(f"{p} {w} {m}\n")
