"""Task-graph execution: static cost-model scheduling and dynamic work stealing.

Both executors run the kernels on a pool of OS threads. Dependency counters
are mutated under a shared lock; concurrent updates into one destination
panel serialize on that panel's guard. The numeric kernels release the GIL
inside their BLAS calls, so threads overlap on real work.

Tasks below SMALL_TASK_FLOPS additionally serialize on one shared lock:
micro-tasks are interpreter-bound and letting several threads interleave
them only thrashes the GIL (one lock handoff per task is far cheaper than
one per numpy call). Tasks above the threshold run fully in parallel.
"""

from __future__ import annotations

import csv
import heapq
import threading
import time
from collections import deque
from dataclasses import dataclass

from .taskgraph import FACTOR, UPDATE

SMALL_TASK_FLOPS = 200_000


@dataclass
class TraceEvent:
    task_id: int
    kind: str
    p: int
    q: int
    worker: int
    start_ns: int
    end_ns: int


@dataclass
class StaticSchedule:
    worker_lists: list          # per worker: task ids in execution order
    start: dict                 # task id -> predicted start (model time)
    end: dict                   # task id -> predicted end
    worker_of: dict             # task id -> worker
    makespan: float


def static_schedule(graph, workers, speeds=None):
    """List scheduling: ready tasks by priority, worker by earliest completion.

    Tasks are considered in readiness order (ties: higher priority, lower id)
    and placed on the worker with the smallest predicted completion time
    (ties: lower worker id). Model time is flops / worker speed.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if speeds is None:
        speeds = [1.0] * workers
    if len(speeds) != workers:
        raise ValueError("speeds length must match worker count")
    pending = [t.ndeps for t in graph.tasks]
    ready_at = [0.0] * len(graph.tasks)
    heap = [(0.0, -t.priority, t.id) for t in graph.tasks if t.ndeps == 0]
    heapq.heapify(heap)
    avail = [0.0] * workers
    start, end, worker_of = {}, {}, {}
    worker_lists = [[] for _ in range(workers)]
    while heap:
        rt, _, tid = heapq.heappop(heap)
        task = graph.tasks[tid]
        best_w, best_fin, best_start = 0, None, 0.0
        for w in range(workers):
            s = max(avail[w], rt)
            fin = s + task.cost / speeds[w]
            if best_fin is None or fin < best_fin:
                best_w, best_fin, best_start = w, fin, s
        start[tid] = best_start
        end[tid] = best_fin
        worker_of[tid] = best_w
        avail[best_w] = best_fin
        worker_lists[best_w].append(tid)
        for s_id in task.successors:
            pending[s_id] -= 1
            ready_at[s_id] = max(ready_at[s_id], best_fin)
            if pending[s_id] == 0:
                heapq.heappush(heap, (ready_at[s_id], -graph.tasks[s_id].priority, s_id))
    if len(start) != len(graph.tasks):
        raise RuntimeError("schedule did not cover all tasks (cyclic graph?)")
    makespan = max(end.values(), default=0.0)
    return StaticSchedule(worker_lists, start, end, worker_of, makespan)


class _SharedState:
    def __init__(self, graph, npanel_guards, deterministic):
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.pending = [t.ndeps for t in graph.tasks]
        self.completed = 0
        self.idle = 0
        self.abort = None
        self.panel_guards = [threading.Lock() for _ in range(npanel_guards)]
        self.small_lock = threading.Lock()
        self.det_chain = {}
        if deterministic:
            self._add_update_ordering(graph)

    def _add_update_ordering(self, graph):
        # force ascending-source application order per destination panel
        by_dst = {}
        for t in graph.tasks:
            if t.kind == UPDATE:
                by_dst.setdefault(t.q, []).append(t)
        for q, ts in by_dst.items():
            ts.sort(key=lambda t: t.p)
            for a, b in zip(ts, ts[1:]):
                self.det_chain[a.id] = b.id
                self.pending[b.id] += 1


def _finish_task(state, graph, tid, on_ready, pre=None):
    """Decrement successors under the lock; hand newly-ready tasks to on_ready."""
    with state.lock:
        if pre is not None:
            pre()
        state.completed += 1
        released = []
        for s in graph.tasks[tid].successors:
            state.pending[s] -= 1
            if state.pending[s] == 0:
                released.append(s)
        nxt = state.det_chain.get(tid)
        if nxt is not None:
            state.pending[nxt] -= 1
            if state.pending[nxt] == 0:
                released.append(nxt)
        for s in released:
            on_ready(s)
        # wake sleepers only when there is news for them (avoids a notify storm)
        if state.idle and (released or state.completed == len(graph.tasks)):
            state.cond.notify_all()


def execute_static(graph, schedule, run_task, worker_init=None, collect_trace=True):
    """Run a static schedule: each worker executes its list in order, blocking
    until each task's dependencies have completed."""
    nworkers = len(schedule.worker_lists)
    state = _SharedState(graph, _npanels(graph), deterministic=False)
    traces = [[] for _ in range(nworkers)]

    def work(wid):
        ctx = worker_init() if worker_init else None
        holding_small = False
        try:
            for tid in schedule.worker_lists[wid]:
                if state.pending[tid] > 0:
                    # never sleep while serializing other workers' small tasks
                    if holding_small:
                        state.small_lock.release()
                        holding_small = False
                    with state.lock:
                        while state.pending[tid] > 0 and state.abort is None:
                            state.idle += 1
                            state.cond.wait(0.01)
                            state.idle -= 1
                        if state.abort is not None:
                            return
                small = graph.tasks[tid].cost < SMALL_TASK_FLOPS
                if small and not holding_small:
                    state.small_lock.acquire()
                    holding_small = True
                elif not small and holding_small:
                    state.small_lock.release()
                    holding_small = False
                _run_one(graph, tid, wid, run_task, ctx, state, traces, collect_trace)
                if state.abort is not None:
                    return
        except Exception as exc:
            with state.lock:
                if state.abort is None:
                    state.abort = exc
                state.cond.notify_all()
        finally:
            if holding_small:
                state.small_lock.release()

    return _launch(graph, state, nworkers, work, traces, collect_trace)


def execute_dynamic(graph, workers, run_task, worker_init=None,
                    deterministic=False, collect_trace=True):
    """Work-stealing execution with a data-reuse placement heuristic.

    Ready tasks go to the finishing worker's queue top, except a ready factor
    task, which goes to the worker that last updated its panel. Idle workers
    pop their own top, then steal one task from the bottom of the longest
    queue (tie: lowest victim id).
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    state = _SharedState(graph, _npanels(graph), deterministic)
    queues = [deque() for _ in range(workers)]
    owner = {}      # panel -> worker that ran the latest update into it
    traces = [[] for _ in range(workers)]
    rr = [0]

    roots = sorted(graph.roots(),
                   key=lambda tid: (-graph.tasks[tid].priority, tid))
    for i, tid in enumerate(roots):
        queues[i % workers].append(tid)

    def push_ready(tid, wid):
        # caller holds the state lock
        task = graph.tasks[tid]
        if task.kind == FACTOR:
            target = owner.get(task.p)
            if target is None:
                target = rr[0] % workers
                rr[0] += 1
        else:
            target = wid
        queues[target].appendleft(tid)

    def take_task(wid):
        # caller holds the state lock
        if queues[wid]:
            return queues[wid].popleft()
        victim, best = -1, 0
        for v in range(workers):
            if len(queues[v]) > best:
                victim, best = v, len(queues[v])
        if victim >= 0:
            return queues[victim].pop()
        return None

    def work(wid):
        ctx = worker_init() if worker_init else None
        on_ready = lambda s: push_ready(s, wid)
        holding_small = False
        try:
            while True:
                backoff = 0.0005
                with state.lock:
                    tid = take_task(wid)
                    if tid is None and holding_small:
                        state.small_lock.release()
                        holding_small = False
                    while tid is None:
                        if state.completed == len(graph.tasks) or state.abort is not None:
                            return
                        state.idle += 1
                        state.cond.wait(backoff)
                        state.idle -= 1
                        backoff = min(backoff * 2, 0.05)
                        tid = take_task(wid)
                task = graph.tasks[tid]
                small = task.cost < SMALL_TASK_FLOPS
                if small and not holding_small:
                    state.small_lock.acquire()
                    holding_small = True
                elif not small and holding_small:
                    state.small_lock.release()
                    holding_small = False
                pre = None
                if task.kind == UPDATE:
                    pre = lambda q=task.q: owner.__setitem__(q, wid)
                _run_one(graph, tid, wid, run_task, ctx, state, traces,
                         collect_trace, on_ready=on_ready, pre=pre)
                if state.abort is not None:
                    return
        except Exception as exc:
            with state.lock:
                if state.abort is None:
                    state.abort = exc
                state.cond.notify_all()
        finally:
            if holding_small:
                state.small_lock.release()

    return _launch(graph, state, workers, work, traces, collect_trace)


def _npanels(graph):
    return 1 + max((t.q for t in graph.tasks), default=0)


def _run_one(graph, tid, wid, run_task, ctx, state, traces, collect_trace,
             on_ready=None, pre=None):
    """Execute one task (caller handles the small-task lock)."""
    task = graph.tasks[tid]
    guard = state.panel_guards[task.q] if task.kind == UPDATE else None
    if guard is not None:
        guard.acquire()
    try:
        if collect_trace:
            t0 = time.perf_counter_ns()
            run_task(task, ctx)
            t1 = time.perf_counter_ns()
            traces[wid].append(TraceEvent(tid, task.kind, task.p, task.q, wid, t0, t1))
        else:
            run_task(task, ctx)
    finally:
        if guard is not None:
            guard.release()
    _finish_task(state, graph, tid, on_ready or (lambda s: None), pre=pre)


def _launch(graph, state, nworkers, work, traces, collect_trace):
    threads = [threading.Thread(target=work, args=(w,), name=f"worker-{w}")
               for w in range(nworkers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if state.abort is not None:
        raise state.abort
    if state.completed != len(graph.tasks) or any(state.pending):
        raise RuntimeError("execution finished with unfinished tasks")
    events = [e for tr in traces for e in tr]
    events.sort(key=lambda e: (e.start_ns, e.task_id))
    if collect_trace and len(events) != len(graph.tasks):
        raise RuntimeError("trace does not cover every task exactly once")
    return events


TRACE_FIELDS = ["task_id", "kind", "src", "dst", "worker", "start_ns", "end_ns"]


def trace_to_csv(events, path):
    """CSV trace, one row per event, sorted by start timestamp."""
    rows = sorted(events, key=lambda e: (e.start_ns, e.task_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for e in rows:
            writer.writerow([e.task_id, e.kind, e.p, e.q, e.worker,
                             e.start_ns, e.end_ns])


def read_trace_csv(path):
    """Inverse of trace_to_csv."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TraceEvent(int(row["task_id"]), row["kind"],
                                  int(row["src"]), int(row["dst"]),
                                  int(row["worker"]), int(row["start_ns"]),
                                  int(row["end_ns"])))
    return out
