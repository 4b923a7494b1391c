"""Discrete-event simulation of a task graph on modeled CPUs, GPUs and streams.

Times are exact rationals (fractions.Fraction), so work conservation holds
literally and all comparisons are deterministic. Only update tasks are
GPU-eligible; factor tasks stay on CPUs. Tasks are placed greedily by minimum
predicted completion time, ties to CPUs then lowest resource index.

GPU streams share their device: a task requests a fraction eff(m, k) =
min(1, m*k / saturation_area) of the GPU, and concurrent tasks slow down
proportionally when total demand exceeds 1. Panel transfers serialize on
per-GPU DMA channels (one per direction) at pci_latency + bytes / bandwidth.
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict, deque
from dataclasses import dataclass
from fractions import Fraction

from .errors import StructuralError
from .taskgraph import FACTOR, UPDATE, Task, TaskGraph, propagate_priorities

DEDICATED = "dedicated"
SHARED = "shared"
HOST = "host"

_RANK_COMPLETE = 0
_RANK_START = 1


@dataclass
class ResourceModel:
    cpu_count: int = 4
    cpu_speed: float = 10e9          # flop per time unit
    gpu_count: int = 0
    gpu_peak: float = 300e9
    streams_per_gpu: int = 1
    pci_bandwidth: float | None = 6e9  # bytes per time unit; None = free transfers
    pci_latency: float = 10e-6
    policy: str = DEDICATED
    saturation_area: float = 1e6     # m*k where a task saturates the GPU

    def validate(self):
        if self.cpu_count < 1:
            raise ValueError("cpu_count must be >= 1")
        if self.cpu_speed <= 0 or self.gpu_peak <= 0:
            raise ValueError("speeds must be positive")
        if self.gpu_count < 0 or self.streams_per_gpu < 1:
            raise ValueError("gpu_count must be >= 0 and streams_per_gpu >= 1")
        if self.pci_bandwidth is not None and self.pci_bandwidth <= 0:
            raise ValueError("pci_bandwidth must be positive or None")
        if self.pci_latency < 0:
            raise ValueError("pci_latency must be >= 0")
        if self.policy not in (DEDICATED, SHARED):
            raise ValueError(f"unknown policy '{self.policy}'")
        if self.saturation_area <= 0:
            raise ValueError("saturation_area must be positive")


@dataclass
class SimSchedule:
    timelines: dict              # resource key -> [(task id, start, end)]
    transfers: list              # (panel, src, dst, start, end)
    makespan: Fraction
    assigned: dict               # task id -> resource key
    segments: dict               # task id -> [(t0, t1, rate)]
    total_flops: int

    def gpu_task_count(self):
        return sum(len(v) for k, v in self.timelines.items() if k[0] == "gpu")

    def work_by_task(self):
        """Exact busy-time x rate per task (== cost when conservation holds)."""
        return {tid: sum((t1 - t0) * rate for t0, t1, rate in segs)
                for tid, segs in self.segments.items()}


def _panel_dims(graph, panels):
    if panels is None:
        dims = graph.panel_dims
    elif hasattr(panels, "panels"):
        dims = [(p.width, p.nrows) for p in panels.panels]
    else:
        dims = list(panels)
    npanels = 1 + max((t.q for t in graph.tasks), default=-1)
    if len(dims) < npanels:
        dims = list(dims) + [(1, 1)] * (npanels - len(dims))
    return dims


class _Sim:
    """Event loop in scaled time units: 1 unit = 1 flop at CPU speed, so CPU
    durations are plain integers and exact rationals only appear on GPU and
    transfer paths. Outputs are converted back to model time at the end."""

    def __init__(self, graph, dims, model):
        self.graph = graph
        self.dims = dims
        self.m = model
        self.ncpu = model.cpu_count
        if model.policy == DEDICATED and model.gpu_count > 0:
            self.ncpu = max(1, model.cpu_count - model.gpu_count)
        self.cpu_speed = Fraction(model.cpu_speed)
        self.cpu_rate = Fraction(1)      # flop per time unit
        peak = Fraction(model.gpu_peak) / self.cpu_speed
        sat = Fraction(model.saturation_area)
        self.peak = peak
        self.lat = Fraction(model.pci_latency) * self.cpu_speed
        self.bw = None if model.pci_bandwidth is None \
            else Fraction(model.pci_bandwidth) / self.cpu_speed
        self.cpu_dur = {}
        self.gpu_dur = {}
        self.eff = {}
        for t in graph.tasks:
            self.cpu_dur[t.id] = t.cost
            if t.kind == UPDATE:
                w, m_rows = dims[t.p]
                e = min(Fraction(1), Fraction(m_rows * w) / sat)
                self.eff[t.id] = e
                self.gpu_dur[t.id] = Fraction(t.cost) / (peak * e)
        self.bytes_of = [w * m_rows * 8 for (w, m_rows) in dims]

        zero = 0
        G, S = model.gpu_count, model.streams_per_gpu
        self.cpu_free = [zero] * self.ncpu
        # per-GPU DMA channels, one per direction (copies overlap like the
        # dual copy engines on real devices)
        self.chan_up = [zero] * G
        self.chan_down = [zero] * G
        self.stream_task = {(g, s): None for g in range(G) for s in range(S)}
        self.stream_last_free = {(g, s): zero for g in range(G) for s in range(S)}
        self.stream_pending = {(g, s): deque() for g in range(G) for s in range(S)}
        self.gpu_active = [dict() for _ in range(G)]   # tid -> remaining flops
        self.gpu_rate = [dict() for _ in range(G)]
        self.gpu_last = [zero] * G
        self.gpu_version = [0] * G
        self.valid = defaultdict(lambda: {HOST})
        self.avail = defaultdict(lambda: zero)

        self.pending = [t.ndeps for t in graph.tasks]
        self.timelines = defaultdict(list)
        self.transfers = []
        self.assigned = {}
        self.task_start = {}
        self.segments = defaultdict(list)
        self.seg_open = {}                      # tid -> (t0, rate)
        self.evq = []
        self.seq = itertools.count()

    # -- event queue ---------------------------------------------------------

    def _push(self, t, rank, key, payload):
        heapq.heappush(self.evq, (t, rank, key, next(self.seq), payload))

    # -- transfers and residency ---------------------------------------------

    def _xfer_time(self, panel):
        if self.bw is None:
            return self.lat
        return self.lat + Fraction(self.bytes_of[panel]) / self.bw

    def _host_path(self, panel, rt, up, down):
        """Hypothetical time panel is valid on host; up/down = channel clocks."""
        if HOST in self.valid[panel]:
            return max(self.avail[(panel, HOST)], rt), []
        g = min(loc for loc in self.valid[panel] if loc != HOST)
        st = max(down[g], self.avail[(panel, g)], rt)
        en = st + self._xfer_time(panel)
        down[g] = en
        return en, [(panel, g, HOST, st, en)]

    def _gpu_path(self, panel, g, rt, up, down):
        if g in self.valid[panel]:
            return max(self.avail[(panel, g)], rt), []
        t_host, acts = self._host_path(panel, rt, up, down)
        st = max(up[g], t_host)
        en = st + self._xfer_time(panel)
        up[g] = en
        return en, acts + [(panel, HOST, g, st, en)]

    def _commit_actions(self, actions):
        for (panel, src, dst, st, en) in actions:
            if dst == HOST:
                self.chan_down[src] = en
            else:
                self.chan_up[dst] = en
            self.valid[panel].add(dst)
            self.avail[(panel, dst)] = en
            self.transfers.append((panel, src, dst, st, en))

    def _needed_panels(self, task):
        if task.kind == UPDATE and task.q != task.p:
            return [task.p, task.q]
        return [task.p]

    # -- GPU processor sharing -----------------------------------------------

    def _settle(self, g, t):
        dt = t - self.gpu_last[g]
        if dt > 0:
            for tid, rate in self.gpu_rate[g].items():
                self.gpu_active[g][tid] -= rate * dt
        self.gpu_last[g] = t

    def _recompute_rates(self, g, t):
        active = self.gpu_active[g]
        self.gpu_version[g] += 1
        if not active:
            return
        demand = sum(self.eff[tid] for tid in active)
        scale = Fraction(1) if demand <= 1 else Fraction(1) / demand
        best_t, best_tid = None, None
        for tid in active:
            rate = self.peak * self.eff[tid] * scale
            t0, old = self.seg_open[tid]
            if old != rate:
                if t > t0:
                    self.segments[tid].append((t0, t, old))
                self.seg_open[tid] = (t, rate)
            self.gpu_rate[g][tid] = rate
            fin = t + active[tid] / rate
            if best_t is None or (fin, tid) < (best_t, best_tid):
                best_t, best_tid = fin, tid
        self._push(best_t, _RANK_COMPLETE, (1, g, 0), ("gpu", g, self.gpu_version[g]))

    def _activate_gpu(self, tid, g, s, t):
        self._settle(g, t)
        self.gpu_active[g][tid] = Fraction(self.graph.tasks[tid].cost)
        self.gpu_rate[g][tid] = self.peak * self.eff[tid]  # fixed by recompute
        self.stream_task[(g, s)] = tid
        self.task_start[tid] = t
        self.seg_open[tid] = (t, self.gpu_rate[g][tid])
        self._recompute_rates(g, t)

    def _reserve_stream(self, tid, g, s, t, data):
        """Reserve an idle stream for tid; activate now or at its data time."""
        self.stream_task[(g, s)] = tid
        start = max(self.stream_last_free[(g, s)], data)
        if start <= t:
            self._activate_gpu(tid, g, s, t)
        else:
            self._push(start, _RANK_START, (1, g, s), ("start", g, s, tid))

    # -- scheduling -----------------------------------------------------------

    def schedule(self, tid, rt):
        task = self.graph.tasks[tid]
        panels = self._needed_panels(task)

        up, down = list(self.chan_up), list(self.chan_down)
        data = rt
        cpu_actions = []
        for panel in panels:
            t_av, acts = self._host_path(panel, rt, up, down)
            data = max(data, t_av)
            cpu_actions += acts
        free_min = min(self.cpu_free)
        if free_min <= data:
            cid = next(i for i, f in enumerate(self.cpu_free) if f <= data)
            start = data
        else:
            cid = next(i for i, f in enumerate(self.cpu_free) if f == free_min)
            start = free_min
        fin = start + self.cpu_dur[tid]
        best = (fin, (0, cid, 0), ("cpu", cid, start, cpu_actions))

        # a GPU candidate competes only if its compute time plus the eventual
        # write-back of the destination panel could beat the CPU finish
        if (task.kind == UPDATE and self.m.gpu_count > 0
                and rt + self.gpu_dur[tid] + self._xfer_time(task.q) < fin):
            wb = self._xfer_time(task.q)
            for g in range(self.m.gpu_count):
                self._settle(g, rt)  # refresh remaining-work before estimating
                up, down = list(self.chan_up), list(self.chan_down)
                data_g = rt
                acts_g = []
                for panel in panels:
                    t_av, acts = self._gpu_path(panel, g, rt, up, down)
                    data_g = max(data_g, t_av)
                    acts_g += acts
                streams = range(self.m.streams_per_gpu)
                est = {s: self._stream_estimate(g, s, rt) for s in streams}
                est_min = min(est.values())
                if est_min <= data_g:
                    sid = next(s for s in streams if est[s] <= data_g)
                    start_g = data_g
                else:
                    sid = next(s for s in streams if est[s] == est_min)
                    start_g = est_min
                fin_g = start_g + self.gpu_dur[tid]
                cand = (fin_g + wb, (1, g, sid),
                        ("gpu", g, sid, data_g, acts_g))
                if (cand[0], cand[1]) < (best[0], best[1]):
                    best = cand

        _, _, plan = best
        if plan[0] == "cpu":
            _, cid, start, actions = plan
            self._commit_actions(actions)
            end = start + self.cpu_dur[tid]
            self.cpu_free[cid] = end
            key = ("cpu", cid)
            self.assigned[tid] = key
            self.task_start[tid] = start
            self.timelines[key].append((tid, start, end))
            self.segments[tid].append((start, end, self.cpu_rate))
            self._push(end, _RANK_COMPLETE, (0, cid, 0), ("cpu", cid, tid))
        else:
            _, g, s, data_g, actions = plan
            self._commit_actions(actions)
            self.assigned[tid] = ("gpu", g, s)
            if self.stream_task[(g, s)] is None:
                self._reserve_stream(tid, g, s, rt, data_g)
            else:
                self.stream_pending[(g, s)].append((tid, data_g))

    def _stream_estimate(self, g, s, now):
        tid = self.stream_task[(g, s)]
        est = self.stream_last_free[(g, s)]
        if tid is not None:
            if tid in self.gpu_active[g]:
                est = now + self.gpu_active[g][tid] / self.gpu_rate[g][tid]
            else:
                # reserved but not yet started (waiting for its data)
                est = max(est, now) + self.gpu_dur[tid]
        for (ptid, pdata) in self.stream_pending[(g, s)]:
            est = max(est, pdata) + self.gpu_dur[ptid]
        return est

    # -- completion handling ---------------------------------------------------

    def _complete(self, tid, t):
        released = []
        for s_id in self.graph.tasks[tid].successors:
            self.pending[s_id] -= 1
            if self.pending[s_id] == 0:
                released.append(s_id)
        task = self.graph.tasks[tid]
        loc = HOST if self.assigned[tid][0] == "cpu" else self.assigned[tid][1]
        wq = task.q if task.kind == UPDATE else task.p
        self.valid[wq] = {loc}
        self.avail[(wq, loc)] = t
        return released

    def _gpu_event(self, g, version, t):
        if version != self.gpu_version[g]:
            return []
        self._settle(g, t)
        done = sorted(tid for tid, rem in self.gpu_active[g].items() if rem <= 0)
        released = []
        for tid in done:
            if self.gpu_active[g][tid] < 0:
                raise StructuralError("negative remaining work in simulation")
            del self.gpu_active[g][tid]
            del self.gpu_rate[g][tid]
            t0, rate = self.seg_open.pop(tid)
            if t > t0:
                self.segments[tid].append((t0, t, rate))
            key = self.assigned[tid]
            self.timelines[key].append((tid, self.task_start[tid], t))
            self.stream_task[key[1:]] = None
            self.stream_last_free[key[1:]] = t
            released += self._complete(tid, t)
            pend = self.stream_pending[key[1:]]
            if pend:
                ntid, ndata = pend.popleft()
                self._reserve_stream(ntid, key[1], key[2], t, ndata)
        if done:
            self._recompute_rates(g, t)
        return released

    # -- main loop --------------------------------------------------------------

    def run(self):
        roots = sorted((t.id for t in self.graph.tasks if t.ndeps == 0),
                       key=lambda tid: (-self.graph.tasks[tid].priority, tid))
        for tid in roots:
            self.schedule(tid, 0)
        while self.evq:
            t = self.evq[0][0]
            released = []
            while self.evq and self.evq[0][0] == t:
                _, rank, key, _, payload = heapq.heappop(self.evq)
                if payload[0] == "cpu":
                    _, cid, tid = payload
                    released += self._complete(tid, t)
                elif payload[0] == "gpu":
                    _, g, version = payload
                    released += self._gpu_event(g, version, t)
                else:
                    _, g, s, tid = payload
                    if self.stream_task[(g, s)] != tid or tid in self.gpu_active[g]:
                        raise StructuralError("stream reservation mismatch")
                    self._activate_gpu(tid, g, s, t)
            for tid in sorted(set(released),
                              key=lambda i: (-self.graph.tasks[i].priority, i)):
                self.schedule(tid, t)
        if len(self.assigned) != len(self.graph.tasks):
            raise StructuralError("simulation did not place every task")
        # convert scaled units back to model time (exactly)
        inv = 1 / self.cpu_speed
        timelines = {k: [(tid, s * inv, e * inv) for (tid, s, e) in rows]
                     for k, rows in self.timelines.items()}
        transfers = [(p, src, dst, s * inv, e * inv)
                     for (p, src, dst, s, e) in self.transfers]
        segments = {tid: [(t0 * inv, t1 * inv, rate * self.cpu_speed)
                          for (t0, t1, rate) in segs]
                    for tid, segs in self.segments.items()}
        makespan = Fraction(0)
        for rows in timelines.values():
            for (_, _, end) in rows:
                makespan = max(makespan, end)
        total = sum(t.cost for t in self.graph.tasks)
        return SimSchedule(timelines, transfers, makespan, self.assigned,
                           segments, total)


def simulate(graph, panels=None, model=None):
    """Simulate the graph on the modeled resources; returns a SimSchedule."""
    model = model if model is not None else ResourceModel()
    model.validate()
    dims = _panel_dims(graph, panels)
    return _Sim(graph, dims, model).run()


def compare_policies(graph, panels=None, base=None, streams=(1, 2, 3)):
    """Sweep both policies, GPU counts 0..base.gpu_count and the stream counts.

    Returns rows of (policy, gpus, streams, makespan, gflops_equivalent).
    """
    base = base if base is not None else ResourceModel()
    total = sum(t.cost for t in graph.tasks)
    rows = []
    for policy in (DEDICATED, SHARED):
        for gpus in range(base.gpu_count + 1):
            for st in streams:
                m = ResourceModel(cpu_count=base.cpu_count, cpu_speed=base.cpu_speed,
                                  gpu_count=gpus, gpu_peak=base.gpu_peak,
                                  streams_per_gpu=st, pci_bandwidth=base.pci_bandwidth,
                                  pci_latency=base.pci_latency, policy=policy,
                                  saturation_area=base.saturation_area)
                sched = simulate(graph, panels, m)
                mk = float(sched.makespan)
                gflops = (total / mk / 1e9) if mk > 0 else 0.0
                rows.append({"policy": policy, "gpus": gpus, "streams": st,
                             "makespan": mk, "gflops": gflops})
    return rows


# ---------------------------------------------------------------------------
# DAG text format loader (inverse of taskgraph.export_dag)

def load_dag(path):
    """Parse the exported DAG text format and validate acyclicity."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty DAG file")
    pos = 0

    def expect_section(name):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise ValueError(f"{path}: expected '{name} <count>' at line {pos + 1}")
        pos += 1
        try:
            return int(parts[1])
        except ValueError:
            raise ValueError(f"{path}: bad count in '{name}' section") from None

    ntasks = expect_section("tasks")
    tasks = []
    for k in range(ntasks):
        parts = lines[pos].split()
        pos += 1
        if len(parts) != 5:
            raise ValueError(f"{path}: bad task line {pos}")
        tid, kind, p, q, cost = (int(parts[0]), parts[1], int(parts[2]),
                                 int(parts[3]), int(parts[4]))
        if tid != k or kind not in (FACTOR, UPDATE):
            raise ValueError(f"{path}: bad task id or kind at line {pos}")
        tasks.append(Task(tid, kind, p, q, cost=cost))
    nedges = expect_section("edges")
    for _ in range(nedges):
        parts = lines[pos].split()
        pos += 1
        if len(parts) != 2:
            raise ValueError(f"{path}: bad edge line {pos}")
        src, dst = int(parts[0]), int(parts[1])
        if not (0 <= src < ntasks and 0 <= dst < ntasks):
            raise ValueError(f"{path}: edge endpoint out of range at line {pos}")
        tasks[src].successors.append(dst)
        tasks[dst].ndeps += 1
    dims = []
    if pos < len(lines):
        npanels = expect_section("panels")
        for _ in range(npanels):
            parts = lines[pos].split()
            pos += 1
            if len(parts) != 3:
                raise ValueError(f"{path}: bad panel line {pos}")
            dims.append((int(parts[1]), int(parts[2])))
    factor_of = {t.p: t.id for t in tasks if t.kind == FACTOR}
    update_of = {(t.p, t.q): t.id for t in tasks if t.kind == UPDATE}
    graph = TaskGraph(tasks, factor_of, update_of, dims)
    graph.check_acyclic()
    propagate_priorities(graph)
    return graph
