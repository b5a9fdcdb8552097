"""In-process simulation of the matrix-based and graph-based execution models.

Workers are independent contexts that only talk through per-worker message
queues. Worker 0 also hosts the central role (``D``, and in the graph model
the masters of every ``P`` vertex and of ``R``).

Reduction order
    ``p = V x`` is reduced as a chain in ascending worker id: worker ``w``
    receives the running sums from its predecessor, adds its own columns in
    column order and forwards them. Since chunks are contiguous and ascending,
    this performs exactly the additions of the single-pass kernel, so results
    are bitwise identical to serial execution for every worker count.

Communication accounting
    Payload reals only. Matrix model: every worker sends one length-``l``
    vector toward the central reducer and receives one broadcast, ``2 l n_c``
    per application regardless of where the central role lives. Graph model:
    values move only between copies of a ``P`` vertex on different workers.
"""

from __future__ import annotations

import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cssd import Factorization
from .linalg import (
    CostMeter,
    SparseColMatrix,
    dense_matvec,
    dense_matvec_accumulate,
    sparse_matvec,
    sparse_matvec_accumulate,
)
from .solvers import COLLAPSED, GramOperator, SolverConfig, fista_solve, power_method

__all__ = [
    "CENTRAL",
    "CostReport",
    "GraphPlan",
    "Message",
    "PartitionPlan",
    "PlanMismatchError",
    "compare_models",
    "fista_workload",
    "plan_graph_partition",
    "plan_matrix_partition",
    "power_workload",
    "run_distributed",
]

CENTRAL = 0
_TIMEOUT = 60.0


class PlanMismatchError(ValueError):
    pass


def _balanced_ranges(n: int, n_c: int) -> tuple[tuple[int, int], ...]:
    base, extra = divmod(n, n_c)
    out, lo = [], 0
    for w in range(n_c):
        hi = lo + base + (1 if w < extra else 0)
        out.append((lo, hi))
        lo = hi
    return tuple(out)


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    n_c: int
    chunks: tuple[tuple[int, int], ...]
    central: int = CENTRAL


def plan_matrix_partition(n: int, n_c: int) -> PartitionPlan:
    """Contiguous balanced column ranges; the first ``n % n_c`` workers get one extra."""
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    if n_c > n:
        raise ValueError(f"more workers ({n_c}) than columns ({n})")
    return PartitionPlan(n, n_c, _balanced_ranges(n, n_c))


@dataclass(frozen=True)
class GraphPlan:
    """Three-layer vertex-cut placement.

    ``X_j`` masters follow the column chunks, each ``V`` entry (an ``X-P``
    edge) lives with its ``X`` master, and the masters of all ``P_i`` and of
    ``R`` sit on the central worker. ``holders[i]`` lists, ascending, the
    workers owning at least one edge of ``P_i``; ``rep(P_i)`` is its length,
    or 1 for an edgeless ``P_i`` whose only copy is the master.
    """

    n: int
    l: int  # noqa: E741
    n_c: int
    masters_x: tuple[tuple[int, int], ...]
    holders: tuple[tuple[int, ...], ...]
    edges_per_worker: tuple[int, ...]
    central: int = CENTRAL

    @property
    def rep_counts(self) -> np.ndarray:
        return np.array([max(1, len(h)) for h in self.holders], dtype=np.int64)

    @property
    def total_replicas(self) -> int:
        return int(self.rep_counts.sum())

    def replicas_on(self, w: int) -> np.ndarray:
        return np.array([i for i, h in enumerate(self.holders) if w in h], dtype=np.int64)

    def routes(self) -> dict:
        """``(src, dst) -> P rows`` forwarded along the reduction chains.

        A chain visits the holders of ``P_i`` in ascending order and ends at
        the master on the central worker; hops between the same worker carry
        no message and are omitted.
        """
        out: dict = {}
        for i, h in enumerate(self.holders):
            path = list(h) + [self.central]
            for a, b in zip(path[:-1], path[1:]):
                if a != b:
                    out.setdefault((a, b), []).append(i)
        return {k: np.array(v, dtype=np.int64) for k, v in out.items()}

    def comm_per_iteration(self) -> int:
        """Reals crossing workers in one Gram application (reduce hops + broadcast)."""
        reduce_hops = sum(len(v) for v in self.routes().values())
        broadcast = sum(sum(1 for w in h if w != self.central) for h in self.holders)
        return reduce_hops + broadcast


def plan_graph_partition(V: SparseColMatrix, n_c: int) -> GraphPlan:
    l, n = V.shape
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    if n_c > n:
        raise ValueError(f"more workers ({n_c}) than columns ({n})")
    chunks = _balanced_ranges(n, n_c)
    holders: list[set] = [set() for _ in range(l)]
    edges = []
    for w, (lo, hi) in enumerate(chunks):
        a, b = V.col_ptr[lo], V.col_ptr[hi]
        edges.append(int(b - a))
        for i in np.unique(V.row_idx[a:b]):
            holders[int(i)].add(w)
    return GraphPlan(
        n=n,
        l=l,
        n_c=n_c,
        masters_x=chunks,
        holders=tuple(tuple(sorted(h)) for h in holders),
        edges_per_worker=tuple(edges),
    )


@dataclass(frozen=True)
class Message:
    source: int
    dest: int
    payload: np.ndarray
    tag: str  # "reduce" | "broadcast"


@dataclass
class CostReport:
    model: str
    n_c: int
    m: int
    n: int
    l: int
    nnz_V: int
    multiplications: int = 0
    additions: int = 0
    communicated_values: int = 0
    applications: int = 0
    memory_entries: list = field(default_factory=list)
    memory_convention: str = ""
    flow: str = "four_step"
    wall_time_s: float = 0.0

    @property
    def comm_per_application(self) -> float:
        return self.communicated_values / self.applications if self.applications else 0.0

    @property
    def memory_total(self) -> int:
        return int(sum(self.memory_entries))

    def counters(self) -> dict:
        return {
            "multiplications": self.multiplications,
            "additions": self.additions,
            "communicated_values": self.communicated_values,
            "applications": self.applications,
            "memory_entries": list(self.memory_entries),
            "memory_total": self.memory_total,
        }

    def to_json(self, include_wall_time: bool = True) -> dict:
        out = {
            "model": self.model,
            "n_c": self.n_c,
            "l": self.l,
            "nnz_V": self.nnz_V,
            "counters": self.counters(),
            "flow": self.flow,
            "memory_convention": self.memory_convention,
        }
        if include_wall_time:
            out["wall_time_s"] = self.wall_time_s
        return out


# --------------------------------------------------------------------------
# Workers
# --------------------------------------------------------------------------


class _Network:
    def __init__(self, n_c: int, count_self: bool):
        self.inbox = [queue.Queue() for _ in range(n_c)]
        self.central_inbox: queue.Queue = queue.Queue()
        self.count_self = count_self

    def send(self, msg: Message, meter: CostMeter, to_central: bool = False) -> None:
        if msg.source != msg.dest or self.count_self:
            meter.communicated_values += int(msg.payload.size)
        (self.central_inbox if to_central else self.inbox[msg.dest]).put(msg)

    def recv(self, w: int) -> Message:
        return self.inbox[w].get(timeout=_TIMEOUT)

    def recv_central(self) -> Message:
        return self.central_inbox.get(timeout=_TIMEOUT)


class _MatrixCluster:
    """Column chunks of ``V`` (or of ``A`` for the dense baseline) plus a central reducer."""

    def __init__(self, plan: PartitionPlan, gram: GramOperator):
        if plan.n != gram.n:
            raise PlanMismatchError(f"plan covers {plan.n} columns, operator has {gram.n}")
        self.plan, self.gram = plan, gram
        self.n_c = plan.n_c
        self.meters = [CostMeter() for _ in range(self.n_c)]
        self.central_meter = CostMeter()
        if gram.is_factored:
            F = gram.factorization
            self.blocks = [F.V.column_block(lo, hi) for lo, hi in plan.chunks]
            self.width = F.l
        else:
            self.blocks = [np.asfortranarray(gram.A[:, lo:hi]) for lo, hi in plan.chunks]
            self.width = gram.m
        self.model = "matrix" if gram.is_factored else "full"

    def _local_forward(self, w, xw, acc):
        blk = self.blocks[w]
        if self.gram.is_factored:
            sparse_matvec_accumulate(blk, xw, acc, self.meters[w])
        else:
            dense_matvec_accumulate(blk, xw, acc, self.meters[w])

    def _local_back(self, w, q):
        blk = self.blocks[w]
        if self.gram.is_factored:
            return sparse_matvec(blk, q, transpose=True, meter=self.meters[w])
        return dense_matvec(blk, q, transpose=True, meter=self.meters[w])

    def reduce_phase(self, net, w, x):
        lo, hi = self.plan.chunks[w]
        acc = np.zeros(self.width) if w == 0 else net.recv(w).payload
        self._local_forward(w, x[lo:hi], acc)
        if w + 1 < self.n_c:
            net.send(Message(w, w + 1, acc, "reduce"), self.meters[w])
        else:
            net.send(Message(w, self.plan.central, acc, "reduce"), self.meters[w], to_central=True)

    def central_phase(self, net):
        p = net.recv_central().payload
        meter = self.central_meter
        if not self.gram.is_factored:
            q = p
        elif self.gram.flow == COLLAPSED:
            q = dense_matvec(self.gram.DtD, p, meter=meter)
        else:
            D = self.gram.factorization.D
            q = dense_matvec(D, dense_matvec(D, p, meter=meter), transpose=True, meter=meter)
        for w in range(self.n_c):
            net.send(Message(self.plan.central, w, q, "broadcast"), meter)

    def back_phase(self, net, w):
        q = net.recv(w).payload
        return self._local_back(w, q)

    def memory(self) -> tuple[list[int], str]:
        mem = []
        for w, (lo, hi) in enumerate(self.plan.chunks):
            blk = self.blocks[w]
            local = (2 * blk.nnz if self.gram.is_factored else blk.size) + (hi - lo)
            mem.append(local)
        if self.gram.is_factored:
            F = self.gram.factorization
            mem[self.plan.central] += F.l * F.m + F.m
            conv = "values + row indices of V, dense D, x and r; column pointers excluded"
        else:
            mem[self.plan.central] += self.gram.m
            conv = "dense A chunks, x and r"
        return mem, conv


class _GraphCluster:
    """Edges of ``V`` on their ``X`` master's worker; ``P`` and ``R`` masters central."""

    def __init__(self, plan: GraphPlan, gram: GramOperator):
        if not gram.is_factored:
            raise PlanMismatchError("graph model needs a factored operator")
        F = gram.factorization
        if (plan.l, plan.n) != F.V.shape:
            raise PlanMismatchError(f"plan is for a {plan.l}x{plan.n} V, operator has {F.V.shape}")
        self.plan, self.gram = plan, gram
        self.n_c = plan.n_c
        self.meters = [CostMeter() for _ in range(self.n_c)]
        self.central_meter = self.meters[plan.central]
        self.blocks = [F.V.column_block(lo, hi) for lo, hi in plan.masters_x]
        self.routes = plan.routes()
        self.incoming = {w: sorted(src for (src, dst) in self.routes if dst == w) for w in range(self.n_c)}
        self.replicas = [plan.replicas_on(w) for w in range(self.n_c)]
        self.model = "graph"

    def reduce_phase(self, net, w, x):
        acc = np.zeros(self.plan.l)
        expected = [s for s in self.incoming[w]] if w != self.plan.central else []
        got = {}
        for _ in expected:
            msg = net.recv(w)
            got[msg.source] = msg.payload
        for src in expected:
            acc[self.routes[(src, w)]] = got[src]
        lo, hi = self.plan.masters_x[w]
        sparse_matvec_accumulate(self.blocks[w], x[lo:hi], acc, self.meters[w])
        for (src, dst), rows in self.routes.items():
            if src == w:
                net.send(Message(w, dst, acc[rows], "reduce"), self.meters[w], to_central=dst == self.plan.central)
        return acc

    def central_phase(self, net, local_acc):
        c = self.plan.central
        p = np.zeros(self.plan.l)
        own = self.replicas[c]
        # rows whose chain ends on the central worker itself
        for i in own:
            if self.plan.holders[i][-1] == c:
                p[i] = local_acc[i]
        senders = sorted(src for (src, dst) in self.routes if dst == c)
        got = {}
        for _ in senders:
            msg = net.recv_central()
            got[msg.source] = msg.payload
        for src in senders:
            p[self.routes[(src, c)]] = got[src]
        meter = self.central_meter
        if self.gram.flow == COLLAPSED:
            q = dense_matvec(self.gram.DtD, p, meter=meter)
        else:
            D = self.gram.factorization.D
            q = dense_matvec(D, dense_matvec(D, p, meter=meter), transpose=True, meter=meter)
        for w in range(self.n_c):
            if w != c and self.replicas[w].size:
                net.send(Message(c, w, q[self.replicas[w]], "broadcast"), meter)
        return q

    def back_phase(self, net, w, q_central=None):
        if w == self.plan.central:
            q = q_central
        else:
            q = np.zeros(self.plan.l)
            if self.replicas[w].size:
                q[self.replicas[w]] = net.recv(w).payload
        return sparse_matvec(self.blocks[w], q, transpose=True, meter=self.meters[w])

    def memory(self) -> tuple[list[int], str]:
        F = self.gram.factorization
        mem = []
        for w, (lo, hi) in enumerate(self.plan.masters_x):
            edges = self.blocks[w].nnz
            copies = self.replicas[w].size if w != self.plan.central else 0
            mem.append(3 * edges + (hi - lo) + copies)
        c = self.plan.central
        mem[c] += F.l + F.l * (F.m + 2) + 1 + F.m
        conv = (
            "X-P edges as value + two endpoint ids; P-R edges carry a D column + two ids; "
            "one value per vertex copy (P masters on central); R holds r"
        )
        return mem, conv


class _DistributedGram:
    """Gram operator whose applications run on the simulated cluster."""

    def __init__(self, cluster, mode: str, executor=None):
        self.cluster = cluster
        self.mode = mode
        self.executor = executor
        self.applications = 0
        self.n = cluster.plan.n

    def _totals(self) -> CostMeter:
        tot = CostMeter()
        for m in self.cluster.meters:
            tot.absorb(m)
        if self.cluster.central_meter not in self.cluster.meters:
            tot.absorb(self.cluster.central_meter)
        return tot

    def apply(self, x, meter: CostMeter | None = None) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise PlanMismatchError(f"operator acts on length {self.n}, got {x.shape}")
        before = self._totals()
        cl = self.cluster
        net = _Network(cl.n_c, count_self=isinstance(cl, _MatrixCluster))
        if isinstance(cl, _MatrixCluster):
            parts = self._run_matrix(cl, net, x)
        else:
            parts = self._run_graph(cl, net, x)
        z = np.concatenate(parts)
        self.applications += 1
        if meter is not None:
            after = self._totals()
            meter.multiplications += after.multiplications - before.multiplications
            meter.additions += after.additions - before.additions
            meter.communicated_values += after.communicated_values - before.communicated_values
        return z

    def _run_matrix(self, cl, net, x):
        c = cl.plan.central
        if self.mode == "sequential":
            for w in range(cl.n_c):
                cl.reduce_phase(net, w, x)
            cl.central_phase(net)
            return [cl.back_phase(net, w) for w in range(cl.n_c)]

        def task(w):
            cl.reduce_phase(net, w, x)
            if w == c:
                cl.central_phase(net)
            return cl.back_phase(net, w)

        futures = [self.executor.submit(task, w) for w in range(cl.n_c)]
        return [f.result() for f in futures]

    def _run_graph(self, cl, net, x):
        c = cl.plan.central
        if self.mode == "sequential":
            accs = {}
            for w in range(cl.n_c):
                accs[w] = cl.reduce_phase(net, w, x)
            q = cl.central_phase(net, accs[c])
            return [cl.back_phase(net, w, q if w == c else None) for w in range(cl.n_c)]

        def task(w):
            acc = cl.reduce_phase(net, w, x)
            q = cl.central_phase(net, acc) if w == c else None
            return cl.back_phase(net, w, q)

        futures = [self.executor.submit(task, w) for w in range(cl.n_c)]
        return [f.result() for f in futures]


def run_distributed(
    plan: PartitionPlan | GraphPlan,
    gram: GramOperator,
    solve: Callable,
    mode: str = "sequential",
):
    """Run ``solve(op)`` where ``op`` executes every Gram application on simulated workers.

    ``mode="threads"`` gives each worker a real thread; ``"sequential"`` steps
    them in worker order. Both produce identical results and counters. The
    report tallies only the work and traffic of Gram applications; scalar
    reductions inside the solver (norms, step sizes) are not modelled.
    """
    if mode not in ("sequential", "threads"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(plan, GraphPlan):
        cluster = _GraphCluster(plan, gram)
    elif isinstance(plan, PartitionPlan):
        cluster = _MatrixCluster(plan, gram)
    else:
        raise TypeError(f"not a plan: {plan!r}")

    t0 = time.perf_counter()
    if mode == "threads":
        with ThreadPoolExecutor(max_workers=cluster.n_c) as ex:
            op = _DistributedGram(cluster, mode, ex)
            result = solve(op)
    else:
        op = _DistributedGram(cluster, mode)
        result = solve(op)
    wall = time.perf_counter() - t0

    tot = op._totals()
    mem, conv = cluster.memory()
    if gram.is_factored:
        F = gram.factorization
        l, nnz = F.l, F.nnz
    else:
        l, nnz = 0, 0
    report = CostReport(
        model=cluster.model,
        n_c=cluster.n_c,
        m=gram.m,
        n=gram.n,
        l=l,
        nnz_V=nnz,
        multiplications=tot.multiplications,
        additions=tot.additions,
        communicated_values=tot.communicated_values,
        applications=op.applications,
        memory_entries=mem,
        memory_convention=conv,
        flow=gram.flow if gram.is_factored else "dense",
        wall_time_s=wall,
    )
    return result, report


# --------------------------------------------------------------------------
# Model comparison
# --------------------------------------------------------------------------


def fista_workload(aty, cfg: SolverConfig) -> Callable:
    def run(op):
        x, _ = fista_solve(op, aty, cfg)
        return x

    run.name = "fista"
    return run


def power_workload(num_eigs: int, cfg: SolverConfig) -> Callable:
    def run(op):
        vals, _ = power_method(op, num_eigs, cfg)
        return vals

    run.name = "power"
    return run


def compare_models(
    F: Factorization,
    n_c_list,
    workload: Callable,
    A=None,
    models=("matrix", "graph", "full"),
    mode: str = "sequential",
) -> list[dict]:
    """One row per (model, n_c) with counters, memory and wall time.

    The dense baseline runs on ``A`` (rebuilt as ``D V`` when omitted).
    """
    fac = GramOperator.factored(F)
    full = None
    if "full" in models:
        full = GramOperator.full(F.reconstruct() if A is None else A)
    rows = []
    for n_c in n_c_list:
        for model in models:
            if model == "matrix":
                plan, gram = plan_matrix_partition(F.n, n_c), fac
            elif model == "graph":
                plan, gram = plan_graph_partition(F.V, n_c), fac
            elif model == "full":
                plan, gram = plan_matrix_partition(F.n, n_c), full
            else:
                raise ValueError(f"unknown model {model!r}")
            _, rep = run_distributed(plan, gram, workload, mode=mode)
            rows.append(
                {
                    "model": model,
                    "n_c": n_c,
                    "m": F.m,
                    "n": F.n,
                    "l": F.l,
                    "nnz_V": F.nnz,
                    "density": F.density,
                    "applications": rep.applications,
                    "multiplications": rep.multiplications,
                    "additions": rep.additions,
                    "communicated_values": rep.communicated_values,
                    "comm_per_application": rep.comm_per_application,
                    "memory_total": rep.memory_total,
                    "memory_max_worker": max(rep.memory_entries),
                    "wall_time_s": rep.wall_time_s,
                }
            )
    return rows
