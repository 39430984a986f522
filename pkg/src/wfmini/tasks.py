"""Emulated tasks: programs of catalog kernels executed SPMD across ranks.

A task runs `num_ranks` concurrent lanes joined by in-process message
channels; every lane executes the identical program. RNG state is salted by
rank id, so rank-dependent kernels decorrelate while staying reproducible.
"""
from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParameter,
    KernelFailure,
    SchemaError,
    UnknownKernel,
    UnknownParameter,
)
from .kernels import (
    DEFAULT_COPY_BANDWIDTH,
    Communicator,
    KernelCall,
    KernelContext,
    Scratch,
    _CATALOG,
    execute_kernel,
)
from .trace import MetricsSink, TaskRecord


@dataclass
class ProgramStep:
    kind: str  # "kernel" | "loop"
    kernel: KernelCall | None = None
    count: int = 1
    body: list = field(default_factory=list)

    def to_dict(self):
        if self.kind == "kernel":
            return {"kernel": self.kernel.kernel_name, "params": dict(self.kernel.params)}
        return {"loop": True, "count": self.count,
                "body": [s.to_dict() for s in self.body]}


@dataclass
class TaskSpec:
    name: str
    category: str
    num_ranks: int
    cpus_per_rank: int = 1
    gpus_per_rank: int = 0
    program: list = field(default_factory=list)
    phase: int | None = None

    def to_dict(self):
        d = {"name": self.name, "category": self.category,
             "num_ranks": self.num_ranks, "cpus_per_rank": self.cpus_per_rank,
             "gpus_per_rank": self.gpus_per_rank,
             "program": [s.to_dict() for s in self.program]}
        if self.phase is not None:
            d["phase"] = self.phase
        return d


def _parse_step(doc, where):
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: program step must be an object")
    if "loop" in doc or "body" in doc:
        count = doc.get("count")
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise SchemaError(f"{where}: loop count must be an integer >= 1")
        body = doc.get("body")
        if not isinstance(body, list) or not body:
            raise SchemaError(f"{where}: loop body must be a non-empty list")
        steps = [_parse_step(b, f"{where}.body.{i}") for i, b in enumerate(body)]
        return ProgramStep(kind="loop", count=count, body=steps)
    name = doc.get("kernel")
    if not isinstance(name, str):
        raise SchemaError(f"{where}: step needs a 'kernel' name or 'loop'")
    if name not in _CATALOG:
        raise UnknownKernel(f"{where}: {name}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(f"{where}: params must be an object")
    return ProgramStep(kind="kernel", kernel=KernelCall(name, dict(params)))


def parse_task_spec(document) -> TaskSpec:
    """Validate a task document; unknown kernels are rejected here, not at
    run time."""
    if not isinstance(document, dict):
        raise SchemaError("task document must be an object")
    name = document.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("task needs a non-empty 'name'")
    program_doc = document.get("program")
    if not isinstance(program_doc, list) or not program_doc:
        raise SchemaError(f"task {name}: program must be a non-empty list")
    num_ranks = document.get("num_ranks", 1)
    cpus = document.get("cpus_per_rank", 1)
    gpus = document.get("gpus_per_rank", 0)
    for label, value, minimum in (("num_ranks", num_ranks, 1),
                                  ("cpus_per_rank", cpus, 1),
                                  ("gpus_per_rank", gpus, 0)):
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise SchemaError(f"task {name}: {label} must be an integer >= {minimum}")
    program = [_parse_step(s, f"{name}.program.{i}") for i, s in enumerate(program_doc)]
    spec = TaskSpec(name=name, category=document.get("category", "task"),
                    num_ranks=num_ranks, cpus_per_rank=cpus, gpus_per_rank=gpus,
                    program=program, phase=document.get("phase"))
    if gpus < 1 and _uses_accelerator(program):
        raise SchemaError(f"task {name}: accelerator kernels need gpus_per_rank >= 1")
    return spec


def _uses_accelerator(program):
    for step in program:
        if step.kind == "loop":
            if _uses_accelerator(step.body):
                return True
        else:
            dev = step.kernel.params.get("device")
            kind = dev.get("kind") if isinstance(dev, dict) else dev
            if kind == "accelerator" or getattr(dev, "kind", None) == "accelerator":
                return True
    return False


def task_seed(global_seed: int, name: str) -> int:
    return (int(global_seed) ^ zlib.crc32(name.encode())) & 0xFFFFFFFF


def rank_seed(global_seed: int, name: str, rank_id: int) -> int:
    return task_seed(global_seed, name) ^ rank_id


# --------------------------------------------------------------------------
# execution

def _run_program(program, ctx, totals):
    for step in program:
        if step.kind == "loop":
            for _ in range(step.count):
                _run_program(step.body, ctx, totals)
        else:
            res = execute_kernel(step.kernel, ctx=ctx)
            totals["bytes_read"] += res.bytes_read
            totals["bytes_written"] += res.bytes_written
            totals["wall_time"] += res.wall_time


def run_task(spec: TaskSpec, assignment=None, sink: MetricsSink | None = None,
             seed: int = 0, clock=None, scratch: Scratch | None = None,
             copy_bandwidth: float = DEFAULT_COPY_BANDWIDTH,
             collective_timeout: float = 30.0) -> TaskRecord:
    """Execute one task: all ranks run the identical program concurrently.

    Raises KernelFailure if any rank fails; the failed record is still
    appended to the sink. `assignment` is the slot-id list the engine granted
    (informational here; exclusivity is the engine's job).
    """
    if sink is None:
        sink = MetricsSink()
    if scratch is None:
        scratch = Scratch()
    if clock is None:
        t0 = time.perf_counter()
        clock = lambda: time.perf_counter() - t0
    comm = Communicator(spec.num_ranks, timeout=collective_timeout)
    totals = [{"bytes_read": 0, "bytes_written": 0, "wall_time": 0.0}
              for _ in range(spec.num_ranks)]
    errors = []

    def lane(rank_id):
        ctx = KernelContext(
            rank_id=rank_id, comm=comm, scratch=scratch,
            rng=np.random.default_rng(rank_seed(seed, spec.name, rank_id)),
            sink=sink, task_name=spec.name, clock=clock,
            copy_bandwidth=copy_bandwidth)
        try:
            _run_program(spec.program, ctx, totals[rank_id])
        except Exception as e:  # first failure aborts all ranks
            errors.append((rank_id, e))
            comm._barrier.abort()

    start = clock()
    sink.append({"kind": "task_start", "task": spec.name, "t": start})
    threads = [threading.Thread(target=lane, args=(r,), name=f"{spec.name}-r{r}")
               for r in range(spec.num_ranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    end = clock()
    status = "ok" if not errors else "failed"
    sink.append({"kind": "task_end", "task": spec.name, "t": end, "status": status})
    record = TaskRecord(
        task_name=spec.name, start=start, end=end, ranks=spec.num_ranks,
        slots_used=list(assignment or []),
        bytes_read=sum(t["bytes_read"] for t in totals),
        bytes_written=sum(t["bytes_written"] for t in totals),
        status=status, category=spec.category)
    sink.add_record(record)
    if errors:
        rank_id, err = errors[0]
        raise KernelFailure(f"task {spec.name} rank {rank_id}: {err}") from err
    return record


# --------------------------------------------------------------------------
# parameter addressing and scaling

def _walk(doc, segments, path):
    """Resolve a dotted path against nested dicts/lists; returns (parent, key)."""
    node = doc
    for i, seg in enumerate(segments[:-1]):
        node = _index(node, seg, path)
    return node, _key(node, segments[-1], path)


def _key(node, seg, path):
    if isinstance(node, list):
        try:
            idx = int(seg)
        except ValueError:
            raise UnknownParameter(f"{path}: {seg!r} is not a list index")
        if not 0 <= idx < len(node):
            raise UnknownParameter(f"{path}: index {idx} out of range")
        return idx
    if not isinstance(node, dict) or seg not in node:
        raise UnknownParameter(f"{path}: no element {seg!r}")
    return seg

def _index(node, seg, path):
    return node[_key(node, seg, path)]


def get_param(spec: TaskSpec, path: str):
    doc = spec.to_dict()
    parent, key = _walk(doc, path.split("."), path)
    return parent[key]


def scale_values(doc: dict, factors: dict, path_prefix=""):
    """Multiply addressed numeric values in a task/workflow document in
    place; integer values round to >= 1."""
    for path, factor in factors.items():
        if factor <= 0:
            raise InvalidParameter(f"factor for {path} must be > 0")
        parent, key = _walk(doc, path.split("."), path_prefix + path)
        value = parent[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UnknownParameter(f"{path}: value {value!r} is not numeric")
        if isinstance(value, int):
            parent[key] = max(1, int(value * factor + 0.5))
        else:
            parent[key] = value * factor


def scale_task(spec: TaskSpec, factors: dict) -> TaskSpec:
    """New spec with addressed counts/sizes multiplied; original unchanged.

    Paths address the task document, e.g. "program.0.count" or
    "program.1.body.0.params.dim".
    """
    doc = spec.to_dict()
    scale_values(doc, factors, path_prefix=f"{spec.name}:")
    return parse_task_spec(doc)
