"""The tunable kernel catalog: compute, file I/O, collectives, and
host<->device data movement, each parameterized and byte-exact in its
accounting.

Kernels execute on the invoking rank only; the catalog is immutable after
registration. Accelerator execution is emulated on host compute: results are
identical, wall time is scaled by the device slowdown factor.
"""
from __future__ import annotations

import os
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .errors import (
    CollectiveMismatch,
    CommunicatorRequired,
    DuplicateKernel,
    InvalidParameter,
    MissingParameter,
    ScratchUnavailable,
    ShortRead,
    ShortWrite,
    SizeMismatch,
    UnknownKernel,
)
from .trace import MetricsSink

IO_BLOCK = 4 * 2 ** 20  # I/O happens in 4 MiB blocks
ELEMENT_WIDTH = 8       # communicated elements are double width

SCRATCH_ENV = "WFMINI_SCRATCH"
SEED_ENV = "WFMINI_SEED"
DEFAULT_COPY_BANDWIDTH = 4 * 2 ** 30  # bytes/s for emulated host<->device copies


@dataclass(frozen=True)
class Device:
    kind: str = "host"
    slowdown_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("host", "accelerator"):
            raise InvalidParameter(f"unknown device kind {self.kind!r}")
        if self.slowdown_factor <= 0:
            raise InvalidParameter("slowdown_factor must be > 0")
        if self.kind == "host" and self.slowdown_factor != 1.0:
            raise InvalidParameter("host device must have slowdown_factor 1.0")

    @classmethod
    def parse(cls, value):
        if isinstance(value, Device):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        if isinstance(value, dict):
            return cls(kind=value.get("kind", "host"),
                       slowdown_factor=value.get("slowdown_factor", 1.0))
        raise InvalidParameter(f"cannot interpret device {value!r}")


HOST = Device("host")


@dataclass
class KernelResult:
    wall_time: float = 0.0
    bytes_read: int = 0
    bytes_written: int = 0
    bytes_communicated: int = 0
    checksum: float = 0.0


@dataclass(frozen=True)
class KernelCall:
    kernel_name: str
    params: dict = field(default_factory=dict)


class Communicator:
    """In-process message links between the ranks of one task.

    Collectives require all ranks to participate; a rank that never shows up
    breaks the barrier for everyone after `timeout` seconds.
    """

    def __init__(self, size, timeout=30.0):
        if size < 1:
            raise InvalidParameter("communicator size must be >= 1")
        self.size = size
        self.timeout = timeout
        self._barrier = threading.Barrier(size)
        self._slots = [None] * size

    def barrier(self, timeout=None):
        try:
            self._barrier.wait(timeout if timeout is not None else self.timeout)
        except threading.BrokenBarrierError:
            raise CollectiveMismatch(
                f"collective abandoned: not all {self.size} ranks participated")

    def _exchange(self, rank_id, value, timeout=None):
        if not 0 <= rank_id < self.size:
            raise InvalidParameter(f"rank {rank_id} out of range for size {self.size}")
        self._slots[rank_id] = value
        self.barrier(timeout)
        values = list(self._slots)
        self.barrier(timeout)  # everyone has read; slots may be reused
        return values

    def allreduce(self, rank_id, data, timeout=None):
        """Elementwise sum across ranks; every rank gets the same result."""
        arr = np.asarray(data, dtype=np.float64)
        values = self._exchange(rank_id, arr, timeout)
        if len({v.shape for v in values}) != 1:
            raise SizeMismatch("allreduce buffers differ in shape across ranks")
        out = np.zeros_like(arr)
        for v in values:
            out = out + v
        return out

    def allgather(self, rank_id, data, timeout=None):
        """Concatenation of all ranks' buffers in rank order."""
        arr = np.asarray(data, dtype=np.float64)
        values = self._exchange(rank_id, arr, timeout)
        return np.concatenate([np.atleast_1d(v) for v in values])


class Scratch:
    """Scratch-directory manager: lazily staged read sources, per-rank write
    files, shared files for collective I/O. Thread-safe."""

    def __init__(self, root=None, fsync=False):
        root = Path(root or os.environ.get(SCRATCH_ENV)
                    or Path(tempfile.gettempdir()) / "wfmini-scratch")
        try:
            root.mkdir(parents=True, exist_ok=True)
            # unique probe name: concurrent Scratch instances may share root
            fd, probe = tempfile.mkstemp(prefix=".probe-", dir=root)
            os.close(fd)
            os.unlink(probe)
        except OSError as e:
            raise ScratchUnavailable(f"scratch {root} not writable: {e}")
        self.root = root
        self.fsync = fsync
        self._lock = threading.Lock()
        self._written = set()

    def staged_source(self, size, name="stage-src.dat"):
        """Grow (never shrink) a staged file to at least `size` bytes."""
        path = self.root / name
        with self._lock:
            current = path.stat().st_size if path.exists() else -1
            if current < size:
                with path.open("ab") as f:
                    f.truncate(size)
        return path

    def write_path(self, task_name, rank_id):
        safe = task_name.replace("/", "_") or "task"
        path = self.root / f"{safe}-r{rank_id}.dat"
        with self._lock:
            self._written.add(path)
        return path

    def shared_path(self, task_name):
        safe = task_name.replace("/", "_") or "task"
        path = self.root / f"{safe}-shared.dat"
        with self._lock:
            self._written.add(path)
        return path

    def cleanup(self):
        with self._lock:
            paths, self._written = self._written, set()
        for p in paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


@dataclass
class KernelContext:
    """Per-rank execution context handed to every kernel."""

    rank_id: int = 0
    comm: Communicator | None = None
    scratch: Scratch | None = None
    rng: np.random.Generator = None
    sink: MetricsSink | None = None
    task_name: str = "task"
    clock: callable = time.perf_counter
    copy_bandwidth: float = DEFAULT_COPY_BANDWIDTH
    pools: dict = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(int(os.environ.get(SEED_ENV, "0")))
        if self.scratch is None:
            self.scratch = Scratch()
        if self.pools is None:
            self.pools = {"host": {}, "device": {}}


def make_context(**kwargs) -> KernelContext:
    return KernelContext(**kwargs)


# --------------------------------------------------------------------------
# catalog machinery

@dataclass(frozen=True)
class KernelDef:
    name: str
    fn: callable
    required: tuple = ()
    needs_comm: bool = False


_CATALOG: dict[str, KernelDef] = {}


def register_kernel(name, impl, required=(), needs_comm=False):
    """Add a kernel to the catalog; registered kernels dispatch and trace
    identically to built-ins."""
    if name in _CATALOG:
        raise DuplicateKernel(name)
    _CATALOG[name] = KernelDef(name=name, fn=impl, required=tuple(required),
                               needs_comm=needs_comm)


def catalog_names():
    return sorted(_CATALOG)


def kernel_def(name) -> KernelDef:
    try:
        return _CATALOG[name]
    except KeyError:
        raise UnknownKernel(name)


def _positive_int(params, key, minimum=1):
    value = params[key]
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < minimum:
        raise InvalidParameter(f"{key} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _size(params, key):
    value = params[key]
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
        raise InvalidParameter(f"{key} must be a non-negative integer, got {value!r}")
    return int(value)


def execute_kernel(call: KernelCall, comm: Communicator | None = None,
                   sink: MetricsSink | None = None,
                   ctx: KernelContext | None = None) -> KernelResult:
    """Run one catalog kernel `repetitions` times and aggregate the result.

    One kernel event is appended to the sink (the ctx's sink if the explicit
    one is omitted).
    """
    kdef = kernel_def(call.kernel_name)
    if ctx is None:
        ctx = KernelContext(comm=comm)
    elif comm is not None:
        ctx = replace(ctx, comm=comm)
    if kdef.needs_comm and ctx.comm is None:
        raise CommunicatorRequired(f"{kdef.name} is a collective and needs a communicator")
    if not kdef.needs_comm and comm is not None:
        raise CommunicatorRequired(f"{kdef.name} does not take a communicator")

    params = dict(call.params)
    reps = params.pop("repetitions", 1)
    if not isinstance(reps, (int, np.integer)) or reps < 1:
        raise InvalidParameter(f"repetitions must be >= 1, got {reps!r}")
    for key in kdef.required:
        if key not in params:
            raise MissingParameter(f"{kdef.name} requires parameter {key!r}")
    device = Device.parse(params.pop("device", HOST)) if "device" in params else HOST

    sink = sink or ctx.sink
    agg = KernelResult()
    t_start = ctx.clock()
    wall = 0.0
    for _ in range(reps):
        t0 = time.perf_counter()
        part = kdef.fn(ctx, device, params)
        elapsed = time.perf_counter() - t0
        if device.kind == "accelerator" and device.slowdown_factor != 1.0:
            extra = elapsed * (device.slowdown_factor - 1.0)
            if extra > 0:
                time.sleep(extra)
            elapsed *= device.slowdown_factor
        wall += elapsed
        agg.bytes_read += part.bytes_read
        agg.bytes_written += part.bytes_written
        agg.bytes_communicated += part.bytes_communicated
        agg.checksum = part.checksum
    agg.wall_time = wall
    if sink is not None:
        sink.append({
            "kind": "kernel", "task": ctx.task_name, "rank": ctx.rank_id,
            "kernel": kdef.name, "t_start": t_start, "t_end": ctx.clock(),
            "wall_time": wall, "bytes_read": agg.bytes_read,
            "bytes_written": agg.bytes_written,
            "bytes_communicated": agg.bytes_communicated,
            "checksum": agg.checksum,
        })
    return agg


# --------------------------------------------------------------------------
# compute kernels

_SEED_BLOCK = 4096


def seeded_buffer(rng, n, dtype=np.float64):
    """Deterministic length-n buffer from a small seeded block.

    Tiling a 4 Ki block keeps rank lanes from serializing on the GIL-held
    generator while staying reproducible (one block draw per call)."""
    if dtype == np.uint8:
        block = rng.integers(0, 256, _SEED_BLOCK, dtype=np.uint8)
    else:
        block = rng.random(_SEED_BLOCK)
    if n <= block.size:
        return block[:n].copy()
    reps = -(-n // block.size)
    return np.tile(block, reps)[:n]


def _k_matmul_simple2d(ctx, device, params):
    dim = _positive_int(params, "dim")
    a = seeded_buffer(ctx.rng, dim * dim).reshape(dim, dim)
    b = seeded_buffer(ctx.rng, dim * dim).reshape(dim, dim)
    c = ops.matmul(a, b)
    return KernelResult(checksum=float(c.sum()))


def _k_matmul_general(ctx, device, params):
    dims = params["dim_list"]
    if not isinstance(dims, (list, tuple)):
        raise InvalidParameter("dim_list must be a list of (m, k, n) triples")
    checksum = 0.0
    for triple in dims:
        if len(triple) != 3 or any((not isinstance(d, (int, np.integer))) or d < 1
                                   for d in triple):
            raise InvalidParameter(f"bad dimension triple {triple!r}")
        m, k, n = (int(d) for d in triple)
        a = seeded_buffer(ctx.rng, m * k).reshape(m, k)
        b = seeded_buffer(ctx.rng, k * n).reshape(k, n)
        c = ops.matmul(a, b)
        checksum += float(c.sum())
    return KernelResult(checksum=checksum)


def _k_fft(ctx, device, params):
    n = _size(params, "data_size")
    if not ops.is_power_of_two(n) or n < 2:
        raise InvalidParameter(f"fft data_size must be a power of two >= 2, got {n}")
    span = params.get("transform_dim", n)
    if not ops.is_power_of_two(span) or span < 2 or n % span:
        raise InvalidParameter(
            f"transform_dim must be a power of two >= 2 dividing data_size, got {span}")
    data = seeded_buffer(ctx.rng, n) + 1j * seeded_buffer(ctx.rng, n)
    checksum = 0.0
    for chunk in data.reshape(n // span, span):
        checksum += float(np.abs(ops.fft(chunk)).sum())
    return KernelResult(checksum=checksum)


def _k_rng(ctx, device, params):
    n = _positive_int(params, "data_size")
    dist = params.get("distribution", "uniform")
    if dist not in ("uniform", "normal"):
        raise InvalidParameter(f"unknown distribution {dist!r}")
    gen = np.random.default_rng(params["seed"]) if "seed" in params else ctx.rng
    data = gen.random(n) if dist == "uniform" else gen.standard_normal(n)
    return KernelResult(checksum=float(data.sum()))


def _k_axpy(ctx, device, params):
    n = _positive_int(params, "data_size")
    a = params.get("a", 1.0)
    x = seeded_buffer(ctx.rng, n)
    y = seeded_buffer(ctx.rng, n)
    out = ops.axpy(a, x, y)
    return KernelResult(checksum=float(out.sum()))


def _k_scatter_add(ctx, device, params):
    x_size = _positive_int(params, "x_size")
    y_size = _positive_int(params, "y_size")
    x = seeded_buffer(ctx.rng, x_size)
    idx = ctx.rng.integers(0, y_size, x_size)
    y = ops.scatter_add(x, idx, np.zeros(y_size))
    return KernelResult(checksum=float(y.sum()))


def _k_reduction(ctx, device, params):
    n = _positive_int(params, "data_size")
    return KernelResult(checksum=ops.reduction(seeded_buffer(ctx.rng, n)))


def _k_inplace_compute(ctx, device, params):
    n = _positive_int(params, "data_size")
    functor = params["functor"]
    y = ops.inplace_compute(functor, seeded_buffer(ctx.rng, n))
    return KernelResult(checksum=float(y.sum()))


# --------------------------------------------------------------------------
# file I/O kernels

def _k_read_nonmpi(ctx, device, params):
    size = _size(params, "data_size")
    if size == 0:
        return KernelResult()
    path = ctx.scratch.staged_source(size)
    count = 0
    with path.open("rb") as f:
        while count < size:
            chunk = f.read(min(IO_BLOCK, size - count))
            if not chunk:
                raise ShortRead(f"read {count} of {size} bytes from {path}")
            count += len(chunk)
    return KernelResult(bytes_read=count)


_ZERO_BLOCK = bytes(IO_BLOCK)


def _k_write_nonmpi(ctx, device, params):
    size = _size(params, "data_size")
    if size == 0:
        return KernelResult()
    path = ctx.scratch.write_path(ctx.task_name, ctx.rank_id)
    count = 0
    try:
        with path.open("ab") as f:
            while count < size:
                n = f.write(_ZERO_BLOCK[:min(IO_BLOCK, size - count)])
                count += n
            if ctx.scratch.fsync:
                f.flush()
                os.fsync(f.fileno())
    except OSError as e:
        raise ShortWrite(f"wrote {count} of {size} bytes to {path}: {e}")
    return KernelResult(bytes_written=count)


def _mpi_io(ctx, device, params, direction):
    if ctx.comm is None:
        raise CommunicatorRequired("MPI-I/O kernels need a communicator")
    size = _size(params, "data_size")
    comm = ctx.comm
    path = ctx.scratch.shared_path(ctx.task_name)
    if direction == "read":
        ctx.scratch.staged_source(comm.size * size, name=path.name)
    else:
        ctx.scratch.staged_source(0, name=path.name)  # ensure file exists
    comm.barrier(params.get("timeout"))
    offset = ctx.rank_id * size
    flags = os.O_RDONLY if direction == "read" else os.O_WRONLY
    fd = os.open(path, flags)
    try:
        count = 0
        while count < size:
            step = min(IO_BLOCK, size - count)
            if direction == "read":
                chunk = os.pread(fd, step, offset + count)
                if not chunk:
                    raise ShortRead(f"short shared read at offset {offset + count}")
                count += len(chunk)
            else:
                count += os.pwrite(fd, _ZERO_BLOCK[:step], offset + count)
    finally:
        os.close(fd)
    if direction == "read":
        return KernelResult(bytes_read=count)
    return KernelResult(bytes_written=count)


def _k_read_mpi(ctx, device, params):
    return _mpi_io(ctx, device, params, "read")


def _k_write_mpi(ctx, device, params):
    return _mpi_io(ctx, device, params, "write")


# --------------------------------------------------------------------------
# collectives

def _k_allreduce(ctx, device, params, is_async=False):
    if ctx.comm is None:
        raise CommunicatorRequired("MPIallReduce needs a communicator")
    n = _positive_int(params, "data_size")
    data = seeded_buffer(ctx.rng, n)
    out = ctx.comm.allreduce(ctx.rank_id, data, params.get("timeout"))
    comm_bytes = n * ELEMENT_WIDTH * (ctx.comm.size - 1)  # ring model, per rank
    return KernelResult(bytes_communicated=comm_bytes, checksum=float(out.sum()))


def _k_allreduce_async(ctx, device, params):
    return _k_allreduce(ctx, device, params, is_async=True)


def _k_allgather(ctx, device, params):
    if ctx.comm is None:
        raise CommunicatorRequired("MPIallGather needs a communicator")
    n = _positive_int(params, "data_size")
    data = seeded_buffer(ctx.rng, n)
    out = ctx.comm.allgather(ctx.rank_id, data, params.get("timeout"))
    comm_bytes = n * ELEMENT_WIDTH * (ctx.comm.size - 1)
    return KernelResult(bytes_communicated=comm_bytes, checksum=float(out.sum()))


# --------------------------------------------------------------------------
# host<->device data movement

def _data_copy(ctx, device, params, direction):
    size = _size(params, "data_size")
    if size == 0:
        return KernelResult()
    src_pool, dst_pool = (("host", "device") if direction == "h2d"
                          else ("device", "host"))
    key = params.get("buffer", "default")
    src = ctx.pools[src_pool]
    if key not in src or src[key].size != size:
        src[key] = seeded_buffer(ctx.rng, size, dtype=np.uint8)
    buf = src[key]
    ctx.pools[dst_pool][key] = buf.copy()
    bandwidth = params.get("bandwidth", ctx.copy_bandwidth)
    if not isinstance(bandwidth, (int, float)) or bandwidth <= 0:
        raise InvalidParameter(f"bandwidth must be > 0, got {bandwidth!r}")
    time.sleep(size / bandwidth)
    return KernelResult(checksum=float(buf.sum(dtype=np.float64)))


def _k_copy_h2d(ctx, device, params):
    return _data_copy(ctx, device, params, "h2d")


def _k_copy_d2h(ctx, device, params):
    return _data_copy(ctx, device, params, "d2h")


register_kernel("matMulSimple2D", _k_matmul_simple2d, required=("dim",))
register_kernel("matMulGeneral", _k_matmul_general, required=("dim_list",))
register_kernel("fft", _k_fft, required=("data_size",))
register_kernel("RNG", _k_rng, required=("data_size",))
register_kernel("axpy", _k_axpy, required=("data_size",))
register_kernel("scatterAdd", _k_scatter_add, required=("x_size", "y_size"))
register_kernel("reduction", _k_reduction, required=("data_size",))
register_kernel("inplaceCompute", _k_inplace_compute, required=("data_size", "functor"))
register_kernel("readNonMPI", _k_read_nonmpi, required=("data_size",))
register_kernel("writeNonMPI", _k_write_nonmpi, required=("data_size",))
register_kernel("readWithMPI", _k_read_mpi, required=("data_size",), needs_comm=True)
register_kernel("writeWithMPI", _k_write_mpi, required=("data_size",), needs_comm=True)
register_kernel("MPIallReduce", _k_allreduce, required=("data_size",), needs_comm=True)
register_kernel("MPIallReduceAsync", _k_allreduce_async, required=("data_size",),
                needs_comm=True)
register_kernel("MPIallGather", _k_allgather, required=("data_size",), needs_comm=True)
register_kernel("dataCopyH2D", _k_copy_h2d, required=("data_size",))
register_kernel("dataCopyD2H", _k_copy_d2h, required=("data_size",))
register_kernel("dataCopyH2DAsync", _k_copy_h2d, required=("data_size",))
register_kernel("dataCopyD2HAsync", _k_copy_d2h, required=("data_size",))
