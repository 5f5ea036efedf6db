"""Partitioned execution engine.

An in-process orchestrator / worker-farm / aggregator runtime.  Workers are
threads that talk to the orchestrator only through the message types below;
every iteration the orchestrator broadcasts the owner-side vectors, hands
out partitions, collects exactly one ``PartialSums`` per partition and
reduces them in a fixed pairwise tree over partition ids.  Because each
partition is a pure function of the iteration-start snapshot and the tree
order never changes, results are bit-identical for any worker count and
under injected failures.

Checkpoint records (``checkpoints/ckpt-<t>-<partition>.bin``) are::

    header   16 bytes  little-endian  uint64 t | int32 partition_id | uint32 row_count
    payload  row_count * width float64, little-endian, row-major
    trailer  8 bytes   uint64 CRC-32 (ISO-HDLC, polynomial 0x04C11DB7, as zlib.crc32)
                       of header + payload, zero-extended

The coordinator state uses ``partition_id = -1`` (file ``ckpt-<t>-coord.bin``).
"""
from __future__ import annotations

import itertools
import logging
import queue
import struct
import threading
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumMismatch,
    CheckpointIOError,
    IterationTimeout,
    MissingCheckpoint,
    NoAvailableWorker,
)

log = logging.getLogger(__name__)

HEARTBEAT_MISSES = 3
COORDINATOR_ID = -1


# --- messages -------------------------------------------------------------

@dataclass(frozen=True)
class AssignPartition:
    partition_id: int
    t: int
    attempt: int = 0


@dataclass(frozen=True)
class PartialSums:
    partition_id: int
    t: int
    worker_id: int
    block: object  # the partition's new rows; kept worker-side in a networked deployment
    sums: tuple  # additive partial reductions


@dataclass(frozen=True)
class DualBroadcast:
    t: int
    payload: object
    beta: float = 0.0
    rho: float = 0.0


@dataclass(frozen=True)
class Heartbeat:
    worker_id: int
    tick: int


@dataclass(frozen=True)
class ReassignAck:
    worker_id: int
    partition_id: int
    t: int


@dataclass
class ReassignmentReport:
    dead_workers: list = field(default_factory=list)
    requeued: list = field(default_factory=list)  # (partition_id, old_worker, new_worker)
    spawned: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.dead_workers or self.requeued)


@dataclass
class IterationResult:
    t: int
    blocks: dict
    reduced: tuple
    report: ReassignmentReport


# --- deterministic reduction ----------------------------------------------

def tree_reduce(items):
    """Pairwise sum of equal-structure tuples of arrays in a fixed order."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [tuple(a + b for a, b in zip(items[k], items[k + 1])) for k in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


# --- checkpoint records ---------------------------------------------------

_HEADER = struct.Struct("<QiI")
_TRAILER = struct.Struct("<Q")


def encode_record(t, partition_id, rows):
    rows = np.ascontiguousarray(rows, dtype="<f8")
    if rows.ndim != 2:
        raise ValueError("checkpoint rows must be a 2-d array")
    body = _HEADER.pack(t, partition_id, rows.shape[0]) + rows.tobytes()
    return body + _TRAILER.pack(zlib.crc32(body))


def decode_record(data):
    """Return ``(t, partition_id, rows)``; raise on checksum mismatch."""
    if len(data) < _HEADER.size + _TRAILER.size:
        raise CheckpointChecksumMismatch("record truncated")
    body, trailer = data[: -_TRAILER.size], data[-_TRAILER.size :]
    if _TRAILER.unpack(trailer)[0] != zlib.crc32(body):
        raise CheckpointChecksumMismatch("record checksum mismatch")
    t, pid, count = _HEADER.unpack_from(body)
    payload = body[_HEADER.size :]
    width = len(payload) // 8 // count if count else 0
    if count * width * 8 != len(payload):
        raise CheckpointChecksumMismatch("payload size inconsistent with header")
    rows = np.frombuffer(payload, dtype="<f8").reshape(count, width).astype(float)
    return t, pid, rows


class CheckpointStore:
    """Directory of checkpoint records; at most one record per (t, partition)."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, t, partition_id):
        tag = "coord" if partition_id == COORDINATOR_ID else str(partition_id)
        return self.directory / f"ckpt-{t}-{tag}.bin"

    def write(self, t, partition_id, rows):
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            path = self.path(t, partition_id)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(encode_record(t, partition_id, rows))
            tmp.replace(path)
        except OSError as exc:
            raise CheckpointIOError(f"cannot write checkpoint: {exc}") from exc

    def read(self, t, partition_id):
        path = self.path(t, partition_id)
        try:
            data = path.read_bytes()
        except FileNotFoundError as exc:
            raise MissingCheckpoint(f"no checkpoint record {path.name}") from exc
        except OSError as exc:
            raise CheckpointIOError(f"cannot read {path}: {exc}") from exc
        rt, rpid, rows = decode_record(data)
        if rt != t or rpid != partition_id:
            raise CheckpointChecksumMismatch(f"{path.name}: header says t={rt}, partition={rpid}")
        return rows

    def iterations(self):
        found = set()
        for p in self.directory.glob("ckpt-*-coord.bin"):
            found.add(int(p.name.split("-")[1]))
        return sorted(found)


# --- engines --------------------------------------------------------------

class SerialEngine:
    """Runs every partition in the calling thread; the reference path."""

    workers = 1

    def __init__(self, partitions, checkpoint_dir=None):
        self.partitions = list(partitions)
        self.store = CheckpointStore(checkpoint_dir) if checkpoint_dir else None
        self.accepted = Counter()

    def run_iteration(self, t, work, payload=None, beta=0.0, rho=0.0):
        broadcast = DualBroadcast(t, payload, beta, rho)
        blocks, sums = {}, []
        for part in self.partitions:
            block, partial = work(part, broadcast)
            blocks[part.partition_id] = block
            sums.append(partial)
            self.accepted[(t, part.partition_id)] += 1
        return IterationResult(t, blocks, tree_reduce(sums), ReassignmentReport())

    def health_check_and_reassign(self):
        return ReassignmentReport()

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Worker:
    def __init__(self, worker_id, engine):
        self.worker_id = worker_id
        self.engine = engine
        self.inbox = queue.Queue()
        self.alive = threading.Event()
        self.alive.set()
        self.broadcast = None
        self.thread = threading.Thread(target=self._run, name=f"worker-{worker_id}", daemon=True)
        self.beat = threading.Thread(target=self._heartbeat, name=f"heartbeat-{worker_id}", daemon=True)

    def start(self):
        self.thread.start()
        self.beat.start()

    def kill(self):
        self.alive.clear()

    def _heartbeat(self):
        eng = self.engine
        while self.alive.is_set() and not eng._closed.is_set():
            eng._outbox.put(Heartbeat(self.worker_id, eng._tick()))
            time.sleep(eng.tick_seconds)

    def _run(self):
        eng = self.engine
        while self.alive.is_set():
            try:
                msg = self.inbox.get(timeout=eng.tick_seconds)
            except queue.Empty:
                continue
            if msg is None:
                return
            if isinstance(msg, DualBroadcast):
                self.broadcast = msg
            elif isinstance(msg, AssignPartition):
                if msg.attempt > 0:
                    eng._outbox.put(ReassignAck(self.worker_id, msg.partition_id, msg.t))
                part = eng._by_id[msg.partition_id]
                try:
                    block, partial = eng._work(part, self.broadcast)
                except BaseException as exc:  # surfaced by the orchestrator
                    eng._outbox.put(("error", self.worker_id, exc))
                    return
                if eng._should_fail(self.worker_id, msg):
                    # dies after computing, before reporting
                    self.alive.clear()
                    return
                if not self.alive.is_set():
                    return
                eng._outbox.put(PartialSums(msg.partition_id, msg.t, self.worker_id, block, partial))


class Engine:
    """Thread-backed worker farm with health checks and reassignment.

    ``failure_rate`` is the probability, drawn per (t, partition, attempt)
    from a generator keyed by ``seed``, that the assigned worker dies
    before reporting.  ``spare_workers`` bounds how many replacement
    workers may be spawned (``None`` = unbounded).
    """

    def __init__(
        self,
        partitions,
        workers=4,
        failure_rate=0.0,
        seed=0,
        spare_workers=None,
        tick_seconds=0.05,
        heartbeat_misses=HEARTBEAT_MISSES,
        iteration_timeout=None,
        checkpoint_dir=None,
    ):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.partitions = list(partitions)
        self._by_id = {p.partition_id: p for p in self.partitions}
        self.workers = workers
        self.failure_rate = float(failure_rate)
        self.seed = seed
        self.spare_workers = spare_workers
        self.tick_seconds = tick_seconds
        self.heartbeat_misses = heartbeat_misses
        self.iteration_timeout = iteration_timeout
        self.store = CheckpointStore(checkpoint_dir) if checkpoint_dir else None

        self._outbox = queue.Queue()
        self._closed = threading.Event()
        self._t0 = time.monotonic()
        self._ids = itertools.count()
        self._pool = {}
        self._last_seen = {}
        self._dead = set()
        self._kill_schedule = set()  # (t, partition_id) pairs whose first attempt dies
        self._work = None
        self._assignment = {}
        self._pending = set()
        self._t = None
        self.accepted = Counter()
        self.discarded = 0
        self.spawned = 0
        self.reports = []
        for _ in range(workers):
            self._spawn()

    # lifecycle
    def close(self):
        self._closed.set()
        for w in self._pool.values():
            w.kill()
            w.inbox.put(None)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _tick(self):
        return int((time.monotonic() - self._t0) / self.tick_seconds)

    def _spawn(self):
        w = _Worker(next(self._ids), self)
        self._pool[w.worker_id] = w
        self._last_seen[w.worker_id] = self._tick()
        w.start()
        return w

    def live_workers(self):
        return [w for wid, w in sorted(self._pool.items()) if wid not in self._dead]

    # failure injection
    def kill_worker(self, worker_id):
        """Kill a worker now; it stops heartbeating and never reports."""
        self._pool[worker_id].kill()

    def schedule_failure(self, t, partition_id):
        self._kill_schedule.add((t, partition_id))

    def _should_fail(self, worker_id, msg):
        if msg.attempt == 0 and (msg.t, msg.partition_id) in self._kill_schedule:
            return True
        if self.failure_rate <= 0.0:
            return False
        rng = np.random.default_rng([self.seed, msg.t, msg.partition_id, msg.attempt])
        return rng.random() < self.failure_rate

    # orchestration
    def _assign(self, pid, worker, attempt):
        self._assignment[pid] = (worker.worker_id, attempt)
        worker.inbox.put(AssignPartition(pid, self._t, attempt))

    def _drain(self, timeout):
        """Process queued messages; returns accepted (pid, PartialSums) pairs."""
        out = []
        try:
            msg = self._outbox.get(timeout=timeout)
        except queue.Empty:
            return out
        while True:
            if isinstance(msg, Heartbeat):
                if msg.worker_id not in self._dead:
                    self._last_seen[msg.worker_id] = max(self._last_seen.get(msg.worker_id, 0), msg.tick)
            elif isinstance(msg, PartialSums):
                current = self._assignment.get(msg.partition_id, (None,))[0]
                if (
                    msg.t == self._t
                    and msg.partition_id in self._pending
                    and msg.worker_id not in self._dead
                    and msg.worker_id == current
                ):
                    self._pending.discard(msg.partition_id)
                    self.accepted[(msg.t, msg.partition_id)] += 1
                    out.append(msg)
                else:
                    self.discarded += 1
            elif isinstance(msg, tuple) and msg and msg[0] == "error":
                raise msg[2]
            try:
                msg = self._outbox.get_nowait()
            except queue.Empty:
                return out

    def health_check_and_reassign(self):
        """Re-queue partitions of workers that missed ``heartbeat_misses`` ticks."""
        report = ReassignmentReport()
        now = self._tick()
        for wid, w in sorted(self._pool.items()):
            if wid in self._dead:
                continue
            if now - self._last_seen.get(wid, now) >= self.heartbeat_misses:
                self._dead.add(wid)
                w.kill()
                report.dead_workers.append(wid)
        if not report.dead_workers:
            return report
        orphaned = sorted(pid for pid in self._pending if self._assignment[pid][0] in self._dead)
        while len(self.live_workers()) < self.workers and (
            self.spare_workers is None or self.spawned < self.spare_workers
        ):
            self.spawned += 1
            report.spawned.append(self._spawn().worker_id)
        live = self.live_workers()
        if orphaned and not live:
            raise NoAvailableWorker("all workers failed and no spare workers remain")
        if live:
            for k, pid in enumerate(orphaned):
                old, attempt = self._assignment[pid]
                target = live[k % len(live)]
                if target.broadcast is None or target.broadcast.t != self._t:
                    target.inbox.put(self._broadcast)
                self._assign(pid, target, attempt + 1)
                report.requeued.append((pid, old, target.worker_id))
        log.info("reassigned %d partitions from dead workers %s", len(report.requeued), report.dead_workers)
        return report

    def run_iteration(self, t, work, payload=None, beta=0.0, rho=0.0):
        """Process every partition once against ``work`` and reduce the sums.

        ``work(partition, broadcast)`` must return ``(block, sums)`` where
        ``sums`` is a tuple of arrays combined by addition.
        """
        self._t = t
        self._work = work
        self._broadcast = DualBroadcast(t, payload, beta, rho)
        live = self.live_workers()
        if not live:
            raise NoAvailableWorker("no live workers")
        for w in live:
            w.inbox.put(self._broadcast)
        self._pending = {p.partition_id for p in self.partitions}
        for k, p in enumerate(self.partitions):
            self._assign(p.partition_id, live[k % len(live)], 0)

        results = {}
        report = ReassignmentReport()
        started = time.monotonic()
        while self._pending:
            for msg in self._drain(self.tick_seconds):
                results[msg.partition_id] = msg
            if not self._pending:
                break
            r = self.health_check_and_reassign()
            report.dead_workers += r.dead_workers
            report.requeued += r.requeued
            report.spawned += r.spawned
            if self.iteration_timeout is not None and time.monotonic() - started > self.iteration_timeout:
                raise IterationTimeout(f"iteration {t} exceeded {self.iteration_timeout}s")
        if report:
            self.reports.append((t, report))
        ordered = [results[p.partition_id] for p in self.partitions]
        blocks = {m.partition_id: m.block for m in ordered}
        return IterationResult(t, blocks, tree_reduce(m.sums for m in ordered), report)


def make_engine(partitions, workers=1, **kwargs):
    """Serial reference engine for ``workers == 0``, threaded engine otherwise."""
    if workers == 0:
        return SerialEngine(partitions, kwargs.get("checkpoint_dir"))
    return Engine(partitions, workers=workers, **kwargs)
