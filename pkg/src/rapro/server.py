"""Multi-worker baseband server: receive, schedule, process, transmit.

Worker layout mirrors the deployment this reproduces: one scheduler, R
receive workers (one socket + one reassembler each), one processing worker
per active subframe index, and one transmit worker. All cross-worker
communication is message passing plus exclusive SubframeBuffer handoff; the
scheduler is the only router and workers never message each other.

The routing rules live in `Scheduler`, a synchronous state machine with no
threads or sockets, so the scheduling contract is testable deterministically;
`BasebandServer` wraps it with the real worker threads and UDP sockets.
"""
from __future__ import annotations

import json
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytics
from .config import FrameConfig, PipelineConfig, RunConfig, run_config_to_dict
from .phy import (
    BatchInterpWorkspace,
    DetectionResult,
    cross_slot_noise_estimate,
    demodulate_with_points,
    interpolate_comb_batched,
    pilot_comb_values,
    _cholesky_solve_batched,
)
from .wire import (
    FeedEvent,
    RangeError,
    SubframeAssembler,
    SubframeBuffer,
    WireError,
    decode_packet_raw,
    encode_result_datagram,
    write_capture_record,
)


def antennas_for_receiver(num_antennas: int, rx_id: int, num_receivers: int) -> list[int]:
    """Antenna ownership of one receive stream (parity split, matching the
    emulator's destination split)."""
    return list(range(rx_id, num_antennas, num_receivers))


# -- subframe processing -----------------------------------------------------------


def _load_kernel():
    try:
        from ._kernels import detect_subframe
    except ImportError:
        return None
    return detect_subframe


class SubframeProcessor:
    """Per-worker detection chain with reusable scratch buffers.

    Not thread-safe: each processing worker owns one instance. The detection
    core runs through the compiled kernel when numba is available, otherwise
    through the equivalent vectorized-numpy path (use_kernel forces a choice).
    """

    def __init__(
        self,
        cfg: FrameConfig,
        pilot_seeds,
        pipeline: PipelineConfig,
        use_kernel: bool | None = None,
    ):
        self.cfg = cfg
        self.pipeline = pipeline
        K = cfg.num_users
        self.pilot_conj = np.stack(
            [pilot_comb_values(cfg, k, pilot_seeds[k]).conj() for k in range(K)]
        )
        M, S, N = cfg.num_bs_antennas, cfg.symbols_per_subframe, cfg.used_subcarriers
        slots, dps = cfg.slots_per_subframe, cfg.data_symbols_per_slot
        B = slots * N
        self._kernel = None
        if use_kernel is not False:
            self._kernel = _load_kernel()
            if use_kernel and self._kernel is None:
                raise RuntimeError("compiled kernel requested but numba is unavailable")
        self._f = np.empty((M, S, N, 2), dtype=np.float64)
        self._hc = np.empty((slots, M, K, cfg.comb_points), dtype=np.complex128)
        self._eq = np.empty((K, slots * dps, N), dtype=np.complex128)
        if dps:
            if self._kernel is not None:
                self._yd = np.empty((slots, M, dps, N), dtype=np.complex128)
                self._x = np.empty((slots, N, K, dps), dtype=np.complex128)
                self._bad = np.empty((slots, N), dtype=np.uint8)
            else:
                self._interp_ws = BatchInterpWorkspace(slots, M, K, cfg.comb_points)
                self._hb = np.empty((B, M, K), dtype=np.complex128)
                self._hbc = np.empty((B, M, K), dtype=np.complex128)
                self._yb = np.empty((B, M, dps), dtype=np.complex128)
                self._a = np.empty((B, K, K), dtype=np.complex128)
                self._rhs = np.empty((B, K, dps), dtype=np.complex128)

    def _noise_var(self) -> float:
        if self.pipeline.sigma2_policy == "fixed":
            return self.pipeline.sigma2_fixed
        slots = self.cfg.slots_per_subframe
        if slots >= 2:
            return cross_slot_noise_estimate(
                self._hc[0], self._hc[1], floor=self.pipeline.sigma2_min
            )
        return self.pipeline.sigma2_min

    def process(self, buffer: SubframeBuffer) -> DetectionResult:
        """Per slot: LS on the pilot symbol, interpolate, estimate noise, LMMSE
        on the data symbols, demodulate; records wall time and derived cycles."""
        t0 = time.perf_counter()
        cfg = self.cfg
        M, K, N = cfg.num_bs_antennas, cfg.num_users, cfg.used_subcarriers
        slots, sps = cfg.slots_per_subframe, cfg.symbols_per_slot
        dps = cfg.data_symbols_per_slot

        np.multiply(buffer.iq, 2.0**-15, out=self._f)
        grid = self._f.view(np.complex128)[..., 0]  # (M, S, N)

        for slot in range(slots):
            pilot_sym = grid[:, slot * sps, :]
            for k in range(K):
                np.multiply(
                    pilot_sym[:, k::K], self.pilot_conj[k], out=self._hc[slot, :, k, :]
                )
        noise_var = self._noise_var()

        erased = 0
        if dps:
            if self._kernel is not None:
                for s in range(slots):
                    np.copyto(self._yd[s], grid[:, s * sps + 1 : (s + 1) * sps, :])
                self._kernel(self._hc, self._yd, noise_var, self._x, self._bad)
                if self._bad.any():
                    erased = int(np.count_nonzero(self._bad))
                x = self._x.reshape(slots * N, K, dps)
            else:
                hb = interpolate_comb_batched(self._hc, self._interp_ws, self._hb)
                yb_v = self._yb.reshape(slots, N, M, dps)
                for s in range(slots):
                    np.copyto(
                        yb_v[s],
                        grid[:, s * sps + 1 : (s + 1) * sps, :].transpose(2, 0, 1),
                    )
                np.conjugate(hb, out=self._hbc)
                hh = self._hbc.transpose(0, 2, 1)
                np.matmul(hh, hb, out=self._a)
                self._a[:, np.arange(K), np.arange(K)] += noise_var
                np.matmul(hh, self._yb, out=self._rhs)
                try:
                    x = np.linalg.solve(self._a, self._rhs)
                except np.linalg.LinAlgError:
                    # rank-deficient subcarriers (possible only at sigma^2 = 0):
                    # redo with the erasure-flagging solver
                    np.matmul(hh, hb, out=self._a)
                    self._a[:, np.arange(K), np.arange(K)] += noise_var
                    x, bad = _cholesky_solve_batched(self._a, self._rhs)
                    erased = int(np.count_nonzero(bad))
            equalized = self._eq
            np.copyto(equalized, x.reshape(slots, N, K, dps).transpose(2, 0, 3, 1)
                      .reshape(K, slots * dps, N))
        else:  # pilot-only configuration
            equalized = np.zeros((K, 0, N), dtype=np.complex128)

        bits: list[np.ndarray] = []
        evm = np.zeros(K)
        for u in range(K):
            scheme = cfg.modulation_per_user[u]
            stream = equalized[u].ravel()
            user_bits, points = demodulate_with_points(stream, scheme)
            bits.append(user_bits)
            if stream.size:
                err = stream - points
                evm[u] = 100.0 * np.sqrt(
                    float(np.sum(err.real**2 + err.imag**2))
                    / float(np.sum(points.real**2 + points.imag**2))
                )

        elapsed = time.perf_counter() - t0
        return DetectionResult(
            frame_seq=buffer.frame_seq,
            subframe_idx=buffer.subframe_idx,
            equalized=equalized.copy(),
            bits=bits,
            evm_per_user=evm,
            noise_var=noise_var,
            erased_subcarriers=erased,
            processing_time=elapsed,
            processing_cycles=int(elapsed * cfg.cpu_clock_hz),
            timestamps={"first_arrival": buffer.first_arrival,
                        "last_arrival": buffer.last_arrival},
        )


def process_subframe(
    buffer: SubframeBuffer,
    cfg: FrameConfig,
    pilot_seeds,
    pipeline: PipelineConfig | None = None,
) -> DetectionResult:
    """One-shot convenience wrapper around SubframeProcessor."""
    return SubframeProcessor(cfg, pilot_seeds, pipeline or PipelineConfig()).process(
        buffer
    )


# -- scheduling state machine ---------------------------------------------------------


@dataclass
class Dispatch:
    worker: int
    buffer: SubframeBuffer


@dataclass
class Transmit:
    result: DetectionResult


class Scheduler:
    """Routing rules of the pipeline, synchronous and deterministic.

    Receive streams report completed (partial) subframes; once every stream
    has contributed its antenna rows the merged buffer is dispatched to the
    worker dedicated to that subframe index (worker i handles subframe i+1).
    A busy worker queues at most one pending subframe; a further arrival
    drops the older pending one and counts a deadline miss.
    """

    PRUNE_WINDOW = 8  # frames of exactly-once memory

    def __init__(self, num_receive_workers: int, num_subframe_workers: int):
        self.num_rx = num_receive_workers
        self.num_workers = num_subframe_workers
        self.busy = [False] * num_subframe_workers
        self.pending: list[SubframeBuffer | None] = [None] * num_subframe_workers
        self.partial: dict[tuple[int, int], dict[int, SubframeBuffer]] = {}
        self.dispatched_keys: set[tuple[int, int]] = set()
        self.drops: list[tuple[int, int]] = []
        self.dispatch_log: list[tuple[int, int, int]] = []  # (frame, sf, worker)
        self.frames_seen: set[int] = set()
        self.marker_times: dict[int, float] = {}
        self.results_outstanding = 0
        self.duplicate_completions = 0

    def worker_for(self, subframe_idx: int) -> int:
        return subframe_idx - 1

    def on_marker(self, frame_seq: int, now: float) -> list:
        self.frames_seen.add(frame_seq)
        self.marker_times.setdefault(frame_seq, now)
        self._prune(frame_seq)
        return []

    def on_subframe_complete(self, rx_id: int, buffer: SubframeBuffer) -> list:
        key = (buffer.frame_seq, buffer.subframe_idx)
        self.frames_seen.add(buffer.frame_seq)
        if key in self.dispatched_keys:
            self.duplicate_completions += 1
            return []
        parts = self.partial.setdefault(key, {})
        if rx_id in parts:
            self.duplicate_completions += 1
            return []
        parts[rx_id] = buffer
        if len(parts) < self.num_rx:
            return []
        del self.partial[key]
        self.dispatched_keys.add(key)
        merged = parts.pop(0) if 0 in parts else parts.pop(min(parts))
        for other in parts.values():
            merged.merge_from(other)
        return self._enqueue(merged)

    def _enqueue(self, buffer: SubframeBuffer) -> list:
        w = self.worker_for(buffer.subframe_idx)
        if not 0 <= w < self.num_workers:
            raise RangeError(f"no worker for subframe {buffer.subframe_idx}")
        if self.busy[w]:
            if self.pending[w] is not None:
                old = self.pending[w]
                self.drops.append((old.frame_seq, old.subframe_idx))
            self.pending[w] = buffer
            return []
        self.busy[w] = True
        self.results_outstanding += 1
        self.dispatch_log.append((buffer.frame_seq, buffer.subframe_idx, w))
        return [Dispatch(worker=w, buffer=buffer)]

    def on_worker_done(self, worker: int, result: DetectionResult) -> list:
        actions: list = [Transmit(result=result)]
        self.results_outstanding -= 1
        nxt = self.pending[worker]
        if nxt is not None:
            self.pending[worker] = None
            self.results_outstanding += 1
            self.dispatch_log.append((nxt.frame_seq, nxt.subframe_idx, worker))
            actions.append(Dispatch(worker=worker, buffer=nxt))
        else:
            self.busy[worker] = False
        return actions

    def idle(self) -> bool:
        return self.results_outstanding == 0 and all(p is None for p in self.pending)

    def _prune(self, latest_frame: int) -> None:
        low = latest_frame - self.PRUNE_WINDOW
        self.dispatched_keys = {k for k in self.dispatched_keys if k[0] >= low}
        for key in [k for k in self.partial if k[0] < low]:
            del self.partial[key]


# -- worker timelines ------------------------------------------------------------------


@dataclass
class WorkerTimeline:
    """Busy/idle accounting of one processing worker."""

    worker: int
    durations: list[float] = field(default_factory=list)
    jobs: list[tuple[int, int]] = field(default_factory=list)
    first_start: float | None = None
    last_end: float | None = None
    deadline_misses: int = 0

    @property
    def busy_time(self) -> float:
        return float(sum(self.durations))

    def wall_time(self) -> float:
        if self.first_start is None or self.last_end is None:
            return 0.0
        return self.last_end - self.first_start

    def to_dict(self) -> dict:
        d = np.asarray(self.durations) if self.durations else np.zeros(0)
        wall = self.wall_time()
        return {
            "worker": self.worker,
            "jobs": len(self.jobs),
            "busy_time_s": self.busy_time,
            "wall_time_s": wall,
            "idle_time_s": max(0.0, wall - self.busy_time),
            "busy_fraction": (self.busy_time / wall) if wall > 0 else 0.0,
            "proc_time_mean_s": float(d.mean()) if d.size else 0.0,
            "proc_time_p50_s": float(np.percentile(d, 50)) if d.size else 0.0,
            "proc_time_p95_s": float(np.percentile(d, 95)) if d.size else 0.0,
            "proc_time_max_s": float(d.max()) if d.size else 0.0,
            "deadline_misses": self.deadline_misses,
        }


# -- the threaded server ------------------------------------------------------------------


class BasebandServer:
    """UDP baseband server; run() blocks until the stop condition and returns
    the report. stop() (or SIGINT via the CLI) triggers a graceful drain."""

    def __init__(
        self,
        run_cfg: RunConfig,
        listen: list[tuple[str, int]],
        out_addr: tuple[str, int] | None = None,
        frames: int | None = None,
        duration: float | None = None,
        capture_path: str | None = None,
        ground_truth: dict | None = None,
    ):
        self.run_cfg = run_cfg
        self.cfg = run_cfg.frame
        self.pipeline = run_cfg.pipeline
        if len(listen) != self.pipeline.num_receive_workers:
            raise ValueError(
                f"{len(listen)} listen endpoints for "
                f"{self.pipeline.num_receive_workers} receive workers"
            )
        self.listen = listen
        self.out_addr = out_addr
        self.frame_budget = frames
        self.duration = duration
        self.capture_path = capture_path
        self.ground_truth = ground_truth
        self.num_workers = self.cfg.active_subframes
        self.scheduler = Scheduler(len(listen), self.num_workers)
        self.control_q: queue.Queue = queue.Queue()
        self.stop_event = threading.Event()
        self._last_rx_time = time.perf_counter()
        self._rx_stats: list[dict] = [{} for _ in listen]
        self._rx_incomplete: list[list] = [[] for _ in listen]
        self._rx_errors = [0] * len(listen)
        self._rx_socks: list[socket.socket] = []
        self.timelines = [WorkerTimeline(worker=i) for i in range(self.num_workers)]
        self._results: list[DetectionResult] = []
        self._tx_q: queue.Queue = queue.Queue()
        self._tx_sent = 0
        self._tx_failures = 0
        self._tx_times: dict[tuple[int, int], float] = {}
        self._affinity_cursor = 0

    # -- worker bodies ----------------------------------------------------------

    def _pin(self) -> None:
        if self.pipeline.core_affinity != "one-core-per-worker":
            return
        try:
            cores = sorted(os.sched_getaffinity(0))
            core = cores[self._affinity_cursor % len(cores)]
            self._affinity_cursor += 1
            os.sched_setaffinity(0, {core})
        except (AttributeError, OSError):
            pass  # affinity is policy, never correctness

    def _bind_sockets(self) -> None:
        try:
            for addr in self.listen:
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 * 1024 * 1024)
                sock.bind(addr)
                sock.settimeout(0.05)
                self._rx_socks.append(sock)
        except OSError:
            for sock in self._rx_socks:
                sock.close()
            raise

    def _receive_worker(self, rx_id: int) -> None:
        self._pin()
        assembler = SubframeAssembler(
            self.cfg,
            samples_per_packet=self.run_cfg.wire.samples_per_packet,
            expected_antennas=antennas_for_receiver(
                self.cfg.num_bs_antennas, rx_id, len(self.listen)
            ),
        )
        sock = self._rx_socks[rx_id]
        buf = bytearray(65536)
        try:
            while not self.stop_event.is_set():
                try:
                    nbytes = sock.recv_into(buf)
                except socket.timeout:
                    continue
                except OSError:
                    break
                now = time.perf_counter()
                self._last_rx_time = now
                try:
                    header, raw = decode_packet_raw(bytes(buf[:nbytes]))
                    event, completed = assembler.feed(header, raw, now)
                except WireError:
                    self._rx_errors[rx_id] += 1
                    continue
                if event is FeedEvent.SUBFRAME_COMPLETE:
                    self.control_q.put(("subframe", rx_id, completed))
                elif event is FeedEvent.MARKER_SEEN:
                    self.control_q.put(("marker", header.frame_seq, now))
        finally:
            sock.close()
            self._rx_incomplete[rx_id] = assembler.flush_incomplete()
            self._rx_stats[rx_id] = vars(assembler.stats).copy()
            self.control_q.put(("rx_stopped", rx_id))

    def _subframe_worker(self, idx: int, inbox: queue.Queue) -> None:
        self._pin()
        processor = SubframeProcessor(
            self.cfg, self.run_cfg.wire.pilot_seeds(self.cfg.num_users), self.pipeline
        )
        deadline = self.pipeline.deadline or self.run_cfg.frame_period
        timeline = self.timelines[idx]
        while True:
            job = inbox.get()
            if job is None:
                return
            assert job.subframe_idx - 1 == idx, "subframe routed to wrong worker"
            start = time.perf_counter()
            result = processor.process(job)
            end = time.perf_counter()
            if timeline.first_start is None:
                timeline.first_start = start
            timeline.last_end = end
            timeline.durations.append(end - start)
            timeline.jobs.append((job.frame_seq, job.subframe_idx))
            if end - start > deadline:
                timeline.deadline_misses += 1
            self.control_q.put(("done", idx, result))

    def _transmit_worker(self) -> None:
        self._pin()
        sock = None
        if self.out_addr is not None:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        capture = open(self.capture_path, "wb") if self.capture_path else None
        try:
            while True:
                result = self._tx_q.get()
                if result is None:
                    return
                for user in range(self.cfg.num_users):
                    symbols = None
                    if self.pipeline.capture_symbols:
                        symbols = result.equalized[user].ravel()
                    datagram = encode_result_datagram(
                        result.frame_seq,
                        result.subframe_idx,
                        user,
                        self.cfg.modulation_per_user[user],
                        result.bits[user],
                        symbols,
                    )
                    if sock is not None:
                        try:
                            sock.sendto(datagram, self.out_addr)
                            self._tx_sent += 1
                        except OSError:
                            self._tx_failures += 1
                    if capture is not None:
                        write_capture_record(capture, datagram)
                self._tx_times[(result.frame_seq, result.subframe_idx)] = (
                    time.perf_counter()
                )
        finally:
            if sock is not None:
                sock.close()
            if capture is not None:
                capture.close()

    # -- run loop ----------------------------------------------------------------

    def stop(self) -> None:
        self.stop_event.set()

    def run(self) -> dict:
        started = time.perf_counter()
        self._bind_sockets()
        inboxes = [queue.Queue() for _ in range(self.num_workers)]
        threads = []
        for rx_id in range(len(self.listen)):
            threads.append(
                threading.Thread(
                    target=self._receive_worker, args=(rx_id,),
                    name=f"rx-{rx_id}", daemon=True,
                )
            )
        for w in range(self.num_workers):
            threads.append(
                threading.Thread(
                    target=self._subframe_worker, args=(w, inboxes[w]),
                    name=f"subframe-{w + 1}", daemon=True,
                )
            )
        tx_thread = threading.Thread(
            target=self._transmit_worker, name="tx", daemon=True
        )
        for t in threads:
            t.start()
        tx_thread.start()

        rx_stopped = 0
        drain_grace = max(0.25, 2.5 * self.run_cfg.frame_period / self.cfg.num_subframes)
        try:
            while True:
                try:
                    msg = self.control_q.get(timeout=0.05)
                except queue.Empty:
                    msg = None
                if msg is not None:
                    kind = msg[0]
                    if kind == "marker":
                        self.scheduler.on_marker(msg[1], msg[2])
                    elif kind == "subframe":
                        self._apply(self.scheduler.on_subframe_complete(msg[1], msg[2]), inboxes)
                    elif kind == "done":
                        self._apply(self.scheduler.on_worker_done(msg[1], msg[2]), inboxes)
                    elif kind == "rx_stopped":
                        rx_stopped += 1
                now = time.perf_counter()
                if self.stop_event.is_set():
                    if rx_stopped == len(self.listen) and self.scheduler.idle() \
                            and self.control_q.empty():
                        break
                    continue
                if self.duration is not None and now - started > self.duration:
                    self.stop_event.set()
                    continue
                budget_met = (
                    self.frame_budget is not None
                    and len(self.scheduler.frames_seen) >= self.frame_budget
                )
                idle_for = now - self._last_rx_time
                if budget_met and self.scheduler.idle() and idle_for > drain_grace:
                    self.stop_event.set()
                elif idle_for > self.pipeline.idle_timeout and (
                    self.scheduler.frames_seen or self.frame_budget is None
                ) and self.scheduler.idle():
                    self.stop_event.set()
        finally:
            self.stop_event.set()
            for t in threads:
                t.join(timeout=10.0)
            # let any final completions drain through the scheduler
            while True:
                try:
                    msg = self.control_q.get_nowait()
                except queue.Empty:
                    break
                if msg[0] == "subframe":
                    self._apply(self.scheduler.on_subframe_complete(msg[1], msg[2]), inboxes)
                elif msg[0] == "done":
                    self._apply(self.scheduler.on_worker_done(msg[1], msg[2]), inboxes)
                elif msg[0] == "marker":
                    self.scheduler.on_marker(msg[1], msg[2])
            for inbox in inboxes:
                inbox.put(None)
            self._tx_q.put(None)
            tx_thread.join(timeout=10.0)
        return self._build_report(time.perf_counter() - started)

    def _apply(self, actions, inboxes) -> None:
        for action in actions:
            if isinstance(action, Dispatch):
                inboxes[action.worker].put(action.buffer)
            elif isinstance(action, Transmit):
                self._results.append(action.result)
                self._tx_q.put(action.result)

    # -- reporting ----------------------------------------------------------------

    def _build_report(self, wall_time: float) -> dict:
        sched = self.scheduler
        results_by_frame: dict[int, set[int]] = {}
        for r in self._results:
            results_by_frame.setdefault(r.frame_seq, set()).add(r.subframe_idx)
        dropped_by_frame: dict[int, list[int]] = {}
        for f, sf in sched.drops:
            dropped_by_frame.setdefault(f, []).append(sf)
        incomplete_detail = []
        incomplete_frames: set[int] = set()
        for rx_id, buffers in enumerate(self._rx_incomplete):
            for buf in buffers:
                missing = buf.missing_fragments()
                incomplete_frames.add(buf.frame_seq)
                incomplete_detail.append(
                    {
                        "receiver": rx_id,
                        "frame_seq": buf.frame_seq,
                        "subframe_idx": buf.subframe_idx,
                        "missing_count": len(missing),
                        "missing": [list(m) for m in missing[:64]],
                    }
                )
        # stranded merge partials also mean the subframe never fully assembled
        for (f, _sf), _parts in sched.partial.items():
            incomplete_frames.add(f)

        frames_completed = 0
        frames_with_misses = 0
        frames_incomplete = 0
        per_frame = {}
        for f in sorted(sched.frames_seen):
            done = results_by_frame.get(f, set())
            status = "completed"
            if f in incomplete_frames or len(done) + len(dropped_by_frame.get(f, [])) \
                    < self.num_workers:
                status = "incomplete"
                frames_incomplete += 1
            elif dropped_by_frame.get(f):
                status = "with_misses"
                frames_with_misses += 1
            else:
                frames_completed += 1
            per_frame[f] = status

        latencies = []
        for r in self._results:
            t_out = self._tx_times.get((r.frame_seq, r.subframe_idx))
            t_in = r.timestamps.get("first_arrival")
            if t_out is not None and t_in is not None:
                latencies.append(t_out - t_in)
        lat = np.asarray(latencies) if latencies else np.zeros(0)

        marker_times = [sched.marker_times[f] for f in sorted(sched.marker_times)]
        measured_period = (
            float(np.median(np.diff(marker_times))) if len(marker_times) > 1 else None
        )

        per_user = None
        if self.ground_truth is not None:
            records = []
            for r in self._results:
                for u in range(self.cfg.num_users):
                    records.append(
                        analytics.UserSubframeRecord(
                            frame_seq=r.frame_seq,
                            subframe_idx=r.subframe_idx,
                            user=u,
                            bits=r.bits[u],
                            symbols=r.equalized[u].ravel(),
                        )
                    )
            per_user = analytics.score_records(records, self.ground_truth, self.cfg)

        report = {
            "config": run_config_to_dict(self.run_cfg),
            "listen": [f"{h}:{p}" for h, p in self.listen],
            "out": f"{self.out_addr[0]}:{self.out_addr[1]}" if self.out_addr else None,
            "wall_time_s": wall_time,
            "frames_in": len(sched.frames_seen),
            "frames_completed": frames_completed,
            "frames_with_misses": frames_with_misses,
            "frames_incomplete": frames_incomplete,
            "frame_status": {str(k): v for k, v in per_frame.items()},
            "subframes_processed": len(self._results),
            "subframes_dropped": len(sched.drops),
            "dropped": [list(d) for d in sched.drops],
            "duplicate_completions": sched.duplicate_completions,
            "erased_subcarriers": int(
                sum(r.erased_subcarriers for r in self._results)
            ),
            "incomplete_subframes": incomplete_detail,
            "receivers": [
                {"stats": self._rx_stats[i], "decode_errors": self._rx_errors[i]}
                for i in range(len(self.listen))
            ],
            "dispatch_log": [list(d) for d in sched.dispatch_log],
            "workers": [t.to_dict() for t in self.timelines],
            "deadline_misses": int(sum(t.deadline_misses for t in self.timelines)),
            "measured_frame_period_s": measured_period,
            "latency": {
                "count": int(lat.size),
                "p50_s": float(np.percentile(lat, 50)) if lat.size else None,
                "p95_s": float(np.percentile(lat, 95)) if lat.size else None,
                "max_s": float(lat.max()) if lat.size else None,
            },
            "results_sent": self._tx_sent,
            "send_failures": self._tx_failures,
            "per_user": per_user,
        }
        return report


def save_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
