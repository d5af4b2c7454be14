"""End-to-end run orchestration.

Wires the simulated detector, the row distributor, the reconstruction
workers, the optional enhancement stage, and the metrics collector into a
single streaming run.  Three entry points cover the deployment modes:

* :func:`run_pipeline` -- everything in one process (source feeds the
  distributor directly);
* :func:`run_detector` -- source only, framing projections onto a TCP
  socket;
* :func:`run_processor` -- receiver only, listening for a framed stream
  and reconstructing it.

A run directory collects a manifest, the metrics CSV, ground-truth images,
and per-update snapshots so results can be audited after the fact.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import queue
import socket
import threading
import time
import types
import typing
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .distributor import (FrameProtocolError, FrameRouter, FrameStreamReader,
                          FrameStreamWriter, parse_endpoint, partition_rows)
from .engine import ReconWorker, UpdateEvent
from .enhance import DenoiserBinding, EnhancedSlice, PipelineStage
from .geometry import AcquisitionGeometry, make_schedule
from .metrics import (MetricsCollector, QualityRecord, ThroughputRecord,
                      make_ground_truth, save_slice_image)
from .phantoms import PHANTOM_KINDS, PhantomSpec, make_phantom, \
    make_phantom_stack
from .projector import ScaleCache, SirtConfig
from .simulate import EmissionReport, NoiseModel, simulate_scan, stream_emit

log = logging.getLogger(__name__)

DENOISER_MODES = ("none", "identity", "gaussian", "external")
SCHEDULE_KINDS = ("interleaved", "fixed")


@dataclass(frozen=True)
class RunConfig:
    """Complete description of one streaming run.

    Field names match the CLI flags one-to-one (dashes become underscores)
    so a run can be reproduced from its manifest alone.
    """

    phantom: str = "shepp_logan"
    size: int = 128
    detector_rows: int = 4
    detector_columns: int | None = None
    rotations: int = 20
    per_rotation: int = 16
    schedule: str = "interleaved"
    window: int = 16
    iterations: int = 10
    relax: float = 1.0
    workers: int = 1
    lanes: int = 1
    noise_i0: float = 1e5
    seed: int = 0
    feature_count: int = 12
    stack: bool = False
    denoiser: str = "none"
    denoiser_sigma: float = 1.5
    denoiser_endpoint: str | None = None
    denoiser_scale: str = "unit_range"
    denoiser_timeout: float = 10.0
    rate: float | None = None
    listen: str | None = None
    connect: str | None = None
    out: str | None = None
    snapshot_every: int | None = None
    ground_truth_iters: int = 100
    warm_start: bool = True
    flush_partial: bool = True
    pixel_size: float = 1.0
    angle_range: float = math.pi

    def resolved(self) -> "RunConfig":
        """Validate and fill derived defaults (columns, snapshot cadence)."""
        if self.phantom not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom {self.phantom!r}; "
                             f"choose from {PHANTOM_KINDS}")
        if self.schedule not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.schedule!r}; "
                             f"choose from {SCHEDULE_KINDS}")
        if self.denoiser not in DENOISER_MODES:
            raise ValueError(f"unknown denoiser {self.denoiser!r}; "
                             f"choose from {DENOISER_MODES}")
        if self.denoiser == "external" and not self.denoiser_endpoint:
            raise ValueError("denoiser 'external' needs --denoiser-endpoint")
        for name in ("size", "detector_rows", "rotations", "per_rotation",
                     "window", "workers", "lanes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0 or self.ground_truth_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.noise_i0 < 0:
            raise ValueError("noise_i0 must be >= 0 (0 disables noise)")
        if self.rate is not None and self.rate < 0:
            raise ValueError("rate must be positive (omit for unthrottled)")
        columns = self.detector_columns
        if columns is None:
            columns = self.size
        every = self.snapshot_every
        if every is None:
            every = 1 if self.size <= 256 else 5
        return replace(self, detector_columns=columns, snapshot_every=every)

    def geometry(self) -> AcquisitionGeometry:
        cfg = self if self.detector_columns is not None else self.resolved()
        return AcquisitionGeometry(
            detector_columns=cfg.detector_columns,
            detector_rows=cfg.detector_rows,
            rotations=cfg.rotations,
            projections_per_rotation=cfg.per_rotation,
            image_size=cfg.size,
            angle_range=cfg.angle_range,
            pixel_size=cfg.pixel_size)

    def noise_model(self) -> NoiseModel:
        if self.noise_i0 <= 0:
            return NoiseModel(enabled=False, seed=self.seed)
        return NoiseModel(incident_counts=self.noise_i0, enabled=True,
                          seed=self.seed)

    def sirt_config(self) -> SirtConfig:
        return SirtConfig(iterations=self.iterations, relaxation=self.relax)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _field_parsers() -> dict:
    """Build converters for each config field from its type annotation."""
    parsers = {}
    hints = typing.get_type_hints(RunConfig)
    for field in dataclasses.fields(RunConfig):
        hint = hints[field.name]
        optional = False
        if isinstance(hint, types.UnionType):
            args = [a for a in typing.get_args(hint) if a is not type(None)]
            if len(args) != 1:
                raise TypeError(f"unsupported config field type {hint}")
            hint = args[0]
            optional = True
        base = {bool: _parse_bool, int: int, float: float, str: str}[hint]

        def parse(raw: str, base=base, optional=optional):
            if optional and raw.strip().lower() in ("", "none", "null"):
                return None
            return base(raw)

        parsers[field.name] = parse
    return parsers


_PARSERS = _field_parsers()


def load_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines into typed config overrides.

    Keys may use either dashes or underscores; blank lines and ``#``
    comments are ignored.
    """
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, raw = text.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value, "
                             f"got {line!r}")
        name = key.strip().replace("-", "_")
        if name not in _PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown option {key.strip()!r}")
        values[name] = _PARSERS[name](raw.strip())
    return values


def make_run_config(config_file: str | Path | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then explicit overrides."""
    merged: dict = {}
    if config_file is not None:
        merged.update(load_config_file(config_file))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged)


@dataclass
class RunResult:
    """Everything a caller needs to audit one finished run."""

    config: RunConfig
    frames_streamed: int
    stream_elapsed: float
    total_elapsed: float
    update_counts: dict[int, int]
    partial_updates: int
    quality: list[QualityRecord]
    throughput: list[ThroughputRecord]
    final_images: dict[int, np.ndarray]
    final_enhanced: dict[int, np.ndarray]
    out_dir: Path | None = None

    def final_quality(self) -> dict[int, QualityRecord]:
        latest: dict[int, QualityRecord] = {}
        for record in self.quality:
            latest[record.slice_id] = record
        return latest

    def slice_curve(self, slice_id: int) -> list[QualityRecord]:
        return [q for q in self.quality if q.slice_id == slice_id]

    def mean_refresh(self, skip_first: bool = True) -> float:
        gaps = [t.refresh_seconds for t in self.throughput
                if not (skip_first and t.update_index <= 1)]
        if not gaps:
            gaps = [t.refresh_seconds for t in self.throughput]
        return float(np.mean(gaps)) if gaps else float("nan")

    def sustained_rate(self) -> float:
        if not self.throughput:
            return float("nan")
        return self.throughput[-1].sustained_rate


def _make_phantoms(config: RunConfig) -> np.ndarray:
    spec = PhantomSpec(kind=config.phantom, size=config.size,
                       seed=config.seed, feature_count=config.feature_count)
    if config.stack:
        return make_phantom_stack(spec, config.detector_rows)
    return make_phantom(spec)


def _ground_truth_images(config: RunConfig, phantoms: np.ndarray,
                         angles: np.ndarray) -> dict[int, np.ndarray]:
    """Fully converged references, one per detector row.

    Built from noiseless projections of the same phantom on the same grid,
    so streaming quality is compared against what the solver itself would
    reach with every projection available.
    """
    from .projector import forward_project

    if config.ground_truth_iters == 0:
        return {}
    truth: dict[int, np.ndarray] = {}
    if phantoms.ndim == 2:
        sino = forward_project(phantoms, angles, config.detector_columns,
                               config.pixel_size)
        image = make_ground_truth(sino, angles, config.size,
                                  iterations=config.ground_truth_iters,
                                  relaxation=config.relax,
                                  pixel_size=config.pixel_size)
        for sid in range(config.detector_rows):
            truth[sid] = image
    else:
        for sid in range(config.detector_rows):
            sino = forward_project(phantoms[sid], angles,
                                   config.detector_columns, config.pixel_size)
            truth[sid] = make_ground_truth(
                sino, angles, config.size,
                iterations=config.ground_truth_iters,
                relaxation=config.relax, pixel_size=config.pixel_size)
    return truth


def _write_manifest(config: RunConfig, out_dir: Path,
                    schedule_length: int) -> None:
    try:
        from importlib.metadata import version
        package_version = version("streamtomo")
    except Exception:
        package_version = "unknown"
    payload = {
        "package": "streamtomo",
        "version": package_version,
        "created_unix": time.time(),
        "schedule_length": schedule_length,
        "partitions": [
            [p.row_start, p.row_count]
            for p in partition_rows(config.detector_rows, config.workers)
        ],
        "config": dataclasses.asdict(config),
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2))


def _snapshot_base(out_dir: Path, slice_id: int, update_index: int,
                   kind: str) -> Path:
    return out_dir / "snapshots" / f"s{slice_id:04d}_u{update_index:04d}_{kind}"


class _MetricsSink:
    """Consumes update events on its own thread: SSIM, CSV, snapshots."""

    def __init__(self, collector: MetricsCollector, config: RunConfig,
                 out_dir: Path | None):
        self.collector = collector
        self.config = config
        self.out_dir = out_dir
        self.update_counts: dict[int, int] = {}
        self.partial_updates = 0
        self.latest: dict[int, tuple[UpdateEvent, np.ndarray,
                                     np.ndarray | None]] = {}
        self._saved: set[tuple[int, int]] = set()
        self.errors: list[BaseException] = []

    def consume(self, in_queue: "queue.Queue") -> None:
        while True:
            item = in_queue.get()
            if item is None:
                break
            if isinstance(item, EnhancedSlice):
                event, conv, enh = item.event, item.image, item.enhanced
            else:
                event, conv = item
                enh = None
            try:
                self._handle(event, conv, enh)
            except Exception as exc:  # keep draining so feeders never block
                self.errors.append(exc)
                log.exception("metrics stage failed on slice %d update %d",
                              event.slice_id, event.update_index)

    def _handle(self, event: UpdateEvent, conv: np.ndarray,
                enh: np.ndarray | None) -> None:
        self.collector.record(event, conv, enh)
        self.update_counts[event.slice_id] = \
            self.update_counts.get(event.slice_id, 0) + 1
        if event.partial:
            self.partial_updates += 1
        self.latest[event.slice_id] = (event, conv, enh)
        every = self.config.snapshot_every or 0
        if self.out_dir is not None and every > 0 \
                and event.update_index % every == 0:
            self._save(event, conv, enh)

    def _save(self, event: UpdateEvent, conv: np.ndarray,
              enh: np.ndarray | None) -> None:
        key = (event.slice_id, event.update_index)
        if key in self._saved:
            return
        self._saved.add(key)
        save_slice_image(
            _snapshot_base(self.out_dir, event.slice_id, event.update_index,
                           "conv"),
            conv, event.slice_id, event.update_index)
        if enh is not None:
            save_slice_image(
                _snapshot_base(self.out_dir, event.slice_id,
                               event.update_index, "enh"),
                enh, event.slice_id, event.update_index)

    def finish(self) -> None:
        if self.out_dir is None:
            return
        for event, conv, enh in self.latest.values():
            self._save(event, conv, enh)


def _execute(config: RunConfig, feed) -> RunResult:
    """Shared run skeleton: build everything, then let ``feed`` push frames.

    ``feed(router)`` streams frames into the distributor and returns an
    :class:`EmissionReport`; it runs on the calling thread while workers,
    the enhancement stage, and the metrics sink run on their own.
    """
    config = config.resolved()
    started = time.perf_counter()
    geometry = config.geometry()
    out_dir = Path(config.out) if config.out else None
    if out_dir is not None:
        (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
        (out_dir / "truth").mkdir(parents=True, exist_ok=True)

    schedule = make_schedule(geometry, config.schedule)
    angles = np.array([angle for _, angle in schedule], dtype=np.float64)
    phantoms = _make_phantoms(config)
    truth = _ground_truth_images(config, phantoms, angles)
    if out_dir is not None:
        _write_manifest(config, out_dir, len(schedule))
        for sid, image in truth.items():
            save_slice_image(out_dir / "truth" / f"s{sid:04d}_truth",
                             image, sid, 0)

    partitions = partition_rows(config.detector_rows, config.workers)
    router = FrameRouter(partitions)
    scale_cache = ScaleCache()
    workers = [
        ReconWorker(partition, config.size, config.detector_columns,
                    config.window, config.sirt_config(), lanes=config.lanes,
                    pixel_size=config.pixel_size,
                    warm_start=config.warm_start, scale_cache=scale_cache)
        for partition in partitions
    ]

    worker_out: "queue.Queue" = queue.Queue()
    binding = None
    if config.denoiser != "none":
        binding = DenoiserBinding(
            mode=config.denoiser, sigma=config.denoiser_sigma,
            endpoint=config.denoiser_endpoint,
            timeout=config.denoiser_timeout,
            input_scale=config.denoiser_scale)
    if binding is not None:
        metrics_queue: "queue.Queue" = queue.Queue()
        stage = PipelineStage(binding, worker_out, metrics_queue).start()
    else:
        metrics_queue = worker_out
        stage = None

    collector = MetricsCollector(
        truth, csv_path=(out_dir / "metrics.csv") if out_dir else None)
    sink = _MetricsSink(collector, config, out_dir)
    worker_errors: list[BaseException] = []

    def worker_loop(worker: ReconWorker, in_queue: "queue.Queue") -> None:
        broken = False
        while True:
            frame = in_queue.get()
            if frame is None:
                if not broken and config.flush_partial:
                    try:
                        for event in worker.flush():
                            snap = worker.snapshot(event.slice_id)
                            worker_out.put((event, snap.values))
                    except Exception as exc:
                        worker_errors.append(exc)
                break
            if broken:
                continue  # drain so the router never blocks on a dead worker
            try:
                for event in worker.push(frame):
                    snap = worker.snapshot(event.slice_id)
                    worker_out.put((event, snap.values))
            except Exception as exc:
                worker_errors.append(exc)
                log.exception("worker %d failed", worker.partition.worker_id)
                broken = True
        worker.close()

    worker_threads = [
        threading.Thread(target=worker_loop, args=(worker, router.queues[i]),
                         name=f"recon-worker-{i}", daemon=True)
        for i, worker in enumerate(workers)
    ]
    metrics_thread = threading.Thread(
        target=sink.consume, args=(metrics_queue,), name="metrics",
        daemon=True)
    for thread in worker_threads:
        thread.start()
    metrics_thread.start()

    report = EmissionReport(frames_sent=0, elapsed=0.0)
    try:
        report = feed(router)
    finally:
        router.close()
        for thread in worker_threads:
            thread.join()
        worker_out.put(None)
        if stage is not None:
            stage.join()
        metrics_thread.join()
        sink.finish()
        collector.close()

    if worker_errors:
        raise worker_errors[0]
    if sink.errors:
        raise sink.errors[0]

    total_elapsed = time.perf_counter() - started
    result = RunResult(
        config=config,
        frames_streamed=report.frames_sent,
        stream_elapsed=report.elapsed,
        total_elapsed=total_elapsed,
        update_counts=dict(sink.update_counts),
        partial_updates=sink.partial_updates,
        quality=list(collector.quality_records),
        throughput=list(collector.throughput_records),
        final_images={sid: conv for sid, (_, conv, _) in sink.latest.items()},
        final_enhanced={sid: enh for sid, (_, _, enh) in sink.latest.items()
                        if enh is not None},
        out_dir=out_dir)
    if out_dir is not None:
        _write_summary(result, out_dir)
    return result


def _write_summary(result: RunResult, out_dir: Path) -> None:
    final = result.final_quality()
    payload = {
        "frames_streamed": result.frames_streamed,
        "stream_elapsed_s": result.stream_elapsed,
        "total_elapsed_s": result.total_elapsed,
        "updates_per_slice": {str(k): v
                              for k, v in sorted(result.update_counts.items())},
        "partial_updates": result.partial_updates,
        "mean_refresh_s": result.mean_refresh(),
        "sustained_pps": result.sustained_rate(),
        "final_ssim_conv": {
            str(sid): record.ssim_conventional
            for sid, record in sorted(final.items())},
        "final_ssim_enh": {
            str(sid): record.ssim_enhanced
            for sid, record in sorted(final.items())
            if record.ssim_enhanced is not None},
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2))


def run_pipeline(config: RunConfig) -> RunResult:
    """Simulate, stream, reconstruct, and score in a single process."""
    config = config.resolved()
    frames = simulate_scan(_make_phantoms(config), config.geometry(),
                           config.noise_model(),
                           make_schedule(config.geometry(), config.schedule))
    return _execute(config, lambda router: stream_emit(frames, config.rate,
                                                       router))


def _connect_with_retry(endpoint: str, timeout: float = 5.0) -> socket.socket:
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    last_error: Exception | None = None
    while True:
        try:
            return socket.create_connection((host, port), timeout=2.0)
        except OSError as exc:
            last_error = exc
            if time.monotonic() >= deadline:
                raise ConnectionError(
                    f"cannot reach processor at {endpoint}: {exc}") from exc
            time.sleep(0.1)


def run_detector(config: RunConfig,
                 connect_timeout: float = 5.0) -> EmissionReport:
    """Simulate a scan and stream framed projections to a processor."""
    config = config.resolved()
    if not config.connect:
        raise ValueError("detector mode needs a connect endpoint")
    frames = simulate_scan(_make_phantoms(config), config.geometry(),
                           config.noise_model(),
                           make_schedule(config.geometry(), config.schedule))
    sock = _connect_with_retry(config.connect, connect_timeout)
    writer = FrameStreamWriter(sock)
    try:
        return stream_emit(frames, config.rate, writer)
    finally:
        writer.close()


def open_listener(endpoint: str) -> socket.socket:
    """Bind and listen immediately so a detector can connect while the
    processor is still preparing (the connection waits in the backlog)."""
    host, port = parse_endpoint(endpoint)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    return server


def _feed_from_socket(server: socket.socket, router: FrameRouter,
                      accept_timeout: float) -> EmissionReport:
    server.settimeout(accept_timeout)
    started = time.perf_counter()
    try:
        conn, peer = server.accept()
    except socket.timeout:
        raise TimeoutError(
            f"no detector connected within {accept_timeout:.0f}s") from None
    log.info("detector connected from %s:%d", *peer[:2])
    reader = FrameStreamReader(conn)
    received = 0
    try:
        while True:
            try:
                frame = reader.recv_frame()
            except (FrameProtocolError, OSError) as exc:
                log.warning("stream ended abnormally after %d frames: %s",
                            received, exc)
                break
            if frame is None:
                break
            router.dispatch(frame)
            received += 1
    finally:
        reader.close()
    return EmissionReport(frames_sent=received,
                          elapsed=time.perf_counter() - started)


def run_processor(config: RunConfig, accept_timeout: float = 30.0,
                  server: socket.socket | None = None) -> RunResult:
    """Receive a framed projection stream and reconstruct it.

    The listening socket is bound before any heavy preparation; pass an
    already-bound ``server`` (from :func:`open_listener`) to control the
    bind time yourself.  A detector drop mid-stream is logged, any
    partially filled windows are flushed, and the run exits cleanly.
    """
    config = config.resolved()
    if not config.listen:
        raise ValueError("processor mode needs a listen endpoint")
    own_server = server is None
    if server is None:
        server = open_listener(config.listen)
    try:
        return _execute(
            config,
            lambda router: _feed_from_socket(server, router, accept_timeout))
    finally:
        if own_server:
            server.close()


def run_grid(config: RunConfig, windows: list[int],
             iteration_counts: list[int]) -> list[tuple[int, int, RunResult]]:
    """Sweep window size and iteration count over full pipeline runs.

    Each combination writes its artifacts to ``<out>/w{W}_i{I}`` and the
    sweep summary lands in ``<out>/grid_summary.json``.
    """
    config = config.resolved()
    if not windows or not iteration_counts:
        raise ValueError("grid needs at least one window and one "
                         "iteration count")
    base_out = Path(config.out) if config.out else None
    entries: list[tuple[int, int, RunResult]] = []
    summary_rows = []
    for window in windows:
        for iterations in iteration_counts:
            sub_out = None
            if base_out is not None:
                sub_out = str(base_out / f"w{window:03d}_i{iterations:02d}")
            sub = replace(config, window=window, iterations=iterations,
                          out=sub_out)
            log.info("grid cell window=%d iterations=%d", window, iterations)
            result = run_pipeline(sub)
            entries.append((window, iterations, result))
            final = result.final_quality()
            conv = [r.ssim_conventional for r in final.values()
                    if r.ssim_conventional is not None]
            summary_rows.append({
                "window": window,
                "iterations": iterations,
                "mean_refresh_s": result.mean_refresh(),
                "sustained_pps": result.sustained_rate(),
                "final_ssim_conv_mean": float(np.mean(conv)) if conv else None,
                "out": sub_out,
            })
    if base_out is not None:
        base_out.mkdir(parents=True, exist_ok=True)
        (base_out / "grid_summary.json").write_text(
            json.dumps(summary_rows, indent=2))
    return entries
