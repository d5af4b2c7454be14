"""HTTP control plane for reconstruction runs.

The service owns a data directory and executes each submitted run on a
background thread, one subdirectory per run.  Clients poll run state,
fetch per-update quality records, and download slice images; the CLI's
``submit`` / ``status`` / ``records`` commands are thin wrappers over
these endpoints.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
import uuid
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, ConfigDict

from .metrics import read_quality_csv
from .pipeline import RunConfig, RunResult, run_pipeline

log = logging.getLogger(__name__)

# Accepted on submission but always controlled by the service itself.
_SERVER_OWNED_FIELDS = {"out", "listen", "connect"}


class RunRequest(BaseModel):
    """Run parameters; any omitted field keeps the pipeline default."""

    model_config = ConfigDict(extra="forbid")

    phantom: str | None = None
    size: int | None = None
    detector_rows: int | None = None
    detector_columns: int | None = None
    rotations: int | None = None
    per_rotation: int | None = None
    schedule: str | None = None
    window: int | None = None
    iterations: int | None = None
    relax: float | None = None
    workers: int | None = None
    lanes: int | None = None
    noise_i0: float | None = None
    seed: int | None = None
    feature_count: int | None = None
    stack: bool | None = None
    denoiser: str | None = None
    denoiser_sigma: float | None = None
    denoiser_endpoint: str | None = None
    denoiser_scale: str | None = None
    denoiser_timeout: float | None = None
    rate: float | None = None
    snapshot_every: int | None = None
    ground_truth_iters: int | None = None
    warm_start: bool | None = None
    flush_partial: bool | None = None
    pixel_size: float | None = None

    def to_config(self, out_dir: Path) -> RunConfig:
        overrides = {key: value
                     for key, value in self.model_dump().items()
                     if value is not None and key not in _SERVER_OWNED_FIELDS}
        return replace(RunConfig(**overrides), out=str(out_dir)).resolved()


class RunInfo(BaseModel):
    id: str
    state: str  # running | done | failed
    created_unix: float
    finished_unix: float | None = None
    error: str | None = None
    out_dir: str
    config: dict


class _Run:
    def __init__(self, run_id: str, config: RunConfig, out_dir: Path):
        self.id = run_id
        self.config = config
        self.out_dir = out_dir
        self.state = "running"
        self.created_unix = time.time()
        self.finished_unix: float | None = None
        self.error: str | None = None
        self.result: RunResult | None = None
        self.thread = threading.Thread(target=self._work,
                                       name=f"run-{run_id}", daemon=True)

    def _work(self) -> None:
        try:
            self.result = run_pipeline(self.config)
            self.state = "done"
        except Exception as exc:
            log.exception("run %s failed", self.id)
            self.error = str(exc)
            self.state = "failed"
        finally:
            self.finished_unix = time.time()

    def info(self) -> RunInfo:
        return RunInfo(
            id=self.id, state=self.state, created_unix=self.created_unix,
            finished_unix=self.finished_unix, error=self.error,
            out_dir=str(self.out_dir),
            config=dataclasses.asdict(self.config))


class RunRegistry:
    """Thread-safe table of runs, each executing on its own thread."""

    def __init__(self, data_dir: Path):
        self.data_dir = data_dir
        self._runs: dict[str, _Run] = {}
        self._lock = threading.Lock()

    def submit(self, request: RunRequest) -> _Run:
        run_id = uuid.uuid4().hex[:12]
        out_dir = self.data_dir / run_id
        config = request.to_config(out_dir)
        run = _Run(run_id, config, out_dir)
        with self._lock:
            self._runs[run_id] = run
        run.thread.start()
        return run

    def get(self, run_id: str) -> _Run:
        with self._lock:
            run = self._runs.get(run_id)
        if run is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown run {run_id}")
        return run

    def all(self) -> list[_Run]:
        with self._lock:
            return sorted(self._runs.values(),
                          key=lambda run: run.created_unix)


def create_app(data_dir: str | Path) -> FastAPI:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    registry = RunRegistry(data_dir)
    app = FastAPI(title="streamtomo", version="0.1.0")
    app.state.registry = registry

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/runs", response_model=RunInfo, status_code=202)
    def submit_run(request: RunRequest) -> RunInfo:
        try:
            run = registry.submit(request)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return run.info()

    @app.get("/runs", response_model=list[RunInfo])
    def list_runs() -> list[RunInfo]:
        return [run.info() for run in registry.all()]

    @app.get("/runs/{run_id}", response_model=RunInfo)
    def run_status(run_id: str) -> RunInfo:
        return registry.get(run_id).info()

    @app.get("/runs/{run_id}/records")
    def run_records(run_id: str) -> JSONResponse:
        run = registry.get(run_id)
        csv_path = run.out_dir / "metrics.csv"
        rows = read_quality_csv(csv_path) if csv_path.exists() else []
        return JSONResponse(rows)

    @app.get("/runs/{run_id}/summary")
    def run_summary(run_id: str) -> FileResponse:
        run = registry.get(run_id)
        path = run.out_dir / "summary.json"
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail="summary not available yet")
        return FileResponse(path, media_type="application/json")

    @app.get("/runs/{run_id}/manifest")
    def run_manifest(run_id: str) -> FileResponse:
        run = registry.get(run_id)
        path = run.out_dir / "manifest.json"
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail="manifest not written yet")
        return FileResponse(path, media_type="application/json")

    def _image_response(path: Path, fmt: str) -> FileResponse:
        suffix = {"raw": ".raw", "pgm": ".pgm"}[fmt]
        media = {"raw": "application/octet-stream",
                 "pgm": "image/x-portable-graymap"}[fmt]
        full = path.with_suffix(suffix)
        if not full.exists():
            raise HTTPException(status_code=404,
                                detail=f"no image at {full.name}")
        return FileResponse(full, media_type=media)

    @app.get("/runs/{run_id}/slices/{slice_id}/truth")
    def truth_image(run_id: str, slice_id: int,
                    format: str = Query("pgm", pattern="^(pgm|raw)$")
                    ) -> FileResponse:
        run = registry.get(run_id)
        return _image_response(
            run.out_dir / "truth" / f"s{slice_id:04d}_truth", format)

    @app.get("/runs/{run_id}/slices/{slice_id}/updates/{update_index}/image")
    def update_image(run_id: str, slice_id: int, update_index: int,
                     kind: str = Query("conv", pattern="^(conv|enh)$"),
                     format: str = Query("pgm", pattern="^(pgm|raw)$")
                     ) -> FileResponse:
        run = registry.get(run_id)
        base = run.out_dir / "snapshots" \
            / f"s{slice_id:04d}_u{update_index:04d}_{kind}"
        return _image_response(base, format)

    @app.get("/runs/{run_id}/slices/{slice_id}/latest")
    def latest_image(run_id: str, slice_id: int,
                     kind: str = Query("conv", pattern="^(conv|enh)$"),
                     format: str = Query("pgm", pattern="^(pgm|raw)$")
                     ) -> FileResponse:
        run = registry.get(run_id)
        pattern = f"s{slice_id:04d}_u*_{kind}.raw"
        candidates = sorted((run.out_dir / "snapshots").glob(pattern))
        if not candidates:
            raise HTTPException(status_code=404,
                                detail=f"no snapshots yet for slice "
                                       f"{slice_id} ({kind})")
        return _image_response(candidates[-1].with_suffix(""), format)

    return app
