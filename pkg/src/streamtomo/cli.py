"""Command-line front end.

``run``, ``detector``, ``processor``, and ``grid`` drive the pipeline
directly; ``serve`` starts the HTTP control plane and ``submit`` /
``status`` / ``records`` are thin clients for it.

Exit codes: 0 on success, 2 for usage errors (bad flags or config), 3 for
runtime failures (unreachable peers, stream faults).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .phantoms import PHANTOM_KINDS
from .pipeline import (DENOISER_MODES, SCHEDULE_KINDS, RunConfig,
                       make_run_config, run_detector, run_grid, run_pipeline,
                       run_processor)

log = logging.getLogger(__name__)

EXIT_RUNTIME = 3


def _run_options(fn):
    """Attach the shared run-configuration flags to a command."""
    options = [
        click.option("--config", "config", default=None,
                     type=click.Path(exists=True, dir_okay=False),
                     help="key=value config file; explicit flags win"),
        click.option("--phantom", type=click.Choice(PHANTOM_KINDS),
                     default=None, help="test object to scan"),
        click.option("--size", type=int, default=None,
                     help="reconstruction grid side length"),
        click.option("--detector-rows", type=int, default=None,
                     help="detector rows (one slice per row)"),
        click.option("--detector-columns", type=int, default=None,
                     help="detector columns (defaults to --size)"),
        click.option("--rotations", type=int, default=None,
                     help="number of rotations in the scan"),
        click.option("--per-rotation", type=int, default=None,
                     help="projections per rotation"),
        click.option("--schedule", type=click.Choice(SCHEDULE_KINDS),
                     default=None, help="angle ordering across rotations"),
        click.option("--window", type=int, default=None,
                     help="projections per reconstruction window"),
        click.option("--iterations", type=int, default=None,
                     help="solver iterations per window"),
        click.option("--relax", type=float, default=None,
                     help="solver relaxation factor in (0, 2)"),
        click.option("--workers", type=int, default=None,
                     help="row-partition worker count"),
        click.option("--lanes", type=int, default=None,
                     help="parallel lanes inside each solver update"),
        click.option("--noise-i0", type=float, default=None,
                     help="incident photons per ray; 0 disables noise"),
        click.option("--seed", type=int, default=None,
                     help="random seed for phantom and noise"),
        click.option("--feature-count", type=int, default=None,
                     help="feature count for randomized phantoms"),
        click.option("--stack/--no-stack", "stack", default=None,
                     help="distinct phantom slice per detector row"),
        click.option("--denoiser", type=click.Choice(DENOISER_MODES),
                     default=None, help="enhancement applied to each update"),
        click.option("--denoiser-sigma", type=float, default=None,
                     help="kernel width for the gaussian denoiser"),
        click.option("--denoiser-endpoint", default=None,
                     help="host:port of an external denoiser"),
        click.option("--denoiser-scale",
                     type=click.Choice(["unit_range", "raw"]), default=None,
                     help="image scaling handed to an external denoiser"),
        click.option("--rate", type=float, default=None,
                     help="emission rate in projections/s (omit: unthrottled)"),
        click.option("--out", default=None,
                     type=click.Path(file_okay=False),
                     help="run directory for manifest, CSV, and snapshots"),
        click.option("--snapshot-every", type=int, default=None,
                     help="save every k-th update image (0 disables)"),
        click.option("--ground-truth-iters", type=int, default=None,
                     help="solver iterations for the reference image "
                          "(0 skips quality scoring)"),
        click.option("--warm-start/--cold-start", "warm_start", default=None,
                     help="carry each slice image across windows"),
        click.option("--flush-partial/--no-flush-partial", "flush_partial",
                     default=None,
                     help="reconstruct leftover projections at end of stream"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _build_config(kwargs: dict, **extra) -> RunConfig:
    config_file = kwargs.pop("config", None)
    kwargs.update({k: v for k, v in extra.items() if v is not None})
    try:
        config = make_run_config(config_file, kwargs)
        return config.resolved()
    except (ValueError, TypeError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc


def _fail(exc: BaseException):
    log.debug("fatal error", exc_info=exc)
    click.echo(f"error: {exc}", err=True)
    sys.exit(EXIT_RUNTIME)


def _print_run_summary(result) -> None:
    click.echo(f"streamed {result.frames_streamed} frames "
               f"in {result.stream_elapsed:.2f}s")
    for sid, record in sorted(result.final_quality().items()):
        parts = [f"slice {sid}: updates={result.update_counts.get(sid, 0)}"]
        if record.ssim_conventional is not None:
            parts.append(f"ssim_conv={record.ssim_conventional:.4f}")
        if record.ssim_enhanced is not None:
            parts.append(f"ssim_enh={record.ssim_enhanced:.4f}")
        click.echo("  " + " ".join(parts))
    click.echo(f"mean refresh {result.mean_refresh():.3f}s, "
               f"sustained {result.sustained_rate():.2f} projections/s")
    if result.out_dir is not None:
        click.echo(f"artifacts: {result.out_dir}")


@click.group()
@click.option("-v", "--verbose", count=True,
              help="-v for progress, -vv for debug detail")
@click.version_option(package_name="streamtomo", prog_name="streamtomo")
def main(verbose: int) -> None:
    """Streaming tomographic reconstruction with sliding-window updates."""
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@_run_options
def run(**kwargs) -> None:
    """Simulate, stream, and reconstruct in a single process."""
    config = _build_config(kwargs)
    try:
        result = run_pipeline(config)
    except Exception as exc:
        _fail(exc)
    _print_run_summary(result)


@main.command()
@_run_options
@click.option("--connect", required=True,
              help="host:port of the listening processor")
@click.option("--connect-timeout", type=float, default=5.0, show_default=True,
              help="seconds to keep retrying the first connection")
def detector(connect_timeout: float, **kwargs) -> None:
    """Simulate a scan and stream framed projections to a processor."""
    config = _build_config(kwargs)
    try:
        report = run_detector(config, connect_timeout=connect_timeout)
    except Exception as exc:
        _fail(exc)
    click.echo(f"sent {report.frames_sent} frames in {report.elapsed:.2f}s")


@main.command()
@_run_options
@click.option("--listen", required=True,
              help="host:port to accept the detector stream on")
@click.option("--accept-timeout", type=float, default=30.0, show_default=True,
              help="seconds to wait for a detector to connect")
def processor(accept_timeout: float, **kwargs) -> None:
    """Receive a framed projection stream and reconstruct it."""
    config = _build_config(kwargs)
    try:
        result = run_processor(config, accept_timeout=accept_timeout)
    except Exception as exc:
        _fail(exc)
    _print_run_summary(result)


def _parse_int_list(raw: str, what: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise click.UsageError(f"{what} must be comma-separated integers, "
                               f"got {raw!r}") from exc
    if not values:
        raise click.UsageError(f"{what} must not be empty")
    return values


@main.command()
@_run_options
@click.option("--windows", default="16,64", show_default=True,
              help="comma-separated window sizes to sweep")
@click.option("--iteration-counts", default="1,10", show_default=True,
              help="comma-separated iteration counts to sweep")
def grid(windows: str, iteration_counts: str, **kwargs) -> None:
    """Sweep window size and iteration count over full runs."""
    config = _build_config(kwargs)
    window_list = _parse_int_list(windows, "--windows")
    iteration_list = _parse_int_list(iteration_counts, "--iteration-counts")
    try:
        entries = run_grid(config, window_list, iteration_list)
    except Exception as exc:
        _fail(exc)
    click.echo(f"{'window':>6} {'iters':>5} {'refresh_s':>10} "
               f"{'sustained':>10} {'ssim_conv':>10}")
    for window, iterations, result in entries:
        final = result.final_quality()
        conv = [r.ssim_conventional for r in final.values()
                if r.ssim_conventional is not None]
        mean_conv = sum(conv) / len(conv) if conv else float("nan")
        click.echo(f"{window:>6d} {iterations:>5d} "
                   f"{result.mean_refresh():>10.3f} "
                   f"{result.sustained_rate():>10.2f} {mean_conv:>10.4f}")
    if config.out:
        click.echo(f"grid summary: {Path(config.out) / 'grid_summary.json'}")


@main.command()
@click.option("--listen", default="127.0.0.1:8000", show_default=True,
              help="host:port for the HTTP control plane")
@click.option("--data-dir", default="runs", show_default=True,
              type=click.Path(file_okay=False),
              help="directory that stores one subdirectory per run")
def serve(listen: str, data_dir: str) -> None:
    """Start the HTTP service that owns and executes runs."""
    import uvicorn

    from .distributor import parse_endpoint
    from .service import create_app

    try:
        host, port = parse_endpoint(listen)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    app = create_app(data_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except Exception as exc:
        _fail(exc)


def _client(server: str):
    import httpx

    return httpx.Client(base_url=server, timeout=30.0)


@main.command()
@_run_options
@click.option("--server", default="http://127.0.0.1:8000", show_default=True,
              help="base URL of a running service")
def submit(server: str, **kwargs) -> None:
    """Submit a run to the service and print its id."""
    from .pipeline import load_config_file

    config_file = kwargs.pop("config", None)
    try:
        overrides = dict(load_config_file(config_file)) if config_file else {}
    except (ValueError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc
    overrides.update({k: v for k, v in kwargs.items() if v is not None})
    try:
        with _client(server) as client:
            response = client.post("/runs", json=overrides)
            response.raise_for_status()
            body = response.json()
    except Exception as exc:
        _fail(exc)
    click.echo(body["id"])


@main.command()
@click.argument("run_id")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
def status(run_id: str, server: str) -> None:
    """Show the state and summary of a submitted run."""
    try:
        with _client(server) as client:
            response = client.get(f"/runs/{run_id}")
            if response.status_code == 404:
                click.echo(f"error: unknown run {run_id}", err=True)
                sys.exit(EXIT_RUNTIME)
            response.raise_for_status()
            body = response.json()
    except SystemExit:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(json.dumps(body, indent=2))


@main.command()
@click.argument("run_id")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
@click.option("--raw", is_flag=True, help="print rows as JSON lines")
def records(run_id: str, server: str, raw: bool) -> None:
    """Print the per-update quality and throughput records of a run."""
    try:
        with _client(server) as client:
            response = client.get(f"/runs/{run_id}/records")
            if response.status_code == 404:
                click.echo(f"error: unknown run {run_id}", err=True)
                sys.exit(EXIT_RUNTIME)
            response.raise_for_status()
            rows = response.json()
    except SystemExit:
        raise
    except Exception as exc:
        _fail(exc)
    if raw:
        for row in rows:
            click.echo(json.dumps(row))
        return
    header = (f"{'slice':>5} {'update':>6} {'t_s':>9} {'proj':>6} "
              f"{'ssim_conv':>9} {'ssim_enh':>9} {'refresh':>8} {'pps':>8}")
    click.echo(header)
    for row in rows:
        enh = row.get("ssim_enh")
        conv = row.get("ssim_conv")
        click.echo(
            f"{row['slice_id']:>5} {row['update_index']:>6} "
            f"{row['t_seconds']:>9.3f} {row['projections']:>6} "
            f"{'' if conv is None else format(conv, '.4f'):>9} "
            f"{'' if enh is None else format(enh, '.4f'):>9} "
            f"{row['refresh_s']:>8.3f} {row['sustained_pps']:>8.2f}")


if __name__ == "__main__":
    main()
