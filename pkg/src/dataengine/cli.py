"""Console entry points: ``engine``, ``bench``, and ``mock-upstream``."""

from __future__ import annotations

import signal
import sys
import threading
from pathlib import Path

import click

from .bench import BenchConfig, emit_csv, emit_summary, render_figures, run_bench
from .config import PaginationMode
from .engine import Engine, EngineConfig
from .errors import StartupError
from .testkit import MockDataset, MockUpstream, seed_records


def _wait_for_shutdown() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    return stop


@click.command(context_settings={"auto_envvar_prefix": "ENGINE"})
@click.option("--port", default=7090, show_default=True, help="TCP port to listen on (0 = ephemeral).")
@click.option("--config-dir", type=click.Path(file_okay=False), default=None, help="Directory of *.properties protocol configs.")
@click.option("--store", "store_root", type=click.Path(file_okay=False), default="./store", show_default=True, help="Document store root directory.")
@click.option("--heartbeat-secs", default=5.0, show_default=True, help="Heartbeat interval while a job streams.")
@click.option("--delimiter", default="&&&", show_default=True, help="Request-line field delimiter.")
@click.option("--workers", default=4, show_default=True, help="Job worker pool size.")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Append engine log lines to this file.")
@click.option("--host", default="127.0.0.1", show_default=True)
def engine(port, config_dir, store_root, heartbeat_secs, delimiter, workers, log_file, host):
    """Run the data engine socket service until interrupted."""
    config = EngineConfig(
        store_root=store_root,
        config_dir=config_dir,
        listen_port=port,
        host=host,
        heartbeat_interval=heartbeat_secs,
        delimiter=delimiter,
        worker_count=workers,
        log_file=log_file,
    )
    try:
        running = Engine(config).start()
    except StartupError as exc:
        click.echo(f"startup error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"listening on {host}:{running.port}")
    sys.stdout.flush()
    stop = _wait_for_shutdown()
    stop.wait()
    running.stop()
    sys.exit(0)


@click.command()
@click.option("--threads", default="1,10,20,30,40,50,60,70,80,90", show_default=True, help="Comma-separated thread counts to sweep.")
@click.option("--duration", default=10.0, show_default=True, help="Measured seconds per run.")
@click.option("--warmup", default=2.0, show_default=True, help="Warmup seconds per run.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Write results CSV here; figures render alongside.")
@click.option("--figures/--no-figures", default=True, show_default=True, help="Render PNG figures next to the CSV.")
def bench(threads, duration, warmup, csv_path, figures):
    """Sweep the closed-loop router throughput benchmark."""
    try:
        counts = [int(t) for t in threads.split(",") if t.strip()]
        config = BenchConfig(thread_counts=counts, duration=duration, warmup=warmup)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc

    def progress(result):
        click.echo(
            f"threads={result.threads:<3} pps/thread={result.pps_per_thread:,.0f} "
            f"aggregate={result.pps_aggregate:,.0f} ns/packet={result.ns_per_packet:,.2f}"
        )

    results = run_bench(config, progress=progress)
    click.echo("")
    click.echo(emit_summary(results))
    if csv_path:
        path = Path(csv_path)
        emit_csv(results, path)
        click.echo(f"wrote {path}")
        if figures:
            for figure in render_figures(results, path.parent, stem=path.stem):
                click.echo(f"wrote {figure}")


@click.command(name="mock-upstream")
@click.option("--seed", default=25, show_default=True, help="Seeded record count per route.")
@click.option("--limit", default=10, show_default=True, help="Page size per route.")
@click.option("--mode", default="all", show_default=True, type=click.Choice(["single", "url", "incremental", "static", "all"], case_sensitive=False))
@click.option("--port", default=0, show_default=True, help="Port to bind (0 = ephemeral; bound port is printed).")
@click.option("--latency", default=0.0, show_default=True, help="Seconds of delay per request.")
@click.option("--fail-at", type=int, default=None, help="1-based request ordinal that returns status 500.")
def mock_upstream(seed, limit, mode, port, latency, fail_at):
    """Serve the hermetic mock upstream; prints the bound port and runs until interrupted."""
    modes = [m for m in PaginationMode] if mode == "all" else [PaginationMode(mode.upper())]
    datasets = [
        MockDataset(
            route=f"/{m.value.lower()}",
            records=seed_records(seed),
            mode=m,
            limit=limit,
            latency=latency,
            fail_at=fail_at,
        )
        for m in modes
    ]
    server = MockUpstream(datasets, port=port)
    click.echo(str(server.port))
    sys.stdout.flush()
    stop = _wait_for_shutdown()
    stop.wait()
    server.stop()
