"""Closed-loop throughput benchmark for the router bus.

Each worker thread sends a one-pair packet to an echo process on a second
router and waits for the synchronous Response, repeating for the measured
window. The sweep reports packets/sec per thread (averaged across threads),
the aggregate across all threads, and ns/packet = 1e9 / pps_per_thread.

Reports are a CSV plus two rendered figures: the per-thread view and the
aggregate view of the same sweep.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .bus import Packet, Response, Router

DEFAULT_THREAD_COUNTS = (1, 10, 20, 30, 40, 50, 60, 70, 80, 90)
_PAYLOAD = "0123456789abcdef"  # 16-byte text payload

CSV_COLUMNS = ("threads", "pps_per_thread", "pps_aggregate", "ns_per_packet")


@dataclass
class BenchConfig:
    thread_counts: Sequence[int] = DEFAULT_THREAD_COUNTS
    duration: float = 10.0
    warmup: float = 2.0

    def __post_init__(self):
        counts = list(self.thread_counts)
        if not counts or any(c < 1 for c in counts):
            raise ValueError("thread_counts must be positive")
        if counts != sorted(set(counts)):
            raise ValueError("thread_counts must be strictly increasing")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        self.thread_counts = counts


@dataclass(frozen=True)
class BenchResult:
    threads: int
    pps_per_thread: float
    pps_aggregate: float
    ns_per_packet: float

    @classmethod
    def from_counts(cls, threads: int, counts: Sequence[int], duration: float) -> "BenchResult":
        pps_per_thread = sum(c / duration for c in counts) / len(counts)
        return cls(
            threads=threads,
            pps_per_thread=pps_per_thread,
            pps_aggregate=pps_per_thread * threads,
            ns_per_packet=1e9 / pps_per_thread,
        )


def _echo(packet: Packet) -> Response:
    return Response.ok(data=packet.data.get("payload"))


def _bench_pair() -> Router:
    """Two connected routers; returns the sender side."""
    source = Router("BENCH-A")
    sink = Router("BENCH-B")
    source.connect(sink)
    sink.register_process("ECHO", _echo)
    return source


def _run_one(threads: int, duration: float, warmup: float) -> BenchResult:
    source = _bench_pair()
    registry = source.registry
    assert registry is not None
    packet = Packet(sender="BENCH-A", tag="BENCH-B", sub_tag="ECHO", data={"payload": _PAYLOAD})
    counts = [0] * threads
    deadlines: dict[str, float] = {}

    def set_deadlines():
        now = time.monotonic()
        deadlines["warm"] = now + warmup
        deadlines["measure"] = now + warmup + duration

    barrier = threading.Barrier(threads, action=set_deadlines)

    def worker(slot: int):
        send = registry.send
        barrier.wait()
        warm_end, measure_end = deadlines["warm"], deadlines["measure"]
        while time.monotonic() < warm_end:
            send(packet)
        count = 0
        while time.monotonic() < measure_end:
            send(packet)
            count += 1
        counts[slot] = count

    workers = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(threads)]
    for thread in workers:
        thread.start()
    for thread in workers:
        thread.join()
    return BenchResult.from_counts(threads, counts, duration)


def run_bench(config: BenchConfig, progress: Callable[[BenchResult], None] | None = None) -> list[BenchResult]:
    """Run the full sweep; one closed-loop run per configured thread count."""
    results = []
    for threads in config.thread_counts:
        result = _run_one(threads, config.duration, config.warmup)
        results.append(result)
        if progress is not None:
            progress(result)
    return results


def emit_csv(results: Sequence[BenchResult], path: str | Path):
    if not results:
        raise ValueError("no results to emit")
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in results:
                writer.writerow([r.threads, repr(r.pps_per_thread), repr(r.pps_aggregate), repr(r.ns_per_packet)])
    except OSError as exc:
        raise IOError(f"cannot write CSV to {path}: {exc}") from exc


def load_csv(path: str | Path) -> list[BenchResult]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            BenchResult(
                threads=int(row["threads"]),
                pps_per_thread=float(row["pps_per_thread"]),
                pps_aggregate=float(row["pps_aggregate"]),
                ns_per_packet=float(row["ns_per_packet"]),
            )
            for row in reader
        ]


def emit_summary(results: Sequence[BenchResult]) -> str:
    """Two views of the sweep: per-thread throughput and aggregate throughput."""
    if not results:
        raise ValueError("no results to summarize")
    lines = ["Packets per second per thread", "  threads    pps/thread     ns/packet"]
    for r in results:
        lines.append(f"  {r.threads:>7}  {r.pps_per_thread:>12,.0f}  {r.ns_per_packet:>12,.2f}")
    lines.append("")
    lines.append("Packets per second across all active threads")
    lines.append("  threads     aggregate pps")
    for r in results:
        lines.append(f"  {r.threads:>7}  {r.pps_aggregate:>16,.0f}")
    return "\n".join(lines)


def render_figures(results: Sequence[BenchResult], directory: str | Path, stem: str = "bench") -> list[Path]:
    """Render the per-thread and aggregate views as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not results:
        raise ValueError("no results to plot")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    threads = [r.threads for r in results]
    views = (
        ("per_thread", [r.pps_per_thread for r in results], "Packets/sec per thread"),
        ("aggregate", [r.pps_aggregate for r in results], "Packets/sec across all threads"),
    )
    paths = []
    for suffix, values, ylabel in views:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(threads, values, marker="o")
        ax.set_xlabel("Concurrent threads")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = directory / f"{stem}_{suffix}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        paths.append(out)
    return paths
