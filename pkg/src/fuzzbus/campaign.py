"""Campaign orchestration, statistics, and scaling analysis.

run_campaign() wires the pieces together: one executor (thread or child
process), the proxy in front of it, and N producer loops, then samples
per-second statistics and reconciles every conservation counter at the
end. experiment_sweep() repeats a campaign across processor counts and
builds the exec/s-and-speedup table; predict_throughput() is the coarse
analytic model used to sanity-check measured scaling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import socket
import threading
import time
from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

from .coverage import DEFAULT_MAP_SIZE
from .executor import Executor, run_device_process
from .links import (
    FrameStream,
    SerialSimDeviceLink,
    StreamDeviceLink,
    connect_tcp,
    listen_tcp,
    make_socketpair,
)
from .processor import Processor, ProcessorOptions
from .protocol import ConfigMessage
from .proxy import Proxy
from .targets import make_harness

log = logging.getLogger(__name__)

STATS_CSV_FIELDS = ("timestamp_s", "execs_total", "crashes_total",
                    "corpus_total", "execs_per_s")


class CampaignConfigError(Exception):
    """Invalid configuration; maps to CLI exit code 1."""


class ComponentFailure(Exception):
    """A component died or the device was lost; maps to CLI exit code 2."""


@dataclass
class CampaignConfig:
    target: str
    out_dir: Path
    seed_dir: Path | None = None
    seeds: list[bytes] | None = None        # direct injection, overrides seed_dir
    processors: int = 1
    duration_s: float | None = None
    max_execs: int | None = None            # per-processor stop condition
    link: str = "stream"                    # "stream" | "serial-sim"
    latency_ms: float = 5.0
    bandwidth_bps: float = 64_000.0
    chunk: int = 64
    map_size: int = DEFAULT_MAP_SIZE
    max_payload: int = 512
    timeout_ms: float = 1000.0
    checksum_enabled: bool = True
    map_mode: int = 0                       # 0 per-processor maps, 1 shared
    rng_seed: int = 0
    mode: str = "procs"                     # "procs" | "threads"
    energy: int = 32
    retention: bool = True
    stop_on_crash: bool = False
    reset_on_crash: bool = False
    debug_dump: bool = False
    log_frames: bool = False

    def validate_and_load_seeds(self) -> list[bytes]:
        if self.processors < 1:
            raise CampaignConfigError("need at least one processor")
        has_duration = self.duration_s is not None and self.duration_s > 0
        has_cap = self.max_execs is not None and self.max_execs > 0
        if not has_duration and not has_cap:
            raise CampaignConfigError("duration must be > 0 (or set max_execs)")
        if (self.duration_s is not None and self.duration_s <= 0) or \
           (self.max_execs is not None and self.max_execs <= 0):
            raise CampaignConfigError("duration and max_execs must be positive")
        if self.link not in ("stream", "serial-sim"):
            raise CampaignConfigError(f"unknown link variant {self.link!r}")
        if self.link == "serial-sim":
            if self.latency_ms < 0 or self.bandwidth_bps <= 0:
                raise CampaignConfigError("serial-sim needs latency >= 0 and bandwidth > 0")
            if self.chunk < 16:
                raise CampaignConfigError("serial-sim chunk size must be >= 16")
        if self.mode not in ("procs", "threads"):
            raise CampaignConfigError(f"unknown launch mode {self.mode!r}")
        if self.timeout_ms <= 0:
            raise CampaignConfigError("timeout must be > 0")
        if self.energy < 1:
            raise CampaignConfigError("energy must be >= 1")
        if self.map_mode not in (0, 1):
            raise CampaignConfigError("map mode must be 0 (per-proc) or 1 (shared)")
        try:
            make_harness(self.target)
        except ValueError as exc:
            raise CampaignConfigError(str(exc)) from None
        try:
            ConfigMessage(self.map_size, self.max_payload,
                          self.checksum_enabled, self.map_mode).validate()
        except Exception as exc:
            raise CampaignConfigError(str(exc)) from None

        if self.seeds is not None:
            seeds = list(self.seeds)
        elif self.seed_dir is not None:
            seed_dir = Path(self.seed_dir)
            if not seed_dir.is_dir():
                raise CampaignConfigError(f"seed directory {seed_dir} does not exist")
            seeds = [p.read_bytes() for p in sorted(seed_dir.iterdir()) if p.is_file()]
        else:
            raise CampaignConfigError("no seeds: provide a seed directory")
        if not seeds:
            raise CampaignConfigError("seed directory is empty")
        for i, seed in enumerate(seeds):
            if not 1 <= len(seed) <= self.max_payload:
                raise CampaignConfigError(
                    f"seed #{i} is {len(seed)} bytes, must be in [1, {self.max_payload}]"
                )
        return seeds


@dataclass
class StatsRecord:
    timestamp_s: float
    execs_total: int
    crashes_total: int
    corpus_total: int
    execs_per_s: float


@dataclass
class CampaignResult:
    out_dir: Path
    elapsed_s: float
    execs_total: int
    crashes_total: int
    unique_crashes: int
    hangs_total: int
    corpus_total: int
    execs_per_s: float
    per_processor: list[dict]
    conservation: dict
    records: list[StatsRecord] = field(default_factory=list)
    session_errors: int = 0

    def summary_dict(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        d["records"] = len(self.records)
        return d


class _StatsHub:
    """Latest per-producer stats snapshot, fed locally or over TCP lines."""

    def __init__(self):
        self._latest: dict[int, dict] = {}
        self._lock = threading.Lock()
        self._listener: socket.socket | None = None
        self.port: int | None = None

    def push(self, snap: dict) -> None:
        with self._lock:
            self._latest[snap.get("processor_id", 0)] = snap

    def totals(self) -> dict:
        with self._lock:
            snaps = list(self._latest.values())
        return {
            "execs": sum(s.get("execs", 0) for s in snaps),
            "crashes": sum(s.get("crashes", 0) for s in snaps),
            "corpus": sum(s.get("corpus_size", 0) for s in snaps),
        }

    def serve_tcp(self) -> int:
        self._listener, self.port = listen_tcp()
        threading.Thread(target=self._accept_loop, name="stats-hub", daemon=True).start()
        return self.port

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn: socket.socket) -> None:
        with conn, conn.makefile("r") as lines:
            for line in lines:
                try:
                    self.push(json.loads(line))
                except (ValueError, OSError):
                    return

    def close(self) -> None:
        if self._listener is not None:
            self._listener.close()


def _processor_options(config: CampaignConfig, seeds: list[bytes],
                       stats_sink) -> ProcessorOptions:
    return ProcessorOptions(
        out_root=Path(config.out_dir),
        seeds=seeds,
        rng_seed=config.rng_seed,
        energy=config.energy,
        duration_s=config.duration_s,
        max_execs=config.max_execs,
        stop_on_crash=config.stop_on_crash,
        retention=config.retention,
        stats_sink=stats_sink,
    )


def run_processor_process(spec: dict) -> None:
    """Child-process entry point for one producer."""
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    sink = None
    stats_file = None
    if spec.get("stats_port"):
        stats_sock = connect_tcp("127.0.0.1", spec["stats_port"])
        stats_file = stats_sock.makefile("w")

        def sink(snap: dict) -> None:
            try:
                stats_file.write(json.dumps(snap) + "\n")
                stats_file.flush()
            except OSError:
                pass

    options = ProcessorOptions(
        out_root=Path(spec["out_root"]),
        seeds=[bytes(s) for s in spec["seeds"]],
        rng_seed=spec["rng_seed"],
        energy=spec["energy"],
        duration_s=spec.get("duration_s"),
        max_execs=spec.get("max_execs"),
        stop_on_crash=spec.get("stop_on_crash", False),
        retention=spec.get("retention", True),
        stats_sink=sink,
    )
    stream = FrameStream(connect_tcp("127.0.0.1", spec["proxy_port"]))
    processor = Processor(stream, options)
    try:
        processor.run()
        processor.flush_stats()
    finally:
        stream.close()
        if stats_file is not None:
            stats_file.close()


def _make_device_link(config: CampaignConfig, sock, event_log):
    if config.link == "serial-sim":
        return SerialSimDeviceLink(
            sock, config.latency_ms / 1000.0, config.bandwidth_bps, config.chunk,
            event_log=event_log,
        )
    return StreamDeviceLink(sock, event_log=event_log)


def run_campaign(config: CampaignConfig) -> CampaignResult:
    """Launch proxy, executor, and N producers; run, sample, reconcile."""
    seeds = config.validate_and_load_seeds()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in list(out.glob("*/stats.json")) + [out / "executor_stats.json"]:
        stale.unlink(missing_ok=True)
    chunk = config.chunk if config.link == "serial-sim" else 0
    config_msg = ConfigMessage(config.map_size, config.max_payload,
                               config.checksum_enabled, config.map_mode)
    event_log: list | None = [] if config.log_frames else None
    dump_path = str(out / "coverage_dump.bin") if config.debug_dump else None
    executor_stats_path = out / "executor_stats.json"

    hub = _StatsHub()
    executor_obj: Executor | None = None
    executor_thread: threading.Thread | None = None
    executor_proc = None
    executor_box: dict = {}
    proxy: Proxy | None = None
    mp = multiprocessing.get_context("spawn")

    # Device transport: the campaign side of it ends up wrapped in a
    # DeviceLink for the proxy, the device side in the executor itself.
    if config.mode == "threads":
        proxy_side, device_side = make_socketpair()
        executor_obj = Executor(
            make_harness(config.target),
            max_processors=config.processors,
            timeout_s=config.timeout_ms / 1000.0,
            reset_on_crash=config.reset_on_crash,
            debug_dump_path=dump_path,
        )
        device_stream = FrameStream(device_side, chunk_size=chunk or None)

        def _serve():
            try:
                executor_box["stats"] = executor_obj.serve(device_stream)
            except Exception as exc:  # device loss surfaces at teardown
                executor_box["error"] = exc
            finally:
                device_stream.close()

        executor_thread = threading.Thread(target=_serve, name="executor", daemon=True)
        executor_thread.start()
    else:
        device_listener, device_port = listen_tcp()
        executor_proc = mp.Process(
            target=run_device_process,
            args=({
                "target": config.target,
                "host": "127.0.0.1",
                "port": device_port,
                "max_processors": config.processors,
                "timeout_s": config.timeout_ms / 1000.0,
                "reset_on_crash": config.reset_on_crash,
                "debug_dump_path": dump_path,
                "chunk_size": chunk,
                "stats_path": str(executor_stats_path),
            },),
            daemon=True,
        )
        executor_proc.start()
        device_listener.settimeout(20)
        try:
            proxy_side, _ = device_listener.accept()
        except socket.timeout:
            executor_proc.terminate()
            raise ComponentFailure("executor process never connected") from None
        finally:
            device_listener.close()

    link = _make_device_link(config, proxy_side, event_log)
    listener, proxy_port = listen_tcp()
    proxy = Proxy(listener, link, config_msg, config.processors)
    proxy.start()

    start = time.monotonic()
    records: list[StatsRecord] = []
    proc_threads: list[threading.Thread] = []
    proc_children = []
    thread_stats: list[dict] = []

    try:
        if config.mode == "threads":
            thread_errors: list[Exception] = []

            def _run_processor(idx: int):
                try:
                    stream = FrameStream(connect_tcp("127.0.0.1", proxy_port))
                    processor = Processor(stream, _processor_options(config, seeds, hub.push))
                    try:
                        stats = processor.run()
                        processor.flush_stats()
                        thread_stats.append(stats.to_dict())
                    finally:
                        stream.close()
                except Exception as exc:
                    log.error("processor thread %d failed: %s", idx, exc)
                    thread_errors.append(exc)

            for i in range(config.processors):
                t = threading.Thread(target=_run_processor, args=(i,),
                                     name=f"processor-{i}", daemon=True)
                t.start()
                proc_threads.append(t)
        else:
            stats_port = hub.serve_tcp()
            spec = {
                "proxy_port": proxy_port,
                "stats_port": stats_port,
                "out_root": str(out),
                "seeds": seeds,
                "rng_seed": config.rng_seed,
                "energy": config.energy,
                "duration_s": config.duration_s,
                "max_execs": config.max_execs,
                "stop_on_crash": config.stop_on_crash,
                "retention": config.retention,
            }
            for _ in range(config.processors):
                child = mp.Process(target=run_processor_process, args=(spec,), daemon=True)
                child.start()
                proc_children.append(child)

        # Sample once per second until every producer is done.
        hard_cap = None
        if config.duration_s:
            hard_cap = start + config.duration_s * 3 + 60
        prev_execs, prev_t = 0, 0.0
        while True:
            if config.mode == "threads":
                alive = any(t.is_alive() for t in proc_threads)
            else:
                alive = any(p.is_alive() for p in proc_children)
            now = time.monotonic() - start
            totals = hub.totals()
            rate = (totals["execs"] - prev_execs) / (now - prev_t) if now > prev_t else 0.0
            records.append(StatsRecord(round(now, 3), totals["execs"],
                                       totals["crashes"], totals["corpus"], round(rate, 3)))
            prev_execs, prev_t = totals["execs"], now
            if not alive or proxy.device_lost:
                break
            if hard_cap is not None and time.monotonic() > hard_cap:
                raise ComponentFailure("campaign exceeded its hard time cap; aborting")
            time.sleep(1.0)

        if config.mode == "threads":
            for t in proc_threads:
                t.join(timeout=30)
        else:
            for p in proc_children:
                p.join(timeout=30)
                if p.is_alive():
                    p.terminate()
                    raise ComponentFailure("processor child failed to exit")
                if p.exitcode != 0:
                    raise ComponentFailure(f"processor child exited with {p.exitcode}")
    finally:
        elapsed = time.monotonic() - start
        proxy.stop()
        if config.mode == "threads":
            if executor_thread is not None:
                executor_thread.join(timeout=10)
        else:
            if executor_proc is not None:
                executor_proc.join(timeout=10)
                if executor_proc.is_alive():
                    executor_proc.terminate()
        hub.close()

    if proxy.device_lost:
        raise ComponentFailure("device link lost mid-campaign")
    if "error" in executor_box:
        raise ComponentFailure(f"executor failed: {executor_box['error']}")
    if config.mode == "threads" and thread_errors:
        raise ComponentFailure(f"processor failed: {thread_errors[0]}")

    # Final per-producer stats: thread mode hands back objects, process
    # mode leaves stats.json files behind.
    if config.mode == "threads":
        per_processor = sorted(thread_stats, key=lambda d: d["processor_id"])
        executor_stats = executor_obj.stats.to_dict()
        executor_stats_path.write_text(json.dumps(executor_stats))
    else:
        per_processor = []
        for pid_dir in out.iterdir():
            stats_file = pid_dir / "stats.json"
            if pid_dir.is_dir() and pid_dir.name.isdigit() and stats_file.exists():
                per_processor.append(json.loads(stats_file.read_text()))
        per_processor.sort(key=lambda d: d["processor_id"])
        if not executor_stats_path.exists():
            raise ComponentFailure("executor stats file missing after shutdown")
        executor_stats = json.loads(executor_stats_path.read_text())

    execs_total = sum(p["execs"] for p in per_processor)
    crashes_total = sum(p["crashes"] for p in per_processor)
    conservation = {
        "processor_execs": execs_total,
        "proxy_submits_forwarded": proxy.counters.submits_forwarded,
        "proxy_feedbacks_routed": proxy.counters.feedbacks_routed,
        "proxy_errors_routed": proxy.counters.errors_routed,
        "proxy_orphaned": proxy.counters.orphaned,
        "executor_processed": executor_stats["processed"],
        "executor_submit_errors": executor_stats["submit_errors"],
        "executor_init_calls": executor_stats["init_calls"],
    }
    conservation["reconciled"] = (
        execs_total == proxy.counters.submits_forwarded
        == proxy.counters.feedbacks_routed == executor_stats["processed"]
        and proxy.counters.orphaned == 0
        and executor_stats["submit_errors"] == 0
    )

    # Ensure the final row reflects the end state even for sub-second runs.
    totals = hub.totals()
    if not records or records[-1].execs_total != totals["execs"]:
        now = time.monotonic() - start
        records.append(StatsRecord(round(now, 3), totals["execs"], totals["crashes"],
                                   totals["corpus"], 0.0))

    result = CampaignResult(
        out_dir=out,
        elapsed_s=round(elapsed, 3),
        execs_total=execs_total,
        crashes_total=crashes_total,
        unique_crashes=sum(p["unique_crashes"] for p in per_processor),
        hangs_total=sum(p["hangs"] for p in per_processor),
        corpus_total=sum(p["corpus_size"] for p in per_processor),
        execs_per_s=round(execs_total / elapsed, 3) if elapsed > 0 else 0.0,
        per_processor=per_processor,
        conservation=conservation,
        records=records,
        session_errors=sum(1 for p in per_processor if p.get("session_error")),
    )
    _write_stats_csv(out / "stats.csv", records)
    (out / "summary.json").write_text(json.dumps(result.summary_dict(), indent=1))
    if event_log is not None:
        with open(out / "events.jsonl", "w") as fh:
            for event in event_log:
                fh.write(json.dumps(event) + "\n")
    return result


def _write_stats_csv(path: Path, records: list[StatsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_CSV_FIELDS)
        for r in records:
            writer.writerow([r.timestamp_s, r.execs_total, r.crashes_total,
                             r.corpus_total, r.execs_per_s])


# -- scaling analysis ---------------------------------------------------------


def speedup(baseline_execs_per_s: float, variant_execs_per_s: float) -> float:
    """Throughput ratio against the baseline configuration (unrounded)."""
    if baseline_execs_per_s <= 0:
        raise ValueError("baseline exec/s must be > 0")
    return variant_execs_per_s / baseline_execs_per_s


def round_ratio(value: float, places: int = 2) -> float:
    """Half-up display rounding, so table cells can be checked digit for digit."""
    q = Decimal(1).scaleb(-places)
    return float(Decimal(str(value)).quantize(q, rounding=ROUND_HALF_UP))


def geometric_mean(ratios) -> float:
    """exp(mean(ln r)) over the given ratios; entries must be positive."""
    ratios = list(ratios)
    if not ratios:
        raise ValueError("geometric mean of an empty set")
    if any(r <= 0 for r in ratios):
        raise ValueError("geometric mean requires positive ratios")
    return math.exp(sum(math.log(r) for r in ratios) / len(ratios))


def predict_throughput(n: int, t_host: float, t_link_tx: float,
                       t_link_rx: float, t_exec: float) -> float:
    """Coarse analytic exec/s bound for n producers over a full-duplex link.

    One producer's cycle is t_host + t_link_tx + t_exec + t_link_rx; with
    more producers the pipeline saturates at the slowest serialized stage,
    max(t_exec, t_link_tx). The estimate is the smaller of n parallel
    cycles and that ceiling.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for name, t in (("t_host", t_host), ("t_link_tx", t_link_tx),
                    ("t_link_rx", t_link_rx), ("t_exec", t_exec)):
        if t < 0:
            raise ValueError(f"{name} must be >= 0")
    t_round = t_host + t_link_tx + t_exec + t_link_rx
    t_bottleneck = max(t_exec, t_link_tx)
    if t_round == 0 or t_bottleneck == 0:
        raise ValueError("at least the executor or the uplink must take time")
    return min(n / t_round, 1.0 / t_bottleneck)


# -- sweeps and reporting -------------------------------------------------------


@dataclass
class SpeedupReport:
    """Exec/s per (target, n) with speedups and the geometric-mean row."""

    n_values: list[int]
    targets: list[str]
    execs: dict                      # (target, n) -> mean exec/s or None
    repeats: int = 1

    @property
    def baseline_n(self) -> int:
        return self.n_values[0]

    def speedup_for(self, target: str, n: int) -> float | None:
        base = self.execs.get((target, self.baseline_n))
        value = self.execs.get((target, n))
        if base is None or value is None or base <= 0:
            return None
        return speedup(base, value)

    def geometric_means(self) -> dict[int, float | None]:
        """Per-column geometric mean of speedups; targets without data for
        a column are excluded from that column."""
        out: dict[int, float | None] = {}
        for n in self.n_values:
            ratios = [self.speedup_for(t, n) for t in self.targets]
            ratios = [r for r in ratios if r is not None]
            out[n] = geometric_mean(ratios) if ratios else None
        return out

    def format_table(self) -> str:
        width = 18
        header = "target".ljust(20) + "".join(
            f"n={n}".ljust(width) for n in self.n_values)
        lines = [header, "-" * len(header)]
        for target in self.targets:
            cells = []
            for n in self.n_values:
                value = self.execs.get((target, n))
                ratio = self.speedup_for(target, n)
                if value is None:
                    cells.append("-".ljust(width))
                else:
                    shown = f"{value:.2f}"
                    if ratio is not None:
                        shown += f" ({round_ratio(ratio):.2f}x)"
                    cells.append(shown.ljust(width))
            lines.append(target.ljust(20) + "".join(cells))
        gmeans = self.geometric_means()
        cells = []
        for n in self.n_values:
            g = gmeans[n]
            cells.append(("-" if g is None else f"{round_ratio(g):.2f}x").ljust(width))
        lines.append("Total".ljust(20) + "".join(cells))
        return "\n".join(lines)


def experiment_sweep(base: CampaignConfig, n_values: list[int],
                     targets: list[str] | None = None,
                     repeats: int = 1) -> SpeedupReport:
    """Run the campaign per (target, n) and build the speedup table.

    Every run reuses the base configuration, RNG seed included, varying
    only the processor count. exec/s per cell is the arithmetic mean over
    `repeats` runs. Results land under base.out_dir with one subdirectory
    per run plus sweep.json / report.csv / table.txt.
    """
    if not n_values:
        raise CampaignConfigError("sweep needs at least one processor count")
    n_values = sorted(set(n_values))
    targets = targets or [base.target]
    sweep_dir = Path(base.out_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"n_values": n_values, "targets": targets, "repeats": repeats, "runs": []}
    execs: dict = {}
    for target in targets:
        slug = target.replace(":", "_").replace("(", "_").replace(")", "").replace("/", "_")
        for n in n_values:
            rates = []
            for rep in range(repeats):
                run_dir = sweep_dir / f"{slug}-n{n}-r{rep}"
                cfg = CampaignConfig(**{**asdict(base), "target": target,
                                        "processors": n, "out_dir": run_dir})
                result = run_campaign(cfg)
                rates.append(result.execs_per_s)
                manifest["runs"].append({
                    "target": target, "n": n, "repeat": rep,
                    "dir": run_dir.name, "execs_per_s": result.execs_per_s,
                })
            execs[(target, n)] = sum(rates) / len(rates)
    report = SpeedupReport(n_values, targets, execs, repeats)
    _write_sweep_outputs(sweep_dir, manifest, report)
    return report


def _write_sweep_outputs(sweep_dir: Path, manifest: dict, report: SpeedupReport) -> None:
    (sweep_dir / "sweep.json").write_text(json.dumps(manifest, indent=1))
    (sweep_dir / "table.txt").write_text(report.format_table() + "\n")
    with open(sweep_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "n", "execs_per_s", "speedup"])
        for target in report.targets:
            for n in report.n_values:
                value = report.execs.get((target, n))
                ratio = report.speedup_for(target, n)
                writer.writerow([
                    target, n,
                    "" if value is None else f"{value:.4f}",
                    "" if ratio is None else f"{round_ratio(ratio):.2f}",
                ])


def load_sweep_report(sweep_dir: Path) -> SpeedupReport:
    """Rebuild a SpeedupReport from a sweep directory's stored CSVs.

    exec/s is recomputed from each run's stats.csv (final cumulative count
    over its final timestamp), so the report is reproducible from the raw
    per-second data alone.
    """
    sweep_dir = Path(sweep_dir)
    manifest_path = sweep_dir / "sweep.json"
    if not manifest_path.exists():
        raise CampaignConfigError(f"{sweep_dir} has no sweep.json manifest")
    manifest = json.loads(manifest_path.read_text())
    cells: dict = {}
    for run in manifest["runs"]:
        stats_csv = sweep_dir / run["dir"] / "stats.csv"
        with open(stats_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        last = rows[-1]
        t = float(last["timestamp_s"])
        rate = float(last["execs_total"]) / t if t > 0 else 0.0
        cells.setdefault((run["target"], run["n"]), []).append(rate)
    execs = {key: sum(v) / len(v) for key, v in cells.items()}
    return SpeedupReport(manifest["n_values"], manifest["targets"], execs,
                         manifest.get("repeats", 1))
