"""Operator entry points: train, eval, bench, plot, worker.

``train`` is the full loop: resolve a config (file plus overrides, or an
earlier run's manifest), evolve, and write the run artifacts — stats CSV,
periodic checkpoints, the final elite genome, and a manifest.  Rerunning
from a manifest replays the recorded per-generation wall times into the
stats file, so the rerun output is byte-identical.

``eval`` scores a saved genome, ``bench`` measures farm throughput,
``plot`` draws learning curves, and ``worker`` serves evaluation modules
over TCP.  The EVOFARM_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import (ConfigError, RunConfig, apply_overrides,
                     build_run_config, config_items, load_config,
                     load_manifest, write_manifest)
from .envs import GAME_NAMES, EnvDescriptor
from .farm import (Dispatcher, DispatchError, LocalPool, WorkerClient,
                   WorkerServer, serve_worker)
from .ga import GaError, evolve, serial_evaluator, xavier_init
from .network import Genome, load_genome, save_genome
from .rng import derive_u64
from .svgplot import plot_learning_curves, write_stats_csv

__all__ = [
    "main",
    "build_parser",
    "cmd_train",
    "cmd_eval",
    "cmd_bench",
    "cmd_plot",
    "cmd_worker",
    "write_checkpoint",
    "load_checkpoint",
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_INTERRUPT",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INTERRUPT = 130  # conventional code for "stopped by SIGINT"


# -- checkpoints --------------------------------------------------------------


def write_checkpoint(path: str | Path, genome: Genome, generation: int,
                     master_seed: int) -> Path:
    path = Path(path)
    lineage = np.array(genome.lineage, dtype=np.uint64).reshape(-1, 2)
    np.savez(path, weights=genome.weights,
             genome_id=np.uint64(genome.genome_id), lineage=lineage,
             generation=np.int64(generation),
             master_seed=np.uint64(master_seed))
    return path


def load_checkpoint(path: str | Path) -> tuple[Genome, int, int]:
    """Return (elite genome, generation, master seed)."""
    with np.load(path) as z:
        lineage = tuple((int(a), int(b)) for a, b in z["lineage"])
        genome = Genome(z["weights"], genome_id=int(z["genome_id"]),
                        lineage=lineage)
        return genome, int(z["generation"]), int(z["master_seed"])


# -- train ----------------------------------------------------------------------


def _build_pool(cfg: RunConfig):
    if cfg.farm_mode == "threads":
        return LocalPool(cfg.threads, descriptor=cfg.env)
    clients = [WorkerClient(address, push=cfg.push, latency=cfg.latency)
               for address in cfg.workers]
    return Dispatcher(clients, descriptor=cfg.env)


def run_training(cfg: RunConfig, replay_walls: Sequence[float] = ()) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.ga.generations == 0:
        write_stats_csv(out / "stats.csv", [])
        write_manifest(out / "run.json", cfg, [])
        print(f"0 generations requested; wrote {out / 'stats.csv'}")
        return EXIT_OK

    stop = threading.Event()

    def _on_sigint(signum, frame):
        log.warning("interrupt: stopping after the current generation")
        stop.set()

    previous_handler = None
    try:
        previous_handler = signal.signal(signal.SIGINT, _on_sigint)
    except ValueError:
        pass  # not the main thread; rely on the caller's handling

    pool = _build_pool(cfg)
    try:
        def on_generation(gen, population, gstats):
            log.info("gen %d: elite %.3f top %.3f pop %.3f (%d frames, %.2fs)",
                     gen, gstats.elite_mean, gstats.top_mean, gstats.pop_mean,
                     gstats.frames, gstats.wall_seconds)
            if gen % cfg.checkpoint_interval == 0 or gen == cfg.ga.generations:
                write_checkpoint(out / f"ckpt_g{gen:04d}.npz", population[0],
                                 gen, cfg.ga.master_seed)

        result = evolve(cfg.ga, pool, on_generation=on_generation,
                        should_stop=stop.is_set)
    finally:
        pool.close()
        if previous_handler is not None:
            signal.signal(signal.SIGINT, previous_handler)

    rows = list(result.stats)
    for i, wall in enumerate(replay_walls[:len(rows)]):
        rows[i] = dataclasses.replace(rows[i], wall_seconds=wall)
    write_stats_csv(out / "stats.csv", rows)
    save_genome(out / "elite.gnom", result.elite)
    write_manifest(out / "run.json", cfg, [r.wall_seconds for r in rows])

    last = rows[-1].generation
    ckpt = out / f"ckpt_g{last:04d}.npz"
    if not ckpt.exists():  # interrupted off the checkpoint cadence
        write_checkpoint(ckpt, result.elite, last, cfg.ga.master_seed)

    print(f"generation {last}: elite mean {result.elite_mean:.6f}; "
          f"artifacts in {out}")
    if stop.is_set():
        return EXIT_INTERRUPT
    return EXIT_OK


def cmd_train(args) -> int:
    if bool(args.config) == bool(args.manifest):
        raise ConfigError("train: exactly one of --config or --manifest is required")
    if args.manifest:
        base, replay_walls = load_manifest(args.manifest)
        items = config_items(base)
    else:
        items = load_config(args.config)
        replay_walls = []

    overrides: dict[str, str] = {}
    for pair in args.overrides:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set {pair!r}: expected key=value")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["ga.master_seed"] = str(args.seed)
    if args.threads is not None:
        overrides["farm.mode"] = "threads"
        overrides["farm.threads"] = str(args.threads)
    if args.workers:
        overrides["farm.mode"] = "workers"
        overrides["farm.workers"] = args.workers
    if args.out:
        overrides["out.dir"] = args.out

    cfg = build_run_config(apply_overrides(items, overrides))
    return run_training(cfg, replay_walls)


# -- eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise ConfigError(f"eval: --episodes must be at least 1, got {args.episodes}")
    genome = load_genome(args.genome)
    descriptor = EnvDescriptor(game_id=GAME_NAMES[args.env])
    evaluate = serial_evaluator(descriptor)
    records = evaluate([(genome, args.seed + i) for i in range(args.episodes)])
    for rec in records:
        print(f"seed {rec.eval_seed}: score {rec.score} "
              f"({rec.frames} frames, {rec.termination})")
    scores = [rec.score for rec in records]
    mean = sum(scores) / len(scores)
    var = sum((s - mean) ** 2 for s in scores) / len(scores)
    print(f"mean {mean:.6f} variance {var:.6f}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------------------

# fixed-length episodes: the cap sets work per job, never reached by play
_BENCH_DROPS = 1000


def cmd_bench(args) -> int:
    if args.duration <= 0:
        raise ConfigError(f"bench: --duration must be positive, got {args.duration}")
    if args.frame_cap < 1:
        raise ConfigError(f"bench: --frame-cap must be positive, got {args.frame_cap}")
    descriptor = EnvDescriptor(game_id=GAME_NAMES["catch"],
                               frame_cap=args.frame_cap,
                               params={"drops": _BENCH_DROPS})
    push = args.mode == "push"
    servers: list[WorkerServer] = []
    pool = None
    try:
        if args.threads:
            pool = LocalPool(args.threads, descriptor=descriptor)
            slots = args.threads
            label = f"{args.threads} thread(s) in-process"
        else:
            if args.workers:
                addresses = [a.strip() for a in args.workers.split(",") if a.strip()]
            else:
                servers = [WorkerServer().start() for _ in range(2)]
                addresses = [server.address for server in servers]
            clients = [WorkerClient(address, push=push, latency=args.latency)
                       for address in addresses]
            pool = Dispatcher(clients, descriptor=descriptor)
            slots = sum(client.module_count for client in clients)
            label = (f"{len(addresses)} worker(s), {slots} modules, "
                     f"mode {args.mode}, latency {args.latency * 1e3:.1f} ms")

        genomes = [xavier_init(derive_u64(0, "bench", i), genome_id=i + 1)
                   for i in range(slots)]
        frames = 0
        episodes = 0
        seed = 0
        t0 = time.monotonic()
        while time.monotonic() - t0 < args.duration:
            jobs = [(genomes[i % len(genomes)], seed + i)
                    for i in range(2 * slots)]
            seed += len(jobs)
            records = pool.evaluate(jobs)
            frames += sum(rec.frames for rec in records)
            episodes += len(records)
        elapsed = time.monotonic() - t0
        stats = pool.stats()

        print(f"bench: {label}")
        print(f"  {episodes} episodes, {frames} frames in {elapsed:.2f} s "
              f"-> {frames / elapsed:.1f} frames/sec")
        print(f"  farm aggregate {stats.aggregate_fps:.1f} frames/sec, "
              f"in {stats.bytes_in} B, out {stats.bytes_out} B")
        for address in sorted(stats.per_worker_fps):
            print(f"  {address}: {stats.per_worker_fps[address]:.1f} frames/sec")
        return EXIT_OK
    finally:
        if pool is not None:
            pool.close()
        for server in servers:
            server.close()


# -- plot / worker ----------------------------------------------------------------


def cmd_plot(args) -> int:
    out = plot_learning_curves(args.csvs, args.out, title=args.title)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_worker(args) -> int:
    frame_cap_limit = None
    if args.env_config:
        items = load_config(args.env_config)
        raw = items.get("env.frame_cap")
        if raw is not None:
            frame_cap_limit = int(raw)
    server = serve_worker(args.bind, args.modules,
                          frame_cap_limit=frame_cap_limit)
    print(f"worker listening on {server.address} "
          f"({args.modules} modules)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evofarm",
        description="neuroevolution trainer with a farmed-out fitness loop")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="evolve and write run artifacts")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--manifest", help="rerun from an earlier run's manifest")
    p.add_argument("--seed", type=int, help="override ga.master_seed")
    p.add_argument("--threads", type=int, help="in-process farm width")
    p.add_argument("--workers", help="comma-separated worker host:port list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved genome")
    p.add_argument("--genome", required=True, help="genome file")
    p.add_argument("--env", default="catch", choices=sorted(GAME_NAMES))
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0,
                   help="first episode seed; episode i uses seed+i")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure farm throughput")
    p.add_argument("--mode", choices=("polling", "push"), default="polling")
    p.add_argument("--duration", type=float, default=2.0, help="seconds")
    p.add_argument("--threads", type=int,
                   help="bench the in-process pool instead of workers")
    p.add_argument("--workers",
                   help="host:port list; spawns two loopback workers if unset")
    p.add_argument("--latency", type=float, default=0.0,
                   help="injected per-poll latency in seconds")
    p.add_argument("--frame-cap", dest="frame_cap", type=int, default=150,
                   help="frames per episode (sets job granularity)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="render learning curves to SVG")
    p.add_argument("csvs", nargs="+", help="stats CSV files")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("worker", help="serve evaluation modules over TCP")
    p.add_argument("--bind", required=True, help="host:port (port 0 = ephemeral)")
    p.add_argument("--modules", type=int, default=2)
    p.add_argument("--env-config", dest="env_config",
                   help="config whose env.frame_cap caps accepted jobs")
    p.set_defaults(func=cmd_worker)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("EVOFARM_LOG", "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname).1s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GaError, DispatchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
