#!/usr/bin/env python3
"""Polling vs push throughput across injected poll latencies.

Spawns two loopback workers per trial and measures farm frames/sec with
short fixed-length episodes, where completion-detection cost dominates.
Polling pays the injected latency once per status poll; push mode never
polls, so the gap widens with latency.
"""

import argparse
import time

from evofarm.envs import GAME_NAMES, EnvDescriptor
from evofarm.farm import Dispatcher, WorkerClient, WorkerServer
from evofarm.ga import xavier_init
from evofarm.rng import derive_u64


def run_trial(mode: str, latency: float, duration: float, frame_cap: int) -> float:
    descriptor = EnvDescriptor(game_id=GAME_NAMES["catch"], frame_cap=frame_cap,
                               params={"drops": 1000})
    servers = [WorkerServer().start() for _ in range(2)]
    clients = [WorkerClient(s.address, push=(mode == "push"), latency=latency)
               for s in servers]
    dispatcher = Dispatcher(clients, descriptor=descriptor)
    slots = sum(c.module_count for c in clients)
    genomes = [xavier_init(derive_u64(0, "bench", i), genome_id=i + 1)
               for i in range(slots)]
    try:
        frames = 0
        seed = 0
        t0 = time.monotonic()
        while time.monotonic() - t0 < duration:
            jobs = [(genomes[i % slots], seed + i) for i in range(2 * slots)]
            seed += len(jobs)
            frames += sum(r.frames for r in dispatcher.evaluate(jobs))
        return frames / (time.monotonic() - t0)
    finally:
        dispatcher.close()
        for s in servers:
            s.close()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--frame-cap", type=int, default=4)
    ap.add_argument("--latencies", type=float, nargs="+",
                    default=[0.0, 0.0005, 0.001, 0.002])
    args = ap.parse_args()

    print(f"{'latency':>9}  {'polling fps':>12}  {'push fps':>12}  {'push/poll':>9}")
    for latency in args.latencies:
        poll = run_trial("polling", latency, args.duration, args.frame_cap)
        push = run_trial("push", latency, args.duration, args.frame_cap)
        print(f"{latency * 1e3:7.1f}ms  {poll:12.1f}  {push:12.1f}  "
              f"{push / poll:9.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
