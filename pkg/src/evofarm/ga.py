"""Truncation-selection genetic algorithm over quantized genomes.

One generation evaluates N-1 fresh genomes (Xavier draws in generation 1,
mutated children of uniformly sampled top-T parents afterwards), ranks them
by score, then picks the elite as the best mean over ``reevals`` fresh
episodes among the top-T plus the previous elite.  The new population is the
elite at position 0 followed by the ranked children, so it always holds
exactly N entries with exactly one elite slot.

Every random draw is keyed by (master seed, purpose tag, generation, slot)
through a counter-based generator, so results are independent of evaluation
order, thread count, and farm topology, and any genome can be rebuilt from
its lineage alone.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .fixedpoint import WEIGHT_FORMAT, quantize_array
from .network import Genome, NetworkSpec, default_spec
from .rng import derive_u64, keyed_generator

__all__ = [
    "GaConfig",
    "GenerationStats",
    "GaResult",
    "GaError",
    "xavier_init",
    "mutate",
    "rebuild",
    "serial_evaluator",
    "evolve",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    """Evolution hyper-parameters; defaults match the stock training setup."""

    population: int = 1001
    truncation: int = 20
    elites: int = 1
    mutation_power: float = 0.002
    reevals: int = 5
    generations: int = 10
    master_seed: int = 0
    spec: NetworkSpec | None = None

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError(f"population must be at least 2, got {self.population}")
        if not 1 <= self.truncation < self.population:
            raise ValueError(
                f"truncation must be in [1, population), got {self.truncation}")
        if self.elites != 1:
            raise ValueError(f"exactly one elite is preserved, got elites={self.elites}")
        if self.mutation_power < 0.0:
            raise ValueError(f"mutation power must be non-negative, got {self.mutation_power}")
        if self.reevals < 1:
            raise ValueError(f"reevals must be at least 1, got {self.reevals}")
        if self.generations < 0:
            raise ValueError(f"generations must be non-negative, got {self.generations}")

    def network_spec(self) -> NetworkSpec:
        return self.spec if self.spec is not None else default_spec()


@dataclass(frozen=True)
class GenerationStats:
    """Scores and cost of one generation.

    ``elite_mean`` is the winning candidate's re-evaluation mean; ``top_mean``
    and ``pop_mean`` average the single-episode scores of the top-T and of all
    N-1 fresh genomes; ``frames`` counts every environment frame consumed,
    re-evaluations included.
    """

    generation: int
    elite_mean: float
    top_mean: float
    pop_mean: float
    frames: int
    wall_seconds: float


@dataclass(frozen=True)
class GaResult:
    elite: Genome
    population: list[Genome]
    stats: list[GenerationStats]
    elite_mean: float


class GaError(RuntimeError):
    """Evaluation failed; carries whatever completed before the abort."""

    def __init__(self, message: str, *, stats: list | None = None,
                 elite: Genome | None = None) -> None:
        super().__init__(message)
        self.stats = list(stats) if stats else []
        self.elite = elite


def xavier_init(seed: int, spec: NetworkSpec | None = None, *,
                genome_id: int = 0) -> Genome:
    """Draw layer-wise Uniform(+-sqrt(6/(fan_in+fan_out))) weights, quantized."""
    spec = spec if spec is not None else default_spec()
    chunks = []
    for li, layer in enumerate(spec.layers):
        bound = float(np.sqrt(6.0 / (layer.fan_in + layer.fan_out)))
        gen = keyed_generator(seed, "init", li)
        chunks.append(gen.uniform(-bound, bound, size=layer.weight_count))
    raw = quantize_array(np.concatenate(chunks), WEIGHT_FORMAT)
    return Genome(raw, genome_id=genome_id, lineage=((0, seed),))


def mutate(parent: Genome, seed: int, power: float, *,
           genome_id: int = 0) -> Genome:
    """Add N(0, power^2) noise in real weight space and requantize."""
    noise = keyed_generator(seed, "mutate").standard_normal(parent.weights.size)
    vals = parent.weights * 2.0 ** -parent.fmt.radix + power * noise
    raw = quantize_array(vals, parent.fmt)
    lineage = parent.lineage + ((parent.genome_id, seed),)
    return Genome(raw, genome_id=genome_id, lineage=lineage)


def rebuild(lineage: tuple[tuple[int, int], ...], power: float,
            spec: NetworkSpec | None = None, *, genome_id: int = 0) -> Genome:
    """Replay a lineage (init seed, then mutation seeds) into a genome.

    Bit-exact with the original as long as ``power`` and ``spec`` match the
    run that produced it; the stored parent ids are audit trail only.
    """
    if not lineage or lineage[0][0] != 0:
        raise ValueError("lineage must start with an init entry (parent id 0)")
    genome = xavier_init(lineage[0][1], spec)
    for _pid, seed in lineage[1:]:
        genome = mutate(genome, seed, power)
    return Genome(genome.weights, genome_id=genome_id, lineage=tuple(lineage))


def serial_evaluator(descriptor, *, palette=None, stickiness: float | None = None):
    """Wrap run_episode as an in-process fitness handle (jobs -> records)."""
    from .evalmod import STICKINESS, run_episode

    sigma = STICKINESS if stickiness is None else stickiness

    def evaluate(jobs):
        return [run_episode(genome, descriptor, seed, palette=palette,
                            stickiness=sigma) for genome, seed in jobs]

    return evaluate


def _run_jobs(evaluator, jobs):
    fn = getattr(evaluator, "evaluate", evaluator)
    records = list(fn(list(jobs)))
    if len(records) != len(jobs):
        raise GaError(f"evaluator returned {len(records)} records for {len(jobs)} jobs")
    for rec, (genome, seed) in zip(records, jobs):
        if rec.genome_id != genome.genome_id or rec.eval_seed != seed:
            raise GaError(
                f"record {rec.genome_id}/{rec.eval_seed} does not match "
                f"job {genome.genome_id}/{seed}")
    return records


def evolve(cfg: GaConfig, evaluator, *, on_generation=None, should_stop=None) -> GaResult:
    """Run the full evolution loop and return the final elite plus stats.

    ``evaluator`` is either a callable or an object with ``evaluate``,
    mapping a list of (genome, eval_seed) jobs to FitnessRecords in job
    order.  ``on_generation(gen, population, stats)`` fires after each
    generation; ``should_stop()`` is polled between generations for early
    shutdown (the returned result covers the completed generations).
    """
    spec = cfg.network_spec()
    master = cfg.master_seed
    population: list[Genome] = []
    elite: Genome | None = None
    elite_mean = float("-inf")
    stats: list[GenerationStats] = []
    next_id = 1

    for gen in range(1, cfg.generations + 1):
        t0 = time.perf_counter()
        births = cfg.population - 1
        if gen == 1:
            children = [
                xavier_init(derive_u64(master, "init", slot), spec,
                            genome_id=next_id + slot)
                for slot in range(births)
            ]
        else:
            parents = population[:cfg.truncation]
            children = []
            for slot in range(births):
                pick = int(keyed_generator(master, "parent", gen, slot)
                           .integers(len(parents)))
                seed = derive_u64(master, "mutate", gen, slot)
                children.append(mutate(parents[pick], seed, cfg.mutation_power,
                                       genome_id=next_id + slot))
        next_id += births

        jobs = [(child, derive_u64(master, "eval", gen, slot))
                for slot, child in enumerate(children)]
        try:
            records = _run_jobs(evaluator, jobs)
            frames = sum(r.frames for r in records)
            score = {r.genome_id: r.score for r in records}
            ranked = sorted(children, key=lambda g: (-score[g.genome_id], g.genome_id))

            candidates = list(ranked[:cfg.truncation])
            if elite is not None:
                candidates.append(elite)
            means: list[tuple[float, Genome]] = []
            for ci, cand in enumerate(candidates):
                rejobs = [(cand, derive_u64(master, "reeval", gen, ci, j))
                          for j in range(cfg.reevals)]
                rerecs = _run_jobs(evaluator, rejobs)
                frames += sum(r.frames for r in rerecs)
                means.append((float(np.mean([r.score for r in rerecs])), cand))
        except Exception as exc:
            raise GaError(f"generation {gen} aborted: {exc}",
                          stats=stats, elite=elite) from exc
        best_mean, elite = max(means, key=lambda mc: (mc[0], -mc[1].genome_id))
        elite_mean = best_mean

        population = [elite] + ranked
        top_mean = float(np.mean([score[g.genome_id] for g in ranked[:cfg.truncation]]))
        pop_mean = float(np.mean([score[g.genome_id] for g in ranked]))
        gen_stats = GenerationStats(
            generation=gen,
            elite_mean=elite_mean,
            top_mean=top_mean,
            pop_mean=pop_mean,
            frames=frames,
            wall_seconds=time.perf_counter() - t0,
        )
        stats.append(gen_stats)
        log.info("gen %d: elite %.3f top %.3f pop %.3f (%d frames, %.1fs)",
                 gen, elite_mean, top_mean, pop_mean, frames, gen_stats.wall_seconds)
        if on_generation is not None:
            on_generation(gen, population, gen_stats)
        if should_stop is not None and should_stop():
            log.info("stop requested after generation %d", gen)
            break

    if elite is None:
        raise GaError("no generations were run; there is no elite")
    return GaResult(elite=elite, population=population, stats=stats,
                    elite_mean=elite_mean)
