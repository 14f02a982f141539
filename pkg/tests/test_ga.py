"""Truncation-selection GA: init/mutation statistics, Algorithm semantics."""

import numpy as np
import pytest

from evofarm.envs import EnvDescriptor, GAME_CATCH
from evofarm.evalmod import FitnessRecord, run_episode
from evofarm.ga import (
    GaConfig,
    GaError,
    evolve,
    mutate,
    rebuild,
    serial_evaluator,
    xavier_init,
)
from evofarm.network import default_spec, split_weights
from evofarm.rng import keyed_generator


def constant_evaluator(value=5):
    def evaluate(jobs):
        return [FitnessRecord(genome_id=g.genome_id, score=value, frames=1,
                              termination="dead", eval_seed=s) for g, s in jobs]
    return evaluate


def norm_evaluator():
    """Analytic fitness -(L2 norm)^2 of the dequantized weights."""
    def evaluate(jobs):
        return [FitnessRecord(
            genome_id=g.genome_id,
            score=-float(np.sum((g.weights / g.fmt.scale) ** 2)),
            frames=1, termination="dead", eval_seed=s) for g, s in jobs]
    return evaluate


class TestConfig:
    def test_defaults(self):
        cfg = GaConfig()
        assert (cfg.population, cfg.truncation, cfg.elites) == (1001, 20, 1)
        assert cfg.mutation_power == 0.002
        assert cfg.reevals == 5

    @pytest.mark.parametrize("kwargs,match", [
        (dict(population=1), "population"),
        (dict(truncation=0), "truncation"),
        (dict(truncation=1001), "truncation"),
        (dict(elites=2), "elite"),
        (dict(mutation_power=-0.1), "mutation power"),
        (dict(reevals=0), "reevals"),
        (dict(generations=-1), "generations"),
    ])
    def test_validation(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            GaConfig(**kwargs)


class TestXavierInit:
    def test_same_seed_identical(self):
        assert (xavier_init(5).weights == xavier_init(5).weights).all()

    def test_layer_bounds(self):
        spec = default_spec()
        g = xavier_init(7, spec)
        half_step = 0.5 / g.fmt.scale
        for layer, w in zip(spec.layers, split_weights(spec, g.weights)):
            bound = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
            assert np.abs(w / g.fmt.scale).max() <= bound + half_step

    def test_layer1_mean_near_zero(self):
        spec = default_spec()
        g = xavier_init(7, spec)
        w = split_weights(spec, g.weights)[0] / g.fmt.scale
        layer = spec.layers[0]
        bound = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        se = bound / np.sqrt(3) / np.sqrt(w.size)  # std of U(-b,b) is b/sqrt(3)
        assert abs(w.mean()) <= 3 * se

    def test_fan_rule(self):
        spec = default_spec()
        assert spec.layers[0].fan_in == 8 * 8 * 4
        assert spec.layers[0].fan_out == 8 * 8 * 32
        assert spec.layers[3].fan_in == 7 * 7 * 64
        assert spec.layers[3].fan_out == 18


class TestMutate:
    def test_zero_power_is_identity(self):
        parent = xavier_init(1, genome_id=1)
        child = mutate(parent, 99, 0.0, genome_id=2)
        assert (child.weights == parent.weights).all()

    def test_deterministic(self):
        parent = xavier_init(2)
        a = mutate(parent, 123, 0.002)
        b = mutate(parent, 123, 0.002)
        assert (a.weights == b.weights).all()

    def test_noise_std_within_five_percent(self):
        # sigma = 0.002 is 16x the quantization step, so the measured std
        # of the dequantized delta tracks sigma closely.
        parent = xavier_init(0)
        child = mutate(parent, 123, 0.002)
        delta = (child.weights.astype(np.int64) - parent.weights) / parent.fmt.scale
        assert abs(delta.std() - 0.002) / 0.002 <= 0.05

    def test_lineage_extends(self):
        parent = xavier_init(3, genome_id=9)
        child = mutate(parent, 55, 0.002, genome_id=10)
        assert child.lineage == parent.lineage + ((9, 55),)


class TestRebuild:
    def test_replays_bit_exact(self, tiny_spec):
        cfg = GaConfig(population=6, truncation=2, generations=4,
                       mutation_power=0.01, master_seed=3, spec=tiny_spec)
        result = evolve(cfg, norm_evaluator())
        elite = result.elite
        twin = rebuild(elite.lineage, cfg.mutation_power, tiny_spec)
        assert (twin.weights == elite.weights).all()

    def test_rejects_lineage_without_init(self):
        with pytest.raises(ValueError, match="init entry"):
            rebuild(((4, 123),), 0.002)


class TestEvolve:
    def test_constant_fitness_keeps_first_genome(self, tiny_spec):
        cfg = GaConfig(population=6, truncation=2, generations=5,
                       mutation_power=0.01, spec=tiny_spec)
        result = evolve(cfg, constant_evaluator())
        assert result.elite.genome_id == 1
        for s in result.stats:
            assert s.elite_mean == s.top_mean == s.pop_mean == 5.0

    def test_smallest_legal_instance(self, tiny_spec):
        cfg = GaConfig(population=2, truncation=1, generations=1, spec=tiny_spec)
        result = evolve(cfg, constant_evaluator())
        assert [g.genome_id for g in result.population] == [1, 1]
        assert result.population[0] is result.elite

    def test_population_size_and_elite_slot(self, tiny_spec):
        seen = []
        cfg = GaConfig(population=7, truncation=3, generations=4,
                       mutation_power=0.01, master_seed=1, spec=tiny_spec)
        evolve(cfg, norm_evaluator(),
               on_generation=lambda g, pop, s: seen.append(list(pop)))
        for pop in seen:
            assert len(pop) == 7
        # Later generations mutate only the top-T slots of the previous one.
        for prev, cur in zip(seen, seen[1:]):
            parents = {g.genome_id for g in prev[:3]}
            for child in cur[1:]:
                assert child.lineage[-1][0] in parents

    def test_elite_monotone_on_analytic_fitness(self, tiny_spec):
        cfg = GaConfig(population=9, truncation=3, generations=12,
                       mutation_power=0.02, master_seed=5, spec=tiny_spec)
        result = evolve(cfg, norm_evaluator())
        means = [s.elite_mean for s in result.stats]
        assert all(b >= a for a, b in zip(means, means[1:]))
        assert means[-1] > means[0]  # mutation actually finds smaller norms

    def test_parent_picks_uniform_chi_square(self):
        # Same keyed stream evolve uses for parent selection.
        T, n = 5, 10_000
        picks = [int(keyed_generator(0, "parent", 2, slot).integers(T))
                 for slot in range(n)]
        counts = np.bincount(picks, minlength=T)
        expected = n / T
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 18.4668  # chi2 df=4 critical value at p=0.001

    def test_full_run_determinism(self, tiny_spec):
        cfg = GaConfig(population=6, truncation=2, generations=4,
                       mutation_power=0.01, master_seed=8, spec=tiny_spec)
        a = evolve(cfg, norm_evaluator())
        b = evolve(cfg, norm_evaluator())
        assert (a.elite.weights == b.elite.weights).all()
        assert len(a.stats) == len(b.stats)
        for x, y in zip(a.stats, b.stats):  # wall time is the one free field
            assert (x.elite_mean, x.top_mean, x.pop_mean, x.frames) == \
                   (y.elite_mean, y.top_mean, y.pop_mean, y.frames)

    def test_frames_account_for_reevals(self, tiny_spec):
        cfg = GaConfig(population=6, truncation=2, generations=2, reevals=3,
                       mutation_power=0.01, spec=tiny_spec)
        result = evolve(cfg, constant_evaluator())
        # Every record reports frames=1: gen 1 evaluates 5 children plus
        # 2 candidates x 3 re-evals; gen 2 adds the previous elite.
        assert result.stats[0].frames == 5 + 2 * 3
        assert result.stats[1].frames == 5 + 3 * 3

    def test_zero_generations_is_an_error(self, tiny_spec):
        cfg = GaConfig(population=4, truncation=2, generations=0, spec=tiny_spec)
        with pytest.raises(GaError, match="no generations"):
            evolve(cfg, constant_evaluator())

    def test_should_stop_breaks_after_generation(self, tiny_spec):
        cfg = GaConfig(population=4, truncation=2, generations=50,
                       mutation_power=0.01, spec=tiny_spec)
        result = evolve(cfg, constant_evaluator(), should_stop=lambda: True)
        assert len(result.stats) == 1

    def test_evaluator_failure_preserves_partial_stats(self, tiny_spec):
        calls = {"n": 0}

        def flaky(jobs):
            calls["n"] += 1
            if calls["n"] > 8:  # blows up inside generation 3
                raise RuntimeError("evaluator exploded")
            return constant_evaluator()(jobs)

        cfg = GaConfig(population=4, truncation=2, generations=5,
                       mutation_power=0.01, spec=tiny_spec)
        with pytest.raises(GaError, match="generation 3 aborted") as e:
            evolve(cfg, flaky)
        assert [s.generation for s in e.value.stats] == [1, 2]
        assert e.value.elite is not None

    def test_mismatched_records_rejected(self, tiny_spec):
        def wrong_ids(jobs):
            return [FitnessRecord(genome_id=0, score=1, frames=1,
                                  termination="dead", eval_seed=s)
                    for _, s in jobs]

        cfg = GaConfig(population=4, truncation=2, generations=1, spec=tiny_spec)
        with pytest.raises(GaError, match="does not match"):
            evolve(cfg, wrong_ids)

    def test_short_record_list_rejected(self, tiny_spec):
        cfg = GaConfig(population=4, truncation=2, generations=1, spec=tiny_spec)
        with pytest.raises(GaError, match="records for"):
            evolve(cfg, lambda jobs: [])


class TestSerialEvaluator:
    def test_matches_direct_episodes(self):
        d = EnvDescriptor(game_id=GAME_CATCH, frame_cap=40)
        ev = serial_evaluator(d)
        genomes = [xavier_init(i, genome_id=i + 1) for i in range(2)]
        jobs = [(g, 100 + i) for i, g in enumerate(genomes)]
        records = ev(jobs)
        assert records == [run_episode(g, d, s) for g, s in jobs]
