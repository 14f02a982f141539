"""evofarm: quantized-CNN neuroevolution with a farmed-out fitness loop.

The package is layered bottom-up:

- ``fixedpoint``: Q-format quantization and the arithmetic conventions
  every other layer inherits.
- ``preproc``: palette frames -> pooled, rescaled, stacked network inputs.
- ``network``: the fixed convolutional policy network over int16 genomes.
- ``policy``: LFSR-driven sticky-action selection.
- ``envs``: the toy environments and the replay harness.
- ``evalmod``: one self-contained fitness evaluation module behind a
  register file; ``run_episode`` is the pure-function form.
- ``ga``: truncation-selection evolution over genome lineages.
- ``farm``: the TCP gateway/worker farm and the in-process pool, both
  interchangeable as GA evaluators.
- ``config``/``cli``: run configuration, manifests, operator commands.
"""

from .config import ConfigError, RunConfig, build_run_config, load_config
from .envs import GAME_NAMES, CatchEnv, EnvDescriptor, ReplayEnv, make_env
from .evalmod import EvalModule, FitnessRecord, run_episode
from .fixedpoint import (ACC_RADIX, ACTIVATION_FORMAT, WEIGHT_FORMAT,
                         QFormat, quantize, quantize_array)
from .ga import (GaConfig, GaError, GaResult, GenerationStats, evolve, mutate,
                 rebuild, serial_evaluator, xavier_init)
from .network import (Genome, NetworkSpec, default_spec, forward,
                      load_genome, save_genome)
from .policy import Lfsr, PolicyState
from .preproc import FramePipeline, default_palette
from .rng import derive_u64, keyed_generator

__all__ = [
    "ACC_RADIX",
    "ACTIVATION_FORMAT",
    "WEIGHT_FORMAT",
    "QFormat",
    "quantize",
    "quantize_array",
    "FramePipeline",
    "default_palette",
    "Genome",
    "NetworkSpec",
    "default_spec",
    "forward",
    "load_genome",
    "save_genome",
    "Lfsr",
    "PolicyState",
    "GAME_NAMES",
    "CatchEnv",
    "EnvDescriptor",
    "ReplayEnv",
    "make_env",
    "EvalModule",
    "FitnessRecord",
    "run_episode",
    "GaConfig",
    "GaError",
    "GaResult",
    "GenerationStats",
    "evolve",
    "mutate",
    "rebuild",
    "serial_evaluator",
    "xavier_init",
    "ConfigError",
    "RunConfig",
    "build_run_config",
    "load_config",
    "derive_u64",
    "keyed_generator",
]

__version__ = "0.1.0"
