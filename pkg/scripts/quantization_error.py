#!/usr/bin/env python3
"""Fixed-point vs float64 forward-pass deviation over random pairs.

Draws random genomes and random inputs on the signed activation grid, runs
both forward passes, and reports the per-output deviation distribution,
the analytic worst-case bound, and argmax agreement.  Deviations are
reported in real units (one activation step = 2^-6).  Inputs span several
units of dynamic range: quantization error is an absolute quantity, so
tiny inputs bury the argmax comparison in near-ties that say nothing
about arithmetic fidelity.
"""

import argparse

import numpy as np

from evofarm.fixedpoint import ACTIVATION_FORMAT, WEIGHT_FORMAT
from evofarm.ga import xavier_init
from evofarm.network import default_spec, deviation_bound, forward, forward_float
from evofarm.rng import derive_u64, keyed_generator


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--input-range", type=float, default=4.0,
                    help="inputs are drawn uniformly in +-this, in real units")
    args = ap.parse_args()

    spec = default_spec()
    devs = []
    agree = 0
    worst_bound = 0.0
    for i in range(args.pairs):
        genome = xavier_init(derive_u64(args.seed, "qe-genome", i), spec,
                             genome_id=i + 1)
        rng = keyed_generator(args.seed, "qe-input", i)
        reach = int(round(args.input_range * ACTIVATION_FORMAT.scale))
        x = rng.integers(-reach, reach + 1, size=spec.input_shape)

        q = forward(genome, x, spec).astype(np.float64) / ACTIVATION_FORMAT.scale
        f = forward_float(genome.weights / WEIGHT_FORMAT.scale,
                          x / ACTIVATION_FORMAT.scale, spec)
        devs.append(np.abs(q - f))
        agree += int(np.argmax(q) == np.argmax(f))
        worst_bound = max(worst_bound, deviation_bound(
            genome.weights / WEIGHT_FORMAT.scale, spec))

    devs = np.stack(devs)
    step = 1.0 / ACTIVATION_FORMAT.scale
    print(f"{args.pairs} (genome, input) pairs, {devs.shape[1]} outputs each")
    print(f"max |dev|    : {devs.max():.6f}  ({devs.max() / step:.2f} steps)")
    print(f"p99.9 |dev|  : {np.quantile(devs, 0.999):.6f}")
    print(f"mean |dev|   : {devs.mean():.6f}")
    print(f"analytic bound (worst genome): {worst_bound:.4f}")
    print(f"argmax agreement: {agree}/{args.pairs} ({100.0 * agree / args.pairs:.1f}%)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
