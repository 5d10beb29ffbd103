"""Counter-based random streams.

Trajectory i of a run with master seed s draws from a Philox generator keyed by
SeedSequence([s, i]). Each step consumes a fixed number of 64-bit outputs, so the
uniforms used at step n sit at a fixed counter position determined by
(s, i, n) alone. The order in which trajectories are scheduled cannot change them.
"""
from __future__ import annotations

import numpy as np

_MASK = np.uint64((1 << 64) - 1)


def stream_key(master_seed: int, trajectory: int) -> np.ndarray:
    seq = np.random.SeedSequence([int(master_seed) & int(_MASK), int(trajectory)])
    return seq.generate_state(2, np.uint64)


def trajectory_generator(master_seed: int, trajectory: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, trajectory)))


def uniforms(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one 64-bit output each.

    Uses the top 53 bits shifted by half a unit, so inverse-CDF transforms never
    see 0 or 1.
    """
    count = int(np.prod(shape))
    raw = gen.bit_generator.random_raw(count) if count else np.empty(0, np.uint64)
    return (((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53).reshape(shape)
