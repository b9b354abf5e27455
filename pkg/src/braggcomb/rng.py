"""Per-trajectory random substreams.

Trajectory i of a run with master seed s draws from Philox keyed by
SeedSequence(s, spawn_key=(tag, i)); the stream depends only on (s, tag, i), so the
output is the same for any split of trajectories across workers.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def substream(seed, index, tag=0):
    """Generator for trajectory ``index``; ``tag`` separates independent uses."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))
