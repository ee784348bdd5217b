"""
Desk-scale smoke simulation
===========================

Runs the Eulerian solver on a small buoyant-plume scene, checks the two
solver invariants everyone relies on (divergence-free velocity, bounded
density), and round-trips the result through the FGS sequence format.
"""

import tempfile
from pathlib import Path

import numpy as np

from fluidinterp.formats import read_fgs, sequence_to_fgs, write_fgs
from fluidinterp.grid import GridDims, divergence
from fluidinterp.rng import SplitMix64
from fluidinterp.solver import Emitter, SceneConfig, generate_scenario

# A 32x32 box with a hot emitter near the floor. `frames` counts keyframes;
# the solver takes substeps_per_frame steps between consecutive keyframes,
# so this scene produces (frames - 1) * substeps_per_frame + 1 dense states.
dims = GridDims(32, 32, 1.0 / 32)
scene = SceneConfig(
    dims=dims,
    dt=0.1,
    substeps_per_frame=4,
    frames=6,
    emitter=Emitter(x=0.5, y=0.15, radius=0.1, rate=1.5),
    buoyancy=1.0,
    seed=11,
    initial_noise=0.05,
)

seq = generate_scenario(scene)
states = seq.states
print(f"dense states: {len(states)}  keyframes: {len(seq.keyframes())}")

# Invariant 1: every stepped frame carries a post-projection velocity that
# is discretely divergence free up to the solver tolerance. Frame 0 is the
# raw initial condition (random noise), so it is exempt; the first step's
# projection cleans it up.
div0 = np.abs(divergence(states[0].velocity).values).max()
worst_div = max(np.abs(divergence(st.velocity).values).max() for st in states[1:])
print(f"|divergence|: initial noise {div0:.2e} -> stepped frames max {worst_div:.2e}")
assert worst_div <= 1e-4

# Invariant 2: density stays inside [0, rho_max]; the emitter adds mass,
# advection only moves it around.
lo = min(st.density.values.min() for st in states)
hi = max(st.density.values.max() for st in states)
print(f"density range across the run: [{lo:.3f}, {hi:.3f}]")

masses = [st.density.total() for st in states]
print(f"total mass: first {masses[0]:.3f}  last {masses[-1]:.3f}")

# Store the dense run and the keyframe subset as FGS files. The format is
# a flat little-endian layout with a trailing CRC-32, so a reload proves
# both value fidelity and file integrity.
with tempfile.TemporaryDirectory() as td:
    dense_path = Path(td) / "sequence.fgs"
    kf_path = Path(td) / "keyframes.fgs"
    write_fgs(dense_path, sequence_to_fgs(states, dims))
    write_fgs(kf_path, sequence_to_fgs(seq.keyframes(), dims))

    back = read_fgs(dense_path)
    same = all(
        np.array_equal(
            got["density"], st.density.values.astype(np.float32).astype(np.float64)
        )
        for got, st in zip(back.frames, states)
    )
    print(f"reload matches simulation: {same}")
    print(f"file sizes: dense {dense_path.stat().st_size} B, "
          f"keyframes {kf_path.stat().st_size} B")
