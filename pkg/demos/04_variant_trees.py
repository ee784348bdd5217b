"""
Variant trees: many futures per keyframe pair
=============================================

Every substep position carries a small codebook of alternative "looks";
code 0 is the canonical path. A variant tree holds several code strings at
once and shares predicted frames along common prefixes. This script uses a
checkpoint with randomly jiggled readout heads (training is demo 03's job;
tree mechanics are this one's) so the scorer has non-flat preferences and
distinct codes produce visibly different frames.

Two search modes feed the tree: stochastic top-k sampling (use it to fan
out) and diverse beam search (use it when the paths must differ).
"""

import numpy as np

from fluidinterp.formats import CheckpointData
from fluidinterp.grid import GridDims
from fluidinterp.interpolate import (
    InterpRequest,
    build_variant_tree,
    diverse_beam_search,
    top_k_sample,
)
from fluidinterp.model import ModelConfig, init_params
from fluidinterp.rng import SplitMix64
from fluidinterp.solver import Emitter, SceneConfig, generate_scenario
from fluidinterp.tokenizer import SceneConstants
from fluidinterp.training import Scenario, compute_field_stats

# Part 1: top-k sampling. k=1 is argmax; larger k redistributes mass over
# the k best codes; temperature reshapes it.
logits = np.array([2.0, 1.0, 0.5, -1.0])
print(f"logits: {logits.tolist()}")
print(f"top-1 (argmax):      {top_k_sample(logits, k=1, temperature=1.0, seed=0)}")
draws = [top_k_sample(logits, k=3, temperature=1.0, seed=s) for s in range(2000)]
freq = np.bincount(draws, minlength=4) / len(draws)
print(f"top-3 draw frequency: {np.round(freq, 3).tolist()} (code 3 never drawn)")
assert freq[3] == 0.0

# Part 2: diverse beam search over a toy 2-position score table. With
# diversity 0 both groups collapse onto the same best paths; a positive
# penalty pushes group 2 off group 1's endpoints.
table = [np.array([1.0, 0.9, -2.0]), np.array([0.5, 0.4, -3.0])]
paths0 = diverse_beam_search(lambda p: table[len(p)], groups=2, beam=1,
                             diversity=0.0, length=2)
paths2 = diverse_beam_search(lambda p: table[len(p)], groups=2, beam=1,
                             diversity=2.0, length=2)
print(f"\nDBS diversity=0: {[c for c, _ in paths0]} (groups agree)")
print(f"DBS diversity=2: {[c for c, _ in paths2]} (second group forced elsewhere)")

# Part 3: a real tree over a simulated scene. Stand-in weights: jiggle the
# zero-initialized residual and score heads so variants actually differ.
dims = GridDims(32, 32, 1.0 / 32)
scene = SceneConfig(
    dims=dims,
    dt=0.15,
    substeps_per_frame=4,
    frames=5,
    emitter=Emitter(x=0.45, y=0.2, radius=0.09, rate=2.0),
    buoyancy=1.4,
    seed=21,
)
sc = Scenario.from_sequence(generate_scenario(scene), name="tree-demo")
stats = compute_field_stats([sc])

cfg = ModelConfig(d_model=32, heads=4, enc_layers=1, codebook_k=4, patch=4,
                  decoder_widths=(8, 8, 16, 16), latent_maps=1,
                  ctx_channels=2, time_dim=8, code_dim=4)
params = init_params(cfg, seed=9)
rng = SplitMix64(99)
for name in ("decoder.final_w", "decoder.final_b", "codebook.score_w"):
    params[name] = (0.3 * rng.normals(params[name].shape)).astype(params[name].dtype)

ckpt = CheckpointData(
    params=params,
    cfg=cfg,
    stats={"rho": stats.rho, "u": stats.u, "v": stats.v},
    nx=dims.nx,
    ny=dims.ny,
    scene_defaults=SceneConstants(dt=scene.dt, dx=dims.dx, buoyancy=scene.buoyancy,
                                  emitter_rate=scene.emitter.rate),
)
keyframes = [
    (sc.keyframe_density(i), sc.keyframe_velocity(i)) for i in range(sc.n_keyframes)
]
req = InterpRequest(keyframes=keyframes, substeps=2, ckpt=ckpt)

tree = build_variant_tree(req, k=3, groups=2, beam=2, diversity=1.0, seed=4)
print(f"\ntree: {len(tree.nodes)} nodes, {len(tree.leaves)} leaves, "
      f"{tree.n_positions} positions per path")
for leaf in tree.leaves:
    print(f"  leaf {leaf:3d}: codes {tree.path_codes(leaf)}  "
          f"logp {tree.path_logp(leaf):+.3f}")

# Shared prefixes mean shared frames: materialize every leaf and count how
# many distinct substep frames were actually decoded.
seqs = {leaf: tree.materialize(leaf) for leaf in tree.leaves}
print(f"decoded substep frames cached: {len(tree._frames)} "
      f"(vs {len(tree.leaves) * tree.n_positions} without sharing)")

# Different code strings, different smoke; canonical (all zeros) stays the
# reference everyone branches from.
canon = seqs[tree.leaves[0]]
worst = max(
    float(np.abs(seqs[leaf].frames[1].values - canon.frames[1].values).max())
    for leaf in tree.leaves[1:]
)
print(f"max |variant - canonical| at the first substep: {worst:.4f}")

# Branching from an interior node keeps the prefix and resamples the rest.
new_nodes = tree.branch(tree.path_nodes(tree.leaves[0])[0], k=3, seed=11)
print(f"branch() grafted {len(new_nodes)} positions; leaves now {len(tree.leaves)}")
