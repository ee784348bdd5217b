"""
Boolean keyframe combination
============================

Keyframes are density fields, so they compose like soft sets: add clamps
at rho_max, subtract floors at zero, intersect keeps the overlap. This
script simulates two plumes that rise past each other, combines their
keyframes all three ways, checks the algebra everyone expects, and runs
the combine CLI on real FGS files.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from fluidinterp.formats import read_fgs, sequence_to_fgs, write_fgs
from fluidinterp.grid import DEFAULT_RHO_MAX, GridDims, boolean_combine
from fluidinterp.interpolate import combine_keyframes
from fluidinterp.solver import Emitter, SceneConfig, generate_scenario
from fluidinterp.training import Scenario

dims = GridDims(32, 32, 1.0 / 32)


def plume(x: float, seed: int) -> Scenario:
    scene = SceneConfig(
        dims=dims,
        dt=0.12,
        substeps_per_frame=4,
        frames=6,
        emitter=Emitter(x=x, y=0.15, radius=0.08, rate=2.5),
        buoyancy=1.5,
        seed=seed,
    )
    return Scenario.from_sequence(generate_scenario(scene), name=f"plume{seed}")


left = plume(0.35, seed=7)
right = plume(0.65, seed=8)
kf_left = [(left.keyframe_density(i), left.keyframe_velocity(i))
           for i in range(left.n_keyframes)]
kf_right = [(right.keyframe_density(i), right.keyframe_velocity(i))
            for i in range(right.n_keyframes)]

# The three ops on the final keyframes, where the plumes are tallest.
a = kf_left[-1][0]
b = kf_right[-1][0]
for op in ("add", "subtract", "intersect"):
    out = boolean_combine(a, b, op)
    print(f"{op:9s} mass {out.total():8.3f}  range [{out.values.min():.3f}, "
          f"{out.values.max():.3f}]")
print(f"(inputs: left mass {a.total():.3f}, right mass {b.total():.3f}, "
      f"rho_max {DEFAULT_RHO_MAX})")

# The algebra. Subtracting a field from itself empties the box; intersect
# is idempotent and commutative; add is commutative and never exceeds the
# clamp no matter the operand order.
assert not boolean_combine(a, a, "subtract").values.any()
assert np.array_equal(boolean_combine(a, a, "intersect").values, a.values)
assert np.array_equal(
    boolean_combine(a, b, "intersect").values, boolean_combine(b, a, "intersect").values
)
assert np.array_equal(
    boolean_combine(a, b, "add").values, boolean_combine(b, a, "add").values
)
assert boolean_combine(a, b, "add").values.max() <= DEFAULT_RHO_MAX
print("algebra holds: subtract(A, A) = 0, intersect idempotent + commutative, "
      "add commutative and clamped")

# Whole sequences combine keyframe by keyframe; velocities ride along from
# the first operand so the result still interpolates like a scene.
merged = combine_keyframes(kf_left, kf_right, "add")
print(f"\ncombined sequence: {len(merged)} keyframes, "
      f"final mass {merged[-1][0].total():.3f}")

# Same thing through the CLI, file to file.
with tempfile.TemporaryDirectory() as td:
    pa, pb, pc = (Path(td) / n for n in ("a.fgs", "b.fgs", "mix.fgs"))
    write_fgs(pa, sequence_to_fgs(
        [type("S", (), {"density": d, "velocity": v})() for d, v in kf_left], dims))
    write_fgs(pb, sequence_to_fgs(
        [type("S", (), {"density": d, "velocity": v})() for d, v in kf_right], dims))
    proc = subprocess.run(
        [sys.executable, "-m", "fluidinterp", "combine",
         "--a", str(pa), "--b", str(pb), "--op", "add", "--out", str(pc)],
        capture_output=True, text=True, check=True,
    )
    print(f"\ncombine CLI: {json.loads(proc.stdout)}")
    back = read_fgs(pc)
    same = all(
        np.allclose(frame["density"], m[0].values, atol=1e-6)
        for frame, m in zip(back.frames, merged)
    )
    print(f"CLI file matches library result (fp32 storage): {same}")
