"""Command line surface.

Every command is deterministic given its flags (all randomness flows from
explicit seeds), exits 0 on success, and on failure writes a single-line
JSON object {"error": <type>, "message": <text>} to stderr with a nonzero
exit code. Status output on stdout is single-line JSON as well.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .formats import (
    DENSITY_FIELD,
    VELOCITY_FIELD,
    CheckpointData,
    FgsSequence,
    check_manifest,
    load_checkpoint,
    read_fgs,
    sequence_to_fgs,
    write_fgs,
    write_manifest,
)
from .grid import BOOLEAN_OPS, Field2, GridDims, MacVelocity2, boolean_combine
from .interpolate import InterpRequest, build_variant_tree, interpolate
from .metrics import eval_metrics
from .model import ModelConfig, init_params
from .rng import SplitMix64
from .solver import (
    Emitter,
    Obstacle,
    SceneConfig,
    generate_scenario,
)
from .tokenizer import EQUATION_STRING, SceneConstants
from .training import (
    LossConfig,
    Scenario,
    TrainConfig,
    random_scene,
    train,
)

MANIFEST_NAME = "manifest.json"


def _status(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{p}: malformed JSON ({e})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{p}: expected a JSON object at top level")
    return data


def _from_fields(cls, data: dict, what: str):
    """Build a dataclass from a JSON object, rejecting unknown keys."""
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValueError(f"{what}: unknown keys {unknown}; allowed: {sorted(allowed)}")
    return cls(**data)


def _dims_from_config(cfg: dict) -> GridDims:
    for key in ("nx", "ny"):
        if key not in cfg:
            raise ValueError(f"scene config missing required key '{key}'")
    nx, ny = int(cfg["nx"]), int(cfg["ny"])
    dx = float(cfg.get("dx", 1.0 / nx))
    return GridDims(nx, ny, dx)


def _scene_from_config(cfg: dict, seed: int) -> SceneConfig:
    dims = _dims_from_config(cfg)
    for key in ("dt", "frames", "stride", "emitter", "buoyancy"):
        if key not in cfg:
            raise ValueError(f"scene config missing required key '{key}'")
    em = cfg["emitter"]
    emitter = _from_fields(Emitter, em, "emitter")
    obstacle = None
    if cfg.get("obstacle") is not None:
        obstacle = _from_fields(Obstacle, cfg["obstacle"], "obstacle")
    return SceneConfig(
        dims=dims,
        dt=float(cfg["dt"]),
        substeps_per_frame=int(cfg["stride"]),
        frames=int(cfg["frames"]),
        emitter=emitter,
        buoyancy=float(cfg["buoyancy"]),
        obstacle=obstacle,
        seed=seed,
        initial_noise=float(cfg.get("noise", 0.0)),
        projection_tol=float(cfg.get("projection_tol", 1e-5)),
        projection_max_iters=int(cfg.get("projection_max_iters", 400)),
    )


def _scene_json(scene: SceneConfig) -> dict:
    out = {
        "nx": scene.dims.nx,
        "ny": scene.dims.ny,
        "dx": scene.dims.dx,
        "dt": scene.dt,
        "frames": scene.frames,
        "stride": scene.substeps_per_frame,
        "emitter": dataclasses.asdict(scene.emitter),
        "obstacle": None if scene.obstacle is None else dataclasses.asdict(scene.obstacle),
        "buoyancy": scene.buoyancy,
        "noise": scene.initial_noise,
        "seed": scene.seed,
        "projection_tol": scene.projection_tol,
        "projection_max_iters": scene.projection_max_iters,
        "equation": EQUATION_STRING,
    }
    return out


def _fgs_keyframes(seq: FgsSequence, dx: float):
    """FGS frames -> (density, velocity) keyframe pairs."""
    if DENSITY_FIELD.name not in seq.field_names():
        raise ValueError("keyframes file has no 'density' field")
    if VELOCITY_FIELD.name not in seq.field_names():
        raise ValueError(
            "keyframes file has no 'velocity' field; interpolation needs "
            "keyframe velocities for the PDE tokens"
        )
    dims = GridDims(seq.nx, seq.ny, dx)
    out = []
    for frame in seq.frames:
        u, v = frame["velocity"]
        out.append((Field2(dims, frame["density"]), MacVelocity2(dims, u, v)))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    scene = _scene_from_config(_load_json(args.config), seed=args.seed)
    seq = generate_scenario(scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_fgs(out / "sequence.fgs", sequence_to_fgs(seq.states, scene.dims))
    write_fgs(out / "keyframes.fgs", sequence_to_fgs(seq.keyframes(), scene.dims))
    (out / "scene.json").write_text(
        json.dumps(_scene_json(scene), indent=2, sort_keys=True) + "\n"
    )
    _status({"frames": len(seq.states), "keyframes": len(seq.keyframe_indices),
             "out": str(out)})
    return 0


def cmd_dataset(args) -> int:
    cfg = _load_json(args.config)
    dims = _dims_from_config(cfg)
    for key in ("frames", "stride"):
        if key not in cfg:
            raise ValueError(f"dataset config missing required key '{key}'")
    frames, stride = int(cfg["frames"]), int(cfg["stride"])
    dt = float(cfg.get("dt", 0.08))
    seed = int(cfg.get("seed", 0))
    if args.count < 1:
        raise ValueError("--count must be >= 1")

    rng = SplitMix64(seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .training import split_dataset

    names = [f"scn{i:04d}" for i in range(args.count)]
    splits = split_dataset(names, seed)
    split_of = {n: s for s, ns in splits.items() for n in ns}

    entries = []
    for name in names:
        scene = random_scene(dims, frames, stride, rng, dt)
        seq = generate_scenario(scene)
        fname = f"{name}.fgs"
        write_fgs(out / fname, sequence_to_fgs(seq.states, dims))
        entries.append(
            {
                "name": name,
                "file": fname,
                "split": split_of[name],
                "scene": _scene_json(scene),
                "constants": {
                    "dt": scene.dt,
                    "dx": dims.dx,
                    "buoyancy": scene.buoyancy,
                    "emitter_rate": scene.emitter.rate,
                },
            }
        )
    manifest = {
        "format_version": 1,
        "equation": EQUATION_STRING,
        "grid": {"nx": dims.nx, "ny": dims.ny, "dx": dims.dx},
        "frames": frames,
        "stride": stride,
        "dt": dt,
        "seed": seed,
        "scenarios": entries,
    }
    write_manifest(out / MANIFEST_NAME, manifest)
    _status({"scenarios": args.count, "out": str(out),
             "splits": {k: len(v) for k, v in sorted(splits.items())}})
    return 0


def _load_scenario(base: Path, entry: dict, dims: GridDims, stride: int) -> Scenario:
    seq = read_fgs(base / entry["file"])
    if (seq.nx, seq.ny) != (dims.nx, dims.ny):
        raise ValueError(f"{entry['file']}: grid does not match manifest")
    c = entry["constants"]
    constants = SceneConstants(c["dt"], c["dx"], c["buoyancy"], c["emitter_rate"])
    dens = np.stack([f["density"] for f in seq.frames])
    kf_idx = range(0, len(seq.frames), stride)
    kf_u = np.stack([seq.frames[i]["velocity"][0] for i in kf_idx])
    kf_v = np.stack([seq.frames[i]["velocity"][1] for i in kf_idx])
    return Scenario(
        name=entry["name"],
        constants=constants,
        dims=dims,
        dt=constants.dt,
        stride=stride,
        densities=dens,
        kf_u=kf_u,
        kf_v=kf_v,
    )


def cmd_train(args) -> int:
    data = Path(args.data)
    manifest = check_manifest(data / MANIFEST_NAME)
    tc_json = _load_json(args.train_config)
    model_json = tc_json.pop("model", {})
    if "decoder_widths" in model_json:
        model_json["decoder_widths"] = tuple(model_json["decoder_widths"])
    cfg = _from_fields(ModelConfig, model_json, "train config 'model' section")
    tc = _from_fields(TrainConfig, tc_json, "train config")
    lc = _from_fields(LossConfig, _load_json(args.loss_config), "loss config")

    g = manifest["grid"]
    dims = GridDims(int(g["nx"]), int(g["ny"]), float(g["dx"]))
    stride = int(manifest["stride"])
    dataset: dict[str, list[Scenario]] = {"train": [], "val": [], "test": []}
    for entry in manifest["scenarios"]:
        dataset[entry["split"]].append(_load_scenario(data, entry, dims, stride))

    params = init_params(cfg, seed=tc.seed)
    result = train(dataset, params, cfg, tc, lc)

    train_scns = dataset["train"]
    scene_defaults = SceneConstants(
        dt=float(manifest["dt"]),
        dx=dims.dx,
        buoyancy=float(np.mean([s.constants.buoyancy for s in train_scns])),
        emitter_rate=float(np.mean([s.constants.emitter_rate for s in train_scns])),
    )
    ckpt = CheckpointData(
        params=result.params,
        cfg=cfg,
        stats={"rho": result.stats.rho, "u": result.stats.u, "v": result.stats.v},
        nx=dims.nx,
        ny=dims.ny,
        scene_defaults=scene_defaults,
    )
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    from .formats import save_checkpoint

    save_checkpoint(out, ckpt)
    Path(str(out) + ".log.jsonl").write_text(result.log_jsonl())
    _status({"ckpt": str(out), "best_step": result.best_step,
             "best_val": result.best_val, "steps": tc.steps})
    return 0


def cmd_interp(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    kfs = _fgs_keyframes(read_fgs(args.keyframes), ckpt.scene_defaults.dx)
    req = InterpRequest(kfs, args.substeps, ckpt)
    res = interpolate(req)
    seq = FgsSequence(
        ckpt.nx, ckpt.ny, [DENSITY_FIELD],
        [{"density": f.values} for f in res.frames],
    )
    write_fgs(args.out, seq)
    _status({"frames": len(res.frames), "out": args.out})
    return 0


def cmd_variants(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    kfs = _fgs_keyframes(read_fgs(args.keyframes), ckpt.scene_defaults.dx)
    req = InterpRequest(kfs, args.substeps, ckpt)
    tree = build_variant_tree(
        req, k=args.k, groups=args.groups, beam=args.beam,
        diversity=args.diversity, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tdict = tree.to_dict()
    for idx, leaf in enumerate(tree.leaves):
        res = tree.materialize(leaf)
        fname = f"path_{idx:03d}.fgs"
        seq = FgsSequence(
            ckpt.nx, ckpt.ny, [DENSITY_FIELD],
            [{"density": f.values} for f in res.frames],
        )
        write_fgs(out / fname, seq)
        tdict["paths"][idx]["file"] = fname
    (out / "tree.json").write_text(json.dumps(tdict, indent=2, sort_keys=True) + "\n")
    _status({"paths": len(tree.leaves), "nodes": len(tree.nodes), "out": str(out)})
    return 0


def cmd_combine(args) -> int:
    a, b = read_fgs(args.a), read_fgs(args.b)
    if (a.nx, a.ny) != (b.nx, b.ny):
        raise ValueError(f"grid mismatch: {a.nx}x{a.ny} vs {b.nx}x{b.ny}")
    if len(a.frames) != len(b.frames):
        raise ValueError(f"frame count mismatch: {len(a.frames)} vs {len(b.frames)}")
    for s, tag in ((a, "--a"), (b, "--b")):
        if DENSITY_FIELD.name not in s.field_names():
            raise ValueError(f"{tag} file has no 'density' field")
    dims = GridDims(a.nx, a.ny, 1.0 / a.nx)
    keep_velocity = VELOCITY_FIELD.name in a.field_names()
    fields = [DENSITY_FIELD] + ([VELOCITY_FIELD] if keep_velocity else [])
    frames = []
    for fa, fb in zip(a.frames, b.frames):
        mixed = boolean_combine(
            Field2(dims, fa["density"]), Field2(dims, fb["density"]), args.op
        )
        frame = {"density": mixed.values}
        if keep_velocity:
            frame["velocity"] = fa["velocity"]
        frames.append(frame)
    write_fgs(args.out, FgsSequence(a.nx, a.ny, fields, frames))
    _status({"frames": len(frames), "op": args.op, "out": args.out})
    return 0


def cmd_eval(args) -> int:
    report = eval_metrics(read_fgs(args.pred), read_fgs(args.truth))
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _status({"report": args.report, "aggregate": report["aggregate"]})
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(
            json.dumps({"error": "UsageError", "message": message}) + "\n"
        )
        sys.exit(2)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fluidinterp", description="Keyframe fluid interpolation lab")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one smoke scenario")
    sp.add_argument("--config", required=True, help="scene config JSON")
    sp.add_argument("--seed", required=True, type=_seed)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("dataset", help="generate a randomized scenario dataset")
    sp.add_argument("--config", required=True, help="dataset config JSON")
    sp.add_argument("--count", required=True, type=int)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="train the interpolation model")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--train-config", required=True, help="training config JSON")
    sp.add_argument("--loss-config", required=True, help="loss config JSON")
    sp.add_argument("--out", required=True, help="checkpoint output path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("interp", help="interpolate substeps between keyframes")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--keyframes", required=True, help="FGS with density + velocity")
    sp.add_argument("--substeps", required=True, type=int)
    sp.add_argument("--out", required=True, help="output FGS path")
    sp.set_defaults(func=cmd_interp)

    sp = sub.add_parser("variants", help="build a tree of interpolation variants")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--keyframes", required=True)
    sp.add_argument("--substeps", required=True, type=int)
    sp.add_argument("--k", required=True, type=int, help="top-k pool for branching")
    sp.add_argument("--groups", required=True, type=int)
    sp.add_argument("--beam", required=True, type=int)
    sp.add_argument("--diversity", required=True, type=float)
    sp.add_argument("--seed", required=True, type=_seed)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_variants)

    sp = sub.add_parser("combine", help="Boolean density combination of two files")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--op", required=True, choices=sorted(BOOLEAN_OPS))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_combine)

    sp = sub.add_parser("eval", help="compare a prediction file against truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--report", required=True, help="JSON report output path")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary reports, never crashes
        sys.stderr.write(
            json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
