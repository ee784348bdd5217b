"""Losses, dataset assembly/splitting, and the optimization loop.

Supervision comes from the dense solver run: each keyframe interval of a
scenario hides stride-1 interior frames, and a training batch pairs random
intervals with random interior substeps s = j/stride. The total loss is

    huber(pred, truth) + lambda_vol * volume_penalty + lambda_adv * advection_consistency

with the Huber terms computed on normalized densities and the volume penalty
on raw (denormalized) mass. Variant codes are drawn per sample through a
Gumbel straight-through estimator so the codebook and score head receive
gradients during training; validation always uses the canonical code 0 with
no noise.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import AdamState, Tape, adam_step
from .grid import (
    Field2,
    GridDims,
    MacVelocity2,
    NormStats,
    denormalize_array,
    normalize_array,
)
from .rng import SplitMix64
from .solver import SceneConfig, SimSequence, advect_semi_lagrangian, generate_scenario
from .tokenizer import SceneConstants, TokenSequence, build_token_sequence

VOLUME_EPS = 1e-8


@dataclass(frozen=True)
class LossConfig:
    delta: float = 1.0
    lambda_vol: float = 0.1
    lambda_adv: float = 0.1

    def __post_init__(self):
        if not (self.delta > 0):
            raise ValueError("huber delta must be positive")
        if self.lambda_vol < 0 or self.lambda_adv < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    eval_interval: int = 100
    substep_samples: int = 2
    gumbel_tau: float = 1.0

    def __post_init__(self):
        for name in ("lr", "batch_size", "steps", "eval_interval", "substep_samples",
                     "gumbel_tau"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


# ---------------------------------------------------------------------------
# losses (numpy, Field2-level)


def huber_loss(pred: Field2, target: Field2, delta: float = 1.0) -> float:
    """Mean Huber: 0.5 r^2 inside |r| <= delta, else delta |r| - 0.5 delta^2."""
    if pred.dims != target.dims:
        raise ValueError("huber_loss: field dims differ")
    if not (delta > 0):
        raise ValueError("huber_loss: delta must be positive")
    r = target.values - pred.values
    a = np.abs(r)
    vals = np.where(a <= delta, 0.5 * r * r, delta * a - 0.5 * delta * delta)
    return float(vals.mean())


def volume_penalty(pred: Field2, target: Field2) -> float:
    """Relative total-mass deviation in raw density units."""
    if pred.dims != target.dims:
        raise ValueError("volume_penalty: field dims differ")
    t = target.total()
    return float(abs(pred.total() - t) / max(t, VOLUME_EPS))


def advection_consistency(
    pred_s: Field2,
    rho0: Field2,
    vel0: MacVelocity2,
    s: float,
    dt: float,
    delta: float = 1.0,
) -> float:
    """Huber against the semi-Lagrangian transport of rho0 over s*dt."""
    if not (0.0 <= s <= 1.0):
        raise ValueError("advection_consistency: s must lie in [0, 1]")
    ref = advect_semi_lagrangian(rho0, vel0, s * dt, warn_cfl=False)
    return huber_loss(pred_s, ref, delta)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class Scenario:
    """Dense density frames plus per-keyframe velocities for one simulation."""

    name: str
    constants: SceneConstants
    dims: GridDims
    dt: float  # keyframe interval duration
    stride: int  # dense frames per keyframe interval
    densities: np.ndarray  # (n_dense, ny, nx)
    kf_u: np.ndarray  # (n_keyframes, ny, nx+1)
    kf_v: np.ndarray  # (n_keyframes, ny+1, nx)

    def __post_init__(self):
        n_dense = len(self.densities)
        if self.stride < 1 or (n_dense - 1) % self.stride:
            raise ValueError(
                f"{self.name}: {n_dense} dense frames do not tile stride {self.stride}"
            )
        if len(self.kf_u) != self.n_keyframes or len(self.kf_v) != self.n_keyframes:
            raise ValueError(f"{self.name}: keyframe velocity count mismatch")

    @property
    def n_keyframes(self) -> int:
        return (len(self.densities) - 1) // self.stride + 1

    @property
    def n_intervals(self) -> int:
        return self.n_keyframes - 1

    def keyframe_density(self, i: int) -> Field2:
        return Field2(self.dims, self.densities[i * self.stride].copy())

    def keyframe_velocity(self, i: int) -> MacVelocity2:
        return MacVelocity2(self.dims, self.kf_u[i].copy(), self.kf_v[i].copy())

    def dense_density(self, interval: int, j: int) -> np.ndarray:
        return self.densities[interval * self.stride + j]

    @classmethod
    def from_sequence(cls, seq: SimSequence, name: str = "") -> "Scenario":
        scene = seq.scene
        constants = SceneConstants(
            dt=scene.dt,
            dx=scene.dims.dx,
            buoyancy=scene.buoyancy,
            emitter_rate=scene.emitter.rate,
        )
        kf = seq.keyframes()
        return cls(
            name=name,
            constants=constants,
            dims=scene.dims,
            dt=scene.dt,
            stride=scene.substeps_per_frame,
            densities=np.stack([st.density.values for st in seq.states]),
            kf_u=np.stack([st.velocity.u for st in kf]),
            kf_v=np.stack([st.velocity.v for st in kf]),
        )


def random_scene(
    dims: GridDims,
    frames: int,
    stride: int,
    rng: SplitMix64,
    dt: float = 0.08,
) -> SceneConfig:
    """Randomized rising-plume scene; all draws from the given stream."""
    from .solver import Emitter, Obstacle

    w, h = dims.width, dims.height
    emitter = Emitter(
        x=rng.uniform(0.3, 0.7) * w,
        y=rng.uniform(0.1, 0.25) * h,
        radius=rng.uniform(0.06, 0.12) * w,
        rate=rng.uniform(1.5, 3.0),
    )
    obstacle = None
    if rng.uniform() < 0.3:
        obstacle = Obstacle(
            x=rng.uniform(0.3, 0.7) * w,
            y=rng.uniform(0.45, 0.7) * h,
            radius=rng.uniform(0.06, 0.12) * w,
        )
    return SceneConfig(
        dims=dims,
        dt=dt,
        substeps_per_frame=stride,
        frames=frames,
        emitter=emitter,
        buoyancy=rng.uniform(0.8, 2.0),
        obstacle=obstacle,
        seed=rng.next_u64(),
        initial_noise=rng.uniform(0.0, 0.08),
    )


def make_dataset(
    count: int,
    dims: GridDims,
    frames: int,
    stride: int,
    seed: int,
    dt: float = 0.08,
) -> list[Scenario]:
    rng = SplitMix64(seed)
    out = []
    for i in range(count):
        scene = random_scene(dims, frames, stride, rng, dt)
        out.append(Scenario.from_sequence(generate_scenario(scene), name=f"scn{i:04d}"))
    return out


def split_dataset(scenarios: list, seed: int) -> dict[str, list]:
    """Deterministic 80/10/10 split by scenario; remainder goes to train."""
    n = len(scenarios)
    if n < 10:
        raise ValueError(f"need at least 10 scenarios to split, got {n}")
    order = list(range(n))
    SplitMix64(seed).shuffle(order)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return {
        "train": [scenarios[i] for i in order[:n_train]],
        "val": [scenarios[i] for i in order[n_train : n_train + n_val]],
        "test": [scenarios[i] for i in order[n_train + n_val :]],
    }


@dataclass(frozen=True)
class FieldStats:
    """Normalization ranges for density and the two velocity components."""

    rho: NormStats
    u: NormStats
    v: NormStats

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {
            "rho": (self.rho.lo, self.rho.hi),
            "u": (self.u.lo, self.u.hi),
            "v": (self.v.lo, self.v.hi),
        }


def compute_field_stats(scenarios: list[Scenario]) -> FieldStats:
    """Data ranges over the training split only."""
    if not scenarios:
        raise ValueError("cannot compute stats over an empty split")
    rho_lo = min(float(s.densities.min()) for s in scenarios)
    rho_hi = max(float(s.densities.max()) for s in scenarios)
    u_lo = min(float(s.kf_u.min()) for s in scenarios)
    u_hi = max(float(s.kf_u.max()) for s in scenarios)
    v_lo = min(float(s.kf_v.min()) for s in scenarios)
    v_hi = max(float(s.kf_v.max()) for s in scenarios)

    def mk(lo, hi):
        if hi <= lo:
            hi = lo + 1.0
        return NormStats(lo, hi)

    return FieldStats(mk(rho_lo, rho_hi), mk(u_lo, u_hi), mk(v_lo, v_hi))


def normalized_keyframe(
    sc: Scenario, i: int, stats: FieldStats
) -> tuple[Field2, MacVelocity2]:
    rho = Field2(sc.dims, normalize_array(sc.densities[i * sc.stride], stats.rho))
    vel = MacVelocity2(
        sc.dims,
        normalize_array(sc.kf_u[i], stats.u),
        normalize_array(sc.kf_v[i], stats.v),
    )
    return rho, vel


def interval_token_sequence(
    sc: Scenario, interval: int, stats: FieldStats, cfg: M.ModelConfig
) -> TokenSequence:
    kf0 = normalized_keyframe(sc, interval, stats)
    kf1 = normalized_keyframe(sc, interval + 1, stats)
    return build_token_sequence(sc.constants, (kf0, kf1), cfg.patch)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]  # best-validation parameters
    final_params: dict[str, np.ndarray]
    stats: FieldStats
    cfg: M.ModelConfig
    log: list[dict]
    best_val: float
    best_step: int

    def log_jsonl(self) -> str:
        return "\n".join(json.dumps(rec) for rec in self.log) + "\n"


def _gumbel_st_codes(
    tape: Tape,
    pt: dict,
    cfg: M.ModelConfig,
    ctx_rep: ad.Tensor,  # (N, d_model)
    s_all: np.ndarray,  # (N,)
    tau: float,
    rng: SplitMix64,
):
    """Sample one code per row with straight-through gradients.

    Forward uses the hard (argmax-of-perturbed-logits) embedding; backward
    routes through the dense softmax weights, so the whole codebook and the
    score head receive gradient even when code 0 wins.
    """
    n = len(s_all)
    logits = M.score_logits_graph(tape, pt, cfg, ctx_rep, s_all)
    g = -np.log(-np.log(
        np.array([[rng.uniform(1e-12, 1.0) for _ in range(cfg.codebook_k)] for _ in range(n)])
    ))
    z = ad.scale(ad.add(logits, tape.const(g)), 1.0 / tau)
    soft = ad.softmax(z)
    table = M.codebook_table(tape, pt, cfg)
    hard_idx = z.data.argmax(axis=1)
    hard_rows = table.data[hard_idx]
    correction = tape.const(hard_rows - soft.data @ table.data)
    return ad.add(ad.matmul(soft, table), correction), hard_idx


def _batch_loss(
    tape: Tape,
    pt: dict,
    cfg: M.ModelConfig,
    lc: LossConfig,
    stats: FieldStats,
    items: list[tuple[Scenario, int, list[int]]],
    tau: float,
    gumbel_rng: SplitMix64 | None,
):
    """Build the full loss graph for a batch of (scenario, interval, substeps)."""
    seqs = [interval_token_sequence(sc, iv, stats, cfg) for sc, iv, _ in items]
    dims = items[0][0].dims
    hw = (dims.ny, dims.nx)
    tokens, ctx = M.encode_graph(tape, pt, cfg, seqs, hw)
    n_eq = len(seqs[0].ids)

    s_all = np.concatenate(
        [np.array([j / sc.stride for j in js]) for sc, _, js in items]
    )
    counts = [len(js) for _, _, js in items]
    ctx_rep = ad.concat(
        [ad.tile0(ad.narrow(ctx, 0, i, 1), c) for i, c in enumerate(counts)], axis=0
    )
    if gumbel_rng is not None:
        code_emb, _ = _gumbel_st_codes(tape, pt, cfg, ctx_rep, s_all, tau, gumbel_rng)
    else:
        code_emb = tape.const(np.zeros((len(s_all), cfg.code_dim)))

    preds = []
    targets = []
    adv_refs = []
    offset = 0
    for b, (sc, iv, js) in enumerate(items):
        s_vals = np.array([j / sc.stride for j in js])
        rho0n = normalize_array(sc.dense_density(iv, 0), stats.rho)
        rho1n = normalize_array(sc.dense_density(iv, sc.stride), stats.rho)
        emb = ad.narrow(code_emb, 0, offset, len(js))
        preds.append(
            M.decode_graph(tape, pt, cfg, ad.narrow(tokens, 0, b, 1),
                           ad.narrow(ctx, 0, b, 1), rho0n, rho1n, s_vals, emb, n_eq)
        )
        rho0_raw = sc.keyframe_density(iv)
        vel0 = sc.keyframe_velocity(iv)
        for j in js:
            targets.append(normalize_array(sc.dense_density(iv, j), stats.rho))
            ref = advect_semi_lagrangian(
                rho0_raw, vel0, (j / sc.stride) * sc.dt, warn_cfl=False
            )
            adv_refs.append(normalize_array(ref.values, stats.rho))
        offset += len(js)

    pred = ad.concat(preds, axis=0)  # (N, 1, H, W)
    tgt = np.stack(targets)[:, None]
    hub = ad.huber(pred, tgt, lc.delta)

    total = hub
    if lc.lambda_vol > 0:
        half = 0.5 * (stats.rho.hi - stats.rho.lo)
        mid = stats.rho.lo + half
        pred_raw = ad.add(ad.scale(pred, half), tape.const(np.array(mid)))
        sums = ad.tensor_sum(pred_raw, axis=(1, 2, 3))
        tsum = denormalize_array(tgt, stats.rho).sum(axis=(1, 2, 3))
        diff = ad.absolute(ad.add(sums, tape.const(-tsum)))
        w = 1.0 / np.maximum(tsum, VOLUME_EPS)
        total = ad.add(total, ad.scale(ad.tensor_mean(ad.mul(diff, tape.const(w))), lc.lambda_vol))
    if lc.lambda_adv > 0:
        adv = ad.huber(pred, np.stack(adv_refs)[:, None], lc.delta)
        total = ad.add(total, ad.scale(adv, lc.lambda_adv))
    return total, hub


def evaluate(
    dataset: list[Scenario],
    params: dict[str, np.ndarray],
    cfg: M.ModelConfig,
    stats: FieldStats,
    delta: float = 1.0,
) -> tuple[float, float]:
    """(mean Huber, mean mass error) over all interior substeps, code 0."""
    hubs = []
    mass = []
    dtype = str(next(iter(params.values())).dtype)
    for sc in dataset:
        hw = (sc.dims.ny, sc.dims.nx)
        seqs = [interval_token_sequence(sc, iv, stats, cfg) for iv in range(sc.n_intervals)]
        enc_tape = Tape(dtype)
        pt = {k: enc_tape.const(v) for k, v in params.items()}
        tokens, ctx = M.encode_graph(enc_tape, pt, cfg, seqs, hw)
        tok_np, ctx_np = tokens.data, ctx.data
        enc_tape.release()
        n_eq = len(seqs[0].ids)
        for iv in range(sc.n_intervals):
            js = list(range(1, sc.stride))
            if not js:
                continue
            s_vals = np.array([j / sc.stride for j in js])
            rho0n = normalize_array(sc.dense_density(iv, 0), stats.rho)
            rho1n = normalize_array(sc.dense_density(iv, sc.stride), stats.rho)
            tape = Tape(dtype)
            pt_iv = {k: tape.const(v) for k, v in params.items()}
            code_emb = tape.const(np.zeros((len(js), cfg.code_dim)))
            pred = M.decode_graph(
                tape, pt_iv, cfg, tape.const(tok_np[iv : iv + 1]),
                tape.const(ctx_np[iv : iv + 1]),
                rho0n, rho1n, s_vals, code_emb, n_eq,
            ).data[:, 0]
            tape.release()
            for j, pn in zip(js, pred):
                truth = sc.dense_density(iv, j)
                pr = denormalize_array(np.asarray(pn, dtype=np.float64), stats.rho)
                hubs.append(
                    huber_loss(Field2(sc.dims, normalize_array(truth, stats.rho)),
                               Field2(sc.dims, np.asarray(pn, dtype=np.float64)), delta)
                )
                mass.append(abs(pr.sum() - truth.sum()) / max(truth.sum(), VOLUME_EPS))
    return float(np.mean(hubs)), float(np.mean(mass))


def train(
    dataset: dict[str, list[Scenario]],
    params: dict[str, np.ndarray],
    cfg: M.ModelConfig,
    tc: TrainConfig,
    lc: LossConfig,
) -> TrainResult:
    """Fit params on dataset['train'], tracking dataset['val'] for the best checkpoint."""
    train_set = dataset["train"]
    val_set = dataset.get("val", [])
    if not train_set:
        raise ValueError("empty training split")
    dims = train_set[0].dims
    for sc in train_set + val_set:
        if sc.dims != dims:
            raise ValueError("all scenarios must share grid dims (model is resolution-specific)")
        if sc.stride < 2:
            raise ValueError(f"{sc.name}: stride < 2 leaves no interior substeps to supervise")

    stats = compute_field_stats(train_set)
    root = SplitMix64(tc.seed)
    batch_rng = root.split()
    gumbel_rng = root.split()
    probe_rng = root.split()

    def sample_batch(rng: SplitMix64):
        items = []
        for _ in range(tc.batch_size):
            sc = train_set[rng.randint(len(train_set))]
            iv = rng.randint(sc.n_intervals)
            js = [1 + rng.randint(sc.stride - 1) for _ in range(tc.substep_samples)]
            items.append((sc, iv, js))
        return items

    adam = AdamState.init(params)
    log: list[dict] = []
    best_val = np.inf
    best_step = 0
    best_params = {k: v.copy() for k, v in params.items()}

    def run_eval(step: int, train_loss: float) -> None:
        nonlocal best_val, best_step, best_params
        if val_set:
            vh, vm = evaluate(val_set, params, cfg, stats, lc.delta)
        else:
            vh, vm = float("nan"), float("nan")
        log.append(
            {
                "step": step,
                "train_loss": round(train_loss, 8),
                "val_huber": round(vh, 8),
                "val_mass_err": round(vm, 8),
            }
        )
        if val_set and vh < best_val:
            best_val = vh
            best_step = step
            best_params = {k: v.copy() for k, v in params.items()}

    # step-0 entry: probe batch forward only, params untouched
    tape = Tape(str(next(iter(params.values())).dtype))
    pt = M.wrap_params(tape, params)
    probe_items = sample_batch(probe_rng)
    loss0, _ = _batch_loss(tape, pt, cfg, lc, stats, probe_items, tc.gumbel_tau, None)
    loss0_val = float(loss0.data)
    tape.release()
    run_eval(0, loss0_val)

    for step in range(1, tc.steps + 1):
        items = sample_batch(batch_rng)
        tape = Tape(str(next(iter(params.values())).dtype))
        pt = M.wrap_params(tape, params)
        total, _hub = _batch_loss(tape, pt, cfg, lc, stats, items, tc.gumbel_tau, gumbel_rng)
        loss_val = float(total.data)
        if not np.isfinite(loss_val):
            ids = "; ".join(f"{sc.name} interval {iv} substeps {js}" for sc, iv, js in items)
            raise FloatingPointError(f"non-finite loss at step {step} (samples: {ids})")
        ad.backward(tape, total)
        grads = {k: t.gradient() for k, t in pt.items()}
        adam_step(params, grads, adam, lr=tc.lr)
        tape.release()
        if step % tc.eval_interval == 0 or step == tc.steps:
            run_eval(step, loss_val)

    if not val_set:
        best_params = {k: v.copy() for k, v in params.items()}
        best_step = tc.steps
        best_val = float("nan")
    return TrainResult(
        params=best_params,
        final_params=params,
        stats=stats,
        cfg=cfg,
        log=log,
        best_val=float(best_val),
        best_step=best_step,
    )
