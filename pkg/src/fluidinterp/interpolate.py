"""Inference pipelines: substep interpolation, baselines, and variant trees.

Substeps are placed at s_i = (i + 0.5)/S inside each keyframe interval, so
S=2 queries 0.25 and 0.75. Output sequences interleave the untouched input
keyframes with predicted substeps in time order; frame timestamps are in
keyframe units (keyframe i at t=i, substeps at i+s).

Variants: every substep position has a static distribution over codebook
codes (the score head sees only the interval context and the query time, not
earlier choices), so a variant path is a code string over the positions
(interval 0 substeps, then interval 1, ...). Trees share prediction frames
along common prefixes; intervals are chained independently by beam search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tape
from .formats import CheckpointData
from .grid import (
    Field2,
    GridDims,
    MacVelocity2,
    boolean_combine,
    denormalize_array,
    normalize_array,
)
from .rng import SplitMix64
from .solver import advect_semi_lagrangian
from .tokenizer import build_token_sequence
from .training import FieldStats
from .grid import DEFAULT_RHO_MAX

Keyframe = tuple[Field2, MacVelocity2]


@dataclass
class InterpRequest:
    keyframes: list[Keyframe]
    substeps: int
    ckpt: CheckpointData

    def __post_init__(self):
        if len(self.keyframes) < 2:
            raise ValueError("need at least 2 keyframes to interpolate")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        dims = self.keyframes[0][0].dims
        for rho, _ in self.keyframes[1:]:
            if rho.dims != dims:
                raise ValueError("keyframes must share grid dims")
        if (dims.nx, dims.ny) != (self.ckpt.nx, self.ckpt.ny):
            raise ValueError(
                f"keyframes are {dims.nx}x{dims.ny} but the checkpoint was trained on "
                f"{self.ckpt.nx}x{self.ckpt.ny}; the model is resolution-specific"
            )

    @property
    def n_intervals(self) -> int:
        return len(self.keyframes) - 1


@dataclass
class FrameSequence:
    frames: list[Field2]
    times: list[float]


def substep_times(s: int) -> np.ndarray:
    return (np.arange(s) + 0.5) / s


def _ckpt_stats(ckpt: CheckpointData) -> FieldStats:
    try:
        return FieldStats(ckpt.stats["rho"], ckpt.stats["u"], ckpt.stats["v"])
    except KeyError as e:
        raise ValueError(f"checkpoint is missing normalization stats for {e}") from None


@dataclass
class _IntervalCache:
    """Everything needed to decode any substep of one interval."""

    rho0n: np.ndarray
    rho1n: np.ndarray
    tokens: np.ndarray  # (T, d_model)
    ctx: np.ndarray  # (d_model,)
    n_eq: int
    logits: np.ndarray  # (S, k) variant logits per substep
    logprobs: np.ndarray  # (S, k) log softmax rows


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _prepare_intervals(req: InterpRequest) -> list[_IntervalCache]:
    ckpt = req.ckpt
    stats = _ckpt_stats(ckpt)
    s_vals = substep_times(req.substeps)
    out = []
    for i in range(req.n_intervals):
        (r0, v0), (r1, v1) = req.keyframes[i], req.keyframes[i + 1]
        if v0 is None or v1 is None:
            raise ValueError("interpolation requires keyframes with stored velocities")
        kf0 = (
            Field2(r0.dims, normalize_array(r0.values, stats.rho)),
            MacVelocity2(r0.dims, normalize_array(v0.u, stats.u), normalize_array(v0.v, stats.v)),
        )
        kf1 = (
            Field2(r1.dims, normalize_array(r1.values, stats.rho)),
            MacVelocity2(r1.dims, normalize_array(v1.u, stats.u), normalize_array(v1.v, stats.v)),
        )
        seq = build_token_sequence(ckpt.scene_defaults, (kf0, kf1), ckpt.cfg.patch)
        latent = M.encode(seq, ckpt.params, ckpt.cfg, (r0.dims.ny, r0.dims.nx))
        logits = np.stack(
            [M.variant_logits(latent, s, ckpt.params, ckpt.cfg) for s in s_vals]
        )
        out.append(
            _IntervalCache(
                rho0n=kf0[0].values,
                rho1n=kf1[0].values,
                tokens=latent.tokens,
                ctx=latent.context,
                n_eq=len(seq.ids),
                logits=logits,
                logprobs=_log_softmax(logits),
            )
        )
    return out


def _decode_substeps(
    ckpt: CheckpointData, cache: _IntervalCache, s_vals: np.ndarray, codes: list[int]
) -> np.ndarray:
    """Normalized density predictions (len(s_vals), H, W) for given codes."""
    cfg = ckpt.cfg
    tape = Tape(str(next(iter(ckpt.params.values())).dtype))
    pt = {k: tape.const(v) for k, v in ckpt.params.items()}
    table = np.vstack(
        [np.zeros((1, cfg.code_dim), dtype=ckpt.params["codebook.embed"].dtype),
         ckpt.params["codebook.embed"]]
    )
    for c in codes:
        if not 0 <= c < cfg.codebook_k:
            raise ValueError(f"code {c} outside codebook of size {cfg.codebook_k}")
    code_emb = tape.const(table[list(codes)])
    pred = M.decode_graph(
        tape, pt, cfg,
        tape.const(cache.tokens[None]), tape.const(cache.ctx[None]),
        cache.rho0n, cache.rho1n, np.asarray(s_vals), code_emb, cache.n_eq,
    )
    out = np.asarray(pred.data[:, 0], dtype=np.float64)
    tape.release()
    return out


def interpolate(req: InterpRequest, codes: list[list[int]] | None = None) -> FrameSequence:
    """Canonical interpolation; `codes` optionally picks a variant code per
    (interval, substep). Keyframes pass through bit-identically."""
    s_vals = substep_times(req.substeps)
    if codes is None:
        codes = [[0] * req.substeps for _ in range(req.n_intervals)]
    if len(codes) != req.n_intervals or any(len(c) != req.substeps for c in codes):
        raise ValueError("codes must be one list of length substeps per interval")
    stats = _ckpt_stats(req.ckpt)
    caches = _prepare_intervals(req)
    frames = [req.keyframes[0][0].copy()]
    times = [0.0]
    for i, cache in enumerate(caches):
        pred = _decode_substeps(req.ckpt, cache, s_vals, codes[i])
        for s, pn in zip(s_vals, pred):
            frames.append(Field2(frames[0].dims, denormalize_array(pn, stats.rho)))
            times.append(i + float(s))
        frames.append(req.keyframes[i + 1][0].copy())
        times.append(float(i + 1))
    return FrameSequence(frames, times)


# ---------------------------------------------------------------------------
# baselines


def baseline_linear(keyframes: list[Field2], substeps: int) -> FrameSequence:
    """Per-cell linear interpolation at the same substep placement."""
    if len(keyframes) < 2:
        raise ValueError("need at least 2 keyframes")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    s_vals = substep_times(substeps)
    frames = [keyframes[0].copy()]
    times = [0.0]
    for i in range(len(keyframes) - 1):
        a, b = keyframes[i], keyframes[i + 1]
        for s in s_vals:
            frames.append(Field2(a.dims, (1.0 - s) * a.values + s * b.values))
            times.append(i + float(s))
        frames.append(b.copy())
        times.append(float(i + 1))
    return FrameSequence(frames, times)


def baseline_readvect(keyframes: list[Keyframe], substeps: int, dt: float) -> FrameSequence:
    """Semi-Lagrangian re-advection of rho0 under its stored velocity."""
    if len(keyframes) < 2:
        raise ValueError("need at least 2 keyframes")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    s_vals = substep_times(substeps)
    frames = [keyframes[0][0].copy()]
    times = [0.0]
    for i in range(len(keyframes) - 1):
        rho0, vel0 = keyframes[i]
        if vel0 is None:
            raise ValueError("re-advection baseline requires keyframes with stored velocities")
        for s in s_vals:
            frames.append(advect_semi_lagrangian(rho0, vel0, float(s) * dt, warn_cfl=False))
            times.append(i + float(s))
        frames.append(keyframes[i + 1][0].copy())
        times.append(float(i + 1))
    return FrameSequence(frames, times)


def combine_keyframes(
    a: list[Keyframe], b: list[Keyframe], op: str, rho_max: float = DEFAULT_RHO_MAX
) -> list[Keyframe]:
    """Boolean density mixing of two keyframe sequences; velocities from `a`."""
    if len(a) != len(b):
        raise ValueError(f"keyframe counts differ: {len(a)} vs {len(b)}")
    return [
        (boolean_combine(ra, rb, op, rho_max), va) for (ra, va), (rb, _) in zip(a, b)
    ]


# ---------------------------------------------------------------------------
# sampling and search


def top_k_sample(logits: np.ndarray, k: int, temperature: float, seed) -> int:
    """Sample among the k largest logits; temperature 0 (or k=1) is argmax.

    Ties rank by lower index. `seed` is an integer or a SplitMix64 stream.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or len(logits) == 0:
        raise ValueError("logits must be a non-empty vector")
    if not 1 <= k <= len(logits):
        raise ValueError(f"k={k} outside [1, {len(logits)}]")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    order = np.argsort(-logits, kind="stable")
    if k == 1 or temperature == 0.0:
        return int(order[0])
    rng = SplitMix64(seed) if isinstance(seed, int) else seed
    top = order[:k]
    z = logits[top] / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    r = rng.uniform()
    cum = 0.0
    for idx, prob in zip(top, p):
        cum += prob
        if r < cum:
            return int(idx)
    return int(top[-1])


def diverse_beam_search(
    score_fn,
    groups: int,
    beam: int,
    diversity: float,
    length: int,
) -> list[tuple[tuple[int, ...], float]]:
    """Group-wise beam search over code sequences.

    `score_fn(prefix)` returns the logits vector for the next position.
    Group g's candidates are penalized by diversity * (times earlier groups
    chose that code at the same position). Within each group results sort by
    unpenalized log-probability. With diversity > 0 the G*B returned
    sequences are pairwise distinct; with diversity == 0 the penalty
    vanishes and every group returns the same top-B list.
    """
    if groups < 1 or beam < 1 or length < 1:
        raise ValueError("groups, beam and length must all be >= 1")
    if diversity < 0:
        raise ValueError("diversity penalty must be >= 0")

    chosen: list[dict[int, int]] = [dict() for _ in range(length)]
    results: list[tuple[tuple[int, ...], float]] = []
    taken: set[tuple[int, ...]] = set()

    for _g in range(groups):
        beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        for t in range(length):
            final = t == length - 1
            cands = []
            for prefix, lp in beams:
                logp = _log_softmax(np.asarray(score_fn(prefix), dtype=np.float64))
                for c, clp in enumerate(logp):
                    pen = diversity * chosen[t].get(c, 0)
                    cands.append((lp + clp - pen, lp + clp, prefix + (c,)))
            cands.sort(key=lambda x: (-x[0], x[2]))
            if final and diversity > 0:
                cands = [c for c in cands if c[2] not in taken]
            if len(cands) < beam:
                raise ValueError(
                    "beam search exhausted: cannot produce enough distinct sequences "
                    f"(need {beam}, have {len(cands)})"
                )
            beams = [(p, lp) for _, lp, p in cands[:beam]]
        beams.sort(key=lambda x: (-x[1], x[0]))
        for seq, lp in beams:
            for t, c in enumerate(seq):
                chosen[t][c] = chosen[t].get(c, 0) + 1
            taken.add(seq)
            results.append((seq, lp))
    return results


# ---------------------------------------------------------------------------
# variant trees


@dataclass
class TreeNode:
    node_id: int
    parent: int  # -1 for the root
    interval: int  # -1 for the root
    substep: int  # -1 for the root
    code: int
    logp: float  # log-probability of this code at this position


class VariantTree:
    """Rooted tree of per-substep code choices over a keyframe sequence.

    Depth d (1-based) corresponds to flat position d-1, i.e. interval
    (d-1) // S, substep (d-1) % S: every root path visits positions in
    strictly increasing (interval, substep) order. The root represents the
    shared initial conditions; the all-zero-codes path is the canonical
    interpolation. Predicted frames depend only on (interval, substep,
    code), so frames along shared prefixes are shared exactly.
    """

    def __init__(self, req: InterpRequest, default_k: int = 1, seed: int = 0):
        self.req = req
        self.substeps = req.substeps
        self.n_intervals = req.n_intervals
        self.default_k = default_k
        self.seed = seed
        self._caches = _prepare_intervals(req)
        self._stats = _ckpt_stats(req.ckpt)
        self.nodes: list[TreeNode] = [TreeNode(0, -1, -1, -1, 0, 0.0)]
        self._children: dict[tuple[int, int], int] = {}
        self._frames: dict[int, np.ndarray] = {}  # node_id -> normalized density
        self.leaves: list[int] = []

    @property
    def n_positions(self) -> int:
        return self.n_intervals * self.substeps

    def position(self, depth: int) -> tuple[int, int]:
        return divmod(depth - 1, self.substeps)

    def node_depth(self, node_id: int) -> int:
        depth = 0
        while node_id != 0:
            node_id = self.nodes[node_id].parent
            depth += 1
        return depth

    def logits_at(self, interval: int, substep: int) -> np.ndarray:
        return self._caches[interval].logits[substep].copy()

    def _child(self, parent: int, code: int, logp: float) -> int:
        key = (parent, code)
        if key in self._children:
            return self._children[key]
        depth = self.node_depth(parent) + 1
        iv, sub = self.position(depth)
        node = TreeNode(len(self.nodes), parent, iv, sub, code, logp)
        self.nodes.append(node)
        self._children[key] = node.node_id
        return node.node_id

    def add_path(self, codes) -> int:
        """Insert a full code string (one code per position); returns leaf id."""
        codes = list(codes)
        if len(codes) != self.n_positions:
            raise ValueError(
                f"path length {len(codes)} != positions {self.n_positions}"
            )
        node = 0
        for d, code in enumerate(codes, start=1):
            iv, sub = self.position(d)
            lp = float(self._caches[iv].logprobs[sub][code])
            node = self._child(node, code, lp)
        if node not in self.leaves:
            self.leaves.append(node)
        return node

    def path_nodes(self, node_id: int) -> list[int]:
        if not 0 <= node_id < len(self.nodes):
            raise ValueError(f"unknown node id {node_id}")
        chain = []
        while node_id != 0:
            chain.append(node_id)
            node_id = self.nodes[node_id].parent
        return chain[::-1]

    def path_codes(self, node_id: int) -> list[int]:
        return [self.nodes[n].code for n in self.path_nodes(node_id)]

    def path_logp(self, node_id: int) -> float:
        return float(sum(self.nodes[n].logp for n in self.path_nodes(node_id)))

    def _node_frame(self, node_id: int) -> np.ndarray:
        if node_id not in self._frames:
            node = self.nodes[node_id]
            s = float(substep_times(self.substeps)[node.substep])
            pred = _decode_substeps(
                self.req.ckpt, self._caches[node.interval], np.array([s]), [node.code]
            )
            self._frames[node_id] = pred[0]
        return self._frames[node_id]

    def materialize(self, node_id: int) -> FrameSequence:
        """Full frame sequence for the path through node_id (must reach the
        final position). Keyframes pass through bit-identically."""
        chain = self.path_nodes(node_id)
        if len(chain) != self.n_positions:
            raise ValueError(
                f"node {node_id} at depth {len(chain)} is not a full path "
                f"(need {self.n_positions})"
            )
        dims = self.req.keyframes[0][0].dims
        s_vals = substep_times(self.substeps)
        frames = [self.req.keyframes[0][0].copy()]
        times = [0.0]
        for iv in range(self.n_intervals):
            for sub in range(self.substeps):
                nid = chain[iv * self.substeps + sub]
                frames.append(
                    Field2(dims, denormalize_array(self._node_frame(nid), self._stats.rho))
                )
                times.append(iv + float(s_vals[sub]))
            frames.append(self.req.keyframes[iv + 1][0].copy())
            times.append(float(iv + 1))
        return FrameSequence(frames, times)

    def branch(self, node_id: int, k: int | None = None, seed: int | None = None) -> list[int]:
        """Re-expand all positions after node_id with fresh top-k draws.

        Frames up to node_id are shared; returns the node ids of the new
        suffix (existing nodes are reused when the same code is drawn)."""
        if not 0 <= node_id < len(self.nodes):
            raise ValueError(f"unknown node id {node_id}")
        k = self.default_k if k is None else k
        rng = SplitMix64(self.seed if seed is None else seed)
        depth = self.node_depth(node_id)
        node = node_id
        new_ids = []
        for d in range(depth + 1, self.n_positions + 1):
            iv, sub = self.position(d)
            logits = self._caches[iv].logits[sub]
            code = top_k_sample(logits, k, 1.0, rng)
            lp = float(self._caches[iv].logprobs[sub][code])
            node = self._child(node, code, lp)
            new_ids.append(node)
        if node not in self.leaves:
            self.leaves.append(node)
        return new_ids

    def to_dict(self) -> dict:
        return {
            "substeps": self.substeps,
            "intervals": self.n_intervals,
            "default_k": self.default_k,
            "seed": self.seed,
            "nodes": [
                {
                    "id": n.node_id,
                    "parent": n.parent,
                    "interval": n.interval,
                    "substep": n.substep,
                    "code": n.code,
                    "logp": round(n.logp, 9),
                }
                for n in self.nodes
            ],
            "leaves": list(self.leaves),
            "paths": [
                {
                    "leaf": leaf,
                    "codes": self.path_codes(leaf),
                    "logp": round(self.path_logp(leaf), 9),
                }
                for leaf in self.leaves
            ],
        }


def build_variant_tree(
    req: InterpRequest,
    k: int,
    groups: int,
    beam: int,
    diversity: float,
    seed: int,
) -> VariantTree:
    """Canonical path plus groups*beam diverse paths, intervals chained
    independently (the r-th sequence of each interval's search joins the
    r-th full path)."""
    tree = VariantTree(req, default_k=k, seed=seed)
    tree.add_path([0] * tree.n_positions)  # canonical

    per_interval = []
    for iv in range(req.n_intervals):
        cache = tree._caches[iv]

        def score_fn(prefix, _c=cache):
            return _c.logits[len(prefix)]

        per_interval.append(
            diverse_beam_search(score_fn, groups, beam, diversity, req.substeps)
        )
    for r in range(groups * beam):
        full = []
        for iv in range(req.n_intervals):
            full.extend(per_interval[iv][r][0])
        tree.add_path(full)
    return tree
