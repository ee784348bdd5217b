"""Equation and field tokenization for the interpolation model.

The governing equation is fixed (incompressible momentum transport with the
viscosity term dropped), so the vocabulary is closed and the equation part
of every token sequence is one frozen emission: the symbols of
rho*(du/dt + u.grad(u)) = -grad(p), then SEP, then one NUM token per scene
constant carrying its value. Keyframe fields enter as non-overlapping
patch tiles tagged with tile coordinates and a keyframe time in {0, 1};
continuous time is carried by Fourier features so substep queries between
the keyframes live on the same [0, 1] axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field2, MacVelocity2

# Frozen vocabulary; ids are positional and must never be reordered.
VOCAB_SYMBOLS = (
    "rho",
    "partial",
    "ddt",
    "u",
    "dot",
    "grad",
    "p",
    "eq",
    "minus",
    "lparen",
    "rparen",
    "plus",
    "NUM",
    "PAD",
    "SEP",
)
VOCAB = {name: i for i, name in enumerate(VOCAB_SYMBOLS)}
VOCAB_SIZE = len(VOCAB_SYMBOLS)
NUM_ID = VOCAB["NUM"]
PAD_ID = VOCAB["PAD"]
SEP_ID = VOCAB["SEP"]

# rho ( d u /dt + u . grad u ) = - grad p
EQUATION_TOKEN_NAMES = (
    "rho",
    "lparen",
    "partial",
    "u",
    "ddt",
    "plus",
    "u",
    "dot",
    "grad",
    "u",
    "rparen",
    "eq",
    "minus",
    "grad",
    "p",
)
EQUATION_IDS = tuple(VOCAB[name] for name in EQUATION_TOKEN_NAMES)
EQUATION_STRING = "rho*(du/dt + u.grad(u)) = -grad(p)"

_OPERANDS = {"rho", "u", "p"}


@dataclass(frozen=True)
class SceneConstants:
    """Scalars the encoder sees as NUM payloads, in this order."""

    dt: float
    dx: float
    buoyancy: float
    emitter_rate: float

    def __post_init__(self):
        for name in ("dt", "dx", "buoyancy", "emitter_rate"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"scene constant {name} is not finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dt, self.dx, self.buoyancy, self.emitter_rate)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray  # (n_eq,) int64 equation-token ids
    values: np.ndarray  # (n_eq,) float64, 0 except at NUM positions
    patches: np.ndarray  # (n_data, 3*patch*patch) float64 tile vectors
    coords: np.ndarray  # (n_data, 2) int64 (tile row, tile col)
    times: np.ndarray  # (n_data,) float64 keyframe times in [0, 1]
    patch: int

    def __post_init__(self):
        if self.ids.shape != self.values.shape:
            raise ValueError("ids and values must align")
        if not (len(self.patches) == len(self.coords) == len(self.times)):
            raise ValueError("patches, coords and times must align")
        if len(self.times) and (self.times.min() < 0.0 or self.times.max() > 1.0):
            raise ValueError("data-token timestamps must lie in [0, 1]")


def tokenize_equation(constants: SceneConstants) -> tuple[np.ndarray, np.ndarray]:
    """Frozen equation emission + SEP + one NUM per scene constant."""
    payload = constants.as_tuple()
    ids = np.array(EQUATION_IDS + (SEP_ID,) + (NUM_ID,) * len(payload), dtype=np.int64)
    values = np.zeros(len(ids), dtype=np.float64)
    values[-len(payload) :] = payload
    return ids, values


def detokenize(ids) -> str:
    """Rebuild the equation string from ids; stops at SEP, skips PAD."""
    names = []
    for i in ids:
        i = int(i)
        if not 0 <= i < VOCAB_SIZE:
            raise ValueError(f"token id {i} outside vocabulary")
        name = VOCAB_SYMBOLS[i]
        if name == "SEP":
            break
        if name in ("PAD", "NUM"):
            continue
        names.append(name)

    out = []
    prev = None
    k = 0
    while k < len(names):
        name = names[k]
        if name == "partial" and k + 2 < len(names) and names[k + 2] == "ddt":
            out.append(f"d{names[k + 1]}/dt")
            prev = names[k + 1]
            k += 3
            continue
        if name == "grad" and k + 1 < len(names):
            out.append(f"grad({names[k + 1]})")
            prev = names[k + 1]
            k += 2
            continue
        if name in _OPERANDS:
            out.append(name)
        elif name == "lparen":
            out.append("*(" if prev in _OPERANDS else "(")
        elif name == "rparen":
            out.append(")")
        elif name == "plus":
            out.append(" + ")
        elif name == "minus":
            out.append("-")
        elif name == "dot":
            out.append(".")
        elif name == "eq":
            out.append(" = ")
        else:
            raise ValueError(f"cannot detokenize symbol {name!r} here")
        prev = name
        k += 1
    return "".join(out)


def tile_grid(arr: np.ndarray, patch: int) -> np.ndarray:
    """(ny, nx) -> (tiles, patch*patch), tiles in row-major tile order."""
    ny, nx = arr.shape
    if ny % patch or nx % patch:
        raise ValueError(f"patch {patch} does not divide grid {nx}x{ny}")
    gy, gx = ny // patch, nx // patch
    return (
        arr.reshape(gy, patch, gx, patch).transpose(0, 2, 1, 3).reshape(gy * gx, patch * patch)
    )


def untile_grid(tiles: np.ndarray, ny: int, nx: int, patch: int) -> np.ndarray:
    gy, gx = ny // patch, nx // patch
    return (
        tiles.reshape(gy, gx, patch, patch).transpose(0, 2, 1, 3).reshape(ny, nx)
    )


def _state_tile_vectors(density: Field2, velocity: MacVelocity2, patch: int) -> np.ndarray:
    uc, vc = velocity.to_centers()
    parts = [tile_grid(f, patch) for f in (density.values, uc, vc)]
    return np.concatenate(parts, axis=1)  # (tiles, 3*p*p), channel-major


def embed_fields(
    keyframes: tuple[tuple[Field2, MacVelocity2], tuple[Field2, MacVelocity2]],
    patch: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tile both keyframes into data tokens.

    Fields are expected already normalized to [-1, 1]. Returns
    (patches, coords, times) with keyframe 0's tiles first.
    """
    (rho0, vel0), (rho1, vel1) = keyframes
    if rho0.dims != rho1.dims:
        raise ValueError("keyframes must share grid dims")
    dims = rho0.dims
    if dims.ny % patch or dims.nx % patch:
        raise ValueError(f"patch {patch} does not divide grid {dims.nx}x{dims.ny}")
    gy, gx = dims.ny // patch, dims.nx // patch
    coords_one = np.stack(
        [np.repeat(np.arange(gy), gx), np.tile(np.arange(gx), gy)], axis=1
    ).astype(np.int64)
    p0 = _state_tile_vectors(rho0, vel0, patch)
    p1 = _state_tile_vectors(rho1, vel1, patch)
    patches = np.concatenate([p0, p1], axis=0)
    coords = np.concatenate([coords_one, coords_one], axis=0)
    times = np.concatenate([np.zeros(len(p0)), np.ones(len(p1))])
    return patches, coords, times


def time_encoding(t: float, d: int) -> np.ndarray:
    """Interleaved Fourier pairs [sin(2pi 2^k t), cos(2pi 2^k t)], k=0..d/2-1."""
    if d < 2 or d % 2:
        raise ValueError(f"encoding width must be even and >= 2, got {d}")
    freqs = 2.0 ** np.arange(d // 2)
    ang = 2.0 * np.pi * freqs * float(t)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def build_token_sequence(
    constants: SceneConstants,
    keyframes: tuple[tuple[Field2, MacVelocity2], tuple[Field2, MacVelocity2]],
    patch: int,
) -> TokenSequence:
    ids, values = tokenize_equation(constants)
    patches, coords, times = embed_fields(keyframes, patch)
    return TokenSequence(ids, values, patches, coords, times, patch)
