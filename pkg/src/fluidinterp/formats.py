"""Binary file formats: FGS grid sequences and FFCK checkpoints.

Both formats are little-endian, 32-bit floats on disk, and end with a CRC-32
of every preceding byte, so corruption is detected before any payload is
trusted. Layouts:

FGS1:  magic "FGS1" | u32 version=1 | u32 nx | u32 ny | u32 frame_count |
       u32 field_count | per field (u16 name_len, ASCII name, u8 components)
       | payload frame-major, field-major, row-major f32 | u32 CRC-32
       components: 1 = scalar at cell centers (ny*nx values),
       2 = MAC vector (u: ny*(nx+1) values, then v: (ny+1)*nx values).

FFCK:  magic "FFCK" | u32 version=1 | u32 tensor_count | per tensor, sorted
       by name (u16 name_len, ASCII name, u8 rank, u32 dims..., f32 data) |
       norm-stats block (u32 count, per entry u16 name_len + name, f64 lo,
       f64 hi) | u32 CRC-32

Checkpoints carry one meta tensor besides the parameters, "meta.config"
(model hyperparameters + trained grid size), and two reserved stats-block
entries, "meta.scene.dt_dx" and "meta.scene.buoyancy_rate" (default scene
constants used when interpolating keyframes that arrive without a scene;
they live in the stats block to stay full f64).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import NormStats
from .model import ModelConfig, config_from_vector, config_to_vector
from .tokenizer import SceneConstants

FGS_MAGIC = b"FGS1"
CKPT_MAGIC = b"FFCK"
FGS_VERSION = 1
CKPT_VERSION = 1


class FormatError(ValueError):
    pass


class IntegrityError(FormatError):
    pass


class VersionError(FormatError):
    pass


@dataclass(frozen=True)
class FgsField:
    name: str
    components: int  # 1 scalar, 2 MAC vector

    def __post_init__(self):
        if self.components not in (1, 2):
            raise FormatError(f"field {self.name!r}: components must be 1 or 2")
        if not self.name or not self.name.isascii():
            raise FormatError(f"field name {self.name!r} must be non-empty ASCII")


@dataclass
class FgsSequence:
    """In-memory grid sequence. Frames map field name to its array(s):
    a (ny, nx) array for scalars, an (u, v) tuple for MAC vectors."""

    nx: int
    ny: int
    fields: list[FgsField]
    frames: list[dict]

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]


def _field_shapes(nx: int, ny: int, components: int):
    if components == 1:
        return ((ny, nx),)
    return ((ny, nx + 1), (ny + 1, nx))


def _check_crc(blob: bytes, what: str) -> None:
    if len(blob) < 4:
        raise FormatError(f"{what}: truncated file")
    stored = struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise IntegrityError(
            f"{what}: CRC mismatch over bytes 0..{len(blob) - 5} "
            f"(stored 0x{stored:08x}, computed 0x{actual:08x})"
        )


def write_fgs(path, seq: FgsSequence) -> None:
    if not seq.frames:
        raise FormatError("refusing to write an FGS file with zero frames")
    if not seq.fields:
        raise FormatError("refusing to write an FGS file with zero fields")
    if seq.nx < 1 or seq.ny < 1:
        raise FormatError(f"bad grid size {seq.nx}x{seq.ny}")
    parts = [
        FGS_MAGIC,
        struct.pack("<IIIII", FGS_VERSION, seq.nx, seq.ny, len(seq.frames), len(seq.fields)),
    ]
    for f in seq.fields:
        name = f.name.encode("ascii")
        parts.append(struct.pack("<H", len(name)) + name + struct.pack("<B", f.components))
    for idx, frame in enumerate(seq.frames):
        for f in seq.fields:
            if f.name not in frame:
                raise FormatError(f"frame {idx} missing field {f.name!r}")
            arrays = frame[f.name] if f.components == 2 else (frame[f.name],)
            shapes = _field_shapes(seq.nx, seq.ny, f.components)
            for arr, shape in zip(arrays, shapes):
                arr = np.asarray(arr)
                if arr.shape != shape:
                    raise FormatError(
                        f"frame {idx} field {f.name!r}: shape {arr.shape} != {shape}"
                    )
                parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def read_fgs(path) -> FgsSequence:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != FGS_MAGIC:
        raise FormatError(f"{path}: not an FGS file (bad magic)")
    _check_crc(blob, str(path))
    off = 4
    version, nx, ny, frame_count, field_count = struct.unpack_from("<IIIII", blob, off)
    off += 20
    if version != FGS_VERSION:
        raise VersionError(f"{path}: unsupported FGS version {version}")
    fields = []
    for _ in range(field_count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("ascii")
        off += nlen
        (comp,) = struct.unpack_from("<B", blob, off)
        off += 1
        fields.append(FgsField(name, comp))
    counts = {
        f.name: [int(np.prod(s)) for s in _field_shapes(nx, ny, f.components)] for f in fields
    }
    per_frame = sum(sum(c) for c in counts.values())
    expected = off + 4 * per_frame * frame_count + 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length {len(blob)} does not match header arithmetic {expected}"
        )
    frames = []
    for _ in range(frame_count):
        frame = {}
        for f in fields:
            arrays = []
            for shape in _field_shapes(nx, ny, f.components):
                n = int(np.prod(shape))
                arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
                arrays.append(arr.astype(np.float64))
                off += 4 * n
            frame[f.name] = arrays[0] if f.components == 1 else (arrays[0], arrays[1])
        frames.append(frame)
    return FgsSequence(nx=nx, ny=ny, fields=fields, frames=frames)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class CheckpointData:
    params: dict[str, np.ndarray]
    cfg: ModelConfig
    stats: dict[str, NormStats]  # keys rho, u, v
    nx: int
    ny: int
    scene_defaults: SceneConstants


def save_checkpoint(path, ckpt: CheckpointData) -> None:
    tensors = dict(ckpt.params)
    tensors["meta.config"] = config_to_vector(ckpt.cfg, ckpt.nx, ckpt.ny)
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("ascii")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    # Scene constants ride in the f64 stats block (tensors are only f32) as
    # reserved paired entries.
    sd = ckpt.scene_defaults
    entries = {name: (st.lo, st.hi) for name, st in ckpt.stats.items()}
    entries["meta.scene.dt_dx"] = (sd.dt, sd.dx)
    entries["meta.scene.buoyancy_rate"] = (sd.buoyancy, sd.emitter_rate)
    parts.append(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        lo, hi = entries[name]
        nb = name.encode("ascii")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<dd", lo, hi))
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> CheckpointData:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    _check_crc(blob, str(path))
    off = 4
    version, tensor_count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(tensor_count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("ascii")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = (
            np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        )
        off += 4 * n
    (stat_count,) = struct.unpack_from("<I", blob, off)
    off += 4
    raw_stats: dict[str, tuple[float, float]] = {}
    for _ in range(stat_count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("ascii")
        off += nlen
        lo, hi = struct.unpack_from("<dd", blob, off)
        off += 16
        raw_stats[name] = (lo, hi)
    if off + 4 != len(blob):
        raise FormatError(f"{path}: payload length does not match header arithmetic")

    if "meta.config" not in tensors:
        raise FormatError(f"{path}: checkpoint missing meta.config tensor")
    cfg, nx, ny = config_from_vector(tensors.pop("meta.config").astype(np.float64))
    try:
        dt, dx = raw_stats.pop("meta.scene.dt_dx")
        buoyancy, rate = raw_stats.pop("meta.scene.buoyancy_rate")
    except KeyError as e:
        raise FormatError(f"{path}: checkpoint missing scene entry {e}") from None
    defaults = SceneConstants(dt, dx, buoyancy, rate)
    stats = {name: NormStats(lo, hi) for name, (lo, hi) in raw_stats.items()}
    return CheckpointData(
        params=tensors, cfg=cfg, stats=stats, nx=nx, ny=ny, scene_defaults=defaults
    )


# ---------------------------------------------------------------------------
# manifests and scenario (de)serialization

DENSITY_FIELD = FgsField("density", 1)
VELOCITY_FIELD = FgsField("velocity", 2)


def sequence_to_fgs(states, dims) -> FgsSequence:
    """Dense solver states -> FGS with density + velocity per frame."""
    frames = [
        {"density": st.density.values, "velocity": (st.velocity.u, st.velocity.v)}
        for st in states
    ]
    return FgsSequence(dims.nx, dims.ny, [DENSITY_FIELD, VELOCITY_FIELD], frames)


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed manifest JSON ({e})") from None


def check_manifest(manifest_path) -> dict:
    """Verify every referenced FGS file exists and passes its CRC."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    for entry in manifest.get("scenarios", []):
        f = base / entry["file"]
        if not f.exists():
            raise FormatError(f"manifest references missing file {f}")
        read_fgs(f)  # raises IntegrityError on CRC failure
    return manifest
