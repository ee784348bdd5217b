import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from fluidinterp import model as M
from fluidinterp.formats import (
    CheckpointData,
    FgsField,
    FgsSequence,
    FormatError,
    IntegrityError,
    VersionError,
    check_manifest,
    load_checkpoint,
    read_fgs,
    read_manifest,
    save_checkpoint,
    write_fgs,
    write_manifest,
)
from fluidinterp.grid import NormStats
from fluidinterp.rng import SplitMix64
from fluidinterp.tokenizer import SceneConstants

GOLDEN = Path(__file__).parent / "golden"

TINY_CFG = M.ModelConfig(
    d_model=8,
    heads=2,
    enc_layers=1,
    codebook_k=3,
    patch=4,
    decoder_widths=(4, 4, 4, 4),
    latent_maps=1,
    ctx_channels=2,
    time_dim=4,
    code_dim=3,
)


def _sample_sequence(nx=4, ny=3, frames=2, seed=0):
    rng = SplitMix64(seed)
    fr = []
    for _ in range(frames):
        fr.append(
            {
                "density": rng.uniforms((ny, nx), 0.0, 2.0).astype(np.float32),
                "velocity": (
                    rng.uniforms((ny, nx + 1), -1.0, 1.0).astype(np.float32),
                    rng.uniforms((ny + 1, nx), -1.0, 1.0).astype(np.float32),
                ),
            }
        )
    return FgsSequence(nx, ny, [FgsField("density", 1), FgsField("velocity", 2)], fr)


def _sample_checkpoint(seed=0):
    params = M.init_params(TINY_CFG, seed=seed)
    stats = {
        "rho": NormStats(0.0, 2.125),
        "u": NormStats(-1.5, 1.25),
        "v": NormStats(-0.75, 0.875),
    }
    defaults = SceneConstants(dt=0.08, dx=0.03125, buoyancy=1.2, emitter_rate=2.25)
    return CheckpointData(
        params=params, cfg=TINY_CFG, stats=stats, nx=8, ny=8, scene_defaults=defaults
    )


# --- FGS sequences ---


def test_fgs_roundtrip_bit_exact(tmp_path):
    """f32 payloads survive a write/read cycle with no value drift."""
    seq = _sample_sequence()
    p = tmp_path / "a.fgs"
    write_fgs(p, seq)
    back = read_fgs(p)
    assert (back.nx, back.ny) == (seq.nx, seq.ny)
    assert back.fields == seq.fields
    assert len(back.frames) == 2
    for f0, f1 in zip(seq.frames, back.frames):
        assert np.array_equal(f0["density"].astype(np.float64), f1["density"])
        assert np.array_equal(f0["velocity"][0].astype(np.float64), f1["velocity"][0])
        assert np.array_equal(f0["velocity"][1].astype(np.float64), f1["velocity"][1])


def test_fgs_write_is_deterministic(tmp_path):
    seq = _sample_sequence(seed=3)
    a, b = tmp_path / "a.fgs", tmp_path / "b.fgs"
    write_fgs(a, seq)
    write_fgs(b, seq)
    assert a.read_bytes() == b.read_bytes()


def test_fgs_rejects_degenerate_sequences(tmp_path):
    p = tmp_path / "x.fgs"
    seq = _sample_sequence()
    with pytest.raises(FormatError):
        write_fgs(p, FgsSequence(4, 3, seq.fields, []))
    with pytest.raises(FormatError):
        write_fgs(p, FgsSequence(4, 3, [], seq.frames))
    with pytest.raises(FormatError):
        FgsField("density", 3)
    with pytest.raises(FormatError):
        FgsField("", 1)
    bad = _sample_sequence()
    bad.frames[1] = {"density": bad.frames[1]["density"]}  # velocity missing
    with pytest.raises(FormatError, match="missing field"):
        write_fgs(p, bad)
    bad2 = _sample_sequence()
    bad2.frames[0]["density"] = np.zeros((2, 2))
    with pytest.raises(FormatError, match="shape"):
        write_fgs(p, bad2)


def test_fgs_crc_detects_corruption(tmp_path):
    """A single flipped payload byte must be caught and reported with the
    checked byte range, not silently decoded."""
    p = tmp_path / "a.fgs"
    write_fgs(p, _sample_sequence())
    blob = bytearray(p.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError, match=rf"bytes 0\.\.{len(blob) - 5}"):
        read_fgs(p)


def test_fgs_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "a.fgs"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        read_fgs(p)
    p.write_bytes(b"FG")
    with pytest.raises(FormatError):
        read_fgs(p)


def test_fgs_version_gate(tmp_path):
    p = tmp_path / "a.fgs"
    write_fgs(p, _sample_sequence())
    blob = bytearray(p.read_bytes())
    struct.pack_into("<I", blob, 4, 2)  # claim version 2
    body = bytes(blob[:-4])
    p.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(VersionError, match="version 2"):
        read_fgs(p)


def test_fgs_layout_matches_documented_bytes(tmp_path):
    """Build a file by hand from the documented layout and read it back;
    this pins the byte format independently of the writer."""
    nx, ny = 2, 2
    rho = np.array([[0.0, 1.0], [2.0, 3.0]], dtype="<f4")
    name = b"density"
    body = b"FGS1"
    body += struct.pack("<IIIII", 1, nx, ny, 1, 1)
    body += struct.pack("<H", len(name)) + name + struct.pack("<B", 1)
    body += rho.tobytes()
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    p = tmp_path / "hand.fgs"
    p.write_bytes(blob)
    seq = read_fgs(p)
    assert seq.field_names() == ["density"]
    assert np.array_equal(seq.frames[0]["density"], rho.astype(np.float64))
    # and the writer produces those exact bytes for the same content
    q = tmp_path / "writer.fgs"
    write_fgs(q, FgsSequence(nx, ny, [FgsField("density", 1)], [{"density": rho}]))
    assert q.read_bytes() == blob


# --- checkpoints ---


def test_checkpoint_roundtrip(tmp_path):
    ck = _sample_checkpoint()
    p = tmp_path / "m.ffck"
    save_checkpoint(p, ck)
    back = load_checkpoint(p)
    assert back.cfg == ck.cfg
    assert (back.nx, back.ny) == (8, 8)
    assert back.params.keys() == ck.params.keys()
    for k in ck.params:
        assert np.array_equal(back.params[k], ck.params[k]), k
    assert back.stats == ck.stats  # f64 lo/hi survive exactly
    assert back.scene_defaults == ck.scene_defaults


def test_checkpoint_scene_constants_full_precision(tmp_path):
    """Scene constants like dt=0.08 have no exact f32 form; the format must
    hand back the identical f64 bits."""
    ck = _sample_checkpoint()
    p = tmp_path / "m.ffck"
    save_checkpoint(p, ck)
    back = load_checkpoint(p)
    assert back.scene_defaults.dt == 0.08
    assert back.stats["rho"].hi == 2.125


def test_checkpoint_crc_and_version(tmp_path):
    p = tmp_path / "m.ffck"
    save_checkpoint(p, _sample_checkpoint())
    blob = bytearray(p.read_bytes())
    blob[100] ^= 0x01
    p.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        load_checkpoint(p)
    blob[100] ^= 0x01  # restore payload, then claim a future version
    struct.pack_into("<I", blob, 4, 9)
    body = bytes(blob[:-4])
    p.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(VersionError):
        load_checkpoint(p)
    p.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)


def _raw_ffck(tensors: dict, stats: dict) -> bytes:
    """Minimal independent FFCK writer used to exercise loader error paths."""
    body = b"FFCK" + struct.pack("<II", 1, len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("ascii")
        body += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
    body += struct.pack("<I", len(stats))
    for name in sorted(stats):
        lo, hi = stats[name]
        nb = name.encode("ascii")
        body += struct.pack("<H", len(nb)) + nb + struct.pack("<dd", lo, hi)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def test_checkpoint_missing_meta_is_loud(tmp_path):
    cfgvec = M.config_to_vector(TINY_CFG, 8, 8)
    full_stats = {
        "rho": (0.0, 1.0),
        "u": (-1.0, 1.0),
        "v": (-1.0, 1.0),
        "meta.scene.dt_dx": (0.08, 0.125),
        "meta.scene.buoyancy_rate": (1.0, 2.0),
    }
    p = tmp_path / "m.ffck"
    p.write_bytes(_raw_ffck({"w": np.zeros(3)}, full_stats))
    with pytest.raises(FormatError, match="meta.config"):
        load_checkpoint(p)
    no_scene = {k: v for k, v in full_stats.items() if not k.startswith("meta.")}
    p.write_bytes(_raw_ffck({"meta.config": cfgvec, "w": np.zeros(3)}, no_scene))
    with pytest.raises(FormatError, match="scene"):
        load_checkpoint(p)


# --- golden files ---


def test_golden_fgs_still_readable():
    """The committed golden file must parse to the frozen expected values;
    any change to the on-disk layout breaks old archives and this test."""
    seq = read_fgs(GOLDEN / "tiny.fgs")
    expect = _sample_sequence(nx=4, ny=3, frames=2, seed=42)
    assert (seq.nx, seq.ny) == (4, 3)
    assert seq.fields == expect.fields
    for got, want in zip(seq.frames, expect.frames):
        assert np.array_equal(got["density"], want["density"].astype(np.float64))
        assert np.array_equal(got["velocity"][0], want["velocity"][0].astype(np.float64))


def test_golden_checkpoint_still_readable():
    ck = load_checkpoint(GOLDEN / "tiny.ffck")
    expect = _sample_checkpoint(seed=42)
    assert ck.cfg == expect.cfg
    assert ck.stats == expect.stats
    assert ck.scene_defaults == expect.scene_defaults
    for k in expect.params:
        assert np.array_equal(ck.params[k], expect.params[k]), k


# --- manifests ---


def test_manifest_roundtrip_and_check(tmp_path):
    seq = _sample_sequence()
    write_fgs(tmp_path / "scn0000.fgs", seq)
    manifest = {"format_version": 1, "scenarios": [{"name": "scn0000", "file": "scn0000.fgs"}]}
    mp = tmp_path / "manifest.json"
    write_manifest(mp, manifest)
    assert read_manifest(mp) == manifest
    assert check_manifest(mp) == manifest

    (tmp_path / "scn0000.fgs").unlink()
    with pytest.raises(FormatError, match="missing file"):
        check_manifest(mp)

    write_fgs(tmp_path / "scn0000.fgs", seq)
    blob = bytearray((tmp_path / "scn0000.fgs").read_bytes())
    blob[-10] ^= 0xFF
    (tmp_path / "scn0000.fgs").write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        check_manifest(mp)


def test_manifest_rejects_malformed_json(tmp_path):
    mp = tmp_path / "manifest.json"
    mp.write_text("{not json")
    with pytest.raises(FormatError, match="malformed"):
        read_manifest(mp)
