import numpy as np
import pytest

from fluidinterp import model as M
from fluidinterp.grid import Field2, GridDims, MacVelocity2
from fluidinterp.model import LatentState, ModelConfig
from fluidinterp.rng import SplitMix64
from fluidinterp.tokenizer import SceneConstants, build_token_sequence

CFG = ModelConfig(
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
DIMS = GridDims(8, 8, 0.125)
CONST = SceneConstants(dt=0.08, dx=0.125, buoyancy=1.2, emitter_rate=2.0)


def _normalized_pair(seed=0):
    rng = SplitMix64(seed)
    rho0 = Field2(DIMS, rng.uniforms((8, 8), -1.0, 1.0))
    rho1 = Field2(DIMS, rng.uniforms((8, 8), -1.0, 1.0))
    vel0 = MacVelocity2(DIMS, rng.uniforms((8, 9), -1.0, 1.0), rng.uniforms((9, 8), -1.0, 1.0))
    vel1 = MacVelocity2(DIMS, rng.uniforms((8, 9), -1.0, 1.0), rng.uniforms((9, 8), -1.0, 1.0))
    return (rho0, vel0), (rho1, vel1)


def _encoded(params, seed=0):
    kf0, kf1 = _normalized_pair(seed)
    seq = build_token_sequence(CONST, (kf0, kf1), CFG.patch)
    latent = M.encode(seq, params, CFG, (8, 8))
    return latent, kf0[0], kf1[0]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(codebook_k=1)
    with pytest.raises(ValueError):
        ModelConfig(decoder_widths=(8, 8, 8))
    with pytest.raises(ValueError):
        ModelConfig(time_dim=5)
    with pytest.raises(ValueError):
        ModelConfig(enc_layers=0)


def test_config_vector_roundtrip():
    vec = M.config_to_vector(CFG, 32, 24)
    cfg2, nx, ny = M.config_from_vector(vec)
    assert cfg2 == CFG
    assert (nx, ny) == (32, 24)
    with pytest.raises(ValueError):
        M.config_from_vector(vec[:-1])


def test_init_params_deterministic():
    a = M.init_params(CFG, seed=5)
    b = M.init_params(CFG, seed=5)
    c = M.init_params(CFG, seed=6)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    assert all(v.dtype == np.float32 for v in a.values())


def test_encode_shapes():
    params = M.init_params(CFG, seed=0)
    latent, _, _ = _encoded(params)
    # 20 equation tokens + 2 keyframes x 4 tiles
    assert latent.tokens.shape == (28, CFG.d_model)
    assert latent.context.shape == (CFG.d_model,)
    assert np.isfinite(latent.tokens).all()


def test_encode_deterministic():
    params = M.init_params(CFG, seed=0)
    a, _, _ = _encoded(params, seed=2)
    b, _, _ = _encoded(params, seed=2)
    assert np.array_equal(a.tokens, b.tokens)
    assert np.array_equal(a.context, b.context)


def test_fresh_model_is_linear_interpolation():
    """With the zero-initialized output head the decoder reproduces the
    linear blend of the keyframes exactly, for every substep time."""
    params = M.init_params(CFG, seed=0)
    latent, rho0, rho1 = _encoded(params)
    for s in (0.0, 0.25, 0.5, 0.75, 1.0):
        pred = M.predict_density(latent, s, (rho0, rho1), params, CFG)
        lin = (1.0 - s) * rho0.values + s * rho1.values
        assert np.abs(pred.values - lin).max() < 1e-6


def test_endpoints_pinned_even_after_training_moves_weights():
    """The residual gate s*(1-s) vanishes at the keyframes, so predictions
    at s=0 and s=1 match them regardless of what the trunk outputs."""
    params = M.init_params(CFG, seed=0)
    rng = SplitMix64(99)
    params["decoder.final_w"] = rng.normals((1, 4, 1, 1)).astype(np.float32)
    params["decoder.final_b"] = rng.normals((1,)).astype(np.float32)
    latent, rho0, rho1 = _encoded(params, seed=4)
    p0 = M.predict_density(latent, 0.0, (rho0, rho1), params, CFG)
    p1 = M.predict_density(latent, 1.0, (rho0, rho1), params, CFG)
    assert np.abs(p0.values - rho0.values).max() < 1e-6
    assert np.abs(p1.values - rho1.values).max() < 1e-6
    mid = M.predict_density(latent, 0.5, (rho0, rho1), params, CFG)
    lin = 0.5 * rho0.values + 0.5 * rho1.values
    assert np.abs(mid.values - lin).max() > 1e-6


def test_canonical_code_zero_is_structural():
    """Code 0 rides a hard-zero embedding row, so re-randomizing the learned
    codebook rows cannot move the canonical prediction."""
    params = M.init_params(CFG, seed=0)
    rng = SplitMix64(7)
    params["decoder.final_w"] = rng.normals((1, 4, 1, 1)).astype(np.float32)
    latent, rho0, rho1 = _encoded(params, seed=1)
    base = M.predict_density(latent, 0.5, (rho0, rho1), params, CFG, code=0)
    params2 = dict(params)
    params2["codebook.embed"] = rng.normals((CFG.codebook_k - 1, CFG.code_dim)).astype(np.float32)
    again = M.predict_density(latent, 0.5, (rho0, rho1), params2, CFG, code=0)
    assert np.array_equal(base.values, again.values)
    other = M.predict_density(latent, 0.5, (rho0, rho1), params2, CFG, code=1)
    assert not np.array_equal(base.values, other.values)


def test_predict_density_validates_inputs():
    params = M.init_params(CFG, seed=0)
    latent, rho0, rho1 = _encoded(params)
    with pytest.raises(ValueError):
        M.predict_density(latent, -0.1, (rho0, rho1), params, CFG)
    with pytest.raises(ValueError):
        M.predict_density(latent, 1.1, (rho0, rho1), params, CFG)
    with pytest.raises(ValueError):
        M.predict_density(latent, 0.5, (rho0, rho1), params, CFG, code=CFG.codebook_k)
    with pytest.raises(ValueError):
        M.predict_density(latent, 0.5, (rho0, rho1), params, CFG, code=-1)


def test_variant_logits_start_flat():
    """The scoring head initializes to zeros: every variant code starts
    equally likely and the distribution only sharpens through training."""
    params = M.init_params(CFG, seed=0)
    latent, _, _ = _encoded(params)
    logits = M.variant_logits(latent, 0.5, params, CFG)
    assert logits.shape == (CFG.codebook_k,)
    assert np.all(logits == 0.0)
    with pytest.raises(ValueError):
        M.variant_logits(latent, 1.5, params, CFG)


def test_decode_rejects_bad_grid():
    cfg = ModelConfig(
        d_model=8, heads=2, enc_layers=1, codebook_k=3, patch=2,
        decoder_widths=(4, 4, 4, 4), latent_maps=1, ctx_channels=2,
        time_dim=4, code_dim=3,
    )
    dims = GridDims(6, 6, 1.0 / 6)
    rng = SplitMix64(0)
    rho = Field2(dims, rng.uniforms((6, 6), -1.0, 1.0))
    vel = MacVelocity2(dims, np.zeros((6, 7)), np.zeros((7, 6)))
    seq = build_token_sequence(CONST, ((rho, vel), (rho, vel)), cfg.patch)
    params = M.init_params(cfg, seed=0)
    latent = M.encode(seq, params, cfg, (6, 6))
    # 6x6 tiles into patch 2 but the conv trunk needs three halvings
    with pytest.raises(ValueError):
        M.predict_density(latent, 0.5, (rho, rho), params, cfg)


def test_latent_state_rejects_nonfinite():
    params = M.init_params(CFG, seed=0)
    latent, _, _ = _encoded(params)
    bad = latent.context.copy()
    bad[0] = np.nan
    with pytest.raises(ValueError):
        LatentState(latent.tokens, bad, latent.seq)
