"""Continuous-time attention encoder + residual convolutional decoder.

The encoder embeds the frozen equation tokens (learned table, NUM values via
a learned scalar-to-vector map), projects field patches linearly, adds fixed
Fourier time and tile-coordinate features to the data tokens, and runs
pre-norm self-attention blocks. The decoder predicts

    rho_hat(s) = (1 - s) * rho0 + s * rho1 + s * (1 - s) * R(s)

so both keyframes are reproduced exactly by construction. R is a
fully-convolutional residual trunk (7x7 stem + 3x3 max pool, four stages of
two residual blocks with the configured widths, stages 2-4 at stride 2)
mirrored by nearest-neighbor upsampling with skip connections, ending in a
zero-initialized 1x1 convolution under tanh; at initialization the model is
therefore exact linear interpolation. A small learned codebook supplies
variant corrections through extra decoder input channels; code 0 is the
reserved all-zero "canonical" embedding.

Note the encoder's time features are 1-periodic, so the two keyframes (t=0,
t=1) carry identical time annotations; which keyframe is which is conveyed
to the decoder by channel order, not by the encoder.

All forward paths are built on the autodiff tape, whether or not gradients
are wanted; inference simply never calls backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .grid import Field2
from .rng import SplitMix64
from .tokenizer import NUM_ID, VOCAB_SIZE, TokenSequence, time_encoding


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    heads: int = 4
    enc_layers: int = 4
    codebook_k: int = 16
    patch: int = 8
    decoder_widths: tuple[int, int, int, int] = (64, 128, 256, 512)
    # decoder conditioning widths
    latent_maps: int = 4
    ctx_channels: int = 8
    time_dim: int = 8
    code_dim: int = 8

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.d_model < 4:
            raise ValueError("d_model must be at least 4")
        if self.codebook_k < 2:
            raise ValueError("codebook_k must be at least 2")
        if len(self.decoder_widths) != 4:
            raise ValueError("decoder_widths must have length 4")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ValueError("time_dim must be even and >= 2")
        for name in ("enc_layers", "patch", "latent_maps", "ctx_channels", "code_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def stem_in_channels(self) -> int:
        return 2 + 2 * self.latent_maps + self.ctx_channels + self.time_dim + self.code_dim


# meta.config layout for checkpoints: hyperparameters + the grid the model
# was trained on, so loading mismatched resolutions fails loudly.
_CONFIG_KEYS = (
    "d_model",
    "heads",
    "enc_layers",
    "codebook_k",
    "patch",
    "latent_maps",
    "ctx_channels",
    "time_dim",
    "code_dim",
)


def config_to_vector(cfg: ModelConfig, nx: int, ny: int) -> np.ndarray:
    vals = [float(getattr(cfg, k)) for k in _CONFIG_KEYS]
    vals.extend(float(w) for w in cfg.decoder_widths)
    vals.extend([float(nx), float(ny)])
    return np.array(vals, dtype=np.float64)


def config_from_vector(vec: np.ndarray) -> tuple[ModelConfig, int, int]:
    vec = np.asarray(vec).ravel()
    if vec.size != len(_CONFIG_KEYS) + 6:
        raise ValueError(f"malformed model config vector of length {vec.size}")
    kw = {k: int(v) for k, v in zip(_CONFIG_KEYS, vec)}
    widths = tuple(int(w) for w in vec[len(_CONFIG_KEYS) : len(_CONFIG_KEYS) + 4])
    cfg = ModelConfig(decoder_widths=widths, **kw)
    nx, ny = int(vec[-2]), int(vec[-1])
    return cfg, nx, ny


@dataclass
class LatentState:
    """Encoder output for one keyframe interval."""

    tokens: np.ndarray  # (T, d_model) per-token embeddings
    context: np.ndarray  # (d_model,) mean-pooled interval context
    seq: TokenSequence

    def __post_init__(self):
        if not np.all(np.isfinite(self.tokens)) or not np.all(np.isfinite(self.context)):
            raise ValueError("latent state contains non-finite values")


# ---------------------------------------------------------------------------
# initialization


def _xavier(rng: SplitMix64, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniforms(shape, -a, a)


def _kaiming_conv(rng: SplitMix64, shape) -> np.ndarray:
    cout, cin, kh, kw = shape
    a = np.sqrt(6.0 / (cin * kh * kw))
    return rng.uniforms(shape, -a, a)


def init_params(cfg: ModelConfig, seed: int = 0, dtype: str = "float32") -> dict[str, np.ndarray]:
    """Fresh parameter dict, namespaced encoder.* / decoder.* / codebook.*."""
    rng = SplitMix64(seed)
    d = cfg.d_model
    p: dict[str, np.ndarray] = {}

    p["encoder.tok_embed"] = 0.02 * rng.normals((VOCAB_SIZE, d))
    p["encoder.num_w"] = 0.02 * rng.normals((d,))
    pv = 3 * cfg.patch * cfg.patch
    p["encoder.patch_w"] = _xavier(rng, pv, d, (pv, d))
    p["encoder.patch_b"] = np.zeros(d)
    for layer in range(cfg.enc_layers):
        pre = f"encoder.layer{layer}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn_" + name] = _xavier(rng, d, d, (d, d))
        p[pre + "ff_w1"] = _xavier(rng, d, 4 * d, (d, 4 * d))
        p[pre + "ff_b1"] = np.zeros(4 * d)
        p[pre + "ff_w2"] = _xavier(rng, 4 * d, d, (4 * d, d))
        p[pre + "ff_b2"] = np.zeros(d)

    w0, w1, w2, w3 = cfg.decoder_widths
    lm = cfg.latent_maps * cfg.patch * cfg.patch
    p["decoder.tok2map_w"] = _xavier(rng, d, lm, (d, lm))
    p["decoder.tok2map_b"] = np.zeros(lm)
    p["decoder.ctx_w"] = _xavier(rng, d, cfg.ctx_channels, (d, cfg.ctx_channels))
    p["decoder.ctx_b"] = np.zeros(cfg.ctx_channels)
    p["decoder.stem_w"] = _kaiming_conv(rng, (w0, cfg.stem_in_channels, 7, 7))
    p["decoder.stem_b"] = np.zeros(w0)
    widths_in = (w0, w0, w1, w2)
    for i, (cin, cout) in enumerate(zip(widths_in, cfg.decoder_widths), start=1):
        stride_stage = i >= 2
        pre = f"decoder.stage{i}."
        p[pre + "block1.conv1_w"] = _kaiming_conv(rng, (cout, cin, 3, 3))
        p[pre + "block1.conv1_b"] = np.zeros(cout)
        p[pre + "block1.conv2_w"] = _kaiming_conv(rng, (cout, cout, 3, 3))
        p[pre + "block1.conv2_b"] = np.zeros(cout)
        if stride_stage:
            p[pre + "proj_w"] = _kaiming_conv(rng, (cout, cin, 1, 1))
            p[pre + "proj_b"] = np.zeros(cout)
        p[pre + "block2.conv1_w"] = _kaiming_conv(rng, (cout, cout, 3, 3))
        p[pre + "block2.conv1_b"] = np.zeros(cout)
        p[pre + "block2.conv2_w"] = _kaiming_conv(rng, (cout, cout, 3, 3))
        p[pre + "block2.conv2_b"] = np.zeros(cout)
    up_specs = ((3, w3 + w2, w2), (2, w2 + w1, w1), (1, w1 + w0, w0))
    for k, cin, cout in up_specs:
        p[f"decoder.up{k}.conv_w"] = _kaiming_conv(rng, (cout, cin, 3, 3))
        p[f"decoder.up{k}.conv_b"] = np.zeros(cout)
    p["decoder.final_w"] = np.zeros((1, w0, 1, 1))
    p["decoder.final_b"] = np.zeros(1)

    p["codebook.embed"] = 0.02 * rng.normals((cfg.codebook_k - 1, cfg.code_dim))
    p["codebook.score_w"] = np.zeros((d + cfg.time_dim, cfg.codebook_k))
    p["codebook.score_b"] = np.zeros(cfg.codebook_k)

    np_dtype = np.dtype(dtype)
    return {k: v.astype(np_dtype) for k, v in p.items()}


def wrap_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: tape.leaf(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# encoder graph


def _coord_encoding(cfg: ModelConfig, coords: np.ndarray, gy: int, gx: int) -> np.ndarray:
    """Fixed Fourier features of the tile (row, col), filling d_model."""
    d = cfg.d_model
    d_r = 2 * ((d + 2) // 4)
    d_c = d - d_r
    out = np.zeros((len(coords), d))
    for n, (r, c) in enumerate(coords):
        out[n, :d_r] = time_encoding((r + 0.5) / gy, d_r)
        if d_c >= 2:
            out[n, d_r:] = time_encoding((c + 0.5) / gx, d_c)
    return out


def _token_inputs(cfg: ModelConfig, seq: TokenSequence, dims_hw: tuple[int, int]) -> np.ndarray:
    """Fixed per-token additive features (time + coords) for data tokens."""
    ny, nx = dims_hw
    gy, gx = ny // cfg.patch, nx // cfg.patch
    n_data = len(seq.patches)
    feats = _coord_encoding(cfg, seq.coords, gy, gx)
    for n, t in enumerate(seq.times):
        feats[n] += time_encoding(t, cfg.d_model)
    return feats  # (n_data, d_model)


def _attention(tape: Tape, pt: dict[str, Tensor], cfg: ModelConfig, x: Tensor, pre: str) -> Tensor:
    b, t, d = x.shape
    h = cfg.heads
    dh = d // h

    def heads_split(m: Tensor) -> Tensor:
        return m.reshape((b, t, h, dh)).transpose((0, 2, 1, 3)).reshape((b * h, t, dh))

    q = heads_split(ad.matmul(x, pt[pre + "attn_wq"]))
    k = heads_split(ad.matmul(x, pt[pre + "attn_wk"]))
    v = heads_split(ad.matmul(x, pt[pre + "attn_wv"]))
    att = ad.softmax(ad.scale(ad.matmul(q, k.transpose((0, 2, 1))), 1.0 / np.sqrt(dh)))
    out = ad.matmul(att, v)
    out = out.reshape((b, h, t, dh)).transpose((0, 2, 1, 3)).reshape((b, t, d))
    return ad.matmul(out, pt[pre + "attn_wo"])


def encode_graph(
    tape: Tape,
    pt: dict[str, Tensor],
    cfg: ModelConfig,
    seqs: list[TokenSequence],
    dims_hw: tuple[int, int],
) -> tuple[Tensor, Tensor]:
    """Batched encoder; returns (tokens (B,T,d), context (B,d))."""
    if not seqs:
        raise ValueError("encode: empty batch")
    b = len(seqs)
    n_eq = len(seqs[0].ids)
    n_data = len(seqs[0].patches)
    ids = np.stack([s.ids for s in seqs])  # (B, n_eq)
    values = np.stack([s.values for s in seqs])
    patches = np.stack([s.patches for s in seqs])  # (B, n_data, pv)

    eq = ad.embedding_lookup(pt["encoder.tok_embed"], ids)  # (B, n_eq, d)
    num_w = pt["encoder.num_w"].reshape((1, 1, cfg.d_model))
    vals = tape.const(values[:, :, None])  # nonzero only at NUM slots
    eq = ad.add(eq, ad.mul(num_w, vals))

    data = ad.matmul(tape.const(patches), pt["encoder.patch_w"])
    data = ad.add(data, pt["encoder.patch_b"])
    feats = np.stack([_token_inputs(cfg, s, dims_hw) for s in seqs])
    data = ad.add(data, tape.const(feats))

    x = ad.concat([eq, data], axis=1)  # (B, T, d)
    for layer in range(cfg.enc_layers):
        pre = f"encoder.layer{layer}."
        x = ad.add(x, _attention(tape, pt, cfg, ad.layer_norm(x), pre))
        hdn = ad.relu(ad.add(ad.matmul(ad.layer_norm(x), pt[pre + "ff_w1"]), pt[pre + "ff_b1"]))
        x = ad.add(x, ad.add(ad.matmul(hdn, pt[pre + "ff_w2"]), pt[pre + "ff_b2"]))
    x = ad.layer_norm(x)
    ctx = ad.tensor_mean(x, axis=1)  # (B, d)
    _ = n_eq, n_data
    return x, ctx


# ---------------------------------------------------------------------------
# decoder graph


def _residual_block(pt, x: Tensor, pre: str, stride: int, proj: str | None) -> Tensor:
    y = ad.relu(ad.conv2d(x, pt[pre + "conv1_w"], pt[pre + "conv1_b"], stride=stride, pad=1))
    y = ad.conv2d(y, pt[pre + "conv2_w"], pt[pre + "conv2_b"], stride=1, pad=1)
    skip = x if proj is None else ad.conv2d(x, pt[proj + "proj_w"], pt[proj + "proj_b"], stride=stride, pad=0)
    return ad.relu(ad.add(y, skip))


def decoder_trunk(pt: dict[str, Tensor], x: Tensor) -> Tensor:
    """Residual stem-and-stages with a U-Net mirror; x is (B, C_in, H, W)."""
    h = ad.relu(ad.conv2d(x, pt["decoder.stem_w"], pt["decoder.stem_b"], stride=1, pad=3))
    h = ad.max_pool2d(h, kernel=3, stride=1, pad=1)
    outs = []
    for i in range(1, 5):
        pre = f"decoder.stage{i}."
        stride = 1 if i == 1 else 2
        proj = pre if i >= 2 else None
        h = _residual_block(pt, h, pre + "block1.", stride, proj)
        h = _residual_block(pt, h, pre + "block2.", 1, None)
        outs.append(h)
    s1, s2, s3, s4 = outs
    h = s4
    for k, skip in ((3, s3), (2, s2), (1, s1)):
        h = ad.concat([ad.upsample_nearest2x(h), skip], axis=1)
        h = ad.relu(ad.conv2d(h, pt[f"decoder.up{k}.conv_w"], pt[f"decoder.up{k}.conv_b"], stride=1, pad=1))
    return ad.tanh(ad.conv2d(h, pt["decoder.final_w"], pt["decoder.final_b"], stride=1, pad=0))


def _latent_channel_maps(
    pt: dict[str, Tensor], cfg: ModelConfig, tokens: Tensor, n_eq: int, gy: int, gx: int
) -> Tensor:
    """Data-token embeddings -> (1, 2*latent_maps, H, W) spatial maps."""
    n_data = 2 * gy * gx
    data_tok = ad.narrow(tokens, 1, n_eq, n_data)  # (1, n_data, d)
    maps = ad.add(ad.matmul(data_tok, pt["decoder.tok2map_w"]), pt["decoder.tok2map_b"])
    lm, p = cfg.latent_maps, cfg.patch
    maps = maps.reshape((2, gy, gx, lm, p, p))
    maps = maps.transpose((0, 3, 1, 4, 2, 5))  # (kf, L, gy, p, gx, p)
    return maps.reshape((1, 2 * lm, gy * p, gx * p))


def decode_graph(
    tape: Tape,
    pt: dict[str, Tensor],
    cfg: ModelConfig,
    tokens_i: Tensor,  # (1, T, d) one interval's encoder tokens
    ctx_i: Tensor,  # (1, d)
    rho0: np.ndarray,  # (H, W) normalized
    rho1: np.ndarray,
    s_values: np.ndarray,  # (S,) substep times in [0, 1]
    code_emb: Tensor,  # (S, code_dim)
    n_eq: int,
) -> Tensor:
    """Predict (S, 1, H, W) normalized densities for one interval."""
    h, w = rho0.shape
    if h % cfg.patch or w % cfg.patch:
        raise ValueError(f"grid {w}x{h} not divisible by patch {cfg.patch}")
    if h % 8 or w % 8:
        raise ValueError(f"grid {w}x{h} not divisible by 8 (three stride-2 stages)")
    s_values = np.asarray(s_values, dtype=np.float64)
    if s_values.min() < 0.0 or s_values.max() > 1.0:
        raise ValueError("substep times must lie in [0, 1]; extrapolation unsupported")
    ns = len(s_values)
    gy, gx = h // cfg.patch, w // cfg.patch

    lat = ad.tile0(_latent_channel_maps(pt, cfg, tokens_i, n_eq, gy, gx), ns)
    ctxc = ad.add(ad.matmul(ctx_i, pt["decoder.ctx_w"]), pt["decoder.ctx_b"])
    ctxc = ad.tile0(ad.broadcast_spatial(ctxc, (h, w)), ns)
    te = np.stack([time_encoding(s, cfg.time_dim) for s in s_values])
    tec = ad.broadcast_spatial(tape.const(te), (h, w))
    codec = ad.broadcast_spatial(code_emb, (h, w))
    kf = tape.const(
        np.broadcast_to(np.stack([rho0, rho1])[None], (ns, 2, h, w)).copy()
    )
    x = ad.concat([kf, lat, ctxc, tec, codec], axis=1)

    resid = decoder_trunk(pt, x)  # (S, 1, H, W) in [-1, 1]
    s_col = s_values[:, None, None, None]
    blend = tape.const((1.0 - s_col) * rho0[None, None] + s_col * rho1[None, None])
    gate = tape.const(s_col * (1.0 - s_col) * np.ones((ns, 1, h, w)))
    return ad.add(blend, ad.mul(gate, resid))


def codebook_table(tape: Tape, pt: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """(k, code_dim) table; row 0 is the structurally-zero canonical code."""
    zero = tape.const(np.zeros((1, cfg.code_dim)))
    return ad.concat([zero, pt["codebook.embed"]], axis=0)


def score_logits_graph(
    tape: Tape, pt: dict[str, Tensor], cfg: ModelConfig, ctx: Tensor, s_values: np.ndarray
) -> Tensor:
    """Variant logits (B, k) from pooled context + query-time features."""
    te = np.stack([time_encoding(s, cfg.time_dim) for s in np.atleast_1d(s_values)])
    feats = ad.concat([ctx, tape.const(te)], axis=1)
    return ad.add(ad.matmul(feats, pt["codebook.score_w"]), pt["codebook.score_b"])


# ---------------------------------------------------------------------------
# numpy facades


def encode(seq: TokenSequence, params: dict[str, np.ndarray], cfg: ModelConfig,
           dims_hw: tuple[int, int]) -> LatentState:
    tape = Tape(str(next(iter(params.values())).dtype))
    pt = wrap_params(tape, params)
    tokens, ctx = encode_graph(tape, pt, cfg, [seq], dims_hw)
    state = LatentState(tokens.data[0].copy(), ctx.data[0].copy(), seq)
    tape.release()
    return state


def predict_density(
    latent: LatentState,
    s: float,
    keyframes: tuple[Field2, Field2],
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    code: int = 0,
) -> Field2:
    """Canonical (or variant-corrected) density at substep s, normalized units."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"substep time {s} outside [0, 1]; extrapolation unsupported")
    if not (0 <= code < cfg.codebook_k):
        raise ValueError(f"code {code} outside codebook of size {cfg.codebook_k}")
    rho0, rho1 = keyframes
    tape = Tape(str(next(iter(params.values())).dtype))
    pt = wrap_params(tape, params)
    tokens = tape.const(latent.tokens[None])
    ctx = tape.const(latent.context[None])
    table = codebook_table(tape, pt, cfg)
    code_emb = ad.narrow(table, 0, code, 1)
    pred = decode_graph(
        tape, pt, cfg, tokens, ctx, rho0.values, rho1.values,
        np.array([s]), code_emb, len(latent.seq.ids),
    )
    out = Field2(rho0.dims, np.asarray(pred.data[0, 0], dtype=np.float64))
    tape.release()
    return out


def variant_logits(
    latent: LatentState, s: float, params: dict[str, np.ndarray], cfg: ModelConfig
) -> np.ndarray:
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"substep time {s} outside [0, 1]")
    tape = Tape(str(next(iter(params.values())).dtype))
    pt = wrap_params(tape, params)
    ctx = tape.const(latent.context[None])
    logits = score_logits_graph(tape, pt, cfg, ctx, np.array([s]))
    out = np.asarray(logits.data[0], dtype=np.float64).copy()
    tape.release()
    return out
