"""Masked video-text autoencoder network.

A cube embedding turns the clip into spatio-temporal tokens; a shared
Transformer encodes the visible video tokens concatenated with the (optionally
[M]-filled) caption tokens; a lightweight video decoder rebuilds masked cubes
in pixel space and a linear (or small Transformer) text decoder predicts
vocabulary logits. Pooled features feed the contrastive objective and the
match/mismatch classifier head.

Architecture choices the method leaves open are pinned here: pre-norm blocks
with GELU, learned positional embeddings per modality, and additive modality
type embeddings so the shared encoder can tell video from text.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, ShapeError
from .masking import BERT_LIKE, TEXT_STRATEGIES, MaskPlan
from .synthclips import DEFAULT_CAPTION_LEN

DUAL = "dual"
SHARED = "shared"
DECODER_MODES = (DUAL, SHARED)

_NEG_BIAS = -1e9  # additive attention bias for excluded keys


@dataclass
class ModelConfig:
    """Architecture hyperparameters, including every ablation axis."""

    vocab_size: int = 19
    dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0

    frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 3
    cube_t: int = 2
    cube_h: int = 8
    cube_w: int = 8

    video_decoder_depth: int = 4
    text_decoder_depth: int = 0
    decoder_heads: int = 4
    decoder_mode: str = DUAL

    caption_len: int = DEFAULT_CAPTION_LEN
    text_mask_token_in_encoder: bool = True
    text_mask_strategy: str = BERT_LIKE

    rho_video: float = 0.9
    rho_text: float = 0.75
    vtc_tau_init: float = 0.07

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim % 2 != 0:
            raise ConfigError(f"dim must be even (decoder width dim/2), got {self.dim}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.decoder_dim % self.decoder_heads != 0:
            raise ConfigError(
                f"decoder dim {self.decoder_dim} not divisible by decoder_heads {self.decoder_heads}"
            )
        for name, extent, cube in (
            ("frames", self.frames, self.cube_t),
            ("height", self.height, self.cube_h),
            ("width", self.width, self.cube_w),
        ):
            if extent % cube != 0:
                raise ConfigError(f"{name}={extent} not divisible by cube extent {cube}")
        for name in ("depth", "video_decoder_depth", "text_decoder_depth"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("rho_video", "rho_text"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {val}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f"decoder_mode must be one of {DECODER_MODES}, got {self.decoder_mode!r}")
        if self.text_mask_strategy not in TEXT_STRATEGIES:
            raise ConfigError(
                f"text_mask_strategy must be one of {TEXT_STRATEGIES}, got {self.text_mask_strategy!r}"
            )
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.caption_len < 1:
            raise ConfigError("caption_len must be >= 1")
        if self.vtc_tau_init <= 0:
            raise ConfigError("vtc_tau_init must be positive")

    # -- derived sizes ---------------------------------------------------------

    @property
    def tokens_t(self) -> int:
        return self.frames // self.cube_t

    @property
    def tokens_h(self) -> int:
        return self.height // self.cube_h

    @property
    def tokens_w(self) -> int:
        return self.width // self.cube_w

    @property
    def num_video_tokens(self) -> int:
        return self.tokens_t * self.tokens_h * self.tokens_w

    @property
    def cube_dim(self) -> int:
        return self.cube_t * self.cube_h * self.cube_w * self.channels

    @property
    def decoder_dim(self) -> int:
        return self.dim // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


def _block_shapes(prefix: str, width: int, mlp_ratio: float) -> dict:
    hidden = int(width * mlp_ratio)
    return {
        f"{prefix}.ln1.g": (width,),
        f"{prefix}.ln1.b": (width,),
        f"{prefix}.attn.wq": (width, width),
        f"{prefix}.attn.bq": (width,),
        f"{prefix}.attn.wk": (width, width),
        f"{prefix}.attn.bk": (width,),
        f"{prefix}.attn.wv": (width, width),
        f"{prefix}.attn.bv": (width,),
        f"{prefix}.attn.wo": (width, width),
        f"{prefix}.attn.bo": (width,),
        f"{prefix}.ln2.g": (width,),
        f"{prefix}.ln2.b": (width,),
        f"{prefix}.mlp.w1": (width, hidden),
        f"{prefix}.mlp.b1": (hidden,),
        f"{prefix}.mlp.w2": (hidden, width),
        f"{prefix}.mlp.b2": (width,),
    }


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered name -> shape manifest for every learnable parameter."""
    d, dd, v, nv, l = cfg.dim, cfg.decoder_dim, cfg.vocab_size, cfg.num_video_tokens, cfg.caption_len
    shapes: dict = {
        "cube_embed.w": (cfg.cube_dim, d),
        "cube_embed.b": (d,),
        "token_embed": (v, d),
        "video_pos": (nv, d),
        "text_pos": (l, d),
        "type_embed": (2, d),
    }
    for i in range(cfg.depth):
        shapes.update(_block_shapes(f"enc.{i}", d, cfg.mlp_ratio))
    shapes["enc.norm.g"] = (d,)
    shapes["enc.norm.b"] = (d,)

    shapes["dec_embed.w"] = (d, dd)
    shapes["dec_embed.b"] = (dd,)
    shapes["video_mask_token"] = (dd,)
    shapes["dec_pos"] = (nv, dd)
    for i in range(cfg.video_decoder_depth):
        shapes.update(_block_shapes(f"dec.{i}", dd, cfg.mlp_ratio))
    if cfg.video_decoder_depth > 0:
        shapes["dec.norm.g"] = (dd,)
        shapes["dec.norm.b"] = (dd,)
    shapes["video_head.w"] = (dd, cfg.cube_dim)
    shapes["video_head.b"] = (cfg.cube_dim,)

    if cfg.decoder_mode == DUAL and cfg.text_decoder_depth > 0:
        shapes["tdec_embed.w"] = (d, dd)
        shapes["tdec_embed.b"] = (dd,)
        for i in range(cfg.text_decoder_depth):
            shapes.update(_block_shapes(f"tdec.{i}", dd, cfg.mlp_ratio))
        shapes["tdec.norm.g"] = (dd,)
        shapes["tdec.norm.b"] = (dd,)
    text_in = d if (cfg.decoder_mode == DUAL and cfg.text_decoder_depth == 0) else dd
    shapes["text_head.w"] = (text_in, v)
    shapes["text_head.b"] = (v,)

    shapes["vtm_head.w"] = (2 * d, 2)
    shapes["vtm_head.b"] = (2,)
    shapes["vtc_log_scale"] = ()
    return shapes


class ModelState:
    """All learnable parameters plus the config that shaped them."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> nm.DiffArray:
        return self.params[name]

    def named_params(self):
        return self.params.items()

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "ModelState":
        return ModelState(
            self.config,
            {k: nm.parameter(p.data.astype(dtype)) for k, p in self.params.items()},
        )

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: nm.parameter(p.data.copy()) for k, p in self.params.items()},
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelState:
    """Random initialization: N(0, 0.02) weights, zero biases, unit norms."""
    params: dict = {}
    for name, shape in param_shapes(cfg).items():
        if name == "vtc_log_scale":
            data = np.asarray(math.log(1.0 / cfg.vtc_tau_init), dtype=dtype)
        elif name.endswith((".g",)):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = (rng.standard_normal(shape) * 0.02).astype(dtype)
        params[name] = nm.parameter(data)
    return ModelState(cfg, params)


# ---------------------------------------------------------------------------
# cube extraction / reassembly (pure data movement)
# ---------------------------------------------------------------------------


def extract_cubes(clips: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """[B, T, H, W, C] -> [B, N_v, cube_dim], token index = flattened (t, h, w)."""
    b = clips.shape[0]
    if clips.shape[1:] != (cfg.frames, cfg.height, cfg.width, cfg.channels):
        raise ShapeError(
            f"clip shape {clips.shape[1:]} does not match config "
            f"({cfg.frames}, {cfg.height}, {cfg.width}, {cfg.channels})"
        )
    x = clips.reshape(
        b, cfg.tokens_t, cfg.cube_t, cfg.tokens_h, cfg.cube_h, cfg.tokens_w, cfg.cube_w, cfg.channels
    )
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(b, cfg.num_video_tokens, cfg.cube_dim)


def assemble_cubes(cubes: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Inverse of extract_cubes: [B, N_v, cube_dim] -> [B, T, H, W, C]."""
    b = cubes.shape[0]
    x = cubes.reshape(
        b, cfg.tokens_t, cfg.tokens_h, cfg.tokens_w, cfg.cube_t, cfg.cube_h, cfg.cube_w, cfg.channels
    )
    x = x.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(b, cfg.frames, cfg.height, cfg.width, cfg.channels)


def cube_embed(state: ModelState, clips: np.ndarray) -> nm.DiffArray:
    """Project every cube to an encoder token: [B, N_v, dim]."""
    cubes = nm.constant(extract_cubes(clips, state.config).astype(state.dtype))
    return nm.add(nm.matmul(cubes, state["cube_embed.w"]), state["cube_embed.b"])


# ---------------------------------------------------------------------------
# transformer blocks
# ---------------------------------------------------------------------------


def _attention(state, prefix, x, key_bias, heads, keep_attn):
    b, s, width = x.shape
    dh = width // heads
    scale = 1.0 / math.sqrt(dh)

    def split_heads(t):
        return nm.transpose(nm.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q = split_heads(nm.add(nm.matmul(x, state[f"{prefix}.wq"]), state[f"{prefix}.bq"]))
    k = split_heads(nm.add(nm.matmul(x, state[f"{prefix}.wk"]), state[f"{prefix}.bk"]))
    v = split_heads(nm.add(nm.matmul(x, state[f"{prefix}.wv"]), state[f"{prefix}.bv"]))

    scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), scale)
    if key_bias is not None:
        scores = nm.add(scores, nm.constant(np.broadcast_to(key_bias, scores.shape)))
    probs = nm.softmax(scores, axis=-1)
    ctx = nm.matmul(probs, v)
    ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (b, s, width))
    out = nm.add(nm.matmul(ctx, state[f"{prefix}.wo"]), state[f"{prefix}.bo"])
    return out, (probs.data if keep_attn else None)


def _block(state, prefix, x, key_bias, heads, keep_attn=False):
    """Pre-norm Transformer block: attention then MLP, both residual."""
    h = nm.layer_norm(x, state[f"{prefix}.ln1.g"], state[f"{prefix}.ln1.b"])
    attn_out, attn = _attention(state, f"{prefix}.attn", h, key_bias, heads, keep_attn)
    x = nm.add(x, attn_out)
    h = nm.layer_norm(x, state[f"{prefix}.ln2.g"], state[f"{prefix}.ln2.b"])
    h = nm.matmul(h, state[f"{prefix}.mlp.w1"])
    h = nm.add(h, state[f"{prefix}.mlp.b1"])
    h = nm.gelu(h)
    h = nm.add(nm.matmul(h, state[f"{prefix}.mlp.w2"]), state[f"{prefix}.mlp.b2"])
    return nm.add(x, h), attn


def encoder_forward(state, tokens: nm.DiffArray, key_mask: np.ndarray | None, keep_attn=False):
    """Run the shared encoder stack over an already-embedded sequence.

    key_mask marks valid attention keys per [B, S] position; excluded keys get
    a large negative additive bias. Outputs at excluded positions stay finite
    and are ignored downstream.
    """
    cfg = state.config
    bias = None
    if key_mask is not None and not key_mask.all():
        bias = np.where(key_mask, 0.0, _NEG_BIAS).astype(state.dtype)[:, None, None, :]
    x = tokens
    attns = []
    for i in range(cfg.depth):
        x, attn = _block(state, f"enc.{i}", x, bias, cfg.heads, keep_attn)
        if keep_attn:
            attns.append(attn)
    x = nm.layer_norm(x, state["enc.norm.g"], state["enc.norm.b"])
    return x, (attns if keep_attn else None)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


@dataclass
class EncodeResult:
    latent: nm.DiffArray                  # [B, n_visible + text_len_physical, dim]
    n_visible: int
    text_len_physical: int
    caption_ids: np.ndarray               # corrupted ids at full caption length [B, L]
    text_slot_ids: np.ndarray             # [B, Lp] token id occupying each physical slot
    text_slot_positions: np.ndarray       # [B, Lp] caption position per slot
    text_scatter_idx: Optional[np.ndarray]  # [B, Lp] scatter targets, only w/o-[M] mode
    text_key_mask: np.ndarray             # [B, Lp] True where slot is a real non-[PAD] token
    key_mask: np.ndarray                  # [B, S]
    logical_lengths: np.ndarray           # [B] ledger: n_vis + caption tokens kept
    plans: list
    attn: Optional[list] = None

    @property
    def seq_len(self) -> int:
        return self.n_visible + self.text_len_physical

    def latent_video(self) -> nm.DiffArray:
        return nm.slice_axis(self.latent, 1, 0, self.n_visible)

    def latent_text(self) -> nm.DiffArray:
        return nm.slice_axis(self.latent, 1, self.n_visible, self.seq_len)


def _text_slots(cfg: ModelConfig, corrupted: np.ndarray, plans: list):
    """Physical text layout. Default: one slot per caption position.

    Without the text mask token, masked positions are dropped from the encoder
    input; rows are right-padded with [PAD] slots (attention-excluded) so the
    batch stays rectangular, and scatter indices are kept so the decoder can
    re-insert the missing positions.
    """
    b, l = corrupted.shape
    if cfg.text_mask_token_in_encoder:
        positions = np.tile(np.arange(l), (b, 1))
        return corrupted.copy(), positions, None

    kept = [np.setdiff1d(np.arange(l), plan.text_masked) for plan in plans]
    lp = max(k.size for k in kept)
    slot_ids = np.zeros((b, lp), dtype=corrupted.dtype)
    positions = np.zeros((b, lp), dtype=np.int64)
    scatter_idx = np.zeros((b, lp), dtype=np.int64)
    for i, k in enumerate(kept):
        n = k.size
        slot_ids[i, :n] = corrupted[i, k]
        positions[i, :n] = k
        scatter_idx[i, :n] = k
        n_fill = lp - n
        # filler slots: [PAD] id, position 0 for embedding, unique scratch
        # scatter targets beyond the real caption range
        scatter_idx[i, n:] = l + np.arange(n_fill)
    return slot_ids, positions, scatter_idx


def encode(
    state: ModelState,
    clips: np.ndarray,
    corrupted_ids: np.ndarray,
    plans: list,
    keep_attn: bool = False,
    pad_id: int = 0,
) -> EncodeResult:
    """Unified encoder over [visible video tokens || caption tokens]."""
    cfg = state.config
    b = clips.shape[0]
    if len(plans) != b or corrupted_ids.shape != (b, cfg.caption_len):
        raise ContractError(
            f"batch mismatch: {b} clips, {len(plans)} plans, ids {corrupted_ids.shape}"
        )
    n_vis = plans[0].video_visible.size
    for plan in plans:
        if plan.n_video != cfg.num_video_tokens:
            raise ContractError(
                f"mask plan covers {plan.n_video} video tokens, config has {cfg.num_video_tokens}"
            )
        if plan.video_visible.size != n_vis:
            raise ContractError("all plans in a batch must share the visible-token count")

    vis_idx = np.stack([plan.video_visible for plan in plans])
    cubes = extract_cubes(clips, cfg).astype(state.dtype)
    vis_cubes = nm.constant(cubes[np.arange(b)[:, None], vis_idx])
    vtok = nm.add(nm.matmul(vis_cubes, state["cube_embed.w"]), state["cube_embed.b"])
    vtok = nm.add(vtok, nm.gather_rows(state["video_pos"], vis_idx))
    vtok = nm.add(vtok, nm.gather_rows(state["type_embed"], np.asarray(0)))

    slot_ids, slot_pos, scatter_idx = _text_slots(cfg, corrupted_ids, plans)
    ttok = nm.gather_rows(state["token_embed"], slot_ids)
    ttok = nm.add(ttok, nm.gather_rows(state["text_pos"], slot_pos))
    ttok = nm.add(ttok, nm.gather_rows(state["type_embed"], np.asarray(1)))

    seq = nm.concat([vtok, ttok], axis=1)
    text_key_mask = slot_ids != pad_id
    key_mask = np.concatenate(
        [np.ones((b, n_vis), dtype=bool), text_key_mask], axis=1
    )

    latent, attns = encoder_forward(state, seq, key_mask, keep_attn=keep_attn)

    lp = slot_ids.shape[1]
    if latent.shape[1] != n_vis + lp:
        raise ContractError(
            f"token ledger violated: encoder length {latent.shape[1]} != {n_vis} + {lp}"
        )
    if cfg.text_mask_token_in_encoder:
        logical = np.full(b, n_vis + cfg.caption_len)
    else:
        logical = np.array([n_vis + cfg.caption_len - p.text_masked.size for p in plans])

    return EncodeResult(
        latent=latent,
        n_visible=n_vis,
        text_len_physical=lp,
        caption_ids=corrupted_ids,
        text_slot_ids=slot_ids,
        text_slot_positions=slot_pos,
        text_scatter_idx=scatter_idx,
        text_key_mask=text_key_mask,
        key_mask=key_mask,
        logical_lengths=logical,
        plans=list(plans),
        attn=attns,
    )


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------


def decode_video(state: ModelState, enc: EncodeResult) -> nm.DiffArray:
    """Reconstruct masked cubes in pixel space: [B, n_masked, cube_dim].

    Mask positions are filled with the shared learnable vector, decoder
    positional embeddings are added to the full token set, and only masked
    tokens are projected to pixels.
    """
    cfg = state.config
    b = enc.latent.shape[0]
    masked_idx = np.stack([p.video_masked for p in enc.plans])
    n_masked = masked_idx.shape[1]
    if n_masked == 0:
        return nm.constant(np.zeros((b, 0, cfg.cube_dim), dtype=state.dtype))

    vis_idx = np.stack([p.video_visible for p in enc.plans])
    x = nm.add(nm.matmul(enc.latent_video(), state["dec_embed.w"]), state["dec_embed.b"])
    placed = nm.scatter_tokens(x, vis_idx, cfg.num_video_tokens)
    fill = nm.add(
        nm.constant(np.zeros((b, n_masked, cfg.decoder_dim), dtype=state.dtype)),
        state["video_mask_token"],
    )
    placed = nm.add(placed, nm.scatter_tokens(fill, masked_idx, cfg.num_video_tokens))
    placed = nm.add(placed, state["dec_pos"])

    x = placed
    for i in range(cfg.video_decoder_depth):
        x, _ = _block(state, f"dec.{i}", x, None, cfg.decoder_heads)
    if cfg.video_decoder_depth > 0:
        x = nm.layer_norm(x, state["dec.norm.g"], state["dec.norm.b"])

    masked_latent = nm.gather_tokens(x, masked_idx)
    return nm.add(nm.matmul(masked_latent, state["video_head.w"]), state["video_head.b"])


def _reinsert_masked_text(state: ModelState, enc: EncodeResult, mask_id: int) -> nm.DiffArray:
    """Scatter kept text latents back to caption positions; fill masked ones
    with the [M] embedding plus positional embeddings (w/o-[M] ablation)."""
    cfg = state.config
    b, l = enc.caption_ids.shape
    scratch = l + enc.text_len_physical
    scattered = nm.scatter_tokens(enc.latent_text(), enc.text_scatter_idx, scratch)
    kept_part = nm.slice_axis(scattered, 1, 0, l)

    mask_flag = np.zeros((b, l), dtype=bool)
    for i, plan in enumerate(enc.plans):
        mask_flag[i, plan.text_masked] = True
    m_embed = nm.add(nm.gather_rows(state["token_embed"], np.asarray(mask_id)), state["text_pos"])
    flag = nm.constant(np.broadcast_to(mask_flag[:, :, None], (b, l, cfg.dim)).astype(state.dtype))
    return nm.add(kept_part, nm.mul(flag, m_embed))


def decode_text(state: ModelState, enc: EncodeResult, pad_id: int = 0, mask_id: int = 1) -> nm.DiffArray:
    """Vocabulary logits at every caption position: [B, L, vocab]."""
    cfg = state.config
    if cfg.text_mask_token_in_encoder:
        x = enc.latent_text()
    else:
        x = _reinsert_masked_text(state, enc, mask_id)

    valid = enc.caption_ids != pad_id
    bias = None
    if not valid.all():
        bias = np.where(valid, 0.0, _NEG_BIAS).astype(state.dtype)[:, None, None, :]

    if cfg.decoder_mode == SHARED:
        x = nm.add(nm.matmul(x, state["dec_embed.w"]), state["dec_embed.b"])
        for i in range(cfg.video_decoder_depth):
            x, _ = _block(state, f"dec.{i}", x, bias, cfg.decoder_heads)
        if cfg.video_decoder_depth > 0:
            x = nm.layer_norm(x, state["dec.norm.g"], state["dec.norm.b"])
    elif cfg.text_decoder_depth > 0:
        x = nm.add(nm.matmul(x, state["tdec_embed.w"]), state["tdec_embed.b"])
        for i in range(cfg.text_decoder_depth):
            x, _ = _block(state, f"tdec.{i}", x, bias, cfg.decoder_heads)
        x = nm.layer_norm(x, state["tdec.norm.g"], state["tdec.norm.b"])

    return nm.add(nm.matmul(x, state["text_head.w"]), state["text_head.b"])


# ---------------------------------------------------------------------------
# pooled features and the matching head
# ---------------------------------------------------------------------------


def pool_features(enc: EncodeResult):
    """Mean-pool visible video outputs and non-[PAD] text outputs, L2-normalize."""
    dtype = enc.latent.dtype
    video = nm.mean(enc.latent_video(), axis=1)

    weights = enc.text_key_mask.astype(dtype)
    counts = weights.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ContractError("cannot pool a caption with zero valid tokens")
    b, lp = weights.shape
    d = enc.latent.shape[-1]
    w3 = nm.constant(np.broadcast_to(weights[:, :, None], (b, lp, d)))
    text_sum = nm.array_sum(nm.mul(enc.latent_text(), w3), axis=1)
    inv = nm.constant(np.broadcast_to(1.0 / counts, (b, d)).astype(dtype))
    text = nm.mul(text_sum, inv)
    return nm.l2_normalize(video), nm.l2_normalize(text)


def vtm_logits(state: ModelState, video_feat: nm.DiffArray, text_feat: nm.DiffArray) -> nm.DiffArray:
    joint = nm.concat([video_feat, text_feat], axis=1)
    return nm.add(nm.matmul(joint, state["vtm_head.w"]), state["vtm_head.b"])


def vtm_head(state: ModelState, video_feat: nm.DiffArray, text_feat: nm.DiffArray) -> nm.DiffArray:
    """Two-class (unmatched, matched) probabilities per pair."""
    return nm.softmax(vtm_logits(state, video_feat, text_feat), axis=-1)


def vtc_temperature(state: ModelState) -> nm.DiffArray:
    """Effective contrastive temperature, exp(-log_scale), always positive."""
    return nm.exp(nm.neg(state["vtc_log_scale"]))
