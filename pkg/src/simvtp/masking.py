"""Per-modality mask sampling: uniform tube masks for video, word masks for text.

Video and text use independent ratios. Masked counts resolve fractional values
with round-half-up, and at least one video token always stays visible. [PAD]
positions are never masked: padding is a desk-scale artifact and masking it
would corrupt the text loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .synthclips import Vocabulary

BERT_LIKE = "bert_like"
MAE_LIKE = "mae_like"
TEXT_STRATEGIES = (BERT_LIKE, MAE_LIKE)

# BERT corruption: [M] / random word / unchanged word
_ACTION_PROBS = (0.8, 0.1, 0.1)


class TextAction(IntEnum):
    REPLACE_WITH_M = 0
    REPLACE_RANDOM = 1
    KEEP = 2


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def masked_count(n: int, rho: float) -> int:
    """Number of masked tokens for a ratio, clamped to keep one visible."""
    return min(round_half_up(rho * n), n - 1)


@dataclass
class MaskPlan:
    """Index-level masking decisions for one video-text pair."""

    video_masked: np.ndarray    # sorted, disjoint with video_visible
    video_visible: np.ndarray
    text_masked: np.ndarray     # positions into the padded caption, never [PAD]
    text_actions: np.ndarray    # TextAction code per masked text position
    rho_video: float
    rho_text: float

    def __post_init__(self):
        for name in ("video_masked", "video_visible", "text_masked"):
            arr = getattr(self, name)
            if arr.size and not (np.all(np.diff(arr) > 0)):
                raise ConfigError(f"MaskPlan.{name} must be sorted and duplicate-free")
        if self.text_actions.shape != self.text_masked.shape:
            raise ConfigError("text_actions must align with text_masked")

    @property
    def n_video(self) -> int:
        return self.video_masked.size + self.video_visible.size

    def to_json(self) -> dict:
        return {
            "video_masked": self.video_masked.tolist(),
            "video_visible": self.video_visible.tolist(),
            "text_masked": self.text_masked.tolist(),
            "text_actions": self.text_actions.tolist(),
            "rho_video": self.rho_video,
            "rho_text": self.rho_text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MaskPlan":
        return cls(
            video_masked=np.asarray(obj["video_masked"], dtype=np.int64),
            video_visible=np.asarray(obj["video_visible"], dtype=np.int64),
            text_masked=np.asarray(obj["text_masked"], dtype=np.int64),
            text_actions=np.asarray(obj["text_actions"], dtype=np.int64),
            rho_video=float(obj["rho_video"]),
            rho_text=float(obj["rho_text"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, payload: str) -> "MaskPlan":
        return cls.from_json(json.loads(payload))


def _check_ratio(rho: float, what: str):
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"{what} mask ratio must lie in [0, 1), got {rho}")


def sample_video_mask(n_tokens: int, rho: float, rng: np.random.Generator):
    """Uniform subset of exactly masked_count(n, rho) token indices."""
    _check_ratio(rho, "video")
    if n_tokens < 1:
        raise ConfigError(f"need at least one video token, got {n_tokens}")
    n_masked = masked_count(n_tokens, rho)
    perm = rng.permutation(n_tokens)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])
    return masked, visible


def sample_text_mask(
    token_ids: np.ndarray,
    rho: float,
    strategy: str,
    rng: np.random.Generator,
    vocab: Vocabulary,
):
    """Mask non-[PAD] positions and build the corrupted token sequence.

    Returns (masked positions, action codes, corrupted ids). Reconstruction
    targets are the original ids at every masked position regardless of the
    action, matching BERT semantics for KEEP and RANDOM.
    """
    _check_ratio(rho, "text")
    if strategy not in TEXT_STRATEGIES:
        raise ConfigError(f"unknown text mask strategy {strategy!r}; expected one of {TEXT_STRATEGIES}")
    token_ids = np.asarray(token_ids)
    nonpad = np.flatnonzero(token_ids != vocab.pad_id)
    if nonpad.size == 0:
        raise DegenerateInputError("caption is all [PAD]; nothing to mask")

    n_masked = round_half_up(rho * nonpad.size)
    chosen = np.sort(rng.permutation(nonpad)[:n_masked])

    corrupted = token_ids.copy()
    if strategy == MAE_LIKE:
        actions = np.full(n_masked, TextAction.REPLACE_WITH_M, dtype=np.int64)
    else:
        draws = rng.random(n_masked)
        actions = np.where(
            draws < _ACTION_PROBS[0],
            TextAction.REPLACE_WITH_M,
            np.where(draws < _ACTION_PROBS[0] + _ACTION_PROBS[1],
                     TextAction.REPLACE_RANDOM, TextAction.KEEP),
        ).astype(np.int64)

    content = vocab.content_ids
    for pos, act in zip(chosen, actions):
        if act == TextAction.REPLACE_WITH_M:
            corrupted[pos] = vocab.mask_id
        elif act == TextAction.REPLACE_RANDOM:
            corrupted[pos] = content[rng.integers(content.size)]
        # KEEP leaves the original word in place
    return chosen, actions, corrupted


def sample_plan(
    n_video_tokens: int,
    token_ids: np.ndarray,
    rho_video: float,
    rho_text: float,
    strategy: str,
    rng: np.random.Generator,
    vocab: Vocabulary,
):
    """Sample both modalities; returns (MaskPlan, corrupted token ids)."""
    vm, vv = sample_video_mask(n_video_tokens, rho_video, rng)
    tm, actions, corrupted = sample_text_mask(token_ids, rho_text, strategy, rng, vocab)
    plan = MaskPlan(
        video_masked=vm,
        video_visible=vv,
        text_masked=tm,
        text_actions=actions,
        rho_video=rho_video,
        rho_text=rho_text,
    )
    return plan, corrupted


def whole_sequence_mask(
    n_video: int,
    n_text: int,
    rho: float,
    rng: np.random.Generator,
) -> MaskPlan:
    """Single ratio over the concatenated token range, split back per modality.

    This is the rejected joint-masking strategy, kept for the ablation. Text
    actions are always [M]-replacement here. If the draw would hide every
    video token, one masked video index is swapped with an unmasked text
    index so the total masked count is preserved.
    """
    _check_ratio(rho, "joint")
    total = n_video + n_text
    n_masked = round_half_up(rho * total)
    perm = rng.permutation(total)
    masked = perm[:n_masked]
    video_part = masked[masked < n_video]
    text_part = masked[masked >= n_video] - n_video

    if n_video > 0 and video_part.size == n_video:
        unmask = video_part[rng.integers(video_part.size)]
        video_part = video_part[video_part != unmask]
        free_text = np.setdiff1d(np.arange(n_text), text_part)
        if free_text.size:
            text_part = np.append(text_part, free_text[rng.integers(free_text.size)])

    video_part = np.sort(video_part)
    text_part = np.sort(text_part)
    visible = np.setdiff1d(np.arange(n_video), video_part)
    return MaskPlan(
        video_masked=video_part,
        video_visible=visible,
        text_masked=text_part,
        text_actions=np.full(text_part.size, TextAction.REPLACE_WITH_M, dtype=np.int64),
        rho_video=rho,
        rho_text=rho,
    )
