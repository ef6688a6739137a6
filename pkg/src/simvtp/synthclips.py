"""Procedural video-caption corpus: one colored shape moving on a gray background.

Every sample is fully determined by its :class:`SceneSpec`, so the corpus is
reproducible bit-for-bit from a seed. Captions follow fixed templates over a
closed vocabulary, which keeps masked-word reconstruction solvable from the
paired clip alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

SHAPES = ("square", "circle", "triangle")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "white": (1.0, 1.0, 1.0),
}
MOTIONS = ("left", "right", "up", "down", "grows", "shrinks")

PAD_TOKEN = "[PAD]"
MASK_TOKEN = "[M]"
UNK_TOKEN = "[UNK]"

DEFAULT_CAPTION_LEN = 18

# Background gray is kept away from shape colors and the 0.5 mid-gray used to
# paint masked regions in reconstruction dumps.
_BG_RANGE = (0.05, 0.45)


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    motion: str
    background: float
    seed: int

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ConfigError(f"unknown color {self.color!r}")
        if self.motion not in MOTIONS:
            raise ConfigError(f"unknown motion {self.motion!r}")
        if not 0.0 <= self.background <= 1.0:
            raise ConfigError(f"background gray {self.background} outside [0, 1]")

    @property
    def class_key(self) -> tuple:
        return (self.shape, self.color, self.motion)


class Vocabulary:
    """Bidirectional word <-> id map over the closed caption vocabulary."""

    def __init__(self, words: list[str]):
        self.id_to_word = list(words)
        self.word_to_id = {w: i for i, w in enumerate(words)}
        if len(self.word_to_id) != len(words):
            raise ConfigError("vocabulary contains duplicate words")
        for special in (PAD_TOKEN, MASK_TOKEN, UNK_TOKEN):
            if special not in self.word_to_id:
                raise ConfigError(f"vocabulary missing special token {special}")

    def __len__(self):
        return len(self.id_to_word)

    @property
    def pad_id(self) -> int:
        return self.word_to_id[PAD_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.word_to_id[MASK_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK_TOKEN]

    @property
    def special_ids(self) -> frozenset:
        return frozenset((self.pad_id, self.mask_id, self.unk_id))

    @property
    def content_ids(self) -> np.ndarray:
        return np.array([i for i in range(len(self)) if i not in self.special_ids])

    def to_json(self) -> dict:
        return dict(self.word_to_id)

    @classmethod
    def from_json(cls, mapping: dict) -> "Vocabulary":
        words = [None] * len(mapping)
        for w, i in mapping.items():
            words[int(i)] = w
        return cls(words)


def build_vocab() -> Vocabulary:
    words = [PAD_TOKEN, MASK_TOKEN, UNK_TOKEN, "a", "moves"]
    words += list(COLORS) + list(SHAPES) + list(MOTIONS)
    return Vocabulary(words)


def caption_of(spec: SceneSpec) -> str:
    if spec.motion in ("grows", "shrinks"):
        return f"a {spec.color} {spec.shape} {spec.motion}"
    return f"a {spec.color} {spec.shape} moves {spec.motion}"


def parse_caption(text: str) -> tuple[str, str, str]:
    """Recover (shape, color, motion) from a template caption."""
    words = text.split()
    color = next(w for w in words if w in COLORS)
    shape = next(w for w in words if w in SHAPES)
    motion = next(w for w in words if w in MOTIONS)
    return shape, color, motion


def tokenize(text: str, vocab: Vocabulary, length: int = DEFAULT_CAPTION_LEN) -> np.ndarray:
    ids = [vocab.word_to_id.get(w, vocab.unk_id) for w in text.lower().split()]
    ids = ids[:length]
    ids += [vocab.pad_id] * (length - len(ids))
    return np.array(ids, dtype=np.int64)


def detokenize(ids, vocab: Vocabulary) -> str:
    words = [vocab.id_to_word[int(i)] for i in ids if int(i) != vocab.pad_id]
    return " ".join(words)


def _shape_mask(shape: str, ys: np.ndarray, xs: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    if shape == "square":
        return (np.abs(ys - cy) <= r) & (np.abs(xs - cx) <= r)
    if shape == "circle":
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    # upward-pointing triangle: apex at cy - r, base at cy + r
    rel = (ys - (cy - r)) / 2.0
    return (ys >= cy - r) & (ys <= cy + r) & (np.abs(xs - cx) <= rel)


def render_clip(spec: SceneSpec, frames: int = 16, height: int = 32, width: int = 32) -> np.ndarray:
    """Rasterize a clip as [T, H, W, 3] float32 in [0, 1].

    Translating motions move the shape center exactly one pixel per frame, so
    the drawn centroid is strictly monotone along the motion axis.
    """
    rng = np.random.default_rng(spec.seed)
    jitter = rng.integers(-3, 4, size=2)
    base_r = int(rng.integers(4, 7))

    span = frames - 1
    cy0, cx0 = height // 2 + int(jitter[0]), width // 2 + int(jitter[1])
    lo = base_r + 2
    hi_y, hi_x = height - base_r - 3, width - base_r - 3

    clip = np.full((frames, height, width, 3), spec.background, dtype=np.float32)
    ys, xs = np.ogrid[:height, :width]
    color = np.array(COLORS[spec.color], dtype=np.float32)

    for t in range(frames):
        cy, cx, r = float(cy0), float(cx0), float(base_r)
        if spec.motion == "left":
            cx = min(hi_x, lo + span) - t
            cy = np.clip(cy0, lo, hi_y)
        elif spec.motion == "right":
            cx = max(lo, hi_x - span) + t
            cy = np.clip(cy0, lo, hi_y)
        elif spec.motion == "up":
            cy = min(hi_y, lo + span) - t
            cx = np.clip(cx0, lo, hi_x)
        elif spec.motion == "down":
            cy = max(lo, hi_y - span) + t
            cx = np.clip(cx0, lo, hi_x)
        elif spec.motion == "grows":
            r = 3.0 + 0.35 * t
            cy, cx = np.clip(cy0, 9, height - 9), np.clip(cx0, 9, width - 9)
        elif spec.motion == "shrinks":
            r = 3.0 + 0.35 * (span - t)
            cy, cx = np.clip(cy0, 9, height - 9), np.clip(cx0, 9, width - 9)
        mask = _shape_mask(spec.shape, ys, xs, float(cy), float(cx), r)
        clip[t][mask] = color
    return clip


def sample_specs(n: int, rng: np.random.Generator) -> list[SceneSpec]:
    """Draw scene specs uniformly over the shape x color x motion cross-product."""
    colors = list(COLORS)
    specs = []
    for _ in range(n):
        specs.append(
            SceneSpec(
                shape=SHAPES[rng.integers(len(SHAPES))],
                color=colors[rng.integers(len(colors))],
                motion=MOTIONS[rng.integers(len(MOTIONS))],
                background=float(rng.uniform(*_BG_RANGE)),
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return specs


@dataclass
class Split:
    clips: np.ndarray        # [N, T, H, W, C] float32
    captions: list[str]
    token_ids: np.ndarray    # [N, L] int64
    specs: list[SceneSpec] | None = None

    def __len__(self):
        return self.clips.shape[0]


@dataclass
class Corpus:
    train: Split
    val: Split
    test: Split
    vocab: Vocabulary
    caption_len: int = DEFAULT_CAPTION_LEN
    seed: int | None = None
    splits: dict = field(init=False)

    def __post_init__(self):
        self.splits = {"train": self.train, "val": self.val, "test": self.test}


def make_corpus(
    n: int,
    seed: int,
    frames: int = 16,
    height: int = 32,
    width: int = 32,
    caption_len: int = DEFAULT_CAPTION_LEN,
) -> Corpus:
    """Generate n paired samples and split them 80/10/10 (train/val/test)."""
    if n < 3:
        raise ConfigError(f"corpus needs at least 3 samples, got {n}")
    n_train, n_val = int(n * 0.8), int(n * 0.1)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"corpus of {n} samples leaves an empty split (80/10/10)")

    rng = np.random.default_rng(seed)
    specs = sample_specs(n, rng)
    order = rng.permutation(n)
    vocab = build_vocab()

    def build_split(indices) -> Split:
        sub = [specs[i] for i in indices]
        clips = np.stack([render_clip(s, frames, height, width) for s in sub])
        captions = [caption_of(s) for s in sub]
        ids = np.stack([tokenize(c, vocab, caption_len) for c in captions])
        return Split(clips=clips, captions=captions, token_ids=ids, specs=sub)

    train = build_split(order[:n_train])
    val = build_split(order[n_train:n_train + n_val])
    test = build_split(order[n_train + n_val:])
    return Corpus(train=train, val=val, test=test, vocab=vocab, caption_len=caption_len, seed=seed)


# ---------------------------------------------------------------------------
# corpus export / import
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, out_dir: str | Path):
    """Write one directory per split: raw float32 clips + sidecars + captions."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "vocab.json").write_text(json.dumps(corpus.vocab.to_json(), sort_keys=True))
    for name, split in corpus.splits.items():
        d = root / name
        d.mkdir(exist_ok=True)
        for i in range(len(split)):
            clip = split.clips[i]
            (d / f"clip_{i:05d}.f32").write_bytes(
                clip.astype("<f4").tobytes()
            )
            (d / f"clip_{i:05d}.json").write_text(
                json.dumps({"shape": list(clip.shape)})
            )
        (d / "captions.txt").write_text("\n".join(split.captions) + "\n", encoding="utf-8")


def load_corpus(in_dir: str | Path, caption_len: int = DEFAULT_CAPTION_LEN) -> Corpus:
    root = Path(in_dir)
    vocab = Vocabulary.from_json(json.loads((root / "vocab.json").read_text()))

    def load_split(name) -> Split:
        d = root / name
        captions = (d / "captions.txt").read_text(encoding="utf-8").splitlines()
        clips = []
        for i in range(len(captions)):
            meta = json.loads((d / f"clip_{i:05d}.json").read_text())
            raw = np.frombuffer((d / f"clip_{i:05d}.f32").read_bytes(), dtype="<f4")
            expected = int(np.prod(meta["shape"]))
            if raw.size != expected:
                raise ContractError(
                    f"{d / f'clip_{i:05d}.f32'}: expected {expected} floats, found {raw.size}"
                )
            clips.append(raw.reshape(meta["shape"]).astype(np.float32))
        ids = np.stack([tokenize(c, vocab, caption_len) for c in captions])
        return Split(clips=np.stack(clips), captions=captions, token_ids=ids)

    return Corpus(
        train=load_split("train"),
        val=load_split("val"),
        test=load_split("test"),
        vocab=vocab,
        caption_len=caption_len,
    )
