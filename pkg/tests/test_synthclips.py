"""Corpus generator tests: determinism, rendering rules, tokenizer round trips."""

import numpy as np
import pytest

from simvtp import synthclips as sc
from simvtp.errors import ConfigError


def spec(shape="square", color="red", motion="left", bg=0.2, seed=11):
    return sc.SceneSpec(shape=shape, color=color, motion=motion, background=bg, seed=seed)


def centroid_cols(clip, bg):
    cols = []
    for frame in clip:
        fg = np.any(np.abs(frame - bg) > 1e-6, axis=-1)
        ys, xs = np.nonzero(fg)
        cols.append(xs.mean())
    return np.array(cols)


def test_motion_left_centroid_strictly_decreases():
    s = spec(motion="left")
    clip = sc.render_clip(s)
    cols = centroid_cols(clip, s.background)
    assert np.all(np.diff(cols) < 0)


def test_motion_right_and_vertical():
    for motion, axis, sign in (("right", 1, +1), ("up", 0, -1), ("down", 0, +1)):
        s = spec(motion=motion, seed=5)
        clip = sc.render_clip(s)
        cents = []
        for frame in clip:
            fg = np.any(np.abs(frame - s.background) > 1e-6, axis=-1)
            ys, xs = np.nonzero(fg)
            cents.append((ys.mean(), xs.mean()))
        vals = np.array([c[axis] for c in cents])
        assert np.all(sign * np.diff(vals) > 0), motion


def test_grows_area_increases():
    clip = sc.render_clip(spec(motion="grows"))
    areas = [np.any(np.abs(f - 0.2) > 1e-6, axis=-1).sum() for f in clip]
    assert areas[-1] > areas[0]
    clip2 = sc.render_clip(spec(motion="shrinks"))
    areas2 = [np.any(np.abs(f - 0.2) > 1e-6, axis=-1).sum() for f in clip2]
    assert areas2[-1] < areas2[0]


def test_render_deterministic():
    a = sc.render_clip(spec(seed=99))
    b = sc.render_clip(spec(seed=99))
    np.testing.assert_array_equal(a, b)


def test_red_channel_dominates_inside_shape():
    s = spec(color="red")
    clip = sc.render_clip(s)
    for frame in clip:
        fg = np.any(np.abs(frame - s.background) > 1e-6, axis=-1)
        region = frame[fg]
        assert np.all(region[:, 0] > region[:, 1])
        assert np.all(region[:, 0] > region[:, 2])


def test_pixels_in_unit_range_all_motions():
    for motion in sc.MOTIONS:
        clip = sc.render_clip(spec(motion=motion, seed=3))
        assert clip.min() >= 0.0 and clip.max() <= 1.0


def test_caption_templates():
    assert sc.caption_of(spec(color="red", shape="square", motion="left")) == "a red square moves left"
    assert sc.caption_of(spec(color="blue", shape="circle", motion="grows")) == "a blue circle grows"


def test_vocab_size_bounded():
    vocab = sc.build_vocab()
    assert len(vocab) <= 32


def test_tokenize_pad_arithmetic():
    vocab = sc.build_vocab()
    ids = sc.tokenize("a red square moves left", vocab)
    assert ids.shape == (18,)
    assert (ids != vocab.pad_id).sum() == 5
    assert (ids == vocab.pad_id).sum() == 13


def test_detokenize_round_trip_on_templates():
    vocab = sc.build_vocab()
    rng = np.random.default_rng(0)
    for s in sc.sample_specs(30, rng):
        cap = sc.caption_of(s)
        assert sc.detokenize(sc.tokenize(cap, vocab), vocab) == cap


def test_unknown_word_maps_to_unk():
    vocab = sc.build_vocab()
    ids = sc.tokenize("a purple dodecahedron moves left", vocab)
    assert ids[1] == vocab.unk_id and ids[2] == vocab.unk_id


def test_corpus_deterministic_and_split_sizes():
    c1 = sc.make_corpus(40, seed=7)
    c2 = sc.make_corpus(40, seed=7)
    assert len(c1.train) == 32 and len(c1.val) == 4 and len(c1.test) == 4
    np.testing.assert_array_equal(c1.train.clips, c2.train.clips)
    np.testing.assert_array_equal(c1.test.token_ids, c2.test.token_ids)
    assert c1.val.captions == c2.val.captions


def test_corpus_split_sizes_1000():
    # no rendering needed to check the arithmetic rule
    n = 1000
    n_train, n_val = int(n * 0.8), int(n * 0.1)
    assert (n_train, n_val, n - n_train - n_val) == (800, 100, 100)


def test_corpus_too_small_raises():
    with pytest.raises(ConfigError):
        sc.make_corpus(2, seed=0)
    with pytest.raises(ConfigError):
        sc.make_corpus(5, seed=0)  # 80/10/10 leaves an empty split


def test_spec_coverage_in_10k_samples():
    # coupon collector: P(missing any of the 90 combos) ~ 90 * (89/90)^10000 ~ 1e-47
    rng = np.random.default_rng(21)
    specs = sc.sample_specs(10_000, rng)
    combos = {s.class_key for s in specs}
    assert len(combos) == 90


def test_caption_clip_consistency():
    corpus = sc.make_corpus(30, seed=3)
    for split in corpus.splits.values():
        for i in range(len(split)):
            shape, color, motion = sc.parse_caption(split.captions[i])
            s = split.specs[i]
            assert (shape, color, motion) == (s.shape, s.color, s.motion)
            # color check against pixels of the first frame
            frame = split.clips[i][0]
            fg = np.any(np.abs(frame - s.background) > 1e-6, axis=-1)
            expected = np.array(sc.COLORS[color], dtype=np.float32)
            assert np.allclose(frame[fg], expected)


def test_corpus_export_import_round_trip(tmp_path):
    corpus = sc.make_corpus(20, seed=9)
    sc.save_corpus(corpus, tmp_path / "corpus")
    loaded = sc.load_corpus(tmp_path / "corpus")
    for name in ("train", "val", "test"):
        a, b = corpus.splits[name], loaded.splits[name]
        np.testing.assert_array_equal(a.clips, b.clips)
        assert a.captions == b.captions
        np.testing.assert_array_equal(a.token_ids, b.token_ids)
    assert loaded.vocab.word_to_id == corpus.vocab.word_to_id
