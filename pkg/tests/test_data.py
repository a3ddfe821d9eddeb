import time

import numpy as np
import pytest

from phonograph.data import (
    DEFECTS,
    Manifest,
    SynthConfig,
    build_corpus,
    clip_or_pad,
    largest_remainder,
    make_inventory,
    sample_seed,
    synth_sample,
)
from phonograph.phoneme import BONAFIDE, FAKE, FrameSequence, segment
from phonograph.tensor import io as tio


def seq(T, C=2):
    return FrameSequence(np.arange(T * C, dtype=float).reshape(T, C), np.arange(T) % 3)


def test_clip_identity_when_exact():
    s = seq(5)
    for mode in ("train", "eval"):
        out = clip_or_pad(s, 5, mode, np.random.default_rng(0))
        assert np.array_equal(out.features, s.features) and np.array_equal(out.labels, s.labels)


def test_clip_eval_centres():
    out = clip_or_pad(seq(10), 4, "eval")
    assert np.array_equal(out.features, seq(10).features[3:7])


def test_pad_repeats_cyclically():
    out = clip_or_pad(seq(3), 8, "eval")
    assert np.array_equal(out.features, seq(3).features[[0, 1, 2, 0, 1, 2, 0, 1]])
    assert out.labels.tolist() == [0, 1, 2, 0, 1, 2, 0, 1]


def test_clip_train_is_contiguous_window():
    s = seq(30)
    rng = np.random.default_rng(1)
    offsets = set()
    for _ in range(50):
        out = clip_or_pad(s, 7, "train", rng)
        off = int(out.features[0, 0]) // 2
        offsets.add(off)
        assert np.array_equal(out.features, s.features[off: off + 7])
    assert len(offsets) > 5


def test_clip_rejects_bad_args():
    with pytest.raises(ValueError):
        clip_or_pad(seq(3), 0)
    with pytest.raises(ValueError):
        clip_or_pad(seq(3), 2, "test")


def test_largest_remainder():
    assert largest_remainder(200, (0.8, 0.1, 0.1)) == [160, 20, 20]
    assert largest_remainder(7, (0.8, 0.1, 0.1)) == [5, 1, 1]
    assert sum(largest_remainder(33, (0.5, 0.3, 0.2))) == 33


def test_sample_is_deterministic():
    cfg = SynthConfig()
    a = synth_sample(cfg, FAKE, np.random.default_rng(sample_seed(7, "x")), sample_id="x")
    b = synth_sample(cfg, FAKE, np.random.default_rng(sample_seed(7, "x")), sample_id="x")
    assert np.array_equal(a.sequence.features, b.sequence.features)
    assert np.array_equal(a.sequence.labels, b.sequence.labels)


def test_labels_align_with_rendered_segments():
    cfg = SynthConfig()
    s = synth_sample(cfg, FAKE, np.random.default_rng(3))
    assert segment(s.sequence.labels).ids.tolist() == s.phonemes
    counts = segment(s.sequence.labels).counts
    assert counts.min() >= cfg.min_duration and counts.max() <= cfg.max_duration


def test_hard_transitions_at_full_intensity():
    cfg = SynthConfig(defects=("hard_transitions",), intensity=1.0)
    inv = make_inventory(cfg)
    s = synth_sample(cfg, FAKE, np.random.default_rng(11), inv)
    assert np.all(s.crossfade == 0.0)
    labels = s.sequence.labels
    speaker = s.clean[0] - inv.prototypes[labels[0]]
    # renderer oracle: every clean frame is exactly its own prototype plus the speaker offset
    np.testing.assert_allclose(s.clean, inv.prototypes[labels] + speaker, atol=1e-12)


def test_bonafide_has_crossfades():
    s = synth_sample(SynthConfig(), BONAFIDE, np.random.default_rng(11))
    assert (s.crossfade > 0).any()


def test_zero_intensity_fake_matches_bonafide():
    cfg = SynthConfig(intensity=0.0)
    inv = make_inventory(cfg)
    a = synth_sample(cfg, BONAFIDE, np.random.default_rng(5), inv)
    b = synth_sample(cfg, FAKE, np.random.default_rng(5), inv)
    assert np.array_equal(a.sequence.features, b.sequence.features)


@pytest.mark.parametrize("defect", DEFECTS)
def test_each_defect_changes_output(defect):
    cfg = SynthConfig(defects=(defect,), intensity=1.0)
    inv = make_inventory(cfg)
    a = synth_sample(cfg, BONAFIDE, np.random.default_rng(5), inv)
    b = synth_sample(cfg, FAKE, np.random.default_rng(5), inv)
    assert a.sequence.features.shape != b.sequence.features.shape or not np.array_equal(a.sequence.features, b.sequence.features)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(intensity=1.5)
    with pytest.raises(ValueError):
        SynthConfig(min_duration=0)
    with pytest.raises(ValueError):
        SynthConfig(defects=("nope",))
    with pytest.raises(ValueError):
        SynthConfig(split_ratios=(0.5, 0.5, 0.5))


def test_corpus_splits_and_balance(tmp_path):
    start = time.perf_counter()
    m = build_corpus(SynthConfig(), tmp_path / "c")
    assert time.perf_counter() - start < 10
    assert len(m) == 200 and len({r.sample_id for r in m}) == 200
    assert [len(m.split(s)) for s in ("train", "val", "test")] == [160, 20, 20]
    for split in ("train", "val", "test"):
        labels = [r.label for r in m.split(split)]
        assert labels.count(BONAFIDE) == labels.count(FAKE)


def test_corpus_is_reproducible(tmp_path):
    build_corpus(SynthConfig(n_bonafide=10, n_fake=10), tmp_path / "a")
    build_corpus(SynthConfig(n_bonafide=10, n_fake=10), tmp_path / "b")
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()
    for f in (tmp_path / "a/features").iterdir():
        assert f.read_bytes() == (tmp_path / "b/features" / f.name).read_bytes()


def test_manifest_round_trip(tmp_path):
    m = build_corpus(SynthConfig(n_bonafide=3, n_fake=2), tmp_path)
    back = Manifest.read(tmp_path / "manifest.tsv")
    assert [r.__dict__ for r in back] == [r.__dict__ for r in m]
    rec = back.records[0]
    loaded = back.load(rec)
    assert np.array_equal(loaded.features, tio.load(tmp_path / rec.path))
    assert loaded.labels.tolist() == rec.frame_labels


def test_empty_corpus(tmp_path):
    with pytest.raises(ValueError, match="empty corpus"):
        build_corpus(SynthConfig(n_bonafide=0, n_fake=0), tmp_path)


def test_manifest_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        Manifest.read(tmp_path / "none.tsv")
