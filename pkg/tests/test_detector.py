import hashlib
import json
import math

import numpy as np
import pytest

from oracles import bce_scalar, clip_loss_scalar
from phonograph.data import SynthConfig, build_corpus
from phonograph.detector import (
    Dataset,
    DetectorModel,
    EarlyStopping,
    TrainingConfig,
    batch_losses,
    bce,
    clip_loss,
    export_embeddings,
    load_detector,
    save_checkpoint,
    score_dataset,
    total_loss,
    train,
)
from phonograph.phoneme import BONAFIDE, FAKE, FrameSequence, adaptive_phoneme_pool, segment
from phonograph.recognizer import RecognizerConfig, RecognizerModel
from phonograph.recognizer import save_checkpoint as save_recognizer
from phonograph.tensor import Tensor, gradcheck, ops

TINY = RecognizerConfig(conv_channels=(6, 6), width=8, n_blocks=1, n_heads=2, n_phonemes=4)


def tiny_model(seed=0, **kw):
    kw.setdefault("clip_frames", 12)
    kw.setdefault("batch_size", 4)
    return DetectorModel(RecognizerModel(TINY, seed=seed), TrainingConfig(**kw), seed=seed)


def clips(n, T=12, seed=0):
    rng = np.random.default_rng(seed)
    return [FrameSequence(rng.normal(size=(T, TINY.width)), None, f"s{i}", BONAFIDE if i % 2 else FAKE) for i in range(n)]


def weights_hash(model):
    h = hashlib.sha256()
    for name, t in model.named_parameters():
        h.update(name.encode())
        h.update(t.data.tobytes())
    return h.hexdigest()


def test_zero_head_gives_half():
    model = tiny_model()
    model.head["w"].data[...] = 0.0
    for c in clips(3):
        assert model.forward_init(c.features).prob.item() == 0.5


def test_single_phoneme_prediction():
    model = tiny_model()
    out = model.forward_init(np.random.default_rng(0).normal(size=(10, 8)), labels=np.full(10, 2))
    assert out.pooled.shape == (1, 8) and 0.0 < out.prob.item() < 1.0


def test_copied_encoder_starts_equal():
    model = tiny_model()
    frozen = dict(RecognizerModel(TINY, seed=0).named_parameters())
    for name, t in model.named_parameters():
        if name.startswith("encoder."):
            assert np.array_equal(t.data, frozen[name].data)
    f = clips(1)[0].features
    out = model.forward_init(f)
    np.testing.assert_allclose(out.frame_copy.data, out.frame, atol=1e-14)


def test_pooled_stage_matches_recomputation():
    model = tiny_model()
    f = clips(1, T=20)[0].features
    out = model.forward_init(f)
    ref = adaptive_phoneme_pool(out.frame_copy.data, segment(out.labels)).data
    np.testing.assert_array_equal(out.pooled.data, ref)
    np.testing.assert_allclose(out.pooled_cls.data[0], out.post_gat.data.mean(axis=0), atol=1e-15)


def test_clip_loss_single_sample_is_zero():
    u = np.random.default_rng(0).normal(size=(1, 4))
    assert clip_loss(u, u, lambda x: x, 0.07).item() == 0.0


def test_clip_loss_orthogonal_pair():
    u = np.eye(2)
    loss = clip_loss(u, u, lambda x: x, 1.0).item()
    assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert loss == pytest.approx(0.3133, abs=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_clip_loss_matches_loop(seed):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    z, u = rng.normal(size=(n, c)), rng.normal(size=(n, c))
    tau = rng.uniform(0.05, 1.0)
    assert abs(clip_loss(z, u, lambda x: x, tau).item() - clip_loss_scalar(z, u, tau)) < 1e-9


def test_bce_examples():
    assert bce(np.full(4, 0.5), [1, 0, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-12)
    perfect = total_loss(Tensor(np.array([1.0, 0.0])), np.array([1, 0]), Tensor(np.zeros(2)), Tensor(np.array(0.0)))
    assert perfect.item() == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_total_loss_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    p, pa = rng.uniform(0, 1, size=6), rng.uniform(0, 1, size=6)
    y = rng.integers(0, 2, size=6)
    clip = rng.uniform(0, 3)
    expect = bce_scalar(p, y) + 0.5 * (clip + bce_scalar(pa, [0] * 6))
    got = total_loss(Tensor(p), y, Tensor(pa), Tensor(np.array(clip))).item()
    assert abs(got - expect) < 1e-12


def test_bce_clamps():
    assert np.isfinite(bce(np.array([0.0, 1.0]), [1, 0]).item())


def test_loss_gradients():
    rng = np.random.default_rng(3)
    p = Tensor(rng.uniform(0.1, 0.9, size=5), requires_grad=True)
    pa = Tensor(rng.uniform(0.1, 0.9, size=5), requires_grad=True)
    z = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    u = rng.normal(size=(5, 4))
    y = rng.integers(0, 2, size=5)
    report = gradcheck(lambda: total_loss(p, y, pa, clip_loss(z, u, lambda x: x, 0.07)), [p, pa, z])
    assert report.passed, str(report)


def test_early_stopping_sequence():
    stopper = EarlyStopping(3)
    stops = [stopper.update(v) for v in [0.7, 0.71, 0.70, 0.70, 0.70]]
    assert stops == [False, False, False, False, True]
    assert stopper.best_epoch == 2


def test_train_restores_best_epoch():
    model = tiny_model(epochs=10, patience=3)
    data = Dataset(model, clips(4, T=30))
    aucs = iter([0.7, 0.71, 0.70, 0.70, 0.70, 0.99])
    snapshots = []

    def scorer(m, epoch):
        snapshots.append(m.state())
        return next(aucs), 0.5

    records = train(model, data, data, val_scorer=scorer)
    epochs = [r for r in records if "val_auc" in r]
    assert len(epochs) == 5 and epochs[-1]["best_epoch"] == 2
    for name, value in model.state().items():
        assert np.array_equal(value, snapshots[1][name])


def test_recognizer_stays_frozen():
    model = tiny_model(epochs=2)
    before = weights_hash(model.recognizer)
    data = Dataset(model, clips(4, T=30))
    train(model, data, data, val_scorer=lambda m, e: (0.5, 0.5))
    assert weights_hash(model.recognizer) == before
    assert all(not t.requires_grad for t in model.recognizer.parameters())


def test_training_is_reproducible():
    logs = []
    for _ in range(2):
        model = tiny_model(epochs=2, seed=4)
        data = Dataset(model, clips(6, T=30))
        logs.append(json.dumps(train(model, data, data)))
    assert logs[0] == logs[1]


def test_full_pipeline_gradient():
    model = tiny_model(seed=2)
    batch = clips(3, T=12, seed=2)
    params = [t for _, t in model.named_parameters()]
    report = gradcheck(lambda: batch_losses(model, batch, rpsa_seed=5)[0], params, max_coords=25)
    assert report.passed, str(report)


def test_rpsa_disabled_aug_term_is_real_predictions():
    model = tiny_model(rpsa_p=0.0)
    batch = clips(4)
    _, parts = batch_losses(model, batch, rpsa_seed=1)
    probs = np.array([model.forward_init(c.features).prob.item() for c in batch])
    assert parts["L_cls_aug"] == pytest.approx(bce_scalar(probs, [0] * 4), abs=1e-12)


def test_duplicate_invariance():
    model = tiny_model()
    c = clips(2)
    a = model.forward_init(c[0].features).prob.item()
    b = [model.forward_init(x.features).prob.item() for x in (c[0], c[1], c[0])]
    assert b[0] == a and b[2] == a


def test_gat_row_permutation():
    model = tiny_model()
    out = model.forward_init(clips(1, T=24)[0].features)
    rows = out.post_gat.data
    np.testing.assert_allclose(rows[::-1].mean(axis=0), out.pooled_cls.data[0], atol=1e-15)
    from phonograph.gat import build_edges, gat_forward

    pooled = out.pooled.data
    if pooled.shape[0] > 1:
        rev = gat_forward(pooled[::-1].copy(), build_edges(pooled.shape[0], 10), model.gat).data.mean(axis=0)
        assert not np.allclose(rev, out.pooled_cls.data[0])


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        TrainingConfig.from_dict({"lr": 1})
    with pytest.raises(ValueError):
        TrainingConfig(use_pool=False, use_gat=True)


def test_checkpoint_and_export(tmp_path):
    m = build_corpus(SynthConfig(n_bonafide=5, n_fake=5, min_phones=4, max_phones=6), tmp_path / "corpus")
    rec = RecognizerModel(RecognizerConfig(), seed=1)
    save_recognizer(rec, tmp_path / "rec")
    model = DetectorModel(rec, TrainingConfig(), seed=1)
    save_checkpoint(model, tmp_path / "det", tmp_path / "rec")
    back = load_detector(tmp_path / "det")
    for name, value in model.state().items():
        assert np.array_equal(value, back.state()[name])
    text = export_embeddings(back, m, "phoneme")
    lines = text.strip().split("\n")
    assert len(lines) == 11 and lines[0].startswith("id,label,dim0,")
    frame = export_embeddings(back, m, "frame").strip().split("\n")[1]
    assert frame != lines[1]
    with pytest.raises(ValueError, match="valid stages"):
        export_embeddings(back, m, "spectrogram")
    scores = score_dataset(back, Dataset.from_manifest(back, m, "train"))
    assert all(0 < s < 1 for s in scores.scores)
