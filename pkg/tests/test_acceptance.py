"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s -v`` to see the lines. The
training experiments (9, 10, 11) carry the ``slow`` marker.
"""

import time

import numpy as np
import pytest

from oracles import (
    ctc_enumerate,
    edges_enumeration,
    eer_grid,
    gal_attention_terms,
    gal_output_terms,
    grid_resolves,
    levenshtein,
    mann_whitney_auc,
    pool_loop,
)
from phonograph import evaluation
from phonograph.cli import gradcheck_blocks
from phonograph.data import SynthConfig, build_corpus, make_inventory, synth_sample
from phonograph.detector import (
    Dataset,
    DetectorModel,
    EarlyStopping,
    TrainingConfig,
    score_dataset,
    train,
)
from phonograph.gat import attention_coefficients, build_edges, dense_coefficients, gal_forward, init_gal
from phonograph.phoneme import BONAFIDE, FAKE, FrameSequence, adaptive_phoneme_pool, rpsa, segment
from phonograph.recognizer import (
    CTCInfeasibleError,
    PretrainSettings,
    RecognizerConfig,
    RecognizerModel,
    corpus_per,
    ctc_loss,
    ctc_min_frames,
    per,
    pretrain,
)

# Detector epoch cap for the end-to-end run. Early stopping still applies;
# the cap keeps the run inside its CPU budget.
E2E_EPOCHS = 20
PRETRAIN_EPOCHS = 15
PRETRAIN_SAMPLES = 100

# Ablations train 12 detectors, so they use a smaller corpus.
ABLATION_SAMPLES = 400
ABLATION_EPOCHS = 20
ABLATION_LR_SCALE = 4.0
ABLATION_SEEDS = (0, 1, 2)


def verdict(n, ok, detail):
    print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# --- 1 ------------------------------------------------------------------------------


def test_c01_gradient_suite():
    t0 = time.process_time()
    worst, failed, kinks = {}, [], 0
    for seed in range(20):
        for name, rep in gradcheck_blocks(seed, max_coords=6):
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)
            kinks += rep.kinks
            if not rep.passed:
                failed.append((seed, name, rep.max_rel_err))
    cpu = time.process_time() - t0
    for name, err in worst.items():
        print(f"  {name:<24} max rel err {err:.2e}")
    verdict(1, not failed and cpu < 300, f"{len(worst)} blocks x 20 seeds, worst {max(worst.values()):.2e}, failures {failed}, {kinks} kink probes re-measured, {cpu:.0f}s CPU")


# --- 2 ------------------------------------------------------------------------------


def test_c02_ctc_oracle():
    rng = np.random.default_rng(2024)
    checked, infeasible, worst = 0, 0, 0.0
    while checked < 1000:
        T, K = int(rng.integers(1, 9)), int(rng.integers(2, 5))
        target = rng.integers(0, K - 1, size=int(rng.integers(0, 4))).tolist()
        x = rng.normal(size=(T, K)) * rng.uniform(0.5, 3.0)
        if ctc_min_frames(target) > T:
            with pytest.raises(CTCInfeasibleError):
                ctc_loss(x, target)
            infeasible += 1
            continue
        worst = max(worst, abs(ctc_loss(x, target).item() - ctc_enumerate(x, target, K - 1)))
        checked += 1
    verdict(2, worst < 1e-9, f"{checked} feasible cases (+{infeasible} infeasible rejected), max |diff| {worst:.1e}")


# --- 3 ------------------------------------------------------------------------------


def test_c03_pooling_oracle():
    rng = np.random.default_rng(3)
    worst, mass = 0.0, 0.0
    for _ in range(1000):
        T, C = int(rng.integers(1, 60)), int(rng.integers(1, 9))
        labels = rng.integers(0, int(rng.integers(1, 6)), size=T)
        x = rng.normal(size=(T, C))
        seg = segment(labels)
        pooled = adaptive_phoneme_pool(x, seg).data
        worst = max(worst, float(np.abs(pooled - pool_loop(x, labels)).max()))
        counts = np.array([s.count for s in seg])[:, None]
        mass = max(mass, float(np.abs((pooled * counts).sum(axis=0) - x.sum(axis=0)).max()))
    verdict(3, worst < 1e-10 and mass < 1e-10, f"1000 instances, max |diff| {worst:.1e}, mass error {mass:.1e}")


# --- 4 ------------------------------------------------------------------------------


def test_c04_attention_equations():
    rng = np.random.default_rng(4)
    worst_alpha, worst_out, worst_sum = 0.0, 0.0, 0.0
    for _ in range(100):
        n, c_in, c_out = int(rng.integers(1, 13)), int(rng.integers(2, 9)), int(rng.integers(2, 9))
        w = init_gal(rng, c_in, c_out)
        w["a"].data[...] = rng.normal(size=2 * c_out)
        x = rng.normal(size=(n, c_in))
        g = build_edges(n, int(rng.integers(1, 11)))
        nbrs = [g.neighbors(i) for i in range(n)]
        ref = gal_attention_terms(x, w["W"].data, w["a"].data, nbrs)
        alpha = dense_coefficients(attention_coefficients(x, g, w), g)
        for i in range(n):
            for j in nbrs[i]:
                worst_alpha = max(worst_alpha, abs(alpha[i, j] - ref[i][j]))
            worst_sum = max(worst_sum, abs(alpha[i].sum() - 1.0))
        out = gal_forward(x, g, w).data
        worst_out = max(worst_out, float(np.abs(out - gal_output_terms(x, w["W"].data, w["a"].data, nbrs)).max()))
    ok = worst_alpha < 1e-9 and worst_out < 1e-9 and worst_sum < 1e-10
    verdict(4, ok, f"100 instances, coefficients {worst_alpha:.1e}, layer output {worst_out:.1e}, row sums {worst_sum:.1e}")


# --- 5 ------------------------------------------------------------------------------


def test_c05_edge_construction():
    mismatches = [(t, n) for t in range(1, 21) for n in range(1, 13) if build_edges(t, n).edge_set() != edges_enumeration(t, n)]
    span = TrainingConfig().gat_span
    default_ok = span == 10 and all(build_edges(t, span).edge_set() == edges_enumeration(t, 10) for t in range(1, 21))
    verdict(5, not mismatches and default_ok, f"240 (T', N) pairs, mismatches {mismatches}, default span {span}")


# --- 6 ------------------------------------------------------------------------------


def _score_set(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 200))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]
    scores = np.clip(rng.normal(0.5 + rng.uniform(0, 0.4) * (labels - 0.5), 0.2), 0, 1)
    # a 1e-3 grid gives ties and keeps every gap resolvable by the 1e6-point sweep
    return np.round(scores * 1000) / 1000, labels


def test_c06_metric_oracles():
    auc_err, eer_err = 0.0, 0.0
    for seed in range(100):
        scores, labels = _score_set(seed)
        assert grid_resolves(scores)
        s = evaluation.ScoreSet.from_arrays(scores, labels)
        auc_err = max(auc_err, abs(evaluation.auc(s) - mann_whitney_auc(scores, labels)))
        eer_err = max(eer_err, abs(evaluation.eer(s) - eer_grid(scores, labels)))
    verdict(6, auc_err < 1e-12 and eer_err < 1e-9, f"100 score sets, AUC {auc_err:.1e}, EER {eer_err:.1e}")


# --- 7 ------------------------------------------------------------------------------


def test_c07_per():
    rng = np.random.default_rng(7)
    wrong = 0
    for _ in range(1000):
        a = rng.integers(0, 8, size=int(rng.integers(1, 30))).tolist()
        b = rng.integers(0, 8, size=int(rng.integers(0, 30))).tolist()
        wrong += per(a, b) != levenshtein(a, b) / len(a)
    verdict(7, wrong == 0, f"1000 pairs, {wrong} mismatches")


# --- 8 ------------------------------------------------------------------------------


def _seq(x, labels, sid):
    return FrameSequence(np.asarray(x, dtype=float), np.asarray(labels), sid, BONAFIDE)


def test_c08_rpsa_contract():
    rng = np.random.default_rng(8)
    batch = [_seq(rng.normal(size=(40, 3)), rng.integers(0, 5, size=40), f"s{i}") for i in range(4)]
    out = rpsa(batch, 0.0, 1)
    identity = all(
        np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels) and b.class_label == FAKE
        for a, b in zip(batch, out)
    )
    x, y = np.full((2, 2), 1.0), np.full((3, 2), 7.0)
    swapped = rpsa([_seq(x, [5, 5], "a"), _seq(y, [5, 5, 5], "b")], 1.0, 3)
    swap = np.array_equal(swapped[0].features, y) and np.array_equal(swapped[1].features, x)
    runs = [rpsa(batch, 0.5, 42) for _ in range(2)]
    repro = all(
        np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels) for a, b in zip(*runs)
    )
    verdict(8, identity and swap and repro, f"p=0 identity {identity}, unique-donor swap {swap}, seeded repro {repro}")


# --- 9 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_c09_recognizer_overfit():
    cfg = SynthConfig()
    inv = make_inventory(cfg)
    corpus = []
    for i in range(20):
        s = synth_sample(cfg, BONAFIDE, np.random.default_rng([cfg.seed, i]), inv)
        corpus.append((s.sequence.features, s.phonemes))
    t0 = time.process_time()
    model, records = pretrain(corpus, RecognizerConfig(), PretrainSettings(epochs=200, target_per=0.0))
    cpu = time.process_time() - t0
    final = corpus_per(model, corpus)
    verdict(9, final == 0.0 and cpu < 300, f"20 samples, PER {final:.4f} after {len(records)} epochs, {cpu:.0f}s CPU")


# --- 10 -----------------------------------------------------------------------------


def _experiment(directory, synth, training, variants=None):
    """Build a corpus, pretrain a recogniser, train detectors; test (auc, eer) per variant."""
    manifest = build_corpus(synth, directory)
    bona = [r for r in manifest.split("train") if r.label == BONAFIDE][:PRETRAIN_SAMPLES]
    rec, _ = pretrain(
        [(manifest.load(r).features, r.phonemes) for r in bona],
        RecognizerConfig(),
        PretrainSettings(epochs=PRETRAIN_EPOCHS),
    )
    results = {}
    for key, cfg in (variants or {"full": training}).items():
        det = DetectorModel(rec, cfg)
        sets = {split: Dataset.from_manifest(det, manifest, split) for split in ("train", "val", "test")}
        records = train(det, sets["train"], sets["val"])
        scores = score_dataset(det, sets["test"])
        results[key] = (evaluation.auc(scores), evaluation.eer(scores), records[-1]["epoch"])
    return results


@pytest.mark.slow
def test_c10_end_to_end(tmp_path):
    t0 = time.process_time()
    synth = SynthConfig(n_bonafide=500, n_fake=500, intensity=0.7, seed=7)
    auc, eer, epochs = _experiment(tmp_path / "main", synth, TrainingConfig(epochs=E2E_EPOCHS))["full"]
    cpu = time.process_time() - t0
    null = SynthConfig(n_bonafide=500, n_fake=500, intensity=0.0, seed=7)
    null_auc, null_eer, null_epochs = _experiment(tmp_path / "null", null, TrainingConfig(epochs=E2E_EPOCHS))["full"]
    ok = auc >= 0.90 and eer <= 0.15 and cpu < 900 and 0.4 <= null_auc <= 0.6
    verdict(
        10,
        ok,
        f"intensity 0.7: AUC {auc:.3f} EER {eer:.3f} ({epochs} epochs, {cpu:.0f}s CPU); "
        f"intensity 0: AUC {null_auc:.3f} ({null_epochs} epochs)",
    )


# --- 11 -----------------------------------------------------------------------------


@pytest.mark.slow
def test_c11_ablation_direction(tmp_path):
    synth = SynthConfig(n_bonafide=ABLATION_SAMPLES // 2, n_fake=ABLATION_SAMPLES // 2, intensity=0.7, seed=7)
    flags = {"full": {}, "no GAT": {"use_gat": False}, "no RPSA": {"use_rpsa": False}, "no CLIP": {"use_clip": False}}
    lr = {"lr_copied_encoder": 5e-5 * ABLATION_LR_SCALE, "lr_other": 1e-4 * ABLATION_LR_SCALE}
    variants = {
        (name, seed): TrainingConfig(epochs=ABLATION_EPOCHS, seed=seed, **lr, **f)
        for seed in ABLATION_SEEDS
        for name, f in flags.items()
    }
    results = _experiment(tmp_path, synth, None, variants)
    median = {name: float(np.median([results[(name, s)][1] for s in ABLATION_SEEDS])) for name in flags}
    for (name, seed), (a, e, n) in sorted(results.items()):
        print(f"  {name:<8} seed {seed}: AUC {a:.3f} EER {e:.3f} ({n} epochs)")
    ok = all(median[name] >= median["full"] for name in flags)
    verdict(11, ok, "median test EER " + ", ".join(f"{k} {v:.3f}" for k, v in median.items()))


# --- 12 -----------------------------------------------------------------------------


def test_c12_early_stopping():
    stopper = EarlyStopping(3)
    halts = [stopper.update(v) for v in (0.60, 0.72, 0.71, 0.72, 0.70)]
    unit_ok = halts == [False, False, False, False, True] and stopper.best_epoch == 2

    rng = np.random.default_rng(12)
    rec_cfg = RecognizerConfig(conv_channels=(6, 6), width=8, n_blocks=1, n_heads=2, n_phonemes=4)
    model = DetectorModel(RecognizerModel(rec_cfg, seed=0), TrainingConfig(epochs=10, batch_size=2, clip_frames=12))
    seqs = [
        FrameSequence(rng.normal(size=(60, rec_cfg.in_channels)), None, f"c{i}", (BONAFIDE, FAKE)[i % 2]) for i in range(4)
    ]
    data = Dataset(model, seqs)
    injected = iter([0.60, 0.72, 0.71, 0.72, 0.70, 0.99])
    states = []

    def scorer(m, epoch):
        states.append(m.state())
        return next(injected), 0.5

    records = [r for r in train(model, data, data, val_scorer=scorer) if "val_auc" in r]
    restored = all(np.array_equal(v, states[1][k]) for k, v in model.state().items())
    moved = any(not np.array_equal(v, states[1][k]) for k, v in states[-1].items())
    ok = unit_ok and len(records) == 5 and restored and moved
    verdict(12, ok, f"halted after {len(records)} epochs, best epoch {records[-1]['best_epoch']}, best weights restored {restored}")
