"""Command-line entry point: ``phonograph <command> [options]``.

Exit codes: 0 success, 2 input error (missing or invalid files/config),
3 numerical failure (non-finite loss or failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from phonograph import evaluation, gat, nn, recognizer
from phonograph.data import Manifest, SynthConfig, build_corpus
from phonograph.detector import (
    STAGES,
    Dataset,
    DetectorModel,
    TrainingConfig,
    batch_losses,
    bce,
    clip_loss,
    export_embeddings,
    load_detector,
    score_dataset,
    total_loss,
    train,
)
from phonograph.detector import save_checkpoint as save_detector
from phonograph.phoneme import BONAFIDE, FAKE, FrameSequence, adaptive_phoneme_pool, segment
from phonograph.recognizer import PretrainSettings, RecognizerConfig, TrainingDivergedError
from phonograph.tensor import Tensor, gradcheck, ops
from phonograph.tensor import io as tio

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
RUN_CONFIG = "run_config.json"


class InputError(Exception):
    pass


# --- run configuration ------------------------------------------------------------

SECTIONS = {
    "synth": SynthConfig,
    "recognizer": RecognizerConfig,
    "pretrain": PretrainSettings,
    "training": TrainingConfig,
}
_PRETRAIN_EXTRA = {"max_samples": 100}


def _defaults():
    out = {name: asdict(cls()) for name, cls in SECTIONS.items()}
    out["pretrain"].pop("log", None)
    out["pretrain"].update(_PRETRAIN_EXTRA)
    return out


def load_run_config(path=None) -> dict:
    """Defaults overlaid with a JSON file; unknown sections or keys are rejected."""
    cfg = _defaults()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        user = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise InputError(f"{path}: top level must be an object")
    for section, values in user.items():
        if section not in cfg:
            raise InputError(f"{path}: unknown section {section!r}; valid: {', '.join(cfg)}")
        unknown = set(values) - set(cfg[section])
        if unknown:
            raise InputError(f"{path}: unknown keys in {section!r}: {sorted(unknown)}")
        cfg[section].update(values)
    return cfg


def _apply_seed(cfg, seed):
    if seed is not None:
        for section in ("synth", "pretrain", "training"):
            cfg[section]["seed"] = int(seed)


def _build(section, cfg):
    values = dict(cfg[section])
    if section == "pretrain":
        for key in _PRETRAIN_EXTRA:
            values.pop(key)
    names = {f.name for f in fields(SECTIONS[section])}
    try:
        return SECTIONS[section](**{k: v for k, v in values.items() if k in names})
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid {section} config: {exc}") from exc


def _prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise InputError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out, cfg, command):
    (Path(out) / RUN_CONFIG).write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


class JsonlLog:
    def __init__(self, path):
        self.handle = open(path, "w", encoding="utf-8")

    def __call__(self, record):
        self.handle.write(json.dumps(record, sort_keys=True) + "\n")
        self.handle.flush()

    def close(self):
        self.handle.close()


def _require(path, what):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def _manifest(path):
    return Manifest.read(_require(path, "manifest"))


def _pairs(manifest, split, limit=None):
    recs = [r for r in manifest.split(split) if r.label == BONAFIDE]
    recs = recs[:limit] if limit else recs
    return [(manifest.load(r).features, r.phonemes) for r in recs]


# --- commands ------------------------------------------------------------------------


def cmd_synth(args, cfg):
    out = _prepare_out(args.out, args.force)
    synth = _build("synth", cfg)
    try:
        manifest = build_corpus(synth, out)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _echo(out, cfg, "synth")
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(json.dumps({"samples": len(manifest), **counts, "out": str(out)}))


def cmd_pretrain(args, cfg):
    manifest = _manifest(args.manifest)
    if args.epochs is not None:
        cfg["pretrain"]["epochs"] = args.epochs
    out = _prepare_out(args.out, args.force)
    rec_cfg = _build("recognizer", cfg)
    settings = _build("pretrain", cfg)
    corpus = _pairs(manifest, "train", cfg["pretrain"]["max_samples"])
    validation = _pairs(manifest, "val") or None
    if not corpus:
        raise InputError(f"{args.manifest}: no bonafide training samples")
    _echo(out, cfg, "pretrain")
    model, records = recognizer.pretrain(corpus, rec_cfg, settings, validation=validation)
    log = JsonlLog(out / "pretrain_log.jsonl")
    for r in records:
        log(r)
    log.close()
    recognizer.save_checkpoint(model, out / "recognizer")
    print(json.dumps({"best_per": min(r["per"] for r in records), "checkpoint": str(out / "recognizer")}))


def cmd_train(args, cfg):
    manifest = _manifest(args.manifest)
    rec_dir = _require(args.checkpoint, "recognizer checkpoint")
    if args.epochs is not None:
        cfg["training"]["epochs"] = args.epochs
    out = _prepare_out(args.out, args.force)
    training = _build("training", cfg)
    rec = recognizer.load_checkpoint(rec_dir)
    model = DetectorModel(rec, training, seed=training.seed)
    _echo(out, cfg, "train")
    log = JsonlLog(out / "train_log.jsonl")
    try:
        if training.epochs > 0:
            train_set = Dataset.from_manifest(model, manifest, "train")
            val_set = Dataset.from_manifest(model, manifest, "val")
            train(model, train_set, val_set, on_record=log)
    finally:
        log.close()
    save_detector(model, out / "detector", rec_dir)
    print(json.dumps({"checkpoint": str(out / "detector"), "epochs": training.epochs}))


def cmd_eval(args, cfg):
    manifest = _manifest(args.manifest)
    model = load_detector(_require(args.checkpoint, "detector checkpoint"))
    splits = [args.split] if args.split else [s for s in ("val", "test") if manifest.split(s)]
    results = {}
    for split in splits:
        scores = score_dataset(model, Dataset.from_manifest(model, manifest, split))
        try:
            evaluation.auc(scores)
        except ValueError as exc:
            raise InputError(f"split {split!r}: {exc}") from exc
        results[split] = scores
    text = evaluation.report(results)
    print(text, end="")
    if args.out:
        out = _prepare_out(args.out, args.force)
        _echo(out, {**cfg, "training": model.config.to_dict()}, "eval")
        (out / "report.txt").write_text(text, encoding="utf-8")
        log = JsonlLog(out / "scores.jsonl")
        for split, scores in results.items():
            log({"split": split, "auc": evaluation.auc(scores), "eer": evaluation.eer(scores), "n": len(scores)})
            for sid, score, label in scores.entries:
                log({"split": split, "id": sid, "score": score, "label": BONAFIDE if label else FAKE})
        log.close()
        if args.stage:
            export_embeddings(model, manifest, args.stage, out / f"embeddings_{args.stage}.csv", split=args.split)
    elif args.stage:
        raise InputError("--stage needs --out for the embedding CSV")


def _parse_labels(text):
    path = Path(text)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    elif not all(tok.lstrip("-").isdigit() for tok in text.split()):
        raise FileNotFoundError(path)
    try:
        return np.array([int(t) for t in text.replace(",", " ").split()], dtype=np.int64)
    except ValueError as exc:
        raise InputError(f"labels must be integers: {exc}") from exc


def cmd_pool(args, cfg):
    features = tio.load(_require(args.features, "features"))
    labels = _parse_labels(args.labels)
    if features.ndim != 2:
        raise InputError(f"{args.features}: expected a T x C tensor, got shape {features.shape}")
    if labels.size != features.shape[0]:
        raise InputError(f"{features.shape[0]} frames but {labels.size} labels")
    seg = segment(labels)
    pooled = adaptive_phoneme_pool(features, seg).data
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tio.save(out, pooled)
    print(json.dumps({"frames": int(features.shape[0]), "phonemes": len(seg), "out": str(out)}))


# --- gradient checks over every block ---------------------------------------------------


def gradcheck_blocks(seed=0, rec_cfg=None, training=None, tol=1e-4, max_coords=12):
    """(name, report) for each trainable block and each loss at one seed."""
    rec_cfg = rec_cfg or RecognizerConfig()
    training = training or TrainingConfig(clip_frames=8)
    rng = np.random.default_rng(seed)
    model = recognizer.RecognizerModel(rec_cfg, seed=seed)
    det = DetectorModel(recognizer.RecognizerModel(rec_cfg, seed=seed), training, seed=seed)
    width = rec_cfg.width

    def probe(shape):
        return Tensor(rng.normal(size=shape))

    def leaf(shape, scale=1.0):
        return Tensor(rng.normal(size=shape) * scale, requires_grad=True)

    def weighted(fn, shape):
        w = probe(shape)
        return lambda: ops.sum(ops.mul(fn(), w))

    wave = leaf((rec_cfg.min_length + 3 * rec_cfg.stride_product, rec_cfg.in_channels))
    n_init = rec_cfg.n_frames(wave.shape[0])
    f_init = leaf((6, width))
    nodes = leaf((5, width))
    graph = gat.build_edges(5, training.gat_span)
    f_cls = leaf((3, width))
    logits = leaf((7, rec_cfg.n_phonemes + 1))
    target = rng.integers(0, rec_cfg.n_phonemes, size=3).tolist()
    u_copy, u = leaf((4, width)), rng.normal(size=(4, width))
    probs = Tensor(rng.uniform(0.05, 0.95, size=4), requires_grad=True)
    aug = Tensor(rng.uniform(0.05, 0.95, size=4), requires_grad=True)
    labels = rng.integers(0, 2, size=4)
    clip_scalar = Tensor(np.array(rng.uniform(0.5, 2.0)), requires_grad=True)
    clips = [
        FrameSequence(rng.normal(size=(training.clip_frames, width)), None, f"g{k}", (BONAFIDE, FAKE)[k % 2])
        for k in range(3)
    ]

    def head():
        return ops.sigmoid(ops.reshape(ops.matmul(f_cls, det.head["w"]), (3,)))

    def params(tree):
        return [t for _, t in nn.flatten(tree)]

    blocks = [
        ("conv front-end", weighted(lambda: model.extract_features(wave), (n_init, width)), [wave] + params(model.frontend)),
        ("encoder", weighted(lambda: model.encode(f_init), (6, width)), [f_init] + params(model.encoder)),
        ("GAL", weighted(lambda: gat.gal_forward(nodes, graph, det.gat["gals"][0]), (5, width)), [nodes] + params(det.gat["gals"][0])),
        ("LSTM", weighted(lambda: gat.lstm_forward(nodes, det.gat["lstm"]), (5, width)), [nodes] + params(det.gat["lstm"])),
        ("recognizer head", weighted(lambda: model.logits(f_init), (6, rec_cfg.n_phonemes + 1)), [f_init] + params(model.head)),
        ("classification head", weighted(head, (3,)), [f_cls] + params(det.head)),
        ("CLIP projector", weighted(lambda: det.project(u_copy), (4, width)), [u_copy] + params(det.proj)),
        ("CTC loss", lambda: recognizer.ctc_loss(logits, target, rec_cfg.blank_id), [logits]),
        ("CLIP loss", lambda: clip_loss(u_copy, u, det.project, training.tau), [u_copy] + params(det.proj)),
        ("BCE loss", lambda: bce(probs, labels), [probs]),
        ("total loss", lambda: total_loss(probs, labels, aug, clip_scalar), [probs, aug, clip_scalar]),
        ("full detector objective", lambda: batch_losses(det, clips, rpsa_seed=seed)[0], [t for _, t in det.named_parameters()]),
    ]
    results = []
    for name, fn, inputs in blocks:
        report = gradcheck(fn, inputs, tol=tol, max_coords=max_coords, rng=np.random.default_rng(seed))
        results.append((name, report))
    return results


def cmd_gradcheck(args, cfg):
    rec_cfg = _build("recognizer", cfg)
    training = _build("training", cfg)
    training.clip_frames = min(training.clip_frames, 8)
    seed = args.seed if args.seed is not None else 0
    rows = gradcheck_blocks(seed, rec_cfg, training, tol=args.tol, max_coords=args.max_coords)
    width = max(len(n) for n, _ in rows)
    print(f"{'block':<{width}}  {'max rel err':>12}  coords  result")
    for name, rep in rows:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name:<{width}}  {rep.max_rel_err:12.3e}  {rep.checked:6d}  {status}")
    if not all(rep.passed for _, rep in rows):
        return EXIT_NUMERIC
    return EXIT_OK


# --- parser ------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="phonograph", description="Phoneme-level deepfake speech detection")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="seed for every random stream")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="CTC-pretrain the phoneme recognizer")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the detector on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="recognizer checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score splits and print AUC / EER")
    common(p, out_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="detector checkpoint directory")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--stage", choices=STAGES, help="also export embeddings at this stage")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pool", help="pool frame-level PTNS1 features by phoneme labels")
    p.add_argument("features", help="frame-level PTNS1 file")
    p.add_argument("--labels", required=True, help="space-separated labels or a file holding them")
    p.add_argument("--out", required=True, help="output PTNS1 file")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=12, help="coordinates probed per tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        _apply_seed(cfg, args.seed)
        code = args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
