"""Detector assembly: frozen recogniser, copied encoder, phoneme pooling, GAT
and classification head, with the multi-task objective and training loop."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from phonograph import evaluation, nn
from phonograph.data import Manifest, clip_or_pad
from phonograph.gat import build_edges, gat_forward, init_stack
from phonograph.optim import AdamW
from phonograph.phoneme import BONAFIDE, FrameSequence, adaptive_phoneme_pool, rpsa, segment
from phonograph.recognizer import (
    RecognizerModel,
    TrainingDivergedError,
    greedy_decode,
    load_checkpoint,
    load_params,
    save_params,
)
from phonograph.tensor import Tensor, as_tensor, no_grad, ops

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "detector-v1"
PROB_CLAMP = 1e-7
COSINE_EPS = 1e-12


@dataclass
class TrainingConfig:
    lr_copied_encoder: float = 5e-5
    lr_other: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 30
    rpsa_p: float = 0.2
    gat_span: int = 10
    patience: int = 3
    clip_frames: int = 150
    tau: float = 0.07
    seed: int = 0
    use_gat: bool = True
    use_pool: bool = True
    use_rpsa: bool = True
    use_clip: bool = True

    def __post_init__(self):
        if self.lr_copied_encoder < 0 or self.lr_other < 0:
            raise ValueError("learning rates must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1 or self.clip_frames < 1 or self.gat_span < 1:
            raise ValueError("batch_size, clip_frames and gat_span must be >= 1")
        if not self.use_pool and self.use_gat:
            # the graph is built over pooled phonemes
            raise ValueError("use_gat requires use_pool")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


class DetectorOutput(NamedTuple):
    prob: Tensor  # scalar
    frame: np.ndarray  # frozen-encoder features F_f
    frame_copy: Tensor  # copied-encoder features F'_f
    labels: np.ndarray  # frame phoneme labels used for pooling
    pooled: Tensor  # F_p
    post_gat: Tensor  # F'_p
    pooled_cls: Tensor  # F_cls


class DetectorModel:
    def __init__(self, recognizer: RecognizerModel, config: TrainingConfig | None = None, seed=0):
        self.config = config or TrainingConfig()
        self.recognizer = recognizer.freeze()
        rng = np.random.default_rng(seed)
        width = recognizer.config.width
        self.encoder = nn.copy_params(recognizer.encoder)
        for t in nn.flatten(self.encoder):
            t[1].requires_grad = True
        self.gat = init_stack(rng, width)
        self.head = {"w": nn.param(rng.normal(scale=0.01, size=(width, 1))), "b": nn.zeros(1)}
        self.proj = {
            "w1": nn.glorot(rng, width, width),
            "b1": nn.zeros(width),
            "w2": nn.glorot(rng, width, width),
            "b2": nn.zeros(width),
        }
        self.recognizer_ref = None

    @property
    def width(self):
        return self.recognizer.config.width

    def trainable(self):
        return {"encoder": self.encoder, "gat": self.gat, "head": self.head, "proj": self.proj}

    def named_parameters(self):
        return nn.flatten(self.trainable())

    def parameter_groups(self):
        enc = [t for _, t in nn.flatten(self.encoder)]
        rest = [t for _, t in nn.flatten({"gat": self.gat, "head": self.head, "proj": self.proj})]
        return enc, rest

    def state(self):
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state):
        for name, t in self.named_parameters():
            t.data[...] = state[name]

    # --- forward -------------------------------------------------------------

    def initial_features(self, waveform) -> np.ndarray:
        """Frozen front-end output F_init."""
        with no_grad():
            return self.recognizer.extract_features(waveform).data

    def frozen_frames(self, f_init):
        """Frozen encoder features F_f and greedy frame labels."""
        with no_grad():
            f_frame = self.recognizer.encode(Tensor(f_init))
            _, labels = greedy_decode(self.recognizer.logits(f_frame), self.recognizer.config.blank_id)
        return f_frame.data, labels

    def forward_init(self, f_init, labels=None, frame=None) -> DetectorOutput:
        """Run the trainable path from F_init.

        Without ``labels`` the frozen recogniser supplies frame features and
        labels; augmented samples pass their substituted labels instead.
        """
        f_init = np.asarray(f_init, dtype=np.float64)
        if labels is None:
            frame, labels = self.frozen_frames(f_init)
        cfg = self.config
        frame_copy = nn.encoder(Tensor(f_init), self.encoder, self.recognizer.config.n_heads)
        if cfg.use_pool:
            pooled = adaptive_phoneme_pool(frame_copy, segment(labels))
        else:
            pooled = frame_copy
        if cfg.use_gat:
            post = gat_forward(pooled, build_edges(pooled.shape[0], cfg.gat_span), self.gat)
        else:
            post = pooled
        f_cls = ops.reshape(ops.mean(post, axis=0), (1, self.width))
        logit = ops.reshape(nn.linear(f_cls, self.head["w"], self.head["b"]), ())
        return DetectorOutput(ops.sigmoid(logit), frame, frame_copy, np.asarray(labels), pooled, post, f_cls)

    def forward(self, waveform) -> DetectorOutput:
        return self.forward_init(self.initial_features(waveform))

    def score(self, waveform) -> float:
        with no_grad():
            return self.forward(waveform).prob.item()

    def project(self, x):
        """CLIP projector g: two-layer MLP with ELU, used only in the loss."""
        h = ops.elu(nn.linear(x, self.proj["w1"], self.proj["b1"]))
        return nn.linear(h, self.proj["w2"], self.proj["b2"])


# --- losses ---------------------------------------------------------------------


def clip_loss(frame_copy_means, frame_means, projector, tau) -> Tensor:
    """Contrastive loss anchoring g(u'_i) on u_i against the other u_k.

    Both inputs are (N, C) per-sample temporal means; ``projector`` is g.
    """
    z = projector(as_tensor(frame_copy_means))
    sims = ops.mul(ops.cosine_similarity_matrix(z, as_tensor(frame_means), COSINE_EPS), 1.0 / tau)
    n = sims.shape[0]
    logp = ops.log_softmax(sims, axis=1)
    return ops.mul(ops.sum(ops.mul(logp, Tensor(np.eye(n)))), -1.0 / n)


def bce(prob, target) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    prob = as_tensor(prob)
    y = np.asarray(target, dtype=np.float64).reshape(prob.shape)
    p = np.clip(prob.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (prob.data >= PROB_CLAMP) & (prob.data <= 1.0 - PROB_CLAMP)
    n = max(p.size, 1)
    value = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum() / n

    def back(g):
        return (float(g) * inside * (p - y) / (p * (1.0 - p)) / n,)

    return Tensor.from_op(np.asarray(value), (prob,), back, "bce")


def total_loss(y_hat, y, y_hat_aug=None, clip=None) -> Tensor:
    """BCE(y_hat, y) + 0.5 * (clip + BCE(y_hat_aug, 0)); missing terms count as zero."""
    loss = bce(y_hat, y)
    extra = None
    if clip is not None:
        extra = as_tensor(clip)
    if y_hat_aug is not None:
        aug = bce(y_hat_aug, np.zeros(as_tensor(y_hat_aug).shape))
        extra = aug if extra is None else ops.add(extra, aug)
    return loss if extra is None else ops.add(loss, ops.mul(extra, 0.5))


# --- early stopping ----------------------------------------------------------------


class EarlyStopping:
    """Stop once the monitored AUC has not improved for ``patience`` epochs."""

    def __init__(self, patience=3):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, value) -> bool:
        self.epoch += 1
        if value > self.best:
            self.best, self.best_epoch, self.stale = value, self.epoch, 0
            return False
        self.stale += 1
        return self.stale >= self.patience

    @property
    def improved(self):
        return self.stale == 0


# --- training ------------------------------------------------------------------------


def label_value(class_label):
    return 1.0 if class_label == BONAFIDE else 0.0


class Dataset:
    """Samples as frozen F_init sequences, cached per id."""

    def __init__(self, model: DetectorModel, sequences):
        self.items = []
        for seq in sequences:
            f_init = model.initial_features(seq.features)
            self.items.append(FrameSequence(f_init, None, seq.sample_id, seq.class_label))

    @classmethod
    def from_manifest(cls, model, manifest: Manifest, split):
        return cls(model, [manifest.load(r) for r in manifest.split(split)])

    def __len__(self):
        return len(self.items)


def _threads():
    try:
        return max(1, int(os.environ.get("PHONOGRAPH_THREADS", "1")))
    except ValueError:
        return 1


def score_dataset(model: DetectorModel, dataset: Dataset):
    """Eval-mode (centre clip) probabilities for every sample."""
    length = model.config.clip_frames

    def one(item):
        with no_grad():
            return model.forward_init(clip_or_pad(item, length, "eval").features).prob.item()

    workers = min(_threads(), max(len(dataset), 1))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            probs = list(pool.map(one, dataset.items))
    else:
        probs = [one(item) for item in dataset.items]
    return evaluation.ScoreSet(
        [(it.sample_id, p, it.class_label) for it, p in zip(dataset.items, probs)]
    )


def batch_losses(model: DetectorModel, clips, rpsa_seed):
    """Forward one batch of F_init clips; returns (total, parts dict)."""
    cfg = model.config
    outs = [model.forward_init(c.features) for c in clips]
    y = np.array([label_value(c.class_label) for c in clips])
    y_hat = ops.concat([ops.reshape(o.prob, (1,)) for o in outs])
    clip_term = None
    if cfg.use_clip:
        u_copy = ops.concat([ops.reshape(ops.mean(o.frame_copy, axis=0), (1, model.width)) for o in outs])
        u = np.stack([o.frame.mean(axis=0) for o in outs])
        clip_term = clip_loss(u_copy, u, model.project, cfg.tau)
    aug_term = None
    if cfg.use_rpsa and len(clips) >= 2:
        labelled = [FrameSequence(c.features, o.labels, c.sample_id, c.class_label) for c, o in zip(clips, outs)]
        augmented = rpsa(labelled, cfg.rpsa_p, rpsa_seed)
        aug_outs = [model.forward_init(a.features, labels=a.labels) for a in augmented]
        aug_term = ops.concat([ops.reshape(o.prob, (1,)) for o in aug_outs])
    total = total_loss(y_hat, y, aug_term, clip_term)
    parts = {
        "L_cls": bce(Tensor(y_hat.data), y).item(),
        "L_CLIP": None if clip_term is None else clip_term.item(),
        "L_cls_aug": None if aug_term is None else bce(Tensor(aug_term.data), np.zeros(aug_term.shape)).item(),
        "loss": total.item(),
    }
    return total, parts


def train(model: DetectorModel, train_set: Dataset, val_set: Dataset, val_scorer=None, augment_hook=None, on_record=None):
    """Train with AdamW and AUC early stopping; the best-AUC weights are restored.

    ``val_scorer(model, epoch)`` may replace validation scoring and must
    return (auc, eer). ``augment_hook`` receives each training clip and
    returns a clip; it defaults to the identity. Returns the log records.
    """
    cfg = model.config
    enc, rest = model.parameter_groups()
    opt = AdamW(
        [{"params": enc, "lr": cfg.lr_copied_encoder}, {"params": rest, "lr": cfg.lr_other}],
        betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    best_state = model.state()
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            clips = [clip_or_pad(train_set.items[i], cfg.clip_frames, "train", rng) for i in order[start: start + cfg.batch_size]]
            if augment_hook is not None:
                clips = [augment_hook(c) for c in clips]
            rpsa_seed = int(rng.integers(2**63 - 1))
            opt.zero_grad()
            loss, parts = batch_losses(model, clips, rpsa_seed)
            step += 1
            if not np.isfinite(parts["loss"]):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            loss.backward()
            opt.step()
            emit({"epoch": epoch, "step": step, **parts})
        if val_scorer is not None:
            auc, eer = val_scorer(model, epoch)
        else:
            scores = score_dataset(model, val_set)
            auc, eer = evaluation.auc(scores), evaluation.eer(scores)
        stop = stopper.update(auc)
        if stopper.improved:
            best_state = model.state()
        emit({"epoch": epoch, "step": step, "val_auc": float(auc), "val_eer": float(eer), "best_epoch": stopper.best_epoch})
        log.info("epoch %d val_auc=%.4f val_eer=%.4f", epoch, auc, eer)
        if stop:
            break
    model.load_state(best_state)
    return records


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(model: DetectorModel, directory, recognizer_dir):
    directory = Path(directory)
    save_params(directory / "tensors", model.named_parameters())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "training": model.config.to_dict(),
        "recognizer": os.path.relpath(Path(recognizer_dir).resolve(), directory.resolve()),
    }
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_detector(directory) -> DetectorModel:
    directory = Path(directory)
    meta_path = directory / "config.json"
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory}: expected format {CHECKPOINT_FORMAT}, found {meta.get('format')}")
    rec_dir = Path(meta["recognizer"])
    if not rec_dir.is_absolute():
        rec_dir = directory / rec_dir
    model = DetectorModel(load_checkpoint(rec_dir), TrainingConfig.from_dict(meta["training"]))
    load_params(directory / "tensors", model.named_parameters())
    model.recognizer_ref = str(rec_dir)
    return model


STAGES = ("frame", "phoneme", "post-gat")


def export_embeddings(model: DetectorModel, manifest: Manifest, stage: str, path=None, split=None):
    """One row per sample: id, label, mean-pooled embedding at ``stage``.

    Returns the CSV text; also written to ``path`` when given.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; valid stages: {', '.join(STAGES)}")
    records = manifest.split(split) if split else list(manifest)
    rows = []
    for rec in records:
        seq = manifest.load(rec)
        f_init = clip_or_pad(FrameSequence(model.initial_features(seq.features)), model.config.clip_frames, "eval").features
        with no_grad():
            out = model.forward_init(f_init)
        if stage == "frame":
            vec = out.frame_copy.data.mean(axis=0)
        elif stage == "phoneme":
            vec = out.pooled.data.mean(axis=0)
        else:
            vec = out.pooled_cls.data.reshape(-1)
        rows.append((rec.sample_id, rec.label, vec))
    width = len(rows[0][2]) if rows else model.width
    lines = ["id,label," + ",".join(f"dim{k}" for k in range(width))]
    lines += [f"{sid},{label}," + ",".join(repr(float(v)) for v in vec) for sid, label, vec in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text

