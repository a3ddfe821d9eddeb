"""Toy phoneme recogniser: conv front-end, projector, self-attention encoder,
phoneme head, CTC training and PER evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from phonograph import kernels, nn
from phonograph.optim import AdamW
from phonograph.tensor import Tensor, as_tensor, no_grad, ops
from phonograph.tensor import io as tio

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "recognizer-v1"


class CTCInfeasibleError(ValueError):
    """Target needs more frames than the logits provide."""


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class RecognizerConfig:
    in_channels: int = 8
    conv_kernels: tuple = (5, 5)
    conv_strides: tuple = (2, 2)
    conv_channels: tuple = (32, 32)
    width: int = 32
    n_blocks: int = 2
    n_heads: int = 4
    n_phonemes: int = 16
    mlp_ratio: int = 2

    def __post_init__(self):
        self.conv_kernels = tuple(int(k) for k in self.conv_kernels)
        self.conv_strides = tuple(int(s) for s in self.conv_strides)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if not (len(self.conv_kernels) == len(self.conv_strides) == len(self.conv_channels) >= 1):
            raise ValueError("conv kernels, strides and channels must have equal non-zero length")
        if self.width % self.n_heads:
            raise ValueError(f"width {self.width} not divisible by {self.n_heads} heads")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be non-negative")

    @property
    def blank_id(self) -> int:
        return self.n_phonemes

    @property
    def stride_product(self) -> int:
        return int(np.prod(self.conv_strides))

    @property
    def min_length(self) -> int:
        n = 1
        for k, s in reversed(list(zip(self.conv_kernels, self.conv_strides))):
            n = (n - 1) * s + k
        return n

    def n_frames(self, length: int) -> int:
        for k, s in zip(self.conv_kernels, self.conv_strides):
            if length < k:
                return 0
            length = (length - k) // s + 1
        return length

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def init_frontend(cfg: RecognizerConfig, rng):
    layers = []
    cin = cfg.in_channels
    for k, cout in zip(cfg.conv_kernels, cfg.conv_channels):
        layers.append({"w": nn.glorot(rng, cin * k, cout, shape=(cout, cin, k)), "b": nn.zeros(cout)})
        cin = cout
    return {
        "conv": layers,
        "proj_ln_g": nn.ones(cin),
        "proj_ln_b": nn.zeros(cin),
        "proj_w": nn.glorot(rng, cin, cfg.width),
        "proj_b": nn.zeros(cfg.width),
    }


def init_encoder(cfg: RecognizerConfig, rng):
    return [nn.init_encoder_block(rng, cfg.width, cfg.mlp_ratio) for _ in range(cfg.n_blocks)]


class RecognizerModel:
    def __init__(self, config: RecognizerConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.frontend = init_frontend(config, rng)
        self.encoder = init_encoder(config, rng)
        self.head = {
            "w": nn.glorot(rng, config.width, config.n_phonemes + 1),
            "b": nn.zeros(config.n_phonemes + 1),
        }

    def params(self):
        return {"frontend": self.frontend, "encoder": self.encoder, "head": self.head}

    def named_parameters(self):
        return nn.flatten(self.params())

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def freeze(self):
        for t in self.parameters():
            t.requires_grad = False
            t.grad = None
        return self

    def extract_features(self, waveform):
        return extract_features(waveform, self.frontend, self.config)

    def encode(self, f_init):
        return encode(f_init, self.encoder, self.config)

    def logits(self, f_frame):
        return nn.linear(f_frame, self.head["w"], self.head["b"])

    def forward(self, waveform):
        return self.logits(self.encode(self.extract_features(waveform)))

    def transcribe(self, waveform):
        with no_grad():
            return greedy_decode(self.forward(waveform), self.config.blank_id)

    def state(self):
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state):
        for name, t in self.named_parameters():
            if state[name].shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model {t.shape}")
            t.data[...] = state[name]


def _as_frames(waveform, in_channels):
    x = waveform.data if isinstance(waveform, Tensor) else np.asarray(waveform, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != in_channels:
        raise ValueError(f"expected input of shape (L, {in_channels}), got {x.shape}")
    return waveform if isinstance(waveform, Tensor) and waveform.ndim == 2 else Tensor(x)


def extract_features(waveform, frontend, cfg: RecognizerConfig):
    """Conv stack plus projector: (L, C_in) samples to F_init of shape (T', h).

    A 1-D waveform is treated as a single channel.
    """
    x = _as_frames(waveform, cfg.in_channels)
    if x.shape[0] < cfg.min_length:
        raise ValueError(f"input has {x.shape[0]} samples, the front-end needs at least {cfg.min_length}")
    for layer, s in zip(frontend["conv"], cfg.conv_strides):
        x = ops.elu(ops.conv1d(x, layer["w"], layer["b"], stride=s))
    x = ops.layer_norm(x, frontend["proj_ln_g"], frontend["proj_ln_b"])
    return nn.linear(x, frontend["proj_w"], frontend["proj_b"])


def encode(f_init, blocks, cfg: RecognizerConfig):
    f_init = as_tensor(f_init)
    if f_init.ndim != 2 or f_init.shape[1] != cfg.width:
        raise ValueError(f"encoder width is {cfg.width}, input has shape {f_init.shape}")
    return nn.encoder(f_init, blocks, cfg.n_heads)


# --- CTC ------------------------------------------------------------------------


def ctc_min_frames(target) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def _log_softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def ctc_loss(logits, target, blank=None) -> Tensor:
    """Negative log-probability of ``target`` summed over all CTC alignments.

    ``logits`` is (T, K) unnormalised; ``blank`` defaults to K - 1.
    """
    logits = as_tensor(logits)
    T, K = logits.shape
    blank = K - 1 if blank is None else blank
    target = [int(t) for t in target]
    if any(t == blank or t < 0 or t >= K for t in target):
        raise ValueError(f"target ids must lie in [0, {K}) and exclude blank {blank}")
    need = ctc_min_frames(target)
    if need > T:
        raise CTCInfeasibleError(f"target needs at least {need} frames, logits have {T}")
    lp = _log_softmax(logits.data)
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    alpha, beta = kernels.ctc_alpha_beta(lp, ext)
    log_z = alpha[-1, -1] if len(ext) == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])

    def back(g):
        post = np.exp(alpha + beta - lp[:, ext] - log_z)
        occupancy = np.zeros((T, K))
        np.add.at(occupancy.T, ext, post.T)
        return (float(g) * (np.exp(lp) - occupancy),)

    return Tensor.from_op(np.asarray(-log_z), (logits,), back, "ctc_loss")


def collapse(frame_labels, blank):
    out = []
    prev = None
    for lab in frame_labels:
        lab = int(lab)
        if lab != prev and lab != blank:
            out.append(lab)
        prev = lab
    return out


def greedy_decode(logits, blank=None):
    """Per-frame argmax (ties to the lowest id) and its collapsed sequence."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    blank = data.shape[1] - 1 if blank is None else blank
    frames = np.argmax(data, axis=1).astype(np.int64)
    return collapse(frames, blank), frames


def per(reference, hypothesis) -> float:
    """Phoneme error rate: edit distance over reference length."""
    reference, hypothesis = list(reference), list(hypothesis)
    if not reference:
        raise ValueError("PER is undefined for an empty reference")
    if not all(isinstance(v, (int, np.integer)) for v in reference + hypothesis):
        codes = {}
        reference = [codes.setdefault(v, len(codes)) for v in reference]
        hypothesis = [codes.setdefault(v, len(codes)) for v in hypothesis]
    return kernels.edit_distance(reference, hypothesis) / len(reference)


def corpus_per(model, corpus) -> float:
    """Edit distance summed over the corpus divided by total reference length."""
    errors = 0
    total = 0
    for wave, target in corpus:
        hyp, _ = model.transcribe(wave)
        errors += kernels.edit_distance(list(target), hyp)
        total += len(target)
    return errors / max(total, 1)


# --- pretraining ------------------------------------------------------------------


@dataclass
class PretrainSettings:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    target_per: float | None = None  # stop once validation PER reaches this
    log: list = field(default_factory=list)


def pretrain(corpus, config: RecognizerConfig, settings: PretrainSettings | None = None, validation=None, model=None):
    """Train the recogniser with CTC; keep the weights with the best validation PER.

    ``corpus`` and ``validation`` are sequences of (input frames, target ids).
    Without a validation set the training corpus is scored. Returns the model
    (best weights loaded) and a list of per-epoch records.
    """
    settings = settings or PretrainSettings()
    corpus = list(corpus)
    validation = corpus if validation is None else list(validation)
    if not corpus:
        raise ValueError("empty pretraining corpus")
    model = model or RecognizerModel(config, seed=settings.seed)
    opt = AdamW([{"params": model.parameters(), "lr": settings.lr}], weight_decay=settings.weight_decay)
    rng = np.random.default_rng(settings.seed)
    best_per, best_state = float("inf"), model.state()
    records = []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(corpus))
        losses = []
        for start in range(0, len(order), settings.batch_size):
            idx = order[start: start + settings.batch_size]
            opt.zero_grad()
            total = None
            for i in idx:
                wave, target = corpus[i]
                term = ctc_loss(model.forward(wave), target, config.blank_id)
                total = term if total is None else ops.add(total, term)
            loss = ops.mul(total, 1.0 / len(idx))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite CTC loss at epoch {epoch}, batch starting {start}")
            loss.backward()
            opt.step()
            losses.append(value)
        val_per = corpus_per(model, validation)
        record = {"epoch": epoch, "ctc": float(np.mean(losses)), "per": val_per}
        records.append(record)
        log.debug("pretrain %s", record)
        if val_per < best_per:
            best_per, best_state = val_per, model.state()
        if settings.target_per is not None and val_per <= settings.target_per:
            break
    model.load_state(best_state)
    return model, records


# --- checkpoints ------------------------------------------------------------------


def _safe(name):
    return name.replace(".", "__")


def save_params(directory, named):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, t in named:
        tio.save(directory / f"{_safe(name)}.ptns", t.data)


def load_params(directory, named):
    directory = Path(directory)
    for name, t in named:
        path = directory / f"{_safe(name)}.ptns"
        if not path.exists():
            raise FileNotFoundError(path)
        arr = tio.load(path)
        if arr.shape != t.shape:
            raise ValueError(f"{name}: stored shape {arr.shape} != expected {t.shape}")
        t.data[...] = arr


def save_checkpoint(model: RecognizerModel, directory, extra=None):
    """Directory of PTNS1 tensors plus ``config.json`` tagged recognizer-v1."""
    directory = Path(directory)
    save_params(directory / "tensors", model.named_parameters())
    meta = {"format": CHECKPOINT_FORMAT, "config": model.config.to_dict()}
    if extra:
        meta.update(extra)
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> RecognizerModel:
    directory = Path(directory)
    meta_path = directory / "config.json"
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory}: expected format {CHECKPOINT_FORMAT}, found {meta.get('format')}")
    model = RecognizerModel(RecognizerConfig(**meta["config"]))
    load_params(directory / "tensors", model.named_parameters())
    return model
